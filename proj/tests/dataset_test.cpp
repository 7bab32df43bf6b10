#include "mcnip/dataset.hpp"

#include <doctest.h>

#include <fstream>

#include "mcnip/errors.hpp"
#include "test_util.hpp"

using namespace mcnip;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

RatingsDataset tiny_dataset() {
  RatingsDataset ds;
  ds.num_users = 2;
  ds.num_items = 2;
  ds.feature_dim = 3;
  ds.features.resize(2, 3);
  ds.features << 0.1, 0.2, 0.3, 0.9, 0.8, 0.7;
  ds.triples = {{0, 0, 1.0}, {0, 1, 3.0}, {1, 1, 5.0}};
  ds.rating_scale = {1.0, 5.0};
  ds.user_ids = {"u0", "u1"};
  ds.item_ids = {"i0", "i1"};
  return ds;
}

}  // namespace

TEST_CASE("load_dataset: round-trips a hand-written file") {
  const auto dir = test::scratch_dir("ds_load");
  write_file(dir / "ratings.csv",
             "user_id,item_id,rating\n"
             "alice,songA,1\n"
             "alice,songB,3\n"
             "bob,songB,5\n");
  write_file(dir / "features.csv",
             "item_id,f0,f1\n"
             "songA,0.25,0.5\n"
             "songB,0.75,1\n");
  const auto ds = load_dataset(dir / "ratings.csv", dir / "features.csv");
  CHECK(ds.num_users == 2);
  CHECK(ds.num_items == 2);
  CHECK(ds.feature_dim == 2);
  CHECK(ds.triples.size() == 3);
  CHECK(ds.user_ids[0] == "alice");
  CHECK(ds.item_ids[1] == "songB");
  CHECK(ds.rating_scale.first == 1.0);
  CHECK(ds.rating_scale.second == 5.0);
}

TEST_CASE("load_dataset: triple referencing an unknown item is an integrity error") {
  const auto dir = test::scratch_dir("ds_unknown_item");
  write_file(dir / "ratings.csv", "user_id,item_id,rating\nu,missing,1\n");
  write_file(dir / "features.csv", "item_id,f0\nknown,0.5\n");
  CHECK_THROWS_AS(load_dataset(dir / "ratings.csv", dir / "features.csv"), Error);
}

TEST_CASE("load_dataset: malformed row reports its line number") {
  const auto dir = test::scratch_dir("ds_malformed");
  write_file(dir / "ratings.csv", "user_id,item_id,rating\nu,i,notanumber\n");
  write_file(dir / "features.csv", "item_id,f0\ni,0.5\n");
  try {
    load_dataset(dir / "ratings.csv", dir / "features.csv");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("load_dataset: duplicate (user,item) pair rejected") {
  const auto dir = test::scratch_dir("ds_dup");
  write_file(dir / "ratings.csv", "user_id,item_id,rating\nu,i,1\nu,i,2\n");
  write_file(dir / "features.csv", "item_id,f0\ni,0.5\n");
  CHECK_THROWS_AS(load_dataset(dir / "ratings.csv", dir / "features.csv"), Error);
}

TEST_CASE("load_dataset: 20 feature columns give feature_dim 20") {
  const auto dir = test::scratch_dir("ds_20col");
  std::string header = "item_id";
  std::string row = "i";
  for (int j = 0; j < 20; ++j) {
    header += ",f" + std::to_string(j);
    row += ",0.5";
  }
  write_file(dir / "features.csv", header + "\n" + row + "\n");
  write_file(dir / "ratings.csv", "user_id,item_id,rating\nu,i,0.5\n");
  CHECK(load_dataset(dir / "ratings.csv", dir / "features.csv").feature_dim == 20);
}

TEST_CASE("rescale_ratings: affine map endpoints and midpoint") {
  auto ds = tiny_dataset();
  const auto out = rescale_ratings(ds);
  CHECK(out.triples[0].rating == 0.0);
  CHECK(out.triples[1].rating == 0.5);
  CHECK(out.triples[2].rating == 1.0);
  CHECK(out.rating_scale.first == 1.0);  // kept for inverse mapping

  // 7-point scale: value 4 with scale (1,7) -> 0.5.
  ds.triples = {{0, 0, 4.0}, {0, 1, 1.0}, {1, 1, 7.0}};
  ds.rating_scale = {1.0, 7.0};
  CHECK(rescale_ratings(ds).triples[0].rating == 0.5);
}

TEST_CASE("rescale_ratings: identity on unit-interval data, and idempotent") {
  auto ds = tiny_dataset();
  ds.triples = {{0, 0, 0.0}, {0, 1, 0.25}, {1, 1, 1.0}};
  ds.rating_scale = {0.0, 1.0};
  const auto once = rescale_ratings(ds);
  CHECK(once.triples[1].rating == 0.25);
  const auto twice = rescale_ratings(once);
  for (std::size_t i = 0; i < ds.triples.size(); ++i)
    CHECK(twice.triples[i].rating == ds.triples[i].rating);
}

TEST_CASE("rescale_ratings: degenerate scale rejected") {
  auto ds = tiny_dataset();
  ds.rating_scale = {3.0, 3.0};
  CHECK_THROWS_AS(rescale_ratings(ds), Error);
}

TEST_CASE("save/load: a second round-trip is bit-exact") {
  const auto dir = test::scratch_dir("ds_roundtrip");
  RatingsDataset ds = tiny_dataset();
  ds.features(0, 0) = 0.123456789123456789;  // not representable at 9 digits
  save_dataset(ds, dir / "r.csv", dir / "f.csv", "meta line");
  const auto once = load_dataset(dir / "r.csv", dir / "f.csv");
  save_dataset(once, dir / "r2.csv", dir / "f2.csv");
  const auto twice = load_dataset(dir / "r2.csv", dir / "f2.csv");
  CHECK(once.features == twice.features);
  REQUIRE(once.triples.size() == twice.triples.size());
  for (std::size_t i = 0; i < once.triples.size(); ++i)
    CHECK(once.triples[i].rating == twice.triples[i].rating);
}

TEST_CASE("write_id_map: original ids map to dense indices") {
  const auto dir = test::scratch_dir("ds_idmap");
  write_id_map(tiny_dataset(), dir / "id_map.json");
  std::ifstream in(dir / "id_map.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.find("\"u1\": 1") != std::string::npos);
  CHECK(text.find("\"i0\": 0") != std::string::npos);
}

TEST_CASE("split_dataset: sizes forced by fractions, deterministic, disjoint") {
  RatingsDataset ds;
  ds.num_users = 10;
  ds.num_items = 10;
  ds.feature_dim = 1;
  ds.features = Mat::Constant(10, 1, 0.5);
  for (int u = 0; u < 10; ++u)
    for (int i = 0; i < 10; ++i)
      ds.triples.push_back({u, i, (u * 10 + i) / 99.0});
  const auto split = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
  CHECK(split.train.size() == 80);
  CHECK(split.validation.size() == 10);
  CHECK(split.test.size() == 10);

  const auto again = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
  CHECK(split.train == again.train);
  CHECK(split.validation == again.validation);
  CHECK(split.test == again.test);

  std::vector<int> all;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == static_cast<int>(i));
}

TEST_CASE("split_dataset: every user with >= 3 ratings lands in train") {
  RatingsDataset ds;
  ds.num_users = 30;
  ds.num_items = 5;
  ds.feature_dim = 1;
  ds.features = Mat::Constant(5, 1, 0.5);
  for (int u = 0; u < 30; ++u)
    for (int i = 0; i < 5; ++i) ds.triples.push_back({u, i, 0.5});
  const auto split = split_dataset(ds, {0.6, 0.2, 0.2}, 3);
  std::vector<char> in_train(30, 0);
  for (int k : split.train) in_train[static_cast<std::size_t>(ds.triples[static_cast<std::size_t>(k)].user)] = 1;
  for (int u = 0; u < 30; ++u) CHECK(in_train[static_cast<std::size_t>(u)] == 1);
}

TEST_CASE("split_dataset: invalid fractions rejected") {
  const auto ds = tiny_dataset();
  CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.5, 0.5}, 1), Error);
  CHECK_THROWS_AS(split_dataset(ds, {1.0, -0.5, 0.5}, 1), Error);
}
