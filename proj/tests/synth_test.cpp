#include "mcnip/synth.hpp"

#include <doctest.h>

#include <limits>
#include <random>

#include "mcnip/errors.hpp"
#include "test_util.hpp"

using namespace mcnip;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_users = 60;
  s.num_groups = 2;
  s.items_per_group = 20;
  s.ratings_per_user = 10;
  s.seed = 42;
  return s;
}

}  // namespace

TEST_CASE("generate_synthetic: counts forced by the spec") {
  SyntheticSpec s = small_spec();
  s.items_per_group = 5;
  s.ratings_per_user = 5;
  const auto sd = generate_synthetic(s);
  CHECK(sd.base.num_items == 10);
  CHECK(sd.truth.ideal_items.rows() == 2);
  CHECK(sd.base.triples.size() == 60u * 5u);
  CHECK(sd.base.num_users == 60);
  CHECK(sd.base.feature_dim == 20);
}

TEST_CASE("generate_synthetic: ratings-per-user capped at the item count") {
  // 2 groups x 5 items = 10 < 20 requested ratings; every user rates each
  // item at most once so (user,item) pairs stay unique.
  SyntheticSpec s = small_spec();
  s.items_per_group = 5;
  s.ratings_per_user = 20;
  const auto sd = generate_synthetic(s);
  CHECK(sd.base.triples.size() == 60u * 10u);
  validate_dataset(sd.base, true);
}

TEST_CASE("generate_synthetic: fixed seed gives a bit-identical dataset") {
  const auto a = generate_synthetic(small_spec());
  const auto b = generate_synthetic(small_spec());
  CHECK(a.base.features == b.base.features);
  CHECK(a.truth.ideal_items == b.truth.ideal_items);
  REQUIRE(a.base.triples.size() == b.base.triples.size());
  for (std::size_t i = 0; i < a.base.triples.size(); ++i) {
    CHECK(a.base.triples[i].user == b.base.triples[i].user);
    CHECK(a.base.triples[i].item == b.base.triples[i].item);
    CHECK(a.base.triples[i].rating == b.base.triples[i].rating);
  }
}

TEST_CASE("generate_synthetic: ideal items stay unobserved") {
  const auto sd = generate_synthetic(small_spec());
  double min_dist = std::numeric_limits<double>::infinity();
  for (Index g = 0; g < sd.truth.ideal_items.rows(); ++g)
    for (Index i = 0; i < sd.base.features.rows(); ++i)
      min_dist = std::min(min_dist,
                          (sd.base.features.row(i) - sd.truth.ideal_items.row(g)).norm());
  CHECK(min_dist > 0.0);
}

TEST_CASE("generate_synthetic: cross-group ratings fall in [0.1, 0.3]") {
  const auto sd = generate_synthetic(small_spec());
  int cross = 0;
  for (const auto& t : sd.base.triples) {
    if (sd.truth.group_of_user[static_cast<std::size_t>(t.user)] !=
        sd.truth.group_of_item[static_cast<std::size_t>(t.item)]) {
      ++cross;
      CHECK(t.rating >= 0.1);
      CHECK(t.rating <= 0.3);
    }
  }
  CHECK(cross > 0);
}

TEST_CASE("generate_synthetic: users divisible by groups enforced") {
  SyntheticSpec s = small_spec();
  s.num_users = 5000;
  s.num_groups = 3;
  CHECK_THROWS_AS(generate_synthetic(s), Error);
}

TEST_CASE("generate_synthetic: infeasible placement reports an error") {
  SyntheticSpec s = small_spec();
  s.feature_dim = 2;
  s.num_groups = 60;
  s.items_per_group = 1;
  s.ratings_per_user = 1;
  CHECK_THROWS_AS(generate_synthetic(s), Error);
}

TEST_CASE("true_rating: zero distance gives 1, far distance floors at 0.3") {
  const auto sd = generate_synthetic(small_spec());
  const Vec at_ideal = sd.truth.ideal_items.row(0).transpose();
  CHECK(sd.truth.true_rating(0, at_ideal) == doctest::Approx(1.0));

  // Any point at distance >= d_max lands on the clip floor.
  Vec far = at_ideal;
  far[0] += sd.truth.d_max;
  CHECK(sd.truth.true_rating(0, far) == doctest::Approx(0.3));
  far[0] += 10.0;
  CHECK(sd.truth.true_rating(0, far) == doctest::Approx(0.3));
}

TEST_CASE("true_rating: function of the group only") {
  const auto sd = generate_synthetic(small_spec());
  std::mt19937_64 rng(1);
  const Vec x = 0.5 * (test::random_vector(20, rng, 0.1).array() + 0.5).matrix();
  // Users 0 and 1 share group 0 (contiguous group blocks).
  REQUIRE(sd.truth.group_of_user[0] == sd.truth.group_of_user[1]);
  CHECK(sd.truth.true_rating(0, x) == sd.truth.true_rating(1, x));
}

TEST_CASE("true_rating: monotone non-increasing in distance") {
  const auto sd = generate_synthetic(small_spec());
  const Vec ideal = sd.truth.ideal_items.row(0).transpose();
  Vec dir = Vec::Zero(20);
  dir[3] = 1.0;
  double prev = sd.truth.true_rating(0, ideal);
  for (int step = 1; step <= 30; ++step) {
    const double r = sd.truth.true_rating(0, ideal + 0.05 * step * dir);
    CHECK(r <= prev + 1e-15);
    prev = r;
  }
}

TEST_CASE("generate_synthetic: zero noise puts same-group ratings on the line") {
  SyntheticSpec s = small_spec();
  s.rating_noise = 0.0;
  const auto sd = generate_synthetic(s);
  for (const auto& t : sd.base.triples) {
    if (sd.truth.group_of_user[static_cast<std::size_t>(t.user)] ==
        sd.truth.group_of_item[static_cast<std::size_t>(t.item)]) {
      const double expect =
          sd.truth.true_rating(t.user, sd.base.features.row(t.item).transpose());
      CHECK(t.rating == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("save/load: ground truth survives the file round-trip") {
  const auto dir = test::scratch_dir("synth_io");
  const auto sd = generate_synthetic(small_spec());
  save_synthetic(sd, dir, "test meta");
  const auto truth = load_ground_truth(dir);
  CHECK(truth.group_of_user == sd.truth.group_of_user);
  CHECK(truth.group_of_item == sd.truth.group_of_item);
  CHECK(truth.d_max == doctest::Approx(sd.truth.d_max).epsilon(1e-12));
  CHECK((truth.ideal_items - sd.truth.ideal_items).lpNorm<Eigen::Infinity>() < 1e-8);

  // The generated CSVs load back as a valid dataset of the same shape.
  const auto ds = load_dataset(dir / "ratings.csv", dir / "features.csv");
  CHECK(ds.num_users == sd.base.num_users);
  CHECK(ds.num_items == sd.base.num_items);
  CHECK(ds.triples.size() == sd.base.triples.size());
}
