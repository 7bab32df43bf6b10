#include "mcnip/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mcnip/errors.hpp"
#include "mcnip/rng.hpp"

namespace mcnip {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& file, long line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw parse_error(file, line, "expected a number, got '" + s + "'");
  }
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, e - b + 1);
}

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

bool RatingsDataset::ratings_in_unit_interval() const {
  return std::all_of(triples.begin(), triples.end(), [](const RatingTriple& t) {
    return t.rating >= 0.0 && t.rating <= 1.0;
  });
}

RatingsDataset load_dataset(const std::filesystem::path& ratings_path,
                            const std::filesystem::path& features_path) {
  std::ifstream fin(features_path);
  if (!fin) throw missing_input_error("cannot open features file " + features_path.string());
  std::ifstream rin(ratings_path);
  if (!rin) throw missing_input_error("cannot open ratings file " + ratings_path.string());

  RatingsDataset ds;
  std::unordered_map<std::string, int> item_index, user_index;

  // Features file defines the item catalog.
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(fin, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!saw_header) {
      if (fields.empty() || trim(fields[0]) != "item_id")
        throw parse_error(features_path.string(), line_no,
                          "expected header starting with 'item_id'");
      ds.feature_dim = static_cast<int>(fields.size()) - 1;
      if (ds.feature_dim < 1)
        throw parse_error(features_path.string(), line_no, "no feature columns");
      saw_header = true;
      continue;
    }
    if (static_cast<int>(fields.size()) != ds.feature_dim + 1)
      throw parse_error(features_path.string(), line_no,
                        "expected " + std::to_string(ds.feature_dim + 1) +
                            " fields, got " + std::to_string(fields.size()));
    const std::string id = trim(fields[0]);
    if (item_index.count(id))
      throw integrity_error(features_path.string() + ":" + std::to_string(line_no) +
                            ": duplicate item id '" + id + "'");
    item_index.emplace(id, static_cast<int>(ds.item_ids.size()));
    ds.item_ids.push_back(id);
    std::vector<double> row(static_cast<std::size_t>(ds.feature_dim));
    for (int j = 0; j < ds.feature_dim; ++j)
      row[static_cast<std::size_t>(j)] =
          parse_double(fields[static_cast<std::size_t>(j) + 1], features_path.string(), line_no);
    rows.push_back(std::move(row));
  }
  if (!saw_header) throw parse_error(features_path.string(), 1, "empty features file");
  ds.num_items = static_cast<int>(rows.size());
  ds.features.resize(ds.num_items, ds.feature_dim);
  for (int i = 0; i < ds.num_items; ++i)
    for (int j = 0; j < ds.feature_dim; ++j)
      ds.features(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];

  // Ratings file.
  line_no = 0;
  saw_header = false;
  std::unordered_set<std::uint64_t> seen_pairs;
  double rmin = std::numeric_limits<double>::infinity();
  double rmax = -std::numeric_limits<double>::infinity();
  while (std::getline(rin, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!saw_header) {
      if (fields.size() != 3 || trim(fields[0]) != "user_id")
        throw parse_error(ratings_path.string(), line_no,
                          "expected header 'user_id,item_id,rating'");
      saw_header = true;
      continue;
    }
    if (fields.size() != 3)
      throw parse_error(ratings_path.string(), line_no,
                        "expected 3 fields, got " + std::to_string(fields.size()));
    const std::string uid = trim(fields[0]);
    const std::string iid = trim(fields[1]);
    const double rating = parse_double(fields[2], ratings_path.string(), line_no);
    if (!std::isfinite(rating))
      throw parse_error(ratings_path.string(), line_no, "non-finite rating");
    auto it = item_index.find(iid);
    if (it == item_index.end())
      throw integrity_error(ratings_path.string() + ":" + std::to_string(line_no) +
                            ": item '" + iid + "' has no feature row");
    auto [uit, inserted] = user_index.emplace(uid, static_cast<int>(ds.user_ids.size()));
    if (inserted) ds.user_ids.push_back(uid);
    const int u = uit->second;
    const int i = it->second;
    const std::uint64_t key =
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) |
        static_cast<std::uint32_t>(i);
    if (!seen_pairs.insert(key).second)
      throw integrity_error(ratings_path.string() + ":" + std::to_string(line_no) +
                            ": duplicate (user,item) pair ('" + uid + "','" + iid + "')");
    ds.triples.push_back({u, i, rating});
    rmin = std::min(rmin, rating);
    rmax = std::max(rmax, rating);
  }
  if (!saw_header) throw parse_error(ratings_path.string(), 1, "empty ratings file");
  ds.num_users = static_cast<int>(ds.user_ids.size());

  if (!ds.triples.empty()) {
    if (rmin >= 0.0 && rmax <= 1.0)
      ds.rating_scale = {0.0, 1.0};
    else
      ds.rating_scale = {rmin, rmax};
  }
  validate_dataset(ds);
  return ds;
}

void save_dataset(const RatingsDataset& ds,
                  const std::filesystem::path& ratings_path,
                  const std::filesystem::path& features_path,
                  const std::string& meta) {
  {
    std::ofstream out(features_path);
    if (!out) throw missing_input_error("cannot write " + features_path.string());
    if (!meta.empty()) out << "# " << meta << '\n';
    out << "item_id";
    for (int j = 0; j < ds.feature_dim; ++j) out << ",f" << j;
    out << '\n';
    for (int i = 0; i < ds.num_items; ++i) {
      out << (i < static_cast<int>(ds.item_ids.size()) ? ds.item_ids[static_cast<std::size_t>(i)]
                                                       : std::to_string(i));
      for (int j = 0; j < ds.feature_dim; ++j) out << ',' << format_g9(ds.features(i, j));
      out << '\n';
    }
  }
  {
    std::ofstream out(ratings_path);
    if (!out) throw missing_input_error("cannot write " + ratings_path.string());
    if (!meta.empty()) out << "# " << meta << '\n';
    out << "user_id,item_id,rating\n";
    for (const auto& t : ds.triples) {
      const auto& uid = t.user < static_cast<int>(ds.user_ids.size())
                            ? ds.user_ids[static_cast<std::size_t>(t.user)]
                            : std::to_string(t.user);
      const auto& iid = t.item < static_cast<int>(ds.item_ids.size())
                            ? ds.item_ids[static_cast<std::size_t>(t.item)]
                            : std::to_string(t.item);
      out << uid << ',' << iid << ',' << format_g9(t.rating) << '\n';
    }
  }
}

void write_id_map(const RatingsDataset& ds, const std::filesystem::path& path) {
  nlohmann::json users = nlohmann::json::object();
  nlohmann::json items = nlohmann::json::object();
  for (std::size_t i = 0; i < ds.user_ids.size(); ++i) users[ds.user_ids[i]] = i;
  for (std::size_t i = 0; i < ds.item_ids.size(); ++i) items[ds.item_ids[i]] = i;
  nlohmann::json j{{"users", users}, {"items", items}};
  std::ofstream out(path);
  if (!out) throw missing_input_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RatingsDataset rescale_ratings(const RatingsDataset& ds) {
  const auto [lo, hi] = ds.rating_scale;
  if (!(hi > lo))
    throw numeric_error("rescale_ratings: degenerate rating scale [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  RatingsDataset out = ds;
  if (lo == 0.0 && hi == 1.0) return out;  // already on the unit interval
  const double width = hi - lo;
  for (std::size_t k = 0; k < out.triples.size(); ++k) {
    auto& t = out.triples[k];
    if (t.rating < lo || t.rating > hi)
      throw integrity_error("rescale_ratings: triple #" + std::to_string(k) +
                            " rating " + std::to_string(t.rating) +
                            " outside declared scale");
    t.rating = (t.rating - lo) / width;
  }
  return out;  // original scale kept in rating_scale for inverse mapping
}

DatasetSplit split_dataset(const RatingsDataset& ds, const SplitFractions& f,
                           std::uint64_t seed) {
  if (f.train <= 0.0 || f.validation <= 0.0 || f.test <= 0.0)
    throw config_error("split fractions must be positive");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw config_error("split fractions must sum to 1");

  const auto n = ds.triples.size();
  std::vector<std::vector<int>> by_user(static_cast<std::size_t>(ds.num_users));
  for (std::size_t k = 0; k < n; ++k)
    by_user[static_cast<std::size_t>(ds.triples[k].user)].push_back(static_cast<int>(k));
  for (int u = 0; u < ds.num_users; ++u)
    if (by_user[static_cast<std::size_t>(u)].empty())
      std::cerr << "split_dataset: user " << u << " has no ratings (cold user retained)\n";

  auto rng = stream_rng(seed, "split");
  DatasetSplit split;
  std::vector<int> pool;
  pool.reserve(n);
  // One anchor triple per user with >= 3 ratings goes straight to train.
  for (int u = 0; u < ds.num_users; ++u) {
    auto& idx = by_user[static_cast<std::size_t>(u)];
    if (idx.size() >= 3) {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      const std::size_t a = pick(rng);
      split.train.push_back(idx[a]);
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(a));
    }
    pool.insert(pool.end(), idx.begin(), idx.end());
  }
  std::shuffle(pool.begin(), pool.end(), rng);

  const auto n_val = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (pool.size() < n_val + n_test)
    throw config_error("split fractions leave too few triples after per-user stratification");
  split.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val),
                    pool.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  split.train.insert(split.train.end(),
                     pool.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), pool.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void validate_dataset(const RatingsDataset& ds, bool unit_features) {
  if (ds.features.rows() != ds.num_items || ds.features.cols() != ds.feature_dim)
    throw integrity_error("features matrix shape does not match counts");
  if (!ds.features.allFinite()) throw integrity_error("non-finite feature value");
  if (unit_features &&
      (ds.features.minCoeff() < 0.0 || ds.features.maxCoeff() > 1.0))
    throw integrity_error(
        "cross-entropy reconstruction requires features in [0,1]");
  for (std::size_t k = 0; k < ds.triples.size(); ++k) {
    const auto& t = ds.triples[k];
    if (t.user < 0 || t.user >= ds.num_users || t.item < 0 || t.item >= ds.num_items)
      throw integrity_error("triple #" + std::to_string(k) + " references unknown user/item");
    if (!std::isfinite(t.rating))
      throw integrity_error("triple #" + std::to_string(k) + " has non-finite rating");
  }
}

}  // namespace mcnip
