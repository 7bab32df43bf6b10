#include "mcnip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mcnip/errors.hpp"
#include "mcnip/rng.hpp"

namespace mcnip {

namespace {

constexpr double kRatingFloor = 0.3;
constexpr long kMaxPlacementAttempts = 100000;

void check_spec(const SyntheticSpec& s) {
  if (s.num_users < 1 || s.num_groups < 1 || s.items_per_group < 1 ||
      s.feature_dim < 1 || s.ratings_per_user < 1)
    throw config_error("synthetic spec: all counts must be >= 1");
  if (s.num_users % s.num_groups != 0)
    throw config_error("synthetic spec: num_users (" + std::to_string(s.num_users) +
                       ") must be divisible by num_groups (" +
                       std::to_string(s.num_groups) + ")");
  if (!(s.item_spread > 0.0)) throw config_error("synthetic spec: item_spread must be > 0");
  if (s.rating_noise < 0.0) throw config_error("synthetic spec: rating_noise must be >= 0");
}

Mat place_ideals(const SyntheticSpec& s, std::mt19937_64& rng) {
  const double min_sep = s.min_separation_coef * std::sqrt(static_cast<double>(s.feature_dim));
  std::uniform_real_distribution<double> box(0.25, 0.75);
  Mat ideals(s.num_groups, s.feature_dim);
  long attempts = 0;
  for (int g = 0; g < s.num_groups;) {
    if (++attempts > kMaxPlacementAttempts)
      throw numeric_error("ideal item placement failed after " +
                          std::to_string(kMaxPlacementAttempts) +
                          " attempts; too many groups for the placement box");
    Vec cand(s.feature_dim);
    for (int j = 0; j < s.feature_dim; ++j) cand[j] = box(rng);
    bool ok = true;
    for (int h = 0; h < g && ok; ++h)
      ok = (cand - ideals.row(h).transpose()).norm() >= min_sep;
    if (ok) {
      ideals.row(g) = cand.transpose();
      ++g;
    }
  }
  return ideals;
}

}  // namespace

double SynthGroundTruth::true_rating(int user, const Eigen::Ref<const Vec>& x) const {
  const int g = group_of_user.at(static_cast<std::size_t>(user));
  const double d = (x - ideal_items.row(g).transpose()).norm();
  return std::clamp(1.0 - d / d_max, kRatingFloor, 1.0);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  const int n_items = spec.num_groups * spec.items_per_group;
  const int per_user = std::min(spec.ratings_per_user, n_items);
  if (per_user < spec.ratings_per_user)
    std::cerr << "generate_synthetic: only " << n_items
              << " items exist; each user rates " << per_user << " instead of "
              << spec.ratings_per_user << "\n";

  SyntheticDataset sd;
  auto& truth = sd.truth;
  auto& ds = sd.base;

  auto ideal_rng = stream_rng(spec.seed, "synth/ideals");
  truth.ideal_items = place_ideals(spec, ideal_rng);
  truth.d_max = 3.0 * spec.item_spread * std::sqrt(static_cast<double>(spec.feature_dim));

  ds.num_users = spec.num_users;
  ds.num_items = n_items;
  ds.feature_dim = spec.feature_dim;
  ds.features.resize(n_items, spec.feature_dim);
  truth.group_of_item.resize(static_cast<std::size_t>(n_items));
  auto item_rng = stream_rng(spec.seed, "synth/items");
  std::normal_distribution<double> cloud(0.0, spec.item_spread);
  for (int g = 0; g < spec.num_groups; ++g) {
    for (int k = 0; k < spec.items_per_group; ++k) {
      const int i = g * spec.items_per_group + k;
      truth.group_of_item[static_cast<std::size_t>(i)] = g;
      for (int j = 0; j < spec.feature_dim; ++j)
        ds.features(i, j) =
            std::clamp(truth.ideal_items(g, j) + cloud(item_rng), 0.0, 1.0);
    }
  }

  const int users_per_group = spec.num_users / spec.num_groups;
  truth.group_of_user.resize(static_cast<std::size_t>(spec.num_users));
  for (int u = 0; u < spec.num_users; ++u)
    truth.group_of_user[static_cast<std::size_t>(u)] = u / users_per_group;

  auto assign_rng = stream_rng(spec.seed, "synth/assign");
  auto noise_rng = stream_rng(spec.seed, "synth/noise");
  std::normal_distribution<double> rating_noise(0.0, spec.rating_noise);
  std::uniform_real_distribution<double> cross_group(0.1, 0.3);
  ds.triples.reserve(static_cast<std::size_t>(spec.num_users) * static_cast<std::size_t>(per_user));
  std::vector<int> item_pool(static_cast<std::size_t>(n_items));
  std::iota(item_pool.begin(), item_pool.end(), 0);
  std::vector<int> chosen(static_cast<std::size_t>(per_user));
  for (int u = 0; u < spec.num_users; ++u) {
    // Partial Fisher-Yates: first `per_user` entries are a uniform draw
    // without replacement.
    for (int k = 0; k < per_user; ++k) {
      std::uniform_int_distribution<int> pick(k, n_items - 1);
      std::swap(item_pool[static_cast<std::size_t>(k)],
                item_pool[static_cast<std::size_t>(pick(assign_rng))]);
      chosen[static_cast<std::size_t>(k)] = item_pool[static_cast<std::size_t>(k)];
    }
    std::sort(chosen.begin(), chosen.end());
    const int gu = truth.group_of_user[static_cast<std::size_t>(u)];
    for (int i : chosen) {
      double r;
      if (truth.group_of_item[static_cast<std::size_t>(i)] == gu) {
        const double base = truth.true_rating(u, ds.features.row(i).transpose());
        r = std::clamp(spec.rating_noise > 0.0 ? base + rating_noise(noise_rng) : base,
                       0.0, 1.0);
      } else {
        r = cross_group(noise_rng);
      }
      ds.triples.push_back({u, i, r});
    }
  }

  ds.user_ids.resize(static_cast<std::size_t>(spec.num_users));
  for (int u = 0; u < spec.num_users; ++u) ds.user_ids[static_cast<std::size_t>(u)] = std::to_string(u);
  ds.item_ids.resize(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) ds.item_ids[static_cast<std::size_t>(i)] = std::to_string(i);
  ds.rating_scale = {0.0, 1.0};
  validate_dataset(ds, /*unit_features=*/true);
  return sd;
}

void save_synthetic(const SyntheticDataset& sd, const std::filesystem::path& dir,
                    const std::string& meta) {
  std::filesystem::create_directories(dir);
  save_dataset(sd.base, dir / "ratings.csv", dir / "features.csv", meta);
  write_id_map(sd.base, dir / "id_map.json");
  {
    std::ofstream out(dir / "ideal_items.csv");
    if (!out) throw missing_input_error("cannot write ideal_items.csv");
    if (!meta.empty()) out << "# " << meta << '\n';
    out << "group_id";
    for (Index j = 0; j < sd.truth.ideal_items.cols(); ++j) out << ",f" << j;
    out << '\n';
    out.precision(9);
    for (Index g = 0; g < sd.truth.ideal_items.rows(); ++g) {
      out << g;
      for (Index j = 0; j < sd.truth.ideal_items.cols(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", sd.truth.ideal_items(g, j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  {
    nlohmann::json j{{"group_of_user", sd.truth.group_of_user},
                     {"group_of_item", sd.truth.group_of_item},
                     {"d_max", sd.truth.d_max}};
    if (!meta.empty()) j["meta"] = meta;
    std::ofstream out(dir / "groups.json");
    if (!out) throw missing_input_error("cannot write groups.json");
    out << j.dump(2) << '\n';
  }
}

SynthGroundTruth load_ground_truth(const std::filesystem::path& dir) {
  SynthGroundTruth truth;
  {
    std::ifstream in(dir / "groups.json");
    if (!in) throw missing_input_error("cannot open " + (dir / "groups.json").string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
      throw parse_error((dir / "groups.json").string(), 1, "malformed JSON");
    truth.group_of_user = j.at("group_of_user").get<std::vector<int>>();
    truth.group_of_item = j.at("group_of_item").get<std::vector<int>>();
    truth.d_max = j.at("d_max").get<double>();
  }
  {
    const auto path = dir / "ideal_items.csv";
    std::ifstream in(path);
    if (!in) throw missing_input_error("cannot open " + path.string());
    std::string line;
    long line_no = 0;
    bool saw_header = false;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string field;
      bool first = true;
      while (std::getline(ss, field, ',')) {
        if (first) {
          first = false;
          continue;  // group_id column
        }
        if (!saw_header) continue;
        try {
          row.push_back(std::stod(field));
        } catch (const std::exception&) {
          throw parse_error(path.string(), line_no, "expected a number, got '" + field + "'");
        }
      }
      if (!saw_header) {
        saw_header = true;
        continue;
      }
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw parse_error(path.string(), 1, "no ideal items");
    truth.ideal_items.resize(static_cast<Index>(rows.size()),
                             static_cast<Index>(rows[0].size()));
    for (std::size_t g = 0; g < rows.size(); ++g) {
      if (rows[g].size() != rows[0].size())
        throw parse_error(path.string(), static_cast<long>(g) + 2, "ragged row");
      for (std::size_t j = 0; j < rows[g].size(); ++j)
        truth.ideal_items(static_cast<Index>(g), static_cast<Index>(j)) = rows[g][j];
    }
  }
  return truth;
}

}  // namespace mcnip
