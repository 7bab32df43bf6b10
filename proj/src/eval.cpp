#include "mcnip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mcnip/errors.hpp"

namespace mcnip {

std::vector<int> linear_assignment(const Mat& cost) {
  if (cost.rows() != cost.cols())
    throw config_error("linear_assignment: cost matrix must be square");
  if (!cost.allFinite())
    throw numeric_error("linear_assignment: non-finite cost entry");
  const int n = static_cast<int>(cost.rows());
  // Kuhn-Munkres with potentials; 1-based work arrays.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1,
                             std::numeric_limits<double>::infinity());
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (match[static_cast<std::size_t>(j)] > 0)
      row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

namespace {

double pair_rmse(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                 const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

MatchResult rmse_to_ideal(const Mat& generated, const Mat& ideal) {
  if (generated.rows() < 1 || ideal.rows() < 1)
    throw config_error("rmse_to_ideal: need at least one generated and one ideal item");
  if (generated.cols() != ideal.cols())
    throw config_error("rmse_to_ideal: feature dimension mismatch");
  const Index k = generated.rows();
  const Index g = ideal.rows();
  const Index n = std::max(k, g);
  // Pad rectangular instances; real costs are <= 1 for unit-box features,
  // so any large constant keeps padding out of the optimal real pairs.
  constexpr double kPad = 1e6;
  Mat cost = Mat::Constant(n, n, kPad);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < g; ++j)
      cost(i, j) = pair_rmse(generated.row(i), ideal.row(j));
  const auto row_to_col = linear_assignment(cost);
  MatchResult res;
  for (Index i = 0; i < k; ++i) {
    const int j = row_to_col[static_cast<std::size_t>(i)];
    if (j < g)
      res.pairs.push_back({static_cast<int>(i), j, cost(i, j)});
  }
  for (const auto& p : res.pairs) res.mean_rmse += p.rmse;
  res.mean_rmse /= static_cast<double>(res.pairs.size());
  return res;
}

double nearest_existing_rmse(const Mat& ideal, const Mat& observed) {
  if (observed.rows() < 1)
    throw config_error("nearest_existing_rmse: empty observed set");
  if (ideal.cols() != observed.cols())
    throw config_error("nearest_existing_rmse: feature dimension mismatch");
  double total = 0.0;
  for (Index g = 0; g < ideal.rows(); ++g) {
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < observed.rows(); ++i)
      best = std::min(best, pair_rmse(ideal.row(g), observed.row(i)));
    total += best;
  }
  return total / static_cast<double>(ideal.rows());
}

CoverageReport coverage_report(const CoverageSolution& sol,
                               const SynthGroundTruth* truth,
                               const Mat& decoded_items) {
  CoverageReport rep;
  rep.predicted = sol.coverage_proportion;
  if (!truth) return rep;
  if (truth->group_of_user.size() != sol.assignment.size())
    throw config_error("coverage_report: solution and ground truth disagree on user count");
  if (decoded_items.rows() < static_cast<Index>(sol.selected.size()))
    throw config_error("coverage_report: decoded items missing for some selections");
  rep.real_available = true;
  int real_covered = 0;
  for (std::size_t u = 0; u < sol.assignment.size(); ++u) {
    const int pos = sol.assignment[u];
    if (pos < 0) continue;
    const double r = truth->true_rating(static_cast<int>(u),
                                        decoded_items.row(pos).transpose());
    if (r > sol.tau) ++real_covered;
  }
  rep.real = static_cast<double>(real_covered) /
             static_cast<double>(sol.assignment.size());
  return rep;
}

double rating_rmse_heldout(const LatentModel& model, const RatingsDataset& ds,
                           std::span<const int> test_indices) {
  if (test_indices.empty())
    throw config_error("rating_rmse_heldout: empty test set");
  double acc = 0.0;
  for (int k : test_indices) {
    const auto& t = ds.triples.at(static_cast<std::size_t>(k));
    const Vec z = model.encode_mean(ds.features.row(t.item).transpose());
    const double err = model.predict_rating(t.user, z) - t.rating;
    acc += err * err;
  }
  return std::sqrt(acc / static_cast<double>(test_indices.size()));
}

void save_eval_report(const EvalReport& r, const std::filesystem::path& path,
                      const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : r.per_item_table)
    table.push_back({{"generated", p.generated}, {"ideal", p.ideal}, {"rmse", p.rmse}});
  nlohmann::json j{{"rmse_to_ideal", r.rmse_to_ideal},
                   {"nearest_existing_rmse", r.nearest_existing_rmse},
                   {"predicted_coverage", r.predicted_coverage},
                   {"real_coverage_available", r.real_coverage_available},
                   {"rating_rmse_heldout", r.rating_rmse_heldout},
                   {"per_item_table", table},
                   {"config_hash", config_hash},
                   {"seed", seed},
                   {"version", kArtifactVersion}};
  if (r.real_coverage_available) j["real_coverage"] = r.real_coverage;
  std::ofstream out(path);
  if (!out) throw missing_input_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void append_ledger_row(const std::filesystem::path& ledger_path,
                       const std::string& model, int num_groups,
                       int items_per_group, std::uint64_t seed, double tau,
                       int k, const EvalReport& r) {
  const bool fresh = !std::filesystem::exists(ledger_path);
  std::ofstream out(ledger_path, std::ios::app);
  if (!out) throw missing_input_error("cannot append to " + ledger_path.string());
  if (fresh)
    out << "model,num_groups,items_per_group,seed,tau,K,rmse_to_ideal,"
           "nearest_existing_rmse,predicted_coverage,real_coverage,"
           "rating_rmse_heldout\n";
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%llu,%.9g,%d,%.9g,%.9g,%.9g,%.9g,%.9g",
                model.c_str(), num_groups, items_per_group,
                static_cast<unsigned long long>(seed), tau, k, r.rmse_to_ideal,
                r.nearest_existing_rmse, r.predicted_coverage,
                r.real_coverage_available ? r.real_coverage : -1.0,
                r.rating_rmse_heldout);
  out << buf << '\n';
}

}  // namespace mcnip
