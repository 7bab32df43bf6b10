#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mcnip/common.hpp"
#include "mcnip/coverage.hpp"
#include "mcnip/dataset.hpp"
#include "mcnip/latent_model.hpp"
#include "mcnip/synth.hpp"

namespace mcnip {

// Exact minimum-cost assignment (Hungarian method, O(n^3)); returns the
// column matched to each row. Costs must be finite and square; callers
// pad rectangular instances.
std::vector<int> linear_assignment(const Mat& cost);

struct MatchEntry {
  int generated = 0;
  int ideal = 0;
  double rmse = 0.0;
};

struct MatchResult {
  double mean_rmse = 0.0;  // over the min(K, K_g) matched pairs
  std::vector<MatchEntry> pairs;
};

// Pairwise feature-space RMSE cost matrix, optimally matched; when the
// counts differ the matrix is padded and only real pairs enter the mean.
MatchResult rmse_to_ideal(const Mat& generated, const Mat& ideal);

// Mean over ideal items of the RMSE to the closest observed item.
double nearest_existing_rmse(const Mat& ideal, const Mat& observed);

struct CoverageReport {
  double predicted = 0.0;
  double real = 0.0;
  bool real_available = false;
};

// Predicted coverage from the solution; real coverage from the synthetic
// ground-truth oracle applied to the decoded items users were assigned
// to. Pass truth = nullptr on non-synthetic data for a predicted-only
// report.
CoverageReport coverage_report(const CoverageSolution& sol,
                               const SynthGroundTruth* truth,
                               const Mat& decoded_items);

double rating_rmse_heldout(const LatentModel& model, const RatingsDataset& ds,
                           std::span<const int> test_indices);

struct EvalReport {
  double rmse_to_ideal = 0.0;
  double nearest_existing_rmse = 0.0;
  double predicted_coverage = 0.0;
  double real_coverage = 0.0;
  bool real_coverage_available = false;
  double rating_rmse_heldout = 0.0;
  std::vector<MatchEntry> per_item_table;
};

void save_eval_report(const EvalReport& r, const std::filesystem::path& path,
                      const std::string& config_hash, std::uint64_t seed);

// One flat CSV row per run, appended for aggregation across experiments.
void append_ledger_row(const std::filesystem::path& ledger_path,
                       const std::string& model, int num_groups,
                       int items_per_group, std::uint64_t seed, double tau,
                       int k, const EvalReport& r);

}  // namespace mcnip
