#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mcnip/coverage.hpp"
#include "mcnip/eval.hpp"
#include "mcnip/linear_model.hpp"
#include "mcnip/synth.hpp"
#include "mcnip/vae_model.hpp"

namespace mcnip {

// End-to-end run configuration: synth -> train -> sample -> cover -> eval.
struct PipelineConfig {
  SyntheticSpec synth;
  SplitFractions split;
  std::string model = "vae";  // "lm" | "vae"
  LmConfig lm;
  VaeConfig vae;
  std::string sample_method = "gmm";  // gmm | prior | rating_weighted
  Index candidate_count = 200000;
  int gmm_components = 0;  // 0 = min(10, number of items)
  double gamma = 1.0;      // rating-weighted inverse temperature
  double tau = 0.7;
  int k = 4;
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
  std::uint64_t seed = 0;
};

std::string config_hash(const PipelineConfig& cfg);

struct PipelineResult {
  EvalReport report;
  CoverageSolution solution;
  Mat generated;  // K x d_x decoded selections
  SynthGroundTruth truth;
  TrainHistory history;
};

// Runs all stages in memory, deriving each stage's seed from the root
// seed. When `artifacts_dir` is given, every intermediate artifact is
// persisted there and a ledger row is appended.
PipelineResult run_pipeline(const PipelineConfig& cfg,
                            const std::optional<std::filesystem::path>& artifacts_dir);

// The greedy solution restricted to its first k_prime picks; identical to
// rerunning greedy with K = k_prime because greedy selections are
// prefix-consistent.
CoverageSolution prefix_solution(const CoverageSolution& sol, int k_prime);

}  // namespace mcnip
