#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcnip/common.hpp"
#include "mcnip/latent_model.hpp"
#include "mcnip/sampler.hpp"

namespace mcnip {

struct CoverageProblem {
  Mat ratings;  // users x candidates, entries in [0,1]
  double tau = 0.7;
  int k = 1;
};

struct CoverageSolution {
  std::vector<int> selected;     // candidate indices in pick order
  std::vector<int> assignment;   // per user: position in `selected`, or -1
  double objective = 0.0;        // sum of covered users' ratings
  double coverage_proportion = 0.0;
  std::vector<double> per_item_marginal;  // gain of each greedy pick
  double tau = 0.0;
  int k = 0;

  int covered_count() const;
};

// Greedy weighted maximum coverage: at each of K steps pick the candidate
// with the largest total rating over still-uncovered users exceeding tau
// (strictly), ties and all-zero gains resolved toward the lowest candidate
// index. Newly covered users stay assigned to the item that first covered
// them. Column scans run in parallel; the result is independent of the
// thread count because per-candidate gains are computed independently and
// reduced serially.
CoverageSolution greedy_cover(const CoverageProblem& p);

// Same semantics computed without materializing the users x candidates
// matrix: ratings are sigmoid(z_u . z_t), recomputed per scan in column
// blocks. Used when the matrix would exceed the memory budget.
CoverageSolution greedy_cover_latent(const Mat& user_latents,
                                     const Mat& candidate_latents, double tau,
                                     int k);

// Picks the materialized or streamed path depending on the budget.
CoverageSolution greedy_cover_auto(const Mat& user_latents,
                                   const Mat& candidate_latents, double tau,
                                   int k, std::size_t memory_budget_bytes);

// Straightforward single-threaded implementation kept as the reference
// the optimized kernels are tested against.
CoverageSolution greedy_cover_serial(const CoverageProblem& p);

// Exact optimum by enumerating all K-subsets (requires C(T,K) <= 1e6).
// Each covered user is assigned to its highest-rating covering item;
// per_item_marginal holds each selected item's assigned mass.
CoverageSolution brute_force_cover(const CoverageProblem& p);

double coverage_proportion(const CoverageSolution& sol, Index num_users);

// users x candidates matrix of sigmoid(z_u . z_t); parallel over columns,
// plus the serial reference twin.
Mat build_rating_matrix(const LatentModel& model, const CandidateSet& candidates);
Mat build_rating_matrix_serial(const LatentModel& model,
                               const CandidateSet& candidates);

void save_solution(const CoverageSolution& sol, const std::filesystem::path& path,
                   const std::string& config_hash, std::uint64_t seed);
CoverageSolution load_solution(const std::filesystem::path& path);

}  // namespace mcnip
