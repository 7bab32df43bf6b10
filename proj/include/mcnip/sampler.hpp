#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcnip/common.hpp"
#include "mcnip/dataset.hpp"
#include "mcnip/latent_model.hpp"

namespace mcnip {

// Diagonal-covariance Gaussian mixture over the latent space.
struct GmmModel {
  Vec weights;    // n_components, sums to 1
  Mat means;      // n_components x d
  Mat variances;  // n_components x d, floored at var_floor

  Index components() const { return means.rows(); }
  Index dim() const { return means.cols(); }
  double log_density(const Vec& x) const;
};

struct GmmFitOptions {
  int max_iters = 200;
  double tol = 1e-6;
  double var_floor = 1e-6;
  bool parallel = true;  // E-step over points; off = serial reference path
};

struct GmmFitInfo {
  std::vector<double> log_likelihood;  // per EM iteration, total over points
  int reseed_events = 0;
};

// EM with k-means++-style seeding. Per-iteration log-likelihood is
// non-decreasing; a component whose responsibility mass collapses is
// re-seeded from a random point (logged via GmmFitInfo).
GmmModel fit_gmm(const Mat& points, int n_components, std::uint64_t seed,
                 const GmmFitOptions& opts = {}, GmmFitInfo* info = nullptr);

// Per-point responsibilities (rows) and log-densities. Exposed for tests
// and the kernel benchmark; parallel and serial paths are bit-identical
// because each row is independent and reductions happen outside.
void gmm_responsibilities(const GmmModel& g, const Mat& points, Mat& resp,
                          Vec& log_density_per_point, bool parallel);

enum class CandidateProvenance { kGmm, kPrior, kRatingWeighted };

std::string provenance_name(CandidateProvenance p);

struct CandidateSet {
  Mat latents;  // T x d_z
  CandidateProvenance provenance = CandidateProvenance::kGmm;
  std::uint64_t seed = 0;
};

CandidateSet sample_candidates(const GmmModel& g, Index count, std::uint64_t seed);

CandidateSet sample_prior(Index d_z, Index count, std::uint64_t seed);

// Items are drawn from the softmax (with inverse temperature gamma) of
// their rating sums, then encoded stochastically: through q(z|x) for the
// VAE, with isotropic jitter for the linear model.
CandidateSet sample_rating_weighted(const LatentModel& model,
                                    const RatingsDataset& ds, Index count,
                                    double gamma, std::uint64_t seed);

// softmax(gamma * rating_sum), computed with max-subtraction.
Vec rating_weighted_probs(const RatingsDataset& ds, double gamma);

void save_candidates(const CandidateSet& cs, const std::filesystem::path& csv_path,
                     const std::filesystem::path& meta_path,
                     const std::string& model_checksum,
                     const std::string& config_hash);

CandidateSet load_candidates(const std::filesystem::path& csv_path,
                             const std::filesystem::path& meta_path);

}  // namespace mcnip
