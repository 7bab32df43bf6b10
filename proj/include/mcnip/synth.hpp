#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcnip/common.hpp"
#include "mcnip/dataset.hpp"

namespace mcnip {

struct SyntheticSpec {
  int num_users = 5000;
  int num_groups = 2;       // K_g
  int items_per_group = 20; // N_g
  int feature_dim = 20;
  double item_spread = 0.08;   // sigma_g, std of the per-group item cloud
  double rating_noise = 0.03;  // sigma_r
  int ratings_per_user = 20;
  // Ideal items must be at least min_separation_coef * sqrt(d) apart.
  // 0.2 keeps rejection sampling cheap for up to ~6 groups in 20-D while
  // the clouds (radius ~ sigma_g * sqrt(d)) stay well separated.
  double min_separation_coef = 0.2;
  std::uint64_t seed = 0;
};

// Ground truth kept alongside the generated ratings: the unobserved ideal
// items, group memberships, and the noise-free rating oracle.
struct SynthGroundTruth {
  Mat ideal_items;  // num_groups x feature_dim
  std::vector<int> group_of_user;
  std::vector<int> group_of_item;
  double d_max = 0.0;  // distance at which the rating hits its floor

  // Noise-free rating of feature vector x for this user's group:
  // clip(1 - ||x - ideal|| / d_max, 0.3, 1).
  double true_rating(int user, const Eigen::Ref<const Vec>& x) const;
};

struct SyntheticDataset {
  RatingsDataset base;
  SynthGroundTruth truth;
};

// Benchmark generator: ideal items drawn uniformly from [0.25,0.75]^d with
// rejection sampling on their pairwise separation, observed items Gaussian
// around each ideal (clipped to [0,1]), same-group ratings decaying
// linearly with distance to the ideal plus noise, cross-group ratings
// uniform in [0.1,0.3]. Each user rates min(ratings_per_user, N) distinct
// items drawn uniformly from all groups.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Writes ratings.csv, features.csv, ideal_items.csv, groups.json and
// id_map.json into `dir`.
void save_synthetic(const SyntheticDataset& sd, const std::filesystem::path& dir,
                    const std::string& meta = {});

SynthGroundTruth load_ground_truth(const std::filesystem::path& dir);

}  // namespace mcnip
