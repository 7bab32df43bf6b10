#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mcnip/common.hpp"

namespace mcnip {

struct RatingTriple {
  int user = 0;
  int item = 0;
  double rating = 0.0;
};

// User/item ids in the input files may be arbitrary strings; the loader
// assigns dense indices in order of first appearance (items take their
// order from the features file, which acts as the item catalog).
struct RatingsDataset {
  int num_users = 0;
  int num_items = 0;
  int feature_dim = 0;
  Mat features;  // num_items x feature_dim
  std::vector<RatingTriple> triples;
  // Original rating scale (orig_min, orig_max); (0,1) means the data is
  // already on the unit interval. Kept after rescaling so predictions can
  // be mapped back.
  std::pair<double, double> rating_scale{0.0, 1.0};
  std::vector<std::string> user_ids;  // dense index -> original id
  std::vector<std::string> item_ids;

  bool ratings_in_unit_interval() const;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<int> train, validation, test;
};

// CSV formats: ratings `user_id,item_id,rating`, features
// `item_id,f0,...,f{d-1}`. Lines starting with '#' are metadata comments
// and are skipped.
RatingsDataset load_dataset(const std::filesystem::path& ratings_path,
                            const std::filesystem::path& features_path);

// Values are printed at 9 significant digits; `meta` (if non-empty) is
// embedded as a leading '#' comment line in both files.
void save_dataset(const RatingsDataset& ds,
                  const std::filesystem::path& ratings_path,
                  const std::filesystem::path& features_path,
                  const std::string& meta = {});

void write_id_map(const RatingsDataset& ds, const std::filesystem::path& path);

// Affine map through ds.rating_scale onto [0,1]. When the recorded scale
// is the degenerate default (0,1) the map is the identity. Throws if a
// rating falls outside the declared scale or the scale has zero width.
RatingsDataset rescale_ratings(const RatingsDataset& ds);

// Deterministic under seed; per-user stratified so every user with >= 3
// ratings keeps at least one training triple. Users with no ratings are
// reported to stderr and retained.
DatasetSplit split_dataset(const RatingsDataset& ds, const SplitFractions& f,
                           std::uint64_t seed);

// Invariant checks shared by the loader and the generators; throws
// integrity errors. `unit_features` additionally requires features in
// [0,1] (needed by cross-entropy reconstruction).
void validate_dataset(const RatingsDataset& ds, bool unit_features = false);

}  // namespace mcnip
