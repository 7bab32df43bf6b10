#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mcnip/dataset.hpp"
#include "mcnip/latent_model.hpp"

namespace mcnip {

struct LmConfig {
  int latent_dim = 8;
  double lambda1 = 1.0;   // reconstruction weight
  double lambda2 = 0.01;  // regularizer weight
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 5;
  LossKind rating_loss = LossKind::kCrossEntropy;
  LossKind reconstruction_loss = LossKind::kCrossEntropy;
  // The combined loss as written uses plain (unsquared) Frobenius norms;
  // the squared variant common in factorization work sits behind this flag.
  bool squared_frobenius = false;
  std::uint64_t seed = 0;
};

// Collaborative linear model: z = encoder * x, x~ = decoder * z (through a
// sigmoid in cross-entropy mode), ratings sigmoid(z_u . z).
class LinearModel final : public LatentModel {
 public:
  Mat encoder;           // d_z x d_x
  Mat decoder;           // d_x x d_z
  Mat users;             // M x d_z
  LossKind reconstruction_loss = LossKind::kCrossEntropy;
  LossKind rating_loss = LossKind::kCrossEntropy;

  std::string kind() const override { return "lm"; }
  Index feature_dim() const override { return encoder.cols(); }
  Index latent_dim() const override { return encoder.rows(); }
  Index num_users() const override { return users.rows(); }
  Vec encode_mean(const Vec& x) const override;
  Vec encode_sample(const Vec& x, std::mt19937_64& rng) const override;
  Vec decode(const Vec& z) const override;
  const Mat& user_embeddings() const override { return users; }
  void save(const std::filesystem::path& path) const override;
  static LinearModel load(const std::filesystem::path& path);
};

Vec lm_encode(const LinearModel& m, const Vec& x);
Vec lm_decode(const LinearModel& m, const Vec& z);
double lm_predict_rating(const LinearModel& m, Index user, const Vec& z_item);

struct LmGrad {
  Mat d_encoder;
  Mat d_decoder;
  std::vector<std::pair<int, Vec>> d_users;  // touched rows only
};

// Sum over the batch of rating + lambda1 * reconstruction losses, plus
// lambda2 times the Frobenius regularizer over (encoder, decoder, touched
// user rows). Gradients are exact for this scalar; the reconstruction
// term's dependence on the encoder (through z) is included.
double lm_loss(const LinearModel& m, const RatingsDataset& ds,
               std::span<const int> batch, const LmConfig& cfg,
               LmGrad* grad = nullptr);

struct LmTrainResult {
  LinearModel model;
  TrainHistory history;
};

LmTrainResult lm_train(const RatingsDataset& ds, const DatasetSplit& split,
                       const LmConfig& cfg);

}  // namespace mcnip
