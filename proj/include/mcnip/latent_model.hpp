#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "mcnip/common.hpp"

namespace mcnip {

enum class LossKind { kCrossEntropy, kSquared };

std::string loss_name(LossKind k);
LossKind loss_from_name(const std::string& name);

// Common surface of the two latent-space models. Both encode item features
// into the shared user/item space, decode latent points back into
// features, and predict ratings as sigmoid(z_u . z).
class LatentModel {
 public:
  virtual ~LatentModel() = default;

  virtual std::string kind() const = 0;
  virtual Index feature_dim() const = 0;
  virtual Index latent_dim() const = 0;
  virtual Index num_users() const = 0;

  // Deterministic encoding (the posterior mean for the VAE).
  virtual Vec encode_mean(const Vec& x) const = 0;
  // Stochastic encoding used by rating-weighted candidate sampling.
  virtual Vec encode_sample(const Vec& x, std::mt19937_64& rng) const = 0;
  virtual Vec decode(const Vec& z) const = 0;

  virtual const Mat& user_embeddings() const = 0;

  virtual void save(const std::filesystem::path& path) const = 0;

  double predict_rating(Index user, const Vec& z_item) const;
};

// Dispatches on the checkpoint magic line ("MCNIP-LM-1" / "MCNIP-VAE-1").
std::unique_ptr<LatentModel> load_model(const std::filesystem::path& path);

// Posterior-mean latents of every observed item, one row per item.
class RatingsDataset;
Mat encode_items(const LatentModel& model, const Mat& features);

struct TrainHistory {
  struct Epoch {
    int epoch = 0;
    double train_loss = 0.0;
    double val_rating_loss = 0.0;
  };
  std::vector<Epoch> epochs;
  int best_epoch = -1;
  bool diverged = false;
};

void save_history(const TrainHistory& h, const std::filesystem::path& path,
                  const std::string& config_hash, std::uint64_t seed);

}  // namespace mcnip
