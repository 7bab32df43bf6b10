#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mcnip/dataset.hpp"
#include "mcnip/latent_model.hpp"
#include "mcnip/nn.hpp"

namespace mcnip {

struct VaeConfig {
  int latent_dim = 8;
  std::vector<Index> hidden_dims{14};  // encoder trunk; decoder mirrors it
  int mc_samples = 1;                  // L
  double kl_weight = 1.0;
  double rating_weight = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 5;
  LossKind rating_loss = LossKind::kCrossEntropy;
  LossKind reconstruction_loss = LossKind::kCrossEntropy;
  std::uint64_t seed = 0;
};

// Collaborative VAE: a relu trunk feeding affine mu / log-sigma heads, a
// decoder network back to feature space, and point-optimized user
// embeddings.
class CollabVae final : public LatentModel {
 public:
  nn::Mlp trunk;           // d_x -> hidden
  nn::Mlp head_mu;         // hidden -> d_z, affine
  nn::Mlp head_log_sigma;  // hidden -> d_z, affine
  nn::Mlp decoder;         // d_z -> d_x, sigmoid output in cross-entropy mode
  Mat users;               // M x d_z
  LossKind rating_loss = LossKind::kCrossEntropy;
  LossKind reconstruction_loss = LossKind::kCrossEntropy;

  std::string kind() const override { return "vae"; }
  Index feature_dim() const override;
  Index latent_dim() const override { return head_mu.output_dim(); }
  Index num_users() const override { return users.rows(); }
  Vec encode_mean(const Vec& x) const override;
  Vec encode_sample(const Vec& x, std::mt19937_64& rng) const override;
  Vec decode(const Vec& z) const override;
  const Mat& user_embeddings() const override { return users; }
  void save(const std::filesystem::path& path) const override;
  static CollabVae load(const std::filesystem::path& path);
};

// log-sigma head outputs are clamped to [-6,6] so exp() stays finite.
inline constexpr double kLogSigmaClamp = 6.0;

CollabVae init_vae(Index d_x, Index num_users, const VaeConfig& cfg);

// (mu, log_sigma) of the Gaussian posterior q(z|x).
std::pair<Vec, Vec> vae_encode(const CollabVae& m, const Vec& x);

// z = mu + exp(log_sigma) .* eps
Vec reparameterize(const Vec& mu, const Vec& log_sigma, const Vec& eps);

// KL(N(mu, diag(exp(log_sigma)^2)) || N(0, I)), closed form, >= 0.
double kl_to_standard_normal(const Vec& mu, const Vec& log_sigma);

struct ElboTerms {
  double rating_ll = 0.0;  // averaged over the L samples
  double recon_ll = 0.0;
  double kl = 0.0;

  double value(double rating_weight = 1.0, double kl_weight = 1.0) const {
    return recon_ll + rating_weight * rating_ll - kl_weight * kl;
  }
};

struct VaeGrad {
  nn::MlpGrad trunk, head_mu, head_log_sigma, decoder;
  int user = -1;
  Vec d_user;

  void resize_like(const CollabVae& m);
  void set_zero();
};

// SGVB estimate of the per-datum ELBO with the given noise draws `eps`
// (mc_samples x d_z). Gradients (of the ELBO value, i.e. the quantity to
// ascend) flow to the encoder, decoder, and the user's embedding through
// the reparameterized samples. Throws a numeric error naming the term
// that went non-finite.
ElboTerms vae_elbo_datum(const CollabVae& m, const RatingTriple& t,
                         const Vec& x, const Mat& eps, const VaeConfig& cfg,
                         VaeGrad* grad = nullptr);

// Decoder output for a latent point; (0,1)^d_x in cross-entropy mode.
Vec vae_generate(const CollabVae& m, const Vec& z);

struct VaeTrainResult {
  CollabVae model;
  TrainHistory history;
};

VaeTrainResult vae_train(const RatingsDataset& ds, const DatasetSplit& split,
                         const VaeConfig& cfg);

}  // namespace mcnip
