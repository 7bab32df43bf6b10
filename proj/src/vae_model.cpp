#include "mcnip/vae_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcnip/checkpoint.hpp"
#include "mcnip/errors.hpp"
#include "mcnip/rng.hpp"

namespace mcnip {

Index CollabVae::feature_dim() const {
  return trunk.layers.empty() ? head_mu.input_dim() : trunk.input_dim();
}

CollabVae init_vae(Index d_x, Index num_users, const VaeConfig& cfg) {
  if (cfg.latent_dim < 1) throw config_error("init_vae: latent_dim must be >= 1");
  CollabVae m;
  m.rating_loss = cfg.rating_loss;
  m.reconstruction_loss = cfg.reconstruction_loss;

  std::vector<Index> enc_dims{d_x};
  enc_dims.insert(enc_dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  if (!cfg.hidden_dims.empty()) {
    std::vector<nn::Activation> acts(cfg.hidden_dims.size(), nn::Activation::kRelu);
    m.trunk = nn::init_mlp(enc_dims, acts, derive_seed(cfg.seed, "init/trunk"));
  }
  const Index head_in = enc_dims.back();
  m.head_mu = nn::init_mlp({head_in, cfg.latent_dim}, {nn::Activation::kIdentity},
                           derive_seed(cfg.seed, "init/head_mu"));
  m.head_log_sigma =
      nn::init_mlp({head_in, cfg.latent_dim}, {nn::Activation::kIdentity},
                   derive_seed(cfg.seed, "init/head_log_sigma"));

  std::vector<Index> dec_dims{cfg.latent_dim};
  dec_dims.insert(dec_dims.end(), cfg.hidden_dims.rbegin(), cfg.hidden_dims.rend());
  dec_dims.push_back(d_x);
  std::vector<nn::Activation> dec_acts(dec_dims.size() - 2, nn::Activation::kRelu);
  dec_acts.push_back(cfg.reconstruction_loss == LossKind::kCrossEntropy
                         ? nn::Activation::kSigmoid
                         : nn::Activation::kIdentity);
  m.decoder = nn::init_mlp(dec_dims, dec_acts, derive_seed(cfg.seed, "init/decoder"));

  auto rng = stream_rng(cfg.seed, "init/users");
  std::normal_distribution<double> unit(0.0, std::sqrt(1.0 / cfg.latent_dim));
  m.users.resize(num_users, cfg.latent_dim);
  for (Index i = 0; i < m.users.size(); ++i) m.users.data()[i] = unit(rng);
  return m;
}

std::pair<Vec, Vec> vae_encode(const CollabVae& m, const Vec& x) {
  const Vec h = nn::forward(m.trunk, x);
  Vec mu = nn::forward(m.head_mu, h);
  Vec ls = nn::forward(m.head_log_sigma, h);
  for (Index j = 0; j < ls.size(); ++j)
    ls[j] = std::clamp(ls[j], -kLogSigmaClamp, kLogSigmaClamp);
  return {std::move(mu), std::move(ls)};
}

Vec reparameterize(const Vec& mu, const Vec& log_sigma, const Vec& eps) {
  if (mu.size() != log_sigma.size() || mu.size() != eps.size())
    throw config_error("reparameterize: size mismatch");
  return mu.array() + log_sigma.array().exp() * eps.array();
}

double kl_to_standard_normal(const Vec& mu, const Vec& log_sigma) {
  if (mu.size() != log_sigma.size())
    throw config_error("kl_to_standard_normal: size mismatch");
  double kl = 0.0;
  for (Index j = 0; j < mu.size(); ++j) {
    const double two_ls = 2.0 * log_sigma[j];
    kl += 0.5 * (mu[j] * mu[j] + std::exp(two_ls) - 1.0 - two_ls);
  }
  return kl;
}

Vec CollabVae::encode_mean(const Vec& x) const { return vae_encode(*this, x).first; }

Vec CollabVae::encode_sample(const Vec& x, std::mt19937_64& rng) const {
  auto [mu, ls] = vae_encode(*this, x);
  std::normal_distribution<double> unit(0.0, 1.0);
  Vec eps(mu.size());
  for (Index j = 0; j < eps.size(); ++j) eps[j] = unit(rng);
  return reparameterize(mu, ls, eps);
}

Vec CollabVae::decode(const Vec& z) const { return vae_generate(*this, z); }

Vec vae_generate(const CollabVae& m, const Vec& z) {
  if (z.size() != m.decoder.input_dim())
    throw config_error("vae_generate: latent vector has size " + std::to_string(z.size()) +
                       ", expected " + std::to_string(m.decoder.input_dim()));
  return nn::forward(m.decoder, z);
}

void VaeGrad::resize_like(const CollabVae& m) {
  trunk.resize_like(m.trunk);
  head_mu.resize_like(m.head_mu);
  head_log_sigma.resize_like(m.head_log_sigma);
  decoder.resize_like(m.decoder);
  d_user = Vec::Zero(m.latent_dim());
  user = -1;
}

void VaeGrad::set_zero() {
  trunk.set_zero();
  head_mu.set_zero();
  head_log_sigma.set_zero();
  decoder.set_zero();
  d_user.setZero();
  user = -1;
}

namespace {

struct ElboWork {
  nn::ForwardCache trunk_c, mu_c, ls_c, dec_c;
};

ElboTerms elbo_datum_impl(const CollabVae& m, const RatingTriple& t, const Vec& x,
                          const Mat& eps, const VaeConfig& cfg, VaeGrad* grad,
                          ElboWork& w) {
  const Index d_z = m.latent_dim();
  if (eps.cols() != d_z || eps.rows() < 1)
    throw config_error("vae_elbo_datum: eps must be L x d_z with L >= 1");
  const auto L = eps.rows();

  const Vec h = nn::forward(m.trunk, x, grad ? &w.trunk_c : nullptr);
  const Vec mu = nn::forward(m.head_mu, h, grad ? &w.mu_c : nullptr);
  Vec ls_raw = nn::forward(m.head_log_sigma, h, grad ? &w.ls_c : nullptr);
  Vec ls(d_z);
  for (Index j = 0; j < d_z; ++j)
    ls[j] = std::clamp(ls_raw[j], -kLogSigmaClamp, kLogSigmaClamp);
  const Vec sigma = ls.array().exp();

  ElboTerms terms;
  terms.kl = kl_to_standard_normal(mu, ls);
  if (!std::isfinite(terms.kl))
    throw numeric_error("vae_elbo_datum: kl term non-finite (user " +
                        std::to_string(t.user) + ", item " + std::to_string(t.item) + ")");

  Vec d_mu = Vec::Zero(d_z);
  Vec d_ls = Vec::Zero(d_z);
  if (grad) {
    grad->set_zero();
    grad->user = t.user;
    d_mu -= cfg.kl_weight * mu;
    for (Index j = 0; j < d_z; ++j)
      d_ls[j] -= cfg.kl_weight * (std::exp(2.0 * ls[j]) - 1.0);
  }

  const auto zu = m.users.row(t.user);
  const double inv_l = 1.0 / static_cast<double>(L);
  for (Index l = 0; l < L; ++l) {
    const Vec e = eps.row(l).transpose();
    const Vec z = mu.array() + sigma.array() * e.array();

    const Vec x_hat = nn::forward(m.decoder, z, grad ? &w.dec_c : nullptr);
    double recon = 0.0;
    Vec d_xhat = Vec::Zero(x_hat.size());
    if (cfg.reconstruction_loss == LossKind::kCrossEntropy) {
      for (Index j = 0; j < x_hat.size(); ++j) {
        const double p = clamp_unit(x_hat[j]);
        recon += x[j] * std::log(p) + (1.0 - x[j]) * std::log(1.0 - p);
        if (p == x_hat[j]) d_xhat[j] = x[j] / p - (1.0 - x[j]) / (1.0 - p);
      }
    } else {
      for (Index j = 0; j < x_hat.size(); ++j) {
        const double err = x[j] - x_hat[j];
        recon -= err * err;
        d_xhat[j] = 2.0 * err;
      }
    }

    const double q = zu.dot(z.transpose());
    const double s = sigmoid(q);
    const double r_pred = clamp_unit(s);
    double rating = 0.0;
    double dq = 0.0;
    if (cfg.rating_loss == LossKind::kCrossEntropy) {
      rating = t.rating * std::log(r_pred) + (1.0 - t.rating) * std::log(1.0 - r_pred);
      if (s == r_pred) dq = t.rating - s;
    } else {
      const double err = t.rating - r_pred;
      rating = -err * err;
      if (s == r_pred) dq = 2.0 * err * s * (1.0 - s);
    }
    terms.recon_ll += inv_l * recon;
    terms.rating_ll += inv_l * rating;

    if (grad) {
      Vec dz = Vec::Zero(d_z);
      // reconstruction path
      grad->decoder.d_input.setZero();
      nn::backward(m.decoder, w.dec_c, inv_l * d_xhat, grad->decoder);
      dz += grad->decoder.d_input;
      // rating path
      const double dq_scaled = cfg.rating_weight * inv_l * dq;
      dz += dq_scaled * zu.transpose();
      grad->d_user += dq_scaled * z;
      d_mu += dz;
      d_ls.array() += dz.array() * sigma.array() * e.array();
    }
  }

  if (!std::isfinite(terms.recon_ll))
    throw numeric_error("vae_elbo_datum: reconstruction term non-finite (item " +
                        std::to_string(t.item) + ")");
  if (!std::isfinite(terms.rating_ll))
    throw numeric_error("vae_elbo_datum: rating term non-finite (user " +
                        std::to_string(t.user) + ", item " + std::to_string(t.item) + ")");

  if (grad) {
    // The log-sigma clamp passes gradient only where it is inactive.
    for (Index j = 0; j < d_z; ++j)
      if (std::abs(ls_raw[j]) >= kLogSigmaClamp) d_ls[j] = 0.0;
    nn::backward(m.head_mu, w.mu_c, d_mu, grad->head_mu);
    nn::backward(m.head_log_sigma, w.ls_c, d_ls, grad->head_log_sigma);
    const Vec d_h = grad->head_mu.d_input + grad->head_log_sigma.d_input;
    nn::backward(m.trunk, w.trunk_c, d_h, grad->trunk);
  }
  return terms;
}

double validation_rating_loss(const CollabVae& m, const RatingsDataset& ds,
                              std::span<const int> indices, LossKind kind) {
  if (indices.empty()) return 0.0;
  std::vector<double> losses(indices.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(indices.size()); ++i) {
    const auto& t = ds.triples[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    const Vec mu = m.encode_mean(ds.features.row(t.item).transpose());
    const double r_pred = clamp_unit(sigmoid(m.users.row(t.user).dot(mu.transpose())));
    losses[static_cast<std::size_t>(i)] =
        kind == LossKind::kCrossEntropy
            ? -(t.rating * std::log(r_pred) + (1.0 - t.rating) * std::log(1.0 - r_pred))
            : (t.rating - r_pred) * (t.rating - r_pred);
  }
  double sum = 0.0;
  for (double v : losses) sum += v;
  return sum / static_cast<double>(indices.size());
}

std::vector<nn::ParamView> vae_param_views(CollabVae& m) {
  std::vector<nn::ParamView> out;
  for (auto* net : {&m.trunk, &m.head_mu, &m.head_log_sigma, &m.decoder}) {
    auto views = nn::param_views(*net);
    out.insert(out.end(), views.begin(), views.end());
  }
  out.push_back({m.users.data(), m.users.size()});
  return out;
}

}  // namespace

ElboTerms vae_elbo_datum(const CollabVae& m, const RatingTriple& t, const Vec& x,
                         const Mat& eps, const VaeConfig& cfg, VaeGrad* grad) {
  if (t.user < 0 || t.user >= m.num_users())
    throw config_error("vae_elbo_datum: unknown user " + std::to_string(t.user));
  if (grad && grad->d_user.size() != m.latent_dim()) grad->resize_like(m);
  ElboWork w;
  return elbo_datum_impl(m, t, x, eps, cfg, grad, w);
}

VaeTrainResult vae_train(const RatingsDataset& ds, const DatasetSplit& split,
                         const VaeConfig& cfg) {
  if (!ds.ratings_in_unit_interval())
    throw config_error("vae_train: ratings must be rescaled to [0,1] first");
  if (cfg.batch_size < 1 || cfg.patience < 1 || cfg.mc_samples < 1)
    throw config_error("vae_train: batch_size, patience and mc_samples must be >= 1");
  if (cfg.reconstruction_loss == LossKind::kCrossEntropy)
    validate_dataset(ds, /*unit_features=*/true);

  CollabVae m = init_vae(ds.feature_dim, ds.num_users, cfg);
  auto params = vae_param_views(m);
  auto adam = nn::make_adam(cfg.learning_rate, params);

  // Step-gradient accumulators mirroring the parameter list.
  VaeGrad acc;
  acc.resize_like(m);
  Mat d_users(m.users.rows(), m.users.cols());

  auto batch_rng = stream_rng(cfg.seed, "batching");
  auto eps_rng = stream_rng(cfg.seed, "eps");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<int> order(split.train.begin(), split.train.end());
  const auto n_train = order.size();
  if (n_train == 0) throw config_error("vae_train: empty training split");
  const Index d_z = cfg.latent_dim;
  const auto L = static_cast<Index>(cfg.mc_samples);

  VaeTrainResult result;
  result.model = m;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  const auto bcap = static_cast<std::size_t>(cfg.batch_size);
  std::vector<VaeGrad> slots(bcap);
  for (auto& s : slots) s.resize_like(m);
  std::vector<ElboWork> works(bcap);
  std::vector<double> slot_loss(bcap);
  std::vector<Mat> slot_eps(bcap, Mat(L, d_z));

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    double epoch_loss = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < n_train && finite; start += bcap) {
      const auto bsz = std::min(bcap, n_train - start);
      // Fresh noise per datum, drawn serially so the stream is
      // independent of the thread count.
      for (std::size_t i = 0; i < bsz; ++i)
        for (Index j = 0; j < slot_eps[i].size(); ++j)
          slot_eps[i].data()[j] = unit(eps_rng);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(bsz); ++i) {
        const auto si = static_cast<std::size_t>(i);
        const auto& t = ds.triples[static_cast<std::size_t>(order[start + si])];
        const Vec x = ds.features.row(t.item).transpose();
        const auto terms = elbo_datum_impl(m, t, x, slot_eps[si], cfg, &slots[si], works[si]);
        slot_loss[si] = -terms.value(cfg.rating_weight, cfg.kl_weight);
      }
      acc.set_zero();
      d_users.setZero();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < bsz; ++i) {
        batch_loss += slot_loss[i];
        acc.trunk.add(slots[i].trunk);
        acc.head_mu.add(slots[i].head_mu);
        acc.head_log_sigma.add(slots[i].head_log_sigma);
        acc.decoder.add(slots[i].decoder);
        d_users.row(slots[i].user) += slots[i].d_user.transpose();
      }
      if (!std::isfinite(batch_loss)) {
        finite = false;
        break;
      }
      // Gradients above are of the ELBO (ascent); Adam minimizes, and we
      // average over the batch.
      const double scale = -1.0 / static_cast<double>(bsz);
      std::vector<nn::GradView> grads;
      auto push_mlp = [&](nn::MlpGrad& g) {
        for (std::size_t li = 0; li < g.d_weight.size(); ++li) {
          g.d_weight[li] *= scale;
          g.d_bias[li] *= scale;
          grads.push_back({g.d_weight[li].data(), g.d_weight[li].size()});
          grads.push_back({g.d_bias[li].data(), g.d_bias[li].size()});
        }
      };
      push_mlp(acc.trunk);
      push_mlp(acc.head_mu);
      push_mlp(acc.head_log_sigma);
      push_mlp(acc.decoder);
      d_users *= scale;
      grads.push_back({d_users.data(), d_users.size()});
      adam_step(adam, params, grads);
      epoch_loss += batch_loss;
    }

    if (!finite) {
      result.history.diverged = true;
      break;
    }
    const double val = validation_rating_loss(m, ds, split.validation, cfg.rating_loss);
    result.history.epochs.push_back({epoch, epoch_loss / static_cast<double>(n_train), val});
    if (val < best_val - 1e-12) {
      best_val = val;
      result.model = m;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (result.history.best_epoch < 0) result.model = m;
  return result;
}

void CollabVae::save(const std::filesystem::path& path) const {
  nlohmann::json header{{"d_x", feature_dim()},
                        {"d_z", latent_dim()},
                        {"num_users", users.rows()},
                        {"rating_loss", loss_name(rating_loss)},
                        {"reconstruction_loss", loss_name(reconstruction_loss)}};
  std::vector<Index> hidden;
  for (const auto& l : trunk.layers) hidden.push_back(l.weight.rows());
  header["hidden"] = hidden;
  std::vector<double> blob;
  for (const auto* net : {&trunk, &head_mu, &head_log_sigma, &decoder})
    for (const auto& l : net->layers) {
      append_matrix(blob, l.weight);
      append_vector(blob, l.bias);
    }
  append_matrix(blob, users);
  write_checkpoint(path, "MCNIP-VAE-1", header, blob);
}

CollabVae CollabVae::load(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path, "MCNIP-VAE-1");
  VaeConfig cfg;
  cfg.latent_dim = ck.header.at("d_z").get<int>();
  cfg.hidden_dims = ck.header.at("hidden").get<std::vector<Index>>();
  cfg.rating_loss = loss_from_name(ck.header.at("rating_loss").get<std::string>());
  cfg.reconstruction_loss =
      loss_from_name(ck.header.at("reconstruction_loss").get<std::string>());
  cfg.seed = 0;
  CollabVae m = init_vae(ck.header.at("d_x").get<Index>(),
                         ck.header.at("num_users").get<Index>(), cfg);
  std::size_t pos = 0;
  for (auto* net : {&m.trunk, &m.head_mu, &m.head_log_sigma, &m.decoder})
    for (auto& l : net->layers) {
      l.weight = take_matrix(ck.blob, pos, l.weight.rows(), l.weight.cols());
      l.bias = take_vector(ck.blob, pos, l.bias.size());
    }
  m.users = take_matrix(ck.blob, pos, m.users.rows(), m.users.cols());
  if (pos != ck.blob.size())
    throw integrity_error(path.string() + ": trailing bytes in parameter blob");
  return m;
}

}  // namespace mcnip
