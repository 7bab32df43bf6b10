#include "mcnip/linear_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcnip/checkpoint.hpp"
#include "mcnip/errors.hpp"
#include "mcnip/nn.hpp"
#include "mcnip/rng.hpp"

namespace mcnip {

std::string loss_name(LossKind k) {
  return k == LossKind::kCrossEntropy ? "cross_entropy" : "squared";
}

LossKind loss_from_name(const std::string& name) {
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "squared") return LossKind::kSquared;
  throw config_error("unknown loss '" + name + "' (want cross_entropy|squared)");
}

double LatentModel::predict_rating(Index user, const Vec& z_item) const {
  if (user < 0 || user >= num_users())
    throw config_error("predict_rating: unknown user " + std::to_string(user));
  return sigmoid_clamped(user_embeddings().row(user).dot(z_item.transpose()));
}

Vec lm_encode(const LinearModel& m, const Vec& x) {
  if (x.size() != m.encoder.cols())
    throw config_error("lm_encode: feature vector has size " + std::to_string(x.size()) +
                       ", expected " + std::to_string(m.encoder.cols()));
  return m.encoder * x;
}

Vec lm_decode(const LinearModel& m, const Vec& z) {
  if (z.size() != m.decoder.cols())
    throw config_error("lm_decode: latent vector has size " + std::to_string(z.size()) +
                       ", expected " + std::to_string(m.decoder.cols()));
  Vec out = m.decoder * z;
  if (m.reconstruction_loss == LossKind::kCrossEntropy)
    for (Index j = 0; j < out.size(); ++j) out[j] = sigmoid_clamped(out[j]);
  return out;
}

double lm_predict_rating(const LinearModel& m, Index user, const Vec& z_item) {
  return m.predict_rating(user, z_item);
}

Vec LinearModel::encode_mean(const Vec& x) const { return lm_encode(*this, x); }

Vec LinearModel::encode_sample(const Vec& x, std::mt19937_64& rng) const {
  // The linear model has no posterior; isotropic jitter keeps the
  // rating-weighted sampler usable for both model kinds.
  constexpr double kJitter = 0.05;
  Vec z = lm_encode(*this, x);
  std::normal_distribution<double> noise(0.0, kJitter);
  for (Index j = 0; j < z.size(); ++j) z[j] += noise(rng);
  return z;
}

Vec LinearModel::decode(const Vec& z) const { return lm_decode(*this, z); }

namespace {

// Per-datum loss and gradients, without the regularizer.
struct DatumGrad {
  Mat d_encoder;
  Mat d_decoder;
  Vec d_user;
  int user = -1;
};

double lm_datum_loss(const LinearModel& m, const RatingsDataset& ds,
                     const RatingTriple& t, const LmConfig& cfg,
                     DatumGrad* grad) {
  const Vec x = ds.features.row(t.item).transpose();
  const Vec z = m.encoder * x;
  const auto zu = m.users.row(t.user);

  // Rating term.
  const double q = zu.dot(z.transpose());
  const double s = sigmoid(q);
  const double r_pred = clamp_unit(s);
  const bool clamped = s != r_pred;
  double loss = 0.0;
  double dq = 0.0;
  if (cfg.rating_loss == LossKind::kCrossEntropy) {
    loss -= t.rating * std::log(r_pred) + (1.0 - t.rating) * std::log(1.0 - r_pred);
    if (!clamped) dq = s - t.rating;
  } else {
    const double e = t.rating - r_pred;
    loss += e * e;
    if (!clamped) dq = -2.0 * e * s * (1.0 - s);
  }

  // Reconstruction term.
  const Vec y = m.decoder * z;
  Vec dy = Vec::Zero(y.size());
  double recon = 0.0;
  if (cfg.reconstruction_loss == LossKind::kCrossEntropy) {
    for (Index j = 0; j < y.size(); ++j) {
      const double sj = sigmoid(y[j]);
      const double xt = clamp_unit(sj);
      recon -= x[j] * std::log(xt) + (1.0 - x[j]) * std::log(1.0 - xt);
      if (sj == xt) dy[j] = sj - x[j];
    }
  } else {
    for (Index j = 0; j < y.size(); ++j) {
      const double e = x[j] - y[j];
      recon += e * e;
      dy[j] = -2.0 * e;
    }
  }
  loss += cfg.lambda1 * recon;

  if (grad) {
    grad->user = t.user;
    // dz collects the rating path and the reconstruction path through z.
    Vec dz = dq * zu.transpose();
    dz.noalias() += cfg.lambda1 * (m.decoder.transpose() * dy);
    grad->d_encoder.noalias() = dz * x.transpose();
    grad->d_decoder.noalias() = cfg.lambda1 * (dy * z.transpose());
    grad->d_user = dq * z;
  }
  return loss;
}

// Frobenius regularizer value and gradient factor. For the unsquared norm
// the gradient is M/||M||_F with subgradient 0 at M = 0.
double frobenius_term(const Mat& m, bool squared, Mat* grad) {
  const double sq = m.squaredNorm();
  if (squared) {
    if (grad) *grad = 2.0 * m;
    return sq;
  }
  const double norm = std::sqrt(sq);
  if (grad) {
    if (norm > 0.0)
      *grad = m / norm;
    else
      grad->setZero(m.rows(), m.cols());
  }
  return norm;
}

}  // namespace

double lm_loss(const LinearModel& m, const RatingsDataset& ds,
               std::span<const int> batch, const LmConfig& cfg, LmGrad* grad) {
  if (batch.empty()) throw config_error("lm_loss: empty batch");
  double loss = 0.0;
  std::vector<int> touched;
  std::vector<Vec> d_user_rows;
  if (grad) {
    grad->d_encoder.setZero(m.encoder.rows(), m.encoder.cols());
    grad->d_decoder.setZero(m.decoder.rows(), m.decoder.cols());
    grad->d_users.clear();
  }
  DatumGrad dg;
  for (int k : batch) {
    const auto& t = ds.triples.at(static_cast<std::size_t>(k));
    loss += lm_datum_loss(m, ds, t, cfg, grad ? &dg : nullptr);
    if (grad) {
      grad->d_encoder += dg.d_encoder;
      grad->d_decoder += dg.d_decoder;
      auto it = std::find(touched.begin(), touched.end(), t.user);
      if (it == touched.end()) {
        touched.push_back(t.user);
        d_user_rows.push_back(dg.d_user);
      } else {
        d_user_rows[static_cast<std::size_t>(it - touched.begin())] += dg.d_user;
      }
    }
    if (!std::isfinite(loss))
      throw numeric_error("lm_loss: non-finite loss at triple #" + std::to_string(k) +
                          " (user " + std::to_string(t.user) + ", item " +
                          std::to_string(t.item) + ")");
  }

  // Regularizer over the parameters this batch sees: both matrices plus
  // the touched user rows (as one block).
  Mat d_enc_reg, d_dec_reg;
  loss += cfg.lambda2 * frobenius_term(m.encoder, cfg.squared_frobenius,
                                       grad ? &d_enc_reg : nullptr);
  loss += cfg.lambda2 * frobenius_term(m.decoder, cfg.squared_frobenius,
                                       grad ? &d_dec_reg : nullptr);
  if (grad) {
    grad->d_encoder += cfg.lambda2 * d_enc_reg;
    grad->d_decoder += cfg.lambda2 * d_dec_reg;
  }
  if (!grad) {
    std::vector<int> users(batch.size());
    std::size_t n = 0;
    for (int k : batch) users[n++] = ds.triples.at(static_cast<std::size_t>(k)).user;
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    touched = std::move(users);
  }
  double zu_sq = 0.0;
  for (int u : touched) zu_sq += m.users.row(u).squaredNorm();
  if (cfg.squared_frobenius) {
    loss += cfg.lambda2 * zu_sq;
    if (grad)
      for (std::size_t i = 0; i < touched.size(); ++i)
        d_user_rows[i] += cfg.lambda2 * 2.0 * m.users.row(touched[i]).transpose();
  } else {
    const double zu_norm = std::sqrt(zu_sq);
    loss += cfg.lambda2 * zu_norm;
    if (grad && zu_norm > 0.0)
      for (std::size_t i = 0; i < touched.size(); ++i)
        d_user_rows[i] += (cfg.lambda2 / zu_norm) * m.users.row(touched[i]).transpose();
  }
  if (grad)
    for (std::size_t i = 0; i < touched.size(); ++i)
      grad->d_users.emplace_back(touched[i], std::move(d_user_rows[i]));
  return loss;
}

namespace {

double validation_rating_loss(const LinearModel& m, const RatingsDataset& ds,
                              std::span<const int> indices, LossKind kind) {
  if (indices.empty()) return 0.0;
  std::vector<double> losses(indices.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(indices.size()); ++i) {
    const auto& t = ds.triples[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    const Vec z = m.encoder * ds.features.row(t.item).transpose();
    const double r_pred = clamp_unit(sigmoid(m.users.row(t.user).dot(z.transpose())));
    losses[static_cast<std::size_t>(i)] =
        kind == LossKind::kCrossEntropy
            ? -(t.rating * std::log(r_pred) + (1.0 - t.rating) * std::log(1.0 - r_pred))
            : (t.rating - r_pred) * (t.rating - r_pred);
  }
  double sum = 0.0;
  for (double v : losses) sum += v;
  return sum / static_cast<double>(indices.size());
}

}  // namespace

LmTrainResult lm_train(const RatingsDataset& ds, const DatasetSplit& split,
                       const LmConfig& cfg) {
  if (!ds.ratings_in_unit_interval())
    throw config_error("lm_train: ratings must be rescaled to [0,1] first");
  if (cfg.batch_size < 1 || cfg.patience < 1 || cfg.latent_dim < 1)
    throw config_error("lm_train: batch_size, patience and latent_dim must be >= 1");
  if (cfg.reconstruction_loss == LossKind::kCrossEntropy)
    validate_dataset(ds, /*unit_features=*/true);

  LinearModel m;
  m.rating_loss = cfg.rating_loss;
  m.reconstruction_loss = cfg.reconstruction_loss;
  auto init_rng = stream_rng(cfg.seed, "init");
  std::normal_distribution<double> unit(0.0, 1.0);
  const double enc_scale = std::sqrt(1.0 / static_cast<double>(ds.feature_dim));
  const double dec_scale = std::sqrt(1.0 / static_cast<double>(cfg.latent_dim));
  m.encoder.resize(cfg.latent_dim, ds.feature_dim);
  for (Index i = 0; i < m.encoder.size(); ++i) m.encoder.data()[i] = enc_scale * unit(init_rng);
  m.decoder.resize(ds.feature_dim, cfg.latent_dim);
  for (Index i = 0; i < m.decoder.size(); ++i) m.decoder.data()[i] = dec_scale * unit(init_rng);
  m.users.resize(ds.num_users, cfg.latent_dim);
  for (Index i = 0; i < m.users.size(); ++i) m.users.data()[i] = dec_scale * unit(init_rng);

  std::vector<nn::ParamView> params{{m.encoder.data(), m.encoder.size()},
                                    {m.decoder.data(), m.decoder.size()},
                                    {m.users.data(), m.users.size()}};
  auto adam = nn::make_adam(cfg.learning_rate, params);

  Mat d_enc(m.encoder.rows(), m.encoder.cols());
  Mat d_dec(m.decoder.rows(), m.decoder.cols());
  Mat d_users(m.users.rows(), m.users.cols());

  auto batch_rng = stream_rng(cfg.seed, "batching");
  std::vector<int> order(split.train.begin(), split.train.end());
  const auto n_train = order.size();
  if (n_train == 0) throw config_error("lm_train: empty training split");

  LmTrainResult result;
  result.model = m;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<DatumGrad> slots(static_cast<std::size_t>(cfg.batch_size));
  for (auto& s : slots) {
    s.d_encoder.resize(m.encoder.rows(), m.encoder.cols());
    s.d_decoder.resize(m.decoder.rows(), m.decoder.cols());
  }
  std::vector<double> slot_loss(static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    double epoch_loss = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < n_train && finite; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bsz = std::min(static_cast<std::size_t>(cfg.batch_size), n_train - start);
      // Per-item gradients into fixed slots, then a serial reduction, so
      // results do not depend on the thread count.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(bsz); ++i) {
        const auto& t = ds.triples[static_cast<std::size_t>(order[start + static_cast<std::size_t>(i)])];
        slot_loss[static_cast<std::size_t>(i)] =
            lm_datum_loss(m, ds, t, cfg, &slots[static_cast<std::size_t>(i)]);
      }
      d_enc.setZero();
      d_dec.setZero();
      d_users.setZero();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < bsz; ++i) {
        batch_loss += slot_loss[i];
        d_enc += slots[i].d_encoder;
        d_dec += slots[i].d_decoder;
        d_users.row(slots[i].user) += slots[i].d_user.transpose();
      }
      // Regularizer once per step, scaled like the averaged data terms.
      Mat reg_enc, reg_dec;
      batch_loss += cfg.lambda2 * frobenius_term(m.encoder, cfg.squared_frobenius, &reg_enc);
      batch_loss += cfg.lambda2 * frobenius_term(m.decoder, cfg.squared_frobenius, &reg_dec);
      Mat reg_users;
      batch_loss += cfg.lambda2 * frobenius_term(m.users, cfg.squared_frobenius, &reg_users);
      d_enc += cfg.lambda2 * reg_enc;
      d_dec += cfg.lambda2 * reg_dec;
      d_users += cfg.lambda2 * reg_users;
      if (!std::isfinite(batch_loss)) {
        finite = false;
        break;
      }
      const double inv = 1.0 / static_cast<double>(bsz);
      d_enc *= inv;
      d_dec *= inv;
      d_users *= inv;
      std::vector<nn::GradView> grads{{d_enc.data(), d_enc.size()},
                                      {d_dec.data(), d_dec.size()},
                                      {d_users.data(), d_users.size()}};
      adam_step(adam, params, grads);
      epoch_loss += batch_loss;
    }

    if (!finite) {
      result.history.diverged = true;
      break;
    }
    const double val =
        validation_rating_loss(m, ds, split.validation, cfg.rating_loss);
    result.history.epochs.push_back(
        {epoch, epoch_loss / static_cast<double>(n_train), val});
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

void LinearModel::save(const std::filesystem::path& path) const {
  nlohmann::json header{{"d_x", encoder.cols()},
                        {"d_z", encoder.rows()},
                        {"num_users", users.rows()},
                        {"rating_loss", loss_name(rating_loss)},
                        {"reconstruction_loss", loss_name(reconstruction_loss)}};
  std::vector<double> blob;
  blob.reserve(static_cast<std::size_t>(encoder.size() + decoder.size() + users.size()));
  append_matrix(blob, encoder);
  append_matrix(blob, decoder);
  append_matrix(blob, users);
  write_checkpoint(path, "MCNIP-LM-1", header, blob);
}

LinearModel LinearModel::load(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path, "MCNIP-LM-1");
  const auto d_x = ck.header.at("d_x").get<Index>();
  const auto d_z = ck.header.at("d_z").get<Index>();
  const auto m_users = ck.header.at("num_users").get<Index>();
  LinearModel m;
  m.rating_loss = loss_from_name(ck.header.at("rating_loss").get<std::string>());
  m.reconstruction_loss =
      loss_from_name(ck.header.at("reconstruction_loss").get<std::string>());
  std::size_t pos = 0;
  m.encoder = take_matrix(ck.blob, pos, d_z, d_x);
  m.decoder = take_matrix(ck.blob, pos, d_x, d_z);
  m.users = take_matrix(ck.blob, pos, m_users, d_z);
  if (pos != ck.blob.size())
    throw integrity_error(path.string() + ": trailing bytes in parameter blob");
  return m;
}

}  // namespace mcnip
