#include "mcnip/vae_model.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "mcnip/errors.hpp"
#include "mcnip/synth.hpp"
#include "test_util.hpp"

using namespace mcnip;

namespace {

VaeConfig small_cfg(int d_z = 2, std::vector<Index> hidden = {5}) {
  VaeConfig cfg;
  cfg.latent_dim = d_z;
  cfg.hidden_dims = std::move(hidden);
  return cfg;
}

CollabVae random_vae(Index d_x, Index users, const VaeConfig& cfg, std::uint64_t seed) {
  VaeConfig c = cfg;
  c.seed = seed;
  return init_vae(d_x, users, c);
}

// Simpson's rule for the 1-D KL integral between N(mu, sigma^2) and N(0,1).
double kl_by_quadrature(double mu, double log_sigma) {
  const double sigma = std::exp(log_sigma);
  const double lo = mu - 14.0 * std::max(sigma, 1.0);
  const double hi = mu + 14.0 * std::max(sigma, 1.0);
  const int n = 20000;  // even
  const double h = (hi - lo) / n;
  auto integrand = [&](double z) {
    const double logq = -0.5 * std::log(2 * M_PI) - log_sigma -
                        0.5 * (z - mu) * (z - mu) / (sigma * sigma);
    const double logp = -0.5 * std::log(2 * M_PI) - 0.5 * z * z;
    return std::exp(logq) * (logq - logp);
  };
  double acc = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) acc += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Rejects instances where a relu unit sits within `margin` of its kink for
// any of the frozen noise draws, so central differences stay one-sided.
bool elbo_kink_safe(const CollabVae& m, const Vec& x, const Mat& eps,
                    double margin = 1e-3) {
  auto net_safe = [&](const nn::Mlp& net, const Vec& in) {
    nn::ForwardCache cache;
    nn::forward(net, in, &cache);
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      if (net.layers[i].act == nn::Activation::kRelu)
        for (Index j = 0; j < cache.pre[i].size(); ++j)
          if (std::abs(cache.pre[i][j]) < margin) return false;
    return true;
  };
  if (!net_safe(m.trunk, x)) return false;
  auto [mu, ls] = vae_encode(m, x);
  for (Index l = 0; l < eps.rows(); ++l) {
    const Vec z = reparameterize(mu, ls, eps.row(l).transpose());
    if (!net_safe(m.decoder, z)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("vae_encode: zero-weight heads give the unit Gaussian, deterministically") {
  auto m = random_vae(4, 1, small_cfg(), 21);
  for (auto* head : {&m.head_mu, &m.head_log_sigma}) {
    head->layers[0].weight.setZero();
    head->layers[0].bias.setZero();
  }
  std::mt19937_64 rng(2);
  const Vec x = test::random_vector(4, rng);
  auto [mu, ls] = vae_encode(m, x);
  CHECK(mu.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(ls.lpNorm<Eigen::Infinity>() == 0.0);

  auto again = vae_encode(m, x);
  CHECK(again.first == mu);
  CHECK(again.second == ls);
}

TEST_CASE("vae_encode: matches an independent straight-line evaluation") {
  auto m = random_vae(6, 1, small_cfg(3, {7}), 33);
  std::mt19937_64 rng(5);
  const Vec x = test::random_vector(6, rng);
  // trunk: relu(W x + b); heads affine.
  Vec h(7);
  for (Index r = 0; r < 7; ++r) {
    double acc = m.trunk.layers[0].bias[r];
    for (Index c = 0; c < 6; ++c) acc += m.trunk.layers[0].weight(r, c) * x[c];
    h[r] = acc > 0 ? acc : 0.0;
  }
  Vec mu_hand(3), ls_hand(3);
  for (Index r = 0; r < 3; ++r) {
    double a = m.head_mu.layers[0].bias[r];
    double b = m.head_log_sigma.layers[0].bias[r];
    for (Index c = 0; c < 7; ++c) {
      a += m.head_mu.layers[0].weight(r, c) * h[c];
      b += m.head_log_sigma.layers[0].weight(r, c) * h[c];
    }
    mu_hand[r] = a;
    ls_hand[r] = std::clamp(b, -6.0, 6.0);
  }
  auto [mu, ls] = vae_encode(m, x);
  CHECK((mu - mu_hand).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((ls - ls_hand).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("reparameterize: mean sample, unit scale, Monte-Carlo mean") {
  std::mt19937_64 rng(6);
  const Vec mu = test::random_vector(3, rng);
  const Vec ls = test::random_vector(3, rng, 0.3);
  CHECK(reparameterize(mu, ls, Vec::Zero(3)) == mu);

  const Vec e = test::random_vector(3, rng);
  CHECK((reparameterize(mu, Vec::Zero(3), e) - (mu + e)).lpNorm<Eigen::Infinity>() <
        1e-15);

  const int n = 100000;
  Vec acc = Vec::Zero(3);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Vec draw(3);
    for (Index j = 0; j < 3; ++j) draw[j] = unit(rng);
    acc += reparameterize(mu, ls, draw);
  }
  acc /= n;
  for (Index j = 0; j < 3; ++j) {
    const double se = std::exp(ls[j]) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc[j] - mu[j]) < 3.0 * se);
  }
}

TEST_CASE("kl_to_standard_normal: closed-form anchors") {
  CHECK(kl_to_standard_normal(Vec::Zero(3), Vec::Zero(3)) == 0.0);
  CHECK(kl_to_standard_normal(Vec::Constant(1, 1.0), Vec::Zero(1)) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl_to_standard_normal: non-negative, zero only at the prior") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const Vec mu = test::random_vector(2, rng, 2.0);
    const Vec ls = test::random_vector(2, rng, 1.5);
    const double kl = kl_to_standard_normal(mu, ls);
    CHECK(kl >= 0.0);
    if (mu.lpNorm<Eigen::Infinity>() > 1e-6 || ls.lpNorm<Eigen::Infinity>() > 1e-6)
      CHECK(kl > 0.0);
  }
}

TEST_CASE("kl_to_standard_normal: agrees with 1-D quadrature") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> mu_d(-2.0, 2.0), ls_d(-1.2, 1.2);
  for (int i = 0; i < 20; ++i) {
    const double mu = mu_d(rng), ls = ls_d(rng);
    const double closed = kl_to_standard_normal(Vec::Constant(1, mu), Vec::Constant(1, ls));
    CHECK(closed == doctest::Approx(kl_by_quadrature(mu, ls)).epsilon(1e-6));
  }
}

TEST_CASE("vae_elbo_datum: anchor values") {
  VaeConfig cfg = small_cfg();
  auto m = random_vae(4, 2, cfg, 9);
  // Zero-weight heads: posterior is the prior, so the KL term vanishes.
  for (auto* head : {&m.head_mu, &m.head_log_sigma}) {
    head->layers[0].weight.setZero();
    head->layers[0].bias.setZero();
  }
  std::mt19937_64 rng(3);
  const Vec x = (test::random_vector(4, rng, 0.2).array() + 0.5).cwiseMin(0.99).cwiseMax(0.01);
  const RatingTriple t{0, 0, 1.0};
  const Mat eps = Mat::Zero(1, 2);
  const auto terms = vae_elbo_datum(m, t, x, eps, cfg);
  CHECK(terms.kl == 0.0);

  // r = 1 with sigmoid(z_u . z) = 0.5 -> rating log-likelihood -ln 2.
  // eps = 0 and zero mu head give z = 0, so the dot product is 0.
  CHECK(terms.rating_ll == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("vae_elbo_datum: gradients match finite differences with frozen eps") {
  std::mt19937_64 rng(10);
  VaeConfig cfg = small_cfg(2, {5});
  cfg.kl_weight = 0.8;
  cfg.rating_weight = 1.3;
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  int done = 0;
  while (done < 4) {
    cfg.mc_samples = done % 2 ? 2 : 1;
    cfg.rating_loss = done % 2 ? LossKind::kSquared : LossKind::kCrossEntropy;
    cfg.reconstruction_loss = done < 2 ? LossKind::kCrossEntropy : LossKind::kSquared;
    auto m = random_vae(6, 3, cfg, rng());
    Vec x(6);
    for (Index j = 0; j < 6; ++j) x[j] = u01(rng);
    Mat eps(cfg.mc_samples, 2);
    for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = test::random_vector(1, rng)[0];
    if (!elbo_kink_safe(m, x, eps)) continue;
    ++done;
    const RatingTriple t{1, 0, u01(rng)};

    VaeGrad g;
    g.resize_like(m);
    vae_elbo_datum(m, t, x, eps, cfg, &g);
    auto value = [&]() {
      return vae_elbo_datum(m, t, x, eps, cfg).value(cfg.rating_weight, cfg.kl_weight);
    };
    auto check_net = [&](nn::Mlp& net, const nn::MlpGrad& ng) {
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(test::fd_max_rel_error(net.layers[l].weight.data(),
                                     net.layers[l].weight.size(),
                                     ng.d_weight[l].data(), value) < 1e-4);
        CHECK(test::fd_max_rel_error(net.layers[l].bias.data(),
                                     net.layers[l].bias.size(),
                                     ng.d_bias[l].data(), value) < 1e-4);
      }
    };
    check_net(m.trunk, g.trunk);
    check_net(m.head_mu, g.head_mu);
    check_net(m.head_log_sigma, g.head_log_sigma);
    check_net(m.decoder, g.decoder);
    // User embedding row.
    Vec d_user_fd(2);
    for (Index j = 0; j < 2; ++j) {
      const double saved = m.users(t.user, j);
      const double h = 1e-5;
      m.users(t.user, j) = saved + h;
      const double up = value();
      m.users(t.user, j) = saved - h;
      const double down = value();
      m.users(t.user, j) = saved;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) > 1e-8)
        CHECK(std::abs(g.d_user[j] - fd) / std::abs(fd) < 1e-4);
    }
  }
}

TEST_CASE("vae_elbo_datum: L=1 and L=10 estimators share their mean") {
  VaeConfig cfg = small_cfg(2, {4});
  auto m = random_vae(5, 2, cfg, 55);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u01(0.1, 0.9);
  Vec x(5);
  for (Index j = 0; j < 5; ++j) x[j] = u01(rng);
  const RatingTriple t{0, 0, 0.8};
  std::normal_distribution<double> unit(0.0, 1.0);

  auto estimate = [&](int L, int reps, double& mean, double& se) {
    std::vector<double> vals(static_cast<std::size_t>(reps));
    Mat eps(L, 2);
    for (int r = 0; r < reps; ++r) {
      for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = unit(rng);
      vals[static_cast<std::size_t>(r)] = vae_elbo_datum(m, t, x, eps, cfg).value();
    }
    mean = 0.0;
    for (double v : vals) mean += v;
    mean /= reps;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    se = std::sqrt(var / reps / reps);
  };
  double m1, se1, m10, se10;
  estimate(1, 10000, m1, se1);
  estimate(10, 10000, m10, se10);
  CHECK(std::abs(m1 - m10) < 3.0 * std::sqrt(se1 * se1 + se10 * se10));
}

TEST_CASE("vae_generate: zero decoder weights give all-0.5 output") {
  VaeConfig cfg = small_cfg();
  auto m = random_vae(4, 1, cfg, 60);
  for (auto& l : m.decoder.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Vec out = vae_generate(m, Vec::Ones(2));
  for (Index j = 0; j < out.size(); ++j) CHECK(out[j] == doctest::Approx(0.5));
  CHECK_THROWS_AS(vae_generate(m, Vec::Ones(3)), Error);
}

TEST_CASE("vae_train: loss decreases, reconstruction beats the 0.5 predictor, deterministic") {
  SyntheticSpec spec;
  spec.num_users = 120;
  spec.num_groups = 2;
  spec.items_per_group = 10;
  spec.ratings_per_user = 10;
  spec.seed = 3;
  const auto sd = generate_synthetic(spec);
  const auto& ds = sd.base;
  const auto split = split_dataset(ds, {0.8, 0.1, 0.1}, 2);

  VaeConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dims = {8};
  cfg.max_epochs = 15;
  cfg.patience = 15;
  cfg.kl_weight = 0.0;  // autoencoder-style run for the baseline check
  cfg.seed = 5;
  const auto result = vae_train(ds, split, cfg);
  REQUIRE(result.history.best_epoch > 0);
  const auto& epochs = result.history.epochs;
  CHECK(epochs[static_cast<std::size_t>(result.history.best_epoch - 1)].train_loss <
        epochs.front().train_loss);

  // Mean reconstruction cross-entropy against the all-0.5 predictor:
  // -sum_j [x log .5 + (1-x) log .5] = d_x ln 2.
  double recon = 0.0;
  for (Index i = 0; i < ds.features.rows(); ++i) {
    const Vec x = ds.features.row(i).transpose();
    const Vec xr = vae_generate(result.model, result.model.encode_mean(x));
    for (Index j = 0; j < x.size(); ++j) {
      const double p = std::clamp(xr[j], 1e-7, 1.0 - 1e-7);
      recon -= x[j] * std::log(p) + (1.0 - x[j]) * std::log(1.0 - p);
    }
  }
  recon /= static_cast<double>(ds.features.rows());
  CHECK(recon < ds.feature_dim * std::log(2.0));

  // decode(encode-mean) RMSE beats the all-0.5 predictor's RMSE.
  double se_model = 0.0, se_half = 0.0;
  for (Index i = 0; i < ds.features.rows(); ++i) {
    const Vec x = ds.features.row(i).transpose();
    const Vec xr = vae_generate(result.model, result.model.encode_mean(x));
    se_model += (x - xr).squaredNorm();
    se_half += (x.array() - 0.5).matrix().squaredNorm();
  }
  CHECK(se_model < se_half);

  const auto rerun = vae_train(ds, split, cfg);
  REQUIRE(rerun.history.epochs.size() == epochs.size());
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    CHECK(rerun.history.epochs[e].train_loss == epochs[e].train_loss);
    CHECK(rerun.history.epochs[e].val_rating_loss == epochs[e].val_rating_loss);
  }
}

TEST_CASE("CollabVae: checkpoint round-trip is bit-exact") {
  VaeConfig cfg = small_cfg(3, {6});
  auto m = random_vae(5, 4, cfg, 77);
  const auto dir = test::scratch_dir("vae_ckpt");
  m.save(dir / "vae.bin");
  const auto back = CollabVae::load(dir / "vae.bin");
  CHECK(back.users == m.users);
  CHECK(back.trunk.layers[0].weight == m.trunk.layers[0].weight);
  CHECK(back.head_mu.layers[0].weight == m.head_mu.layers[0].weight);
  CHECK(back.head_log_sigma.layers[0].bias == m.head_log_sigma.layers[0].bias);
  CHECK(back.decoder.layers.back().weight == m.decoder.layers.back().weight);
  CHECK(back.decoder.layers.back().act == m.decoder.layers.back().act);
}
