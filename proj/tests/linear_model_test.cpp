#include "mcnip/linear_model.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "mcnip/errors.hpp"
#include "mcnip/synth.hpp"
#include "test_util.hpp"

using namespace mcnip;

namespace {

LinearModel random_model(Index d_x, Index d_z, Index users, std::mt19937_64& rng,
                         LossKind recon = LossKind::kCrossEntropy) {
  LinearModel m;
  m.encoder = test::random_matrix(d_z, d_x, rng, 0.5);
  m.decoder = test::random_matrix(d_x, d_z, rng, 0.5);
  m.users = test::random_matrix(users, d_z, rng, 0.5);
  m.reconstruction_loss = recon;
  return m;
}

RatingsDataset random_dataset(Index users, Index items, Index d_x,
                              std::mt19937_64& rng) {
  RatingsDataset ds;
  ds.num_users = static_cast<int>(users);
  ds.num_items = static_cast<int>(items);
  ds.feature_dim = static_cast<int>(d_x);
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  ds.features.resize(items, d_x);
  for (Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = u01(rng);
  for (Index u = 0; u < users; ++u)
    for (Index i = 0; i < items; ++i)
      ds.triples.push_back({static_cast<int>(u), static_cast<int>(i), u01(rng)});
  return ds;
}

}  // namespace

TEST_CASE("lm_encode: identity matrix, linearity, independent product") {
  std::mt19937_64 rng(3);
  LinearModel m = random_model(4, 4, 1, rng);
  m.encoder = Mat::Identity(4, 4);
  const Vec x = test::random_vector(4, rng);
  CHECK((lm_encode(m, x) - x).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(lm_encode(m, Vec::Zero(4)).lpNorm<Eigen::Infinity>() == 0.0);

  m = random_model(6, 3, 1, rng);
  const Vec x2 = test::random_vector(6, rng);
  Vec by_hand = Vec::Zero(3);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 6; ++c) by_hand[r] += m.encoder(r, c) * x2[c];
  CHECK((lm_encode(m, x2) - by_hand).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK_THROWS_AS(lm_encode(m, Vec::Zero(5)), Error);
}

TEST_CASE("lm_decode: sigmoid at zero, identity in squared mode") {
  std::mt19937_64 rng(4);
  LinearModel m = random_model(3, 3, 1, rng, LossKind::kCrossEntropy);
  const Vec half = lm_decode(m, Vec::Zero(3));
  for (Index j = 0; j < 3; ++j) CHECK(half[j] == doctest::Approx(0.5));

  m.reconstruction_loss = LossKind::kSquared;
  m.decoder = Mat::Identity(3, 3);
  const Vec z = test::random_vector(3, rng);
  CHECK((lm_decode(m, z) - z).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("lm_decode: pseudo-inverse decoder recovers in-range inputs") {
  std::mt19937_64 rng(5);
  LinearModel m = random_model(8, 3, 1, rng, LossKind::kSquared);
  m.decoder = m.encoder.completeOrthogonalDecomposition().pseudoInverse();
  // x in the row space of the encoder round-trips.
  const Vec x = m.decoder * test::random_vector(3, rng);
  CHECK((lm_decode(m, lm_encode(m, x)) - x).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("lm_predict_rating: closed-form sigmoid values") {
  std::mt19937_64 rng(6);
  LinearModel m = random_model(4, 2, 3, rng);
  m.users.row(0) << 1.0, 0.0;

  Vec z(2);
  z << 0.0, 5.0;  // orthogonal to user 0
  CHECK(lm_predict_rating(m, 0, z) == doctest::Approx(0.5));

  z << std::log(3.0), 0.0;  // dot = ln 3 -> 0.75
  CHECK(lm_predict_rating(m, 0, z) == doctest::Approx(0.75).epsilon(1e-12));

  m.users.row(0) << 2.0, 0.0;  // ||z||^2 = 4 with z = z_u
  const Vec zu = m.users.row(0).transpose();
  CHECK(lm_predict_rating(m, 0, zu) ==
        doctest::Approx(0.982013790037908).epsilon(1e-9));
  CHECK_THROWS_AS(lm_predict_rating(m, 99, z), Error);
}

TEST_CASE("lm_loss: degenerate weights and closed-form single datum") {
  std::mt19937_64 rng(7);
  RatingsDataset ds = random_dataset(2, 2, 3, rng);
  LinearModel m = random_model(3, 2, 2, rng);
  LmConfig cfg;
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.0;

  // Perfect r = 1 prediction: huge aligned embeddings push sigmoid to the
  // clamp, so the cross-entropy is -log(1 - 1e-7), within 1e-6 of zero.
  ds.triples[0].rating = 1.0;
  m.users.row(0) = Vec::Constant(2, 50.0).transpose();
  m.encoder = Mat::Ones(2, 3);
  const std::vector<int> batch{0};
  CHECK(lm_loss(m, ds, batch, cfg) == doctest::Approx(0.0).epsilon(1e-6));

  // r = 1 predicted at 0.5 -> ln 2.
  m.users.row(0).setZero();
  CHECK(lm_loss(m, ds, batch, cfg) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("lm_loss: gradients match central finite differences") {
  std::mt19937_64 rng(8);
  LmConfig cfg;
  cfg.lambda1 = 0.7;
  cfg.lambda2 = 0.2;
  for (int trial = 0; trial < 6; ++trial) {
    const Index d_x = 3 + static_cast<Index>(rng() % 8);   // <= 10
    const Index d_z = 1 + static_cast<Index>(rng() % 4);   // <= 4
    const Index users = 2 + static_cast<Index>(rng() % 3);
    const Index items = 2 + static_cast<Index>(rng() % 3);
    cfg.rating_loss = trial % 2 ? LossKind::kSquared : LossKind::kCrossEntropy;
    cfg.reconstruction_loss = trial % 3 ? LossKind::kCrossEntropy : LossKind::kSquared;
    cfg.squared_frobenius = trial == 4;
    RatingsDataset ds = random_dataset(users, items, d_x, rng);
    LinearModel m = random_model(d_x, d_z, users, rng, cfg.reconstruction_loss);
    std::vector<int> batch;
    for (int k = 0; k < static_cast<int>(std::min<std::size_t>(8, ds.triples.size())); ++k)
      batch.push_back(k);

    LmGrad g;
    lm_loss(m, ds, batch, cfg, &g);
    auto loss = [&]() { return lm_loss(m, ds, batch, cfg); };
    CHECK(test::fd_max_rel_error(m.encoder.data(), m.encoder.size(),
                                 g.d_encoder.data(), loss) < 1e-4);
    CHECK(test::fd_max_rel_error(m.decoder.data(), m.decoder.size(),
                                 g.d_decoder.data(), loss) < 1e-4);
    for (const auto& [user, d_row] : g.d_users) {
      Vec row = m.users.row(user).transpose();
      auto row_loss = [&]() {
        return lm_loss(m, ds, batch, cfg);
      };
      // Perturb the live row through the model.
      for (Index j = 0; j < row.size(); ++j) {
        const double saved = m.users(user, j);
        const double h = 1e-5;
        m.users(user, j) = saved + h;
        const double up = row_loss();
        m.users(user, j) = saved - h;
        const double down = row_loss();
        m.users(user, j) = saved;
        const double fd = (up - down) / (2 * h);
        if (std::abs(fd) > 1e-8)
          CHECK(std::abs(d_row[j] - fd) / std::abs(fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("lm_loss: regularizer uses plain Frobenius norms as configured") {
  std::mt19937_64 rng(9);
  RatingsDataset ds = random_dataset(1, 1, 2, rng);
  ds.triples = {{0, 0, 0.5}};
  LinearModel m = random_model(2, 2, 1, rng);
  LmConfig cfg;
  cfg.lambda1 = 0.0;
  std::vector<int> batch{0};

  cfg.lambda2 = 0.0;
  const double base = lm_loss(m, ds, batch, cfg);
  cfg.lambda2 = 1.0;
  const double with_reg = lm_loss(m, ds, batch, cfg);
  const double expected =
      m.encoder.norm() + m.decoder.norm() + m.users.row(0).norm();
  CHECK(with_reg - base == doctest::Approx(expected).epsilon(1e-12));

  cfg.squared_frobenius = true;
  const double with_sq = lm_loss(m, ds, batch, cfg);
  const double expected_sq = m.encoder.squaredNorm() + m.decoder.squaredNorm() +
                             m.users.row(0).squaredNorm();
  CHECK(with_sq - base == doctest::Approx(expected_sq).epsilon(1e-12));
}

TEST_CASE("lm_train: loss decreases, lr=0 freezes parameters, beats global mean") {
  SyntheticSpec spec;
  spec.num_users = 200;
  spec.num_groups = 2;
  spec.items_per_group = 20;
  spec.ratings_per_user = 10;
  spec.seed = 11;
  const auto sd = generate_synthetic(spec);
  const auto& ds = sd.base;
  const auto split = split_dataset(ds, {0.8, 0.1, 0.1}, 5);

  LmConfig cfg;
  cfg.latent_dim = 8;
  cfg.max_epochs = 25;
  cfg.patience = 25;
  cfg.seed = 17;
  const auto result = lm_train(ds, split, cfg);
  REQUIRE(!result.history.epochs.empty());
  CHECK(result.history.epochs.back().train_loss <
        result.history.epochs.front().train_loss);
  CHECK_FALSE(result.history.diverged);

  // lr = 0: parameters identical to a fresh initialization.
  LmConfig frozen = cfg;
  frozen.learning_rate = 0.0;
  frozen.max_epochs = 2;
  const auto r0 = lm_train(ds, split, frozen);
  const auto r1 = lm_train(ds, split, frozen);
  CHECK(r0.model.encoder == r1.model.encoder);
  CHECK(r0.model.users == r1.model.users);

  // Held-out rating RMSE beats the global-mean predictor.
  double mean = 0.0;
  for (int k : split.train) mean += ds.triples[static_cast<std::size_t>(k)].rating;
  mean /= static_cast<double>(split.train.size());
  double se_model = 0.0, se_mean = 0.0;
  for (int k : split.test) {
    const auto& t = ds.triples[static_cast<std::size_t>(k)];
    const Vec z = lm_encode(result.model, ds.features.row(t.item).transpose());
    const double pred = lm_predict_rating(result.model, t.user, z);
    se_model += (pred - t.rating) * (pred - t.rating);
    se_mean += (mean - t.rating) * (mean - t.rating);
  }
  CHECK(se_model < se_mean);
}

TEST_CASE("LinearModel: checkpoint round-trip is bit-exact") {
  std::mt19937_64 rng(10);
  const LinearModel m = random_model(5, 3, 4, rng);
  const auto dir = test::scratch_dir("lm_ckpt");
  m.save(dir / "lm.bin");
  const auto back = LinearModel::load(dir / "lm.bin");
  CHECK(back.encoder == m.encoder);
  CHECK(back.decoder == m.decoder);
  CHECK(back.users == m.users);
  CHECK(back.reconstruction_loss == m.reconstruction_loss);
}
