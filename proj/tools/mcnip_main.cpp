#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "mcnip/checkpoint.hpp"
#include "mcnip/coverage.hpp"
#include "mcnip/dataset.hpp"
#include "mcnip/errors.hpp"
#include "mcnip/eval.hpp"
#include "mcnip/linear_model.hpp"
#include "mcnip/pipeline.hpp"
#include "mcnip/rng.hpp"
#include "mcnip/sampler.hpp"
#include "mcnip/synth.hpp"
#include "mcnip/vae_model.hpp"

namespace fs = std::filesystem;
using namespace mcnip;

namespace {

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw missing_input_error("missing input: " + p.string());
}

Mat load_matrix_csv(const fs::path& path) {
  require_file(path);
  std::ifstream in(path);
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ss, field, ',')) {
      if (first) {
        first = false;
        continue;  // id column
      }
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw parse_error(path.string(), line_no, "expected a number, got '" + field + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw parse_error(path.string(), 1, "no data rows");
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw parse_error(path.string(), static_cast<long>(i) + 2, "ragged row");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

void write_matrix_csv(const Mat& m, const fs::path& path, const std::string& id_col,
                      const std::string& meta) {
  std::ofstream out(path);
  if (!out) throw missing_input_error("cannot write " + path.string());
  if (!meta.empty()) out << "# " << meta << '\n';
  out << id_col;
  for (Index j = 0; j < m.cols(); ++j) out << ",f" << j;
  out << '\n';
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    out << i;
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", m(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

// Effective-configuration hash: every stage embeds it in its outputs so
// reruns with the same configuration are traceable.
std::string app_config_hash(const CLI::App& app) {
  return to_hex(fnv1a64(app.config_to_str(true, false)));
}

RatingsDataset load_and_rescale(const fs::path& data_dir, double rating_min,
                                double rating_max) {
  require_file(data_dir / "ratings.csv");
  require_file(data_dir / "features.csv");
  RatingsDataset ds = load_dataset(data_dir / "ratings.csv", data_dir / "features.csv");
  if (rating_max > rating_min) ds.rating_scale = {rating_min, rating_max};
  return rescale_ratings(ds);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct StageCommon {
  std::string out_dir = "out";
  std::uint64_t seed = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCNIP pipeline: learn a shared user/item latent space, sample "
               "candidate items, select K novel items by greedy weighted maximum "
               "coverage, decode and evaluate them"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML-like config file; command-line flags override it");
  app.set_version_flag("--version", std::string(kArtifactVersion));
  int threads = 0;
  app.add_option("--threads", threads, "Cap worker threads (0 = hardware default)");

  // --- synth ---------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic benchmark dataset");
  SyntheticSpec spec;
  StageCommon synth_common;
  synth_cmd->add_option("--users", spec.num_users, "Number of users")->capture_default_str();
  synth_cmd->add_option("--groups", spec.num_groups, "Number of user groups")->capture_default_str();
  synth_cmd->add_option("--items-per-group", spec.items_per_group, "Observed items per group")->capture_default_str();
  synth_cmd->add_option("--feature-dim", spec.feature_dim, "Item feature dimension")->capture_default_str();
  synth_cmd->add_option("--item-spread", spec.item_spread, "Std of the item cloud around each ideal")->capture_default_str();
  synth_cmd->add_option("--rating-noise", spec.rating_noise, "Std of same-group rating noise")->capture_default_str();
  synth_cmd->add_option("--ratings-per-user", spec.ratings_per_user, "Ratings per user")->capture_default_str();
  synth_cmd->add_option("--min-separation", spec.min_separation_coef, "Ideal separation coefficient (times sqrt(d))")->capture_default_str();
  synth_cmd->add_option("--seed", synth_common.seed, "Root seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_common.out_dir, "Output directory")->capture_default_str();

  // --- train ---------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train the linear model or the collaborative VAE");
  StageCommon train_common;
  std::string train_data = "out";
  std::string model_kind = "vae";
  LmConfig lm_cfg;
  VaeConfig vae_cfg;
  SplitFractions fractions;
  double rating_min = 0.0, rating_max = 0.0;
  int latent_dim = 8;
  std::vector<Index> hidden{14};
  double lambda1 = 1.0, lambda2 = 0.01, learning_rate = 1e-3;
  int batch_size = 64, max_epochs = 200, patience = 5, mc_samples = 1;
  double kl_weight = 1.0, rating_weight = 1.0;
  std::string rating_loss = "cross_entropy", recon_loss = "cross_entropy";
  bool squared_frobenius = false;
  train_cmd->add_option("--data", train_data, "Dataset directory (ratings.csv + features.csv)")->capture_default_str();
  train_cmd->add_option("--model", model_kind, "lm | vae")->capture_default_str();
  train_cmd->add_option("--latent", latent_dim, "Latent dimension d_z")->capture_default_str();
  train_cmd->add_option("--hidden", hidden, "VAE hidden layer sizes")->capture_default_str();
  train_cmd->add_option("--lambda1", lambda1, "Reconstruction weight (lm)")->capture_default_str();
  train_cmd->add_option("--lambda2", lambda2, "Regularizer weight (lm)")->capture_default_str();
  train_cmd->add_option("--lr", learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--max-epochs", max_epochs, "Epoch cap")->capture_default_str();
  train_cmd->add_option("--patience", patience, "Early-stopping patience (epochs)")->capture_default_str();
  train_cmd->add_option("--mc-samples", mc_samples, "SGVB samples per datum (vae)")->capture_default_str();
  train_cmd->add_option("--kl-weight", kl_weight, "KL term weight (vae)")->capture_default_str();
  train_cmd->add_option("--rating-weight", rating_weight, "Rating term weight (vae)")->capture_default_str();
  train_cmd->add_option("--rating-loss", rating_loss, "cross_entropy | squared")->capture_default_str();
  train_cmd->add_option("--recon-loss", recon_loss, "cross_entropy | squared")->capture_default_str();
  train_cmd->add_flag("--squared-frobenius", squared_frobenius, "Square the Frobenius regularizer (lm)");
  train_cmd->add_option("--train-frac", fractions.train, "Training fraction")->capture_default_str();
  train_cmd->add_option("--val-frac", fractions.validation, "Validation fraction")->capture_default_str();
  train_cmd->add_option("--test-frac", fractions.test, "Test fraction")->capture_default_str();
  train_cmd->add_option("--rating-min", rating_min, "Declared original rating scale minimum");
  train_cmd->add_option("--rating-max", rating_max, "Declared original rating scale maximum");
  train_cmd->add_option("--seed", train_common.seed, "Root seed")->capture_default_str();
  train_cmd->add_option("--out", train_common.out_dir, "Output directory")->capture_default_str();

  // --- sample --------------------------------------------------------
  auto* sample_cmd = app.add_subcommand("sample", "Discretize the latent space into candidate items");
  StageCommon sample_common;
  std::string sample_ckpt = "out/vae_checkpoint.bin";
  std::string sample_data = "out";
  std::string sample_method = "gmm";
  Index candidate_count = 200000;
  int gmm_components = 0;
  double gamma = 1.0;
  sample_cmd->add_option("--checkpoint", sample_ckpt, "Model checkpoint")->capture_default_str();
  sample_cmd->add_option("--data", sample_data, "Dataset directory")->capture_default_str();
  sample_cmd->add_option("--method", sample_method, "gmm | prior | rating_weighted")->capture_default_str();
  sample_cmd->add_option("--count", candidate_count, "Number of candidates T")->capture_default_str();
  sample_cmd->add_option("--components", gmm_components, "GMM components (0 = min(10, N))")->capture_default_str();
  sample_cmd->add_option("--gamma", gamma, "Rating-weighted inverse temperature")->capture_default_str();
  sample_cmd->add_option("--seed", sample_common.seed, "Root seed")->capture_default_str();
  sample_cmd->add_option("--out", sample_common.out_dir, "Output directory")->capture_default_str();

  // --- cover ---------------------------------------------------------
  auto* cover_cmd = app.add_subcommand("cover", "Greedy maximum-coverage selection of K novel items");
  StageCommon cover_common;
  std::string cover_ckpt = "out/vae_checkpoint.bin";
  std::string cover_cands = "out";
  double tau = 0.7;
  int top_k = 4;
  std::size_t budget_mb = 1024;
  cover_cmd->add_option("--checkpoint", cover_ckpt, "Model checkpoint")->capture_default_str();
  cover_cmd->add_option("--candidates", cover_cands, "Directory holding candidates.csv + candidates_meta.json")->capture_default_str();
  cover_cmd->add_option("--tau", tau, "Coverage threshold")->capture_default_str();
  cover_cmd->add_option("--K", top_k, "Items to select")->capture_default_str();
  cover_cmd->add_option("--memory-budget-mb", budget_mb, "Rating-matrix memory budget")->capture_default_str();
  cover_cmd->add_option("--seed", cover_common.seed, "Recorded seed")->capture_default_str();
  cover_cmd->add_option("--out", cover_common.out_dir, "Output directory")->capture_default_str();

  // --- eval ----------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a coverage solution against ground truth");
  StageCommon eval_common;
  std::string eval_data = "out";
  std::string eval_ckpt = "out/vae_checkpoint.bin";
  std::string eval_solution = "out/solution.json";
  std::string eval_generated = "out/generated_items.csv";
  std::string eval_model_name = "vae";
  SplitFractions eval_fractions;
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->capture_default_str();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->capture_default_str();
  eval_cmd->add_option("--solution", eval_solution, "Coverage solution JSON")->capture_default_str();
  eval_cmd->add_option("--generated", eval_generated, "Decoded items CSV")->capture_default_str();
  eval_cmd->add_option("--model-name", eval_model_name, "Model label for the ledger")->capture_default_str();
  eval_cmd->add_option("--train-frac", eval_fractions.train)->capture_default_str();
  eval_cmd->add_option("--val-frac", eval_fractions.validation)->capture_default_str();
  eval_cmd->add_option("--test-frac", eval_fractions.test)->capture_default_str();
  eval_cmd->add_option("--seed", eval_common.seed, "Split seed (match training)")->capture_default_str();
  eval_cmd->add_option("--out", eval_common.out_dir, "Output directory")->capture_default_str();

  // --- pipeline ------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "synth -> train -> sample -> cover -> eval in one run");
  PipelineConfig pcfg;
  StageCommon pipe_common;
  int repeats = 1;
  int pipe_latent = 8;
  std::vector<Index> pipe_hidden{14};
  double pipe_lr = 1e-3;
  int pipe_batch = 64, pipe_epochs = 200, pipe_patience = 5;
  pipe_cmd->add_option("--users", pcfg.synth.num_users)->capture_default_str();
  pipe_cmd->add_option("--groups", pcfg.synth.num_groups)->capture_default_str();
  pipe_cmd->add_option("--items-per-group", pcfg.synth.items_per_group)->capture_default_str();
  pipe_cmd->add_option("--feature-dim", pcfg.synth.feature_dim)->capture_default_str();
  pipe_cmd->add_option("--item-spread", pcfg.synth.item_spread)->capture_default_str();
  pipe_cmd->add_option("--rating-noise", pcfg.synth.rating_noise)->capture_default_str();
  pipe_cmd->add_option("--ratings-per-user", pcfg.synth.ratings_per_user)->capture_default_str();
  pipe_cmd->add_option("--model", pcfg.model, "lm | vae")->capture_default_str();
  pipe_cmd->add_option("--latent", pipe_latent)->capture_default_str();
  pipe_cmd->add_option("--hidden", pipe_hidden)->capture_default_str();
  pipe_cmd->add_option("--lambda1", pcfg.lm.lambda1)->capture_default_str();
  pipe_cmd->add_option("--lambda2", pcfg.lm.lambda2)->capture_default_str();
  pipe_cmd->add_option("--lr", pipe_lr)->capture_default_str();
  pipe_cmd->add_option("--batch-size", pipe_batch)->capture_default_str();
  pipe_cmd->add_option("--max-epochs", pipe_epochs)->capture_default_str();
  pipe_cmd->add_option("--patience", pipe_patience)->capture_default_str();
  pipe_cmd->add_option("--kl-weight", pcfg.vae.kl_weight)->capture_default_str();
  pipe_cmd->add_option("--rating-weight", pcfg.vae.rating_weight)->capture_default_str();
  pipe_cmd->add_option("--mc-samples", pcfg.vae.mc_samples)->capture_default_str();
  pipe_cmd->add_option("--method", pcfg.sample_method, "gmm | prior | rating_weighted")->capture_default_str();
  pipe_cmd->add_option("--candidates", pcfg.candidate_count, "Candidate count T")->capture_default_str();
  pipe_cmd->add_option("--components", pcfg.gmm_components)->capture_default_str();
  pipe_cmd->add_option("--gamma", pcfg.gamma)->capture_default_str();
  pipe_cmd->add_option("--tau", pcfg.tau)->capture_default_str();
  pipe_cmd->add_option("--K", pcfg.k)->capture_default_str();
  std::size_t pipe_budget_mb = 1024;
  pipe_cmd->add_option("--memory-budget-mb", pipe_budget_mb)->capture_default_str();
  pipe_cmd->add_option("--repeats", repeats, "Repeat with shifted seeds; emits aggregate medians")->capture_default_str();
  pipe_cmd->add_option("--seed", pipe_common.seed)->capture_default_str();
  pipe_cmd->add_option("--out", pipe_common.out_dir)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
  }

  try {
    const std::string hash = app_config_hash(app);

    if (*synth_cmd) {
      spec.seed = derive_seed(synth_common.seed, "synth");
      const auto sd = generate_synthetic(spec);
      save_synthetic(sd, synth_common.out_dir,
                     "config_hash=" + hash + " seed=" + std::to_string(synth_common.seed) +
                         " version=" + kArtifactVersion);
      std::cout << "synth: " << sd.base.num_users << " users, " << sd.base.num_items
                << " items, " << sd.base.triples.size() << " ratings, "
                << spec.num_groups << " groups -> " << synth_common.out_dir << "\n";
      return 0;
    }

    if (*train_cmd) {
      const RatingsDataset ds = load_and_rescale(train_data, rating_min, rating_max);
      const auto split = split_dataset(ds, fractions, derive_seed(train_common.seed, "split"));
      fs::create_directories(train_common.out_dir);
      write_id_map(ds, fs::path(train_common.out_dir) / "id_map.json");
      TrainHistory history;
      fs::path ckpt;
      if (model_kind == "lm") {
        lm_cfg.latent_dim = latent_dim;
        lm_cfg.lambda1 = lambda1;
        lm_cfg.lambda2 = lambda2;
        lm_cfg.learning_rate = learning_rate;
        lm_cfg.batch_size = batch_size;
        lm_cfg.max_epochs = max_epochs;
        lm_cfg.patience = patience;
        lm_cfg.rating_loss = loss_from_name(rating_loss);
        lm_cfg.reconstruction_loss = loss_from_name(recon_loss);
        lm_cfg.squared_frobenius = squared_frobenius;
        lm_cfg.seed = derive_seed(train_common.seed, "model");
        auto result = lm_train(ds, split, lm_cfg);
        history = result.history;
        ckpt = fs::path(train_common.out_dir) / "lm_checkpoint.bin";
        if (!history.diverged) result.model.save(ckpt);
      } else if (model_kind == "vae") {
        vae_cfg.latent_dim = latent_dim;
        vae_cfg.hidden_dims = hidden;
        vae_cfg.mc_samples = mc_samples;
        vae_cfg.kl_weight = kl_weight;
        vae_cfg.rating_weight = rating_weight;
        vae_cfg.learning_rate = learning_rate;
        vae_cfg.batch_size = batch_size;
        vae_cfg.max_epochs = max_epochs;
        vae_cfg.patience = patience;
        vae_cfg.rating_loss = loss_from_name(rating_loss);
        vae_cfg.reconstruction_loss = loss_from_name(recon_loss);
        vae_cfg.seed = derive_seed(train_common.seed, "model");
        auto result = vae_train(ds, split, vae_cfg);
        history = result.history;
        ckpt = fs::path(train_common.out_dir) / "vae_checkpoint.bin";
        if (!history.diverged) result.model.save(ckpt);
      } else {
        throw config_error("--model must be lm or vae");
      }
      save_history(history, fs::path(train_common.out_dir) / "history.json", hash,
                   train_common.seed);
      if (history.diverged) {
        std::cerr << "train: diverged; partial history saved\n";
        return 3;
      }
      std::cout << "train: " << model_kind << " best epoch " << history.best_epoch
                << " of " << history.epochs.size() << " -> " << ckpt.string() << "\n";
      return 0;
    }

    if (*sample_cmd) {
      require_file(sample_ckpt);
      const auto model = load_model(sample_ckpt);
      fs::create_directories(sample_common.out_dir);
      const std::uint64_t seed = derive_seed(sample_common.seed, "sampling");
      CandidateSet cs;
      if (sample_method == "gmm") {
        const RatingsDataset ds = load_and_rescale(sample_data, 0.0, 0.0);
        const Mat latents = encode_items(*model, ds.features);
        const int components =
            gmm_components > 0 ? gmm_components
                               : static_cast<int>(std::min<Index>(10, latents.rows()));
        cs = sample_candidates(fit_gmm(latents, components, seed), candidate_count, seed);
      } else if (sample_method == "prior") {
        cs = sample_prior(model->latent_dim(), candidate_count, seed);
      } else if (sample_method == "rating_weighted") {
        const RatingsDataset ds = load_and_rescale(sample_data, 0.0, 0.0);
        cs = sample_rating_weighted(*model, ds, candidate_count, gamma, seed);
      } else {
        throw config_error("--method must be gmm, prior or rating_weighted");
      }
      save_candidates(cs, fs::path(sample_common.out_dir) / "candidates.csv",
                      fs::path(sample_common.out_dir) / "candidates_meta.json",
                      file_checksum(sample_ckpt), hash);
      std::cout << "sample: " << cs.latents.rows() << " candidates (" << sample_method
                << ") -> " << sample_common.out_dir << "\n";
      return 0;
    }

    if (*cover_cmd) {
      require_file(cover_ckpt);
      const auto model = load_model(cover_ckpt);
      const auto cs = load_candidates(fs::path(cover_cands) / "candidates.csv",
                                      fs::path(cover_cands) / "candidates_meta.json");
      const auto sol =
          greedy_cover_auto(model->user_embeddings(), cs.latents, tau, top_k,
                            budget_mb * (std::size_t{1} << 20));
      fs::create_directories(cover_common.out_dir);
      save_solution(sol, fs::path(cover_common.out_dir) / "solution.json", hash,
                    cover_common.seed);
      Mat generated(top_k, model->feature_dim());
      for (int i = 0; i < top_k; ++i)
        generated.row(i) =
            model->decode(cs.latents.row(sol.selected[static_cast<std::size_t>(i)]).transpose())
                .transpose();
      write_matrix_csv(generated, fs::path(cover_common.out_dir) / "generated_items.csv",
                       "item", "config_hash=" + hash);
      std::cout << "cover: objective " << sol.objective << ", coverage "
                << sol.coverage_proportion << " -> " << cover_common.out_dir << "\n";
      return 0;
    }

    if (*eval_cmd) {
      require_file(eval_solution);
      require_file(eval_generated);
      require_file(eval_ckpt);
      const RatingsDataset ds = load_and_rescale(eval_data, 0.0, 0.0);
      const auto model = load_model(eval_ckpt);
      const auto sol = load_solution(eval_solution);
      const Mat generated = load_matrix_csv(eval_generated);
      const auto split =
          split_dataset(ds, eval_fractions, derive_seed(eval_common.seed, "split"));

      EvalReport report;
      report.rating_rmse_heldout = rating_rmse_heldout(*model, ds, split.test);
      const bool synthetic = fs::exists(fs::path(eval_data) / "groups.json") &&
                             fs::exists(fs::path(eval_data) / "ideal_items.csv");
      SynthGroundTruth truth;
      if (synthetic) {
        truth = load_ground_truth(eval_data);
        const auto match = rmse_to_ideal(generated, truth.ideal_items);
        report.rmse_to_ideal = match.mean_rmse;
        report.per_item_table = match.pairs;
        report.nearest_existing_rmse = nearest_existing_rmse(truth.ideal_items, ds.features);
      }
      const auto cov = coverage_report(sol, synthetic ? &truth : nullptr, generated);
      report.predicted_coverage = cov.predicted;
      report.real_coverage = cov.real;
      report.real_coverage_available = cov.real_available;

      fs::create_directories(eval_common.out_dir);
      save_eval_report(report, fs::path(eval_common.out_dir) / "eval_report.json", hash,
                       eval_common.seed);
      append_ledger_row(fs::path(eval_common.out_dir) / "run_ledger.csv", eval_model_name,
                        synthetic ? static_cast<int>(truth.ideal_items.rows()) : 0, 0,
                        eval_common.seed, sol.tau, sol.k, report);
      std::cout << "eval: rmse_to_ideal " << report.rmse_to_ideal << ", predicted coverage "
                << report.predicted_coverage << " -> " << eval_common.out_dir << "\n";
      return 0;
    }

    if (*pipe_cmd) {
      if (repeats < 1) throw config_error("--repeats must be >= 1");
      if (pcfg.model == "lm") {
        pcfg.lm.latent_dim = pipe_latent;
        pcfg.lm.learning_rate = pipe_lr;
        pcfg.lm.batch_size = pipe_batch;
        pcfg.lm.max_epochs = pipe_epochs;
        pcfg.lm.patience = pipe_patience;
      } else {
        pcfg.vae.latent_dim = pipe_latent;
        pcfg.vae.hidden_dims = pipe_hidden;
        pcfg.vae.learning_rate = pipe_lr;
        pcfg.vae.batch_size = pipe_batch;
        pcfg.vae.max_epochs = pipe_epochs;
        pcfg.vae.patience = pipe_patience;
      }
      pcfg.memory_budget_bytes = pipe_budget_mb * (std::size_t{1} << 20);
      const fs::path out_root(pipe_common.out_dir);
      fs::create_directories(out_root);
      std::vector<double> rmses, predicted, real;
      nlohmann::json runs = nlohmann::json::array();
      for (int rep = 0; rep < repeats; ++rep) {
        PipelineConfig run_cfg = pcfg;
        run_cfg.seed = pipe_common.seed + static_cast<std::uint64_t>(rep);
        const fs::path dir = repeats == 1 ? out_root : out_root / ("rep_" + std::to_string(rep));
        const auto result = run_pipeline(run_cfg, dir);
        if (repeats > 1)
          append_ledger_row(out_root / "run_ledger.csv", run_cfg.model,
                            run_cfg.synth.num_groups, run_cfg.synth.items_per_group,
                            run_cfg.seed, run_cfg.tau, run_cfg.k, result.report);
        rmses.push_back(result.report.rmse_to_ideal);
        predicted.push_back(result.report.predicted_coverage);
        real.push_back(result.report.real_coverage);
        runs.push_back({{"seed", run_cfg.seed},
                        {"rmse_to_ideal", result.report.rmse_to_ideal},
                        {"nearest_existing_rmse", result.report.nearest_existing_rmse},
                        {"predicted_coverage", result.report.predicted_coverage},
                        {"real_coverage", result.report.real_coverage}});
        std::cout << "pipeline[" << rep << "]: rmse_to_ideal "
                  << result.report.rmse_to_ideal << ", predicted coverage "
                  << result.report.predicted_coverage << ", real coverage "
                  << result.report.real_coverage << "\n";
      }
      nlohmann::json agg{{"runs", runs},
                         {"median_rmse_to_ideal", median(rmses)},
                         {"median_predicted_coverage", median(predicted)},
                         {"median_real_coverage", median(real)},
                         {"config_hash", config_hash(pcfg)},
                         {"version", kArtifactVersion}};
      std::ofstream agg_out(out_root / "aggregate.json");
      agg_out << agg.dump(2) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
