#include "mcnip/pipeline.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mcnip/checkpoint.hpp"
#include "mcnip/errors.hpp"
#include "mcnip/rng.hpp"
#include "mcnip/sampler.hpp"

namespace mcnip {

std::string config_hash(const PipelineConfig& cfg) {
  std::ostringstream ss;
  ss << "users=" << cfg.synth.num_users << ";groups=" << cfg.synth.num_groups
     << ";items_per_group=" << cfg.synth.items_per_group
     << ";feature_dim=" << cfg.synth.feature_dim
     << ";item_spread=" << cfg.synth.item_spread
     << ";rating_noise=" << cfg.synth.rating_noise
     << ";ratings_per_user=" << cfg.synth.ratings_per_user
     << ";min_sep=" << cfg.synth.min_separation_coef
     << ";split=" << cfg.split.train << "," << cfg.split.validation << ","
     << cfg.split.test << ";model=" << cfg.model;
  if (cfg.model == "lm") {
    ss << ";d_z=" << cfg.lm.latent_dim << ";l1=" << cfg.lm.lambda1
       << ";l2=" << cfg.lm.lambda2 << ";lr=" << cfg.lm.learning_rate
       << ";bs=" << cfg.lm.batch_size << ";epochs=" << cfg.lm.max_epochs
       << ";patience=" << cfg.lm.patience
       << ";rl=" << loss_name(cfg.lm.rating_loss)
       << ";gl=" << loss_name(cfg.lm.reconstruction_loss)
       << ";sqfro=" << cfg.lm.squared_frobenius;
  } else {
    ss << ";d_z=" << cfg.vae.latent_dim << ";hidden=";
    for (auto h : cfg.vae.hidden_dims) ss << h << "_";
    ss << ";L=" << cfg.vae.mc_samples << ";klw=" << cfg.vae.kl_weight
       << ";rw=" << cfg.vae.rating_weight << ";lr=" << cfg.vae.learning_rate
       << ";bs=" << cfg.vae.batch_size << ";epochs=" << cfg.vae.max_epochs
       << ";patience=" << cfg.vae.patience
       << ";rl=" << loss_name(cfg.vae.rating_loss)
       << ";gl=" << loss_name(cfg.vae.reconstruction_loss);
  }
  ss << ";sample=" << cfg.sample_method << ";T=" << cfg.candidate_count
     << ";components=" << cfg.gmm_components << ";gamma=" << cfg.gamma
     << ";tau=" << cfg.tau << ";K=" << cfg.k
     << ";budget=" << cfg.memory_budget_bytes << ";seed=" << cfg.seed;
  return to_hex(fnv1a64(ss.str()));
}

CoverageSolution prefix_solution(const CoverageSolution& sol, int k_prime) {
  if (k_prime < 1 || k_prime > sol.k)
    throw config_error("prefix_solution: k_prime out of range");
  CoverageSolution p;
  p.tau = sol.tau;
  p.k = k_prime;
  p.selected.assign(sol.selected.begin(), sol.selected.begin() + k_prime);
  p.per_item_marginal.assign(sol.per_item_marginal.begin(),
                             sol.per_item_marginal.begin() + k_prime);
  p.assignment.resize(sol.assignment.size());
  for (std::size_t u = 0; u < sol.assignment.size(); ++u)
    p.assignment[u] = sol.assignment[u] >= 0 && sol.assignment[u] < k_prime
                          ? sol.assignment[u]
                          : -1;
  for (double g : p.per_item_marginal) p.objective += g;
  p.coverage_proportion =
      coverage_proportion(p, static_cast<Index>(p.assignment.size()));
  return p;
}

PipelineResult run_pipeline(const PipelineConfig& cfg,
                            const std::optional<std::filesystem::path>& artifacts_dir) {
  if (cfg.model != "lm" && cfg.model != "vae")
    throw config_error("pipeline: model must be 'lm' or 'vae'");
  const std::string hash = config_hash(cfg);

  // synth
  SyntheticSpec spec = cfg.synth;
  spec.seed = derive_seed(cfg.seed, "synth");
  SyntheticDataset sd = generate_synthetic(spec);
  const RatingsDataset ds = rescale_ratings(sd.base);
  if (artifacts_dir) {
    save_synthetic(sd, *artifacts_dir,
                   "config_hash=" + hash + " seed=" + std::to_string(cfg.seed) +
                       " version=" + kArtifactVersion);
  }

  // train
  const DatasetSplit split = split_dataset(ds, cfg.split, derive_seed(cfg.seed, "split"));
  std::unique_ptr<LatentModel> model;
  TrainHistory history;
  if (cfg.model == "lm") {
    LmConfig lm_cfg = cfg.lm;
    lm_cfg.seed = derive_seed(cfg.seed, "model");
    auto result = lm_train(ds, split, lm_cfg);
    history = std::move(result.history);
    model = std::make_unique<LinearModel>(std::move(result.model));
  } else {
    VaeConfig vae_cfg = cfg.vae;
    vae_cfg.seed = derive_seed(cfg.seed, "model");
    auto result = vae_train(ds, split, vae_cfg);
    history = std::move(result.history);
    model = std::make_unique<CollabVae>(std::move(result.model));
  }
  if (artifacts_dir)
    save_history(history, *artifacts_dir / "history.json", hash, cfg.seed);
  if (history.diverged)
    throw numeric_error("pipeline: training diverged (non-finite loss)");
  std::string checksum = "unavailable";
  if (artifacts_dir) {
    const auto ckpt = *artifacts_dir / (cfg.model + "_checkpoint.bin");
    model->save(ckpt);
    checksum = file_checksum(ckpt);
  }

  // sample
  const std::uint64_t sample_seed = derive_seed(cfg.seed, "sampling");
  CandidateSet candidates;
  if (cfg.sample_method == "gmm") {
    const Mat latents = encode_items(*model, ds.features);
    const int components =
        cfg.gmm_components > 0
            ? cfg.gmm_components
            : static_cast<int>(std::min<Index>(10, latents.rows()));
    const GmmModel gmm = fit_gmm(latents, components, sample_seed);
    candidates = sample_candidates(gmm, cfg.candidate_count, sample_seed);
  } else if (cfg.sample_method == "prior") {
    candidates = sample_prior(model->latent_dim(), cfg.candidate_count, sample_seed);
  } else if (cfg.sample_method == "rating_weighted") {
    candidates =
        sample_rating_weighted(*model, ds, cfg.candidate_count, cfg.gamma, sample_seed);
  } else {
    throw config_error("pipeline: unknown sample method '" + cfg.sample_method + "'");
  }
  if (artifacts_dir)
    save_candidates(candidates, *artifacts_dir / "candidates.csv",
                    *artifacts_dir / "candidates_meta.json", checksum, hash);

  // cover
  PipelineResult result;
  result.history = std::move(history);
  result.solution =
      greedy_cover_auto(model->user_embeddings(), candidates.latents, cfg.tau,
                        cfg.k, cfg.memory_budget_bytes);
  result.generated.resize(cfg.k, ds.feature_dim);
  for (int i = 0; i < cfg.k; ++i)
    result.generated.row(i) =
        model->decode(candidates.latents.row(result.solution.selected[static_cast<std::size_t>(i)])
                          .transpose())
            .transpose();
  if (artifacts_dir) {
    save_solution(result.solution, *artifacts_dir / "solution.json", hash, cfg.seed);
    std::ofstream out(*artifacts_dir / "generated_items.csv");
    out << "item";
    for (Index j = 0; j < result.generated.cols(); ++j) out << ",f" << j;
    out << '\n';
    char buf[32];
    for (Index i = 0; i < result.generated.rows(); ++i) {
      out << i;
      for (Index j = 0; j < result.generated.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.9g", result.generated(i, j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }

  // eval
  result.truth = sd.truth;
  const auto match = rmse_to_ideal(result.generated, sd.truth.ideal_items);
  result.report.rmse_to_ideal = match.mean_rmse;
  result.report.per_item_table = match.pairs;
  result.report.nearest_existing_rmse =
      nearest_existing_rmse(sd.truth.ideal_items, ds.features);
  const auto cov = coverage_report(result.solution, &sd.truth, result.generated);
  result.report.predicted_coverage = cov.predicted;
  result.report.real_coverage = cov.real;
  result.report.real_coverage_available = cov.real_available;
  result.report.rating_rmse_heldout = rating_rmse_heldout(*model, ds, split.test);
  if (artifacts_dir) {
    save_eval_report(result.report, *artifacts_dir / "eval_report.json", hash, cfg.seed);
    append_ledger_row(*artifacts_dir / "run_ledger.csv", cfg.model,
                      cfg.synth.num_groups, cfg.synth.items_per_group, cfg.seed,
                      cfg.tau, cfg.k, result.report);
  }
  return result;
}

}  // namespace mcnip
