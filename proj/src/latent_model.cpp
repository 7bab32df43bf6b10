#include "mcnip/latent_model.hpp"

#include <fstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcnip/checkpoint.hpp"
#include "mcnip/errors.hpp"
#include "mcnip/linear_model.hpp"
#include "mcnip/vae_model.hpp"

namespace mcnip {

std::unique_ptr<LatentModel> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_input_error("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  in.close();
  if (magic == "MCNIP-LM-1")
    return std::make_unique<LinearModel>(LinearModel::load(path));
  if (magic == "MCNIP-VAE-1")
    return std::make_unique<CollabVae>(CollabVae::load(path));
  throw parse_error(path.string(), 1, "unknown checkpoint magic '" + magic + "'");
}

Mat encode_items(const LatentModel& model, const Mat& features) {
  if (features.cols() != model.feature_dim())
    throw config_error("encode_items: feature dimension mismatch");
  Mat latents(features.rows(), model.latent_dim());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Index i = 0; i < features.rows(); ++i)
    latents.row(i) = model.encode_mean(features.row(i).transpose()).transpose();
  return latents;
}

void save_history(const TrainHistory& h, const std::filesystem::path& path,
                  const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_rating_loss", e.val_rating_loss}});
  nlohmann::json j{{"epochs", epochs},
                   {"best_epoch", h.best_epoch},
                   {"status", h.diverged ? "diverged" : "ok"},
                   {"config_hash", config_hash},
                   {"seed", seed},
                   {"version", kArtifactVersion}};
  std::ofstream out(path);
  if (!out) throw missing_input_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace mcnip
