#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mcnip/common.hpp"

namespace mcnip::nn {

enum class Activation { kIdentity, kRelu, kSigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation act = Activation::kIdentity;
};

// A plain feed-forward stack. An empty layer list is the identity map,
// which lets callers treat "no hidden layers" uniformly.
struct Mlp {
  std::vector<DenseLayer> layers;

  Index input_dim() const { return layers.empty() ? -1 : layers.front().weight.cols(); }
  Index output_dim() const { return layers.empty() ? -1 : layers.back().weight.rows(); }
  Index param_count() const;
};

struct ForwardCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activations per layer
  std::vector<Vec> post;  // activations per layer
};

// Pure function of (net, x); fills `cache` for a later backward pass.
Vec forward(const Mlp& net, const Vec& x, ForwardCache* cache = nullptr);

struct MlpGrad {
  std::vector<Mat> d_weight;
  std::vector<Vec> d_bias;
  Vec d_input;

  void resize_like(const Mlp& net);
  void set_zero();
  void add(const MlpGrad& other, double scale = 1.0);
};

// Exact gradients of the scalar whose gradient at the network output is
// `upstream`. Accumulates into `out` (callers zero it between data).
void backward(const Mlp& net, const ForwardCache& cache, const Vec& upstream,
              MlpGrad& out);

// He initialization for relu layers, 1/fan_in otherwise; biases zero.
Mlp init_mlp(const std::vector<Index>& dims,
             const std::vector<Activation>& activations, std::uint64_t seed);

// --- Adam ---------------------------------------------------------------

struct ParamView {
  double* data = nullptr;
  Index size = 0;
};
struct GradView {
  const double* data = nullptr;
  Index size = 0;
};

struct AdamState {
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Eigen::ArrayXd> m, v;
};

AdamState make_adam(double learning_rate, std::span<const ParamView> params);

// Standard bias-corrected Adam update, in place. Throws on non-finite
// gradients; parameters are untouched in that case.
void adam_step(AdamState& state, std::span<const ParamView> params,
               std::span<const GradView> grads);

// Parameter views over an Mlp (weights then bias, layer by layer).
std::vector<ParamView> param_views(Mlp& net);
std::vector<GradView> grad_views(const MlpGrad& g);

// Checkpoint I/O for a standalone network ("MCNIP-NN-1").
void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace mcnip::nn
