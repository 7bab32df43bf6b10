#include "mcnip/nn.hpp"

#include <cmath>
#include <random>

#include "mcnip/checkpoint.hpp"
#include "mcnip/errors.hpp"

namespace mcnip::nn {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw config_error("unknown activation '" + name + "'");
}

Index Mlp::param_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

namespace {

inline double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

// Derivative in terms of pre-activation and activation value.
inline double act_derivative(Activation a, double pre, double post) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: return post * (1.0 - post);
  }
  return 1.0;
}

}  // namespace

Vec forward(const Mlp& net, const Vec& x, ForwardCache* cache) {
  if (!net.layers.empty() && x.size() != net.input_dim())
    throw config_error("forward: input has size " + std::to_string(x.size()) +
                       ", network expects " + std::to_string(net.input_dim()));
  if (cache) {
    cache->input = x;
    cache->pre.resize(net.layers.size());
    cache->post.resize(net.layers.size());
  }
  Vec h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    Vec pre = l.weight * h + l.bias;
    Vec post(pre.size());
    for (Index j = 0; j < pre.size(); ++j) post[j] = apply_act(l.act, pre[j]);
    if (cache) {
      cache->pre[i] = pre;
      cache->post[i] = post;
    }
    h = std::move(post);
  }
  return h;
}

void MlpGrad::resize_like(const Mlp& net) {
  d_weight.resize(net.layers.size());
  d_bias.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    d_weight[i].resize(net.layers[i].weight.rows(), net.layers[i].weight.cols());
    d_bias[i].resize(net.layers[i].bias.size());
  }
  if (!net.layers.empty()) d_input.resize(net.layers.front().weight.cols());
  set_zero();
}

void MlpGrad::set_zero() {
  for (auto& m : d_weight) m.setZero();
  for (auto& v : d_bias) v.setZero();
  d_input.setZero();
}

void MlpGrad::add(const MlpGrad& other, double scale) {
  for (std::size_t i = 0; i < d_weight.size(); ++i) {
    d_weight[i] += scale * other.d_weight[i];
    d_bias[i] += scale * other.d_bias[i];
  }
  if (d_input.size() == other.d_input.size()) d_input += scale * other.d_input;
}

void backward(const Mlp& net, const ForwardCache& cache, const Vec& upstream,
              MlpGrad& out) {
  if (cache.pre.size() != net.layers.size())
    throw config_error("backward: cache does not match network");
  if (out.d_weight.size() != net.layers.size()) out.resize_like(net);

  Vec delta = upstream;
  for (std::size_t idx = net.layers.size(); idx-- > 0;) {
    const auto& l = net.layers[idx];
    if (delta.size() != l.weight.rows())
      throw config_error("backward: upstream gradient size mismatch");
    Vec dpre(delta.size());
    for (Index j = 0; j < delta.size(); ++j)
      dpre[j] = delta[j] * act_derivative(l.act, cache.pre[idx][j], cache.post[idx][j]);
    const Vec& layer_in = idx == 0 ? cache.input : cache.post[idx - 1];
    out.d_weight[idx].noalias() += dpre * layer_in.transpose();
    out.d_bias[idx] += dpre;
    delta = l.weight.transpose() * dpre;
  }
  if (net.layers.empty())
    out.d_input = upstream;  // identity map
  else
    out.d_input += delta;
}

Mlp init_mlp(const std::vector<Index>& dims,
             const std::vector<Activation>& activations, std::uint64_t seed) {
  if (dims.size() < 2)
    throw config_error("init_mlp: need at least input and output dims");
  if (activations.size() != dims.size() - 1)
    throw config_error("init_mlp: need one activation per layer");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Mlp net;
  net.layers.resize(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    auto& l = net.layers[i];
    const double fan_in = static_cast<double>(dims[i]);
    const double scale = activations[i] == Activation::kRelu
                             ? std::sqrt(2.0 / fan_in)
                             : std::sqrt(1.0 / fan_in);
    l.weight.resize(dims[i + 1], dims[i]);
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = scale * unit(rng);
    l.bias = Vec::Zero(dims[i + 1]);
    l.act = activations[i];
  }
  return net;
}

AdamState make_adam(double learning_rate, std::span<const ParamView> params) {
  AdamState st;
  st.learning_rate = learning_rate;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(Eigen::ArrayXd::Zero(p.size));
    st.v.emplace_back(Eigen::ArrayXd::Zero(p.size));
  }
  return st;
}

void adam_step(AdamState& state, std::span<const ParamView> params,
               std::span<const GradView> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw config_error("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].size != state.m[i].size())
      throw config_error("adam_step: tensor shape mismatch");
    for (Index j = 0; j < grads[i].size; ++j)
      if (!std::isfinite(grads[i].data[j]))
        throw numeric_error("adam_step: non-finite gradient, update rejected");
  }
  state.step += 1;
  const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = Eigen::Map<const Eigen::ArrayXd>(grads[i].data, grads[i].size);
    auto p = Eigen::Map<Eigen::ArrayXd>(params[i].data, params[i].size);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.square();
    p -= state.learning_rate * (state.m[i] / b1t) /
         ((state.v[i] / b2t).sqrt() + state.epsilon);
  }
}

std::vector<ParamView> param_views(Mlp& net) {
  std::vector<ParamView> out;
  out.reserve(net.layers.size() * 2);
  for (auto& l : net.layers) {
    out.push_back({l.weight.data(), l.weight.size()});
    out.push_back({l.bias.data(), l.bias.size()});
  }
  return out;
}

std::vector<GradView> grad_views(const MlpGrad& g) {
  std::vector<GradView> out;
  out.reserve(g.d_weight.size() * 2);
  for (std::size_t i = 0; i < g.d_weight.size(); ++i) {
    out.push_back({g.d_weight[i].data(), g.d_weight[i].size()});
    out.push_back({g.d_bias[i].data(), g.d_bias[i].size()});
  }
  return out;
}

void save_mlp(const Mlp& net, const std::filesystem::path& path) {
  nlohmann::json header;
  std::vector<Index> dims;
  std::vector<std::string> acts;
  if (!net.layers.empty()) dims.push_back(net.layers.front().weight.cols());
  for (const auto& l : net.layers) {
    dims.push_back(l.weight.rows());
    acts.push_back(activation_name(l.act));
  }
  header["dims"] = dims;
  header["activations"] = acts;
  std::vector<double> blob;
  blob.reserve(static_cast<std::size_t>(net.param_count()));
  for (const auto& l : net.layers) {
    append_matrix(blob, l.weight);
    append_vector(blob, l.bias);
  }
  write_checkpoint(path, "MCNIP-NN-1", header, blob);
}

Mlp load_mlp(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path, "MCNIP-NN-1");
  const auto dims = ck.header.at("dims").get<std::vector<Index>>();
  const auto acts = ck.header.at("activations").get<std::vector<std::string>>();
  Mlp net;
  std::size_t pos = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight = take_matrix(ck.blob, pos, dims[i + 1], dims[i]);
    l.bias = take_vector(ck.blob, pos, dims[i + 1]);
    l.act = activation_from_name(acts.at(i));
    net.layers.push_back(std::move(l));
  }
  if (pos != ck.blob.size())
    throw integrity_error(path.string() + ": trailing bytes in parameter blob");
  return net;
}

}  // namespace mcnip::nn
