#include "mcnip/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcnip/errors.hpp"
#include "mcnip/rng.hpp"

namespace mcnip {

namespace {

constexpr double kCollapseMass = 1e-12;

// Cumulative-scan categorical draw; avoids std::discrete_distribution so
// the draw sequence is fully pinned by our own code.
Index categorical(const Vec& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng) * probs.sum();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

double log_normal_diag(const Vec& x, const Mat& means, const Mat& vars, Index c) {
  double lp = 0.0;
  for (Index j = 0; j < x.size(); ++j) {
    const double v = vars(c, j);
    const double d = x[j] - means(c, j);
    lp += -0.5 * std::log(2.0 * M_PI * v) - d * d / (2.0 * v);
  }
  return lp;
}

void estep_point(const GmmModel& g, const Mat& points, Index i, Mat& resp,
                 Vec& log_density) {
  const Index c_n = g.components();
  const Vec x = points.row(i).transpose();
  double best = -std::numeric_limits<double>::infinity();
  Eigen::ArrayXd lp(c_n);
  for (Index c = 0; c < c_n; ++c) {
    lp[c] = std::log(g.weights[c]) + log_normal_diag(x, g.means, g.variances, c);
    best = std::max(best, lp[c]);
  }
  double sum = 0.0;
  for (Index c = 0; c < c_n; ++c) sum += std::exp(lp[c] - best);
  const double lse = best + std::log(sum);
  for (Index c = 0; c < c_n; ++c) resp(i, c) = std::exp(lp[c] - lse);
  log_density[i] = lse;
}

Mat kmeanspp_seed(const Mat& points, int n_components, std::mt19937_64& rng) {
  const Index n = points.rows();
  Mat means(n_components, points.cols());
  std::uniform_int_distribution<Index> uniform_point(0, n - 1);
  means.row(0) = points.row(uniform_point(rng));
  Vec dist2 = (points.rowwise() - means.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < n_components; ++c) {
    Index pick;
    if (dist2.sum() > 0.0)
      pick = categorical(dist2, rng);
    else
      pick = uniform_point(rng);  // all points coincide with a chosen mean
    means.row(c) = points.row(pick);
    dist2 = dist2.cwiseMin(
        (points.rowwise() - means.row(c)).rowwise().squaredNorm());
  }
  return means;
}

}  // namespace

double GmmModel::log_density(const Vec& x) const {
  double best = -std::numeric_limits<double>::infinity();
  Eigen::ArrayXd lp(components());
  for (Index c = 0; c < components(); ++c) {
    lp[c] = std::log(weights[c]) + log_normal_diag(x, means, variances, c);
    best = std::max(best, lp[c]);
  }
  double sum = 0.0;
  for (Index c = 0; c < components(); ++c) sum += std::exp(lp[c] - best);
  return best + std::log(sum);
}

void gmm_responsibilities(const GmmModel& g, const Mat& points, Mat& resp,
                          Vec& log_density_per_point, bool parallel) {
  const Index n = points.rows();
  resp.resize(n, g.components());
  log_density_per_point.resize(n);
  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Index i = 0; i < n; ++i) estep_point(g, points, i, resp, log_density_per_point);
  } else {
    for (Index i = 0; i < n; ++i) estep_point(g, points, i, resp, log_density_per_point);
  }
}

GmmModel fit_gmm(const Mat& points, int n_components, std::uint64_t seed,
                 const GmmFitOptions& opts, GmmFitInfo* info) {
  const Index n = points.rows();
  const Index d = points.cols();
  if (n_components < 1) throw config_error("fit_gmm: n_components must be >= 1");
  if (n < n_components)
    throw config_error("fit_gmm: need at least as many points as components");
  if (!points.allFinite()) throw numeric_error("fit_gmm: non-finite input point");

  auto rng = stream_rng(seed, "gmm");
  GmmModel g;
  g.means = kmeanspp_seed(points, n_components, rng);
  const Vec global_mean = points.colwise().mean().transpose();
  Vec global_var(d);
  for (Index j = 0; j < d; ++j) {
    const double mean_j = global_mean[j];
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double dv = points(i, j) - mean_j;
      acc += dv * dv;
    }
    global_var[j] = std::max(acc / static_cast<double>(n), opts.var_floor);
  }
  g.variances = global_var.transpose().replicate(n_components, 1);
  g.weights = Vec::Constant(n_components, 1.0 / n_components);

  Mat resp;
  Vec log_density;
  std::uniform_int_distribution<Index> uniform_point(0, n - 1);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    gmm_responsibilities(g, points, resp, log_density, opts.parallel);
    // Serial reduction keeps the fit independent of the thread count.
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) ll += log_density[i];
    if (info) info->log_likelihood.push_back(ll);

    // M-step.
    for (Index c = 0; c < n_components; ++c) {
      double mass = 0.0;
      for (Index i = 0; i < n; ++i) mass += resp(i, c);
      if (mass < kCollapseMass) {
        g.means.row(c) = points.row(uniform_point(rng));
        g.variances.row(c) = global_var.transpose();
        g.weights[c] = 1.0 / static_cast<double>(n);
        if (info) ++info->reseed_events;
        continue;
      }
      Vec mean = Vec::Zero(d);
      for (Index i = 0; i < n; ++i) mean += resp(i, c) * points.row(i).transpose();
      mean /= mass;
      Vec var = Vec::Zero(d);
      for (Index i = 0; i < n; ++i)
        var.array() +=
            resp(i, c) * (points.row(i).transpose() - mean).array().square();
      var /= mass;
      g.means.row(c) = mean.transpose();
      g.variances.row(c) = var.cwiseMax(opts.var_floor).transpose();
      g.weights[c] = mass / static_cast<double>(n);
    }
    g.weights /= g.weights.sum();

    if (iter > 0 && ll - prev_ll < opts.tol) break;
    prev_ll = ll;
  }
  return g;
}

std::string provenance_name(CandidateProvenance p) {
  switch (p) {
    case CandidateProvenance::kGmm: return "gmm";
    case CandidateProvenance::kPrior: return "prior";
    case CandidateProvenance::kRatingWeighted: return "rating_weighted";
  }
  return "gmm";
}

namespace {

CandidateProvenance provenance_from_name(const std::string& s) {
  if (s == "gmm") return CandidateProvenance::kGmm;
  if (s == "prior") return CandidateProvenance::kPrior;
  if (s == "rating_weighted") return CandidateProvenance::kRatingWeighted;
  throw config_error("unknown candidate provenance '" + s + "'");
}

}  // namespace

CandidateSet sample_candidates(const GmmModel& g, Index count, std::uint64_t seed) {
  if (count < 1) throw config_error("sample_candidates: count must be >= 1");
  auto rng = stream_rng(seed, "sampling");
  std::normal_distribution<double> unit(0.0, 1.0);
  CandidateSet cs;
  cs.provenance = CandidateProvenance::kGmm;
  cs.seed = seed;
  cs.latents.resize(count, g.dim());
  for (Index t = 0; t < count; ++t) {
    const Index c = categorical(g.weights, rng);
    for (Index j = 0; j < g.dim(); ++j)
      cs.latents(t, j) = g.means(c, j) + std::sqrt(g.variances(c, j)) * unit(rng);
  }
  return cs;
}

CandidateSet sample_prior(Index d_z, Index count, std::uint64_t seed) {
  if (count < 1 || d_z < 1) throw config_error("sample_prior: count and d_z must be >= 1");
  auto rng = stream_rng(seed, "sampling");
  std::normal_distribution<double> unit(0.0, 1.0);
  CandidateSet cs;
  cs.provenance = CandidateProvenance::kPrior;
  cs.seed = seed;
  cs.latents.resize(count, d_z);
  for (Index t = 0; t < count; ++t)
    for (Index j = 0; j < d_z; ++j) cs.latents(t, j) = unit(rng);
  return cs;
}

Vec rating_weighted_probs(const RatingsDataset& ds, double gamma) {
  if (!std::isfinite(gamma)) throw config_error("rating_weighted_probs: gamma must be finite");
  Vec sums = Vec::Zero(ds.num_items);
  for (const auto& t : ds.triples) sums[t.item] += t.rating;
  Vec scaled = gamma * sums;
  const double m = scaled.maxCoeff();
  Vec probs = (scaled.array() - m).exp();
  probs /= probs.sum();
  return probs;
}

CandidateSet sample_rating_weighted(const LatentModel& model,
                                    const RatingsDataset& ds, Index count,
                                    double gamma, std::uint64_t seed) {
  if (count < 1) throw config_error("sample_rating_weighted: count must be >= 1");
  const Vec probs = rating_weighted_probs(ds, gamma);
  auto rng = stream_rng(seed, "sampling");
  CandidateSet cs;
  cs.provenance = CandidateProvenance::kRatingWeighted;
  cs.seed = seed;
  cs.latents.resize(count, model.latent_dim());
  for (Index t = 0; t < count; ++t) {
    const Index i = categorical(probs, rng);
    cs.latents.row(t) =
        model.encode_sample(ds.features.row(i).transpose(), rng).transpose();
  }
  return cs;
}

void save_candidates(const CandidateSet& cs, const std::filesystem::path& csv_path,
                     const std::filesystem::path& meta_path,
                     const std::string& model_checksum,
                     const std::string& config_hash) {
  {
    std::ofstream out(csv_path);
    if (!out) throw missing_input_error("cannot write " + csv_path.string());
    out << "candidate_id";
    for (Index j = 0; j < cs.latents.cols(); ++j) out << ",z" << j;
    out << '\n';
    char buf[32];
    for (Index t = 0; t < cs.latents.rows(); ++t) {
      out << t;
      for (Index j = 0; j < cs.latents.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.9g", cs.latents(t, j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  nlohmann::json meta{{"provenance", provenance_name(cs.provenance)},
                      {"seed", cs.seed},
                      {"count", cs.latents.rows()},
                      {"d_z", cs.latents.cols()},
                      {"model_checksum", model_checksum},
                      {"config_hash", config_hash},
                      {"version", kArtifactVersion}};
  std::ofstream out(meta_path);
  if (!out) throw missing_input_error("cannot write " + meta_path.string());
  out << meta.dump(2) << '\n';
}

CandidateSet load_candidates(const std::filesystem::path& csv_path,
                             const std::filesystem::path& meta_path) {
  CandidateSet cs;
  {
    std::ifstream in(meta_path);
    if (!in) throw missing_input_error("cannot open " + meta_path.string());
    nlohmann::json meta = nlohmann::json::parse(in, nullptr, false);
    if (meta.is_discarded())
      throw parse_error(meta_path.string(), 1, "malformed JSON");
    cs.provenance = provenance_from_name(meta.at("provenance").get<std::string>());
    cs.seed = meta.at("seed").get<std::uint64_t>();
  }
  std::ifstream in(csv_path);
  if (!in) throw missing_input_error("cannot open " + csv_path.string());
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  Index d_z = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!saw_header) {
      if (fields.empty() || fields[0] != "candidate_id")
        throw parse_error(csv_path.string(), line_no, "expected candidate_id header");
      d_z = static_cast<Index>(fields.size()) - 1;
      saw_header = true;
      continue;
    }
    if (static_cast<Index>(fields.size()) != d_z + 1)
      throw parse_error(csv_path.string(), line_no, "wrong field count");
    std::vector<double> row(static_cast<std::size_t>(d_z));
    for (Index j = 0; j < d_z; ++j) {
      try {
        row[static_cast<std::size_t>(j)] = std::stod(fields[static_cast<std::size_t>(j) + 1]);
      } catch (const std::exception&) {
        throw parse_error(csv_path.string(), line_no,
                          "expected a number, got '" + fields[static_cast<std::size_t>(j) + 1] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw parse_error(csv_path.string(), 1, "no candidates");
  cs.latents.resize(static_cast<Index>(rows.size()), d_z);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < d_z; ++j)
      cs.latents(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return cs;
}

}  // namespace mcnip
