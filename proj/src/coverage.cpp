#include "mcnip/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcnip/errors.hpp"

namespace mcnip {

namespace {

void check_problem(Index users, Index candidates, double tau, int k) {
  if (users < 1 || candidates < 1)
    throw config_error("coverage: need at least one user and one candidate");
  if (tau < 0.0 || tau > 1.0) throw config_error("coverage: tau must be in [0,1]");
  if (k < 1 || k > candidates)
    throw config_error("coverage: K must satisfy 1 <= K <= number of candidates");
}

// Shared greedy core. `fill_column` writes the predicted-rating column of
// candidate t for all users; the gain of a candidate is computed over
// uncovered users in increasing user order, so the serial and parallel
// paths produce bit-identical solutions.
template <typename FillColumn>
CoverageSolution greedy_core(Index users, Index candidates, double tau, int k,
                             FillColumn fill_column, bool parallel) {
  CoverageSolution sol;
  sol.tau = tau;
  sol.k = k;
  sol.assignment.assign(static_cast<std::size_t>(users), -1);
  std::vector<char> is_selected(static_cast<std::size_t>(candidates), 0);
  std::vector<char> covered(static_cast<std::size_t>(users), 0);
  std::vector<double> gain(static_cast<std::size_t>(candidates));

  Vec column(users);
  for (int step = 0; step < k; ++step) {
#ifdef _OPENMP
#pragma omp parallel if (parallel)
    {
      Vec scratch(users);
#pragma omp for schedule(dynamic, 64)
      for (Index t = 0; t < candidates; ++t) {
        if (is_selected[static_cast<std::size_t>(t)]) {
          gain[static_cast<std::size_t>(t)] = -1.0;
          continue;
        }
        fill_column(t, scratch);
        double g = 0.0;
        for (Index u = 0; u < users; ++u)
          if (!covered[static_cast<std::size_t>(u)] && scratch[u] > tau) g += scratch[u];
        gain[static_cast<std::size_t>(t)] = g;
      }
    }
#else
    for (Index t = 0; t < candidates; ++t) {
      if (is_selected[static_cast<std::size_t>(t)]) {
        gain[static_cast<std::size_t>(t)] = -1.0;
        continue;
      }
      fill_column(t, column);
      double g = 0.0;
      for (Index u = 0; u < users; ++u)
        if (!covered[static_cast<std::size_t>(u)] && column[u] > tau) g += column[u];
      gain[static_cast<std::size_t>(t)] = g;
    }
#endif
    // Lowest index wins ties, which also fills zero-gain picks with the
    // lowest-index unselected candidates.
    Index best = -1;
    double best_gain = -1.0;
    for (Index t = 0; t < candidates; ++t)
      if (gain[static_cast<std::size_t>(t)] > best_gain) {
        best_gain = gain[static_cast<std::size_t>(t)];
        best = t;
      }
    is_selected[static_cast<std::size_t>(best)] = 1;
    sol.selected.push_back(static_cast<int>(best));
    sol.per_item_marginal.push_back(best_gain);
    sol.objective += best_gain;
    fill_column(best, column);
    for (Index u = 0; u < users; ++u)
      if (!covered[static_cast<std::size_t>(u)] && column[u] > tau) {
        covered[static_cast<std::size_t>(u)] = 1;
        sol.assignment[static_cast<std::size_t>(u)] = step;
      }
  }
  sol.coverage_proportion = coverage_proportion(sol, users);
  return sol;
}

void check_matrix_entries(const Mat& r) {
  if (!r.allFinite() || r.minCoeff() < 0.0 || r.maxCoeff() > 1.0)
    throw config_error("coverage: rating matrix entries must be finite and in [0,1]");
}

}  // namespace

int CoverageSolution::covered_count() const {
  int n = 0;
  for (int a : assignment) n += a >= 0;
  return n;
}

CoverageSolution greedy_cover(const CoverageProblem& p) {
  check_problem(p.ratings.rows(), p.ratings.cols(), p.tau, p.k);
  check_matrix_entries(p.ratings);
  const Mat& r = p.ratings;
  return greedy_core(
      r.rows(), r.cols(), p.tau, p.k,
      [&r](Index t, Vec& out) { out = r.col(t); }, /*parallel=*/true);
}

CoverageSolution greedy_cover_serial(const CoverageProblem& p) {
  check_problem(p.ratings.rows(), p.ratings.cols(), p.tau, p.k);
  check_matrix_entries(p.ratings);
  const Mat& r = p.ratings;
  return greedy_core(
      r.rows(), r.cols(), p.tau, p.k,
      [&r](Index t, Vec& out) { out = r.col(t); }, /*parallel=*/false);
}

CoverageSolution greedy_cover_latent(const Mat& user_latents,
                                     const Mat& candidate_latents, double tau,
                                     int k) {
  if (user_latents.cols() != candidate_latents.cols())
    throw config_error("greedy_cover_latent: latent dimension mismatch");
  check_problem(user_latents.rows(), candidate_latents.rows(), tau, k);
  auto fill = [&](Index t, Vec& out) {
    out.noalias() = user_latents * candidate_latents.row(t).transpose();
    for (Index u = 0; u < out.size(); ++u) out[u] = sigmoid_clamped(out[u]);
  };
  return greedy_core(user_latents.rows(), candidate_latents.rows(), tau, k, fill,
                     /*parallel=*/true);
}

CoverageSolution greedy_cover_auto(const Mat& user_latents,
                                   const Mat& candidate_latents, double tau,
                                   int k, std::size_t memory_budget_bytes) {
  const auto needed = static_cast<std::size_t>(user_latents.rows()) *
                      static_cast<std::size_t>(candidate_latents.rows()) * sizeof(double);
  if (needed <= memory_budget_bytes) {
    CoverageProblem p;
    p.tau = tau;
    p.k = k;
    p.ratings.resize(user_latents.rows(), candidate_latents.rows());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Index t = 0; t < candidate_latents.rows(); ++t) {
      Vec col = user_latents * candidate_latents.row(t).transpose();
      for (Index u = 0; u < col.size(); ++u) col[u] = sigmoid_clamped(col[u]);
      p.ratings.col(t) = col;
    }
    return greedy_cover(p);
  }
  return greedy_cover_latent(user_latents, candidate_latents, tau, k);
}

CoverageSolution brute_force_cover(const CoverageProblem& p) {
  const Index users = p.ratings.rows();
  const Index t_n = p.ratings.cols();
  check_problem(users, t_n, p.tau, p.k);
  check_matrix_entries(p.ratings);
  // C(T,K) <= 1e6 precondition.
  double combos = 1.0;
  for (int i = 0; i < p.k; ++i)
    combos *= static_cast<double>(t_n - i) / static_cast<double>(i + 1);
  if (combos > 1e6)
    throw config_error("brute_force_cover: instance too large (C(T,K) > 1e6)");

  std::vector<int> subset(static_cast<std::size_t>(p.k));
  for (int i = 0; i < p.k; ++i) subset[static_cast<std::size_t>(i)] = i;
  std::vector<int> best_subset;
  std::vector<int> best_assign, assign(static_cast<std::size_t>(users));
  double best_obj = -1.0;

  while (true) {
    double obj = 0.0;
    for (Index u = 0; u < users; ++u) {
      double best_r = -1.0;
      int pos = -1;
      for (int i = 0; i < p.k; ++i) {
        const double r = p.ratings(u, subset[static_cast<std::size_t>(i)]);
        if (r > p.tau && r > best_r) {
          best_r = r;
          pos = i;
        }
      }
      assign[static_cast<std::size_t>(u)] = pos;
      if (pos >= 0) obj += best_r;
    }
    if (obj > best_obj) {
      best_obj = obj;
      best_subset = subset;
      best_assign = assign;
    }
    // next combination in lexicographic order
    int i = p.k - 1;
    while (i >= 0 && subset[static_cast<std::size_t>(i)] ==
                         static_cast<int>(t_n) - p.k + i)
      --i;
    if (i < 0) break;
    ++subset[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < p.k; ++j)
      subset[static_cast<std::size_t>(j)] = subset[static_cast<std::size_t>(j - 1)] + 1;
  }

  CoverageSolution sol;
  sol.tau = p.tau;
  sol.k = p.k;
  sol.selected = best_subset;
  sol.assignment = best_assign;
  sol.objective = best_obj;
  sol.per_item_marginal.assign(static_cast<std::size_t>(p.k), 0.0);
  for (Index u = 0; u < users; ++u)
    if (best_assign[static_cast<std::size_t>(u)] >= 0)
      sol.per_item_marginal[static_cast<std::size_t>(best_assign[static_cast<std::size_t>(u)])] +=
          p.ratings(u, best_subset[static_cast<std::size_t>(best_assign[static_cast<std::size_t>(u)])]);
  sol.coverage_proportion = coverage_proportion(sol, users);
  return sol;
}

double coverage_proportion(const CoverageSolution& sol, Index num_users) {
  if (num_users < 1) throw config_error("coverage_proportion: no users");
  return static_cast<double>(sol.covered_count()) / static_cast<double>(num_users);
}

namespace {

Mat rating_matrix_impl(const LatentModel& model, const CandidateSet& candidates,
                       bool parallel) {
  if (candidates.latents.cols() != model.latent_dim())
    throw config_error("build_rating_matrix: latent dimension mismatch");
  const Mat& zu = model.user_embeddings();
  Mat out(zu.rows(), candidates.latents.rows());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (Index t = 0; t < candidates.latents.rows(); ++t) {
    Vec col = zu * candidates.latents.row(t).transpose();
    for (Index u = 0; u < col.size(); ++u) col[u] = sigmoid_clamped(col[u]);
    out.col(t) = col;
  }
  return out;
}

}  // namespace

Mat build_rating_matrix(const LatentModel& model, const CandidateSet& candidates) {
  return rating_matrix_impl(model, candidates, true);
}

Mat build_rating_matrix_serial(const LatentModel& model,
                               const CandidateSet& candidates) {
  return rating_matrix_impl(model, candidates, false);
}

void save_solution(const CoverageSolution& sol, const std::filesystem::path& path,
                   const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json assignment = nlohmann::json::object();
  for (std::size_t u = 0; u < sol.assignment.size(); ++u)
    if (sol.assignment[u] >= 0) assignment[std::to_string(u)] = sol.assignment[u];
  nlohmann::json j{{"selected", sol.selected},
                   {"assignment", assignment},
                   {"num_users", sol.assignment.size()},
                   {"objective", sol.objective},
                   {"coverage_proportion", sol.coverage_proportion},
                   {"per_item_marginal", sol.per_item_marginal},
                   {"tau", sol.tau},
                   {"K", sol.k},
                   {"config_hash", config_hash},
                   {"seed", seed},
                   {"version", kArtifactVersion}};
  std::ofstream out(path);
  if (!out) throw missing_input_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

CoverageSolution load_solution(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw missing_input_error("cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw parse_error(path.string(), 1, "malformed JSON");
  CoverageSolution sol;
  sol.selected = j.at("selected").get<std::vector<int>>();
  sol.objective = j.at("objective").get<double>();
  sol.coverage_proportion = j.at("coverage_proportion").get<double>();
  sol.per_item_marginal = j.at("per_item_marginal").get<std::vector<double>>();
  sol.tau = j.at("tau").get<double>();
  sol.k = j.at("K").get<int>();
  sol.assignment.assign(j.at("num_users").get<std::size_t>(), -1);
  for (const auto& [user, pos] : j.at("assignment").items())
    sol.assignment.at(static_cast<std::size_t>(std::stoul(user))) = pos.get<int>();
  return sol;
}

}  // namespace mcnip
