#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mcnip/common.hpp"

namespace mcnip::test {

inline Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng,
                         double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * unit(rng);
  return m;
}

inline Vec random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * unit(rng);
  return v;
}

// Worst relative error of analytic vs central finite differences over one
// flat parameter array, ignoring coordinates where |fd| <= fd_cutoff.
template <typename LossFn>
double fd_max_rel_error(double* data, Index size, const double* analytic,
                        LossFn loss, double h = 1e-5,
                        double fd_cutoff = 1e-8) {
  double worst = 0.0;
  for (Index i = 0; i < size; ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double up = loss();
    data[i] = saved - h;
    const double down = loss();
    data[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    if (std::abs(fd) <= fd_cutoff) continue;
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::abs(fd));
  }
  return worst;
}

// Unique scratch directory per test case.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mcnip_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mcnip::test
