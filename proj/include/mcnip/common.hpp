#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

namespace mcnip {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr const char* kArtifactVersion = "mcnip-0.1.0";

// Predictions are kept strictly inside (0,1) so the cross-entropy losses
// never take log(0).
inline constexpr double kSigmoidFloor = 1e-7;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamp_unit(double p) {
  return std::min(1.0 - kSigmoidFloor, std::max(kSigmoidFloor, p));
}

inline double sigmoid_clamped(double x) { return clamp_unit(sigmoid(x)); }

// Dot-product threshold equivalent to sigmoid_clamped(dot) > tau.
inline double rating_threshold_logit(double tau) {
  if (tau < kSigmoidFloor) return -std::numeric_limits<double>::infinity();
  if (tau >= 1.0 - kSigmoidFloor) return std::numeric_limits<double>::infinity();
  return std::log(tau / (1.0 - tau));
}

// FNV-1a, used for config hashes and checkpoint checksums. Stable across
// runs and platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t state = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 1099511628211ull;
  }
  return state;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace mcnip
