#pragma once

// Time-reversible nucleotide substitution models (JC69, K80, GTR).
//
// Rows and columns follow the (A, G, C, T) alphabet order. Relative rates are
// the six exchangeabilities in the order (AG, AC, AT, GC, GT, CT); the
// transitions are AG and CT. Every rate matrix is scaled so that the mean
// substitution rate at equilibrium is 1, i.e. branch lengths are expected
// substitutions per site.

#include "evovgm/seq_io.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace evovgm {

enum class ModelFamily { JC69, K80, GTR };

inline std::string_view to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::JC69: return "jc69";
    case ModelFamily::K80: return "k80";
    case ModelFamily::GTR: return "gtr";
  }
  return "unknown";
}

inline ModelFamily parse_model_family(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "jc69") return ModelFamily::JC69;
  if (lower == "k80") return ModelFamily::K80;
  if (lower == "gtr") return ModelFamily::GTR;
  throw std::invalid_argument("unknown substitution model '" + std::string(text) + "' (expected jc69, k80 or gtr)");
}

inline constexpr std::size_t kRateCount = 6;

/// (row, column) of each relative rate in (AG, AC, AT, GC, GT, CT) order.
inline constexpr std::array<std::pair<int, int>, kRateCount> kRatePairs = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

inline constexpr bool is_transition(int i, int j) {
  return (i == 0 && j == 1) || (i == 1 && j == 0) || (i == 2 && j == 3) || (i == 3 && j == 2);
}

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SubstitutionParams {
  ModelFamily family = ModelFamily::JC69;
  double kappa = 1.0;
  std::array<double, kRateCount> rho{1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  std::array<double, kAlphabetSize> pi{0.25, 0.25, 0.25, 0.25};

  static SubstitutionParams jc69() { return {}; }
  static SubstitutionParams k80(double kappa) {
    SubstitutionParams p;
    p.family = ModelFamily::K80;
    p.kappa = kappa;
    return p;
  }
  static SubstitutionParams gtr(std::array<double, kRateCount> rho, std::array<double, kAlphabetSize> pi) {
    SubstitutionParams p;
    p.family = ModelFamily::GTR;
    p.rho = rho;
    p.pi = pi;
    return p;
  }

  /// Exchangeabilities before normalization, in kRatePairs order.
  std::array<double, kRateCount> relative_rates() const {
    switch (family) {
      case ModelFamily::JC69: return {1, 1, 1, 1, 1, 1};
      case ModelFamily::K80: return {kappa, 1, 1, 1, 1, kappa};
      case ModelFamily::GTR: return rho;
    }
    return {};
  }

  std::array<double, kAlphabetSize> frequencies() const {
    if (family == ModelFamily::GTR) return pi;
    return {0.25, 0.25, 0.25, 0.25};
  }
};

namespace detail {

template <std::size_t K>
void require_simplex(const std::array<double, K>& v, const char* what) {
  double total = 0.0;
  for (double x : v) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ModelError(std::string(what) + " entries must be positive");
    total += x;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw ModelError(std::string(what) + " must sum to 1, sums to " + std::to_string(total));
  }
}

}  // namespace detail

inline void validate(const SubstitutionParams& p) {
  switch (p.family) {
    case ModelFamily::JC69: break;
    case ModelFamily::K80:
      if (!(p.kappa > 0.0) || !std::isfinite(p.kappa)) throw ModelError("kappa must be positive");
      break;
    case ModelFamily::GTR:
      detail::require_simplex(p.rho, "rho");
      detail::require_simplex(p.pi, "pi");
      break;
  }
}

template <class T>
using RateArray = std::array<std::array<T, kAlphabetSize>, kAlphabetSize>;

/// Normalized reversible rate matrix from exchangeabilities and frequencies.
/// Generic in the scalar so that the autodiff layer can build Q from
/// differentiable samples; only +, *, / and unary - are required of T.
template <class T>
RateArray<T> normalized_rate_matrix(const std::array<T, kRateCount>& rates,
                                    const std::array<T, kAlphabetSize>& pi) {
  RateArray<T> q{};
  for (std::size_t k = 0; k < kRateCount; ++k) {
    const auto [i, j] = kRatePairs[k];
    q[i][j] = rates[k] * pi[j];
    q[j][i] = rates[k] * pi[i];
  }
  std::array<T, kAlphabetSize> outflow{};
  for (std::size_t i = 0; i < kAlphabetSize; ++i) {
    std::size_t first = i == 0 ? 1 : 0;
    outflow[i] = q[i][first];
    for (std::size_t j = first + 1; j < kAlphabetSize; ++j) {
      if (j != i) outflow[i] = outflow[i] + q[i][j];
    }
  }
  T mean_rate = pi[0] * outflow[0];
  for (std::size_t i = 1; i < kAlphabetSize; ++i) mean_rate = mean_rate + pi[i] * outflow[i];
  for (std::size_t i = 0; i < kAlphabetSize; ++i) {
    for (std::size_t j = 0; j < kAlphabetSize; ++j) {
      if (j != i) q[i][j] = q[i][j] / mean_rate;
    }
    q[i][i] = -(outflow[i] / mean_rate);
  }
  return q;
}

struct RateMatrixDecomposition {
  Eigen::Matrix4d q;
  Eigen::Vector4d eigenvalues;
  Eigen::Matrix4d u;
  Eigen::Matrix4d u_inv;
  Eigen::Vector4d pi;
};

/// Eigenpairs of a symmetric 4x4 matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns).
inline std::pair<Eigen::Vector4d, Eigen::Matrix4d> jacobi_eigen(Eigen::Matrix4d a) {
  Eigen::Matrix4d v = Eigen::Matrix4d::Identity();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p)
      for (int r = p + 1; r < 4; ++r) off += a(p, r) * a(p, r);
    if (off < 1e-300) break;
    for (int p = 0; p < 3; ++p) {
      for (int r = p + 1; r < 4; ++r) {
        if (a(p, r) == 0.0) continue;
        const double theta = (a(r, r) - a(p, p)) / (2.0 * a(p, r));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 4; ++k) {
          const double akp = a(k, p);
          const double akr = a(k, r);
          a(k, p) = c * akp - s * akr;
          a(k, r) = s * akp + c * akr;
        }
        for (int k = 0; k < 4; ++k) {
          const double apk = a(p, k);
          const double ark = a(r, k);
          a(p, k) = c * apk - s * ark;
          a(r, k) = s * apk + c * ark;
        }
        for (int k = 0; k < 4; ++k) {
          const double vkp = v(k, p);
          const double vkr = v(k, r);
          v(k, p) = c * vkp - s * vkr;
          v(k, r) = s * vkp + c * vkr;
        }
      }
    }
  }
  return {a.diagonal(), v};
}

/// Real eigendecomposition of a reversible Q via the symmetric matrix
/// S = Pi^{1/2} Q Pi^{-1/2}: U = Pi^{-1/2} V and U^{-1} = V^T Pi^{1/2}.
inline RateMatrixDecomposition spectral_decompose(const Eigen::Matrix4d& q, const Eigen::Vector4d& pi) {
  for (int i = 0; i < 4; ++i) {
    if (!(pi(i) > 0.0)) throw ModelError("spectral_decompose: frequencies must be positive");
    for (int j = i + 1; j < 4; ++j) {
      const double imbalance = pi(i) * q(i, j) - pi(j) * q(j, i);
      if (std::fabs(imbalance) > 1e-8) {
        throw ModelError("spectral_decompose: detailed balance violated between states " +
                         std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  const Eigen::Vector4d root = pi.cwiseSqrt();
  const Eigen::Vector4d inv_root = root.cwiseInverse();
  Eigen::Matrix4d s = root.asDiagonal() * q * inv_root.asDiagonal();
  s = 0.5 * (s + s.transpose()).eval();
  auto [eigenvalues, v] = jacobi_eigen(s);

  RateMatrixDecomposition d;
  d.q = q;
  d.pi = pi;
  d.eigenvalues = eigenvalues;
  d.u = inv_root.asDiagonal() * v;
  d.u_inv = v.transpose() * root.asDiagonal();
  return d;
}

inline Eigen::Matrix4d rate_matrix(const SubstitutionParams& params) {
  validate(params);
  const auto rates = params.relative_rates();
  const auto freqs = params.frequencies();
  const auto q = normalized_rate_matrix(rates, freqs);
  Eigen::Matrix4d out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out(i, j) = q[i][j];
  return out;
}

inline RateMatrixDecomposition build_rate_matrix(const SubstitutionParams& params) {
  const Eigen::Matrix4d q = rate_matrix(params);
  const auto freqs = params.frequencies();
  return spectral_decompose(q, Eigen::Vector4d(freqs[0], freqs[1], freqs[2], freqs[3]));
}

struct TransitionMatrix {
  Eigen::Matrix4d p;
  double b = 0.0;
};

/// P(b) = U diag(exp(lambda b)) U^{-1}.
inline TransitionMatrix transition_matrix(const RateMatrixDecomposition& d, double b) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw ModelError("transition_matrix: branch length must be >= 0");
  if (b == 0.0) return {Eigen::Matrix4d::Identity(), b};
  const Eigen::Vector4d eta = (d.eigenvalues * b).array().exp();
  Eigen::Matrix4d p = d.u * eta.asDiagonal() * d.u_inv;
  // Only round-off lands outside [0, 1].
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  return {p, b};
}

/// Analytic P(b) for JC69 and K80 under the same rate-1 time scaling as
/// build_rate_matrix. Used as an independent check of the spectral path.
inline TransitionMatrix closed_form_transition(ModelFamily family, double kappa, double b) {
  if (!(b >= 0.0)) throw ModelError("closed_form_transition: branch length must be >= 0");
  if (family == ModelFamily::GTR) throw ModelError("closed_form_transition: no closed form for GTR");
  if (family == ModelFamily::JC69) kappa = 1.0;
  if (!(kappa > 0.0)) throw ModelError("closed_form_transition: kappa must be positive");
  // Normalized K80: transversion rate 1/(k+2) per target, transition rate k/(k+2).
  const double transversion_decay = std::exp(-4.0 * b / (kappa + 2.0));
  const double transition_decay = std::exp(-2.0 * (kappa + 1.0) * b / (kappa + 2.0));
  const double same = 0.25 + 0.25 * transversion_decay + 0.5 * transition_decay;
  const double transition = 0.25 + 0.25 * transversion_decay - 0.5 * transition_decay;
  const double transversion = 0.25 - 0.25 * transversion_decay;
  TransitionMatrix out;
  out.b = b;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      out.p(i, j) = i == j ? same : (is_transition(i, j) ? transition : transversion);
    }
  }
  return out;
}

}  // namespace evovgm
