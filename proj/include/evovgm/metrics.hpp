#pragma once

// Recovery metrics between estimated and true parameter arrays.

#include "evovgm/special_functions.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace evovgm {

struct RecoveryScore {
  double dist = 0.0;
  double corr = 0.0;
  double pval = 1.0;
};

struct Correlation {
  double corr = 0.0;
  double pval = 1.0;
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("euclidean: vectors must have equal non-zero length (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Sample Pearson correlation with its two-sided t-test p-value (n - 2 dof).
inline Correlation pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 3) throw std::invalid_argument("pearson: need at least 3 points");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b)) throw std::domain_error("pearson: correlation undefined for a constant vector");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::domain_error("pearson: correlation undefined for a constant vector");
  Correlation out;
  out.corr = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  const double dof = n - 2.0;
  if (std::fabs(out.corr) >= 1.0) {
    out.pval = 0.0;
  } else {
    const double t = out.corr * std::sqrt(dof / (1.0 - out.corr * out.corr));
    out.pval = std::clamp(special::student_t_two_sided_p(t, dof), 0.0, 1.0);
  }
  return out;
}

inline double kappa_ratio(double estimated, double actual) {
  if (!(actual > 0.0)) throw std::invalid_argument("kappa_ratio: actual kappa must be positive");
  return estimated / actual;
}

inline RecoveryScore recovery(std::span<const double> estimated, std::span<const double> actual) {
  const Correlation c = pearson(estimated, actual);
  return {euclidean(estimated, actual), c.corr, c.pval};
}

}  // namespace evovgm
