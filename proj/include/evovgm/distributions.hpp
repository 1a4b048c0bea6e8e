#pragma once

// Gamma, Dirichlet and Categorical families: densities, closed-form KL
// divergences, and pathwise (reparameterized) samplers on the tape.
//
// Gamma draws use the inverse CDF of a uniform, so for fixed noise a draw is
// a smooth function of its shape. Its shape derivative is the implicit
// reparameterization gradient ds/da = -(dF/da) / pdf(s); rate enters through
// the scale property s = s1 / rate. Dirichlet draws normalize independent
// Gamma(alpha_k, 1) draws. Ancestral states use the Gumbel-softmax relaxation.

#include "evovgm/grad_engine.hpp"
#include "evovgm/random.hpp"
#include "evovgm/special_functions.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace evovgm {

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbabilityFloor = 1e-10;
/// Floor on Dirichlet components; keeps sqrt(pi) well conditioned in the
/// symmetrized eigendecomposition.
inline constexpr double kSimplexFloor = 1e-6;
/// Smallest gamma draw; below it the draw and its gradient are frozen.
inline constexpr double kMinGammaDraw = 1e-300;

class DistributionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GammaSpec {
  double shape = 1.0;
  double rate = 1.0;

  double mean() const { return shape / rate; }
  double variance() const { return shape / (rate * rate); }
};

struct DirichletSpec {
  std::vector<double> concentration;

  double total() const {
    double s = 0.0;
    for (double a : concentration) s += a;
    return s;
  }
  std::vector<double> mean() const {
    std::vector<double> out(concentration.size());
    const double s = total();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = concentration[k] / s;
    return out;
  }
};

struct CategoricalSpec {
  std::array<double, 4> probs{0.25, 0.25, 0.25, 0.25};
};

inline void validate(const GammaSpec& g) {
  if (!(g.shape > 0.0) || !(g.rate > 0.0) || !std::isfinite(g.shape) || !std::isfinite(g.rate)) {
    throw DistributionError("gamma spec needs positive finite shape and rate");
  }
}

inline void validate(const DirichletSpec& d) {
  if (d.concentration.size() < 2) throw DistributionError("dirichlet spec needs at least two components");
  for (double a : d.concentration) {
    if (!(a > 0.0) || !std::isfinite(a)) throw DistributionError("dirichlet concentrations must be positive");
  }
}

inline void validate(const CategoricalSpec& c) {
  double total = 0.0;
  for (double p : c.probs) {
    if (!(p >= 0.0)) throw DistributionError("categorical probabilities must be non-negative");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw DistributionError("categorical probabilities must sum to 1");
}

// ---------------------------------------------------------------------------
// Densities

inline double log_density(const GammaSpec& g, double x) {
  validate(g);
  if (!(x > 0.0)) throw DistributionError("gamma density evaluated outside its support");
  return g.shape * std::log(g.rate) + (g.shape - 1.0) * std::log(x) - g.rate * x - special::log_gamma(g.shape);
}

inline double log_density(const DirichletSpec& d, const std::vector<double>& x) {
  validate(d);
  if (x.size() != d.concentration.size()) throw DistributionError("dirichlet density: dimension mismatch");
  double out = special::log_gamma(d.total());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0)) throw DistributionError("dirichlet density evaluated outside the open simplex");
    out += (d.concentration[k] - 1.0) * std::log(x[k]) - special::log_gamma(d.concentration[k]);
  }
  return out;
}

inline double log_prob(const CategoricalSpec& c, std::size_t i) {
  return std::log(std::max(c.probs.at(i), kProbabilityFloor));
}

// ---------------------------------------------------------------------------
// Closed-form KL divergences

inline double kl_gamma(const GammaSpec& q, const GammaSpec& p) {
  validate(q);
  validate(p);
  return (q.shape - p.shape) * special::digamma(q.shape) - special::log_gamma(q.shape) +
         special::log_gamma(p.shape) + p.shape * (std::log(q.rate) - std::log(p.rate)) +
         q.shape * (p.rate - q.rate) / q.rate;
}

inline double kl_dirichlet(const DirichletSpec& q, const DirichletSpec& p) {
  validate(q);
  validate(p);
  if (q.concentration.size() != p.concentration.size()) throw DistributionError("kl_dirichlet: dimension mismatch");
  const double q0 = q.total();
  const double p0 = p.total();
  double out = special::log_gamma(q0) - special::log_gamma(p0);
  const double psi0 = special::digamma(q0);
  for (std::size_t k = 0; k < q.concentration.size(); ++k) {
    const double a = q.concentration[k];
    const double b = p.concentration[k];
    out += special::log_gamma(b) - special::log_gamma(a) + (a - b) * (special::digamma(a) - psi0);
  }
  return out;
}

inline double kl_categorical(const CategoricalSpec& q, const CategoricalSpec& p) {
  validate(q);
  validate(p);
  double out = 0.0;
  for (std::size_t i = 0; i < q.probs.size(); ++i) {
    if (q.probs[i] == 0.0) continue;
    if (p.probs[i] == 0.0) throw DistributionError("kl_categorical: q has mass where p has none");
    out += q.probs[i] * std::log(q.probs[i] / p.probs[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain samplers

/// Gamma(shape, 1) draw by inversion of the regularized incomplete gamma.
inline double gamma_unit_quantile(double shape, double u) {
  return std::max(special::gamma_p_inverse(shape, u), kMinGammaDraw);
}

/// d/dshape of gamma_unit_quantile at fixed u, given the draw x.
inline double gamma_unit_quantile_shape_derivative(double shape, double x) {
  if (x <= kMinGammaDraw) return 0.0;
  const double density = std::exp(special::log_gamma_density_unit(shape, x));
  if (!(density > 0.0) || !std::isfinite(density)) return 0.0;
  return -special::gamma_p_shape_derivative(shape, x) / density;
}

inline std::vector<double> sample_gamma(const GammaSpec& g, NoiseSource& noise, std::size_t count) {
  validate(g);
  std::vector<double> out(count);
  for (double& x : out) x = gamma_unit_quantile(g.shape, noise.uniform()) / g.rate;
  return out;
}

inline std::vector<std::vector<double>> sample_dirichlet(const DirichletSpec& d, NoiseSource& noise,
                                                         std::size_t count) {
  validate(d);
  std::vector<std::vector<double>> out(count, std::vector<double>(d.concentration.size()));
  for (auto& draw : out) {
    double total = 0.0;
    for (std::size_t k = 0; k < draw.size(); ++k) {
      draw[k] = gamma_unit_quantile(d.concentration[k], noise.uniform());
      total += draw[k];
    }
    double floored = 0.0;
    for (double& x : draw) floored += x = std::max(x / total, kSimplexFloor);
    for (double& x : draw) x /= floored;
  }
  return out;
}

/// Gumbel-softmax draws: softmax((log p + G) / temperature).
inline std::vector<std::array<double, 4>> sample_categorical_relaxed(const CategoricalSpec& c, NoiseSource& noise,
                                                                     double temperature, std::size_t count) {
  validate(c);
  if (!(temperature > 0.0)) throw DistributionError("temperature must be positive");
  std::vector<std::array<double, 4>> out(count);
  for (auto& draw : out) {
    std::array<double, 4> logits{};
    for (std::size_t i = 0; i < 4; ++i) {
      logits[i] = (std::log(std::max(c.probs[i], kProbabilityFloor)) + noise.gumbel()) / temperature;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) total += draw[i] = std::exp(logits[i] - top);
    for (double& x : draw) x /= total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable samplers and KL terms

namespace ad_ops {

using ad::Matrix;
using ad::Tape;
using ad::Var;

/// Gamma draws with fixed uniform noise. `shape` and `rate` are 1 x K rows;
/// `uniforms` is L x K and the result is L x K.
inline Var gamma_draws(const Var& shape, const Var& rate, const Matrix& uniforms) {
  if (shape.rows() != 1 || rate.rows() != 1 || shape.cols() != rate.cols() || uniforms.cols() != shape.cols()) {
    throw DistributionError("gamma_draws: shape/rate must be matching 1 x K rows and noise L x K");
  }
  const Matrix& a = shape.value();
  const Matrix& b = rate.value();
  for (Eigen::Index k = 0; k < a.cols(); ++k) validate(GammaSpec{a(0, k), b(0, k)});

  const Eigen::Index L = uniforms.rows(), K = uniforms.cols();
  Matrix unit(L, K);
  Matrix dunit_dshape(L, K);
  for (Eigen::Index l = 0; l < L; ++l) {
    for (Eigen::Index k = 0; k < K; ++k) {
      unit(l, k) = gamma_unit_quantile(a(0, k), uniforms(l, k));
      dunit_dshape(l, k) = gamma_unit_quantile_shape_derivative(a(0, k), unit(l, k));
    }
  }
  Matrix out = unit.array().rowwise() / b.row(0).array();
  const std::size_t is = shape.id(), ir = rate.id();
  return shape.tape().record(std::move(out), {shape, rate},
                             [is, ir, unit, dunit_dshape](Tape& t, const Matrix& g) {
                               const Eigen::RowVectorXd r = t.value(ir).row(0);
                               if (t.requires_grad(is)) {
                                 Matrix ds = g.cwiseProduct(dunit_dshape);
                                 t.accumulate(is, (ds.colwise().sum().array() / r.array()).matrix());
                               }
                               if (t.requires_grad(ir)) {
                                 // s = s1 / rate  =>  ds/drate = -s1 / rate^2
                                 Matrix ds = g.cwiseProduct(unit);
                                 t.accumulate(ir, (-ds.colwise().sum().array() / (r.array() * r.array())).matrix());
                               }
                             });
}

/// L reparameterized draws per component of a 1 x K Gamma row.
inline Var sample_gamma_reparam(const Var& shape, const Var& rate, NoiseSource& noise, std::size_t count) {
  if (count == 0) throw DistributionError("sample count must be at least 1");
  Matrix u(static_cast<Eigen::Index>(count), shape.cols());
  for (Eigen::Index l = 0; l < u.rows(); ++l)
    for (Eigen::Index k = 0; k < u.cols(); ++k) u(l, k) = noise.uniform();
  return gamma_draws(shape, rate, u);
}

/// L x K simplex draws from Dirichlet(concentration), concentration a 1 x K row.
inline Var dirichlet_draws(const Var& concentration, const Matrix& uniforms) {
  Tape& t = concentration.tape();
  const Var ones = t.constant(Matrix::Ones(1, concentration.cols()));
  const Var gammas = gamma_draws(concentration, ones, uniforms);
  const Var normalized = ad::normalize_rows(gammas);
  return ad::normalize_rows(ad::floor_at(normalized, kSimplexFloor));
}

inline Var sample_dirichlet_reparam(const Var& concentration, NoiseSource& noise, std::size_t count) {
  if (count == 0) throw DistributionError("sample count must be at least 1");
  Matrix u(static_cast<Eigen::Index>(count), concentration.cols());
  for (Eigen::Index l = 0; l < u.rows(); ++l)
    for (Eigen::Index k = 0; k < u.cols(); ++k) u(l, k) = noise.uniform();
  return dirichlet_draws(concentration, u);
}

/// softmax((logits + gumbel) / temperature) row by row, as a single tape node.
inline Var relaxed_from_logits(const Var& logits, const Matrix& gumbel, double temperature) {
  if (!(temperature > 0.0)) throw DistributionError("temperature must be positive");
  if (gumbel.rows() != logits.rows() || gumbel.cols() != logits.cols()) {
    throw DistributionError("gumbel_softmax: noise shape must match probabilities");
  }
  const double inv = 1.0 / temperature;
  Matrix y = (logits.value() + gumbel) * inv;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double top = y.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < y.cols(); ++c) total += y(r, c) = std::exp(y(r, c) - top);
    y.row(r) /= total;
  }
  const std::size_t il = logits.id();
  Matrix kept = y;
  return logits.tape().record(std::move(y), {logits}, [il, inv, kept = std::move(kept)](Tape& t, const Matrix& g) {
    if (!t.requires_grad(il)) return;
    const Eigen::VectorXd inner = g.cwiseProduct(kept).rowwise().sum();
    t.accumulate(il, Matrix(inv * kept.cwiseProduct(g.colwise() - inner)));
  });
}

/// Gumbel-softmax relaxation of each row of `probs` (R x 4) with fixed Gumbel noise.
inline Var gumbel_softmax(const Var& probs, const Matrix& gumbel, double temperature) {
  if (!(temperature > 0.0)) throw DistributionError("temperature must be positive");
  if (gumbel.rows() != probs.rows() || gumbel.cols() != probs.cols()) {
    throw DistributionError("gumbel_softmax: noise shape must match probabilities");
  }
  return relaxed_from_logits(ad::log(ad::floor_at(probs, kProbabilityFloor)), gumbel, temperature);
}

inline Var sample_categorical_relaxed(const Var& probs, NoiseSource& noise, double temperature) {
  Matrix g(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = noise.gumbel();
  return gumbel_softmax(probs, g, temperature);
}

/// `count` independent relaxed draws sharing one log-probability node.
inline std::vector<Var> sample_categorical_relaxed(const Var& probs, NoiseSource& noise, double temperature,
                                                   std::size_t count) {
  const Var logits = ad::log(ad::floor_at(probs, kProbabilityFloor));
  std::vector<Var> out;
  out.reserve(count);
  Matrix g(probs.rows(), probs.cols());
  for (std::size_t l = 0; l < count; ++l) {
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = noise.gumbel();
    out.push_back(relaxed_from_logits(logits, g, temperature));
  }
  return out;
}

/// Sum over the K components of KL(Gamma(shape_k, rate_k) || prior).
inline Var kl_gamma(const Var& shape, const Var& rate, const GammaSpec& prior) {
  validate(prior);
  Tape& t = shape.tape();
  const Var a2 = t.constant(prior.shape);
  const Var lb2 = t.constant(std::log(prior.rate));
  const Var terms = (shape - a2) * ad::digamma(shape) - ad::lgamma(shape) + special::log_gamma(prior.shape) +
                    a2 * (ad::log(rate) - lb2) + shape * (prior.rate - rate) / rate;
  return ad::sum(terms);
}

/// KL(Dirichlet(concentration) || prior), concentration a 1 x K row.
inline Var kl_dirichlet(const Var& concentration, const DirichletSpec& prior) {
  validate(prior);
  if (static_cast<std::size_t>(concentration.cols()) != prior.concentration.size() || concentration.rows() != 1) {
    throw DistributionError("kl_dirichlet: dimension mismatch");
  }
  Tape& t = concentration.tape();
  Matrix b(1, concentration.cols());
  double lgamma_b = 0.0;
  for (Eigen::Index k = 0; k < b.cols(); ++k) {
    b(0, k) = prior.concentration[static_cast<std::size_t>(k)];
    lgamma_b += special::log_gamma(b(0, k));
  }
  const Var total = ad::sum(concentration);
  const Var psi_diff = ad::digamma(concentration) - ad::digamma(total);
  const Var cross = ad::sum((concentration - t.constant(b)) * psi_diff);
  return ad::lgamma(total) - special::log_gamma(prior.total()) - ad::sum(ad::lgamma(concentration)) + lgamma_b + cross;
}

/// Sum over rows of KL(Categorical(row) || prior), probs R x 4.
inline Var kl_categorical(const Var& probs, const CategoricalSpec& prior) {
  validate(prior);
  Tape& t = probs.tape();
  Matrix log_prior(1, 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    if (prior.probs[static_cast<std::size_t>(i)] <= 0.0) throw DistributionError("kl_categorical: prior needs full support");
    log_prior(0, i) = std::log(prior.probs[static_cast<std::size_t>(i)]);
  }
  const Var log_q = ad::log(ad::floor_at(probs, kProbabilityFloor));
  const Var log_ratio = ad::add_row(log_q, t.constant(-log_prior));
  return ad::sum(probs * log_ratio);
}

}  // namespace ad_ops

}  // namespace evovgm
