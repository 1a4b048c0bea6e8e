#pragma once

// Variational encoders.
//
// The ancestor encoder is amortized: a one-hidden-layer network maps the
// flattened M x 4 site column to four categorical probabilities. The global
// encoders (branch lengths, kappa, rho, pi) have no data input; each pushes a
// learnable input vector (initialized to ones) through one hidden layer and a
// softplus head with a 1e-3 floor.

#include "evovgm/distributions.hpp"
#include "evovgm/grad_engine.hpp"
#include "evovgm/random.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/subst_models.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace evovgm {

inline constexpr std::size_t kDefaultHiddenSize = 32;
inline constexpr double kPositiveFloor = 1e-3;

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::MatrixXd bias;    // 1 x fan_out
};

struct Mlp {
  DenseLayer hidden;
  DenseLayer output;
};

struct GlobalEncoder {
  Eigen::MatrixXd input;  // 1 x input width, learnable
  Mlp net;
};

struct VariationalParameters {
  ModelFamily family = ModelFamily::JC69;
  std::size_t sequences = 0;
  std::size_t hidden = kDefaultHiddenSize;

  Mlp ancestor;
  GlobalEncoder branches;
  std::optional<GlobalEncoder> kappa;
  std::optional<GlobalEncoder> rho;
  std::optional<GlobalEncoder> pi;

  /// Every weight matrix in a fixed order; the optimizer state mirrors it.
  std::vector<Eigen::MatrixXd*> tensors() {
    std::vector<Eigen::MatrixXd*> out;
    auto add_mlp = [&](Mlp& m) {
      out.push_back(&m.hidden.weight);
      out.push_back(&m.hidden.bias);
      out.push_back(&m.output.weight);
      out.push_back(&m.output.bias);
    };
    auto add_global = [&](GlobalEncoder& g) {
      out.push_back(&g.input);
      add_mlp(g.net);
    };
    add_mlp(ancestor);
    add_global(branches);
    if (kappa) add_global(*kappa);
    if (rho) add_global(*rho);
    if (pi) add_global(*pi);
    return out;
  }

  std::vector<const Eigen::MatrixXd*> tensors() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (Eigen::MatrixXd* t : const_cast<VariationalParameters*>(this)->tensors()) out.push_back(t);
    return out;
  }
};

namespace detail {

inline DenseLayer glorot_layer(std::size_t fan_in, std::size_t fan_out, NoiseSource& noise) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseLayer layer;
  layer.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = noise.uniform(-limit, limit);
  layer.bias = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(fan_out));
  return layer;
}

inline Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, NoiseSource& noise) {
  Mlp m;
  m.hidden = glorot_layer(in, hidden, noise);
  m.output = glorot_layer(hidden, out, noise);
  return m;
}

inline GlobalEncoder make_global(std::size_t in, std::size_t hidden, std::size_t out, NoiseSource& noise) {
  GlobalEncoder g;
  g.input = Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(in));
  g.net = make_mlp(in, hidden, out, noise);
  return g;
}

}  // namespace detail

/// Fresh encoder weights for M sequences (Glorot-uniform weights, zero biases).
inline VariationalParameters init_parameters(ModelFamily family, std::size_t sequences, std::size_t hidden,
                                             NoiseSource& noise) {
  if (sequences < 1) throw std::invalid_argument("init_parameters: need at least one sequence");
  if (hidden < 1) throw std::invalid_argument("init_parameters: hidden size must be positive");
  VariationalParameters p;
  p.family = family;
  p.sequences = sequences;
  p.hidden = hidden;
  p.ancestor = detail::make_mlp(sequences * kAlphabetSize, hidden, kAlphabetSize, noise);
  p.branches = detail::make_global(sequences, hidden, 2 * sequences, noise);
  if (family == ModelFamily::K80) p.kappa = detail::make_global(1, hidden, 2, noise);
  if (family == ModelFamily::GTR) {
    p.rho = detail::make_global(kRateCount, hidden, kRateCount, noise);
    p.pi = detail::make_global(kAlphabetSize, hidden, kAlphabetSize, noise);
  }
  return p;
}

/// Prior hyper-parameters. Defaults: uniform ancestors, Gamma(0.1, 1) branch
/// lengths (mean 0.1), flat Dirichlet on rho and pi, Gamma(1, 0.1) on kappa.
struct PriorConfig {
  CategoricalSpec ancestor{};
  GammaSpec branch{0.1, 1.0};
  GammaSpec kappa{1.0, 0.1};
  DirichletSpec rho{std::vector<double>(kRateCount, 1.0)};
  DirichletSpec pi{std::vector<double>(kAlphabetSize, 1.0)};
};

inline void validate(const PriorConfig& p) {
  validate(p.ancestor);
  validate(p.branch);
  validate(p.kappa);
  validate(p.rho);
  validate(p.pi);
  if (p.rho.concentration.size() != kRateCount) throw DistributionError("rho prior needs 6 concentrations");
  if (p.pi.concentration.size() != kAlphabetSize) throw DistributionError("pi prior needs 4 concentrations");
}

// ---------------------------------------------------------------------------
// Tape bindings

struct MlpVars {
  ad::Var w1, c1, w2, c2;
};

struct GlobalVars {
  ad::Var input;
  MlpVars net;
};

/// Encoder weights placed on a tape, in the order of VariationalParameters::tensors().
struct ParameterVars {
  MlpVars ancestor;
  GlobalVars branches;
  std::optional<GlobalVars> kappa, rho, pi;
  std::vector<ad::Var> all;
};

/// Puts the weights on `tape`, as trainable leaves or as constants.
inline ParameterVars bind(ad::Tape& tape, const VariationalParameters& params, bool trainable = true) {
  ParameterVars v;
  auto leaf = [&](const Eigen::MatrixXd& m) {
    ad::Var x = trainable ? tape.parameter(m) : tape.constant(m);
    v.all.push_back(x);
    return x;
  };
  auto mlp = [&](const Mlp& m) {
    MlpVars out;
    out.w1 = leaf(m.hidden.weight);
    out.c1 = leaf(m.hidden.bias);
    out.w2 = leaf(m.output.weight);
    out.c2 = leaf(m.output.bias);
    return out;
  };
  auto global = [&](const GlobalEncoder& g) {
    GlobalVars out;
    out.input = leaf(g.input);
    out.net = mlp(g.net);
    return out;
  };
  v.ancestor = mlp(params.ancestor);
  v.branches = global(params.branches);
  if (params.kappa) v.kappa = global(*params.kappa);
  if (params.rho) v.rho = global(*params.rho);
  if (params.pi) v.pi = global(*params.pi);
  return v;
}

namespace detail {

inline ad::Var forward(const MlpVars& m, const ad::Var& x) {
  const ad::Var h = ad::relu(ad::add_row(ad::matmul(x, m.w1), m.c1));
  return ad::add_row(ad::matmul(h, m.w2), m.c2);
}

inline ad::Var positive_head(const GlobalVars& g) {
  return ad::floor_at(ad::softplus(forward(g.net, g.input)), kPositiveFloor);
}

}  // namespace detail

/// Ancestor probabilities for every site: `flat` is N x 4M, result N x 4.
inline ad::Var encode_ancestors(const ParameterVars& v, const ad::Var& flat) {
  if (flat.cols() != v.ancestor.w1.rows()) {
    throw std::invalid_argument("encode_ancestors: site width " + std::to_string(flat.cols()) +
                                " does not match the encoder input width " + std::to_string(v.ancestor.w1.rows()));
  }
  return ad::softmax(detail::forward(v.ancestor, flat));
}

/// (shape, rate) rows, each 1 x M.
inline std::pair<ad::Var, ad::Var> encode_branches(const ParameterVars& v) {
  const ad::Var out = detail::positive_head(v.branches);
  const Eigen::Index M = out.cols() / 2;
  return {ad::slice_cols(out, 0, M), ad::slice_cols(out, M, M)};
}

/// (shape, rate) of the kappa posterior, each 1 x 1.
inline std::pair<ad::Var, ad::Var> encode_kappa(const ParameterVars& v) {
  if (!v.kappa) throw std::logic_error("encode_kappa: model has no kappa encoder");
  const ad::Var out = detail::positive_head(*v.kappa);
  return {ad::slice_cols(out, 0, 1), ad::slice_cols(out, 1, 1)};
}

/// Concentration rows (1 x 6 for rho, 1 x 4 for pi).
inline std::pair<ad::Var, ad::Var> encode_gtr(const ParameterVars& v) {
  if (!v.rho || !v.pi) throw std::logic_error("encode_gtr: model has no GTR encoders");
  return {detail::positive_head(*v.rho), detail::positive_head(*v.pi)};
}

// ---------------------------------------------------------------------------
// Plain-value views of the encoder outputs

inline CategoricalSpec encode_ancestor(const Eigen::MatrixXd& site, const VariationalParameters& params) {
  if (static_cast<std::size_t>(site.rows()) != params.sequences || site.cols() != static_cast<Eigen::Index>(kAlphabetSize)) {
    throw std::invalid_argument("encode_ancestor: site must be " + std::to_string(params.sequences) + " x 4");
  }
  ad::Tape tape;
  const ParameterVars v = bind(tape, params, false);
  Eigen::MatrixXd flat(1, site.size());
  for (Eigen::Index m = 0; m < site.rows(); ++m)
    for (Eigen::Index k = 0; k < site.cols(); ++k) flat(0, m * site.cols() + k) = site(m, k);
  const Eigen::MatrixXd probs = encode_ancestors(v, tape.constant(flat)).value();
  CategoricalSpec out;
  for (std::size_t k = 0; k < kAlphabetSize; ++k) out.probs[k] = probs(0, static_cast<Eigen::Index>(k));
  return out;
}

inline std::vector<GammaSpec> encode_branches(const VariationalParameters& params) {
  ad::Tape tape;
  const auto [shape, rate] = encode_branches(bind(tape, params, false));
  std::vector<GammaSpec> out(static_cast<std::size_t>(shape.cols()));
  for (std::size_t m = 0; m < out.size(); ++m) {
    out[m] = {shape.value()(0, static_cast<Eigen::Index>(m)), rate.value()(0, static_cast<Eigen::Index>(m))};
  }
  return out;
}

inline GammaSpec encode_kappa(const VariationalParameters& params) {
  ad::Tape tape;
  const auto [shape, rate] = encode_kappa(bind(tape, params, false));
  return {shape.scalar(), rate.scalar()};
}

inline std::pair<DirichletSpec, DirichletSpec> encode_gtr(const VariationalParameters& params) {
  ad::Tape tape;
  const auto [rho, pi] = encode_gtr(bind(tape, params, false));
  auto to_spec = [](const Eigen::MatrixXd& m) {
    DirichletSpec d;
    d.concentration.assign(m.data(), m.data() + m.size());
    return d;
  };
  return {to_spec(rho.value()), to_spec(pi.value())};
}

}  // namespace evovgm
