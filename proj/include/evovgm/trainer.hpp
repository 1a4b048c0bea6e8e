#pragma once

// Training loop: sample latents, evaluate the ELBO over every site, backprop,
// and take one Adam ascent step per iteration (full batch, no mini-batching).

#include "evovgm/elbo.hpp"
#include "evovgm/encoders.hpp"
#include "evovgm/grad_engine.hpp"
#include "evovgm/random.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/subst_models.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace evovgm {

struct AdamState {
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update in the ascent direction (weights move along
/// +gradient). Moment buffers are created on the first call.
inline void adam_step(const std::vector<Eigen::MatrixXd*>& weights, const std::vector<Eigen::MatrixXd>& gradients,
                      AdamState& state, double learning_rate) {
  if (weights.size() != gradients.size()) throw std::invalid_argument("adam_step: weight/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const Eigen::MatrixXd* w : weights) {
      state.first_moment.push_back(Eigen::MatrixXd::Zero(w->rows(), w->cols()));
      state.second_moment.push_back(Eigen::MatrixXd::Zero(w->rows(), w->cols()));
    }
  }
  if (state.first_moment.size() != weights.size()) throw std::invalid_argument("adam_step: state does not match weights");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (gradients[i].rows() != weights[i]->rows() || gradients[i].cols() != weights[i]->cols() ||
        state.first_moment[i].rows() != weights[i]->rows() || state.first_moment[i].cols() != weights[i]->cols()) {
      throw std::invalid_argument("adam_step: shape mismatch for tensor " + std::to_string(i));
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Eigen::MatrixXd& m = state.first_moment[i];
    Eigen::MatrixXd& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * gradients[i];
    v = state.beta2 * v + (1.0 - state.beta2) * gradients[i].cwiseProduct(gradients[i]);
    const auto m_hat = (m / correction1).array();
    const auto v_hat = (v / correction2).array();
    weights[i]->array() += learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
  }
}

struct TrainConfig {
  ModelFamily family = ModelFamily::JC69;
  std::size_t iterations = 1000;
  std::size_t samples = 100;
  double alpha_kl = kDefaultAlphaKl;
  double learning_rate = 0.005;
  std::size_t hidden = kDefaultHiddenSize;
  std::uint64_t seed = 42;
  double temperature = kDefaultTemperature;
  PriorConfig priors{};
};

inline void validate(const TrainConfig& c) {
  if (c.samples < 1) throw std::invalid_argument("train config: samples must be at least 1");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
  if (!(c.alpha_kl >= 0.0)) throw std::invalid_argument("train config: alpha_kl must be non-negative");
  if (!(c.temperature > 0.0)) throw std::invalid_argument("train config: temperature must be positive");
  if (c.hidden < 1) throw std::invalid_argument("train config: hidden size must be positive");
  validate(c.priors);
}

struct TrainRecord {
  std::size_t iteration = 0;
  double elbo = 0.0;
  double loglik = 0.0;
  double kl_qp = 0.0;
};

/// Posterior means of the global latent variables.
struct PointEstimates {
  ModelFamily family = ModelFamily::JC69;
  std::vector<double> branches;
  std::optional<double> kappa;
  std::optional<std::vector<double>> rho;
  std::optional<std::vector<double>> pi;
};

struct TrainReport {
  std::vector<TrainRecord> train;
  std::vector<TrainRecord> valid;
  PointEstimates estimates;
  VariationalParameters parameters;
  double seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t iteration, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

inline PointEstimates estimate_point_parameters(const VariationalParameters& params) {
  PointEstimates out;
  out.family = params.family;
  for (const GammaSpec& g : encode_branches(params)) out.branches.push_back(g.mean());
  if (params.family == ModelFamily::K80) out.kappa = encode_kappa(params).mean();
  if (params.family == ModelFamily::GTR) {
    const auto [rho, pi] = encode_gtr(params);
    out.rho = rho.mean();
    out.pi = pi.mean();
  }
  return out;
}

/// ELBO estimate at fixed weights, without gradients.
inline ElboBreakdown evaluate_elbo(const EncodedAlignment& x, const VariationalParameters& params,
                                   const PriorConfig& priors, std::size_t samples, double alpha_kl,
                                   double temperature, NoiseSource& noise) {
  ad::Tape tape;
  const ParameterVars vars = bind(tape, params, false);
  const EncoderOutputs enc = run_encoders(vars, params.family, tape.constant(x.flat));
  const LatentSampleBatch batch = sample_latents(enc, params.family, noise, samples, temperature);
  return elbo_estimate(x, params.family, batch, enc, priors, alpha_kl).values;
}

namespace detail {

// Stream identifiers under one seed.
inline constexpr std::uint64_t kWeightStream = 1;
inline constexpr std::uint64_t kTrainingStream = 2;
inline constexpr std::uint64_t kValidationStream = 3;

inline bool finite(const ElboBreakdown& b) {
  return std::isfinite(b.elbo) && std::isfinite(b.loglik) && std::isfinite(b.kl_total);
}

}  // namespace detail

/// Called after each iteration with the training record and, when a
/// validation alignment is given, its record.
using TrainObserver = std::function<void(const TrainRecord& train, const std::optional<TrainRecord>& valid)>;

inline TrainReport train(const EncodedAlignment& x, const TrainConfig& cfg, const EncodedAlignment* validation = nullptr,
                         const TrainObserver& observer = {}) {
  validate(cfg);
  if (validation && validation->M() != x.M()) {
    throw std::invalid_argument("validation alignment must have the same number of sequences as the training data");
  }
  const auto start = std::chrono::steady_clock::now();

  NoiseSource weight_noise(cfg.seed, detail::kWeightStream);
  NoiseSource noise(cfg.seed, detail::kTrainingStream);
  NoiseSource valid_noise(cfg.seed, detail::kValidationStream);

  TrainReport report;
  report.parameters = init_parameters(cfg.family, x.M(), cfg.hidden, weight_noise);
  VariationalParameters& params = report.parameters;
  AdamState adam;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    TrainRecord rec;
    rec.iteration = it + 1;
    std::optional<TrainRecord> valid_rec;
    std::vector<Eigen::MatrixXd> gradients;
    {
      ad::Tape tape;
      const ParameterVars vars = bind(tape, params, true);
      const EncoderOutputs enc = run_encoders(vars, cfg.family, tape.constant(x.flat));
      const LatentSampleBatch batch = sample_latents(enc, cfg.family, noise, cfg.samples, cfg.temperature);
      const ElboTerms terms = elbo_estimate(x, cfg.family, batch, enc, cfg.priors, cfg.alpha_kl);
      if (!detail::finite(terms.values)) throw TrainingError(rec.iteration, "non-finite ELBO");
      rec.elbo = terms.values.elbo;
      rec.loglik = terms.values.loglik;
      rec.kl_qp = terms.values.kl_total;
      tape.backward(terms.elbo);
      gradients.reserve(vars.all.size());
      for (const ad::Var& v : vars.all) {
        gradients.push_back(v.grad());
        if (!gradients.back().allFinite()) throw TrainingError(rec.iteration, "non-finite gradient");
      }
    }
    if (validation) {
      const ElboBreakdown b =
          evaluate_elbo(*validation, params, cfg.priors, cfg.samples, cfg.alpha_kl, cfg.temperature, valid_noise);
      if (!detail::finite(b)) throw TrainingError(rec.iteration, "non-finite validation ELBO");
      valid_rec = TrainRecord{rec.iteration, b.elbo, b.loglik, b.kl_total};
      report.valid.push_back(*valid_rec);
    }
    report.train.push_back(rec);
    if (observer) observer(rec, valid_rec);
    adam_step(params.tensors(), gradients, adam, cfg.learning_rate);
  }

  report.estimates = estimate_point_parameters(params);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace evovgm
