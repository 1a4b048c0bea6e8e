#pragma once

// Central-difference check of d f / d (every encoder weight), where f is a
// scalar built on a tape from bound VariationalParameters. Noise must be
// fixed inside f (common random numbers) for the comparison to be meaningful.

#include "evovgm/encoders.hpp"
#include "evovgm/grad_engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace testing_support {

using WeightFunction = std::function<evovgm::ad::Var(evovgm::ad::Tape&, const evovgm::ParameterVars&)>;

struct WeightCheck {
  double max_relative_error = 0.0;
  std::size_t components = 0;
};

/// `stride` > 1 checks every stride-th weight to bound the cost on large nets.
inline WeightCheck check_weight_gradients(const evovgm::VariationalParameters& params, const WeightFunction& f,
                                          double eps = 1e-6, std::size_t stride = 1, double floor = 1e-8) {
  using namespace evovgm;
  std::vector<Eigen::MatrixXd> analytic;
  {
    ad::Tape tape;
    const ParameterVars vars = bind(tape, params, true);
    tape.backward(f(tape, vars));
    for (const ad::Var& v : vars.all) analytic.push_back(v.grad());
  }
  auto value_at = [&](const VariationalParameters& p) {
    ad::Tape tape;
    return f(tape, bind(tape, p, false)).scalar();
  };
  WeightCheck out;
  VariationalParameters work = params;
  const auto tensors = work.tensors();
  std::size_t counter = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    for (Eigen::Index i = 0; i < tensors[k]->size(); ++i) {
      if (counter++ % stride != 0) continue;
      double& w = tensors[k]->data()[i];
      const double saved = w;
      w = saved + eps;
      const double fp = value_at(work);
      w = saved - eps;
      const double fm = value_at(work);
      w = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denominator = std::max({std::fabs(a), std::fabs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, std::fabs(a - numeric) / denominator);
      ++out.components;
    }
  }
  return out;
}

}  // namespace testing_support
