#pragma once

// Generating model and the multi-sample ELBO estimator.
//
// For draw index l, one branch vector b^{.,l} and one substitution sample
// psi^l are shared by all sites, and each site gets its own relaxed ancestor
// a_n^l. The likelihood is top-down: x_hat = a_n^T P(b^m) is the categorical
// distribution of leaf m. The estimator is
//
//   loglik = sum_n (1/L) sum_l sum_m log x_hat[x_n^m]
//   kl     = sum_n KL(q(a_n | x_n) || p(a)) + N (sum_m KL(q(b^m) || p(b)) + KL(q(psi) || p(psi)))
//   elbo   = loglik - alpha_kl * kl

#include "evovgm/distributions.hpp"
#include "evovgm/encoders.hpp"
#include "evovgm/grad_engine.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/subst_models.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <tuple>
#include <optional>
#include <stdexcept>
#include <vector>

namespace evovgm {

inline constexpr double kDefaultAlphaKl = 1e-3;
inline constexpr double kDefaultTemperature = 0.1;

/// log p(x_n | a, b, psi) for one site: sum over leaves of log(a^T P^m)[x^m].
inline double site_log_likelihood(const std::array<double, 4>& ancestor,
                                  const std::vector<TransitionMatrix>& transitions, const Eigen::MatrixXd& site) {
  if (static_cast<std::size_t>(site.rows()) != transitions.size() || site.cols() != 4) {
    throw std::invalid_argument("site_log_likelihood: need one transition matrix per site row");
  }
  const Eigen::RowVector4d a(ancestor[0], ancestor[1], ancestor[2], ancestor[3]);
  double out = 0.0;
  for (std::size_t m = 0; m < transitions.size(); ++m) {
    const Eigen::RowVector4d x_hat = a * transitions[m].p;
    const double p = x_hat.dot(site.row(static_cast<Eigen::Index>(m)));
    out += std::log(std::max(p, kProbabilityFloor));
  }
  return out;
}

namespace ad_ops {

/// P = exp(Q b) as a tape node, from a precomputed decomposition of Q's value.
/// The Q gradient uses the divided-difference (Daleckii-Krein) form of the
/// matrix exponential derivative; db picks up <G, Q P>.
inline ad::Var transition(const ad::Var& q, std::shared_ptr<const RateMatrixDecomposition> d, const ad::Var& b) {
  if (q.rows() != 4 || q.cols() != 4 || !b.is_scalar()) throw std::invalid_argument("transition: need 4x4 Q and scalar b");
  const double length = b.scalar();
  const TransitionMatrix tm = transition_matrix(*d, length);
  const std::size_t iq = q.id(), ib = b.id();
  return q.tape().record(ad::Matrix(tm.p), {q, b}, [iq, ib, d, length](ad::Tape& t, const ad::Matrix& g) {
    const Eigen::Matrix4d upstream = g;
    const Eigen::Vector4d mu = d->eigenvalues * length;
    const Eigen::Vector4d e = mu.array().exp();
    if (t.requires_grad(ib)) {
      const Eigen::Matrix4d p = d->u * e.asDiagonal() * d->u_inv;
      t.accumulate(ib, ad::Matrix::Constant(1, 1, upstream.cwiseProduct(d->q * p).sum()));
    }
    if (t.requires_grad(iq)) {
      Eigen::Matrix4d f;
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          // (e_i - e_j) / (mu_i - mu_j), scaled by the larger exponential.
          const double gap = std::fabs(mu(i) - mu(j));
          const double top = std::max(e(i), e(j));
          f(i, j) = gap == 0.0 ? top : top * -std::expm1(-gap) / gap;
        }
      }
      const Eigen::Matrix4d inner = d->u.transpose() * upstream * d->u_inv.transpose();
      const Eigen::Matrix4d dA = d->u_inv.transpose() * f.cwiseProduct(inner) * d->u.transpose();
      t.accumulate(iq, ad::Matrix(length * dA));
    }
  });
}

/// Sum over sites of log(a_n^T P)[x_n] for one leaf. `ancestors` is N x 4.
inline ad::Var top_down_loglik(const ad::Var& ancestors, const ad::Var& p,
                               std::shared_ptr<const std::vector<std::uint8_t>> observed_states) {
  const std::vector<std::uint8_t>& observed = *observed_states;
  if (ancestors.cols() != 4 || p.rows() != 4 || p.cols() != 4 ||
      static_cast<std::size_t>(ancestors.rows()) != observed.size()) {
    throw std::invalid_argument("top_down_loglik: shape mismatch");
  }
  const ad::Matrix& a = ancestors.value();
  const ad::Matrix& pm = p.value();
  const Eigen::Index N = a.rows();
  Eigen::VectorXd probs(N);
  double total = 0.0;
  for (Eigen::Index n = 0; n < N; ++n) {
    const int x = observed[static_cast<std::size_t>(n)];
    const double v = a(n, 0) * pm(0, x) + a(n, 1) * pm(1, x) + a(n, 2) * pm(2, x) + a(n, 3) * pm(3, x);
    probs(n) = v;
    total += std::log(std::max(v, kProbabilityFloor));
  }
  const std::size_t ia = ancestors.id(), ip = p.id();
  return ancestors.tape().record(
      ad::Matrix::Constant(1, 1, total), {ancestors, p},
      [ia, ip, probs, observed_states](ad::Tape& t, const ad::Matrix& g) {
        const std::vector<std::uint8_t>& observed = *observed_states;
        const ad::Matrix& a = t.value(ia);
        const ad::Matrix& pm = t.value(ip);
        const bool want_a = t.requires_grad(ia), want_p = t.requires_grad(ip);
        ad::Matrix da = want_a ? ad::Matrix::Zero(a.rows(), 4) : ad::Matrix();
        ad::Matrix dp = ad::Matrix::Zero(4, 4);
        for (Eigen::Index n = 0; n < a.rows(); ++n) {
          if (probs(n) <= kProbabilityFloor) continue;
          const double w = g(0, 0) / probs(n);
          const int x = observed[static_cast<std::size_t>(n)];
          for (int i = 0; i < 4; ++i) {
            if (want_a) da(n, i) = w * pm(i, x);
            dp(i, x) += w * a(n, i);
          }
        }
        if (want_a) t.accumulate(ia, da);
        if (want_p) t.accumulate(ip, dp);
      });
}

}  // namespace ad_ops

/// Distribution parameters produced by the encoders for one alignment.
struct EncoderOutputs {
  ad::Var ancestor_probs;  // N x 4
  ad::Var branch_shape;    // 1 x M
  ad::Var branch_rate;     // 1 x M
  std::optional<ad::Var> kappa_shape, kappa_rate;  // 1 x 1 each (K80)
  std::optional<ad::Var> rho_concentration;        // 1 x 6 (GTR)
  std::optional<ad::Var> pi_concentration;         // 1 x 4 (GTR)
};

inline EncoderOutputs run_encoders(const ParameterVars& vars, ModelFamily family, const ad::Var& flat_sites) {
  EncoderOutputs out;
  out.ancestor_probs = encode_ancestors(vars, flat_sites);
  std::tie(out.branch_shape, out.branch_rate) = encode_branches(vars);
  if (family == ModelFamily::K80) {
    auto [shape, rate] = encode_kappa(vars);
    out.kappa_shape = shape;
    out.kappa_rate = rate;
  } else if (family == ModelFamily::GTR) {
    auto [rho, pi] = encode_gtr(vars);
    out.rho_concentration = rho;
    out.pi_concentration = pi;
  }
  return out;
}

/// L paired draws of every latent variable.
struct LatentSampleBatch {
  std::vector<ad::Var> ancestors;  // L entries, each N x 4 on the simplex
  ad::Var branches;                // L x M
  std::optional<ad::Var> kappa;    // L x 1
  std::optional<ad::Var> rho;      // L x 6
  std::optional<ad::Var> pi;       // L x 4

  std::size_t size() const { return ancestors.size(); }
};

/// Draw order is fixed (branches, psi, then ancestors by l) so a seed fully
/// determines the batch.
inline LatentSampleBatch sample_latents(const EncoderOutputs& enc, ModelFamily family, NoiseSource& noise,
                                        std::size_t L, double temperature) {
  if (L == 0) throw std::invalid_argument("sample_latents: L must be at least 1");
  LatentSampleBatch batch;
  batch.branches = ad_ops::sample_gamma_reparam(enc.branch_shape, enc.branch_rate, noise, L);
  if (family == ModelFamily::K80) {
    batch.kappa = ad_ops::sample_gamma_reparam(*enc.kappa_shape, *enc.kappa_rate, noise, L);
  } else if (family == ModelFamily::GTR) {
    batch.rho = ad_ops::sample_dirichlet_reparam(*enc.rho_concentration, noise, L);
    batch.pi = ad_ops::sample_dirichlet_reparam(*enc.pi_concentration, noise, L);
  }
  batch.ancestors = ad_ops::sample_categorical_relaxed(enc.ancestor_probs, noise, temperature, L);
  return batch;
}

struct ElboBreakdown {
  double elbo = 0.0;
  double loglik = 0.0;
  double kl_total = 0.0;
  double kl_ancestors = 0.0;
  double kl_branches = 0.0;
  double kl_subst = 0.0;
};

/// Tape nodes of the estimator plus their values.
struct ElboTerms {
  ad::Var elbo;
  ad::Var loglik;
  ad::Var kl_total;
  ElboBreakdown values;
};

namespace detail {

struct SubstitutionSample {
  ad::Var q;
  std::shared_ptr<const RateMatrixDecomposition> decomposition;
};

inline SubstitutionSample substitution_sample(ad::Tape& tape, ModelFamily family, const LatentSampleBatch& batch,
                                              std::size_t l) {
  const auto idx = static_cast<Eigen::Index>(l);
  std::array<ad::Var, kRateCount> rates;
  std::array<ad::Var, kAlphabetSize> freqs;
  Eigen::Vector4d freq_values = Eigen::Vector4d::Constant(0.25);
  if (family == ModelFamily::K80) {
    const ad::Var kappa = ad::element(*batch.kappa, idx, 0);
    const ad::Var one = tape.constant(1.0);
    rates = {kappa, one, one, one, one, kappa};
    const ad::Var quarter = tape.constant(0.25);
    freqs = {quarter, quarter, quarter, quarter};
  } else {
    for (std::size_t k = 0; k < kRateCount; ++k) rates[k] = ad::element(*batch.rho, idx, static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < kAlphabetSize; ++k) {
      freqs[k] = ad::element(*batch.pi, idx, static_cast<Eigen::Index>(k));
      freq_values(static_cast<Eigen::Index>(k)) = freqs[k].scalar();
    }
  }
  const auto q = normalized_rate_matrix(rates, freqs);
  std::vector<ad::Var> entries;
  entries.reserve(16);
  for (const auto& r : q)
    for (const auto& e : r) entries.push_back(e);
  SubstitutionSample out;
  out.q = ad::stack(entries, 4, 4);
  out.decomposition = std::make_shared<const RateMatrixDecomposition>(
      spectral_decompose(Eigen::Matrix4d(out.q.value()), freq_values));
  return out;
}

}  // namespace detail

/// Multi-sample ELBO. `x` must be the alignment the encoder outputs were computed from.
inline ElboTerms elbo_estimate(const EncodedAlignment& x, ModelFamily family, const LatentSampleBatch& batch,
                               const EncoderOutputs& enc, const PriorConfig& priors, double alpha_kl) {
  const std::size_t L = batch.size();
  if (L == 0) throw std::invalid_argument("elbo_estimate: empty sample batch");
  if (static_cast<std::size_t>(batch.branches.rows()) != L ||
      (batch.kappa && static_cast<std::size_t>(batch.kappa->rows()) != L) ||
      (batch.rho && static_cast<std::size_t>(batch.rho->rows()) != L) ||
      (batch.pi && static_cast<std::size_t>(batch.pi->rows()) != L)) {
    throw std::invalid_argument("elbo_estimate: sample batch components disagree on L");
  }
  if (static_cast<std::size_t>(batch.branches.cols()) != x.M()) {
    throw std::invalid_argument("elbo_estimate: branch sample width does not match the alignment");
  }
  if (family == ModelFamily::K80 && !batch.kappa) throw std::invalid_argument("elbo_estimate: missing kappa samples");
  if (family == ModelFamily::GTR && (!batch.rho || !batch.pi)) {
    throw std::invalid_argument("elbo_estimate: missing rho/pi samples");
  }

  ad::Tape& tape = batch.branches.tape();
  std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> observed;
  for (std::size_t m = 0; m < x.M(); ++m) {
    observed.push_back(std::make_shared<const std::vector<std::uint8_t>>(x.sequence_states(m)));
  }

  std::optional<detail::SubstitutionSample> fixed;
  if (family == ModelFamily::JC69) {
    const auto d = std::make_shared<const RateMatrixDecomposition>(build_rate_matrix(SubstitutionParams::jc69()));
    fixed = detail::SubstitutionSample{tape.constant(ad::Matrix(d->q)), d};
  }

  std::vector<ad::Var> terms;
  terms.reserve(L * x.M());
  for (std::size_t l = 0; l < L; ++l) {
    const detail::SubstitutionSample s = fixed ? *fixed : detail::substitution_sample(tape, family, batch, l);
    for (std::size_t m = 0; m < x.M(); ++m) {
      const ad::Var b = ad::element(batch.branches, static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(m));
      const ad::Var p = ad_ops::transition(s.q, s.decomposition, b);
      terms.push_back(ad_ops::top_down_loglik(batch.ancestors[l], p, observed[m]));
    }
  }
  ad::Var loglik = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) loglik = loglik + terms[k];
  loglik = loglik * (1.0 / static_cast<double>(L));

  const double N = static_cast<double>(x.N());
  const ad::Var kl_anc = ad_ops::kl_categorical(enc.ancestor_probs, priors.ancestor);
  const ad::Var kl_br = ad_ops::kl_gamma(enc.branch_shape, enc.branch_rate, priors.branch);
  ad::Var kl_subst = tape.constant(0.0);
  if (family == ModelFamily::K80) {
    kl_subst = ad_ops::kl_gamma(*enc.kappa_shape, *enc.kappa_rate, priors.kappa);
  } else if (family == ModelFamily::GTR) {
    kl_subst = ad_ops::kl_dirichlet(*enc.rho_concentration, priors.rho) +
               ad_ops::kl_dirichlet(*enc.pi_concentration, priors.pi);
  }
  const ad::Var kl_total = kl_anc + N * (kl_br + kl_subst);
  const ad::Var elbo = loglik - alpha_kl * kl_total;

  ElboTerms out{elbo, loglik, kl_total, {}};
  out.values.elbo = elbo.scalar();
  out.values.loglik = loglik.scalar();
  out.values.kl_total = kl_total.scalar();
  out.values.kl_ancestors = kl_anc.scalar();
  out.values.kl_branches = kl_br.scalar();
  out.values.kl_subst = kl_subst.scalar();
  return out;
}

}  // namespace evovgm
