#include "evovgm/subst_models.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace evovgm;

namespace {

std::array<double, 6> random_rho(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(2.0, 1.0);
  std::array<double, 6> r{};
  double t = 0.0;
  for (double& x : r) t += x = g(rng) + 0.01;
  for (double& x : r) x /= t;
  return r;
}

std::array<double, 4> random_pi(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(3.0, 1.0);
  std::array<double, 4> p{};
  double t = 0.0;
  for (double& x : p) t += x = g(rng) + 0.02;
  for (double& x : p) x /= t;
  return p;
}

SubstitutionParams random_gtr(std::mt19937_64& rng) { return SubstitutionParams::gtr(random_rho(rng), random_pi(rng)); }

}  // namespace

TEST(RateMatrix, UniformGtrEqualsJc69) {
  const auto d = build_rate_matrix(SubstitutionParams::gtr({1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6},
                                                           {0.25, 0.25, 0.25, 0.25}));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(d.q(i, j), i == j ? -1.0 : 1.0 / 3.0, 1e-15);
  const auto jc = build_rate_matrix(SubstitutionParams::jc69());
  EXPECT_TRUE(jc.q.isApprox(d.q, 1e-15));
}

TEST(RateMatrix, K80RatesBeforeNormalization) {
  const Eigen::Matrix4d q = rate_matrix(SubstitutionParams::k80(3.0));
  // (A,G,C,T): A<->G and C<->T are transitions.
  EXPECT_NEAR(q(0, 1) / q(0, 2), 3.0, 1e-14);
  EXPECT_NEAR(q(2, 3) / q(2, 1), 3.0, 1e-14);
  EXPECT_NEAR(q(1, 3) / q(0, 2), 1.0, 1e-14);
}

TEST(RateMatrix, InvariantsAndTextbookGenerator) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const SubstitutionParams p = random_gtr(rng);
    const auto d = build_rate_matrix(p);
    const auto pi = p.frequencies();
    double rate = 0.0;
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(d.q.row(i).sum(), 0.0, 1e-10);
      rate -= pi[i] * d.q(i, i);
    }
    EXPECT_NEAR(rate, 1.0, 1e-9);
    EXPECT_TRUE(d.q.isApprox(oracle::gtr_generator(p.relative_rates(), pi), 1e-12));
    const Eigen::Matrix4d rebuilt = d.u * d.eigenvalues.asDiagonal() * d.u_inv;
    EXPECT_LT((rebuilt - d.q).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((d.u * d.u_inv - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    int zeros = 0;
    for (int i = 0; i < 4; ++i) {
      if (std::fabs(d.eigenvalues(i)) < 1e-9) {
        ++zeros;
      } else {
        EXPECT_LT(d.eigenvalues(i), 0.0);
      }
    }
    EXPECT_EQ(zeros, 1);
  }
}

TEST(RateMatrix, Jc69Eigenvalues) {
  const auto d = build_rate_matrix(SubstitutionParams::jc69());
  std::vector<double> ev(d.eigenvalues.data(), d.eigenvalues.data() + 4);
  std::sort(ev.begin(), ev.end());
  EXPECT_NEAR(ev[0], -4.0 / 3.0, 1e-12);
  EXPECT_NEAR(ev[1], -4.0 / 3.0, 1e-12);
  EXPECT_NEAR(ev[2], -4.0 / 3.0, 1e-12);
  EXPECT_NEAR(ev[3], 0.0, 1e-12);
}

TEST(RateMatrix, InvalidParams) {
  EXPECT_THROW(build_rate_matrix(SubstitutionParams::k80(0.0)), ModelError);
  EXPECT_THROW(build_rate_matrix(SubstitutionParams::k80(-1.0)), ModelError);
  EXPECT_THROW(build_rate_matrix(SubstitutionParams::gtr({0.2, 0.2, 0.2, 0.2, 0.2, 0.2}, {0.25, 0.25, 0.25, 0.25})),
               ModelError);
  EXPECT_THROW(build_rate_matrix(SubstitutionParams::gtr({1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6},
                                                         {0.5, 0.5, 0.0, 0.0})),
               ModelError);
}

TEST(SpectralDecompose, RejectsNonReversible) {
  Eigen::Matrix4d q = rate_matrix(SubstitutionParams::jc69());
  q(0, 1) += 0.1;
  q(0, 0) -= 0.1;
  EXPECT_THROW(spectral_decompose(q, Eigen::Vector4d::Constant(0.25)), ModelError);
}

TEST(TransitionMatrix, Examples) {
  const auto jc = build_rate_matrix(SubstitutionParams::jc69());
  EXPECT_LT((transition_matrix(jc, 0.0).p - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-14);
  const Eigen::Matrix4d p = transition_matrix(jc, 0.1).p;
  EXPECT_NEAR(p(0, 0), 0.906384, 5e-6);
  EXPECT_NEAR(p(0, 1), 0.031205, 5e-6);
  EXPECT_NEAR(p(0, 1), oracle::jc69_diff(0.1), 1e-14);
  EXPECT_NEAR(p(2, 2), oracle::jc69_same(0.1), 1e-14);
  EXPECT_THROW(transition_matrix(jc, -0.1), ModelError);

  std::mt19937_64 rng(3);
  const SubstitutionParams g = random_gtr(rng);
  const auto d = build_rate_matrix(g);
  const Eigen::Matrix4d far = transition_matrix(d, 100.0).p;
  const auto pi = g.frequencies();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(far(i, j), pi[j], 1e-6);
}

TEST(TransitionMatrix, ClosedFormK80) {
  EXPECT_NEAR(closed_form_transition(ModelFamily::K80, 2.0, 0.1).p(0, 0), 0.906563, 5e-7);
  for (double b : {0.0, 0.01, 0.3, 2.0}) {
    EXPECT_EQ(closed_form_transition(ModelFamily::K80, 1.0, b).p, closed_form_transition(ModelFamily::JC69, 7.0, b).p);
  }
  EXPECT_EQ(closed_form_transition(ModelFamily::K80, 2.0, 0.0).p, Eigen::Matrix4d::Identity());
}

TEST(TransitionMatrix, SpectralMatchesClosedForms) {
  for (double kappa : {0.5, 1.0, 2.0, 5.0}) {
    const auto d = build_rate_matrix(SubstitutionParams::k80(kappa));
    for (double b : {0.01, 0.1, 0.5, 1.0, 5.0}) {
      EXPECT_LT((transition_matrix(d, b).p - closed_form_transition(ModelFamily::K80, kappa, b).p).cwiseAbs().maxCoeff(),
                1e-10);
    }
  }
  const auto jc = build_rate_matrix(SubstitutionParams::jc69());
  for (double b : {0.01, 0.1, 0.5, 1.0, 5.0}) {
    EXPECT_LT((transition_matrix(jc, b).p - closed_form_transition(ModelFamily::JC69, 1.0, b).p).cwiseAbs().maxCoeff(),
              1e-10);
  }
}

TEST(TransitionMatrix, Properties) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ub(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const SubstitutionParams g = random_gtr(rng);
    const auto d = build_rate_matrix(g);
    const double b1 = ub(rng), b2 = ub(rng);
    const Eigen::Matrix4d p1 = transition_matrix(d, b1).p, p2 = transition_matrix(d, b2).p;
    const Eigen::Matrix4d p12 = transition_matrix(d, b1 + b2).p;
    EXPECT_LT((p1 * p2 - p12).cwiseAbs().maxCoeff(), 1e-9);
    const auto pi = g.frequencies();
    const Eigen::RowVector4d pir(pi[0], pi[1], pi[2], pi[3]);
    EXPECT_LT((pir * p1 - pir).cwiseAbs().maxCoeff(), 1e-9);
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(p1.row(i).sum(), 1.0, 1e-9);
      for (int j = 0; j < 4; ++j) {
        EXPECT_GE(p1(i, j), 0.0);
        EXPECT_LE(p1(i, j), 1.0);
        EXPECT_NEAR(pi[i] * p1(i, j), pi[j] * p1(j, i), 1e-9);
      }
    }
    EXPECT_LT((p1 - oracle::expm_taylor(d.q * b1)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(ModelFamily, ParseRoundTrip) {
  for (auto f : {ModelFamily::JC69, ModelFamily::K80, ModelFamily::GTR}) EXPECT_EQ(parse_model_family(to_string(f)), f);
  EXPECT_THROW(parse_model_family("HKY"), std::invalid_argument);
}
