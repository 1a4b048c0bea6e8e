#include "evovgm/simulator.hpp"
#include "evovgm/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace evovgm;

namespace {

EncodedAlignment jc69_data(std::uint64_t seed, std::size_t n_sites, std::vector<double> branches = {0.1, 0.2, 0.3, 0.4}) {
  SimulationSpec s;
  s.params = SubstitutionParams::jc69();
  s.branch_lengths = std::move(branches);
  s.n_sites = n_sites;
  s.seed = seed;
  return encode(simulate(s).alignment);
}

TrainConfig small_config(ModelFamily family, std::size_t iterations, std::uint64_t seed = 7) {
  TrainConfig c;
  c.family = family;
  c.iterations = iterations;
  c.samples = 3;
  c.hidden = 8;
  c.seed = seed;
  return c;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to),
                         0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST(AdamStep, FirstStepMovesByLearningRate) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(1, 1);
  AdamState state;
  adam_step({&w}, {Eigen::MatrixXd::Constant(1, 1, 0.5)}, state, 0.005);
  EXPECT_NEAR(w(0, 0), 0.005, 1e-9);
  EXPECT_EQ(state.step, 1u);

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(2, 2);
  AdamState other;
  adam_step({&v}, {Eigen::MatrixXd::Constant(2, 2, -3.0)}, other, 0.01);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(v.data()[i], -0.01, 1e-9);
}

TEST(AdamStep, ZeroGradientLeavesWeights) {
  Eigen::MatrixXd w(2, 3);
  w << 1, -2, 3, 0.5, 0, 7;
  const Eigen::MatrixXd before = w;
  AdamState state;
  for (int k = 0; k < 5; ++k) adam_step({&w}, {Eigen::MatrixXd::Zero(2, 3)}, state, 0.1);
  EXPECT_EQ(w, before);
  EXPECT_EQ(state.step, 5u);
}

TEST(AdamStep, MatchesReferenceUpdateOverSeveralSteps) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Constant(1, 1, 0.3);
  AdamState state;
  double theta = 0.3, m = 0.0, v = 0.0;
  const double grads[] = {0.4, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adam_step({&w}, {Eigen::MatrixXd::Constant(1, 1, g)}, state, 0.02);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta += 0.02 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(w(0, 0), theta, 1e-14);
  }
}

TEST(AdamStep, ShapeMismatchThrows) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
  AdamState state;
  EXPECT_THROW(adam_step({&w}, {Eigen::MatrixXd::Zero(2, 3)}, state, 0.1), std::invalid_argument);
  EXPECT_THROW(adam_step({&w}, {}, state, 0.1), std::invalid_argument);
}

TEST(PointEstimates, AnalyticMeans) {
  EXPECT_DOUBLE_EQ((GammaSpec{2.0, 4.0}.mean()), 0.5);
  const auto d = DirichletSpec{{2.0, 1.0, 1.0}}.mean();
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 0.25);
  EXPECT_DOUBLE_EQ(d[2], 0.25);
  for (double x : DirichletSpec{{3.0, 3.0, 3.0, 3.0}}.mean()) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(PointEstimates, FollowEncoders) {
  NoiseSource noise(3);
  const VariationalParameters gtr = init_parameters(ModelFamily::GTR, 4, 8, noise);
  const PointEstimates e = estimate_point_parameters(gtr);
  ASSERT_EQ(e.branches.size(), 4u);
  const auto branches = encode_branches(gtr);
  for (std::size_t m = 0; m < 4; ++m) EXPECT_DOUBLE_EQ(e.branches[m], branches[m].shape / branches[m].rate);
  ASSERT_TRUE(e.rho && e.pi);
  EXPECT_FALSE(e.kappa);
  EXPECT_NEAR(std::accumulate(e.rho->begin(), e.rho->end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(std::accumulate(e.pi->begin(), e.pi->end(), 0.0), 1.0, 1e-12);

  const VariationalParameters k80 = init_parameters(ModelFamily::K80, 3, 8, noise);
  const PointEstimates k = estimate_point_parameters(k80);
  ASSERT_TRUE(k.kappa);
  EXPECT_DOUBLE_EQ(*k.kappa, encode_kappa(k80).mean());
  EXPECT_FALSE(k.rho);
}

TEST(Train, ZeroIterationsGivesInitialEstimates) {
  const EncodedAlignment x = jc69_data(1, 50);
  const TrainConfig c = small_config(ModelFamily::K80, 0);
  const TrainReport r = train(x, c);
  EXPECT_TRUE(r.train.empty());
  EXPECT_TRUE(r.valid.empty());
  NoiseSource weights(c.seed, detail::kWeightStream);
  const VariationalParameters init = init_parameters(ModelFamily::K80, x.M(), c.hidden, weights);
  const PointEstimates expected = estimate_point_parameters(init);
  EXPECT_EQ(r.estimates.branches, expected.branches);
  EXPECT_EQ(r.estimates.kappa, expected.kappa);
}

TEST(Train, RecordsAndKlNonNegative) {
  const EncodedAlignment x = jc69_data(2, 60);
  const EncodedAlignment v = jc69_data(3, 40);
  for (ModelFamily f : {ModelFamily::JC69, ModelFamily::K80, ModelFamily::GTR}) {
    const TrainReport r = train(x, small_config(f, 15), &v);
    ASSERT_EQ(r.train.size(), 15u);
    ASSERT_EQ(r.valid.size(), 15u);
    for (std::size_t i = 0; i < r.train.size(); ++i) {
      EXPECT_EQ(r.train[i].iteration, i + 1);
      EXPECT_EQ(r.valid[i].iteration, i + 1);
      EXPECT_GE(r.train[i].kl_qp, 0.0);
      EXPECT_GE(r.valid[i].kl_qp, 0.0);
      EXPECT_NEAR(r.train[i].elbo, r.train[i].loglik - kDefaultAlphaKl * r.train[i].kl_qp,
                  1e-9 * std::fabs(r.train[i].elbo));
    }
    EXPECT_EQ(r.estimates.family, f);
  }
}

TEST(Train, DeterministicForSeed) {
  const EncodedAlignment x = jc69_data(4, 50);
  const TrainReport a = train(x, small_config(ModelFamily::GTR, 10, 5));
  const TrainReport b = train(x, small_config(ModelFamily::GTR, 10, 5));
  const TrainReport c = train(x, small_config(ModelFamily::GTR, 10, 6));
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].elbo, b.train[i].elbo);
    EXPECT_EQ(a.train[i].loglik, b.train[i].loglik);
    EXPECT_EQ(a.train[i].kl_qp, b.train[i].kl_qp);
  }
  EXPECT_EQ(a.estimates.branches, b.estimates.branches);
  EXPECT_EQ(a.estimates.rho, b.estimates.rho);
  const auto ta = a.parameters.tensors();
  const auto tb = b.parameters.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k], *tb[k]);
  EXPECT_NE(a.train.back().elbo, c.train.back().elbo);
}

TEST(Train, ObserverSeesEveryIteration) {
  const EncodedAlignment x = jc69_data(5, 30);
  std::size_t calls = 0;
  const TrainReport r = train(x, small_config(ModelFamily::JC69, 7), nullptr,
                              [&](const TrainRecord& t, const std::optional<TrainRecord>& v) {
                                ++calls;
                                EXPECT_EQ(t.iteration, calls);
                                EXPECT_FALSE(v);
                              });
  EXPECT_EQ(calls, 7u);
  EXPECT_EQ(r.train.size(), 7u);
}

TEST(Train, NonFiniteElboAbortsWithIteration) {
  const EncodedAlignment x = jc69_data(6, 20);
  TrainConfig c = small_config(ModelFamily::JC69, 5);
  c.alpha_kl = std::numeric_limits<double>::infinity();
  try {
    train(x, c);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.iteration(), 1u);
  }
}

TEST(Train, InvalidConfigAndMismatchedValidation) {
  const EncodedAlignment x = jc69_data(7, 20);
  TrainConfig c = small_config(ModelFamily::JC69, 1);
  c.samples = 0;
  EXPECT_THROW(train(x, c), std::invalid_argument);
  c = small_config(ModelFamily::JC69, 1);
  c.learning_rate = 0.0;
  EXPECT_THROW(train(x, c), std::invalid_argument);
  const EncodedAlignment three = jc69_data(8, 20, {0.1, 0.2, 0.3});
  EXPECT_THROW(train(x, small_config(ModelFamily::JC69, 1), &three), std::invalid_argument);
}

// Smoothed ELBO over the final 80% of training: consecutive 100-iteration
// window means may only decrease by sampling noise (3 standard errors).
TEST(Train, SmoothedElboNonDecreasingInMostSeeds) {
  const std::size_t iterations = 600, window = 100;
  int passing = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const EncodedAlignment x = jc69_data(100 + seed, 100);
    TrainConfig c = small_config(ModelFamily::JC69, iterations, seed);
    c.samples = 5;
    c.learning_rate = 0.01;
    const TrainReport r = train(x, c);
    std::vector<double> elbo;
    for (const auto& rec : r.train) elbo.push_back(rec.elbo);
    bool ok = true;
    const std::size_t start = iterations / 5;
    for (std::size_t w = start; w + 2 * window <= iterations; w += window) {
      const double a = mean(elbo, w, w + window), b = mean(elbo, w + window, w + 2 * window);
      double var = 0.0;
      for (std::size_t i = w + window; i < w + 2 * window; ++i) var += (elbo[i] - b) * (elbo[i] - b);
      const double se = std::sqrt(var / (window - 1) / window) * std::sqrt(2.0);
      if (b < a - 3.0 * se) ok = false;
    }
    passing += ok;
  }
  EXPECT_GE(passing, 9);
}

TEST(Train, TrainingImprovesLikelihood) {
  const EncodedAlignment x = jc69_data(9, 200);
  TrainConfig c = small_config(ModelFamily::JC69, 300);
  c.samples = 5;
  const TrainReport r = train(x, c);
  const double early = r.train.front().loglik;
  double late = 0.0;
  for (std::size_t i = r.train.size() - 20; i < r.train.size(); ++i) late += r.train[i].loglik / 20.0;
  EXPECT_GT(late, early);
}
