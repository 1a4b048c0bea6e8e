#include "evovgm/simulator.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace evovgm;

namespace {

SimulationSpec spec_for(SubstitutionParams params, std::vector<double> branches, std::size_t n, std::uint64_t seed) {
  SimulationSpec s;
  s.params = params;
  s.branch_lengths = std::move(branches);
  s.n_sites = n;
  s.seed = seed;
  return s;
}

std::size_t index_of(char c) { return *nucleotide_index(c); }

}  // namespace

TEST(Simulate, ShapesAndNames) {
  const SimulatedDataset d = simulate(spec_for(SubstitutionParams::k80(2.0), {0.1, 0.2, 0.3}, 100, 1));
  EXPECT_EQ(d.root.size(), 100u);
  ASSERT_EQ(d.alignment.rows.size(), 3u);
  EXPECT_EQ(d.alignment.names, (std::vector<std::string>{"seq1", "seq2", "seq3"}));
  for (const auto& row : d.alignment.rows) EXPECT_EQ(row.size(), 100u);
  EXPECT_NO_THROW(encode(d.alignment));
}

TEST(Simulate, ZeroBranchesCopyRoot) {
  const SimulatedDataset d = simulate(
      spec_for(SubstitutionParams::gtr({0.1, 0.2, 0.1, 0.2, 0.3, 0.1}, {0.1, 0.2, 0.3, 0.4}), {0.0, 0.0, 0.0}, 500, 2));
  for (const auto& row : d.alignment.rows) EXPECT_EQ(row, d.root);
  EXPECT_EQ(true_log_likelihood(d), 0.0);
}

TEST(Simulate, SameSeedSameDataset) {
  const SimulationSpec s = spec_for(SubstitutionParams::jc69(), {0.1, 0.5}, 300, 9);
  const SimulatedDataset a = simulate(s), b = simulate(s);
  EXPECT_EQ(a.root, b.root);
  EXPECT_EQ(a.alignment, b.alignment);
  SimulationSpec other = s;
  other.seed = 10;
  EXPECT_NE(simulate(other).alignment, a.alignment);
}

TEST(Simulate, InvalidSpecs) {
  EXPECT_THROW(simulate(spec_for(SubstitutionParams::jc69(), {0.1}, 10, 1)), std::invalid_argument);
  EXPECT_THROW(simulate(spec_for(SubstitutionParams::jc69(), {0.1, -0.2}, 10, 1)), std::invalid_argument);
  EXPECT_THROW(simulate(spec_for(SubstitutionParams::jc69(), {0.1, 0.2}, 0, 1)), std::invalid_argument);
  EXPECT_THROW(simulate(spec_for(SubstitutionParams::k80(-1.0), {0.1, 0.2}, 10, 1)), ModelError);
}

TEST(Simulate, PooledLeafFrequenciesMatchEquilibrium) {
  const std::array<double, 4> pi{0.1, 0.2, 0.3, 0.4};
  const SimulatedDataset d =
      simulate(spec_for(SubstitutionParams::gtr({0.2, 0.1, 0.15, 0.25, 0.1, 0.2}, pi), {0.2, 0.2}, 100000, 3));
  // Each leaf is an independent sample of N sites; test each leaf separately.
  for (const auto& row : d.alignment.rows) {
    std::array<double, 4> counts{};
    for (char c : row) counts[index_of(c)] += 1.0;
    const double n = static_cast<double>(row.size());
    for (std::size_t k = 0; k < 4; ++k) {
      const double se = std::sqrt(pi[k] * (1 - pi[k]) / n);
      EXPECT_NEAR(counts[k] / n, pi[k], 3.0 * se) << "state " << k;
    }
  }
}

TEST(Simulate, SubstitutionCountsMatchTransitionMatrix) {
  const SubstitutionParams params = SubstitutionParams::gtr({0.05, 0.3, 0.1, 0.15, 0.1, 0.3}, {0.15, 0.35, 0.2, 0.3});
  const double b = 0.35;
  const SimulatedDataset d = simulate(spec_for(params, {b, b}, 100000, 4));
  const Eigen::Matrix4d p = oracle::expm_taylor(oracle::gtr_generator(params.rho, params.pi) * b);
  Eigen::Matrix4d counts = Eigen::Matrix4d::Zero();
  for (const auto& row : d.alignment.rows)
    for (std::size_t n = 0; n < row.size(); ++n) counts(index_of(d.root[n]), index_of(row[n])) += 1.0;
  // Per root character, each destination count is binomial; 3 SE bands on 16 cells
  // with a Bonferroni-style allowance of at most one excursion.
  int excursions = 0;
  for (int i = 0; i < 4; ++i) {
    const double total = counts.row(i).sum();
    for (int j = 0; j < 4; ++j) {
      const double se = std::sqrt(p(i, j) * (1 - p(i, j)) / total);
      if (std::fabs(counts(i, j) / total - p(i, j)) > 3.0 * se) ++excursions;
    }
  }
  EXPECT_LE(excursions, 1);
}

TEST(Simulate, K80WithUnitKappaLooksLikeJc69) {
  const double b = 0.3;
  const SimulatedDataset d = simulate(spec_for(SubstitutionParams::k80(1.0), {b, b, b}, 50000, 5));
  double transitions = 0.0, transversions = 0.0;
  for (const auto& row : d.alignment.rows) {
    for (std::size_t n = 0; n < row.size(); ++n) {
      const char a = d.root[n], c = row[n];
      if (a == c) continue;
      const bool purines = (a == 'A' || a == 'G') && (c == 'A' || c == 'G');
      const bool pyrimidines = (a == 'C' || a == 'T') && (c == 'C' || c == 'T');
      (purines || pyrimidines ? transitions : transversions) += 1.0;
    }
  }
  // Under JC69 a change is a transition with probability 1/3, so the ratio is 1/2.
  const double changes = transitions + transversions;
  const double share = transitions / changes;
  EXPECT_NEAR(share, 1.0 / 3.0, 3.0 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / changes));
  EXPECT_NEAR(transitions / transversions, 0.5, 0.03);
}

TEST(TrueLogLikelihood, SingleSiteJc69) {
  SimulatedDataset d;
  d.spec = spec_for(SubstitutionParams::jc69(), {0.1}, 1, 1);
  d.root = "A";
  d.alignment = Alignment{{"seq1"}, {"A"}};
  EXPECT_NEAR(true_log_likelihood(d), -0.098296, 5e-6);
  EXPECT_NEAR(true_log_likelihood(d), std::log(oracle::jc69_same(0.1)), 1e-12);
  d.alignment.rows[0] = "G";
  EXPECT_NEAR(true_log_likelihood(d), std::log(oracle::jc69_diff(0.1)), 1e-12);
}

TEST(TrueLogLikelihood, MatchesDirectSumAndIsPermutationInvariant) {
  const SubstitutionParams params = SubstitutionParams::k80(3.0);
  SimulatedDataset d = simulate(spec_for(params, {0.05, 0.4, 1.2}, 400, 6));
  const double ll = true_log_likelihood(d);

  double direct = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    const Eigen::Matrix4d p =
        oracle::expm_taylor(oracle::gtr_generator(params.relative_rates(), params.frequencies()) *
                            d.spec.branch_lengths[m]);
    for (std::size_t n = 0; n < d.root.size(); ++n) {
      direct += std::log(p(index_of(d.root[n]), index_of(d.alignment.rows[m][n])));
    }
  }
  EXPECT_NEAR(ll, direct, 1e-8 * std::fabs(direct));

  std::vector<std::size_t> order(d.root.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  SimulatedDataset shuffled = d;
  for (std::size_t n = 0; n < order.size(); ++n) {
    shuffled.root[n] = d.root[order[n]];
    for (std::size_t m = 0; m < 3; ++m) shuffled.alignment.rows[m][n] = d.alignment.rows[m][order[n]];
  }
  EXPECT_NEAR(true_log_likelihood(shuffled), ll, 1e-9 * std::fabs(ll));
}

TEST(TrueLogLikelihood, RejectsMismatchedDataset) {
  SimulatedDataset d = simulate(spec_for(SubstitutionParams::jc69(), {0.1, 0.2}, 10, 1));
  d.spec.branch_lengths.push_back(0.3);
  EXPECT_THROW(true_log_likelihood(d), std::invalid_argument);
}
