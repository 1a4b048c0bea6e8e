#pragma once

// Star-tree sequence simulation: a root sequence drawn from the equilibrium
// frequencies, and each leaf evolved from the root along its own branch.

#include "evovgm/random.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/subst_models.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evovgm {

struct SimulationSpec {
  SubstitutionParams params;
  std::vector<double> branch_lengths;
  std::size_t n_sites = 1000;
  std::uint64_t seed = 1;
};

struct SimulatedDataset {
  std::string root;
  Alignment alignment;
  SimulationSpec spec;
};

inline void validate(const SimulationSpec& s) {
  validate(s.params);
  if (s.branch_lengths.size() < 2) throw std::invalid_argument("simulation needs at least two branch lengths");
  for (double b : s.branch_lengths) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("branch lengths must be finite and >= 0");
  }
  if (s.n_sites < 1) throw std::invalid_argument("simulation needs at least one site");
}

inline SimulatedDataset simulate(const SimulationSpec& spec) {
  validate(spec);
  NoiseSource noise(spec.seed);
  const RateMatrixDecomposition d = build_rate_matrix(spec.params);
  std::vector<Eigen::Matrix4d> transitions;
  for (double b : spec.branch_lengths) transitions.push_back(transition_matrix(d, b).p);
  const auto freqs = spec.params.frequencies();

  SimulatedDataset out;
  out.spec = spec;
  out.root.resize(spec.n_sites);
  const std::size_t M = spec.branch_lengths.size();
  out.alignment.rows.assign(M, std::string(spec.n_sites, 'A'));
  for (std::size_t m = 0; m < M; ++m) out.alignment.names.push_back("seq" + std::to_string(m + 1));

  for (std::size_t n = 0; n < spec.n_sites; ++n) {
    const std::size_t root_state = noise.categorical(freqs);
    out.root[n] = kAlphabet[root_state];
    for (std::size_t m = 0; m < M; ++m) {
      const Eigen::Matrix4d& p = transitions[m];
      const std::array<double, 4> row{p(root_state, 0), p(root_state, 1), p(root_state, 2), p(root_state, 3)};
      out.alignment.rows[m][n] = kAlphabet[noise.categorical(row)];
    }
  }
  return out;
}

/// Exact top-down log likelihood given the known root and parameters:
/// sum_n sum_m log P(b^m)[root_n, x_n^m].
inline double true_log_likelihood(const SimulatedDataset& d) {
  validate(d.spec.params);
  if (d.alignment.rows.size() != d.spec.branch_lengths.size()) {
    throw std::invalid_argument("true_log_likelihood: one branch length per sequence is required");
  }
  const RateMatrixDecomposition decomposition = build_rate_matrix(d.spec.params);
  double total = 0.0;
  for (std::size_t m = 0; m < d.alignment.rows.size(); ++m) {
    const Eigen::Matrix4d p = transition_matrix(decomposition, d.spec.branch_lengths[m]).p;
    const std::string& row = d.alignment.rows[m];
    if (row.size() != d.root.size()) throw std::invalid_argument("true_log_likelihood: root/leaf length mismatch");
    for (std::size_t n = 0; n < row.size(); ++n) {
      const auto from = nucleotide_index(d.root[n]);
      const auto to = nucleotide_index(row[n]);
      if (!from || !to) throw std::invalid_argument("true_log_likelihood: invalid nucleotide");
      total += std::log(std::max(p(*from, *to), 1e-10));
    }
  }
  return total;
}

}  // namespace evovgm
