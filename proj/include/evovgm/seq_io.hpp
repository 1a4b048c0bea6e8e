#pragma once

// Nucleotide alignments: FASTA parsing/writing and one-hot encoding.
//
// The alphabet order (A, G, C, T) is a hard contract shared with the rate
// matrix layout in subst_models.hpp; every one-hot column and every matrix
// row/column index uses it.

#include <Eigen/Dense>

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace evovgm {

inline constexpr std::size_t kAlphabetSize = 4;
inline constexpr std::array<char, kAlphabetSize> kAlphabet = {'A', 'G', 'C', 'T'};
inline constexpr std::size_t kFastaLineWidth = 60;

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index of a nucleotide in (A, G, C, T) order, or nullopt for anything else.
inline std::optional<std::uint8_t> nucleotide_index(char c) {
  switch (std::toupper(static_cast<unsigned char>(c))) {
    case 'A': return 0;
    case 'G': return 1;
    case 'C': return 2;
    case 'T': return 3;
    default: return std::nullopt;
  }
}

struct Alignment {
  std::vector<std::string> names;
  std::vector<std::string> rows;

  std::size_t sequence_count() const { return rows.size(); }
  std::size_t site_count() const { return rows.empty() ? 0 : rows.front().size(); }

  friend bool operator==(const Alignment&, const Alignment&) = default;
};

/// Checks the structural invariants. Estimation needs at least two
/// sequences; files such as a single root sequence only need one.
inline void validate(const Alignment& a, std::size_t min_sequences = 2) {
  if (a.names.size() != a.rows.size()) {
    throw AlignmentError("alignment has " + std::to_string(a.names.size()) + " names but " +
                         std::to_string(a.rows.size()) + " sequences");
  }
  if (a.rows.size() < min_sequences) {
    throw AlignmentError("alignment needs at least " + std::to_string(min_sequences) +
                         " sequences, got " + std::to_string(a.rows.size()));
  }
  std::unordered_set<std::string> seen;
  for (std::size_t m = 0; m < a.rows.size(); ++m) {
    if (a.names[m].empty()) throw AlignmentError("sequence " + std::to_string(m) + " has an empty name");
    if (!seen.insert(a.names[m]).second) throw AlignmentError("duplicate sequence name '" + a.names[m] + "'");
    if (a.rows[m].empty()) throw AlignmentError("sequence '" + a.names[m] + "' is empty");
    if (a.rows[m].size() != a.rows.front().size()) {
      throw AlignmentError("sequence '" + a.names[m] + "' has length " + std::to_string(a.rows[m].size()) +
                           ", expected " + std::to_string(a.rows.front().size()));
    }
    for (std::size_t n = 0; n < a.rows[m].size(); ++n) {
      const char c = a.rows[m][n];
      if (!nucleotide_index(c) || c != std::toupper(static_cast<unsigned char>(c))) {
        throw AlignmentError("sequence '" + a.names[m] + "' has invalid character '" + std::string(1, c) +
                             "' at site " + std::to_string(n + 1));
      }
    }
  }
}

/// Parses FASTA text. Sequence lines are concatenated and upper-cased; blank
/// lines and ';' comment lines are skipped.
inline Alignment parse_fasta(std::string_view text, std::size_t min_sequences = 2) {
  Alignment a;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == ';') continue;
    if (line.front() == '>') {
      std::string name = line.substr(1);
      const auto first = name.find_first_not_of(" \t");
      const auto last = name.find_last_not_of(" \t");
      name = first == std::string::npos ? std::string() : name.substr(first, last - first + 1);
      a.names.push_back(std::move(name));
      a.rows.emplace_back();
      continue;
    }
    if (a.rows.empty()) {
      throw AlignmentError("line " + std::to_string(line_number) + ": sequence data before the first header");
    }
    for (char c : line) {
      if (c == ' ' || c == '\t') continue;
      a.rows.back().push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
  }
  if (a.rows.empty()) throw AlignmentError("empty FASTA input");
  validate(a, min_sequences);
  return a;
}

inline std::string write_fasta(const Alignment& a) {
  validate(a, 1);
  std::string out;
  for (std::size_t m = 0; m < a.rows.size(); ++m) {
    out += '>';
    out += a.names[m];
    out += '\n';
    const std::string& row = a.rows[m];
    for (std::size_t pos = 0; pos < row.size(); pos += kFastaLineWidth) {
      out.append(row, pos, kFastaLineWidth);
      out += '\n';
    }
  }
  return out;
}

/// One-hot view of an alignment. `sites[n]` is the M x 4 column at site n;
/// `states(n, m)` is the same information as an alphabet index, and
/// `flat` stacks every site column row-major into an N x 4M matrix, which is
/// the ancestor encoder's batched input.
struct EncodedAlignment {
  std::size_t sequences = 0;
  std::size_t sites_count = 0;
  std::vector<Eigen::MatrixXd> sites;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> states;
  Eigen::MatrixXd flat;

  std::size_t M() const { return sequences; }
  std::size_t N() const { return sites_count; }

  /// Alphabet indices of sequence m across all sites.
  std::vector<std::uint8_t> sequence_states(std::size_t m) const {
    std::vector<std::uint8_t> out(sites_count);
    for (std::size_t n = 0; n < sites_count; ++n) out[n] = states(n, m);
    return out;
  }
};

inline EncodedAlignment encode(const Alignment& a, std::size_t min_sequences = 2) {
  validate(a, min_sequences);
  EncodedAlignment e;
  e.sequences = a.sequence_count();
  e.sites_count = a.site_count();
  const auto M = static_cast<Eigen::Index>(e.sequences);
  const auto N = static_cast<Eigen::Index>(e.sites_count);
  e.states.resize(N, M);
  e.flat = Eigen::MatrixXd::Zero(N, M * static_cast<Eigen::Index>(kAlphabetSize));
  e.sites.assign(e.sites_count, Eigen::MatrixXd::Zero(M, kAlphabetSize));
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index n = 0; n < N; ++n) {
      const std::uint8_t k = *nucleotide_index(a.rows[m][n]);
      e.states(n, m) = k;
      e.sites[n](m, k) = 1.0;
      e.flat(n, m * static_cast<Eigen::Index>(kAlphabetSize) + k) = 1.0;
    }
  }
  return e;
}

/// Inverse of encode; names are not part of the encoding and must be supplied.
inline Alignment decode(const EncodedAlignment& e, std::vector<std::string> names) {
  if (names.size() != e.sequences) throw AlignmentError("decode: name count does not match sequence count");
  Alignment a;
  a.names = std::move(names);
  a.rows.assign(e.sequences, std::string(e.sites_count, 'A'));
  for (std::size_t n = 0; n < e.sites_count; ++n) {
    for (std::size_t m = 0; m < e.sequences; ++m) {
      const auto row = e.sites[n].row(static_cast<Eigen::Index>(m));
      Eigen::Index k = 0;
      row.maxCoeff(&k);
      if (row.sum() != 1.0 || row(k) != 1.0) throw AlignmentError("decode: site column is not one-hot");
      a.rows[m][n] = kAlphabet[static_cast<std::size_t>(k)];
    }
  }
  return a;
}

}  // namespace evovgm
