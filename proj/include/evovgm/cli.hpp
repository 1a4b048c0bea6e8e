#pragma once

// Run layer behind the command-line tool: key=value configs, and the
// simulate / train / evaluate commands with their file formats.
//
// Every output starts with a reproducibility header (version, seed, config
// hash): '#' lines in CSV, manifest and estimates files, ';' lines in FASTA.

#include "evovgm/metrics.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/simulator.hpp"
#include "evovgm/subst_models.hpp"
#include "evovgm/trainer.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evovgm::cli {

inline constexpr const char* kVersion = "0.1.0";

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every field is settable from a config file; unknown keys are rejected.
struct RunConfig {
  ModelFamily model = ModelFamily::JC69;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = ".";

  double kappa = 2.0;
  std::vector<double> rho = std::vector<double>(kRateCount, 1.0 / 6.0);
  std::vector<double> pi = std::vector<double>(kAlphabetSize, 0.25);
  std::vector<double> branch_lengths{0.1, 0.1, 0.1};
  std::size_t n_sites = 1000;

  std::size_t iterations = 1000;
  std::size_t samples = 100;
  double alpha_kl = kDefaultAlphaKl;
  double learning_rate = 0.005;
  std::size_t hidden = kDefaultHiddenSize;
  double temperature = kDefaultTemperature;
  double branch_prior_shape = 0.1;
  double branch_prior_rate = 1.0;
  double kappa_prior_shape = 1.0;
  double kappa_prior_rate = 0.1;

  // Written into manifests by `simulate`; read back by `evaluate`, never
  // part of the effective config.
  std::optional<double> true_loglik;
};

inline std::string format_double(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

inline std::string format_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline double parse_double(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw CliError("config key '" + key + "': '" + t + "' is not a number");
  }
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw CliError("config key '" + key + "': '" + t + "' is not a non-negative integer");
  }
  return v;
}

inline std::vector<double> parse_list(const std::string& key, std::string_view text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw CliError("config key '" + key + "': empty list");
  return out;
}

/// key=value lines; blank lines and '#' comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_pairs(std::string_view text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw CliError(source + ":" + std::to_string(number) + ": expected key=value, got '" + t + "'");
    }
    out.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

template <std::size_t K>
std::array<double, K> to_array(const std::vector<double>& v, const char* what) {
  if (v.size() != K) {
    throw CliError(std::string(what) + " needs " + std::to_string(K) + " values, got " + std::to_string(v.size()));
  }
  std::array<double, K> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  const std::filesystem::path dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  if (!std::filesystem::is_directory(dir)) throw CliError("output directory '" + dir.string() + "' does not exist");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError("cannot write '" + path.string() + "'");
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_output(path);
  out << text;
  if (!out) throw CliError("failed writing '" + path.string() + "'");
}

}  // namespace detail

inline RunConfig parse_config(std::string_view text, const std::string& source = "config") {
  RunConfig c;
  for (const auto& [key, value] : detail::parse_pairs(text, source)) {
    if (key == "model") {
      try {
        c.model = parse_model_family(value);
      } catch (const std::invalid_argument& e) {
        throw CliError(e.what());
      }
    } else if (key == "seed") {
      c.seed = detail::parse_unsigned(key, value);
    } else if (key == "output_dir") {
      c.output_dir = value;
    } else if (key == "kappa") {
      c.kappa = detail::parse_double(key, value);
    } else if (key == "rho") {
      c.rho = detail::parse_list(key, value);
    } else if (key == "pi") {
      c.pi = detail::parse_list(key, value);
    } else if (key == "branch_lengths") {
      c.branch_lengths = detail::parse_list(key, value);
    } else if (key == "n_sites") {
      c.n_sites = detail::parse_unsigned(key, value);
    } else if (key == "iterations") {
      c.iterations = detail::parse_unsigned(key, value);
    } else if (key == "samples") {
      c.samples = detail::parse_unsigned(key, value);
    } else if (key == "alpha_kl") {
      c.alpha_kl = detail::parse_double(key, value);
    } else if (key == "learning_rate") {
      c.learning_rate = detail::parse_double(key, value);
    } else if (key == "hidden") {
      c.hidden = detail::parse_unsigned(key, value);
    } else if (key == "temperature") {
      c.temperature = detail::parse_double(key, value);
    } else if (key == "branch_prior_shape") {
      c.branch_prior_shape = detail::parse_double(key, value);
    } else if (key == "branch_prior_rate") {
      c.branch_prior_rate = detail::parse_double(key, value);
    } else if (key == "kappa_prior_shape") {
      c.kappa_prior_shape = detail::parse_double(key, value);
    } else if (key == "kappa_prior_rate") {
      c.kappa_prior_rate = detail::parse_double(key, value);
    } else if (key == "true_loglik") {
      c.true_loglik = detail::parse_double(key, value);
    } else {
      throw CliError(source + ": unknown config key '" + key + "'");
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(detail::read_file(path), path.string());
}

/// The effective config as key=value lines; parse_config(format_config(c))
/// reproduces c (apart from true_loglik).
inline std::string format_config(const RunConfig& c) {
  std::ostringstream out;
  out << "model=" << to_string(c.model) << '\n'
      << "seed=" << c.seed << '\n'
      << "output_dir=" << c.output_dir.string() << '\n'
      << "kappa=" << format_double(c.kappa) << '\n'
      << "rho=" << format_list(c.rho) << '\n'
      << "pi=" << format_list(c.pi) << '\n'
      << "branch_lengths=" << format_list(c.branch_lengths) << '\n'
      << "n_sites=" << c.n_sites << '\n'
      << "iterations=" << c.iterations << '\n'
      << "samples=" << c.samples << '\n'
      << "alpha_kl=" << format_double(c.alpha_kl) << '\n'
      << "learning_rate=" << format_double(c.learning_rate) << '\n'
      << "hidden=" << c.hidden << '\n'
      << "temperature=" << format_double(c.temperature) << '\n'
      << "branch_prior_shape=" << format_double(c.branch_prior_shape) << '\n'
      << "branch_prior_rate=" << format_double(c.branch_prior_rate) << '\n'
      << "kappa_prior_shape=" << format_double(c.kappa_prior_shape) << '\n'
      << "kappa_prior_rate=" << format_double(c.kappa_prior_rate) << '\n';
  return out.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buffer[20];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(fnv1a(format_config(c))));
  return buffer;
}

/// Reproducibility header lines, each prefixed by `marker`.
inline std::string provenance(const RunConfig& c, char marker) {
  std::ostringstream out;
  out << marker << " evovgm " << kVersion << '\n'
      << marker << " seed=" << c.seed << '\n'
      << marker << " config_hash=" << config_hash(c) << '\n';
  return out.str();
}

inline SubstitutionParams substitution_params(const RunConfig& c) {
  switch (c.model) {
    case ModelFamily::JC69: return SubstitutionParams::jc69();
    case ModelFamily::K80: return SubstitutionParams::k80(c.kappa);
    case ModelFamily::GTR:
      return SubstitutionParams::gtr(detail::to_array<kRateCount>(c.rho, "rho"),
                                     detail::to_array<kAlphabetSize>(c.pi, "pi"));
  }
  return {};
}

inline SimulationSpec simulation_spec(const RunConfig& c) {
  SimulationSpec s;
  s.params = substitution_params(c);
  s.branch_lengths = c.branch_lengths;
  s.n_sites = c.n_sites;
  s.seed = c.seed;
  return s;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.family = c.model;
  t.iterations = c.iterations;
  t.samples = c.samples;
  t.alpha_kl = c.alpha_kl;
  t.learning_rate = c.learning_rate;
  t.hidden = c.hidden;
  t.seed = c.seed;
  t.temperature = c.temperature;
  t.priors.branch = GammaSpec{c.branch_prior_shape, c.branch_prior_rate};
  t.priors.kappa = GammaSpec{c.kappa_prior_shape, c.kappa_prior_rate};
  return t;
}

struct SimulateOutputs {
  std::filesystem::path leaves, root, manifest;
  double true_loglik = 0.0;
};

/// Writes leaves.fasta, root.fasta and manifest.txt into cfg.output_dir.
inline SimulateOutputs run_simulate(const RunConfig& cfg) {
  if (!std::filesystem::is_directory(cfg.output_dir)) {
    throw CliError("output directory '" + cfg.output_dir.string() + "' does not exist");
  }
  SimulatedDataset d;
  try {
    d = simulate(simulation_spec(cfg));
  } catch (const std::invalid_argument& e) {
    throw CliError(std::string("invalid simulation spec: ") + e.what());
  }
  SimulateOutputs out;
  out.leaves = cfg.output_dir / "leaves.fasta";
  out.root = cfg.output_dir / "root.fasta";
  out.manifest = cfg.output_dir / "manifest.txt";
  out.true_loglik = true_log_likelihood(d);

  const std::string header = provenance(cfg, ';');
  detail::write_file(out.leaves, header + write_fasta(d.alignment));
  detail::write_file(out.root, header + write_fasta(Alignment{{"root"}, {d.root}}));
  detail::write_file(out.manifest, provenance(cfg, '#') + format_config(cfg) +
                                       "true_loglik=" + format_double(out.true_loglik) + '\n');
  return out;
}

inline std::string format_estimates(const RunConfig& cfg, const PointEstimates& e) {
  std::ostringstream out;
  out << provenance(cfg, '#') << "model=" << to_string(e.family) << '\n'
      << "branch_lengths=" << format_list(e.branches) << '\n';
  if (e.kappa) out << "kappa=" << format_double(*e.kappa) << '\n';
  if (e.rho) out << "rho=" << format_list(*e.rho) << '\n';
  if (e.pi) out << "pi=" << format_list(*e.pi) << '\n';
  return out.str();
}

inline PointEstimates parse_estimates(std::string_view text, const std::string& source = "estimates") {
  PointEstimates e;
  bool have_model = false, have_branches = false;
  for (const auto& [key, value] : detail::parse_pairs(text, source)) {
    if (key == "model") {
      try {
        e.family = parse_model_family(value);
      } catch (const std::invalid_argument& err) {
        throw CliError(err.what());
      }
      have_model = true;
    } else if (key == "branch_lengths") {
      e.branches = detail::parse_list(key, value);
      have_branches = true;
    } else if (key == "kappa") {
      e.kappa = detail::parse_double(key, value);
    } else if (key == "rho") {
      e.rho = detail::parse_list(key, value);
    } else if (key == "pi") {
      e.pi = detail::parse_list(key, value);
    } else {
      throw CliError(source + ": unknown estimates key '" + key + "'");
    }
  }
  if (!have_model || !have_branches) throw CliError(source + ": needs model and branch_lengths");
  if (e.family == ModelFamily::K80 && !e.kappa) throw CliError(source + ": K80 estimates need kappa");
  if (e.family == ModelFamily::GTR && (!e.rho || !e.pi)) throw CliError(source + ": GTR estimates need rho and pi");
  return e;
}

struct TrainInputs {
  std::filesystem::path input;
  std::optional<std::filesystem::path> valid;
};

struct TrainOutputs {
  std::filesystem::path trajectory, estimates;
  TrainReport report;
};

/// Writes trajectory.csv (row by row, so a failed run keeps its prefix) and
/// estimates.txt into cfg.output_dir. Throws TrainingError on a non-finite ELBO.
inline TrainOutputs run_train(const RunConfig& cfg, const TrainInputs& inputs, const TrainObserver& observer = {}) {
  const TrainConfig tc = train_config(cfg);
  try {
    validate(tc);
  } catch (const std::invalid_argument& e) {
    throw CliError(std::string("invalid training config: ") + e.what());
  }
  const auto load = [](const std::filesystem::path& path) {
    try {
      return encode(parse_fasta(detail::read_file(path)));
    } catch (const AlignmentError& e) {
      throw CliError(path.string() + ": " + e.what());
    }
  };
  const EncodedAlignment x = load(inputs.input);
  std::optional<EncodedAlignment> valid;
  if (inputs.valid) valid = load(*inputs.valid);
  if (valid && valid->M() != x.M()) {
    throw CliError("validation alignment has " + std::to_string(valid->M()) + " sequences, training has " +
                   std::to_string(x.M()));
  }

  TrainOutputs out;
  out.trajectory = cfg.output_dir / "trajectory.csv";
  out.estimates = cfg.output_dir / "estimates.txt";
  std::ofstream csv = detail::open_output(out.trajectory);
  csv << provenance(cfg, '#') << "iteration,split,elbo,loglik,kl_qp\n";
  csv.flush();
  const auto row = [&csv](const TrainRecord& r, const char* split) {
    csv << r.iteration << ',' << split << ',' << format_double(r.elbo) << ',' << format_double(r.loglik) << ','
        << format_double(r.kl_qp) << '\n';
  };
  const TrainObserver writer = [&](const TrainRecord& t, const std::optional<TrainRecord>& v) {
    row(t, "train");
    if (v) row(*v, "valid");
    csv.flush();
    if (observer) observer(t, v);
  };
  out.report = train(x, tc, valid ? &*valid : nullptr, writer);
  detail::write_file(out.estimates, format_estimates(cfg, out.report.estimates));
  return out;
}

struct EvaluateOutputs {
  std::filesystem::path metrics;
  std::vector<std::string> warnings;
};

/// Writes group,dist,corr,pval rows comparing estimates to a manifest's truth.
/// A correlation that is undefined leaves its cells empty and adds a warning.
inline EvaluateOutputs run_evaluate(const std::filesystem::path& estimates_path,
                                    const std::filesystem::path& manifest_path,
                                    const std::filesystem::path& output_path) {
  const RunConfig truth = load_config(manifest_path);
  const PointEstimates est = parse_estimates(detail::read_file(estimates_path), estimates_path.string());
  if (est.family != truth.model) {
    throw CliError("estimates are for " + std::string(to_string(est.family)) + " but the manifest is " +
                   std::string(to_string(truth.model)));
  }

  EvaluateOutputs out;
  out.metrics = output_path;
  std::ostringstream csv;
  csv << provenance(truth, '#') << "group,dist,corr,pval\n";
  const auto group = [&](const std::string& name, const std::vector<double>& e, const std::vector<double>& a) {
    if (e.size() != a.size()) {
      throw CliError(name + ": estimates have " + std::to_string(e.size()) + " values, manifest has " +
                     std::to_string(a.size()));
    }
    csv << name << ',' << format_double(euclidean(e, a)) << ',';
    try {
      const Correlation c = pearson(e, a);
      csv << format_double(c.corr) << ',' << format_double(c.pval) << '\n';
    } catch (const std::exception& err) {
      csv << ",\n";
      out.warnings.push_back(name + ": correlation undefined (" + err.what() + ")");
    }
  };
  group("branches", est.branches, truth.branch_lengths);
  if (truth.model == ModelFamily::GTR) {
    group("rates", *est.rho, truth.rho);
    group("frequencies", *est.pi, truth.pi);
  }
  if (truth.model == ModelFamily::K80) {
    csv << "kappa_ratio," << format_double(kappa_ratio(*est.kappa, truth.kappa)) << ",,\n";
  }
  detail::write_file(output_path, csv.str());
  return out;
}

}  // namespace evovgm::cli
