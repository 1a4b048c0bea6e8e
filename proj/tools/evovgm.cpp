// evovgm: simulate alignments, fit the variational model, score estimates.
//
// Log verbosity comes from EVOVGM_LOG_LEVEL (trace, debug, info, warn, error,
// critical, off); the default is info.

#include "evovgm/evovgm.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <optional>
#include <string>

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("evovgm");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("EVOVGM_LOG_LEVEL")) {
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off") {
      spdlog::warn("EVOVGM_LOG_LEVEL='{}' not recognised, keeping info", level);
    } else {
      spdlog::set_level(parsed);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  using namespace evovgm;

  CLI::App app{"Variational estimation of evolutionary parameters on star trees"};
  app.set_version_flag("--version", std::string(cli::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  auto* simulate = app.add_subcommand("simulate", "Simulate an alignment and write leaves, root and manifest");
  simulate->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", seed, "Override the config seed");

  std::string input, valid;
  auto* train = app.add_subcommand("train", "Fit the model and write the trajectory CSV and estimates");
  train->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--input", input, "Training alignment (FASTA)")->required()->check(CLI::ExistingFile);
  train->add_option("--valid", valid, "Validation alignment (FASTA)")->check(CLI::ExistingFile);

  std::string estimates, manifest, output;
  auto* evaluate = app.add_subcommand("evaluate", "Compare estimates with a simulation manifest");
  evaluate->add_option("--estimates", estimates, "Estimates file from train")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", manifest, "Manifest file from simulate")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--output", output, "Metrics CSV (default: metrics.csv next to the estimates)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      cli::RunConfig cfg = cli::load_config(config_path);
      if (seed) cfg.seed = *seed;
      const auto out = cli::run_simulate(cfg);
      spdlog::info("wrote {}, {}, {}", out.leaves.string(), out.root.string(), out.manifest.string());
      spdlog::info("true log likelihood {:.6f}", out.true_loglik);
    } else if (train->parsed()) {
      const cli::RunConfig cfg = cli::load_config(config_path);
      cli::TrainInputs inputs{input, std::nullopt};
      if (!valid.empty()) inputs.valid = valid;
      const std::size_t every = cfg.iterations >= 10 ? cfg.iterations / 10 : 1;
      const auto progress = [every](const TrainRecord& t, const std::optional<TrainRecord>& v) {
        const auto level = t.iteration % every == 0 ? spdlog::level::info : spdlog::level::debug;
        if (v) {
          spdlog::log(level, "iter {} elbo {:.4f} loglik {:.4f} kl {:.4f} valid_elbo {:.4f}", t.iteration, t.elbo,
                      t.loglik, t.kl_qp, v->elbo);
        } else {
          spdlog::log(level, "iter {} elbo {:.4f} loglik {:.4f} kl {:.4f}", t.iteration, t.elbo, t.loglik, t.kl_qp);
        }
      };
      const auto out = cli::run_train(cfg, inputs, progress);
      spdlog::info("wrote {} and {} in {:.2f} s", out.trajectory.string(), out.estimates.string(),
                   out.report.seconds);
    } else if (evaluate->parsed()) {
      const std::filesystem::path target =
          output.empty() ? std::filesystem::path(estimates).parent_path() / "metrics.csv" : std::filesystem::path(output);
      const auto out = cli::run_evaluate(estimates, manifest, target);
      for (const auto& w : out.warnings) spdlog::warn("{}", w);
      spdlog::info("wrote {}", out.metrics.string());
    }
  } catch (const TrainingError& e) {
    spdlog::error("training aborted at {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
