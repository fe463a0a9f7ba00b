#ifndef STOCHENS_PIPELINE_HPP
#define STOCHENS_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stochens/ensemble.hpp"
#include "stochens/hmc.hpp"
#include "stochens/metrics.hpp"
#include "stochens/toy_data.hpp"

namespace stochens {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

struct DatasetSource {
  ToySpec toy;
  int n_test_per_class = 100;
  /// Existing data directory (as written by gen-data); overrides `toy`.
  std::optional<std::string> path;
};

struct EvalSettings {
  int in_resolution = 41;
  int out_resolution = 401;
  int inferences_per_member = 1;
  int ece_bins = 15;
};

struct MultiSwaGrid {
  std::vector<double> swa_lrs{0.01, 0.05};
  std::vector<double> start_fractions{0.5, 0.75};
};

struct CompareEntry {
  std::string label;
  std::string path;  // metrics.json or a directory containing it
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string method = "regular";  // regular, multiswa, se1, se2, se3, hmc
  std::string output_dir = "runs/default";
  DatasetSource dataset;
  PriorSpec prior;
  MLPArch arch = MLPArch::toy();
  int K = 1024;
  TrainConfig train;
  StochasticSpec stochastic;
  MultiSwaGrid multiswa;
  HMCConfig hmc;
  EvalSettings eval;
  /// Predictions directory of the reference (HMC) run.
  std::optional<std::string> reference;
  std::vector<CompareEntry> compare;

  bool is_hmc() const { return method == "hmc"; }
  EnsembleKind ensemble_kind() const;

  /// Parses and validates; throws ConfigError listing every violation.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Reads a config file; STOCHENS_SEED, when set, replaces the seed.
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunOptions {
  int jobs = 1;
  std::optional<std::string> output_dir;  // overrides config.output_dir
};

// ----------------------------------------------------------------- stores

/// Writes manifest.json listing SHA-256 hashes of `artifacts` (names relative to `dir`).
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const ExperimentConfig& config, const std::vector<std::string>& artifacts,
                    const nlohmann::json& timings, const nlohmann::json& inputs = nlohmann::json::object());

/// Recomputes every listed hash; throws ParseError naming the offending file.
nlohmann::json verify_manifest(const std::filesystem::path& dir);

void save_predictions_csv(const std::filesystem::path& path, const PredictiveDistribution& pd);
/// `n_members` restores the member count behind the mi column.
PredictiveDistribution load_predictions_csv(const std::filesystem::path& path, std::size_t n_members);

/// Loads test/grid_in/grid_out predictions of a predictions directory.
struct PredictionSet {
  PredictiveDistribution test;
  PredictiveDistribution grid_in;
  PredictiveDistribution grid_out;
};
PredictionSet load_prediction_set(const std::filesystem::path& dir);

// --------------------------------------------------------------- commands

std::filesystem::path cmd_gen_data(const ExperimentConfig& config, const RunOptions& opts);
std::filesystem::path cmd_train(const ExperimentConfig& config, const RunOptions& opts);
std::filesystem::path cmd_hmc(const ExperimentConfig& config, const RunOptions& opts);
std::filesystem::path cmd_predict(const ExperimentConfig& config, const RunOptions& opts);
std::filesystem::path cmd_evaluate(const ExperimentConfig& config, const RunOptions& opts);
std::filesystem::path cmd_compare(const ExperimentConfig& config, const RunOptions& opts);

struct CompareRow {
  std::string label;
  MetricsReport report;
};
std::string compare_table_csv(const std::vector<CompareRow>& rows);
std::string compare_table_text(const std::vector<CompareRow>& rows);

/// Dispatches a command name; returns the process exit code (0 ok,
/// 1 invalid config or artifact, 2 compute failure) after reporting to stderr.
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const RunOptions& opts);

}  // namespace stochens

#endif  // STOCHENS_PIPELINE_HPP
