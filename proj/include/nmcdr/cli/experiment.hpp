#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmcdr/data/synthetic.hpp"
#include "nmcdr/eval/eval.hpp"
#include "nmcdr/graph/graph.hpp"
#include "nmcdr/model/model.hpp"
#include "nmcdr/training/training.hpp"

namespace nmcdr::cli {

namespace fs = std::filesystem;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  /// "files" reads the two rating files; "synthetic" generates them from [synthetic].
  std::string source = "files";
  std::string z;
  std::string zbar;
  data::InputFormat format = data::InputFormat::TsvRatings;
  std::size_t min_interactions = 5;
  /// K_u: fraction of the user-key intersection exposed as overlapped users.
  double overlap_ratio = 1.0;
  /// D_s: fraction of edges kept per domain.
  double density = 1.0;
  data::SplitMode split = data::SplitMode::Timestamp;
  bool validation = true;
};

struct EvalConfig {
  std::size_t negatives = 199;
  std::size_t k = 10;
};

struct StabilityConfig {
  /// "random" draws configurations; "checkpoint" compresses trained weights.
  std::string source = "random";
  std::string checkpoint;
  std::size_t configurations = 100;
  std::size_t nodes = 10;
  std::size_t feature_dim = 8;
  std::size_t hidden_dim = 8;
  std::size_t output_dim = 2;
  double edge_probability = 0.3;
  double weight_scale = 1.0;
  std::size_t trials = 1000;
  double perturbation_scale = 0.1;
  double c_sf = 1.0;
  double c_sp = 1.0;
};

struct SweepConfig {
  /// Dotted config key varied by `sweep`, e.g. "model.matching_size".
  std::string key;
  std::vector<nlohmann::json> values;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
  DataConfig data;
  data::SyntheticSpec synthetic;
  model::ModelConfig model;
  std::size_t k_head = 7;
  graph::MatchingOptions matching{512, false};
  training::LossWeights loss;
  training::TrainConfig train;
  std::string variant = "full";
  EvalConfig eval;
  StabilityConfig stability;
  SweepConfig sweep;
  std::string output = "out";
  std::uint64_t seed = 1;

  model::AblationFlags flags() const { return model::ablation_variant(variant); }
  nlohmann::json to_json() const;
  /// Hash of the canonical JSON form, excluding the output directory.
  std::string hash() const;
};

/// Default configuration as JSON (the documented key set).
nlohmann::json default_config_json();
/// Strict conversion: unknown keys and mistyped values are errors.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// TOML document to JSON (tables become objects, arrays stay arrays).
nlohmann::json toml_to_json(const std::string& text, const std::string& source = "<config>");
/// Applies `key=value` with a dotted key; the value is read as a TOML value, or as a bare string.
void apply_override(nlohmann::json& config, const std::string& assignment);
/// Defaults, then the TOML file (if any), then overrides, then validation.
ExperimentConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides);

// ---- commands ---------------------------------------------------------------------------

struct Prepared {
  data::CrossDomainDataset dataset;
  data::SplitSpec split;
  std::string data_hash;
};

/// Builds the dataset and split from the configured source and writes dataset.json, split.json and stats.json.
Prepared cmd_prepare(const ExperimentConfig& config, const fs::path& out);
/// Loads the prepared artifacts from `dir` when present and consistent with the config, otherwise prepares them.
Prepared load_or_prepare(const ExperimentConfig& config, const fs::path& dir);

/// Writes z.tsv, zbar.tsv, truth.json and spec.json.
void cmd_synth(const data::SyntheticSpec& spec, const fs::path& out);

struct RunOutputs {
  eval::EvalReport report;
  training::TrainResult train;
};

/// Trains and evaluates; writes history.jsonl, report.json, peruser.csv, checkpoint.nmcdr and manifest.json.
RunOutputs cmd_run(const ExperimentConfig& config, const fs::path& out);

struct SweepPoint {
  nlohmann::json value;
  std::vector<double> ndcg;  // per seed, mean over domains
  double mean = 0;
  double std = 0;
  double best = 0;
};

/// Runs the configured sweep (value × seed); `jobs` > 1 runs experiments in separate processes.
std::vector<SweepPoint> cmd_sweep(const ExperimentConfig& config, const fs::path& out, std::size_t jobs = 1);

/// Stability diagnostics over random or checkpoint-derived compressed models; writes stability.json.
nlohmann::json cmd_stability(const ExperimentConfig& config, const fs::path& out);

/// Collects every report.json under `root` into summary.csv and returns the rows.
std::vector<nlohmann::json> cmd_report(const fs::path& root);

}  // namespace nmcdr::cli
