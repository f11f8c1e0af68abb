#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nmcdr/graph/graph.hpp"
#include "nmcdr/model/model.hpp"

namespace nmcdr::training {

using data::kDomains;
using num::Tape;
using num::Var;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  /// w1..w4: companion heads g0..g3.
  std::array<double, 4> companion{1.0, 1.0, 1.0, 1.0};
  /// w5, w6: companion loss of Z and Z̄.
  std::array<double, kDomains> companion_domain{1.0, 1.0};
  /// w7, w8: final prediction loss of Z and Z̄.
  std::array<double, kDomains> final_domain{1.0, 1.0};

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainConfig {
  std::size_t batch_size = 512;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::size_t negatives = 1;
  /// Validate every this many epochs (0 disables validation and early stopping).
  std::size_t eval_every = 1;
  std::size_t patience = 10;
  bool resample_matching = true;
  /// Wall-clock timings make histories differ between runs; off by default.
  bool record_wall_time = false;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Element-wise BCE of a probability, clamped away from 0 and 1 only to keep log finite.
double bce(double probability, double label);
/// Numerically stable BCE of a logit: max(z, 0) − z·y + log(1 + e^{−|z|}).
double bce_from_logit(double logit, double label);

/// Labeled (user, item) pairs of one domain.
struct Batch {
  std::vector<std::size_t> users;
  std::vector<std::size_t> items;
  std::vector<double> labels;
  std::size_t size() const noexcept { return users.size(); }
};

struct LossTerms {
  Var total;
  std::array<std::optional<Var>, kDomains> companion;
  std::array<Var, kDomains> final_loss;
};

/// Σ_k w_k · mean BCE of companion head k (heads g0..g3 present in `heads`).
Var companion_loss(Tape& tape, const model::BoundParams& p, std::size_t d, const std::vector<model::Head>& heads,
                   Var items, const Batch& batch, const LossWeights& weights);

/// w5·L_CO^Z + w6·L_CO^Z̄ + w7·L_cls^Z + w8·L_cls^Z̄, with the companion terms dropped when disabled.
LossTerms total_loss(Tape& tape, const model::BoundParams& p, const model::ModelConfig& config,
                     const model::Structure& structure, const model::AblationFlags& flags,
                     const LossWeights& weights, const std::array<Batch, kDomains>& batches);

/// Everything fixed across epochs.
struct TrainingData {
  const data::CrossDomainDataset* dataset = nullptr;
  const data::SplitSpec* split = nullptr;
  std::array<graph::InteractionGraph, kDomains> graphs;
  std::array<graph::HeadTailLabels, kDomains> labels;
  graph::MatchingOptions matching;
};

TrainingData prepare_training_data(const data::CrossDomainDataset& dataset, const data::SplitSpec& split,
                                   std::size_t k_head, const graph::MatchingOptions& matching);

/// Structure used for scoring: matching sampled with epoch key 0 (training epochs start at 1).
model::Structure evaluation_structure(const TrainingData& data, std::uint64_t root_seed);
model::Structure epoch_structure(const TrainingData& data, std::uint64_t root_seed, std::uint64_t epoch);

/// Validation hook: returns NDCG@10 per domain for the given parameters.
using Validator = std::function<std::array<double, kDomains>(const num::ParamStore&)>;

struct TrainResult {
  num::ParamStore params;
  std::vector<nlohmann::json> history;
  std::size_t epochs_run = 0;
  std::optional<std::size_t> best_epoch;
};

/// Joint mini-batch training of both domains with Adam. Deterministic given `root_seed`.
TrainResult train(const TrainingData& data, num::ParamStore params, const model::ModelConfig& config,
                  const model::AblationFlags& flags, const LossWeights& weights, const TrainConfig& train_config,
                  std::uint64_t root_seed, const Validator& validator = {});

/// Mean final-head BCE over every train positive plus one fixed negative each.
double train_bce(const TrainingData& data, const num::ParamStore& params, const model::ModelConfig& config,
                 const model::AblationFlags& flags, std::uint64_t root_seed);

}  // namespace nmcdr::training
