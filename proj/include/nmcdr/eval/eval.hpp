#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmcdr/graph/graph.hpp"
#include "nmcdr/model/model.hpp"

namespace nmcdr::eval {

using data::Id;
using data::kDomains;

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RankResult {
  /// 1-based rank; negatives tied with the positive count one half each.
  double rank = 1.0;
  bool hit = false;
  double ndcg = 0.0;
};

/// Rank of `scores[positive]` among all candidates, with HR@k and NDCG@k.
RankResult rank_metrics(std::span<const double> scores, std::size_t positive, std::size_t k = 10);
/// As above; `ids` must be distinct.
RankResult rank_metrics(std::span<const double> scores, std::size_t positive, std::span<const Id> ids,
                        std::size_t k = 10);

/// Scores (users[k], items[k]) pairs of domain `d`.
using Scorer = std::function<std::vector<double>(std::size_t d, const std::vector<std::size_t>& users,
                                                 const std::vector<std::size_t>& items)>;

/// Frozen-parameter scorer over the full forward path.
Scorer model_scorer(const model::ModelConfig& config, const num::ParamStore& params, const model::Structure& structure,
                    const model::AblationFlags& flags);
/// Train-set item popularity.
Scorer popularity_scorer(const std::array<graph::InteractionGraph, kDomains>& graphs);

enum class Target { Test, Validation };

struct EvalOptions {
  std::size_t negatives = 199;
  std::size_t k = 10;
  Target target = Target::Test;
  /// Seed of the negative-sampling stream; negatives depend only on (seed, domain, user).
  std::uint64_t seed = 0;
  /// Users scored per scorer call.
  std::size_t chunk_users = 64;
};

struct UserResult {
  std::size_t domain = 0;
  Id user = 0;
  double rank = 0;
  bool hit = false;
  double ndcg = 0;
};

struct DomainMetrics {
  double hr = 0;
  double ndcg = 0;
  std::size_t users = 0;
  std::size_t skipped = 0;
};

struct EvalReport {
  std::array<DomainMetrics, kDomains> domains;
  std::vector<UserResult> per_user;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// domain, user_id, rank, hit, ndcg
  std::string per_user_csv(const data::CrossDomainDataset& dataset) const;
};

/// Leave-one-out ranking of one held-out positive against sampled negatives for every split user.
EvalReport evaluate(const data::CrossDomainDataset& dataset, const data::SplitSpec& split, const Scorer& scorer,
                    const EvalOptions& options);

// ---- stability diagnostic -------------------------------------------------------------

/// Three-layer softplus model on a homogeneous graph (column-vector convention, W is out×in):
///   h1_j = sp(Wa1 x_j + (1/n_j) Wn1 Σ_{k∈N_j} x_k + b1)
///   h2_j = sp(Wa2 h1_j + 1/(N−1) Wn2 Σ_{k≠j} h1_k + b2)
///   z_uv = softmax(Wa3 (h2_u ‖ h2_v) + b3)
struct CompressedModel {
  num::Tensor wa1, wn1, b1;
  num::Tensor wa2, wn2, b2;
  num::Tensor wa3, b3;
};

struct StabilityGraph {
  std::vector<std::vector<std::size_t>> neighbors;
  num::Tensor features;  // N×F
  std::size_t u = 0;
  std::size_t v = 1;
  std::size_t nodes() const noexcept { return neighbors.size(); }
};

struct StabilityOptions {
  std::size_t trials = 1000;
  double perturbation_scale = 0.1;
  double c_sf = 1.0;
  double c_sp = 1.0;
  std::uint64_t seed = 0;
};

struct StabilityDiagnostic {
  double gamma_hat = 0;
  double empirical_ratio = 0;
  std::size_t trials = 0;
  bool within_bound = true;
  nlohmann::json to_json() const;
};

/// z_uv of the compressed model.
std::vector<double> compressed_output(const CompressedModel& m, const StabilityGraph& g, const num::Tensor& x);

/// γ̂ = C_sf·C_sp²·‖Wa3‖(‖Wa2‖‖Wa1‖ + (Σ_{j∈N_u} 1/n_j)/(N−1)·‖Wn2‖‖Wn1‖)
double instability_bound(const CompressedModel& m, const StabilityGraph& g, double c_sf, double c_sp);

/// Empirical max ‖z_uv − z_u'v‖ / ‖x_u − x_u'‖ over random perturbations of x_u, against γ̂.
StabilityDiagnostic stability_check(const CompressedModel& m, const StabilityGraph& g, const StabilityOptions& options);

struct RandomStabilitySpec {
  std::size_t nodes = 10;
  std::size_t feature_dim = 8;
  std::size_t hidden_dim = 8;
  std::size_t output_dim = 2;
  double edge_probability = 0.3;
  double weight_scale = 1.0;
};

/// Random connected-enough instance: every node has at least one neighbor; u ≠ v drawn at random.
std::pair<CompressedModel, StabilityGraph> random_stability_instance(const RandomStabilitySpec& spec,
                                                                     std::uint64_t seed);

/// Compression of trained weights of one domain: Wa1 = Wn1 = W_hgeᵀ, b1 = b_hge; Wa2 = I (the residual),
/// Wn2 = W_headᵀ, b2 = b_head; Wa3 = first MLP layerᵀ, b3 = its bias.
CompressedModel compress_trained(const num::ParamStore& params, std::size_t domain);

}  // namespace nmcdr::eval
