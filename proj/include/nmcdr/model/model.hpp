#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nmcdr/data/dataset.hpp"
#include "nmcdr/graph/graph.hpp"
#include "nmcdr/numerics/adam.hpp"
#include "nmcdr/numerics/autodiff.hpp"

namespace nmcdr::model {

using data::kDomains;
using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AblationFlags {
  bool use_intra_matching = true;
  bool use_inter_matching = true;
  bool use_complementing = true;
  bool use_companion_losses = true;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

nlohmann::json to_json(const AblationFlags& flags);
/// Named variants: full, w/o-Igm, w/o-Cgm, w/o-Inc, w/o-Sup.
AblationFlags ablation_variant(std::string_view name);
const std::vector<std::string>& ablation_variant_names();

enum class ModelKind { Nmcdr, MatrixFactorization };
ModelKind parse_model_kind(std::string_view name);
std::string_view model_kind_name(ModelKind kind) noexcept;

struct ModelConfig {
  ModelKind kind = ModelKind::Nmcdr;
  /// Embedding width D and the per-stage widths. The residual connections require them to agree.
  std::size_t dim = 128;
  std::size_t d_hge = 128;
  std::size_t d_igm = 128;
  std::size_t d_cgm = 128;
  std::size_t d_ref = 128;
  /// Hidden widths of the shared prediction MLP.
  std::vector<std::size_t> mlp_hidden{128, 64};
  /// Latent width of the matrix-factorization baseline.
  std::size_t mf_factors = 32;
  double embedding_std = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
};

struct DomainShape {
  std::size_t users = 0;
  std::size_t items = 0;
};

/// "Z.W_hge", "Zbar.mlp.W0", ...
std::string param_name(std::size_t domain, std::string_view local);

/// Embeddings ~ Normal(0, embedding_std), weights Xavier-uniform, biases 0, W_cross = 0.5·I.
/// Each tensor draws from its own stream keyed by name, so adding a tensor never shifts the others.
ParamStore init_params(const ModelConfig& config, const std::array<DomainShape, kDomains>& shapes,
                       std::uint64_t seed);

/// Per-epoch structural inputs of the forward pass, precomputed from graphs and matching sets.
struct DomainStructure {
  std::size_t users = 0;
  std::size_t items = 0;
  std::shared_ptr<const num::SparseRows> item_mean;
  Tensor has_items;
  std::shared_ptr<const num::SparseRows> head_mean;
  Tensor has_head;
  std::shared_ptr<const num::SparseRows> tail_mean;
  Tensor has_tail;
  std::shared_ptr<const num::SparseRows> cdr_mean;
  Tensor has_cdr;
  /// Flattened train edges grouped by user.
  std::vector<std::size_t> edge_users;
  std::vector<std::size_t> edge_items;
  std::vector<std::size_t> edge_offsets;
  /// Overlapped users of this domain and their counterparts in the other domain.
  std::vector<std::size_t> overlap_users;
  std::vector<std::size_t> overlap_counterparts;
};

struct Structure {
  std::array<DomainStructure, kDomains> domains;
};

Structure build_structure(const std::array<graph::InteractionGraph, kDomains>& graphs,
                          const graph::MatchingNeighborhood& matching, const data::CrossDomainDataset& dataset);

/// Parameter leaves bound on a tape.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& params);
  Var operator()(std::size_t domain, std::string_view local) const;
  Var at(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.find(name) != vars_.end(); }

 private:
  std::map<std::string, Var, std::less<>> vars_;
};

/// Stage representations of every user in one domain. Disabled stages alias their input.
struct StageVars {
  Var u;
  Var v;
  Var g1;
  Var g2;
  Var g3;
  Var g4;
  Var final_repr;
};

Var encode(Tape& tape, const BoundParams& p, std::size_t d, const DomainStructure& s, Var u, Var v);
Var intra_match(Tape& tape, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g1);
/// u_g3 for domain `d`, given u_g2 of both domains.
Var inter_match(Tape& tape, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g2, Var g2_other);
/// Returns u_g4; `alpha` (optional) receives the per-edge virtual link strengths.
Var complement(Tape& tape, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g3, Var v,
               Var* alpha = nullptr);

/// Full-graph forward of both domains.
std::array<StageVars, kDomains> forward_stages(Tape& tape, const BoundParams& p, const Structure& s,
                                               const AblationFlags& flags);

/// Logits of the shared prediction MLP for (users[k], items[k]) pairs. The first layer is
/// split into user rows and item rows, which equals MLP(u ‖ v).
Var predict_logits(Tape& tape, const BoundParams& p, std::size_t d, Var user_repr, Var item_repr,
                   const std::vector<std::size_t>& users, const std::vector<std::size_t>& items);

struct Head {
  std::string name;  // g0, g1, g2, g3, final
  Var repr;
};

/// Companion heads g0..g3 for enabled stages, followed by the final head.
std::vector<Head> prediction_heads(const StageVars& stages, const AblationFlags& flags);

/// Matrix-factorization baseline logits: u·v + b_u + b_v.
Var mf_logits(Tape& tape, const BoundParams& p, std::size_t d, const std::vector<std::size_t>& users,
              const std::vector<std::size_t>& items);

/// Plain (tape-free) stage outputs of both domains for diagnostics and scoring.
struct StageOutputs {
  Tensor g1, g2, g3, g4, final_repr;
};
std::array<StageOutputs, kDomains> stage_outputs(const ParamStore& params, const Structure& s,
                                                 const AblationFlags& flags);

/// Scores σ(logit) for (users[k], items[k]) with frozen parameters, using a precomputed
/// user representation (the final stage output for NMCDR; unused for MF).
std::vector<double> score_pairs(const ModelConfig& config, const ParamStore& params, std::size_t d,
                                const Tensor& user_repr, const std::vector<std::size_t>& users,
                                const std::vector<std::size_t>& items);

}  // namespace nmcdr::model
