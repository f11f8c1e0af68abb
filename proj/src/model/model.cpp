#include "nmcdr/model/model.hpp"

#include <cmath>

namespace nmcdr::model {

nlohmann::json to_json(const AblationFlags& f) {
  return {{"use_intra_matching", f.use_intra_matching},
          {"use_inter_matching", f.use_inter_matching},
          {"use_complementing", f.use_complementing},
          {"use_companion_losses", f.use_companion_losses}};
}

const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names{"full", "w/o-Igm", "w/o-Cgm", "w/o-Inc", "w/o-Sup"};
  return names;
}

AblationFlags ablation_variant(std::string_view name) {
  AblationFlags f;
  if (name == "full") return f;
  if (name == "w/o-Igm") {
    f.use_intra_matching = false;
  } else if (name == "w/o-Cgm") {
    f.use_inter_matching = false;
  } else if (name == "w/o-Inc") {
    f.use_complementing = false;
  } else if (name == "w/o-Sup") {
    f.use_companion_losses = false;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
  }
  return f;
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "nmcdr") return ModelKind::Nmcdr;
  if (name == "mf") return ModelKind::MatrixFactorization;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected nmcdr or mf)");
}

std::string_view model_kind_name(ModelKind kind) noexcept { return kind == ModelKind::Nmcdr ? "nmcdr" : "mf"; }

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model.dim must be positive");
  if (d_hge != dim || d_igm != dim || d_cgm != dim || d_ref != dim) {
    throw ConfigError("model.d_hge, d_igm, d_cgm and d_ref must equal model.dim (stages are joined by residuals)");
  }
  for (auto h : mlp_hidden)
    if (h == 0) throw ConfigError("model.mlp_hidden widths must be positive");
  if (mf_factors == 0) throw ConfigError("model.mf_factors must be positive");
  if (!(embedding_std > 0.0)) throw ConfigError("model.embedding_std must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", model_kind_name(kind)}, {"dim", dim},           {"d_hge", d_hge},
          {"d_igm", d_igm},                {"d_cgm", d_cgm},       {"d_ref", d_ref},
          {"mlp_hidden", mlp_hidden},      {"mf_factors", mf_factors}, {"embedding_std", embedding_std}};
}

std::string param_name(std::size_t domain, std::string_view local) {
  std::string name(data::kDomainNames.at(domain));
  name += '.';
  name += local;
  return name;
}

namespace {

Tensor normal(std::size_t r, std::size_t c, double stddev, num::Rng& rng) {
  Tensor t(r, c);
  for (auto& x : t.values()) x = stddev * num::standard_normal(rng);
  return t;
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, num::Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(fan_in, fan_out);
  for (auto& x : t.values()) x = (2.0 * num::uniform01(rng) - 1.0) * a;
  return t;
}

}  // namespace

ParamStore init_params(const ModelConfig& config, const std::array<DomainShape, kDomains>& shapes,
                       std::uint64_t seed) {
  config.validate();
  ParamStore ps;
  auto rng_for = [&](const std::string& name) { return num::Rng(num::derive_seed(seed, num::fnv1a(name))); };
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto put_normal = [&](std::string_view local, std::size_t r, std::size_t c) {
      const auto name = param_name(d, local);
      auto rng = rng_for(name);
      ps[name] = normal(r, c, config.embedding_std, rng);
    };
    auto put_weight = [&](std::string_view local, std::size_t r, std::size_t c) {
      const auto name = param_name(d, local);
      auto rng = rng_for(name);
      ps[name] = xavier(r, c, rng);
    };
    auto put_zero = [&](std::string_view local, std::size_t r, std::size_t c) { ps[param_name(d, local)] = Tensor(r, c); };

    const auto [users, items] = shapes[d];
    if (config.kind == ModelKind::MatrixFactorization) {
      put_normal("mf.P", users, config.mf_factors);
      put_normal("mf.Q", items, config.mf_factors);
      put_zero("mf.bu", users, 1);
      put_zero("mf.bi", items, 1);
      continue;
    }
    const std::size_t D = config.dim;
    put_normal("U", users, D);
    put_normal("V", items, D);
    for (const char* w : {"W_hge", "W_head", "W_tail", "W_h", "W_t", "W_self", "W_other", "W_s", "W_o", "W_ref"})
      put_weight(w, D, D);
    for (const char* b : {"b_hge", "b_head", "b_tail", "b_h", "b_t", "b_self", "b_other", "b_s", "b_o", "b_ref"})
      put_zero(b, 1, D);
    Tensor cross = Tensor::identity(D);
    for (auto& x : cross.values()) x *= 0.5;
    ps[param_name(d, "W_cross")] = cross;

    std::size_t in = 2 * D;
    const auto& hidden = config.mlp_hidden;
    for (std::size_t l = 0; l <= hidden.size(); ++l) {
      const std::size_t out = l < hidden.size() ? hidden[l] : 1;
      put_weight("mlp.W" + std::to_string(l), in, out);
      put_zero("mlp.b" + std::to_string(l), 1, out);
      in = out;
    }
  }
  return ps;
}

namespace {

std::shared_ptr<const num::SparseRows> mean_of(const graph::NeighborSets& sets) { return sets.mean_rows(); }

}  // namespace

Structure build_structure(const std::array<graph::InteractionGraph, kDomains>& graphs,
                          const graph::MatchingNeighborhood& matching, const data::CrossDomainDataset& dataset) {
  Structure st;
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& g = graphs[d];
    const auto& m = matching.domains[d];
    auto& s = st.domains[d];
    s.users = g.user_count();
    s.items = g.item_count();
    s.item_mean = g.mean_rows();
    s.has_items = Tensor(s.users, 1);
    for (graph::Id u = 0; u < s.users; ++u) s.has_items[u] = g.degree(u) > 0 ? 1.0 : 0.0;
    s.head_mean = mean_of(m.head);
    s.has_head = m.head.nonempty();
    s.tail_mean = mean_of(m.tail);
    s.has_tail = m.tail.nonempty();
    s.cdr_mean = mean_of(m.cdr);
    s.has_cdr = m.cdr.nonempty();
    s.edge_users = g.flat_users();
    s.edge_items = g.flat_items();
    s.edge_offsets = g.segment_offsets();
    for (graph::Id u = 0; u < s.users; ++u) {
      if (auto c = dataset.counterpart(d, u); c && g.active(u) && graphs[data::other_domain(d)].active(*c)) {
        s.overlap_users.push_back(u);
        s.overlap_counterparts.push_back(*c);
      }
    }
  }
  return st;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& params) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.parameter(name, value));
}

Var BoundParams::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

Var BoundParams::operator()(std::size_t domain, std::string_view local) const { return at(param_name(domain, local)); }

namespace {

// Bias added only on rows whose neighbor set is non-empty (mean of an empty set is zero).
Var masked_bias(Tape& t, const Tensor& mask, Var b) { return t.matmul(t.constant(mask), b); }

// ReLU(mean_k(x_k W + b)) over the rows of `sets`.
Var mean_message(Tape& t, Var x, const std::shared_ptr<const num::SparseRows>& sets, const Tensor& nonempty, Var w,
                 Var b) {
  return t.relu(t.add(t.matmul(t.aggregate(x, sets), w), masked_bias(t, nonempty, b)));
}

// σ(a Wa + ba + c Wc + bc), then tanh((1 − H) ⊙ a + H ⊙ c).
Var gated_fusion(Tape& t, Var a, Var c, Var wa, Var ba, Var wc, Var bc) {
  auto h = t.sigmoid(t.add(t.add(t.add(t.matmul(a, wa), ba), t.matmul(c, wc)), bc));
  return t.tanh(t.add(t.hadamard(t.one_minus(h), a), t.hadamard(h, c)));
}

}  // namespace

Var encode(Tape& t, const BoundParams& p, std::size_t d, const DomainStructure& s, Var u, Var v) {
  const Var w = p(d, "W_hge");
  auto self = t.matmul(u, w);
  auto msg = t.add(t.matmul(t.aggregate(v, s.item_mean), w), masked_bias(t, s.has_items, p(d, "b_hge")));
  return t.relu(t.add(self, msg));
}

Var intra_match(Tape& t, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g1) {
  auto head = mean_message(t, g1, s.head_mean, s.has_head, p(d, "W_head"), p(d, "b_head"));
  auto tail = mean_message(t, g1, s.tail_mean, s.has_tail, p(d, "W_tail"), p(d, "b_tail"));
  auto fused = gated_fusion(t, head, tail, p(d, "W_h"), p(d, "b_h"), p(d, "W_t"), p(d, "b_t"));
  return t.add(fused, g1);
}

Var inter_match(Tape& t, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g2, Var g2_other) {
  const std::size_t od = data::other_domain(d);
  auto star = t.matmul(g2, p(d, "W_cross"));
  if (!s.overlap_users.empty()) {
    auto m_self = t.add(t.matmul(t.gather_rows(g2_other, s.overlap_counterparts), p(d, "W_self")), p(d, "b_self"));
    auto u_self = t.scatter_add_rows(t.relu(m_self), s.overlap_users, s.users);
    star = t.add(star, t.sub(u_self, t.matmul(u_self, p(od, "W_cross"))));
  }
  auto other = mean_message(t, g2_other, s.cdr_mean, s.has_cdr, p(d, "W_other"), p(d, "b_other"));
  auto fused = gated_fusion(t, star, other, p(d, "W_s"), p(d, "b_s"), p(d, "W_o"), p(d, "b_o"));
  return t.add(fused, g2);
}

Var complement(Tape& t, const BoundParams& p, std::size_t d, const DomainStructure& s, Var g3, Var v, Var* alpha) {
  auto out = t.add(g3, p(d, "b_ref"));
  if (s.edge_users.empty()) return out;
  auto gv = t.gather_rows(v, s.edge_items);
  auto a = t.segment_softmax(t.row_dot(t.gather_rows(g3, s.edge_users), gv), s.edge_offsets);
  if (alpha) *alpha = a;
  auto pooled = t.scatter_add_rows(t.mul_col(gv, a), s.edge_users, s.users);
  return t.add(out, t.matmul(pooled, p(d, "W_ref")));
}

std::array<StageVars, kDomains> forward_stages(Tape& t, const BoundParams& p, const Structure& s,
                                               const AblationFlags& flags) {
  std::array<StageVars, kDomains> out;
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto& o = out[d];
    o.u = p(d, "U");
    o.v = p(d, "V");
    o.g1 = encode(t, p, d, s.domains[d], o.u, o.v);
    o.g2 = flags.use_intra_matching ? intra_match(t, p, d, s.domains[d], o.g1) : o.g1;
  }
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto& o = out[d];
    o.g3 = flags.use_inter_matching ? inter_match(t, p, d, s.domains[d], o.g2, out[data::other_domain(d)].g2) : o.g2;
  }
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto& o = out[d];
    o.g4 = flags.use_complementing ? complement(t, p, d, s.domains[d], o.g3, o.v) : o.g3;
    o.final_repr = o.g4;
  }
  return out;
}

Var predict_logits(Tape& t, const BoundParams& p, std::size_t d, Var user_repr, Var item_repr,
                   const std::vector<std::size_t>& users, const std::vector<std::size_t>& items) {
  const std::size_t du = t.value(user_repr).cols();
  const std::size_t dv = t.value(item_repr).cols();
  const Var w0 = p(d, "mlp.W0");
  auto a = t.gather_rows(t.matmul(user_repr, t.row_slice(w0, 0, du)), users);
  auto c = t.gather_rows(t.matmul(item_repr, t.row_slice(w0, du, dv)), items);
  Var h = t.add(t.add(a, c), p(d, "mlp.b0"));
  for (std::size_t l = 1; p.contains(param_name(d, "mlp.W" + std::to_string(l))); ++l) {
    const auto suffix = std::to_string(l);
    h = t.add(t.matmul(t.relu(h), p(d, "mlp.W" + suffix)), p(d, "mlp.b" + suffix));
  }
  return h;
}

std::vector<Head> prediction_heads(const StageVars& s, const AblationFlags& flags) {
  std::vector<Head> heads{{"g0", s.u}, {"g1", s.g1}};
  if (flags.use_intra_matching) heads.push_back({"g2", s.g2});
  if (flags.use_inter_matching) heads.push_back({"g3", s.g3});
  heads.push_back({"final", s.final_repr});
  return heads;
}

Var mf_logits(Tape& t, const BoundParams& p, std::size_t d, const std::vector<std::size_t>& users,
              const std::vector<std::size_t>& items) {
  auto dot = t.row_dot(t.gather_rows(p(d, "mf.P"), users), t.gather_rows(p(d, "mf.Q"), items));
  return t.add(t.add(dot, t.gather_rows(p(d, "mf.bu"), users)), t.gather_rows(p(d, "mf.bi"), items));
}

std::array<StageOutputs, kDomains> stage_outputs(const ParamStore& params, const Structure& s,
                                                 const AblationFlags& flags) {
  Tape t;
  BoundParams p(t, params);
  auto vars = forward_stages(t, p, s, flags);
  std::array<StageOutputs, kDomains> out;
  for (std::size_t d = 0; d < kDomains; ++d) {
    out[d] = {t.value(vars[d].g1), t.value(vars[d].g2), t.value(vars[d].g3), t.value(vars[d].g4),
              t.value(vars[d].final_repr)};
  }
  return out;
}

std::vector<double> score_pairs(const ModelConfig& config, const ParamStore& params, std::size_t d,
                                const Tensor& user_repr, const std::vector<std::size_t>& users,
                                const std::vector<std::size_t>& items) {
  Tape t;
  Var logits;
  if (config.kind == ModelKind::MatrixFactorization) {
    std::map<std::string, Tensor> mf;
    for (const char* local : {"mf.P", "mf.Q", "mf.bu", "mf.bi"}) mf[param_name(d, local)] = params.at(param_name(d, local));
    BoundParams p(t, mf);
    logits = mf_logits(t, p, d, users, items);
  } else {
    ParamStore head;
    for (const auto& [name, value] : params)
      if (name.rfind(param_name(d, "mlp."), 0) == 0 || name == param_name(d, "V")) head[name] = value;
    BoundParams p(t, head);
    logits = predict_logits(t, p, d, t.constant(user_repr), p(d, "V"), users, items);
  }
  const auto& z = t.value(logits);
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double x = z[k];
    out[k] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return out;
}

}  // namespace nmcdr::model
