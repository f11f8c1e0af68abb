#include "nmcdr/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace nmcdr::eval {

RankResult rank_metrics(std::span<const double> scores, std::size_t positive, std::size_t k) {
  if (positive >= scores.size()) throw EvalError("positive index out of range");
  const double s = scores[positive];
  if (!std::isfinite(s)) throw EvalError("non-finite score for the positive item");
  double above = 0;
  double ties = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == positive) continue;
    if (!std::isfinite(scores[i])) throw EvalError("non-finite candidate score");
    if (scores[i] > s)
      above += 1;
    else if (scores[i] == s)
      ties += 1;
  }
  RankResult r;
  r.rank = 1.0 + above + 0.5 * ties;
  r.hit = r.rank <= static_cast<double>(k);
  r.ndcg = r.hit ? 1.0 / std::log2(r.rank + 1.0) : 0.0;
  return r;
}

RankResult rank_metrics(std::span<const double> scores, std::size_t positive, std::span<const Id> ids,
                        std::size_t k) {
  if (ids.size() != scores.size()) throw EvalError("ids and scores differ in length");
  std::unordered_set<Id> seen;
  for (Id id : ids)
    if (!seen.insert(id).second) throw EvalError("duplicate candidate item " + std::to_string(id));
  return rank_metrics(scores, positive, k);
}

Scorer model_scorer(const model::ModelConfig& config, const num::ParamStore& params, const model::Structure& structure,
                    const model::AblationFlags& flags) {
  std::array<num::Tensor, kDomains> repr;
  if (config.kind == model::ModelKind::Nmcdr) {
    auto out = model::stage_outputs(params, structure, flags);
    for (std::size_t d = 0; d < kDomains; ++d) repr[d] = std::move(out[d].final_repr);
  }
  return [config, params, repr = std::move(repr)](std::size_t d, const std::vector<std::size_t>& users,
                                                  const std::vector<std::size_t>& items) {
    return model::score_pairs(config, params, d, repr[d], users, items);
  };
}

Scorer popularity_scorer(const std::array<graph::InteractionGraph, kDomains>& graphs) {
  std::array<std::vector<double>, kDomains> pop;
  for (std::size_t d = 0; d < kDomains; ++d) {
    pop[d].resize(graphs[d].item_count());
    for (Id i = 0; i < pop[d].size(); ++i) pop[d][i] = static_cast<double>(graphs[d].users_of(i).size());
  }
  return [pop = std::move(pop)](std::size_t d, const std::vector<std::size_t>&, const std::vector<std::size_t>& items) {
    std::vector<double> out(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) out[k] = pop[d].at(items[k]);
    return out;
  };
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& m = domains[d];
    j["domains"][std::string(data::kDomainNames[d])] = {
        {"hr@10", m.hr}, {"ndcg@10", m.ndcg}, {"users", m.users}, {"skipped", m.skipped}};
  }
  j["metadata"] = metadata;
  return j;
}

std::string EvalReport::per_user_csv(const data::CrossDomainDataset& dataset) const {
  std::ostringstream out;
  out.precision(17);
  out << "domain,user_id,rank,hit,ndcg\n";
  for (const auto& r : per_user) {
    std::string key = dataset.domain(r.domain).user_key(r.user);
    if (key.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : key) {
        if (c == '"') quoted += '"';
        quoted += c;
      }
      key = quoted + "\"";
    }
    out << data::kDomainNames[r.domain] << ',' << key << ',' << r.rank << ',' << (r.hit ? 1 : 0) << ',' << r.ndcg
        << '\n';
  }
  return out.str();
}

EvalReport evaluate(const data::CrossDomainDataset& dataset, const data::SplitSpec& split, const Scorer& scorer,
                    const EvalOptions& options) {
  if (options.k == 0) throw EvalError("k must be positive");
  if (options.chunk_users == 0) throw EvalError("chunk_users must be positive");
  if (options.target == Target::Validation && !split.with_validation)
    throw EvalError("validation evaluation requested but the split has no validation items");
  EvalReport report;
  const std::size_t cands = options.negatives + 1;
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& dom = dataset.domain(d);
    auto& m = report.domains[d];
    std::vector<Id> todo;
    std::vector<Id> targets;
    for (Id u = 0; u < dom.user_count(); ++u) {
      const auto& us = split.domains[d].users.at(u);
      if (!us) {
        ++m.skipped;
        continue;
      }
      const auto target = options.target == Target::Test ? std::optional<Id>(us->test) : us->validation;
      if (!target) {
        ++m.skipped;
        continue;
      }
      todo.push_back(u);
      targets.push_back(*target);
    }
    double hr = 0;
    double ndcg = 0;
    for (std::size_t begin = 0; begin < todo.size(); begin += options.chunk_users) {
      const std::size_t end = std::min(todo.size(), begin + options.chunk_users);
      std::vector<std::size_t> users;
      std::vector<std::size_t> items;
      std::vector<std::vector<Id>> cand_ids;
      for (std::size_t k = begin; k < end; ++k) {
        std::vector<Id> ids{targets[k]};
        auto neg = data::eval_negatives(dom, d, todo[k], options.negatives, options.seed);
        ids.insert(ids.end(), neg.begin(), neg.end());
        for (Id i : ids) {
          users.push_back(todo[k]);
          items.push_back(i);
        }
        cand_ids.push_back(std::move(ids));
      }
      const auto scores = scorer(d, users, items);
      if (scores.size() != users.size()) throw EvalError("scorer returned the wrong number of scores");
      for (std::size_t k = begin; k < end; ++k) {
        const std::span<const double> s(scores.data() + (k - begin) * cands, cands);
        const auto r = rank_metrics(s, 0, cand_ids[k - begin], options.k);
        report.per_user.push_back({d, todo[k], r.rank, r.hit, r.ndcg});
        hr += r.hit ? 1.0 : 0.0;
        ndcg += r.ndcg;
      }
    }
    m.users = todo.size();
    if (m.users > 0) {
      m.hr = hr / static_cast<double>(m.users);
      m.ndcg = ndcg / static_cast<double>(m.users);
    }
  }
  report.metadata = {{"negatives", options.negatives},
                     {"k", options.k},
                     {"target", options.target == Target::Test ? "test" : "validation"},
                     {"negative_seed", options.seed}};
  return report;
}

// ---- stability diagnostic -------------------------------------------------------------

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// y = W x (+ y when accumulate), W is out×in, x and y are flat vectors.
void matvec(const num::Tensor& w, std::span<const double> x, std::span<double> y, double scale = 1.0) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
    y[r] += scale * acc;
  }
}

void check_model(const CompressedModel& m, const StabilityGraph& g) {
  const std::size_t n = g.nodes();
  if (n < 2) throw EvalError("stability graph needs at least 2 nodes");
  if (g.u >= n || g.v >= n) throw EvalError("stability node index out of range");
  const std::size_t f = g.features.cols();
  const std::size_t h1 = m.wa1.rows();
  const std::size_t h2 = m.wa2.rows();
  const bool ok = g.features.rows() == n && m.wa1.cols() == f && m.wn1.rows() == h1 && m.wn1.cols() == f &&
                  m.b1.size() == h1 && m.wa2.cols() == h1 && m.wn2.rows() == h2 && m.wn2.cols() == h1 &&
                  m.b2.size() == h2 && m.wa3.cols() == 2 * h2 && m.b3.size() == m.wa3.rows() && m.wa3.rows() > 0;
  if (!ok) throw EvalError("compressed model shapes are inconsistent");
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k : g.neighbors[j])
      if (k >= n || k == j) throw EvalError("invalid neighbor in stability graph");
}

}  // namespace

std::vector<double> compressed_output(const CompressedModel& m, const StabilityGraph& g, const num::Tensor& x) {
  check_model(m, g);
  const std::size_t n = g.nodes();
  const std::size_t d1 = m.wa1.rows();
  num::Tensor h1(n, d1);
  for (std::size_t j = 0; j < n; ++j) {
    auto out = h1.row_span(j);
    std::copy(m.b1.values().begin(), m.b1.values().end(), out.begin());
    matvec(m.wa1, x.row_span(j), out);
    const auto& nb = g.neighbors[j];
    for (std::size_t k : nb) matvec(m.wn1, x.row_span(k), out, 1.0 / static_cast<double>(nb.size()));
    for (double& v : out) v = softplus(v);
  }
  std::vector<double> total(d1, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d1; ++c) total[c] += h1(j, c);
  auto layer2 = [&](std::size_t j) {
    std::vector<double> out(m.b2.values().begin(), m.b2.values().end());
    matvec(m.wa2, h1.row_span(j), out);
    std::vector<double> others(d1);
    for (std::size_t c = 0; c < d1; ++c) others[c] = total[c] - h1(j, c);
    matvec(m.wn2, others, out, 1.0 / static_cast<double>(n - 1));
    for (double& v : out) v = softplus(v);
    return out;
  };
  auto hu = layer2(g.u);
  const auto hv = layer2(g.v);
  hu.insert(hu.end(), hv.begin(), hv.end());
  std::vector<double> z(m.b3.values().begin(), m.b3.values().end());
  matvec(m.wa3, hu, z);
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double& v : z) sum += (v = std::exp(v - mx));
  for (double& v : z) v /= sum;
  return z;
}

double instability_bound(const CompressedModel& m, const StabilityGraph& g, double c_sf, double c_sp) {
  check_model(m, g);
  double inv_deg = 0;
  for (std::size_t j : g.neighbors[g.u]) {
    const auto nj = g.neighbors[j].size();
    if (nj > 0) inv_deg += 1.0 / static_cast<double>(nj);
  }
  const double n1 = static_cast<double>(g.nodes() - 1);
  using num::spectral_norm;
  return c_sf * c_sp * c_sp * spectral_norm(m.wa3) *
         (spectral_norm(m.wa2) * spectral_norm(m.wa1) + inv_deg / n1 * spectral_norm(m.wn2) * spectral_norm(m.wn1));
}

nlohmann::json StabilityDiagnostic::to_json() const {
  return {{"gamma_hat", gamma_hat}, {"empirical_ratio", empirical_ratio}, {"trials", trials},
          {"within_bound", within_bound}};
}

StabilityDiagnostic stability_check(const CompressedModel& m, const StabilityGraph& g, const StabilityOptions& options) {
  if (options.trials == 0) throw EvalError("stability check needs at least one trial");
  if (!(options.perturbation_scale > 0)) throw EvalError("perturbation scale must be positive");
  StabilityDiagnostic out;
  out.gamma_hat = instability_bound(m, g, options.c_sf, options.c_sp);
  const auto base = compressed_output(m, g, g.features);
  num::Rng rng(options.seed);
  num::Tensor x = g.features;
  const std::size_t f = x.cols();
  for (std::size_t t = 0; t < options.trials; ++t) {
    // Perturbation magnitudes spread over three decades below the scale.
    const double mag = options.perturbation_scale * std::pow(10.0, -3.0 * num::uniform01(rng));
    std::vector<double> delta(f);
    double norm = 0;
    for (double& v : delta) {
      v = num::standard_normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0) continue;
    for (std::size_t c = 0; c < f; ++c) x(g.u, c) = g.features(g.u, c) + delta[c] * mag / norm;
    const auto z = compressed_output(m, g, x);
    double dz = 0;
    for (std::size_t c = 0; c < z.size(); ++c) dz += (z[c] - base[c]) * (z[c] - base[c]);
    out.empirical_ratio = std::max(out.empirical_ratio, std::sqrt(dz) / mag);
    ++out.trials;
  }
  out.within_bound = out.empirical_ratio <= out.gamma_hat * (1 + 1e-9) + 1e-12;
  return out;
}

std::pair<CompressedModel, StabilityGraph> random_stability_instance(const RandomStabilitySpec& spec,
                                                                     std::uint64_t seed) {
  if (spec.nodes < 2) throw EvalError("stability graph needs at least 2 nodes");
  if (spec.feature_dim == 0 || spec.hidden_dim == 0 || spec.output_dim == 0)
    throw EvalError("stability dimensions must be positive");
  num::Rng rng(seed);
  auto gauss = [&](std::size_t r, std::size_t c, double scale) {
    num::Tensor t(r, c);
    for (double& v : t.values()) v = scale * num::standard_normal(rng);
    return t;
  };
  const double s = spec.weight_scale;
  const std::size_t f = spec.feature_dim;
  const std::size_t h = spec.hidden_dim;
  CompressedModel m;
  m.wa1 = gauss(h, f, s / std::sqrt(double(f)));
  m.wn1 = gauss(h, f, s / std::sqrt(double(f)));
  m.b1 = gauss(1, h, 0.1);
  m.wa2 = gauss(h, h, s / std::sqrt(double(h)));
  m.wn2 = gauss(h, h, s / std::sqrt(double(h)));
  m.b2 = gauss(1, h, 0.1);
  m.wa3 = gauss(spec.output_dim, 2 * h, s / std::sqrt(double(2 * h)));
  m.b3 = gauss(1, spec.output_dim, 0.1);

  StabilityGraph g;
  const std::size_t n = spec.nodes;
  std::vector<std::vector<std::uint8_t>> adj(n, std::vector<std::uint8_t>(n, 0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (num::uniform01(rng) < spec.edge_probability) adj[a][b] = adj[b][a] = 1;
  for (std::size_t a = 0; a < n; ++a) {
    if (std::find(adj[a].begin(), adj[a].end(), 1) != adj[a].end()) continue;
    auto b = static_cast<std::size_t>(num::uniform_below(rng, n - 1));
    if (b >= a) ++b;
    adj[a][b] = adj[b][a] = 1;
  }
  g.neighbors.resize(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (adj[a][b]) g.neighbors[a].push_back(b);
  g.features = gauss(n, f, 1.0);
  g.u = static_cast<std::size_t>(num::uniform_below(rng, n));
  g.v = static_cast<std::size_t>(num::uniform_below(rng, n - 1));
  if (g.v >= g.u) ++g.v;
  return {std::move(m), std::move(g)};
}

CompressedModel compress_trained(const num::ParamStore& params, std::size_t domain) {
  auto get = [&](std::string_view local) {
    const auto name = model::param_name(domain, local);
    auto it = params.find(name);
    if (it == params.end()) throw EvalError("trained parameters lack " + name);
    return it->second;
  };
  CompressedModel m;
  m.wa1 = num::transpose(get("W_hge"));
  m.wn1 = m.wa1;
  m.b1 = get("b_hge");
  m.wa2 = num::Tensor::identity(m.wa1.rows());
  m.wn2 = num::transpose(get("W_head"));
  m.b2 = get("b_head");
  m.wa3 = num::transpose(get("mlp.W0"));
  m.b3 = get("mlp.b0");
  return m;
}

}  // namespace nmcdr::eval
