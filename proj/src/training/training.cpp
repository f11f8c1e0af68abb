#include "nmcdr/training/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

namespace nmcdr::training {

void LossWeights::validate() const {
  for (double w : companion)
    if (!(w >= 0.0)) throw TrainingError("loss weights must be non-negative");
  for (std::size_t d = 0; d < kDomains; ++d)
    if (!(companion_domain[d] >= 0.0) || !(final_domain[d] >= 0.0)) throw TrainingError("loss weights must be non-negative");
}

nlohmann::json LossWeights::to_json() const {
  return {{"w1", companion[0]},        {"w2", companion[1]},        {"w3", companion[2]}, {"w4", companion[3]},
          {"w5", companion_domain[0]}, {"w6", companion_domain[1]}, {"w7", final_domain[0]}, {"w8", final_domain[1]}};
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw TrainingError("train.batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw TrainingError("train.learning_rate must be finite and non-negative");
  if (negatives == 0) throw TrainingError("train.negatives must be positive");
  if (patience == 0) throw TrainingError("train.patience must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},         {"learning_rate", learning_rate}, {"epochs", epochs},
          {"negatives", negatives},           {"eval_every", eval_every},       {"patience", patience},
          {"resample_matching", resample_matching}, {"record_wall_time", record_wall_time}};
}

double bce_from_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double bce(double p, double y) {
  const double eps = 1e-300;
  return -(y * std::log(std::max(p, eps)) + (1.0 - y) * std::log(std::max(1.0 - p, eps)));
}

namespace {

std::optional<std::size_t> companion_slot(const std::string& head) {
  if (head == "g0") return 0;
  if (head == "g1") return 1;
  if (head == "g2") return 2;
  if (head == "g3") return 3;
  return std::nullopt;
}

Var mean_bce(Tape& t, Var logits, const Batch& b) { return t.mean(t.bce_with_logits(logits, b.labels)); }

// Σ of weighted terms; a zero constant when nothing contributes.
Var weighted_sum(Tape& t, const std::vector<std::pair<double, Var>>& terms) {
  Var acc;
  for (const auto& [w, v] : terms) {
    if (w == 0.0) continue;
    auto term = w == 1.0 ? v : t.scale(v, w);
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return acc.valid() ? acc : t.constant(num::Tensor(1, 1));
}

}  // namespace

Var companion_loss(Tape& t, const model::BoundParams& p, std::size_t d, const std::vector<model::Head>& heads,
                   Var items, const Batch& batch, const LossWeights& weights) {
  std::vector<std::pair<double, Var>> terms;
  for (const auto& h : heads) {
    auto slot = companion_slot(h.name);
    if (!slot || weights.companion[*slot] == 0.0) continue;
    terms.emplace_back(weights.companion[*slot],
                       mean_bce(t, model::predict_logits(t, p, d, h.repr, items, batch.users, batch.items), batch));
  }
  return weighted_sum(t, terms);
}

LossTerms total_loss(Tape& t, const model::BoundParams& p, const model::ModelConfig& config,
                     const model::Structure& structure, const model::AblationFlags& flags,
                     const LossWeights& weights, const std::array<Batch, kDomains>& batches) {
  LossTerms out;
  std::vector<std::pair<double, Var>> terms;
  if (config.kind == model::ModelKind::MatrixFactorization) {
    for (std::size_t d = 0; d < kDomains; ++d) {
      if (batches[d].size() == 0) continue;
      out.final_loss[d] = mean_bce(t, model::mf_logits(t, p, d, batches[d].users, batches[d].items), batches[d]);
      terms.emplace_back(weights.final_domain[d], out.final_loss[d]);
    }
    out.total = weighted_sum(t, terms);
    return out;
  }
  auto stages = model::forward_stages(t, p, structure, flags);
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& b = batches[d];
    if (b.size() == 0) continue;
    auto heads = model::prediction_heads(stages[d], flags);
    out.final_loss[d] = mean_bce(t, model::predict_logits(t, p, d, heads.back().repr, stages[d].v, b.users, b.items), b);
    terms.emplace_back(weights.final_domain[d], out.final_loss[d]);
    if (flags.use_companion_losses) {
      out.companion[d] = companion_loss(t, p, d, heads, stages[d].v, b, weights);
      terms.emplace_back(weights.companion_domain[d], *out.companion[d]);
    }
  }
  out.total = weighted_sum(t, terms);
  return out;
}

TrainingData prepare_training_data(const data::CrossDomainDataset& dataset, const data::SplitSpec& split,
                                   std::size_t k_head, const graph::MatchingOptions& matching) {
  TrainingData td;
  td.dataset = &dataset;
  td.split = &split;
  td.matching = matching;
  for (std::size_t d = 0; d < kDomains; ++d) {
    td.graphs[d] = graph::InteractionGraph::build(dataset.domain(d), split.domains[d]);
    td.labels[d] = graph::label_head_tail(td.graphs[d], k_head);
  }
  return td;
}

model::Structure epoch_structure(const TrainingData& data, std::uint64_t root_seed, std::uint64_t epoch) {
  auto matching = graph::sample_matching(data.graphs, data.labels, *data.dataset, data.matching,
                                         num::stream_seed(root_seed, "matching"), epoch);
  return model::build_structure(data.graphs, matching, *data.dataset);
}

model::Structure evaluation_structure(const TrainingData& data, std::uint64_t root_seed) {
  return epoch_structure(data, root_seed, 0);
}

namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

std::array<Pairs, kDomains> train_positives(const TrainingData& data) {
  std::array<Pairs, kDomains> out;
  for (std::size_t d = 0; d < kDomains; ++d)
    for (graph::Id u = 0; u < data.graphs[d].user_count(); ++u)
      for (auto i : data.graphs[d].items_of(u)) out[d].emplace_back(u, i);
  return out;
}

Batch make_batch(const data::DomainIndex& domain, const Pairs& positives, std::size_t begin, std::size_t end,
                 std::size_t negatives, num::Rng& rng) {
  Batch b;
  for (std::size_t k = begin; k < end; ++k) {
    b.users.push_back(positives[k].first);
    b.items.push_back(positives[k].second);
    b.labels.push_back(1.0);
  }
  for (std::size_t k = begin; k < end; ++k) {
    const auto u = positives[k].first;
    for (auto i : data::sample_negatives(domain, static_cast<data::Id>(u), negatives, rng)) {
      b.users.push_back(u);
      b.items.push_back(i);
      b.labels.push_back(0.0);
    }
  }
  return b;
}

std::string diagnose(const num::ParamStore& params, std::size_t epoch, std::size_t batch, const std::string& what) {
  std::ostringstream s;
  s << what << " at epoch " << epoch << ", batch " << batch;
  std::string worst;
  double worst_norm = -1;
  for (const auto& [name, t] : params) {
    if (!t.all_finite()) {
      s << "; parameter " << name << " is non-finite";
      continue;
    }
    const double n = t.frobenius_norm();
    if (n > worst_norm) {
      worst_norm = n;
      worst = name;
    }
  }
  if (!worst.empty()) s << "; largest parameter norm " << worst << " = " << worst_norm;
  return s.str();
}

nlohmann::json maybe(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

TrainResult train(const TrainingData& data, num::ParamStore params, const model::ModelConfig& config,
                  const model::AblationFlags& flags, const LossWeights& weights, const TrainConfig& tc,
                  std::uint64_t root_seed, const Validator& validator) {
  config.validate();
  weights.validate();
  tc.validate();
  TrainResult result;
  num::AdamState adam({tc.learning_rate, 0.9, 0.999, 1e-8});
  const auto positives = train_positives(data);
  const bool nmcdr = config.kind == model::ModelKind::Nmcdr;
  const auto batch_seed = num::stream_seed(root_seed, "batches");
  const auto negative_seed = num::stream_seed(root_seed, "negatives");

  model::Structure structure;
  if (nmcdr && !tc.resample_matching) structure = epoch_structure(data, root_seed, 1);

  std::optional<double> best_score;
  num::ParamStore best_params;
  std::size_t stale_evals = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (nmcdr && tc.resample_matching) structure = epoch_structure(data, root_seed, epoch);
    auto order = positives;
    std::size_t steps = 0;
    for (std::size_t d = 0; d < kDomains; ++d) {
      num::Rng rng(num::derive_seed(batch_seed, epoch, d));
      num::shuffle(order[d], rng);
      steps = std::max(steps, (order[d].size() + tc.batch_size - 1) / tc.batch_size);
    }
    if (steps == 0) throw TrainingError("no training pairs");

    double sum_total = 0;
    std::array<double, kDomains> sum_co{}, sum_cls{};
    std::array<std::size_t, kDomains> n_co{}, n_cls{};
    for (std::size_t step = 0; step < steps; ++step) {
      std::array<Batch, kDomains> batches;
      for (std::size_t d = 0; d < kDomains; ++d) {
        // Equal step counts for both domains; the smaller domain takes proportionally smaller batches.
        const std::size_t n = order[d].size();
        num::Rng rng(num::derive_seed(negative_seed, epoch, d, step));
        batches[d] = make_batch(data.dataset->domain(d), order[d], step * n / steps, (step + 1) * n / steps,
                                tc.negatives, rng);
      }
      Tape tape;
      model::BoundParams bound(tape, params);
      num::Gradients grads;
      LossTerms terms;
      try {
        terms = total_loss(tape, bound, config, structure, flags, weights, batches);
        const double total = tape.value(terms.total)[0];
        if (!std::isfinite(total)) throw num::NumericError("non-finite loss");
        grads = tape.backward(terms.total);
        adam.apply(params, grads);
      } catch (const num::NumericError& e) {
        throw TrainingError(diagnose(params, epoch, step, e.what()));
      }
      sum_total += tape.value(terms.total)[0];
      for (std::size_t d = 0; d < kDomains; ++d) {
        if (terms.final_loss[d].valid()) {
          sum_cls[d] += tape.value(terms.final_loss[d])[0];
          ++n_cls[d];
        }
        if (terms.companion[d]) {
          sum_co[d] += tape.value(*terms.companion[d])[0];
          ++n_co[d];
        }
      }
    }

    std::array<std::optional<double>, kDomains> val;
    bool stop = false;
    if (validator && tc.eval_every > 0 && epoch % tc.eval_every == 0) {
      const auto ndcg = validator(params);
      for (std::size_t d = 0; d < kDomains; ++d) val[d] = ndcg[d];
      const double score = 0.5 * (ndcg[0] + ndcg[1]);
      if (!best_score || score > *best_score) {
        best_score = score;
        best_params = params;
        result.best_epoch = epoch;
        stale_evals = 0;
      } else if (++stale_evals >= tc.patience) {
        stop = true;
      }
    }
    auto avg = [](double s, std::size_t n) { return n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt; };
    nlohmann::json rec;
    rec["epoch"] = epoch;
    rec["loss_total"] = sum_total / static_cast<double>(steps);
    rec["loss_co_Z"] = maybe(avg(sum_co[0], n_co[0]));
    rec["loss_co_Zbar"] = maybe(avg(sum_co[1], n_co[1]));
    rec["loss_cls_Z"] = maybe(avg(sum_cls[0], n_cls[0]));
    rec["loss_cls_Zbar"] = maybe(avg(sum_cls[1], n_cls[1]));
    rec["val_ndcg_Z"] = maybe(val[0]);
    rec["val_ndcg_Zbar"] = maybe(val[1]);
    rec["wall_ms"] = tc.record_wall_time
                         ? nlohmann::json(std::chrono::duration_cast<std::chrono::milliseconds>(
                                              std::chrono::steady_clock::now() - start)
                                              .count())
                         : nlohmann::json(nullptr);
    spdlog::info("epoch {}: loss {:.5f}", epoch, rec["loss_total"].get<double>());
    result.history.push_back(std::move(rec));
    result.epochs_run = epoch;
    if (stop) {
      spdlog::info("early stop after epoch {} (best epoch {})", epoch, *result.best_epoch);
      break;
    }
  }
  result.params = result.best_epoch ? std::move(best_params) : std::move(params);
  return result;
}

double train_bce(const TrainingData& data, const num::ParamStore& params, const model::ModelConfig& config,
                 const model::AblationFlags& flags, std::uint64_t root_seed) {
  const auto positives = train_positives(data);
  model::Structure structure;
  if (config.kind == model::ModelKind::Nmcdr) structure = evaluation_structure(data, root_seed);
  std::array<Batch, kDomains> batches;
  for (std::size_t d = 0; d < kDomains; ++d) {
    num::Rng rng(num::derive_seed(num::stream_seed(root_seed, "train-bce"), d));
    batches[d] = make_batch(data.dataset->domain(d), positives[d], 0, positives[d].size(), 1, rng);
  }
  Tape tape;
  model::BoundParams bound(tape, params);
  auto terms = total_loss(tape, bound, config, structure, flags, LossWeights{}, batches);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < kDomains; ++d) {
    if (!terms.final_loss[d].valid()) continue;
    sum += tape.value(terms.final_loss[d])[0];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace nmcdr::training
