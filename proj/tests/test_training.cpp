#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "model_fixture.hpp"
#include "nmcdr/data/synthetic.hpp"
#include "nmcdr/eval/eval.hpp"
#include "nmcdr/training/training.hpp"

using namespace nmcdr;
using namespace nmcdr::training;
using nmcdr::testing::make_world;
using nmcdr::testing::random_params;
using nmcdr::testing::World;
using nmcdr::testing::WorldSpec;

namespace {

const double kLn2 = std::numbers::ln2;

model::ModelConfig tiny_config(std::size_t dim = 3) {
  model::ModelConfig c;
  c.dim = c.d_hge = c.d_igm = c.d_cgm = c.d_ref = dim;
  c.mlp_hidden = {3};
  return c;
}

WorldSpec tiny_world() {
  WorldSpec s;
  s.users = 5;
  s.items = 6;
  s.min_degree = 3;
  s.max_degree = 5;
  s.k_head = 3;
  s.overlap = 0.6;
  return s;
}

// A few labeled pairs per domain covering every user.
std::array<Batch, 2> labeled_batches(const World& w) {
  std::array<Batch, 2> out;
  for (std::size_t d = 0; d < 2; ++d) {
    const auto& dom = w.dataset.domain(d);
    for (data::Id u = 0; u < dom.user_count(); ++u) {
      for (data::Id i = u % 2; i < dom.item_count(); i += 2) {
        out[d].users.push_back(u);
        out[d].items.push_back(i);
        out[d].labels.push_back(dom.has_interaction(u, i) ? 1.0 : 0.0);
      }
    }
  }
  return out;
}

num::ParamStore zero_params(const model::ModelConfig& cfg, const World& w) {
  auto ps = model::init_params(cfg, w.shapes(), 1);
  for (auto& [name, t] : ps) t.fill(0.0);
  return ps;
}

double loss_value(const model::ModelConfig& cfg, const num::ParamStore& ps, const World& w,
                  const model::AblationFlags& flags, const LossWeights& lw) {
  num::Tape t;
  model::BoundParams p(t, ps);
  auto terms = total_loss(t, p, cfg, w.structure, flags, lw, labeled_batches(w));
  return t.value(terms.total)[0];
}

struct SyntheticRun {
  data::CrossDomainDataset dataset;
  data::SplitSpec split;
};

SyntheticRun synthetic_run(const data::SyntheticSpec& spec, double overlap) {
  auto syn = data::generate_synthetic(spec);
  SyntheticRun r;
  r.dataset = data::build_cross(data::DomainIndex::from_raw(syn.interactions[0], 3),
                                data::DomainIndex::from_raw(syn.interactions[1], 3), overlap, spec.seed);
  r.split = data::split(r.dataset, {}, spec.seed);
  return r;
}

std::array<model::DomainShape, 2> shapes_of(const data::CrossDomainDataset& ds) {
  return {model::DomainShape{ds.domain(0).user_count(), ds.domain(0).item_count()},
          model::DomainShape{ds.domain(1).user_count(), ds.domain(1).item_count()}};
}

}  // namespace

TEST_CASE("bce: reference values") {
  CHECK(bce(0.5, 1.0) == doctest::Approx(kLn2));
  CHECK(bce(0.5, 0.0) == doctest::Approx(kLn2));
  CHECK(bce_from_logit(0.0, 1.0) == doctest::Approx(kLn2));
  CHECK(bce_from_logit(2.0, 1.0) == doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-2.0)))));
  CHECK(bce_from_logit(-800.0, 0.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(bce_from_logit(800.0, 0.0)));
  CHECK(bce(1.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("total_loss: zero parameters give ln2 per head") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  const auto ps = zero_params(cfg, w);
  // Each domain: four companion heads plus the final head.
  CHECK(loss_value(cfg, ps, w, {}, {}) == doctest::Approx(10 * kLn2));

  num::Tape t;
  model::BoundParams p(t, ps);
  auto terms = total_loss(t, p, cfg, w.structure, {}, {}, labeled_batches(w));
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(t.value(terms.final_loss[d])[0] == doctest::Approx(kLn2));
    REQUIRE(terms.companion[d]);
    CHECK(t.value(*terms.companion[d])[0] == doctest::Approx(4 * kLn2));
  }
}

TEST_CASE("total_loss: weights select and scale terms") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  const auto ps = random_params(cfg, w, 4);
  LossWeights zero;
  zero.companion = {0, 0, 0, 0};
  zero.companion_domain = {0, 0};
  zero.final_domain = {0, 0};
  CHECK(loss_value(cfg, ps, w, {}, zero) == 0.0);

  LossWeights only_final;
  only_final.companion_domain = {0, 0};
  const double base = loss_value(cfg, ps, w, {}, only_final);
  auto no_sup = model::ablation_variant("w/o-Sup");
  CHECK(loss_value(cfg, ps, w, no_sup, {}) == doctest::Approx(base).epsilon(1e-12));
  LossWeights no_final;
  no_final.final_domain = {0, 0};
  CHECK(loss_value(cfg, ps, w, no_sup, no_final) == 0.0);

  LossWeights doubled;
  doubled.companion = {2, 2, 2, 2};
  doubled.companion_domain = {1, 1};
  doubled.final_domain = {2, 2};
  CHECK(loss_value(cfg, ps, w, {}, doubled) == doctest::Approx(2 * loss_value(cfg, ps, w, {}, {})));

  LossWeights bad;
  bad.final_domain = {-1, 1};
  CHECK_THROWS_AS(bad.validate(), TrainingError);
}

TEST_CASE("total_loss: mirrored domains give equal per-domain losses") {
  std::vector<data::DomainIndex::Edge> edges;
  num::Rng rng(3);
  for (int u = 0; u < 8; ++u)
    for (auto i : num::sample_without_replacement(rng, 9, 4))
      edges.push_back({"u" + std::to_string(u), "i" + std::to_string(i), static_cast<std::int64_t>(i + u)});
  World w;
  w.dataset = data::build_cross(data::DomainIndex::build(edges, 1), data::DomainIndex::build(edges, 1), 1.0, 1);
  w.split = data::split(w.dataset, {}, 1);
  for (std::size_t d = 0; d < 2; ++d) {
    w.graphs[d] = graph::InteractionGraph::build(w.dataset.domain(d), w.split.domains[d]);
    w.labels[d] = graph::label_head_tail(w.graphs[d], 3);
  }
  w.matching = graph::sample_matching(w.graphs, w.labels, w.dataset, {512, true}, 1, 0);
  w.structure = model::build_structure(w.graphs, w.matching, w.dataset);
  const auto cfg = tiny_config();
  auto ps = random_params(cfg, w, 8);
  for (auto& [name, t] : ps)
    if (name.rfind("Zbar.", 0) == 0) t = ps.at("Z." + name.substr(5));

  num::Tape t;
  model::BoundParams p(t, ps);
  auto terms = total_loss(t, p, cfg, w.structure, {}, {}, labeled_batches(w));
  CHECK(t.value(terms.final_loss[0])[0] == doctest::Approx(t.value(terms.final_loss[1])[0]).epsilon(1e-12));
  CHECK(t.value(*terms.companion[0])[0] == doctest::Approx(t.value(*terms.companion[1])[0]).epsilon(1e-12));
}

TEST_CASE("total_loss: analytic gradients match finite differences on a 5-user, 6-item instance") {
  auto w = make_world(tiny_world());
  REQUIRE(w.dataset.domain(0).user_count() == 5);
  REQUIRE(w.dataset.domain(0).item_count() == 6);
  const auto cfg = tiny_config();
  for (std::uint64_t seed : {1, 2}) {
    for (const auto& variant : model::ablation_variant_names()) {
      const auto ps = random_params(cfg, w, seed);
      num::Tape t;
      model::BoundParams p(t, ps);
      auto terms = total_loss(t, p, cfg, w.structure, model::ablation_variant(variant), {}, labeled_batches(w));
      const auto r = nmcdr::testing::check_gradients(t, terms.total);
      INFO("variant " << variant << " seed " << seed << " worst " << r.worst_relative);
      CHECK(r.checked > 300);
      CHECK(r.ok());
    }
  }
}

TEST_CASE("total_loss: mf gradients match finite differences") {
  auto w = make_world(tiny_world());
  auto cfg = tiny_config();
  cfg.kind = model::ModelKind::MatrixFactorization;
  cfg.mf_factors = 3;
  const auto ps = random_params(cfg, w, 3);
  num::Tape t;
  model::BoundParams p(t, ps);
  auto terms = total_loss(t, p, cfg, w.structure, {}, {}, labeled_batches(w));
  CHECK(nmcdr::testing::check_gradients(t, terms.total).ok());
}

TEST_CASE("train: zero epochs and zero learning rate leave parameters unchanged") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  const auto ps = random_params(cfg, w, 2);
  auto data = prepare_training_data(w.dataset, w.split, 3, {512, true});
  TrainConfig tc;
  tc.epochs = 0;
  auto r = train(data, ps, cfg, {}, {}, tc, 1);
  CHECK(r.params == ps);
  CHECK(r.history.empty());
  tc.epochs = 3;
  tc.learning_rate = 0.0;
  r = train(data, ps, cfg, {}, {}, tc, 1);
  CHECK(r.params == ps);
  CHECK(r.history.size() == 3);
}

TEST_CASE("train: identical seeds give identical histories and parameters") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  const auto ps = model::init_params(cfg, w.shapes(), 5);
  auto data = prepare_training_data(w.dataset, w.split, 3, {2, false});
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 4;
  tc.learning_rate = 1e-2;
  const auto a = train(data, ps, cfg, {}, {}, tc, 9);
  const auto b = train(data, ps, cfg, {}, {}, tc, 9);
  CHECK(a.params == b.params);
  CHECK(a.history == b.history);
  CHECK(a.history.front()["wall_ms"].is_null());
  const auto c = train(data, ps, cfg, {}, {}, tc, 10);
  CHECK(c.params != a.params);
}

TEST_CASE("train: early stopping returns the best validated parameters") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  const auto ps = model::init_params(cfg, w.shapes(), 5);
  auto data = prepare_training_data(w.dataset, w.split, 3, {512, true});
  TrainConfig tc;
  tc.epochs = 20;
  tc.patience = 2;
  tc.learning_rate = 1e-2;
  std::size_t calls = 0;
  std::vector<num::ParamStore> seen;
  // Validation score peaks at the second evaluation.
  Validator v = [&](const num::ParamStore& p) {
    seen.push_back(p);
    const double s = ++calls == 2 ? 1.0 : 0.1;
    return std::array<double, 2>{s, s};
  };
  const auto r = train(data, ps, cfg, {}, {}, tc, 1, v);
  CHECK(r.epochs_run == 4);
  REQUIRE(r.best_epoch);
  CHECK(*r.best_epoch == 2);
  CHECK(r.params == seen[1]);
  CHECK(r.history[1]["val_ndcg_Z"] == 1.0);
}

TEST_CASE("train: invalid configuration is rejected") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), TrainingError);
  tc = {};
  tc.learning_rate = std::nan("");
  CHECK_THROWS_AS(tc.validate(), TrainingError);
}

TEST_CASE("train: non-finite parameters raise a diagnostic error") {
  auto w = make_world(tiny_world());
  const auto cfg = tiny_config();
  auto ps = model::init_params(cfg, w.shapes(), 5);
  ps.at("Z.W_hge")[0] = std::nan("");
  auto data = prepare_training_data(w.dataset, w.split, 3, {512, true});
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train(data, ps, cfg, {}, {}, tc, 1);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find("Z.W_hge") != std::string::npos);
  }
}

TEST_CASE("train: 30 epochs on 200-user rank-4 synthetic data cut train BCE by at least 30%") {
  data::SyntheticSpec spec;
  spec.users = 200;
  spec.items = 120;
  spec.max_degree = 40;
  spec.min_degree = 5;
  const auto run = synthetic_run(spec, 0.5);
  auto cfg = tiny_config(8);
  cfg.mlp_hidden = {8};
  const auto ps = model::init_params(cfg, shapes_of(run.dataset), 1);
  auto data = prepare_training_data(run.dataset, run.split, 7, {16, false});
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 256;
  tc.learning_rate = 1e-2;
  const double before = train_bce(data, ps, cfg, {}, 1);
  const auto r = train(data, ps, cfg, {}, {}, tc, 1);
  const double after = train_bce(data, r.params, cfg, {}, 1);
  INFO("train BCE " << before << " -> " << after);
  CHECK(before == doctest::Approx(kLn2).epsilon(1e-3));
  CHECK(after <= 0.7 * before);
}

TEST_CASE("train: matrix factorization beats popularity on rank-1 synthetic data") {
  data::SyntheticSpec spec;
  spec.users = 1000;
  spec.items = 300;
  spec.rank = 1;
  spec.max_degree = 30;
  spec.min_degree = 5;
  const auto run = synthetic_run(spec, 0.5);
  model::ModelConfig cfg;
  cfg.kind = model::ModelKind::MatrixFactorization;
  cfg.mf_factors = 4;
  const auto ps = model::init_params(cfg, shapes_of(run.dataset), 1);
  auto data = prepare_training_data(run.dataset, run.split, 7, {});
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 256;
  tc.learning_rate = 1e-2;
  const auto r = train(data, ps, cfg, {}, {}, tc, 1);
  eval::EvalOptions opt;
  opt.negatives = 99;
  opt.seed = 4;
  const auto mf = eval::evaluate(run.dataset, run.split, eval::model_scorer(cfg, r.params, {}, {}), opt);
  const auto pop = eval::evaluate(run.dataset, run.split, eval::popularity_scorer(data.graphs), opt);
  for (std::size_t d = 0; d < 2; ++d) {
    INFO("domain " << d << " mf " << mf.domains[d].hr << " popularity " << pop.domains[d].hr);
    CHECK(mf.domains[d].hr > pop.domains[d].hr);
  }
}
