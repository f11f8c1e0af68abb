#pragma once
// Small two-domain worlds with every structural piece the model needs.

#include <array>

#include "dense_oracle.hpp"
#include "nmcdr/model/model.hpp"

namespace nmcdr::testing {

struct World {
  data::CrossDomainDataset dataset;
  data::SplitSpec split;
  std::array<graph::InteractionGraph, 2> graphs;
  std::array<graph::HeadTailLabels, 2> labels;
  graph::MatchingNeighborhood matching;
  model::Structure structure;

  std::array<model::DomainShape, 2> shapes() const {
    return {model::DomainShape{graphs[0].user_count(), graphs[0].item_count()},
            model::DomainShape{graphs[1].user_count(), graphs[1].item_count()}};
  }

  std::array<oracle::DomainInput, 2> oracle_input() const {
    std::array<oracle::DomainInput, 2> in;
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& g = graphs[d];
      const auto& m = matching.domains[d];
      for (data::Id u = 0; u < g.user_count(); ++u) {
        in[d].items.emplace_back(g.items_of(u).begin(), g.items_of(u).end());
        in[d].head.emplace_back(m.head.of(u).begin(), m.head.of(u).end());
        in[d].tail.emplace_back(m.tail.of(u).begin(), m.tail.of(u).end());
        in[d].cdr.emplace_back(m.cdr.of(u).begin(), m.cdr.of(u).end());
        auto c = dataset.counterpart(d, u);
        in[d].counterpart.push_back(c ? std::optional<std::size_t>(*c) : std::nullopt);
      }
    }
    return in;
  }
};

struct WorldSpec {
  std::size_t users = 12;
  std::size_t items = 15;
  std::size_t min_degree = 3;
  std::size_t max_degree = 8;
  double overlap = 0.5;
  std::size_t k_head = 4;
  graph::MatchingOptions matching{512, true};
  std::uint64_t seed = 1;
};

inline World make_world(const WorldSpec& spec) {
  World w;
  std::array<std::vector<data::DomainIndex::Edge>, 2> edges;
  num::Rng rng(spec.seed);
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t u = 0; u < spec.users; ++u) {
      const auto deg = spec.min_degree + num::uniform_below(rng, spec.max_degree - spec.min_degree + 1);
      for (auto i : num::sample_without_replacement(rng, spec.items, deg))
        edges[d].push_back({"u" + std::to_string(u), "i" + std::to_string(i), static_cast<std::int64_t>(i * 3 + u)});
    }
  w.dataset = data::build_cross(data::DomainIndex::build(edges[0], 1), data::DomainIndex::build(edges[1], 1),
                                spec.overlap, spec.seed);
  w.split = data::split(w.dataset, {}, spec.seed);
  for (std::size_t d = 0; d < 2; ++d) {
    w.graphs[d] = graph::InteractionGraph::build(w.dataset.domain(d), w.split.domains[d]);
    w.labels[d] = graph::label_head_tail(w.graphs[d], spec.k_head);
  }
  w.matching = graph::sample_matching(w.graphs, w.labels, w.dataset, spec.matching, spec.seed, 0);
  w.structure = model::build_structure(w.graphs, w.matching, w.dataset);
  return w;
}

/// Parameters with every entry drawn at a scale where gates and ReLUs are non-trivial.
inline num::ParamStore random_params(const model::ModelConfig& cfg, const World& w, std::uint64_t seed,
                                     double scale = 0.5) {
  auto ps = model::init_params(cfg, w.shapes(), seed);
  num::Rng rng(seed ^ 0x5eed);
  for (auto& [name, t] : ps)
    for (auto& x : t.values()) x = scale * num::standard_normal(rng);
  return ps;
}

}  // namespace nmcdr::testing
