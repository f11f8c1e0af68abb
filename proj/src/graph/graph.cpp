#include "nmcdr/graph/graph.hpp"

#include <algorithm>

namespace nmcdr::graph {

InteractionGraph InteractionGraph::build(const data::DomainIndex& domain, const data::DomainSplit& split) {
  if (split.users.size() != domain.user_count()) throw GraphError("split does not cover the domain's users");
  InteractionGraph g;
  g.user_items_.resize(domain.user_count());
  g.item_users_.resize(domain.item_count());
  g.active_.assign(domain.user_count(), 0);
  for (Id u = 0; u < domain.user_count(); ++u) {
    const auto& us = split.users[u];
    if (!us) continue;
    if (us->train.empty()) throw GraphError("user '" + domain.user_key(u) + "' has an empty train list");
    g.active_[u] = 1;
    g.user_items_[u] = us->train;
    std::sort(g.user_items_[u].begin(), g.user_items_[u].end());
    for (Id i : g.user_items_[u]) {
      if (i >= domain.item_count()) throw GraphError("train item out of range");
      g.item_users_[i].push_back(u);
    }
    g.edges_ += g.user_items_[u].size();
  }
  return g;
}

std::vector<Id> InteractionGraph::active_users() const {
  std::vector<Id> out;
  for (Id u = 0; u < user_count(); ++u)
    if (active_[u]) out.push_back(u);
  return out;
}

std::shared_ptr<const num::SparseRows> InteractionGraph::mean_rows() const {
  auto rows = std::make_shared<num::SparseRows>();
  std::vector<std::size_t> members;
  for (const auto& list : user_items_) {
    members.assign(list.begin(), list.end());
    rows->push_mean_row(members);
  }
  return rows;
}

std::vector<std::size_t> InteractionGraph::segment_offsets() const {
  std::vector<std::size_t> offsets{0};
  for (const auto& list : user_items_) offsets.push_back(offsets.back() + list.size());
  return offsets;
}

std::vector<std::size_t> InteractionGraph::flat_items() const {
  std::vector<std::size_t> out;
  out.reserve(edges_);
  for (const auto& list : user_items_) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::vector<std::size_t> InteractionGraph::flat_users() const {
  std::vector<std::size_t> out;
  out.reserve(edges_);
  for (Id u = 0; u < user_count(); ++u) out.insert(out.end(), user_items_[u].size(), u);
  return out;
}

std::size_t HeadTailLabels::head_count() const noexcept {
  return static_cast<std::size_t>(std::count(head.begin(), head.end(), std::uint8_t{1}));
}

HeadTailLabels label_head_tail(const InteractionGraph& graph, std::size_t k_head) {
  HeadTailLabels labels;
  labels.k_head = k_head;
  labels.head.resize(graph.user_count());
  for (Id u = 0; u < graph.user_count(); ++u) labels.head[u] = graph.degree(u) > k_head ? 1 : 0;
  return labels;
}

std::shared_ptr<const num::SparseRows> NeighborSets::mean_rows() const {
  auto rows = std::make_shared<num::SparseRows>();
  std::vector<std::size_t> m;
  for (Id u = 0; u < users(); ++u) {
    auto s = of(u);
    m.assign(s.begin(), s.end());
    rows->push_mean_row(m);
  }
  return rows;
}

num::Tensor NeighborSets::nonempty() const {
  num::Tensor t(users(), 1);
  for (Id u = 0; u < users(); ++u) t[u] = offsets[u + 1] > offsets[u] ? 1.0 : 0.0;
  return t;
}

namespace {

// Appends min(S, |pool \ {skip}|) distinct members of `pool` (sorted) to `out`, in sampled order.
void draw(const std::vector<Id>& pool, std::optional<Id> skip, const MatchingOptions& options, num::Rng& rng,
          NeighborSets& out) {
  std::size_t hole = pool.size();
  if (skip) {
    auto it = std::lower_bound(pool.begin(), pool.end(), *skip);
    if (it != pool.end() && *it == *skip) hole = static_cast<std::size_t>(it - pool.begin());
  }
  const std::size_t n = pool.size() - (hole < pool.size() ? 1 : 0);
  auto at = [&](std::size_t k) { return pool[k >= hole ? k + 1 : k]; };
  if (options.exact || n <= options.sample_size) {
    for (std::size_t k = 0; k < n; ++k) out.members.push_back(at(k));
  } else {
    for (auto k : num::sample_without_replacement(rng, n, options.sample_size)) out.members.push_back(at(k));
  }
  out.offsets.push_back(out.members.size());
}

}  // namespace

MatchingNeighborhood sample_matching(const std::array<InteractionGraph, kDomains>& graphs,
                                     const std::array<HeadTailLabels, kDomains>& labels,
                                     const data::CrossDomainDataset& dataset, const MatchingOptions& options,
                                     std::uint64_t seed, std::uint64_t epoch) {
  if (options.sample_size < 1) throw GraphError("matching sample size must be at least 1");
  std::array<std::vector<Id>, kDomains> heads, tails, actives;
  for (std::size_t d = 0; d < kDomains; ++d) {
    if (options.exact && graphs[d].user_count() > kExactModeMaxUsers) {
      throw GraphError("exact matching mode supports at most " + std::to_string(kExactModeMaxUsers) +
                       " users per domain");
    }
    if (labels[d].head.size() != graphs[d].user_count()) throw GraphError("labels do not match the graph");
    for (Id u = 0; u < graphs[d].user_count(); ++u) {
      if (!graphs[d].active(u)) continue;
      actives[d].push_back(u);
      (labels[d].is_head(u) ? heads[d] : tails[d]).push_back(u);
    }
  }
  MatchingNeighborhood out;
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto& m = out.domains[d];
    const std::size_t od = data::other_domain(d);
    for (Id u = 0; u < graphs[d].user_count(); ++u) {
      if (!graphs[d].active(u)) {
        m.head.offsets.push_back(m.head.members.size());
        m.tail.offsets.push_back(m.tail.members.size());
        m.cdr.offsets.push_back(m.cdr.members.size());
        continue;
      }
      num::Rng rng(num::derive_seed(seed, epoch, d, u));
      draw(heads[d], u, options, rng, m.head);
      draw(tails[d], u, options, rng, m.tail);
      draw(actives[od], dataset.counterpart(d, u), options, rng, m.cdr);
    }
  }
  return out;
}

}  // namespace nmcdr::graph
