#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "nmcdr/data/dataset.hpp"
#include "nmcdr/numerics/autodiff.hpp"

namespace nmcdr::graph {

using data::Id;
using data::kDomains;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bipartite user-item adjacency of one domain, built from train items only.
/// Users excluded by the split stay in the id space but are inactive (no neighbors).
class InteractionGraph {
 public:
  InteractionGraph() = default;
  static InteractionGraph build(const data::DomainIndex& domain, const data::DomainSplit& split);

  std::size_t user_count() const noexcept { return user_items_.size(); }
  std::size_t item_count() const noexcept { return item_users_.size(); }
  std::size_t edge_count() const noexcept { return edges_; }

  /// N_u, sorted by item id.
  const std::vector<Id>& items_of(Id u) const { return user_items_.at(u); }
  const std::vector<Id>& users_of(Id item) const { return item_users_.at(item); }
  std::size_t degree(Id u) const { return user_items_.at(u).size(); }
  bool active(Id u) const { return active_.at(u) != 0; }
  std::vector<Id> active_users() const;

  /// Row-normalized user→item mean aggregation (1/|N_u| per neighbor).
  std::shared_ptr<const num::SparseRows> mean_rows() const;
  /// Per-user contiguous segments over the flattened neighbor list (for per-user softmax).
  std::vector<std::size_t> segment_offsets() const;
  /// Flattened neighbor item ids in user order; segment u is [offsets[u], offsets[u+1]).
  std::vector<std::size_t> flat_items() const;
  /// Owner user of every flattened neighbor entry.
  std::vector<std::size_t> flat_users() const;

 private:
  std::vector<std::vector<Id>> user_items_;
  std::vector<std::vector<Id>> item_users_;
  std::vector<std::uint8_t> active_;
  std::size_t edges_ = 0;
};

/// Degree-based head/tail partition: head ⇔ degree > K_head.
struct HeadTailLabels {
  std::size_t k_head = 7;
  std::vector<std::uint8_t> head;  // 1 = head, 0 = tail
  bool is_head(Id u) const { return head.at(u) != 0; }
  std::size_t head_count() const noexcept;
};

HeadTailLabels label_head_tail(const InteractionGraph& graph, std::size_t k_head);

/// Sampled user-user neighbor sets, stored as compressed rows per user.
struct NeighborSets {
  std::vector<std::size_t> offsets{0};
  std::vector<Id> members;

  std::size_t users() const noexcept { return offsets.size() - 1; }
  std::span<const Id> of(Id u) const {
    return {members.data() + offsets.at(u), members.data() + offsets.at(u + 1)};
  }
  /// Mean aggregation rows: 1/|set| per member, empty rows give zero.
  std::shared_ptr<const num::SparseRows> mean_rows() const;
  /// rows×1 indicator of non-empty sets.
  num::Tensor nonempty() const;
};

struct DomainMatching {
  NeighborSets head;
  NeighborSets tail;
  /// Other-domain users, never the user's own counterpart.
  NeighborSets cdr;
};

struct MatchingOptions {
  std::size_t sample_size = 512;
  /// Use every candidate instead of sampling (only for small domains).
  bool exact = false;
};

inline constexpr std::size_t kExactModeMaxUsers = 2000;

struct MatchingNeighborhood {
  std::array<DomainMatching, kDomains> domains;
};

/// Uniform samples without replacement per user, seeded by (seed, epoch, domain, user).
MatchingNeighborhood sample_matching(const std::array<InteractionGraph, kDomains>& graphs,
                                     const std::array<HeadTailLabels, kDomains>& labels,
                                     const data::CrossDomainDataset& dataset, const MatchingOptions& options,
                                     std::uint64_t seed, std::uint64_t epoch);

}  // namespace nmcdr::graph
