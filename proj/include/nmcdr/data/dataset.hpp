#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nmcdr/numerics/rng.hpp"

namespace nmcdr::data {

using Id = std::uint32_t;

/// The two domains of a cross-domain task. Index 0 is Z, index 1 is Z̄.
inline constexpr std::size_t kDomains = 2;
inline constexpr std::array<std::string_view, kDomains> kDomainNames{"Z", "Zbar"};
constexpr std::size_t other_domain(std::size_t d) noexcept { return 1 - d; }

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InputFormat { TsvRatings, CsvRatings };
InputFormat parse_format(std::string_view name);
std::string_view format_name(InputFormat format) noexcept;

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::optional<double> rating;
  std::optional<std::int64_t> timestamp;
};

/// Parses one interaction per line; '#' lines and blank lines are skipped.
std::vector<RawInteraction> parse_interactions(std::istream& in, InputFormat format,
                                               const std::string& source = "<stream>");
std::vector<RawInteraction> read_interactions(const std::filesystem::path& path, InputFormat format);

struct Interaction {
  Id item = 0;
  std::optional<std::int64_t> timestamp;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct DomainStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t ratings = 0;
  /// ratings / (users × items)
  double density = 0.0;
};

/// Dense user/item index spaces for one domain plus per-user interaction lists
/// (sorted by item id, one entry per distinct item).
class DomainIndex {
 public:
  struct Edge {
    std::string user_key;
    std::string item_key;
    std::optional<std::int64_t> timestamp;
  };

  DomainIndex() = default;

  /// Deduplicates (user, item) pairs keeping the latest timestamp, drops users with
  /// fewer than `min_interactions` distinct items, and assigns ids in order of first
  /// appearance among surviving edges.
  static DomainIndex build(const std::vector<Edge>& edges, std::size_t min_interactions);
  /// Restores an index with explicit ids (e.g. from a prepared dataset file).
  static DomainIndex from_indexed(std::vector<std::string> user_keys, std::vector<std::string> item_keys,
                                  std::vector<std::vector<Interaction>> interactions);
  static DomainIndex from_raw(const std::vector<RawInteraction>& raw, std::size_t min_interactions);

  std::size_t user_count() const noexcept { return user_keys_.size(); }
  std::size_t item_count() const noexcept { return item_keys_.size(); }
  std::size_t interaction_count() const noexcept { return interaction_count_; }

  const std::string& user_key(Id u) const { return user_keys_.at(u); }
  const std::string& item_key(Id i) const { return item_keys_.at(i); }
  std::optional<Id> find_user(const std::string& key) const;
  std::optional<Id> find_item(const std::string& key) const;

  const std::vector<Interaction>& interactions(Id u) const { return interactions_.at(u); }
  bool has_interaction(Id u, Id item) const;

  DomainStats stats() const;
  /// All edges in canonical (user id, item id) order.
  std::vector<Edge> edges() const;

  friend bool operator==(const DomainIndex& a, const DomainIndex& b) {
    return a.user_keys_ == b.user_keys_ && a.item_keys_ == b.item_keys_ && a.interactions_ == b.interactions_;
  }

 private:
  std::vector<std::string> user_keys_;
  std::vector<std::string> item_keys_;
  std::unordered_map<std::string, Id> user_ids_;
  std::unordered_map<std::string, Id> item_ids_;
  std::vector<std::vector<Interaction>> interactions_;
  std::size_t interaction_count_ = 0;
};

DomainIndex ingest(const std::filesystem::path& path, InputFormat format, std::size_t min_interactions = 5);

struct OverlapPair {
  Id user_z = 0;
  Id user_zbar = 0;
  friend bool operator==(const OverlapPair&, const OverlapPair&) = default;
};

/// Two domains plus the exposed overlapped-user correspondence.
class CrossDomainDataset {
 public:
  CrossDomainDataset() = default;
  CrossDomainDataset(DomainIndex z, DomainIndex zbar, std::vector<OverlapPair> overlap,
                     std::size_t full_intersection, double overlap_ratio, double density_factor);

  const DomainIndex& domain(std::size_t d) const { return domains_.at(d); }
  const std::vector<OverlapPair>& overlap() const noexcept { return overlap_; }
  /// Size of the raw user-key intersection before K_u selection.
  std::size_t full_intersection() const noexcept { return full_intersection_; }
  double overlap_ratio() const noexcept { return overlap_ratio_; }
  double density_factor() const noexcept { return density_factor_; }

  /// The exposed counterpart of user `u` of domain `d` in the other domain.
  std::optional<Id> counterpart(std::size_t d, Id u) const;

  nlohmann::json stats_json() const;

 private:
  std::array<DomainIndex, kDomains> domains_;
  std::vector<OverlapPair> overlap_;
  std::array<std::vector<std::int64_t>, kDomains> counterpart_;
  std::size_t full_intersection_ = 0;
  double overlap_ratio_ = 1.0;
  double density_factor_ = 1.0;
};

/// Exposes a uniform random subset of round(K_u × |intersection|) overlapped users.
/// Users left out stay in both domains as unrelated users.
CrossDomainDataset build_cross(DomainIndex z, DomainIndex zbar, double overlap_ratio, std::uint64_t seed);

/// Keeps a nested random prefix of round(D_s × |E|) edges per domain; users left with
/// fewer than `min_interactions` are removed and indices rebuilt.
CrossDomainDataset apply_density(const CrossDomainDataset& dataset, double density_factor, std::uint64_t seed,
                                 std::size_t min_interactions = 3);

enum class SplitMode {
  /// Most recent by timestamp; users without complete timestamps fall back to a seeded random holdout.
  Timestamp,
  Random,
};
SplitMode parse_split_mode(std::string_view name);

struct UserSplit {
  Id test = 0;
  std::optional<Id> validation;
  std::vector<Id> train;  // sorted
  friend bool operator==(const UserSplit&, const UserSplit&) = default;
};

struct DomainSplit {
  /// Indexed by user id; empty for excluded users.
  std::vector<std::optional<UserSplit>> users;
  std::size_t excluded = 0;
  friend bool operator==(const DomainSplit&, const DomainSplit&) = default;
};

struct SplitSpec {
  std::array<DomainSplit, kDomains> domains;
  bool with_validation = false;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct SplitOptions {
  SplitMode mode = SplitMode::Timestamp;
  bool validation = false;
  std::size_t min_interactions = 3;
};

/// Leave-one-out split: one test item (and optionally one validation item) per user.
SplitSpec split(const CrossDomainDataset& dataset, const SplitOptions& options, std::uint64_t seed);

/// `n` distinct items the user never interacted with, uniform over the catalog.
std::vector<Id> sample_negatives(const DomainIndex& domain, Id user, std::size_t n, num::Rng& rng);

/// Reproducible evaluation negatives for (seed, domain, user).
std::vector<Id> eval_negatives(const DomainIndex& domain, std::size_t domain_index, Id user, std::size_t n,
                               std::uint64_t seed);

nlohmann::json to_json(const CrossDomainDataset& dataset);
CrossDomainDataset dataset_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& j);

}  // namespace nmcdr::data
