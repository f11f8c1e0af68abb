#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "nmcdr/data/dataset.hpp"
#include "nmcdr/numerics/rng.hpp"

namespace nmcdr::data {

CrossDomainDataset::CrossDomainDataset(DomainIndex z, DomainIndex zbar, std::vector<OverlapPair> overlap,
                                       std::size_t full_intersection, double overlap_ratio, double density_factor)
    : domains_{std::move(z), std::move(zbar)},
      overlap_(std::move(overlap)),
      full_intersection_(full_intersection),
      overlap_ratio_(overlap_ratio),
      density_factor_(density_factor) {
  for (std::size_t d = 0; d < kDomains; ++d) counterpart_[d].assign(domains_[d].user_count(), -1);
  for (const auto& p : overlap_) {
    if (p.user_z >= domains_[0].user_count() || p.user_zbar >= domains_[1].user_count()) {
      throw DataError("overlap pair refers to an unknown user");
    }
    if (counterpart_[0][p.user_z] >= 0 || counterpart_[1][p.user_zbar] >= 0) {
      throw DataError("overlap pairs must be injective");
    }
    counterpart_[0][p.user_z] = p.user_zbar;
    counterpart_[1][p.user_zbar] = p.user_z;
  }
}

std::optional<Id> CrossDomainDataset::counterpart(std::size_t d, Id u) const {
  const auto& c = counterpart_.at(d);
  if (u >= c.size() || c[u] < 0) return std::nullopt;
  return static_cast<Id>(c[u]);
}

nlohmann::json CrossDomainDataset::stats_json() const {
  nlohmann::json j;
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto s = domains_[d].stats();
    j[std::string(kDomainNames[d])] = {{"users", s.users},
                                       {"items", s.items},
                                       {"ratings", s.ratings},
                                       {"overlap", overlap_.size()},
                                       {"density", s.density}};
  }
  j["overlap"] = overlap_.size();
  j["full_intersection"] = full_intersection_;
  j["overlap_ratio"] = overlap_ratio_;
  j["density_factor"] = density_factor_;
  return j;
}

CrossDomainDataset build_cross(DomainIndex z, DomainIndex zbar, double overlap_ratio, std::uint64_t seed) {
  if (!(overlap_ratio >= 0.0 && overlap_ratio <= 1.0)) throw DataError("overlap ratio K_u must lie in [0, 1]");
  std::vector<std::string> shared;
  for (Id u = 0; u < z.user_count(); ++u)
    if (zbar.find_user(z.user_key(u))) shared.push_back(z.user_key(u));
  std::sort(shared.begin(), shared.end());
  if (shared.empty() && overlap_ratio > 0.0) spdlog::warn("domains share no user keys; overlap set is empty");

  num::Rng rng(seed);
  num::shuffle(shared, rng);
  const auto keep = static_cast<std::size_t>(std::llround(overlap_ratio * static_cast<double>(shared.size())));
  std::vector<OverlapPair> pairs;
  pairs.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) pairs.push_back({*z.find_user(shared[k]), *zbar.find_user(shared[k])});
  std::sort(pairs.begin(), pairs.end(), [](const OverlapPair& a, const OverlapPair& b) { return a.user_z < b.user_z; });
  const std::size_t full = shared.size();
  return CrossDomainDataset(std::move(z), std::move(zbar), std::move(pairs), full, overlap_ratio, 1.0);
}

CrossDomainDataset apply_density(const CrossDomainDataset& dataset, double density_factor, std::uint64_t seed,
                                 std::size_t min_interactions) {
  if (!(density_factor > 0.0 && density_factor <= 1.0)) throw DataError("density factor D_s must lie in (0, 1]");
  if (density_factor == 1.0) return dataset;

  std::array<DomainIndex, kDomains> rebuilt;
  for (std::size_t d = 0; d < kDomains; ++d) {
    auto edges = dataset.domain(d).edges();
    // A fixed permutation per (seed, domain); smaller D_s keeps a prefix of larger D_s.
    num::Rng rng(num::derive_seed(seed, d));
    std::vector<std::size_t> order(edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    num::shuffle(order, rng);
    const auto keep = static_cast<std::size_t>(std::llround(density_factor * static_cast<double>(edges.size())));
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<DomainIndex::Edge> kept;
    kept.reserve(keep);
    for (auto i : order) kept.push_back(std::move(edges[i]));
    rebuilt[d] = DomainIndex::build(kept, min_interactions);
  }

  std::vector<OverlapPair> pairs;
  for (const auto& p : dataset.overlap()) {
    auto uz = rebuilt[0].find_user(dataset.domain(0).user_key(p.user_z));
    auto ub = rebuilt[1].find_user(dataset.domain(1).user_key(p.user_zbar));
    if (uz && ub) pairs.push_back({*uz, *ub});
  }
  std::sort(pairs.begin(), pairs.end(), [](const OverlapPair& a, const OverlapPair& b) { return a.user_z < b.user_z; });
  return CrossDomainDataset(std::move(rebuilt[0]), std::move(rebuilt[1]), std::move(pairs),
                            dataset.full_intersection(), dataset.overlap_ratio(), density_factor);
}

SplitMode parse_split_mode(std::string_view name) {
  if (name == "timestamp") return SplitMode::Timestamp;
  if (name == "random") return SplitMode::Random;
  throw DataError("unknown split mode '" + std::string(name) + "' (expected timestamp or random)");
}

namespace {

// Index (into `list`) of the most recent interaction; ties go to the highest item id.
std::size_t most_recent(const std::vector<Interaction>& list, const std::vector<std::size_t>& candidates) {
  std::size_t best = candidates.front();
  for (auto c : candidates) {
    const auto& a = list[c];
    const auto& b = list[best];
    if (*a.timestamp > *b.timestamp || (*a.timestamp == *b.timestamp && a.item > b.item)) best = c;
  }
  return best;
}

}  // namespace

SplitSpec split(const CrossDomainDataset& dataset, const SplitOptions& options, std::uint64_t seed) {
  SplitSpec spec;
  spec.with_validation = options.validation;
  const std::size_t floor = std::max<std::size_t>(options.min_interactions, 3);
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& dom = dataset.domain(d);
    auto& out = spec.domains[d];
    out.users.resize(dom.user_count());
    for (Id u = 0; u < dom.user_count(); ++u) {
      const auto& list = dom.interactions(u);
      if (list.size() < floor) {
        ++out.excluded;
        continue;
      }
      std::vector<std::size_t> remaining(list.size());
      for (std::size_t i = 0; i < list.size(); ++i) remaining[i] = i;
      const bool timed = options.mode == SplitMode::Timestamp &&
                         std::all_of(list.begin(), list.end(), [](const Interaction& x) { return x.timestamp; });
      num::Rng rng(num::derive_seed(seed, d, u));
      auto take = [&]() {
        const std::size_t pos = timed ? static_cast<std::size_t>(
                                            std::find(remaining.begin(), remaining.end(), most_recent(list, remaining)) -
                                            remaining.begin())
                                      : static_cast<std::size_t>(num::uniform_below(rng, remaining.size()));
        const std::size_t chosen = remaining[pos];
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pos));
        return list[chosen].item;
      };
      UserSplit us;
      us.test = take();
      if (options.validation) us.validation = take();
      for (auto i : remaining) us.train.push_back(list[i].item);
      std::sort(us.train.begin(), us.train.end());
      out.users[u] = std::move(us);
    }
    if (out.excluded > 0) {
      spdlog::warn("split: {} users of domain {} have fewer than {} interactions and were excluded", out.excluded,
                   kDomainNames[d], floor);
    }
  }
  return spec;
}

std::vector<Id> sample_negatives(const DomainIndex& domain, Id user, std::size_t n, num::Rng& rng) {
  const auto& seen = domain.interactions(user);
  const std::size_t items = domain.item_count();
  if (items < seen.size() + n) {
    throw DataError("domain has " + std::to_string(items - seen.size()) + " eligible negatives for user '" +
                    domain.user_key(user) + "', " + std::to_string(n) + " requested");
  }
  std::vector<Id> out;
  out.reserve(n);
  const std::size_t eligible = items - seen.size();
  if (n * 4 <= eligible) {
    std::set<Id> picked;
    while (out.size() < n) {
      const auto cand = static_cast<Id>(num::uniform_below(rng, items));
      if (domain.has_interaction(user, cand) || !picked.insert(cand).second) continue;
      out.push_back(cand);
    }
    return out;
  }
  std::vector<Id> pool;
  pool.reserve(eligible);
  for (Id i = 0; i < items; ++i)
    if (!domain.has_interaction(user, i)) pool.push_back(i);
  for (auto k : num::sample_without_replacement(rng, pool.size(), n)) out.push_back(pool[k]);
  return out;
}

std::vector<Id> eval_negatives(const DomainIndex& domain, std::size_t domain_index, Id user, std::size_t n,
                               std::uint64_t seed) {
  num::Rng rng(num::derive_seed(seed, domain_index, user));
  return sample_negatives(domain, user, n, rng);
}

nlohmann::json to_json(const CrossDomainDataset& dataset) {
  nlohmann::json j;
  j["domains"] = nlohmann::json::array();
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& dom = dataset.domain(d);
    nlohmann::json users = nlohmann::json::array();
    nlohmann::json items = nlohmann::json::array();
    nlohmann::json edges = nlohmann::json::array();
    for (Id u = 0; u < dom.user_count(); ++u) users.push_back(dom.user_key(u));
    for (Id i = 0; i < dom.item_count(); ++i) items.push_back(dom.item_key(i));
    for (Id u = 0; u < dom.user_count(); ++u) {
      for (const auto& x : dom.interactions(u)) {
        edges.push_back({u, x.item, x.timestamp ? nlohmann::json(*x.timestamp) : nlohmann::json(nullptr)});
      }
    }
    j["domains"].push_back({{"name", kDomainNames[d]}, {"users", users}, {"items", items}, {"edges", edges}});
  }
  j["overlap"] = nlohmann::json::array();
  for (const auto& p : dataset.overlap()) j["overlap"].push_back({p.user_z, p.user_zbar});
  j["full_intersection"] = dataset.full_intersection();
  j["overlap_ratio"] = dataset.overlap_ratio();
  j["density_factor"] = dataset.density_factor();
  return j;
}

CrossDomainDataset dataset_from_json(const nlohmann::json& j) {
  std::array<DomainIndex, kDomains> doms;
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& jd = j.at("domains").at(d);
    const auto users = jd.at("users").get<std::vector<std::string>>();
    const auto items = jd.at("items").get<std::vector<std::string>>();
    std::vector<std::vector<Interaction>> lists(users.size());
    for (const auto& e : jd.at("edges")) {
      const auto u = e.at(0).get<std::size_t>();
      std::optional<std::int64_t> ts;
      if (!e.at(2).is_null()) ts = e.at(2).get<std::int64_t>();
      lists.at(u).push_back({e.at(1).get<Id>(), ts});
    }
    doms[d] = DomainIndex::from_indexed(users, items, std::move(lists));
  }
  std::vector<OverlapPair> pairs;
  for (const auto& p : j.at("overlap")) pairs.push_back({p.at(0).get<Id>(), p.at(1).get<Id>()});
  return CrossDomainDataset(std::move(doms[0]), std::move(doms[1]), std::move(pairs),
                            j.at("full_intersection").get<std::size_t>(), j.at("overlap_ratio").get<double>(),
                            j.at("density_factor").get<double>());
}

nlohmann::json to_json(const SplitSpec& split) {
  nlohmann::json j;
  j["with_validation"] = split.with_validation;
  j["domains"] = nlohmann::json::array();
  for (const auto& ds : split.domains) {
    nlohmann::json users = nlohmann::json::array();
    for (const auto& us : ds.users) {
      if (!us) {
        users.push_back(nullptr);
        continue;
      }
      users.push_back({{"test", us->test},
                       {"validation", us->validation ? nlohmann::json(*us->validation) : nlohmann::json(nullptr)},
                       {"train", us->train}});
    }
    j["domains"].push_back({{"excluded", ds.excluded}, {"users", users}});
  }
  return j;
}

SplitSpec split_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.with_validation = j.at("with_validation").get<bool>();
  for (std::size_t d = 0; d < kDomains; ++d) {
    const auto& jd = j.at("domains").at(d);
    s.domains[d].excluded = jd.at("excluded").get<std::size_t>();
    for (const auto& ju : jd.at("users")) {
      if (ju.is_null()) {
        s.domains[d].users.emplace_back();
        continue;
      }
      UserSplit us;
      us.test = ju.at("test").get<Id>();
      if (!ju.at("validation").is_null()) us.validation = ju.at("validation").get<Id>();
      us.train = ju.at("train").get<std::vector<Id>>();
      s.domains[d].users.emplace_back(std::move(us));
    }
  }
  return s;
}

}  // namespace nmcdr::data
