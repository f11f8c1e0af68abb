#include "nmcdr/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nmcdr::data {

void SyntheticSpec::validate() const {
  if (users == 0 || items == 0) throw DataError("synthetic spec needs at least one user and one item");
  if (rank < 1) throw DataError("synthetic rank must be at least 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) throw DataError("overlap fraction must lie in [0, 1]");
  if (!(long_tail_exponent >= 0.0)) throw DataError("long-tail exponent must be non-negative");
  if (min_degree < 3) throw DataError("synthetic min_degree must be at least 3 (leave-one-out needs it)");
  if (max_degree < min_degree) throw DataError("synthetic max_degree must be at least min_degree");
  if (max_degree > items) {
    throw DataError("infeasible synthetic spec: max_degree " + std::to_string(max_degree) + " exceeds the " +
                    std::to_string(items) + "-item catalog");
  }
  if (!(noise >= 0.0)) throw DataError("synthetic noise must be non-negative");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"users", users},
          {"items", items},
          {"rank", rank},
          {"overlap_fraction", overlap_fraction},
          {"long_tail_exponent", long_tail_exponent},
          {"min_degree", min_degree},
          {"max_degree", max_degree},
          {"noise", noise},
          {"seed", seed}};
}

nlohmann::json SyntheticTruth::to_json() const {
  nlohmann::json j;
  j["rotation"] = rotation;
  for (std::size_t d = 0; d < kDomains; ++d) {
    j[std::string(kDomainNames[d])] = {
        {"user_keys", user_keys[d]}, {"user_factors", user_factors[d]}, {"item_factors", item_factors[d]}};
  }
  return j;
}

namespace {

using Vec = std::vector<double>;

Vec gaussian(std::size_t n, num::Rng& rng) {
  Vec v(n);
  for (auto& x : v) x = num::standard_normal(rng);
  return v;
}

// Gram–Schmidt on Gaussian columns gives a uniformly random orthogonal matrix (up to column signs).
std::vector<Vec> random_orthogonal(std::size_t n, num::Rng& rng) {
  std::vector<Vec> q;
  while (q.size() < n) {
    Vec v = gaussian(n, rng);
    for (const auto& b : q) {
      const double p = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < n; ++i) v[i] -= p * b[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    q.push_back(std::move(v));
  }
  // Rows of the returned matrix are the basis vectors.
  return q;
}

Vec rotate(const std::vector<Vec>& r, const Vec& x) {
  Vec out(r.size(), 0.0);
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = std::inner_product(r[i].begin(), r[i].end(), x.begin(), 0.0);
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  auto& truth = out.truth;
  num::Rng rng(num::stream_seed(spec.seed, "synthetic"));
  truth.rotation = random_orthogonal(spec.rank, rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.rank));

  const auto shared = static_cast<std::size_t>(std::llround(spec.overlap_fraction * static_cast<double>(spec.users)));
  for (std::size_t k = 0; k < spec.users; ++k) {
    Vec x = gaussian(spec.rank, rng);
    for (auto& e : x) e *= scale;
    truth.user_keys[0].push_back("u" + std::to_string(k));
    truth.user_factors[0].push_back(x);
    if (k < shared) {
      truth.user_keys[1].push_back("u" + std::to_string(k));
      truth.user_factors[1].push_back(rotate(truth.rotation, x));
    } else {
      Vec y = gaussian(spec.rank, rng);
      for (auto& e : y) e *= scale;
      truth.user_keys[1].push_back("v" + std::to_string(k));
      truth.user_factors[1].push_back(y);
    }
  }
  for (std::size_t j = 0; j < spec.items; ++j) {
    // Unit-norm items, so popularity comes from direction rather than vector length.
    Vec y = gaussian(spec.rank, rng);
    const double norm = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
    for (auto& e : y) e /= norm > 0 ? norm : 1.0;
    truth.item_factors[0].push_back(y);
    truth.item_factors[1].push_back(rotate(truth.rotation, y));
  }

  for (std::size_t d = 0; d < kDomains; ++d) {
    num::Rng drng(num::derive_seed(num::stream_seed(spec.seed, "synthetic"), d + 1));
    std::vector<std::size_t> order(spec.users);
    std::iota(order.begin(), order.end(), 0);
    num::shuffle(order, drng);
    std::vector<std::size_t> degree(spec.users);
    for (std::size_t r = 0; r < spec.users; ++r) {
      const double raw = static_cast<double>(spec.max_degree) *
                         std::pow(static_cast<double>(r + 1), -spec.long_tail_exponent);
      degree[order[r]] = std::max<std::size_t>(spec.min_degree, static_cast<std::size_t>(std::llround(raw)));
    }
    const std::string item_prefix = d == 0 ? "zi" : "bi";
    std::vector<std::pair<double, std::size_t>> scored(spec.items);
    for (std::size_t u = 0; u < spec.users; ++u) {
      const auto& x = truth.user_factors[d][u];
      for (std::size_t j = 0; j < spec.items; ++j) {
        const auto& y = truth.item_factors[d][j];
        const double aff = std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
        scored[j] = {aff + spec.noise * num::standard_normal(drng), j};
      }
      // Highest affinity first; ties by item index keep the choice deterministic.
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(degree[u]), scored.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      for (std::size_t k = 0; k < degree[u]; ++k) {
        RawInteraction r;
        r.user_key = truth.user_keys[d][u];
        r.item_key = item_prefix + std::to_string(scored[k].second);
        r.rating = 1.0;
        r.timestamp = static_cast<std::int64_t>(num::uniform_below(drng, 1'000'000));
        out.interactions[d].push_back(std::move(r));
      }
    }
  }
  return out;
}

std::string to_tsv(const std::vector<RawInteraction>& interactions) {
  std::ostringstream s;
  for (const auto& r : interactions) {
    s << r.user_key << '\t' << r.item_key << '\t';
    if (r.rating) s << *r.rating;
    s << '\t';
    if (r.timestamp) s << *r.timestamp;
    s << '\n';
  }
  return s.str();
}

}  // namespace nmcdr::data
