#include "nmcdr/numerics/rng.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace nmcdr::num {

std::vector<std::uint64_t> sample_without_replacement(Rng& rng, std::uint64_t n, std::uint64_t k) {
  if (k > n) throw std::invalid_argument("cannot sample more values than the population holds");
  std::vector<std::uint64_t> out;
  out.reserve(k);
  if (k * 2 >= n) {
    std::vector<std::uint64_t> all(n);
    for (std::uint64_t i = 0; i < n; ++i) all[i] = i;
    for (std::uint64_t i = 0; i < k; ++i) {
      const auto j = i + uniform_below(rng, n - i);
      std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(k * 2);
  for (std::uint64_t j = n - k; j < n; ++j) {
    const auto t = uniform_below(rng, j + 1);
    if (seen.insert(t).second) {
      out.push_back(t);
    } else {
      seen.insert(j);
      out.push_back(j);
    }
  }
  return out;
}

}  // namespace nmcdr::num
