#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "nmcdr/data/synthetic.hpp"

using namespace nmcdr::data;

namespace {

std::map<std::string, std::vector<std::string>> items_by_user(const std::vector<RawInteraction>& rows) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& r : rows) out[r.user_key].push_back(r.item_key.substr(2));
  return out;
}

}  // namespace

TEST_CASE("synthetic: full overlap and zero noise keep top items consistent across domains") {
  SyntheticSpec s;
  s.users = 200;
  s.items = 150;
  s.noise = 0.0;
  s.overlap_fraction = 1.0;
  const auto data = generate_synthetic(s);
  const auto z = items_by_user(data.interactions[0]);
  const auto zb = items_by_user(data.interactions[1]);
  REQUIRE(z.size() == 200);
  for (const auto& [user, list] : z) {
    const auto& other = zb.at(user);
    // Both lists are top-k prefixes of the same affinity order, so the shorter is inside the longer.
    const auto& shorter = list.size() <= other.size() ? list : other;
    const auto& longer = list.size() <= other.size() ? other : list;
    std::set<std::string> big(longer.begin(), longer.end());
    for (const auto& item : shorter) CHECK(big.count(item) == 1);
  }
}

TEST_CASE("synthetic: rotation is orthogonal and rotates shared users") {
  SyntheticSpec s;
  s.users = 20;
  s.items = 30;
  s.max_degree = 20;
  s.overlap_fraction = 0.5;
  const auto data = generate_synthetic(s);
  const auto& r = data.truth.rotation;
  for (std::size_t i = 0; i < s.rank; ++i)
    for (std::size_t j = 0; j < s.rank; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < s.rank; ++k) dot += r[i][k] * r[j][k];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0));
    }
  std::size_t shared = 0;
  for (const auto& key : data.truth.user_keys[1]) shared += key[0] == 'u' ? 1 : 0;
  CHECK(shared == 10);
}

TEST_CASE("synthetic: a high long-tail exponent gives a heavy degree tail") {
  SyntheticSpec s;
  s.users = 1000;
  s.items = 500;
  s.long_tail_exponent = 1.5;
  const auto data = generate_synthetic(s);
  for (std::size_t d = 0; d < 2; ++d) {
    std::vector<std::size_t> degrees;
    for (const auto& [user, list] : items_by_user(data.interactions[d])) degrees.push_back(list.size());
    std::sort(degrees.begin(), degrees.end());
    const double ratio = static_cast<double>(degrees.back()) / static_cast<double>(degrees[degrees.size() / 2]);
    CHECK(ratio > 10.0);
  }
}

TEST_CASE("synthetic: identical seeds give identical files") {
  SyntheticSpec s;
  s.users = 50;
  s.items = 80;
  s.max_degree = 40;
  const auto a = generate_synthetic(s);
  const auto b = generate_synthetic(s);
  CHECK(to_tsv(a.interactions[0]) == to_tsv(b.interactions[0]));
  CHECK(to_tsv(a.interactions[1]) == to_tsv(b.interactions[1]));
  CHECK(a.truth.to_json() == b.truth.to_json());
  s.seed = 2;
  CHECK(to_tsv(generate_synthetic(s).interactions[0]) != to_tsv(a.interactions[0]));
}

TEST_CASE("synthetic: infeasible specs are rejected") {
  SyntheticSpec s;
  s.items = 50;
  s.max_degree = 60;
  CHECK_THROWS_AS(generate_synthetic(s), DataError);
  s = {};
  s.rank = 0;
  CHECK_THROWS_AS(s.validate(), DataError);
  s = {};
  s.overlap_fraction = 1.5;
  CHECK_THROWS_AS(s.validate(), DataError);
  s = {};
  s.min_degree = 10;
  s.max_degree = 5;
  CHECK_THROWS_AS(s.validate(), DataError);
}
