#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "nmcdr/data/dataset.hpp"

namespace nmcdr::data {

struct SyntheticSpec {
  std::size_t users = 1000;  // per domain
  std::size_t items = 500;   // per domain
  std::size_t rank = 4;
  /// Fraction of users present in both domains under the same key.
  double overlap_fraction = 1.0;
  /// Degree of the r-th user (random order, per domain) is max(min_degree, round(max_degree · r^-exponent)).
  double long_tail_exponent = 0.8;
  std::size_t min_degree = 5;
  std::size_t max_degree = 100;
  /// Standard deviation of the per-(user, item) affinity noise.
  double noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticTruth {
  /// rank×rank orthogonal map taking Z latents to Z̄ latents for shared users.
  std::vector<std::vector<double>> rotation;
  std::array<std::vector<std::string>, kDomains> user_keys;
  std::array<std::vector<std::vector<double>>, kDomains> user_factors;
  std::array<std::vector<std::vector<double>>, kDomains> item_factors;
  nlohmann::json to_json() const;
};

struct SyntheticData {
  std::array<std::vector<RawInteraction>, kDomains> interactions;
  SyntheticTruth truth;
};

/// Latent-factor generator. Shared users carry the same latent vector in both domains, rotated by a
/// fixed orthogonal map, and the Z̄ catalog is the rotated Z catalog, so ground-truth affinities agree
/// across domains. Each user takes their top-degree items by noisy affinity; degrees are drawn per
/// domain, so a user can be sparse in one domain and rich in the other.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Serializes interactions in the tsv-ratings format (user, item, rating, timestamp).
std::string to_tsv(const std::vector<RawInteraction>& interactions);

}  // namespace nmcdr::data
