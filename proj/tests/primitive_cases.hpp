#pragma once

// Randomized finite-difference cases for every tape primitive. Each case builds a
// scalar loss Σ (op(...) ⊙ R) with a random constant R so the seed is generic.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "nmcdr/numerics/rng.hpp"

namespace nmcdr::testing {

inline num::Tensor random_tensor(num::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  num::Tensor t(r, c);
  for (auto& v : t.values()) v = scale * (2.0 * num::uniform01(rng) - 1.0);
  return t;
}

inline std::size_t random_dim(num::Rng& rng) { return 1 + num::uniform_below(rng, 8); }

/// Keeps values away from the ReLU kink so central differences are well defined.
inline num::Tensor away_from_zero(num::Tensor t) {
  for (auto& v : t.values())
    if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 - std::abs(v) : 1e-3 + v;
  return t;
}

struct PrimitiveCase {
  std::string name;
  // Builds the op on the tape and returns its (non-scalar) output.
  std::function<num::Var(num::Tape&, num::Rng&)> build;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using num::Tape;
  using num::Var;
  using num::Rng;
  std::vector<PrimitiveCase> cases;
  cases.push_back({"matmul", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), k = random_dim(g), m = random_dim(g);
                     return t.matmul(t.parameter("a", random_tensor(g, n, k)), t.parameter("b", random_tensor(g, k, m)));
                   }});
  cases.push_back({"add", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.add(t.parameter("a", random_tensor(g, n, m)), t.parameter("b", random_tensor(g, n, m)));
                   }});
  cases.push_back({"add-row", [](Tape& t, Rng& g) {
                     auto n = 1 + random_dim(g), m = random_dim(g);
                     return t.add(t.parameter("a", random_tensor(g, n, m)), t.parameter("b", random_tensor(g, 1, m)));
                   }});
  cases.push_back({"sub", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.sub(t.parameter("a", random_tensor(g, n, m)), t.parameter("b", random_tensor(g, n, m)));
                   }});
  cases.push_back({"hadamard", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.hadamard(t.parameter("a", random_tensor(g, n, m)),
                                       t.parameter("b", random_tensor(g, n, m)));
                   }});
  cases.push_back({"mul-col", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.mul_col(t.parameter("a", random_tensor(g, n, m)), t.parameter("c", random_tensor(g, n, 1)));
                   }});
  cases.push_back({"scale", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.scale(t.parameter("a", random_tensor(g, n, m)), 2.0 * num::uniform01(g) - 1.0);
                   }});
  cases.push_back({"one-minus", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.one_minus(t.parameter("a", random_tensor(g, n, m)));
                   }});
  cases.push_back({"row-gather", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g), k = random_dim(g);
                     std::vector<std::size_t> idx(k);
                     for (auto& i : idx) i = num::uniform_below(g, n);
                     return t.gather_rows(t.parameter("a", random_tensor(g, n, m)), idx);
                   }});
  cases.push_back({"row-scatter-add", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g), k = random_dim(g);
                     std::vector<std::size_t> idx(k);
                     for (auto& i : idx) i = num::uniform_below(g, n);
                     return t.scatter_add_rows(t.parameter("a", random_tensor(g, k, m)), idx, n);
                   }});
  cases.push_back({"aggregate", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g), out = random_dim(g);
                     auto sp = std::make_shared<num::SparseRows>();
                     for (std::size_t r = 0; r < out; ++r) {
                       std::vector<std::size_t> members(num::uniform_below(g, 4));
                       for (auto& i : members) i = num::uniform_below(g, n);
                       sp->push_mean_row(members);
                     }
                     return t.aggregate(t.parameter("a", random_tensor(g, n, m)), sp);
                   }});
  cases.push_back({"row-slice", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     auto begin = num::uniform_below(g, n);
                     auto count = 1 + num::uniform_below(g, n - begin);
                     return t.row_slice(t.parameter("a", random_tensor(g, n, m)), begin, count);
                   }});
  cases.push_back({"sigmoid", [](Tape& t, Rng& g) {
                     return t.sigmoid(t.parameter("a", random_tensor(g, random_dim(g), random_dim(g), 4.0)));
                   }});
  cases.push_back({"tanh", [](Tape& t, Rng& g) {
                     return t.tanh(t.parameter("a", random_tensor(g, random_dim(g), random_dim(g), 2.0)));
                   }});
  cases.push_back({"relu", [](Tape& t, Rng& g) {
                     return t.relu(t.parameter("a", away_from_zero(random_tensor(g, random_dim(g), random_dim(g)))));
                   }});
  cases.push_back({"softplus", [](Tape& t, Rng& g) {
                     return t.softplus(t.parameter("a", random_tensor(g, random_dim(g), random_dim(g), 4.0)));
                   }});
  cases.push_back({"softmax-row", [](Tape& t, Rng& g) {
                     return t.softmax_rows(t.parameter("a", random_tensor(g, random_dim(g), random_dim(g), 3.0)));
                   }});
  cases.push_back({"segment-softmax", [](Tape& t, Rng& g) {
                     auto segs = random_dim(g);
                     std::vector<std::size_t> off{0};
                     for (std::size_t s = 0; s < segs; ++s) off.push_back(off.back() + num::uniform_below(g, 4));
                     if (off.back() == 0) off.back() = 1;
                     return t.segment_softmax(t.parameter("a", random_tensor(g, off.back(), 1, 3.0)), off);
                   }});
  cases.push_back({"concat-cols", [](Tape& t, Rng& g) {
                     auto n = random_dim(g);
                     return t.concat_cols(t.parameter("a", random_tensor(g, n, random_dim(g))),
                                          t.parameter("b", random_tensor(g, n, random_dim(g))));
                   }});
  cases.push_back({"row-dot", [](Tape& t, Rng& g) {
                     auto n = random_dim(g), m = random_dim(g);
                     return t.row_dot(t.parameter("a", random_tensor(g, n, m)), t.parameter("b", random_tensor(g, n, m)));
                   }});
  cases.push_back({"reduce-sum", [](Tape& t, Rng& g) {
                     return t.reduce_sum(t.parameter("a", random_tensor(g, random_dim(g), random_dim(g))));
                   }});
  cases.push_back({"bce-with-logits", [](Tape& t, Rng& g) {
                     auto n = random_dim(g);
                     std::vector<double> y(n);
                     for (auto& v : y) v = static_cast<double>(num::uniform_below(g, 2));
                     return t.bce_with_logits(t.parameter("a", random_tensor(g, n, 1, 6.0)), y);
                   }});
  return cases;
}

/// Runs `trials` randomized checks of one primitive; returns the number of failing trials.
inline std::size_t run_primitive_trials(const PrimitiveCase& c, std::size_t trials, std::uint64_t seed,
                                        double* worst_relative = nullptr) {
  std::size_t failures = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    num::Rng rng(num::derive_seed(seed, num::fnv1a(c.name), trial));
    num::Tape tape;
    const num::Var y = c.build(tape, rng);
    const auto& v = tape.value(y);
    const num::Var weights = tape.constant(random_tensor(rng, v.rows(), v.cols()));
    const num::Var loss = tape.reduce_sum(tape.hadamard(y, weights));
    auto result = check_gradients(tape, loss);
    if (worst_relative) *worst_relative = std::max(*worst_relative, result.worst_relative);
    if (!result.ok()) ++failures;
  }
  return failures;
}

}  // namespace nmcdr::testing
