#pragma once
// Straightforward per-user evaluation of the model equations on nested vectors. Shares no
// code with the tape-based implementation; used as the reference in equivalence tests.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nmcdr/numerics/adam.hpp"

namespace nmcdr::testing::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const num::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Vec times(const Vec& x, const Mat& w) {
  Vec out(w.empty() ? 0 : w[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * w[i][j];
  return out;
}

inline Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec relu(Vec a) {
  for (auto& x : a) x = x > 0 ? x : 0;
  return a;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// ReLU( (1/|S|) Σ_{k∈S} (x_k W + b) ), zero for an empty set.
inline Vec mean_message(const Mat& x, const std::vector<std::size_t>& set, const Mat& w, const Vec& b) {
  Vec acc(b.size(), 0.0);
  for (auto k : set) {
    const Vec m = plus(times(x[k], w), b);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += m[j] / static_cast<double>(set.size());
  }
  return relu(acc);
}

/// H = σ(a Wa + ba + c Wc + bc); tanh((1 − H) ⊙ a + H ⊙ c)
inline Vec gate(const Vec& a, const Vec& c, const Mat& wa, const Vec& ba, const Mat& wc, const Vec& bc) {
  const Vec pre = plus(plus(times(a, wa), ba), plus(times(c, wc), bc));
  Vec out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double h = sigmoid(pre[j]);
    out[j] = std::tanh((1 - h) * a[j] + h * c[j]);
  }
  return out;
}

struct DomainInput {
  std::vector<std::vector<std::size_t>> items;  // N_u
  std::vector<std::vector<std::size_t>> head;
  std::vector<std::vector<std::size_t>> tail;
  std::vector<std::vector<std::size_t>> cdr;
  std::vector<std::optional<std::size_t>> counterpart;
};

struct DomainOutput {
  Mat g1, g2, g3, g4;
  std::vector<Vec> alpha;  // per user, aligned with items[u]
};

struct Flags {
  bool intra = true, inter = true, complement = true;
};

class Model {
 public:
  explicit Model(const num::ParamStore& ps) : ps_(ps) {}

  Mat m(std::size_t d, const std::string& local) const { return to_mat(ps_.at(name(d, local))); }
  Vec v(std::size_t d, const std::string& local) const { return to_mat(ps_.at(name(d, local)))[0]; }

  std::array<DomainOutput, 2> run(const std::array<DomainInput, 2>& in, Flags f) const {
    std::array<DomainOutput, 2> out;
    for (std::size_t d = 0; d < 2; ++d) {
      const Mat U = m(d, "U"), V = m(d, "V"), W = m(d, "W_hge");
      const Vec b = v(d, "b_hge");
      auto& o = out[d];
      for (std::size_t u = 0; u < U.size(); ++u) {
        Vec acc = times(U[u], W);  // self message reuses W_hge
        for (auto j : in[d].items[u]) {
          const Vec msg = plus(times(V[j], W), b);
          for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += msg[c] / static_cast<double>(in[d].items[u].size());
        }
        o.g1.push_back(relu(acc));
      }
      if (!f.intra) {
        o.g2 = o.g1;
        continue;
      }
      for (std::size_t u = 0; u < U.size(); ++u) {
        const Vec head = mean_message(o.g1, in[d].head[u], m(d, "W_head"), v(d, "b_head"));
        const Vec tail = mean_message(o.g1, in[d].tail[u], m(d, "W_tail"), v(d, "b_tail"));
        o.g2.push_back(plus(gate(head, tail, m(d, "W_h"), v(d, "b_h"), m(d, "W_t"), v(d, "b_t")), o.g1[u]));
      }
    }
    for (std::size_t d = 0; d < 2; ++d) {
      auto& o = out[d];
      if (!f.inter) {
        o.g3 = o.g2;
        continue;
      }
      const std::size_t od = 1 - d;
      const Mat& other = out[od].g2;
      const Mat wc = m(d, "W_cross"), wc_other = m(od, "W_cross");
      for (std::size_t u = 0; u < o.g2.size(); ++u) {
        const std::size_t D = o.g2[u].size();
        Vec self(D, 0.0);
        if (in[d].counterpart[u]) self = relu(plus(times(other[*in[d].counterpart[u]], m(d, "W_self")), v(d, "b_self")));
        Mat i_minus(D, Vec(D));
        for (std::size_t r = 0; r < D; ++r)
          for (std::size_t c = 0; c < D; ++c) i_minus[r][c] = (r == c ? 1.0 : 0.0) - wc_other[r][c];
        const Vec star = plus(times(o.g2[u], wc), times(self, i_minus));
        const Vec oth = mean_message(other, in[d].cdr[u], m(d, "W_other"), v(d, "b_other"));
        o.g3.push_back(plus(gate(star, oth, m(d, "W_s"), v(d, "b_s"), m(d, "W_o"), v(d, "b_o")), o.g2[u]));
      }
    }
    for (std::size_t d = 0; d < 2; ++d) {
      auto& o = out[d];
      if (!f.complement) {
        o.g4 = o.g3;
        continue;
      }
      const Mat V = m(d, "V");
      for (std::size_t u = 0; u < o.g3.size(); ++u) {
        const auto& items = in[d].items[u];
        Vec e;
        double z = 0;
        for (auto j : items) {
          e.push_back(std::exp(dot(o.g3[u], V[j])));
          z += e.back();
        }
        for (auto& x : e) x /= z;
        Vec acc = plus(o.g3[u], v(d, "b_ref"));
        for (std::size_t k = 0; k < items.size(); ++k) {
          const Vec t = times(V[items[k]], m(d, "W_ref"));
          for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += e[k] * t[c];
        }
        o.alpha.push_back(e);
        o.g4.push_back(acc);
      }
    }
    return out;
  }

  /// MLP(u ‖ v) with ReLU hidden layers and a scalar output; returns the logit.
  double logit(std::size_t d, const Vec& u, const Vec& item) const {
    Vec h = u;
    h.insert(h.end(), item.begin(), item.end());
    for (std::size_t l = 0;; ++l) {
      const auto w = name(d, "mlp.W" + std::to_string(l));
      if (!ps_.count(w)) break;
      if (l > 0) h = relu(h);
      h = plus(times(h, to_mat(ps_.at(w))), to_mat(ps_.at(name(d, "mlp.b" + std::to_string(l))))[0]);
    }
    return h.at(0);
  }

 private:
  static std::string name(std::size_t d, const std::string& local) { return (d == 0 ? "Z." : "Zbar.") + local; }
  const num::ParamStore& ps_;
};

}  // namespace nmcdr::testing::oracle
