#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nmcdr/numerics/autodiff.hpp"
#include "nmcdr/numerics/tensor.hpp"

namespace nmcdr::num {

/// Named parameter tensors. Ordered so iteration (and checkpoints) is deterministic.
using ParamStore = std::map<std::string, Tensor>;

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are created lazily with the shape of
/// their parameter; parameters absent from a gradient set are left untouched.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  void apply(ParamStore& params, const Gradients& grads);

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return step_; }
  const Tensor* first_moment(const std::string& name) const;
  const Tensor* second_moment(const std::string& name) const;

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace nmcdr::num
