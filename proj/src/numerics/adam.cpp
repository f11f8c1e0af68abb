#include "nmcdr/numerics/adam.hpp"

#include <cmath>

namespace nmcdr::num {

void AdamState::apply(ParamStore& params, const Gradients& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("adam: gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g)) {
      throw ShapeError("adam: parameter '" + name + "' is " + it->second.shape_str() + " but gradient is " +
                       g.shape_str());
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m = Tensor(p.rows(), p.cols());
      mom.v = Tensor(p.rows(), p.cols());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      p[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
    if (!p.all_finite()) throw NumericError("adam: parameter '" + name + "' became non-finite");
  }
}

const Tensor* AdamState::first_moment(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.m;
}

const Tensor* AdamState::second_moment(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.v;
}

}  // namespace nmcdr::num
