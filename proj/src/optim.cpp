#include "crowding/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace crowding {

void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v,
                 std::uint64_t step, const AdamOptions& o) {
  if (!value.same_shape(grad) || !value.same_shape(m) || !value.same_shape(v))
    throw std::invalid_argument("adam: shape mismatch " + value.shape_string() +
                                " vs grad " + grad.shape_string());
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    value[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
  }
}

Adam::Adam(std::vector<ParamPtr> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p->value.shape(), 0.0);
    state_.second_moment.emplace_back(p->value.shape(), 0.0);
  }
}

void Adam::step() {
  ++state_.step;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (!p.requires_grad) continue;
    adam_update(p.value, p.grad, state_.first_moment[i], state_.second_moment[i],
                state_.step, options_);
  }
}

void Adam::load_state(AdamState state) {
  if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size())
    throw std::invalid_argument("adam: state has the wrong number of parameters");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!state.first_moment[i].same_shape(params_[i]->value) ||
        !state.second_moment[i].same_shape(params_[i]->value))
      throw std::invalid_argument("adam: state shape mismatch for " + params_[i]->name);
  state_ = std::move(state);
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

}  // namespace crowding
