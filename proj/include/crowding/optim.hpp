#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crowding/graph.hpp"

namespace crowding {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

// Bias-corrected Adam over a fixed parameter list. Parameters with
// requires_grad == false are skipped, leaving their moments untouched.
class Adam {
 public:
  Adam(std::vector<ParamPtr> params, AdamOptions options);

  void step();
  void zero_grad();

  const AdamState& state() const { return state_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  // Restores moments saved from an optimizer over same-shaped parameters.
  void load_state(AdamState state);
  const std::vector<ParamPtr>& params() const { return params_; }

 private:
  std::vector<ParamPtr> params_;
  AdamOptions options_;
  AdamState state_;
};

// Single update of value in place from grad; exposed for the optimizer tests.
void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v,
                 std::uint64_t step, const AdamOptions& options);

}  // namespace crowding
