#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crowding/graph.hpp"

namespace crowding {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double max_abs_error = 0.0;  // over every probed entry
};

// Builds the scalar loss on a fresh graph. Must be deterministic for fixed
// parameter values (freeze dropout masks and noise before calling).
using LossBuilder = std::function<Var(Graph&)>;

// Compares backward() against central differences for every entry of every
// parameter: |analytic - numeric| / (|numeric| + 1e-8). `max_entries_per_param`
// caps the number of entries probed per parameter (evenly strided), 0 = all.
GradCheckResult grad_check(const LossBuilder& build,
                           const std::vector<ParamPtr>& params, double eps = 1e-5,
                           std::size_t max_entries_per_param = 0);

}  // namespace crowding
