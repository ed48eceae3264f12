#include "crowding/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crowding {

namespace {

double evaluate(const LossBuilder& build) {
  Graph g(false);
  return g.value(build(g))[0];
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build,
                           const std::vector<ParamPtr>& params, double eps,
                           std::size_t max_entries_per_param) {
  if (!(eps > 0.0 && eps <= 1e-3))
    throw std::invalid_argument("grad_check: eps must lie in (0, 1e-3]");
  for (const auto& p : params) p->zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  GradCheckResult res;
  for (const auto& p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride =
        (max_entries_per_param == 0 || n <= max_entries_per_param)
            ? 1
            : (n + max_entries_per_param - 1) / max_entries_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = evaluate(build);
      p->value[i] = orig - eps;
      const double down = evaluate(build);
      p->value[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::domain_error("grad_check: non-finite loss perturbing " + p->name +
                                "[" + std::to_string(i) + "]");
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double rel = std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
      ++res.checked;
      res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic - numeric));
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = p->name;
          res.worst_index = i;
          res.analytic = analytic;
          res.numeric = numeric;
        }
      }
    }
  }
  return res;
}

}  // namespace crowding
