#include "crowding/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crowding {

namespace {

double clamped_log(double p, ClampStats* clamps) {
  const double c = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (c != p && clamps) ++clamps->count;
  return std::log(c);
}

double mean_log(std::span<const double> ps, bool complement, ClampStats* clamps) {
  if (ps.empty()) return 0.0;
  double s = 0.0;
  for (double p : ps) s += clamped_log(complement ? 1.0 - p : p, clamps);
  return s / static_cast<double>(ps.size());
}

void check_support(std::span<const LoggedSample> samples) {
  for (const auto& s : samples)
    if (!(s.g0 > 0.0))
      throw std::domain_error("logging probability must be positive (instance " +
                              std::to_string(s.instance) + ", annotator " +
                              std::to_string(s.annotator) + ")");
}

}  // namespace

LossBreakdown make_breakdown(double value_term, double info_term, double lambda,
                             std::vector<double> deltas) {
  return {value_term, info_term, value_term - lambda * info_term, std::move(deltas)};
}

double value_function(std::span<const double> authentic, std::span<const double> generated,
                      ClampStats* clamps) {
  return mean_log(authentic, false, clamps) + mean_log(generated, true, clamps);
}

double discriminator_loss(std::span<const double> authentic, std::span<const double> generated,
                          double beta, ClampStats* clamps) {
  double loss = -value_function(authentic, generated, clamps);
  const std::size_t n = authentic.size() + generated.size();
  if (beta != 0.0 && n > 0) {
    double sq = 0.0;
    for (double p : authentic) sq += p * p;
    for (double p : generated) sq += p * p;
    loss += beta * sq / static_cast<double>(n);
  }
  return loss;
}

Var discriminator_loss(Graph& g, Var authentic, Var generated, double beta, ClampStats* clamps) {
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  Var real = g.mean(g.log_clamped(authentic, lo, hi, clamps));
  Var fake = g.mean(g.log_clamped(g.add_scalar(g.scale(generated, -1.0), 1.0), lo, hi, clamps));
  Var loss = g.scale(g.add(real, fake), -1.0);
  if (beta != 0.0) {
    const double n = static_cast<double>(g.value(authentic).size() + g.value(generated).size());
    Var sq = g.add(g.sum(g.mul(authentic, authentic)), g.sum(g.mul(generated, generated)));
    loss = g.add(loss, g.scale(sq, beta / n));
  }
  return loss;
}

double info_lower_bound(std::span<const double> q_logprobs, double entropy_term) {
  if (q_logprobs.empty()) return entropy_term;
  double s = 0.0;
  for (double v : q_logprobs) {
    if (!std::isfinite(v)) throw std::domain_error("info_lower_bound: non-finite log-probability");
    s += v;
  }
  return s / static_cast<double>(q_logprobs.size()) + entropy_term;
}

double per_annotation_delta(double d_score, double q_logprob, double lambda, ClampStats* clamps) {
  return clamped_log(1.0 - d_score, clamps) - lambda * q_logprob;
}

double crm_objective(std::span<const LoggedSample> samples, std::span<const double> target_probs,
                     std::span<const double> deltas, double mu) {
  if (samples.size() != target_probs.size() || samples.size() != deltas.size())
    throw std::invalid_argument("crm_objective: length mismatch");
  check_support(samples);
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    s += (deltas[i] - mu) * target_probs[i] / samples[i].g0;
  return s / static_cast<double>(samples.size());
}

Var crm_objective(Graph& g, Var target_probs, std::span<const LoggedSample> samples,
                  std::span<const double> deltas, double mu) {
  if (samples.size() != g.value(target_probs).size() || samples.size() != deltas.size())
    throw std::invalid_argument("crm_objective: length mismatch");
  if (samples.empty()) throw std::invalid_argument("crm_objective: no samples");
  check_support(samples);
  Tensor w({samples.size(), 1});
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    w[i] = (deltas[i] - mu) / samples[i].g0 * inv_n;
  return g.weighted_sum(target_probs, w);
}

}  // namespace crowding
