#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crowding/graph.hpp"

namespace crowding {

// Probabilities entering a log are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-12;

// One annotation drawn from the logging policy (or an observed one).
struct LoggedSample {
  std::size_t instance = 0;
  std::size_t annotator = 0;
  std::size_t label = 0;
  double g0 = 1.0;        // logging probability of `label`
  bool authentic = false;
  std::size_t code = 0;   // class drawn from the classifier output, Q's target
  std::size_t noise_row = 0;  // row of the cached noise matrix used at logging time
};

struct LossBreakdown {
  double value_term = 0.0;  // V(C, G, D)
  double info_term = 0.0;   // L_I
  double combined = 0.0;    // V - lambda * L_I
  std::vector<double> deltas;
};

LossBreakdown make_breakdown(double value_term, double info_term, double lambda,
                             std::vector<double> deltas = {});

// mean log D(authentic) + mean log(1 - D(generated)).
double value_function(std::span<const double> authentic, std::span<const double> generated,
                      ClampStats* clamps = nullptr);

// -[mean log D(auth) + mean log(1 - D(gen))] + beta * mean(D^2) over both sets.
double discriminator_loss(std::span<const double> authentic, std::span<const double> generated,
                          double beta, ClampStats* clamps = nullptr);
Var discriminator_loss(Graph& g, Var authentic, Var generated, double beta,
                       ClampStats* clamps = nullptr);

// mean log P_Q(z_hat | y) + H(z_hat).
double info_lower_bound(std::span<const double> q_logprobs, double entropy_term);

// log(1 - D(y)) - lambda * log P_Q(z_hat | y).
double per_annotation_delta(double d_score, double q_logprob, double lambda,
                            ClampStats* clamps = nullptr);

// (1/|S|) sum (delta - mu) * target / g0.
double crm_objective(std::span<const LoggedSample> samples, std::span<const double> target_probs,
                     std::span<const double> deltas, double mu);
// Same estimator with target probabilities (B x 1) differentiable on g.
Var crm_objective(Graph& g, Var target_probs, std::span<const LoggedSample> samples,
                  std::span<const double> deltas, double mu);

}  // namespace crowding
