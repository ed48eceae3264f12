#include "crowding/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crowding {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  for (double x : logits)
    if (!std::isfinite(x)) throw std::domain_error("softmax input is not finite");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_sum_exp of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw std::domain_error("log_sum_exp input is not finite");
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return mx + std::log(z);
}

double entropy_unchecked(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double entropy(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("entropy of empty vector");
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::domain_error("entropy: negative probability");
    if (v > 1.0 || !std::isfinite(v)) throw std::domain_error("entropy: entry outside [0,1]");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::domain_error("entropy: probabilities sum to " + std::to_string(total));
  return entropy_unchecked(p);
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t sample_categorical(std::span<const double> p, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last = i;
    acc += p[i];
    if (u < acc) return i;
  }
  return last;
}

std::vector<double> standard_normal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

}  // namespace crowding
