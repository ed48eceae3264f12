#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace crowding {

// One generator type threaded explicitly through every stochastic op.
using Rng = std::mt19937_64;

// exp-normalised probabilities; throws on non-finite or empty input.
std::vector<double> softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> logits);

// Shannon entropy in nats with 0 ln 0 = 0. Throws on negative entries or a
// total mass that is off by more than 1e-9.
double entropy(std::span<const double> p);

// Entropy without validation, for probability rows produced internally.
double entropy_unchecked(std::span<const double> p);

// Index of the largest entry; ties go to the smallest index.
std::size_t argmax(std::span<const double> v);

// Draw an index from a categorical distribution by inverse CDF.
std::size_t sample_categorical(std::span<const double> p, Rng& rng);

std::vector<double> standard_normal(std::size_t n, Rng& rng);

}  // namespace crowding
