#include "crowding/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "crowding/numerics.hpp"

namespace crowding {

namespace {

using K = DataError::Kind;

double sq_dist(std::span<const double> x, const Tensor& c, std::size_t k) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double diff = x[j] - c.at(k, j);
    s += diff * diff;
  }
  return s;
}

void validate(const SynthConfig& cfg) {
  const double floor_rel = 1.0 / static_cast<double>(cfg.num_classes);
  if (cfg.num_classes < 2) throw DataError(K::InvalidConfig, "num_classes must be >= 2");
  if (cfg.num_train == 0) throw DataError(K::InvalidConfig, "num_train must be >= 1");
  if (cfg.num_annotators == 0) throw DataError(K::InvalidConfig, "num_annotators must be >= 1");
  if (cfg.dim == 0) throw DataError(K::InvalidConfig, "dim must be >= 1");
  if (!(cfg.annotations_per_instance >= 1.0))
    throw DataError(K::InvalidConfig, "annotations_per_instance must be >= 1");
  if (std::ceil(cfg.annotations_per_instance) > static_cast<double>(cfg.num_annotators))
    throw DataError(K::InvalidConfig, "annotations_per_instance exceeds num_annotators");
  if (!(cfg.reliability_min > floor_rel && cfg.reliability_max <= 1.0 &&
        cfg.reliability_min <= cfg.reliability_max))
    throw DataError(K::InvalidConfig, "reliability range must satisfy 1/|C| < min <= max <= 1");
  if (!(cfg.difficulty_sensitivity >= 0.0 && cfg.difficulty_sensitivity <= 1.0))
    throw DataError(K::InvalidConfig, "difficulty_sensitivity must lie in [0, 1]");
}

}  // namespace

double difficulty_flip_probability(double difficulty, double reliability,
                                   std::size_t num_classes) {
  const double c = static_cast<double>(num_classes);
  return std::clamp(difficulty * (1.0 - reliability) * c / (c - 1.0), 0.0, 1.0);
}

double instance_difficulty(std::span<const double> x, const Tensor& centroids) {
  double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = std::sqrt(sq_dist(x, centroids, k));
    if (d < d1) {
      d2 = d1;
      d1 = d;
    } else if (d < d2) {
      d2 = d;
    }
  }
  if (d1 + d2 == 0.0) return 1.0;
  return 1.0 - (d2 - d1) / (d2 + d1);
}

std::size_t nearest_other_class(std::span<const double> x, const Tensor& centroids,
                                std::size_t true_class) {
  std::size_t best = true_class == 0 ? 1 : 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    if (k == true_class) continue;
    const double d = sq_dist(x, centroids, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

SynthResult synthesize(const SynthConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t c = cfg.num_classes, d = cfg.dim, r_count = cfg.num_annotators;
  const double total = static_cast<double>(cfg.num_train) / 0.7;
  const std::size_t n_val =
      cfg.num_validation.value_or(static_cast<std::size_t>(std::lround(0.15 * total)));
  const std::size_t n_test =
      cfg.num_test.value_or(static_cast<std::size_t>(std::lround(0.15 * total)));
  const std::size_t n = cfg.num_train + n_val + n_test;

  // Centroids evenly spaced on a circle in the first two coordinates (on a
  // line when d == 1); remaining coordinates carry no class signal.
  Tensor centroids = Tensor::matrix(c, d);
  for (std::size_t k = 0; k < c; ++k) {
    if (d == 1) {
      centroids.at(k, 0) = cfg.class_separation * static_cast<double>(k);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(c);
      centroids.at(k, 0) = cfg.class_separation * std::cos(angle);
      centroids.at(k, 1) = cfg.class_separation * std::sin(angle);
    }
  }

  std::vector<AnnotatorModel> models(r_count);
  for (auto& m : models) {
    m.reliability = cfg.reliability_min + (cfg.reliability_max - cfg.reliability_min) * unif(rng);
    m.difficulty_sensitivity = cfg.difficulty_sensitivity;
    m.confusion = Tensor::matrix(c, c);
    for (std::size_t row = 0; row < c; ++row) {
      std::vector<double> w(c, 0.0);
      double wsum = 0.0;
      for (std::size_t col = 0; col < c; ++col)
        if (col != row) wsum += (w[col] = 0.05 + unif(rng));
      for (std::size_t col = 0; col < c; ++col)
        m.confusion.at(row, col) =
            col == row ? m.reliability : (1.0 - m.reliability) * w[col] / wsum;
    }
  }

  CrowdDataset::Parts parts;
  parts.num_classes = c;
  parts.instances = Tensor::matrix(n, d);
  parts.num_annotators = r_count;
  std::vector<std::size_t> truth(n);
  parts.splits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<std::size_t>(unif(rng) * static_cast<double>(c)) % c;
    for (std::size_t j = 0; j < d; ++j)
      parts.instances.at(i, j) = centroids.at(truth[i], j) + normal(rng);
    parts.splits[i] = i < cfg.num_train                ? Split::Train
                      : i < cfg.num_train + n_val ? Split::Validation
                                                       : Split::Test;
  }

  if (cfg.annotator_feature_dim > 0) {
    parts.annotators = Tensor::matrix(r_count, cfg.annotator_feature_dim);
    for (double& v : parts.annotators.values()) v = normal(rng);
  }

  const double rho = cfg.annotations_per_instance;
  const double frac = rho - std::floor(rho);
  std::vector<std::size_t> pool(r_count);
  for (std::size_t i = 0; i < cfg.num_train; ++i) {
    const std::size_t k = static_cast<std::size_t>(std::floor(rho)) + (unif(rng) < frac ? 1 : 0);
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: first k entries are a uniform k-subset.
    for (std::size_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, r_count - 1);
      std::swap(pool[j], pool[pick(rng)]);
    }
    const auto x = parts.instances.row(i);
    const double difficulty = instance_difficulty(x, centroids);
    const std::size_t flip = nearest_other_class(x, centroids, truth[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const AnnotatorModel& m = models[pool[j]];
      std::size_t label;
      if (unif(rng) < m.difficulty_sensitivity) {
        label = unif(rng) < difficulty_flip_probability(difficulty, m.reliability, c)
                    ? flip
                    : truth[i];
      } else {
        label = sample_categorical(m.confusion.row(truth[i]), rng);
      }
      parts.annotations.push_back({i, pool[j], label});
    }
  }
  parts.ground_truth = std::move(truth);
  return SynthResult{CrowdDataset::create(std::move(parts)), std::move(models),
                     std::move(centroids)};
}

CrowdDataset synthesize_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  return synthesize(cfg, seed).dataset;
}

}  // namespace crowding
