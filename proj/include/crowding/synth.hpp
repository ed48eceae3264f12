#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crowding/dataset.hpp"

namespace crowding {

struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t num_train = 500;
  // Unset: 15% of all instances each for validation and test.
  std::optional<std::size_t> num_validation;
  std::optional<std::size_t> num_test;
  std::size_t num_annotators = 20;
  std::size_t dim = 2;
  double reliability_min = 0.55;
  double reliability_max = 0.85;
  double annotations_per_instance = 2.0;
  double difficulty_sensitivity = 0.0;
  // Radius of the circle the class centroids sit on (unit-variance clusters).
  double class_separation = 2.0;
  // Dense annotator features instead of one-hot ids.
  std::size_t annotator_feature_dim = 0;
};

// Annotator behaviour used to generate labels; retained for tests.
struct AnnotatorModel {
  double reliability = 1.0;
  Tensor confusion;  // |C| x |C|, row = true class, column = emitted label
  double difficulty_sensitivity = 0.0;
};

struct SynthResult {
  CrowdDataset dataset;
  std::vector<AnnotatorModel> annotators;
  Tensor centroids;  // |C| x d
};

SynthResult synthesize(const SynthConfig& cfg, std::uint64_t seed);
CrowdDataset synthesize_dataset(const SynthConfig& cfg, std::uint64_t seed);

// 1 - (d2 - d1) / (d2 + d1) for the distances to the two nearest centroids;
// 0 at a centroid, 1 on a decision boundary.
double instance_difficulty(std::span<const double> x, const Tensor& centroids);

// Chance that the difficulty-driven component flips a label: the instance
// difficulty scaled by how far the annotator is from perfect (reaches the
// difficulty itself for a uniformly random annotator).
double difficulty_flip_probability(double difficulty, double reliability,
                                   std::size_t num_classes);

// Nearest centroid other than `true_class`.
std::size_t nearest_other_class(std::span<const double> x, const Tensor& centroids,
                                std::size_t true_class);

}  // namespace crowding
