#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crowding/dataset.hpp"
#include "crowding/nets.hpp"

namespace crowding {

// Fraction of rows whose argmax (ties to the smallest class) matches the
// label. Throws std::invalid_argument on an empty set.
double accuracy(const Tensor& probabilities, std::span<const std::size_t> labels);
double accuracy(const Classifier& c, const Tensor& x, std::span<const std::size_t> labels);

struct PerClassAccuracy {
  std::vector<double> accuracy;    // NaN for classes absent from the labels
  std::vector<std::size_t> count;  // instances per true class
};
PerClassAccuracy per_class_accuracy(const Tensor& probabilities,
                                    std::span<const std::size_t> labels);

// Point i is the accuracy over the i+1 lowest-entropy rows (stable order).
std::vector<double> entropy_accuracy_curve(const Tensor& probabilities,
                                           std::span<const std::size_t> labels);

// Fraction of adjacent decile pairs of the curve that do not increase.
double decile_non_increasing_fraction(std::span<const double> curve);

// Features and ground-truth labels of one split; throws DataError when the
// dataset has no ground truth and std::invalid_argument when the split is empty.
struct LabeledSplit {
  Tensor x;
  std::vector<std::size_t> labels;
};
LabeledSplit labeled_split(const CrowdDataset& ds, Split s);

double split_accuracy(const Classifier& c, const CrowdDataset& ds, Split s);

// Area under the ROC curve of positive vs negative scores, ties counted half.
double roc_auc(std::span<const double> positive, std::span<const double> negative);

// Spearman rank correlation with average ranks for ties; NaN when either
// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

}  // namespace crowding
