#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowding/errors.hpp"
#include "crowding/tensor.hpp"

namespace crowding {

enum class Split : std::uint8_t { Train, Validation, Test };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct Annotation {
  std::size_t instance = 0;
  std::size_t annotator = 0;
  std::size_t label = 0;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

// Immutable, validated crowdsourced dataset. Annotations are kept sorted by
// (instance, annotator), which is also the on-disk order.
class CrowdDataset {
 public:
  struct Parts {
    std::size_t num_classes = 0;
    Tensor instances;   // N x d
    Tensor annotators;  // R x d_a; empty means one-hot of length R
    std::size_t num_annotators = 0;
    std::vector<Annotation> annotations;
    std::optional<std::vector<std::size_t>> ground_truth;
    std::vector<Split> splits;  // empty means all train
  };

  // Validates and canonicalises; throws DataError with a distinct kind per
  // violated invariant.
  static CrowdDataset create(Parts parts);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_instances() const { return instances_.rows(); }
  std::size_t num_annotators() const { return annotators_.rows(); }
  std::size_t instance_dim() const { return instances_.cols(); }
  std::size_t annotator_dim() const { return annotators_.cols(); }
  bool one_hot_annotators() const { return one_hot_; }

  const Tensor& instances() const { return instances_; }
  const Tensor& annotators() const { return annotators_; }
  std::span<const Annotation> annotations() const { return annotations_; }
  const std::optional<std::vector<std::size_t>>& ground_truth() const {
    return ground_truth_;
  }
  std::span<const Split> splits() const { return splits_; }

  std::vector<std::size_t> indices(Split s) const;
  // Annotations of one instance as a contiguous slice of annotations().
  std::span<const Annotation> annotations_of(std::size_t instance) const;
  std::vector<std::size_t> annotation_counts_per_annotator() const;
  double mean_annotations_per_instance(Split s = Split::Train) const;

  // Copy with a different annotation set (re-validated).
  CrowdDataset with_annotations(std::vector<Annotation> annotations) const;

 private:
  CrowdDataset() = default;

  std::size_t num_classes_ = 0;
  Tensor instances_;
  Tensor annotators_;
  bool one_hot_ = false;
  std::vector<Annotation> annotations_;
  std::vector<std::size_t> offsets_;  // N + 1 prefix offsets into annotations_
  std::optional<std::vector<std::size_t>> ground_truth_;
  std::vector<Split> splits_;
};

// Label co-occurrence graph over classes.
struct CoocAdjacency {
  Tensor counts;       // A: |C| x |C|, symmetric, same-label pairs on the diagonal
  Tensor propagation;  // P = D^-1/2 (A + I) D^-1/2
};

CoocAdjacency build_cooccurrence(const CrowdDataset& ds);
CoocAdjacency cooccurrence_from_counts(Tensor counts);

// Plurality label per instance (ties to the smallest class); instances with
// no annotations get std::nullopt.
std::vector<std::optional<std::size_t>> majority_vote(const CrowdDataset& ds);

// Removes floor(fraction * |annotations|) triplets uniformly at random while
// every annotated instance keeps at least one annotation.
CrowdDataset remove_annotations(const CrowdDataset& ds, double fraction,
                                std::uint64_t seed);

}  // namespace crowding
