#include "crowding/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "crowding/numerics.hpp"

namespace crowding {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw DataError(DataError::Kind::Parse, "unknown split tag '" + std::string(s) + "'");
}

CrowdDataset CrowdDataset::create(Parts p) {
  using K = DataError::Kind;
  CrowdDataset ds;
  if (p.num_classes < 2) throw DataError(K::InvalidConfig, "need at least 2 classes");
  const std::size_t n = p.instances.rows();
  if (p.instances.rank() != 2 || n == 0)
    throw DataError(K::RaggedFeatures, "instance features must be a non-empty N x d matrix");
  if (!p.instances.all_finite())
    throw DataError(K::NonFinite, "instance features contain NaN or Inf");

  if (p.annotators.empty()) {
    if (p.num_annotators == 0)
      throw DataError(K::InvalidConfig, "number of annotators unknown");
    ds.annotators_ = Tensor::matrix(p.num_annotators, p.num_annotators);
    for (std::size_t r = 0; r < p.num_annotators; ++r) ds.annotators_.at(r, r) = 1.0;
    ds.one_hot_ = true;
  } else {
    if (p.annotators.rank() != 2)
      throw DataError(K::RaggedFeatures, "annotator features must be an R x d_a matrix");
    if (p.num_annotators != 0 && p.num_annotators != p.annotators.rows())
      throw DataError(K::InvalidConfig, "annotator count disagrees with annotator features");
    if (!p.annotators.all_finite())
      throw DataError(K::NonFinite, "annotator features contain NaN or Inf");
    ds.annotators_ = std::move(p.annotators);
  }
  const std::size_t r_count = ds.annotators_.rows();

  if (p.splits.empty()) p.splits.assign(n, Split::Train);
  if (p.splits.size() != n)
    throw DataError(K::InvalidConfig, "split tags do not cover every instance");

  if (p.ground_truth) {
    if (p.ground_truth->size() != n)
      throw DataError(K::InvalidConfig, "ground truth does not cover every instance");
    for (std::size_t i = 0; i < n; ++i)
      if ((*p.ground_truth)[i] >= p.num_classes)
        throw DataError(K::LabelOutOfRange, "ground-truth label " +
                                               std::to_string((*p.ground_truth)[i]) +
                                               " of instance " + std::to_string(i) +
                                               " outside [0, " +
                                               std::to_string(p.num_classes) + ")");
  }

  for (const Annotation& a : p.annotations) {
    if (a.label >= p.num_classes)
      throw DataError(K::LabelOutOfRange,
                      "label " + std::to_string(a.label) + " outside [0, " +
                          std::to_string(p.num_classes) + ") for instance " +
                          std::to_string(a.instance));
    if (a.instance >= n)
      throw DataError(K::InvalidConfig, "annotation references instance " +
                                            std::to_string(a.instance) + " of " +
                                            std::to_string(n));
    if (a.annotator >= r_count)
      throw DataError(K::InvalidConfig, "annotation references annotator " +
                                            std::to_string(a.annotator) + " of " +
                                            std::to_string(r_count));
  }
  std::sort(p.annotations.begin(), p.annotations.end(),
            [](const Annotation& a, const Annotation& b) {
              return std::tie(a.instance, a.annotator) < std::tie(b.instance, b.annotator);
            });
  for (std::size_t i = 1; i < p.annotations.size(); ++i) {
    const auto& a = p.annotations[i - 1];
    const auto& b = p.annotations[i];
    if (a.instance == b.instance && a.annotator == b.annotator)
      throw DataError(K::DuplicatePair, "duplicate annotation for (instance " +
                                            std::to_string(a.instance) + ", annotator " +
                                            std::to_string(a.annotator) + ")");
  }

  ds.offsets_.assign(n + 1, 0);
  for (const Annotation& a : p.annotations) ++ds.offsets_[a.instance + 1];
  for (std::size_t i = 0; i < n; ++i) ds.offsets_[i + 1] += ds.offsets_[i];
  for (std::size_t i = 0; i < n; ++i)
    if (p.splits[i] == Split::Train && ds.offsets_[i + 1] == ds.offsets_[i])
      throw DataError(K::UnannotatedInstance,
                      "train instance " + std::to_string(i) + " has no annotations");

  ds.num_classes_ = p.num_classes;
  ds.instances_ = std::move(p.instances);
  ds.annotations_ = std::move(p.annotations);
  ds.ground_truth_ = std::move(p.ground_truth);
  ds.splits_ = std::move(p.splits);
  return ds;
}

std::vector<std::size_t> CrowdDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i)
    if (splits_[i] == s) out.push_back(i);
  return out;
}

std::span<const Annotation> CrowdDataset::annotations_of(std::size_t instance) const {
  return std::span<const Annotation>(annotations_)
      .subspan(offsets_[instance], offsets_[instance + 1] - offsets_[instance]);
}

std::vector<std::size_t> CrowdDataset::annotation_counts_per_annotator() const {
  std::vector<std::size_t> counts(num_annotators(), 0);
  for (const Annotation& a : annotations_) ++counts[a.annotator];
  return counts;
}

double CrowdDataset::mean_annotations_per_instance(Split s) const {
  std::size_t inst = 0, total = 0;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] != s) continue;
    ++inst;
    total += offsets_[i + 1] - offsets_[i];
  }
  return inst ? static_cast<double>(total) / static_cast<double>(inst) : 0.0;
}

CrowdDataset CrowdDataset::with_annotations(std::vector<Annotation> annotations) const {
  Parts p;
  p.num_classes = num_classes_;
  p.instances = instances_;
  if (!one_hot_) p.annotators = annotators_;
  p.num_annotators = num_annotators();
  p.annotations = std::move(annotations);
  p.ground_truth = ground_truth_;
  p.splits = splits_;
  return create(std::move(p));
}

CoocAdjacency cooccurrence_from_counts(Tensor counts) {
  const std::size_t c = counts.rows();
  if (counts.cols() != c) throw std::invalid_argument("co-occurrence counts must be square");
  CoocAdjacency adj;
  std::vector<double> degree(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) degree[i] += counts.at(i, j);
    degree[i] += 1.0;
  }
  adj.propagation = Tensor::matrix(c, c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      adj.propagation.at(i, j) = (counts.at(i, j) + (i == j ? 1.0 : 0.0)) /
                                 std::sqrt(degree[i] * degree[j]);
  adj.counts = std::move(counts);
  return adj;
}

CoocAdjacency build_cooccurrence(const CrowdDataset& ds) {
  const std::size_t c = ds.num_classes();
  Tensor counts = Tensor::matrix(c, c);
  for (std::size_t n = 0; n < ds.num_instances(); ++n) {
    const auto anns = ds.annotations_of(n);
    for (std::size_t i = 0; i < anns.size(); ++i) {
      for (std::size_t j = i + 1; j < anns.size(); ++j) {
        const std::size_t a = anns[i].label, b = anns[j].label;
        if (a == b) {
          counts.at(a, a) += 1.0;
        } else {
          counts.at(a, b) += 1.0;
          counts.at(b, a) += 1.0;
        }
      }
    }
  }
  return cooccurrence_from_counts(std::move(counts));
}

std::vector<std::optional<std::size_t>> majority_vote(const CrowdDataset& ds) {
  std::vector<std::optional<std::size_t>> out(ds.num_instances());
  std::vector<std::size_t> votes(ds.num_classes());
  for (std::size_t n = 0; n < ds.num_instances(); ++n) {
    const auto anns = ds.annotations_of(n);
    if (anns.empty()) continue;
    std::fill(votes.begin(), votes.end(), 0);
    for (const Annotation& a : anns) ++votes[a.label];
    out[n] = static_cast<std::size_t>(
        std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

CrowdDataset remove_annotations(const CrowdDataset& ds, double fraction,
                                std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw DataError(DataError::Kind::InvalidConfig, "removal fraction must lie in [0, 1)");
  const auto all = ds.annotations();
  const auto target = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(all.size())));
  if (target == 0) return ds;

  std::vector<std::size_t> remaining(ds.num_instances(), 0);
  std::size_t removable = 0;
  for (std::size_t n = 0; n < ds.num_instances(); ++n) {
    remaining[n] = ds.annotations_of(n).size();
    if (remaining[n] > 0) removable += remaining[n] - 1;
  }
  if (target > removable) {
    const double max_fraction =
        static_cast<double>(removable) / static_cast<double>(all.size());
    throw DataError(DataError::Kind::Infeasible,
                    "cannot remove " + std::to_string(target) + " annotations while keeping one "
                    "per instance; maximum feasible fraction is " + std::to_string(max_fraction));
  }

  // Scanning a uniformly shuffled order and dropping each triplet whose
  // instance still has >= 2 annotations picks uniformly among the currently
  // removable triplets at every step: skipped triplets can never become
  // removable again.
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> drop(all.size(), false);
  std::size_t removed = 0;
  for (std::size_t idx : order) {
    if (removed == target) break;
    const std::size_t n = all[idx].instance;
    if (remaining[n] < 2) continue;
    --remaining[n];
    drop[idx] = true;
    ++removed;
  }
  std::vector<Annotation> kept;
  kept.reserve(all.size() - removed);
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!drop[i]) kept.push_back(all[i]);
  return ds.with_annotations(std::move(kept));
}

}  // namespace crowding
