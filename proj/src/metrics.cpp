#include "crowding/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "crowding/errors.hpp"
#include "crowding/numerics.hpp"

namespace crowding {

namespace {

void check_rows(const Tensor& p, std::span<const std::size_t> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy over an empty set");
  if (p.rows() != labels.size())
    throw std::invalid_argument("probability rows and labels differ in length");
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double accuracy(const Tensor& p, std::span<const std::size_t> labels) {
  check_rows(p, labels);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += argmax(p.row(i)) == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double accuracy(const Classifier& c, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy over an empty set");
  return accuracy(c.predict(x), labels);
}

PerClassAccuracy per_class_accuracy(const Tensor& p, std::span<const std::size_t> labels) {
  check_rows(p, labels);
  const std::size_t c = p.cols();
  PerClassAccuracy out;
  out.count.assign(c, 0);
  std::vector<std::size_t> hits(c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) throw std::invalid_argument("label out of range");
    ++out.count[labels[i]];
    hits[labels[i]] += argmax(p.row(i)) == labels[i];
  }
  out.accuracy.resize(c);
  for (std::size_t k = 0; k < c; ++k)
    out.accuracy[k] = out.count[k] ? static_cast<double>(hits[k]) / static_cast<double>(out.count[k])
                                   : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<double> entropy_accuracy_curve(const Tensor& p, std::span<const std::size_t> labels) {
  check_rows(p, labels);
  std::vector<double> h(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) h[i] = entropy_unchecked(p.row(i));
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return h[a] < h[b]; });
  std::vector<double> curve(labels.size());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    ok += argmax(p.row(order[i])) == labels[order[i]];
    curve[i] = static_cast<double>(ok) / static_cast<double>(i + 1);
  }
  return curve;
}

double decile_non_increasing_fraction(std::span<const double> curve) {
  if (curve.size() < 10) throw std::invalid_argument("curve too short for deciles");
  std::vector<double> at(10);
  for (std::size_t d = 1; d <= 10; ++d) at[d - 1] = curve[(curve.size() * d) / 10 - 1];
  std::size_t ok = 0;
  for (std::size_t d = 0; d + 1 < at.size(); ++d) ok += at[d + 1] <= at[d];
  return static_cast<double>(ok) / 9.0;
}

LabeledSplit labeled_split(const CrowdDataset& ds, Split s) {
  if (!ds.ground_truth())
    throw DataError(DataError::Kind::InvalidConfig, "dataset has no ground truth to evaluate");
  const auto idx = ds.indices(s);
  if (idx.empty())
    throw std::invalid_argument(std::string("split '") + std::string(split_name(s)) + "' is empty");
  LabeledSplit out{Tensor::matrix(idx.size(), ds.instance_dim()), {}};
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto row = ds.instances().row(idx[i]);
    std::copy(row.begin(), row.end(), out.x.row(i).begin());
    out.labels.push_back((*ds.ground_truth())[idx[i]]);
  }
  return out;
}

double split_accuracy(const Classifier& c, const CrowdDataset& ds, Split s) {
  const auto sp = labeled_split(ds, s);
  return accuracy(c, sp.x, sp.labels);
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> all(pos.begin(), pos.end());
  all.insert(all.end(), neg.begin(), neg.end());
  const auto r = ranks(all);
  double sum_pos = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) sum_pos += r[i];
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (sum_pos - np * (np + 1) / 2) / (np * nn);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman needs two equal-length series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace crowding
