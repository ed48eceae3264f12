#include <cmath>
#include <numeric>
#include <random>

#include "crowding/metrics.hpp"
#include "crowding/synth.hpp"
#include "crowding/trainer.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace crowding;

namespace {

Tensor one_hot_rows(const std::vector<std::size_t>& labels, std::size_t k, double on = 1.0) {
  Tensor t({labels.size(), k}, (1.0 - on) / static_cast<double>(k - 1));
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, labels[i]) = on;
  return t;
}

}  // namespace

TEST_CASE("accuracy of a perfect predictor is one") {
  const std::vector<std::size_t> y = {0, 1, 2, 3, 2, 1};
  CHECK(accuracy(one_hot_rows(y, 4), y) == 1.0);
  CHECK(entropy_accuracy_curve(one_hot_rows(y, 4, 0.9), y) == std::vector<double>(6, 1.0));
}

TEST_CASE("argmax ties go to the smallest class") {
  const Tensor p({2, 3}, 1.0 / 3.0);
  CHECK(accuracy(p, std::vector<std::size_t>{0, 1}) == 0.5);
}

TEST_CASE("uniform-random predictor sits inside the binomial interval") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 4000;
  Tensor p({n, 4});
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 4;
    for (std::size_t c = 0; c < 4; ++c) p.at(i, c) = u(rng);
  }
  const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  CHECK(std::abs(accuracy(p, y) - 0.25) < 3.29 * sigma);  // 99.9% two-sided
}

TEST_CASE("per-class accuracies weighted by counts give the overall accuracy") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cls(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 37;
    Tensor p({n, 5});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = cls(rng);  // class 4 never appears
      for (std::size_t c = 0; c < 5; ++c) p.at(i, c) = u(rng);
    }
    const auto pc = per_class_accuracy(p, y);
    CHECK(std::isnan(pc.accuracy[4]));
    CHECK(pc.count[4] == 0);
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c)
      if (pc.count[c]) s += pc.accuracy[c] * static_cast<double>(pc.count[c]);
    CHECK(s / static_cast<double>(n) == doctest::Approx(accuracy(p, y)).epsilon(1e-12));
  }
}

TEST_CASE("empty evaluation sets are errors") {
  CHECK_THROWS_AS(accuracy(Tensor({0, 3}), std::vector<std::size_t>{}), std::invalid_argument);
  CrowdDataset::Parts parts;
  parts.num_classes = 2;
  parts.instances = Tensor::from_rows({{0.0}, {1.0}});
  parts.num_annotators = 1;
  parts.annotations = {{0, 0, 0}, {1, 0, 1}};
  parts.ground_truth = std::vector<std::size_t>{0, 1};
  const auto ds = CrowdDataset::create(parts);
  CHECK_THROWS_AS(labeled_split(ds, Split::Test), std::invalid_argument);
  parts.ground_truth.reset();
  CHECK_THROWS_AS(labeled_split(CrowdDataset::create(parts), Split::Train), DataError);
}

TEST_CASE("confident-and-right half then uniform half") {
  // 50 confident correct rows, then 50 uniform rows whose argmax is class 0;
  // labels of the uniform rows cycle through the 4 classes.
  const std::size_t k = 4;
  Tensor p({100, k});
  std::vector<std::size_t> y(100);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = i % k;
    for (std::size_t c = 0; c < k; ++c) p.at(i, c) = c == y[i] ? 0.97 : 0.01;
  }
  for (std::size_t i = 50; i < 100; ++i) {
    y[i] = i % k;
    for (std::size_t c = 0; c < k; ++c) p.at(i, c) = 0.25;
  }
  const auto curve = entropy_accuracy_curve(p, y);
  REQUIRE(curve.size() == 100);
  for (std::size_t i = 0; i < 50; ++i) CHECK(curve[i] == 1.0);
  // rows 52, 56, ..., 96 carry label 0: 12 of the 50 uniform rows are right
  CHECK(curve.back() == doctest::Approx(62.0 / 100.0).epsilon(1e-15));
  CHECK(curve.back() == accuracy(p, y));
  CHECK(curve[99] < curve[60]);
  CHECK(curve[60] < curve[50]);
}

TEST_CASE("final point of the entropy curve is the overall accuracy") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial;
    Tensor p({n, 3});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<std::size_t>(u(rng) * 3) % 3;
      for (std::size_t c = 0; c < 3; ++c) p.at(i, c) = u(rng);
    }
    CHECK(entropy_accuracy_curve(p, y).back() == accuracy(p, y));
  }
}

TEST_CASE("decile statistic") {
  std::vector<double> falling(100);
  for (std::size_t i = 0; i < 100; ++i) falling[i] = 1.0 - 0.003 * static_cast<double>(i);
  CHECK(decile_non_increasing_fraction(falling) == 1.0);
  std::vector<double> rising(100);
  for (std::size_t i = 0; i < 100; ++i) rising[i] = 0.003 * static_cast<double>(i);
  CHECK(decile_non_increasing_fraction(rising) == 0.0);
  CHECK(decile_non_increasing_fraction(std::vector<double>(50, 0.7)) == 1.0);
}

TEST_CASE("trained classifier is more accurate where it is confident") {
  std::vector<double> fractions;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthConfig sc;
    sc.num_test = 1000;
    const auto ds = synthesize_dataset(sc, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    const auto res = train_dl_cl(ds, cfg);
    const auto test = labeled_split(ds, Split::Test);
    const auto curve = entropy_accuracy_curve(res.bundle.classifier.predict(test.x), test.labels);
    fractions.push_back(decile_non_increasing_fraction(curve));
  }
  CHECK(mean(fractions) >= 0.8);
}

TEST_CASE("ROC AUC") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.1}, std::vector<double>{0.9}) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5}) == 0.5);
  // 3 of 4 pairs ordered, none tied
  CHECK(roc_auc(std::vector<double>{0.9, 0.3}, std::vector<double>{0.1, 0.5}) == 0.75);
}

TEST_CASE("Spearman correlation") {
  const std::vector<double> x = {0.0, 0.2, 0.4, 0.6};
  CHECK(spearman(x, std::vector<double>{0.9, 0.8, 0.7, 0.6}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1.0, 2.0, 3.0, 4.0}) == doctest::Approx(1.0));
  // ties take average ranks: y ranks 1, 2.5, 2.5, 4
  CHECK(spearman(x, std::vector<double>{1.0, 2.0, 2.0, 3.0}) ==
        doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
  CHECK(std::isnan(spearman(x, std::vector<double>(4, 0.5))));
}

TEST_CASE("mean and sample standard deviation") {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  CHECK(mean(v) == 2.5);
  CHECK(stddev(v) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(stddev(std::vector<double>{7.0}) == 0.0);
}
