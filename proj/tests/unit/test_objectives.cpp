#include <cmath>
#include <numbers>
#include <random>

#include "crowding/gradcheck.hpp"
#include "crowding/numerics.hpp"
#include "crowding/objectives.hpp"
#include "doctest.h"

using namespace crowding;

namespace {

constexpr double kLn2 = std::numbers::ln2;

std::vector<LoggedSample> logged(std::vector<double> g0, std::vector<std::size_t> labels) {
  std::vector<LoggedSample> out;
  for (std::size_t i = 0; i < g0.size(); ++i) {
    LoggedSample s;
    s.instance = i;
    s.label = labels[i];
    s.g0 = g0[i];
    out.push_back(s);
  }
  return out;
}

// Joint p(z, y) over a k x k grid, with exact mutual information and the
// L_I value obtained by expanding it into per-sample log Q(z|y) terms.
struct ToyJoint {
  std::size_t k;
  std::vector<double> p;  // row z, column y
  double at(std::size_t z, std::size_t y) const { return p[z * k + y]; }
  double pz(std::size_t z) const {
    double s = 0.0;
    for (std::size_t y = 0; y < k; ++y) s += at(z, y);
    return s;
  }
  double py(std::size_t y) const {
    double s = 0.0;
    for (std::size_t z = 0; z < k; ++z) s += at(z, y);
    return s;
  }
  double mutual_information() const {
    double mi = 0.0;
    for (std::size_t z = 0; z < k; ++z)
      for (std::size_t y = 0; y < k; ++y)
        if (at(z, y) > 0) mi += at(z, y) * std::log(at(z, y) / (pz(z) * py(y)));
    return mi;
  }
  std::vector<double> marginal_z() const {
    std::vector<double> m(k);
    for (std::size_t z = 0; z < k; ++z) m[z] = pz(z);
    return m;
  }
  // q(z | y) as q[y * k + z]; expectation of log q under the joint, written
  // as the mean over an expanded sample set (weights are multiples of 1/units).
  double bound(const std::vector<double>& q, std::size_t units) const {
    std::vector<double> logs;
    for (std::size_t z = 0; z < k; ++z)
      for (std::size_t y = 0; y < k; ++y) {
        const auto reps = static_cast<std::size_t>(std::lround(at(z, y) * units));
        for (std::size_t r = 0; r < reps; ++r) logs.push_back(std::log(q[y * k + z]));
      }
    return info_lower_bound(logs, entropy(marginal_z()));
  }
  std::vector<double> posterior() const {
    std::vector<double> q(k * k, 0.0);
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t z = 0; z < k; ++z) q[y * k + z] = py(y) > 0 ? at(z, y) / py(y) : 1.0 / k;
    return q;
  }
};

ToyJoint random_joint(std::size_t k, std::size_t units, std::mt19937_64& rng) {
  std::vector<double> counts(k * k, 0.0);
  std::uniform_int_distribution<std::size_t> cell(0, k * k - 1);
  for (std::size_t u = 0; u < units; ++u) counts[cell(rng)] += 1.0;
  for (double& c : counts) c /= static_cast<double>(units);
  return {k, counts};
}

}  // namespace

TEST_CASE("discriminator loss examples") {
  const std::vector<double> half = {0.5, 0.5, 0.5};
  CHECK(discriminator_loss(half, half, 0.0) == doctest::Approx(2 * kLn2).epsilon(1e-15));
  CHECK(2 * kLn2 == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(discriminator_loss(half, half, 1e-4) ==
        doctest::Approx(2 * kLn2 + 1e-4 * 0.25).epsilon(1e-15));

  const std::vector<double> sure_real = {1 - 1e-9}, sure_fake = {1e-9};
  CHECK(discriminator_loss(sure_real, sure_fake, 0.0) < 1e-8);

  ClampStats clamps;
  const std::vector<double> one = {1.0}, zero = {0.0};
  const double saturated = discriminator_loss(zero, one, 0.0, &clamps);
  CHECK(std::isfinite(saturated));
  CHECK(saturated == doctest::Approx(-2 * std::log(kProbClamp)));
  CHECK(clamps.count == 2);
}

TEST_CASE("discriminator loss gradient pushes authentic up and generated down") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = make_param("a", Tensor::matrix(4, 1));
    auto f = make_param("f", Tensor::matrix(3, 1));
    for (double& v : a->value.values()) v = u(rng);
    for (double& v : f->value.values()) v = u(rng);
    Graph g;
    g.backward(discriminator_loss(g, g.param(a), g.param(f), 0.0));
    for (double d : a->grad.values()) CHECK(d < 0.0);
    for (double d : f->grad.values()) CHECK(d > 0.0);

    Graph g2(false);
    const double graph_value =
        g2.value(discriminator_loss(g2, g2.constant(a->value), g2.constant(f->value), 1e-4))[0];
    CHECK(graph_value == doctest::Approx(discriminator_loss(a->value.values(), f->value.values(),
                                                            1e-4))
                             .epsilon(1e-13));
  }
}

TEST_CASE("breakdown combines value and information terms") {
  const auto b = make_breakdown(-1.25, 0.4, 0.5, {1.0, 2.0});
  CHECK(std::abs(b.combined - (b.value_term - 0.5 * b.info_term)) < 1e-12);
  CHECK(b.deltas.size() == 2);
}

TEST_CASE("per-annotation delta examples") {
  CHECK(per_annotation_delta(0.5, -5.0, 0.0) == doctest::Approx(-kLn2).epsilon(1e-15));
  const double d = per_annotation_delta(0.5, -kLn2, 0.5);
  CHECK(d == doctest::Approx(-kLn2 + 0.5 * kLn2).epsilon(1e-15));
  CHECK(d == doctest::Approx(-0.3466).epsilon(1e-4));
  ClampStats clamps;
  const double sat = per_annotation_delta(1.0, -1.0, 0.0, &clamps);
  CHECK(sat == doctest::Approx(std::log(kProbClamp)));
  CHECK(clamps.count == 1);
}

TEST_CASE("information bound: binary identity channel reaches ln 2") {
  const ToyJoint j{2, {0.5, 0.0, 0.0, 0.5}};
  CHECK(j.mutual_information() == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(std::abs(j.bound(j.posterior(), 2) - kLn2) < 1e-12);
}

TEST_CASE("information bound: independent labels give zero") {
  for (std::size_t k : {2u, 4u}) {
    std::vector<double> p(k * k, 1.0 / static_cast<double>(k * k));
    const ToyJoint j{k, p};
    const std::vector<double> q(k * k, 1.0 / static_cast<double>(k));
    CHECK(std::abs(j.bound(q, k * k)) < 1e-12);
    CHECK(std::abs(j.mutual_information()) < 1e-12);
  }
}

TEST_CASE("information bound never exceeds the exact mutual information") {
  std::mt19937_64 rng(12);
  for (std::size_t k : {2u, 4u}) {
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t units = 40;
      const ToyJoint j = random_joint(k, units, rng);
      const double mi = j.mutual_information();
      CHECK(std::abs(j.bound(j.posterior(), units) - mi) < 1e-9);
      // arbitrary Q
      std::vector<double> q(k * k);
      for (std::size_t y = 0; y < k; ++y) {
        std::vector<double> logits(k);
        for (double& l : logits) l = std::normal_distribution<double>(0, 2)(rng);
        const auto row = softmax(logits);
        std::copy(row.begin(), row.end(), q.begin() + static_cast<std::ptrdiff_t>(y * k));
      }
      CHECK(j.bound(q, units) <= mi + 1e-9);
    }
  }
  const std::vector<double> bad = {-1.0, -INFINITY};
  CHECK_THROWS_AS(info_lower_bound(bad, 0.0), std::domain_error);
}

TEST_CASE("CRM examples") {
  const auto s = logged({0.5, 0.25, 1.0}, {0, 1, 2});
  const std::vector<double> same = {0.5, 0.25, 1.0}, deltas = {1.5, -2.0, 0.25};
  CHECK(crm_objective(s, same, deltas, 0.0) ==
        doctest::Approx((1.5 - 2.0 + 0.25) / 3).epsilon(1e-15));

  // uniform logging over 2 labels, target [0.8, 0.2], delta [1, 0]
  double expected = 0.0;
  const std::vector<double> target = {0.8, 0.2}, delta = {1.0, 0.0};
  for (std::size_t y = 0; y < 2; ++y) {
    const auto one = logged({0.5}, {y});
    expected += 0.5 * crm_objective(one, std::vector<double>{target[y]},
                                    std::vector<double>{delta[y]}, 0.0);
  }
  CHECK(expected == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("CRM is unbiased over exhaustive logging draws") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 3 + trial % 3;
    std::vector<double> l0(k), lt(k), delta(k);
    for (std::size_t i = 0; i < k; ++i) {
      l0[i] = std::normal_distribution<double>(0, 1)(rng);
      lt[i] = std::normal_distribution<double>(0, 1)(rng);
      delta[i] = std::normal_distribution<double>(0, 2)(rng);
    }
    const auto g0 = softmax(l0), gt = softmax(lt);
    // two independent draws: enumerate all k^2 logged pairs
    double estimate = 0.0, truth = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      truth += gt[a] * delta[a];
      for (std::size_t b = 0; b < k; ++b) {
        const auto s = logged({g0[a], g0[b]}, {a, b});
        estimate += g0[a] * g0[b] *
                    crm_objective(s, std::vector<double>{gt[a], gt[b]},
                                  std::vector<double>{delta[a], delta[b]}, 0.0);
      }
    }
    CHECK(std::abs(estimate - truth) < 1e-9);
  }
}

TEST_CASE("CRM baseline shift identity is exact") {
  const auto s = logged({0.5, 0.25, 0.125, 1.0}, {0, 1, 0, 2});
  const std::vector<double> t = {0.25, 0.5, 0.75, 0.125};
  std::vector<double> d = {0.5, -1.25, 2.0, 0.0};
  const double base = crm_objective(s, t, d, 0.75);
  for (double& v : d) v += 3.5;
  CHECK(crm_objective(s, t, d, 0.75 + 3.5) == base);
}

TEST_CASE("CRM rejects zero logging probability and length mismatch") {
  const auto s = logged({0.5, 0.0}, {0, 1});
  const std::vector<double> t = {0.5, 0.5}, d = {1.0, 1.0};
  CHECK_THROWS_AS(crm_objective(s, t, d, 0.0), std::domain_error);
  Graph g;
  CHECK_THROWS_AS(crm_objective(g, g.constant(Tensor::matrix(2, 1, 0.5)), s, d, 0.0),
                  std::domain_error);
  const auto ok = logged({0.5}, {0});
  CHECK_THROWS_AS(crm_objective(ok, t, d, 0.0), std::invalid_argument);
}

TEST_CASE("CRM gradient on a softmax toy policy") {
  // three labels, each logged once under uniform logging; centred deltas
  const auto s = logged({1.0 / 3, 1.0 / 3, 1.0 / 3}, {0, 1, 2});
  const std::vector<double> delta = {1.0, 0.0, -1.0};
  const double mu = 0.0;  // mean delta
  auto theta = make_param("theta", Tensor::from_rows({{0.1, -0.2, 0.3}}));
  auto build = [&](Graph& g) {
    Var p = g.softmax_rows(g.param(theta));                // 1 x 3
    Var rows = g.reshape(p, 3, 1);                         // one target per sample
    return crm_objective(g, rows, s, delta, mu);
  };
  const auto res = grad_check(build, {theta}, 1e-6);
  CHECK(res.max_rel_error < 1e-6);

  theta->zero_grad();
  {
    Graph g;
    const double graph_value = g.value(build(g))[0];
    const auto p = softmax(theta->value.values());
    CHECK(graph_value ==
          doctest::Approx(crm_objective(s, p, delta, mu)).epsilon(1e-14));
    g.backward(build(g));
  }
  // minimising moves mass away from the label with delta above mu and toward
  // the label below it
  CHECK(theta->grad[0] > 0.0);
  CHECK(theta->grad[2] < 0.0);

  // the graph and scalar estimators agree on random inputs
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> g0(5), tp(5), d(5);
    for (std::size_t i = 0; i < 5; ++i) {
      g0[i] = u(rng);
      tp[i] = u(rng);
      d[i] = u(rng) - 0.5;
    }
    const auto ls = logged(g0, {0, 1, 2, 3, 4});
    Graph g(false);
    Tensor tt({5, 1}, tp);
    CHECK(g.value(crm_objective(g, g.constant(tt), ls, d, 0.1))[0] ==
          doctest::Approx(crm_objective(ls, tp, d, 0.1)).epsilon(1e-13));
  }
}
