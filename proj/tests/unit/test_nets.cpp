#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <cstring>

#include "crowding/gradcheck.hpp"
#include "crowding/nets.hpp"
#include "crowding/optim.hpp"
#include "crowding/synth.hpp"
#include "doctest.h"
#include "temp_dir.hpp"

using namespace crowding;

namespace {

// Small widths keep grad_check fast; structure is identical.
NetworkConfig small_config(bool lca = true) {
  NetworkConfig c;
  c.classifier_hidden = 6;
  c.generator_hidden1 = 5;
  c.generator_hidden2 = 6;
  c.noise_dim = 3;
  c.embed_dim = 4;
  c.class_embed_dim = 3;
  c.aux_hidden1 = 5;
  c.aux_hidden2 = 6;
  c.lca = lca;
  return c;
}

const NetDims kDims{3, 5, 4};

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = d(rng);
  return t;
}

Tensor random_simplex_rows(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = random_matrix(r, c, rng);
  for (std::size_t i = 0; i < r; ++i) {
    const auto p = softmax(t.row(i));
    std::copy(p.begin(), p.end(), t.row(i).begin());
  }
  return t;
}

CoocAdjacency random_adjacency(std::size_t c, Rng& rng) {
  Tensor a = Tensor::matrix(c, c);
  std::uniform_int_distribution<int> d(0, 5);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) a.at(i, j) = a.at(j, i) = d(rng);
  return cooccurrence_from_counts(a);
}

// Random weights everywhere, including biases, so no ReLU sits exactly at a
// kink and no gradient is structurally zero.
void randomize(NetworkBundle& b, Rng& rng, double scale = 0.5) {
  for (const auto& p : b.all_params())
    for (double& v : p->value.values()) v = std::normal_distribution<double>(0, scale)(rng);
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("zero-initialised output layers give uniform outputs") {
  auto cfg = small_config();
  cfg.zero_output_layers = true;
  NetworkBundle b(kDims, cfg, 3);
  b.core->set_adjacency(cooccurrence_from_counts(Tensor::matrix(4, 4)));
  const std::vector<double> x = {0.3, -1.0, 2.0}, e = {0, 1, 0, 0, 0};
  const std::vector<double> z = {0.1, 0.2, 0.3, 0.4}, eps = {1, -1, 0.5};

  for (double p : classify(b.classifier, x)) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  const auto gdist = generate_distribution(b.generator, x, e, z, eps);
  CHECK(entropy(gdist) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(discriminate(b.discriminator, x, e, y) == 0.5);
    for (double p : aux_posterior(b.aux, x, e, y)) CHECK(p == doctest::Approx(0.25));
  }
}

TEST_CASE("outputs are probability vectors and dimensions are checked") {
  NetworkBundle b(kDims, small_config(), 8);
  Rng rng(4);
  b.core->set_adjacency(random_adjacency(4, rng));
  // sigmoid reaches 1.0 in double once a score exceeds ~37; stay at
  // realistic weight scales for the open-interval check
  randomize(b, rng, 0.3);
  for (int t = 0; t < 200; ++t) {
    const Tensor x = random_matrix(1, 3, rng, 2.0), e = random_matrix(1, 5, rng);
    const Tensor z = random_simplex_rows(1, 4, rng), eps = random_matrix(1, 3, rng);
    CHECK(std::abs(sum(classify(b.classifier, x.values())) - 1.0) < 1e-12);
    CHECK(std::abs(sum(classify(b.classifier, x.values(), true, &rng)) - 1.0) < 1e-12);
    CHECK(std::abs(sum(generate_distribution(b.generator, x.values(), e.values(), z.values(),
                                             eps.values())) -
                   1.0) < 1e-12);
    const double d = discriminate(b.discriminator, x.values(), e.values(), t % 4);
    CHECK(d > 0.0);
    CHECK(d < 1.0);
    CHECK(std::abs(sum(aux_posterior(b.aux, x.values(), e.values(), t % 4)) - 1.0) < 1e-12);
  }
  const std::vector<double> bad = {1.0, 2.0};
  const std::vector<double> e(5, 0.0);
  CHECK_THROWS_AS(classify(b.classifier, bad), std::invalid_argument);
  CHECK_THROWS_AS(discriminate(b.discriminator, bad, e, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_distribution(b.generator, bad, e, std::vector<double>(4, 0.25),
                                        std::vector<double>(3, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(aux_posterior(b.aux, bad, e, 0), std::invalid_argument);
}

TEST_CASE("classifier eval mode is deterministic, train mode applies dropout") {
  NetworkBundle b(kDims, NetworkConfig{}, 2);
  Rng rng(1);
  const std::vector<double> x = {0.5, 0.5, -0.2};
  CHECK(classify(b.classifier, x) == classify(b.classifier, x));
  bool differs = false;
  for (int i = 0; i < 10 && !differs; ++i)
    differs = classify(b.classifier, x, true, &rng) != classify(b.classifier, x);
  CHECK(differs);
  const Tensor mask = b.classifier.dropout_mask(50, rng);
  for (double m : mask.values()) CHECK((m == 0.0 || m == 2.0));
}

TEST_CASE("generator noise path is live") {
  NetworkBundle b(kDims, small_config(), 5);
  const std::vector<double> x = {1, 2, 3}, e = {0, 0, 1, 0, 0}, z = {0.25, 0.25, 0.25, 0.25};
  const auto p1 = generate_distribution(b.generator, x, e, z, std::vector<double>{1, 0, -1});
  const auto p2 = generate_distribution(b.generator, x, e, z, std::vector<double>{-2, 1, 0.3});
  CHECK(p1 != p2);
}

TEST_CASE("generator input width follows the use flags") {
  auto cfg = small_config();
  CHECK(Generator(kDims, cfg, Rng(1)).input_dim() == 3 + 5 + 4 + 3);
  cfg.generator_uses_annotator = false;
  CHECK(Generator(kDims, cfg, Rng(1)).input_dim() == 3 + 4 + 3);
  cfg.generator_uses_instance = false;
  CHECK(Generator(kDims, cfg, Rng(1)).input_dim() == 4 + 3);
}

TEST_CASE("LCA requires an adjacency") {
  NetworkBundle b(kDims, small_config(true), 1);
  CHECK_THROWS_AS(discriminate(b.discriminator, std::vector<double>(3, 0.0),
                               std::vector<double>(5, 0.0), 0),
                  std::logic_error);
}

TEST_CASE("LCA with an empty graph equals plain bilinear with M_c W") {
  Rng rng(17);
  NetworkBundle with(kDims, small_config(true), 9);
  with.core->set_adjacency(cooccurrence_from_counts(Tensor::matrix(4, 4)));
  NetworkBundle without = with.clone();
  without.core->set_lca(false);
  const std::size_t m = 4;
  // M'_c = M_c W
  for (std::size_t c = 0; c < 4; ++c) {
    Tensor mc = Tensor::matrix(m, m);
    std::copy_n(with.core->bilinear->value.row(c).begin(), m * m, mc.values().begin());
    const Tensor prod = matmul(mc, with.core->mixing->value);
    std::copy_n(prod.values().begin(), m * m, without.core->bilinear->value.row(c).begin());
  }
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_matrix(1, 3, rng), e = random_matrix(1, 5, rng);
    for (std::size_t y = 0; y < 4; ++y)
      CHECK(discriminate(with.discriminator, x.values(), e.values(), y) ==
            doctest::Approx(discriminate(without.discriminator, x.values(), e.values(), y))
                .epsilon(1e-12));
  }
}

TEST_CASE("LCA mixes class matrices across correlated classes") {
  Rng rng(2);
  NetworkBundle b(kDims, small_config(true), 4);
  Tensor a = Tensor::matrix(4, 4);
  a.at(0, 1) = a.at(1, 0) = 3.0;
  b.core->set_adjacency(cooccurrence_from_counts(a));
  const Tensor x = random_matrix(1, 3, rng), e = random_matrix(1, 5, rng);
  const double before = discriminate(b.discriminator, x.values(), e.values(), 0);
  const double other = discriminate(b.discriminator, x.values(), e.values(), 2);
  // changing M_1 moves class 0 (correlated) but not class 2
  for (std::size_t k = 0; k < 16; ++k) b.core->bilinear->value.at(1, k) += 0.7;
  CHECK(discriminate(b.discriminator, x.values(), e.values(), 0) != before);
  CHECK(discriminate(b.discriminator, x.values(), e.values(), 2) == other);
}

TEST_CASE("discriminator scores scale linearly with M and the output is monotone") {
  Rng rng(23);
  for (bool lca : {false, true}) {
    NetworkBundle b(kDims, small_config(lca), 12);
    b.core->set_adjacency(random_adjacency(4, rng));
    const Tensor x = random_matrix(6, 3, rng), e = random_matrix(6, 5, rng);
    const std::vector<std::size_t> y = {0, 1, 2, 3, 1, 2};
    auto scores = [&] {
      Graph g(false);
      auto enc = b.core->encode(g, g.constant(x), g.constant(e));
      return g.value(b.discriminator.scores(g, enc, y));
    };
    auto probs = [&] {
      Graph g(false);
      auto enc = b.core->encode(g, g.constant(x), g.constant(e));
      return g.value(b.discriminator.probabilities(g, enc, y));
    };
    const Tensor s1 = scores();
    const Tensor p1 = probs();
    for (double& v : b.core->bilinear->value.values()) v *= 2.5;
    const Tensor s2 = scores();
    const Tensor p2 = probs();
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(s2[i] == doctest::Approx(2.5 * s1[i]).epsilon(1e-12));
      // larger |score| pushes the probability away from 0.5 in the same direction
      if (s2[i] > s1[i]) CHECK(p2[i] > p1[i]);
      if (s2[i] < s1[i]) CHECK(p2[i] < p1[i]);
    }
  }
}

TEST_CASE("D and Q share one set of encoder weights") {
  NetworkBundle b(kDims, small_config(false), 6);
  const std::vector<double> x = {1, -1, 0.5}, e = {0, 0, 0, 1, 0};
  CHECK(b.aux.core().annotator_encoder.weight.get() ==
        b.discriminator.core().annotator_encoder.weight.get());
  const auto before = aux_posterior(b.aux, x, e, 2);
  b.discriminator.core().instance_encoder.weight->value.at(0, 0) += 1.0;
  b.discriminator.core().instance_encoder.weight->value.at(1, 2) -= 1.0;
  CHECK(aux_posterior(b.aux, x, e, 2) != before);

  // sharing survives cloning
  NetworkBundle c = b.clone();
  CHECK(c.aux.core().instance_encoder.weight.get() ==
        c.discriminator.core().instance_encoder.weight.get());
  CHECK(c.aux.core().instance_encoder.weight.get() !=
        b.discriminator.core().instance_encoder.weight.get());
  const auto params = b.all_params();
  std::set<const Param*> unique;
  for (const auto& p : params) unique.insert(p.get());
  CHECK(unique.size() == params.size());
}

TEST_CASE("every network passes grad_check") {
  Rng rng(31);
  for (bool lca : {false, true}) {
    CAPTURE(lca);
    NetworkBundle b(kDims, small_config(lca), 40);
    b.core->set_adjacency(random_adjacency(4, rng));
    randomize(b, rng);
    const std::size_t batch = 3;
    const Tensor x = random_matrix(batch, 3, rng), e = random_matrix(batch, 5, rng);
    const Tensor z = random_simplex_rows(batch, 4, rng), eps = random_matrix(batch, 3, rng);
    const std::vector<std::size_t> y = {2, 0, 3};
    const Tensor mask = b.classifier.dropout_mask(batch, rng);

    auto res_c = grad_check(
        [&](Graph& g) {
          Var lp = g.log_softmax_rows(
              b.classifier.logits(g, g.constant(x), true, nullptr, &mask));
          return g.scale(g.mean(g.pick(lp, y)), -1.0);
        },
        b.classifier.params());
    CHECK(res_c.max_rel_error < 1e-4);

    // classifier and generator chained, as in the classifier update
    auto res_g = grad_check(
        [&](Graph& g) {
          Var zh = b.classifier.probabilities(g, g.constant(x), false);
          Var lp = g.log_softmax_rows(b.generator.logits(g, g.constant(x), g.constant(e), zh,
                                                         g.constant(eps)));
          return g.scale(g.mean(g.pick(lp, y)), -1.0);
        },
        [&] {
          auto ps = b.generator.params();
          for (auto& p : b.classifier.params()) ps.push_back(p);
          return ps;
        }());
    INFO("generator worst ", res_g.worst_param, "[", res_g.worst_index, "]");
    CHECK(res_g.max_rel_error < 1e-4);

    auto res_d = grad_check(
        [&](Graph& g) {
          auto enc = b.core->encode(g, g.constant(x), g.constant(e));
          return g.mean(g.log_clamped(b.discriminator.probabilities(g, enc, y), 1e-12, 1.0));
        },
        b.discriminator.params());
    INFO("discriminator worst ", res_d.worst_param, "[", res_d.worst_index, "]");
    CHECK(res_d.max_rel_error < 1e-4);

    auto res_q = grad_check(
        [&](Graph& g) {
          auto enc = b.core->encode(g, g.constant(x), g.constant(e));
          Var lp = g.log_softmax_rows(b.aux.logits(g, enc, y));
          return g.scale(g.mean(g.pick(lp, std::vector<std::size_t>{1, 1, 0})), -1.0);
        },
        b.discriminative_params());
    INFO("aux worst ", res_q.worst_param, "[", res_q.worst_index, "]");
    CHECK(res_q.max_rel_error < 1e-4);
  }
}

TEST_CASE("classifier fits linearly separable data") {
  SynthConfig sc;
  sc.num_classes = 2;
  sc.num_train = 200;
  sc.class_separation = 3.0;
  sc.reliability_min = sc.reliability_max = 1.0;
  const auto ds = synthesize_dataset(sc, 3);
  const auto train = ds.indices(Split::Train);
  Tensor x = Tensor::matrix(train.size(), ds.instance_dim());
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    std::copy_n(ds.instances().row(train[i]).begin(), ds.instance_dim(), x.row(i).begin());
    y.push_back((*ds.ground_truth())[train[i]]);
  }
  NetworkBundle b(dims_of(ds), NetworkConfig{}, 1);
  Adam opt(b.classifier.params(), AdamOptions{0.01});
  Rng rng(2);
  for (int step = 0; step < 150; ++step) {
    opt.zero_grad();
    Graph g;
    Var lp = g.log_softmax_rows(b.classifier.logits(g, g.constant(x), true, &rng));
    g.backward(g.scale(g.mean(g.pick(lp, y)), -1.0));
    opt.step();
  }
  const Tensor p = b.classifier.predict(x);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += argmax(p.row(i)) == y[i];
  CHECK(static_cast<double>(ok) / y.size() > 0.95);
}

TEST_CASE("aux network concentrates when the label reveals the class") {
  for (std::uint64_t seed : {1, 2, 3}) {
    SynthConfig sc;
    sc.num_train = 150;
    sc.reliability_min = sc.reliability_max = 1.0;
    const auto ds = synthesize_dataset(sc, seed);
    std::vector<std::size_t> inst, ann, lab;
    for (const auto& a : ds.annotations()) {
      inst.push_back(a.instance);
      ann.push_back(a.annotator);
      lab.push_back(a.label);  // equals the true class
    }
    Tensor x = Tensor::matrix(inst.size(), ds.instance_dim());
    Tensor e = Tensor::matrix(inst.size(), ds.annotator_dim());
    for (std::size_t i = 0; i < inst.size(); ++i) {
      std::copy_n(ds.instances().row(inst[i]).begin(), ds.instance_dim(), x.row(i).begin());
      std::copy_n(ds.annotators().row(ann[i]).begin(), ds.annotator_dim(), e.row(i).begin());
    }
    NetworkBundle b(dims_of(ds), NetworkConfig{}, seed);
    b.core->set_adjacency(build_cooccurrence(ds));
    Adam opt(b.discriminative_params(), AdamOptions{0.005});
    for (int step = 0; step < 80; ++step) {
      opt.zero_grad();
      Graph g;
      auto enc = b.core->encode(g, g.constant(x), g.constant(e));
      Var lp = g.log_softmax_rows(b.aux.logits(g, enc, lab));
      g.backward(g.scale(g.mean(g.pick(lp, lab)), -1.0));
      opt.step();
    }
    double mean_max = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
      const auto p = aux_posterior(b.aux, x.row(i), e.row(i), lab[i]);
      mean_max += *std::max_element(p.begin(), p.end());
    }
    mean_max /= static_cast<double>(inst.size());
    CAPTURE(seed);
    CHECK(mean_max > 0.9);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(3);
  NetworkBundle b(kDims, small_config(true), 77);
  b.core->set_adjacency(random_adjacency(4, rng));
  randomize(b, rng, 1.3);
  crowding::testing::TempDir dir;
  save_checkpoint(b, dir / "model");
  const NetworkBundle back = load_checkpoint(dir / "model");
  const auto pa = b.all_params(), pb = back.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value.same_shape(pb[i]->value));
    CHECK(std::memcmp(pa[i]->value.values().data(), pb[i]->value.values().data(),
                      pa[i]->value.size() * sizeof(double)) == 0);
  }
  CHECK(std::ranges::equal(back.core->propagation().values(), b.core->propagation().values()));
  CHECK(back.core->lca());
  CHECK(back.config.embed_dim == 4);
  CHECK(back.config.noise_dim == 3);
  CHECK_THROWS(load_checkpoint(dir / "missing"));
}
