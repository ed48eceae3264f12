#include "crowding/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "crowding/errors.hpp"
#include "crowding/metrics.hpp"

namespace crowding {

namespace {

constexpr std::size_t kChunk = 4096;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Rng stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream, 0x63726f77u};
  return Rng(seq);
}

Tensor gather(const Tensor& src, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = src.row(rows[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

Tensor slice_rows(const Tensor& src, std::size_t begin, std::size_t end) {
  Tensor out = Tensor::matrix(end - begin, src.cols());
  std::copy(src.values().begin() + static_cast<std::ptrdiff_t>(begin * src.cols()),
            src.values().begin() + static_cast<std::ptrdiff_t>(end * src.cols()),
            out.values().begin());
  return out;
}

void require_finite(double v, const char* what, std::size_t epoch) {
  if (!std::isfinite(v)) {
    std::ostringstream ss;
    ss << what << " became non-finite at epoch " << epoch;
    throw DivergenceError(ss.str());
  }
}

// Temporarily marks parameters frozen.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<ParamPtr> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      saved_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<ParamPtr> params_;
  std::vector<bool> saved_;
};

std::vector<Tensor> snapshot(std::span<const ParamPtr> params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p->value);
  return out;
}

void restore(std::span<const ParamPtr> params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

// Pair features for a list of logged samples.
struct PairInputs {
  Tensor x, e, z, noise;
  std::vector<std::size_t> labels;
};

PairInputs pair_inputs(const CrowdDataset& ds, const LoggedGrid& grid,
                       std::span<const std::size_t> subset) {
  PairInputs in;
  std::vector<std::size_t> inst, ann, rows;
  for (std::size_t i : subset) {
    const auto& s = grid.samples[i];
    inst.push_back(s.instance);
    ann.push_back(s.annotator);
    rows.push_back(s.noise_row);
    in.labels.push_back(s.label);
  }
  in.x = gather(ds.instances(), inst);
  in.e = gather(ds.annotators(), ann);
  in.z = gather(grid.z_hat, subset);
  in.noise = gather(grid.noise, rows);
  return in;
}

Tensor generator_probabilities(const Generator& gen, const Tensor& x, const Tensor& e,
                               const Tensor& z, const Tensor& noise) {
  Tensor out = Tensor::matrix(x.rows(), gen.params().back()->value.cols());
  for (std::size_t b = 0; b < x.rows(); b += kChunk) {
    const std::size_t end = std::min(x.rows(), b + kChunk);
    Graph g(false);
    Var p = gen.probabilities(g, g.constant(slice_rows(x, b, end)),
                              g.constant(slice_rows(e, b, end)),
                              g.constant(slice_rows(z, b, end)),
                              g.constant(slice_rows(noise, b, end)));
    const auto v = g.value(p).values();
    std::copy(v.begin(), v.end(), out.row(b).begin());
  }
  return out;
}

// Validation accuracy and mean NLL of the ground truth, when available.
struct ValidationScore {
  double accuracy = kNaN;
  double nll = kNaN;
  bool available = false;

  bool better_than(const ValidationScore& o) const {
    if (!available) return false;
    if (accuracy != o.accuracy) return accuracy > o.accuracy;
    return nll < o.nll;
  }
};

ValidationScore validation_score(const Classifier& c, const CrowdDataset& ds) {
  ValidationScore s;
  if (!ds.ground_truth() || ds.indices(Split::Validation).empty()) return s;
  const auto sp = labeled_split(ds, Split::Validation);
  const Tensor p = c.predict(sp.x);
  s.accuracy = accuracy(p, sp.labels);
  double nll = 0.0;
  for (std::size_t i = 0; i < sp.labels.size(); ++i)
    nll -= std::log(std::max(p.at(i, sp.labels[i]), kProbClamp));
  s.nll = nll / static_cast<double>(sp.labels.size());
  s.available = true;
  return s;
}

double split_accuracy_or_nan(const Classifier& c, const CrowdDataset& ds, Split s) {
  if (!ds.ground_truth() || ds.indices(s).empty()) return kNaN;
  return split_accuracy(c, ds, s);
}

EpochMetrics accuracy_metrics(const Classifier& c, const CrowdDataset& ds, std::size_t epoch) {
  EpochMetrics m;
  m.epoch = epoch;
  m.train_accuracy = split_accuracy_or_nan(c, ds, Split::Train);
  const auto v = validation_score(c, ds);
  m.validation_accuracy = v.accuracy;
  m.validation_nll = v.nll;
  m.test_accuracy = split_accuracy_or_nan(c, ds, Split::Test);
  return m;
}

// Minibatch training of the classifier (plus optional extra parameters) with
// best-validation selection. `loss` builds the batch loss over item indices.
using BatchLoss = std::function<Var(Graph&, std::span<const std::size_t>)>;

struct FitOutcome {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
};

FitOutcome fit_classifier(const CrowdDataset& ds, const TrainConfig& cfg, Classifier& classifier,
                          std::vector<ParamPtr> extra, std::size_t num_items,
                          const BatchLoss& loss, Rng& rng) {
  auto params = classifier.params();
  params.insert(params.end(), extra.begin(), extra.end());
  Adam opt(params, AdamOptions{cfg.lr_pretrain});
  FitOutcome out;
  ValidationScore best = validation_score(classifier, ds);
  auto best_values = snapshot(params);
  std::vector<std::size_t> order(num_items);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = cfg.batch_size ? cfg.batch_size : num_items;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < num_items; b += bs) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(bs, num_items - b));
      opt.zero_grad();
      Graph g;
      Var l = loss(g, batch);
      require_finite(g.value(l)[0], "pretraining loss", epoch);
      g.backward(l);
      opt.step();
    }
    out.history.push_back(accuracy_metrics(classifier, ds, epoch));
    const ValidationScore now = validation_score(classifier, ds);
    if (now.better_than(best) || !now.available) {
      best = now;
      best_values = snapshot(params);
      out.best_epoch = epoch;
    }
  }
  restore(params, best_values);
  return out;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

// ------------------------------------------------------------------- config

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::CrowdG: return "CrowdG";
    case Variant::NoInstance: return "CrowdInG_U";
    case Variant::NoAnnotator: return "CrowdInG_I";
    case Variant::RandomSelection: return "CrowdInG_R";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Full, Variant::CrowdG, Variant::NoInstance, Variant::NoAnnotator,
                    Variant::RandomSelection})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant '" + std::string(s) +
                              "' (full, CrowdG, CrowdInG_U, CrowdInG_I, CrowdInG_R)");
}

NetworkConfig effective_network(const TrainConfig& cfg) {
  NetworkConfig n = cfg.network;
  if (cfg.variant == Variant::NoInstance) n.generator_uses_instance = false;
  if (cfg.variant == Variant::NoAnnotator) n.generator_uses_annotator = false;
  return n;
}

double effective_lambda(const TrainConfig& cfg) {
  return cfg.variant == Variant::CrowdG ? 0.0 : cfg.lambda;
}

std::uint64_t parameter_digest(std::span<const ParamPtr> params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.values().data(), p->value.size() * sizeof(double), h);
  }
  return h;
}

// -------------------------------------------------------------- pretraining

CrowdLayerResult pretrain_dl_cl(const CrowdDataset& ds, const TrainConfig& cfg,
                                Classifier& classifier, Rng& rng) {
  const std::size_t c = ds.num_classes(), r = ds.num_annotators();
  std::vector<Annotation> triplets;
  for (std::size_t n : ds.indices(Split::Train))
    for (const auto& a : ds.annotations_of(n)) triplets.push_back(a);
  if (triplets.empty())
    throw DataError(DataError::Kind::UnannotatedInstance, "no training annotations");

  Tensor eye_stack = Tensor::matrix(r * c, c);
  for (std::size_t a = 0; a < r; ++a)
    for (std::size_t k = 0; k < c; ++k) eye_stack.at(a * c + k, k) = 1.0;
  auto transforms = make_param("crowd_layer.transforms", std::move(eye_stack));

  const BatchLoss loss = [&](Graph& g, std::span<const std::size_t> batch) {
    std::vector<std::size_t> inst, ann, lab;
    for (std::size_t i : batch) {
      inst.push_back(triplets[i].instance);
      ann.push_back(triplets[i].annotator);
      lab.push_back(triplets[i].label);
    }
    Var z = classifier.probabilities(g, g.constant(gather(ds.instances(), inst)), true, &rng);
    Var lp = g.log_softmax_rows(g.select_matmul(z, g.param(transforms), ann));
    return g.scale(g.mean(g.pick(lp, lab)), -1.0);
  };
  const auto fit = fit_classifier(ds, cfg, classifier, {transforms}, triplets.size(), loss, rng);

  CrowdLayerResult out;
  for (std::size_t a = 0; a < r; ++a) {
    Tensor t = Tensor::matrix(c, c);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < c; ++j) t.at(k, j) = transforms->value.at(a * c + k, j);
    out.transforms.push_back(std::move(t));
  }
  for (const auto& m : fit.history) out.validation_curve.push_back(m.validation_accuracy);
  out.best_epoch = fit.best_epoch;
  return out;
}

void train_supervised(const CrowdDataset& ds, std::span<const std::size_t> instances,
                      std::span<const std::size_t> labels, const TrainConfig& cfg,
                      Classifier& classifier, Rng& rng) {
  if (instances.size() != labels.size() || instances.empty())
    throw std::invalid_argument("supervised training needs one label per instance");
  const BatchLoss loss = [&](Graph& g, std::span<const std::size_t> batch) {
    std::vector<std::size_t> inst, lab;
    for (std::size_t i : batch) {
      inst.push_back(instances[i]);
      lab.push_back(labels[i]);
    }
    Var lp = g.log_softmax_rows(
        classifier.logits(g, g.constant(gather(ds.instances(), inst)), true, &rng));
    return g.scale(g.mean(g.pick(lp, lab)), -1.0);
  };
  fit_classifier(ds, cfg, classifier, {}, instances.size(), loss, rng);
}

void pretrain_generator(const CrowdDataset& ds, const TrainConfig& cfg, NetworkBundle& bundle,
                        Rng& rng) {
  const auto train = ds.indices(Split::Train);
  std::vector<Annotation> triplets;
  for (std::size_t n : train)
    for (const auto& a : ds.annotations_of(n)) triplets.push_back(a);
  if (triplets.empty() || cfg.gen_pretrain_epochs == 0) return;
  const Tensor z_all = bundle.classifier.predict(ds.instances());
  Adam opt(bundle.generator.params(), AdamOptions{cfg.lr_generator});
  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = cfg.batch_size ? cfg.batch_size : triplets.size();
  const std::size_t k = bundle.generator.noise_dim();
  for (std::size_t epoch = 1; epoch <= cfg.gen_pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t end = std::min(order.size(), b + bs);
      std::vector<std::size_t> inst, ann, lab;
      for (std::size_t i = b; i < end; ++i) {
        inst.push_back(triplets[order[i]].instance);
        ann.push_back(triplets[order[i]].annotator);
        lab.push_back(triplets[order[i]].label);
      }
      const Tensor noise({inst.size(), k}, standard_normal(inst.size() * k, rng));
      opt.zero_grad();
      Graph g;
      Var lp = g.log_softmax_rows(bundle.generator.logits(
          g, g.constant(gather(ds.instances(), inst)), g.constant(gather(ds.annotators(), ann)),
          g.constant(gather(z_all, inst)), g.constant(noise)));
      Var l = g.scale(g.mean(g.pick(lp, lab)), -1.0);
      require_finite(g.value(l)[0], "generator pretraining loss", epoch);
      g.backward(l);
      opt.step();
    }
  }
}

void pretrain_gen_disc(const CrowdDataset& ds, const TrainConfig& cfg, NetworkBundle& bundle,
                       Rng& rng) {
  pretrain_generator(ds, cfg, bundle, rng);
  if (cfg.disc_pretrain_epochs == 0) return;
  TrainConfig sub = cfg;
  sub.seed = rng();
  CrowdTrainer t(ds, sub, bundle.clone());
  t.pretrain_discriminator(cfg.disc_pretrain_epochs);
  bundle.copy_values_from(t.bundle());
}

// ---------------------------------------------------------------- selection

std::vector<std::size_t> select_for_discriminator(std::span<const double> entropies,
                                                  std::span<const std::size_t> pair_annotator,
                                                  std::span<const std::size_t> authentic_counts,
                                                  bool uniform, Rng& rng) {
  if (entropies.size() != pair_annotator.size())
    throw std::invalid_argument("selection: entropies and annotators differ in length");
  const std::size_t r = authentic_counts.size();
  std::vector<std::vector<std::size_t>> by_annotator(r);
  for (std::size_t i = 0; i < pair_annotator.size(); ++i) {
    if (pair_annotator[i] >= r) throw std::invalid_argument("selection: annotator out of range");
    by_annotator[pair_annotator[i]].push_back(i);
  }
  std::vector<std::size_t> chosen;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t a = 0; a < r; ++a) {
    const auto& pool = by_annotator[a];
    const std::size_t want = std::min(authentic_counts[a], pool.size());
    if (want == 0) continue;
    // Efraimidis-Spirakis: keep the `want` largest u^(1/w), compared in logs.
    using Key = std::pair<double, std::size_t>;
    std::priority_queue<Key, std::vector<Key>, std::greater<>> heap;
    for (std::size_t i : pool) {
      const double w = uniform ? 1.0 : 1.0 / std::max(entropies[i], kSelectionEntropyFloor);
      double u = unit(rng);
      while (u == 0.0) u = unit(rng);
      const double key = std::log(u) / w;
      if (heap.size() < want) {
        heap.emplace(key, i);
      } else if (key > heap.top().first) {
        heap.pop();
        heap.emplace(key, i);
      }
    }
    while (!heap.empty()) {
      chosen.push_back(heap.top().second);
      heap.pop();
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// ----------------------------------------------------------------- trainer

CrowdTrainer::CrowdTrainer(const CrowdDataset& ds, TrainConfig cfg, NetworkBundle bundle)
    : ds_(ds),
      cfg_(std::move(cfg)),
      bundle_(std::move(bundle)),
      opt_classifier_(bundle_.classifier.params(), AdamOptions{cfg_.lr_classifier}),
      opt_generator_(bundle_.generator.params(), AdamOptions{cfg_.lr_generator}),
      opt_discriminator_(bundle_.discriminative_params(), AdamOptions{cfg_.lr_discriminator}),
      rng_(stream_rng(cfg_.seed, 7)) {
  if (cfg_.lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (!(cfg_.entropy_threshold >= 0 && cfg_.entropy_threshold <= 1))
    throw std::invalid_argument("entropy threshold must lie in [0, 1]");
  if (cfg_.inner_steps == 0) throw std::invalid_argument("inner_steps must be positive");
  if (cfg_.mu_grid.empty()) throw std::invalid_argument("mu grid is empty");
  if (bundle_.core->lca() && !bundle_.core->has_adjacency())
    bundle_.core->set_adjacency(build_cooccurrence(ds_));
  train_instances_ = ds_.indices(Split::Train);
  authentic_counts_.assign(ds_.num_annotators(), 0);
  for (std::size_t n : train_instances_)
    for (const auto& a : ds_.annotations_of(n)) {
      LoggedSample s;
      s.instance = a.instance;
      s.annotator = a.annotator;
      s.label = a.label;
      s.authentic = true;
      authentic_.push_back(s);
      ++authentic_counts_[a.annotator];
    }
}

LoggedGrid CrowdTrainer::log_grid() {
  const std::size_t c = ds_.num_classes(), r = ds_.num_annotators();
  const std::size_t k = bundle_.generator.noise_dim();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(train_instances_.size() * r);
  for (std::size_t n : train_instances_)
    for (std::size_t a = 0; a < r; ++a) pairs.emplace_back(n, a);
  if (cfg_.max_grid_pairs && pairs.size() > cfg_.max_grid_pairs) {
    // uniform subsample, kept in (instance, annotator) order
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < cfg_.max_grid_pairs; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng_)]);
    }
    idx.resize(cfg_.max_grid_pairs);
    std::sort(idx.begin(), idx.end());
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (std::size_t i : idx) kept.push_back(pairs[i]);
    pairs = std::move(kept);
  }
  const std::size_t p = pairs.size();

  LoggedGrid grid;
  const Tensor z_all = bundle_.classifier.predict(ds_.instances());
  grid.instance_entropy.assign(ds_.num_instances(), kNaN);
  const double log_c = std::log(static_cast<double>(c));
  for (std::size_t n : train_instances_)
    grid.instance_entropy[n] = entropy_unchecked(z_all.row(n)) / log_c;

  std::vector<std::size_t> inst(p), ann(p);
  for (std::size_t i = 0; i < p; ++i) std::tie(inst[i], ann[i]) = pairs[i];
  grid.z_hat = gather(z_all, inst);
  grid.noise = Tensor({p, k}, standard_normal(p * k, rng_));
  grid.generated = generator_probabilities(bundle_.generator, gather(ds_.instances(), inst),
                                           gather(ds_.annotators(), ann), grid.z_hat, grid.noise);
  grid.samples.resize(p);
  grid.entropies.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    auto& s = grid.samples[i];
    s.instance = inst[i];
    s.annotator = ann[i];
    s.label = sample_categorical(grid.generated.row(i), rng_);
    s.g0 = grid.generated.at(i, s.label);
    s.code = sample_categorical(grid.z_hat.row(i), rng_);
    s.noise_row = i;
    grid.entropies[i] = entropy_unchecked(grid.generated.row(i));
  }
  return grid;
}

void CrowdTrainer::train_discriminator(const LoggedGrid& grid,
                                       std::span<const std::size_t> selected, std::size_t steps,
                                       EpochMetrics* m) {
  const double lambda = effective_lambda(cfg_);
  std::vector<std::size_t> ai, aa, al;
  for (const auto& s : authentic_) {
    ai.push_back(s.instance);
    aa.push_back(s.annotator);
    al.push_back(s.label);
  }
  const Tensor ax = gather(ds_.instances(), ai), ae = gather(ds_.annotators(), aa);
  const PairInputs gen = pair_inputs(ds_, grid, selected);
  std::vector<std::size_t> codes;
  for (std::size_t i : selected) codes.push_back(grid.samples[i].code);

  for (std::size_t step = 0; step < steps; ++step) {
    opt_discriminator_.zero_grad();
    Graph g;
    ClampStats clamps;
    auto enc_a = bundle_.core->encode(g, g.constant(ax), g.constant(ae));
    Var d_auth = bundle_.discriminator.probabilities(g, enc_a, al);
    Var loss;
    if (selected.empty()) {
      loss = g.scale(g.mean(g.log_clamped(d_auth, kProbClamp, 1 - kProbClamp, &clamps)), -1.0);
    } else {
      auto enc_g = bundle_.core->encode(g, g.constant(gen.x), g.constant(gen.e));
      Var d_gen = bundle_.discriminator.probabilities(g, enc_g, gen.labels);
      loss = discriminator_loss(g, d_auth, d_gen, cfg_.beta, &clamps);
      if (lambda > 0) {
        Var lq = g.log_softmax_rows(bundle_.aux.logits(g, enc_g, gen.labels));
        loss = g.add(loss, g.scale(g.mean(g.pick(lq, codes)), -lambda));
      }
    }
    require_finite(g.value(loss)[0], "discriminator loss", epoch_);
    if (m) {
      m->disc_loss = g.value(loss)[0];
      m->clamps += clamps.count;
    }
    g.backward(loss);
    opt_discriminator_.step();
  }
}

CrowdTrainer::Deltas CrowdTrainer::deltas(const LoggedGrid& grid, ClampStats* clamps) const {
  const double lambda = effective_lambda(cfg_);
  const std::size_t p = grid.samples.size();
  Deltas out;
  out.full.resize(p);
  out.adversarial.resize(p);
  out.d_scores.resize(p);
  out.q_logprobs.resize(p);
  for (std::size_t b = 0; b < p; b += kChunk) {
    const std::size_t end = std::min(p, b + kChunk);
    std::vector<std::size_t> idx(end - b);
    std::iota(idx.begin(), idx.end(), b);
    const PairInputs in = pair_inputs(ds_, grid, idx);
    Graph g(false);
    auto enc = bundle_.core->encode(g, g.constant(in.x), g.constant(in.e));
    const Tensor d = g.value(bundle_.discriminator.probabilities(g, enc, in.labels));
    const Tensor lq = g.value(g.log_softmax_rows(bundle_.aux.logits(g, enc, in.labels)));
    for (std::size_t i = b; i < end; ++i) {
      const double di = d[i - b];
      const double qi = lq.at(i - b, grid.samples[i].code);
      out.d_scores[i] = di;
      out.q_logprobs[i] = qi;
      out.adversarial[i] = per_annotation_delta(di, qi, 0.0, clamps);
      out.full[i] = out.adversarial[i] - lambda * qi;
    }
  }
  return out;
}

void CrowdTrainer::update_generator(const LoggedGrid& grid, std::span<const std::size_t> subset,
                                    std::span<const double> delta, double mu) {
  const PairInputs in = pair_inputs(ds_, grid, subset);
  std::vector<LoggedSample> samples;
  std::vector<double> d;
  for (std::size_t i : subset) {
    samples.push_back(grid.samples[i]);
    d.push_back(delta[i]);
  }
  FreezeGuard freeze(bundle_.classifier.params());
  for (std::size_t step = 0; step < cfg_.inner_steps; ++step) {
    opt_generator_.zero_grad();
    Graph g;
    Var probs = bundle_.generator.probabilities(g, g.constant(in.x), g.constant(in.e),
                                                g.constant(in.z), g.constant(in.noise));
    Var loss = crm_objective(g, g.pick(probs, in.labels), samples, d, mu);
    require_finite(g.value(loss)[0], "generator objective", epoch_);
    g.backward(loss);
    opt_generator_.step();
  }
}

void CrowdTrainer::update_classifier(const LoggedGrid& grid, std::span<const std::size_t> subset,
                                     std::span<const double> delta, double mu) {
  const PairInputs in = pair_inputs(ds_, grid, subset);
  std::vector<LoggedSample> samples;
  std::vector<double> d;
  std::vector<std::size_t> unique_inst, local(subset.size());
  for (std::size_t j = 0; j < subset.size(); ++j) {
    const auto& s = grid.samples[subset[j]];
    samples.push_back(s);
    d.push_back(delta[subset[j]]);
    if (unique_inst.empty() || unique_inst.back() != s.instance) unique_inst.push_back(s.instance);
    local[j] = unique_inst.size() - 1;  // samples are in instance order
  }
  const Tensor xi = gather(ds_.instances(), unique_inst);
  FreezeGuard freeze(bundle_.generator.params());
  for (std::size_t step = 0; step < cfg_.inner_steps; ++step) {
    opt_classifier_.zero_grad();
    Graph g;
    Var z = bundle_.classifier.probabilities(g, g.constant(xi), false);
    Var zp = g.gather_rows(z, local);
    Var probs = bundle_.generator.probabilities(g, g.constant(in.x), g.constant(in.e), zp,
                                                g.constant(in.noise));
    Var loss = crm_objective(g, g.pick(probs, in.labels), samples, d, mu);
    require_finite(g.value(loss)[0], "classifier objective", epoch_);
    g.backward(loss);
    opt_classifier_.step();
  }
}

void CrowdTrainer::update_joint(const LoggedGrid& grid, std::span<const double> delta,
                                double mu) {
  std::vector<std::size_t> all(grid.samples.size());
  std::iota(all.begin(), all.end(), 0);
  const PairInputs in = pair_inputs(ds_, grid, all);
  std::vector<std::size_t> unique_inst, local(all.size());
  for (std::size_t j = 0; j < all.size(); ++j) {
    const auto& s = grid.samples[j];
    if (unique_inst.empty() || unique_inst.back() != s.instance) unique_inst.push_back(s.instance);
    local[j] = unique_inst.size() - 1;
  }
  const Tensor xi = gather(ds_.instances(), unique_inst);
  for (std::size_t step = 0; step < cfg_.inner_steps; ++step) {
    opt_classifier_.zero_grad();
    opt_generator_.zero_grad();
    Graph g;
    Var z = bundle_.classifier.probabilities(g, g.constant(xi), false);
    Var probs = bundle_.generator.probabilities(g, g.constant(in.x), g.constant(in.e),
                                                g.gather_rows(z, local), g.constant(in.noise));
    Var loss = crm_objective(g, g.pick(probs, in.labels), grid.samples, delta, mu);
    require_finite(g.value(loss)[0], "joint objective", epoch_);
    g.backward(loss);
    opt_generator_.step();
    opt_classifier_.step();
  }
}

void CrowdTrainer::pretrain_discriminator(std::size_t rounds) {
  for (std::size_t i = 0; i < rounds; ++i) {
    // Pretraining scores every logged sample; selection starts with the epochs.
    const LoggedGrid grid = log_grid();
    std::vector<std::size_t> all(grid.samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    train_discriminator(grid, all, cfg_.inner_steps, nullptr);
  }
}

EpochMetrics CrowdTrainer::evaluate(std::size_t epoch) const {
  return accuracy_metrics(bundle_.classifier, ds_, epoch);
}

EpochMetrics CrowdTrainer::run_epoch() {
  ++epoch_;
  EpochMetrics m;

  // (1) log one generated annotation per pair under the snapshot policy
  grid_ = log_grid();
  const LoggedGrid& grid = grid_;
  m.logged = grid.samples.size();
  m.logged_entropy = mean(grid.entropies);

  // (2) selection and D/Q updates
  std::vector<std::size_t> pair_ann;
  for (const auto& s : grid.samples) pair_ann.push_back(s.annotator);
  const auto selected = select_for_discriminator(grid.entropies, pair_ann, authentic_counts_,
                                                 cfg_.variant == Variant::RandomSelection, rng_);
  m.selected = selected.size();
  {
    std::vector<double> h;
    for (std::size_t i : selected) h.push_back(grid.entropies[i]);
    m.selected_entropy = h.empty() ? kNaN : mean(h);
  }
  train_discriminator(grid, selected, cfg_.inner_steps, &m);

  // (3) score every logged sample
  ClampStats clamps;
  const Deltas dl = deltas(grid, &clamps);
  m.clamps += clamps.count;
  {
    std::vector<double> auth_scores, sel_scores;
    Graph g(false);
    std::vector<std::size_t> ai, aa, al;
    for (const auto& s : authentic_) {
      ai.push_back(s.instance);
      aa.push_back(s.annotator);
      al.push_back(s.label);
    }
    auto enc = bundle_.core->encode(g, g.constant(gather(ds_.instances(), ai)),
                                    g.constant(gather(ds_.annotators(), aa)));
    const auto d = g.value(bundle_.discriminator.probabilities(g, enc, al)).values();
    auth_scores.assign(d.begin(), d.end());
    for (std::size_t i : selected) sel_scores.push_back(dl.d_scores[i]);
    m.value = value_function(auth_scores, sel_scores);
    m.disc_auc = roc_auc(auth_scores, dl.d_scores);
    double h = 0.0;
    for (std::size_t n : train_instances_)
      h += grid.instance_entropy[n] * std::log(static_cast<double>(ds_.num_classes()));
    m.info = info_lower_bound(dl.q_logprobs, h / static_cast<double>(train_instances_.size()));
  }

  // (4) split instances by normalised classifier entropy at snapshot time
  std::vector<std::size_t> low, high;
  for (std::size_t i = 0; i < grid.samples.size(); ++i)
    (grid.instance_entropy[grid.samples[i].instance] <= cfg_.entropy_threshold ? low : high)
        .push_back(i);
  for (std::size_t n : train_instances_)
    ++(grid.instance_entropy[n] <= cfg_.entropy_threshold ? m.low_entropy_instances
                                                           : m.high_entropy_instances);

  // running means of delta for the mu grid
  ++running_count_;
  running_delta_g_ += (mean(dl.full) - running_delta_g_) / static_cast<double>(running_count_);
  running_delta_c_ +=
      (mean(dl.adversarial) - running_delta_c_) / static_cast<double>(running_count_);

  std::vector<double> multipliers;
  if (cfg_.mu_policy == MuPolicy::Fixed) multipliers = {kNaN};
  else if (cfg_.mu_policy == MuPolicy::Baseline) multipliers = {1.0};
  else multipliers = cfg_.mu_grid;
  const bool select_mu = multipliers.size() > 1 && validation_score(bundle_.classifier, ds_).available;
  if (multipliers.size() > 1 && !select_mu) {
    multipliers = {cfg_.mu_grid.back()};
    m.warnings.push_back("no labelled validation split: mu multiplier fixed to the last grid value");
  }
  auto mu_for = [&](double mult, double running) {
    return std::isnan(mult) ? cfg_.mu : mult * running;
  };

  auto cparams = bundle_.classifier.params();
  auto gparams = bundle_.generator.params();
  const auto c0 = snapshot(cparams), g0 = snapshot(gparams);
  const AdamState oc0 = opt_classifier_.state(), og0 = opt_generator_.state();

  struct Candidate {
    ValidationScore score;
    std::vector<Tensor> c, g;
    AdamState oc, og;
    double mult = 0.0;
    FreezeTrace trace;
  };
  std::optional<Candidate> best;
  bool warned_low = false, warned_high = false;
  for (double mult : multipliers) {
    restore(cparams, c0);
    restore(gparams, g0);
    opt_classifier_.load_state(oc0);
    opt_generator_.load_state(og0);
    FreezeTrace trace;
    if (cfg_.one_step) {
      update_joint(grid, dl.full, mu_for(mult, running_delta_g_));
      trace.generator_updated = trace.classifier_updated = true;
    } else {
      // (5) generator on low-entropy instances, classifier frozen
      trace.classifier_before_g = parameter_digest(cparams);
      if (!low.empty()) {
        update_generator(grid, low, dl.full, mu_for(mult, running_delta_g_));
        trace.generator_updated = true;
      } else if (!warned_low) {
        m.warnings.push_back("low-entropy set empty: generator update skipped");
        warned_low = true;
      }
      trace.classifier_after_g = parameter_digest(cparams);
      // (6) classifier on high-entropy instances, generator frozen, L_G only
      trace.generator_before_c = parameter_digest(gparams);
      if (!high.empty()) {
        update_classifier(grid, high, dl.adversarial, mu_for(mult, running_delta_c_));
        trace.classifier_updated = true;
      } else if (!warned_high) {
        m.warnings.push_back("high-entropy set empty: classifier update skipped");
        warned_high = true;
      }
      trace.generator_after_c = parameter_digest(gparams);
    }
    Candidate cand{validation_score(bundle_.classifier, ds_), snapshot(cparams),
                   snapshot(gparams), opt_classifier_.state(), opt_generator_.state(), mult,
                   trace};
    if (!best || cand.score.better_than(best->score)) best = std::move(cand);
  }
  restore(cparams, best->c);
  restore(gparams, best->g);
  opt_classifier_.load_state(std::move(best->oc));
  opt_generator_.load_state(std::move(best->og));
  trace_ = best->trace;
  m.mu_multiplier = best->mult;
  m.mu_generator = mu_for(best->mult, running_delta_g_);
  m.mu_classifier = mu_for(best->mult, running_delta_c_);

  for (const auto& p : bundle_.all_params())
    if (!p->value.all_finite()) throw DivergenceError("parameter " + p->name +
                                                      " became non-finite at epoch " +
                                                      std::to_string(epoch_));

  // (7) metrics
  const EpochMetrics acc = evaluate(epoch_);
  m.epoch = epoch_;
  m.train_accuracy = acc.train_accuracy;
  m.validation_accuracy = acc.validation_accuracy;
  m.validation_nll = acc.validation_nll;
  m.test_accuracy = acc.test_accuracy;
  return m;
}

// ------------------------------------------------------------- entry points

namespace {

TrainResult finish(std::string method, const NetworkBundle& best, std::vector<EpochMetrics> h,
                   std::size_t best_epoch, const CrowdDataset& ds) {
  TrainResult r{std::move(method), best.clone(), std::move(h), best_epoch, kNaN, kNaN};
  const auto v = validation_score(r.bundle.classifier, ds);
  r.best_validation_accuracy = v.accuracy;
  r.test_accuracy = split_accuracy_or_nan(r.bundle.classifier, ds, Split::Test);
  return r;
}

NetworkBundle initial_bundle(const CrowdDataset& ds, const TrainConfig& cfg) {
  NetworkBundle b(dims_of(ds), effective_network(cfg), cfg.seed);
  if (b.core->lca()) b.core->set_adjacency(build_cooccurrence(ds));
  return b;
}

}  // namespace

TrainResult train_dl_cl(const CrowdDataset& ds, const TrainConfig& cfg) {
  NetworkBundle b = initial_bundle(ds, cfg);
  Rng rng = stream_rng(cfg.seed, 1);
  pretrain_dl_cl(ds, cfg, b.classifier, rng);
  auto m = accuracy_metrics(b.classifier, ds, 0);
  return finish("dl-cl", b, {m}, 0, ds);
}

TrainResult train_dl_mv(const CrowdDataset& ds, const TrainConfig& cfg) {
  NetworkBundle b = initial_bundle(ds, cfg);
  Rng rng = stream_rng(cfg.seed, 2);
  const auto mv = majority_vote(ds);
  std::vector<std::size_t> inst, lab;
  for (std::size_t n : ds.indices(Split::Train))
    if (mv[n]) {
      inst.push_back(n);
      lab.push_back(*mv[n]);
    }
  train_supervised(ds, inst, lab, cfg, b.classifier, rng);
  auto m = accuracy_metrics(b.classifier, ds, 0);
  return finish("dl-mv", b, {m}, 0, ds);
}

TrainResult train_crowding(const CrowdDataset& ds, const TrainConfig& cfg) {
  NetworkBundle b = initial_bundle(ds, cfg);
  Rng rng = stream_rng(cfg.seed, 1);  // same stream as train_dl_cl: identical starting point
  pretrain_dl_cl(ds, cfg, b.classifier, rng);
  Rng grng = stream_rng(cfg.seed, 3);
  pretrain_generator(ds, cfg, b, grng);
  CrowdTrainer t(ds, cfg, std::move(b));
  t.pretrain_discriminator(cfg.disc_pretrain_epochs);

  std::vector<EpochMetrics> history{t.evaluate(0)};
  NetworkBundle best = t.bundle().clone();
  ValidationScore best_score = validation_score(best.classifier, ds);
  std::size_t best_epoch = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    history.push_back(t.run_epoch());
    const auto s = validation_score(t.bundle().classifier, ds);
    if (s.better_than(best_score) || !s.available) {
      best_score = s;
      best.copy_values_from(t.bundle());
      best_epoch = e;
    }
  }
  std::string method = cfg.variant == Variant::Full ? "crowding" : std::string(variant_name(cfg.variant));
  if (cfg.variant == Variant::Full && cfg.lambda == 0.0) method = "CrowdG";
  return finish(method, best, std::move(history), best_epoch, ds);
}

// ------------------------------------------------------------ augmentation

namespace {

std::vector<std::pair<Annotation, bool>> augmented_rows(const CrowdDataset& ds,
                                                        const NetworkBundle& bundle,
                                                        std::uint64_t seed) {
  Rng rng = stream_rng(seed, 11);
  const std::size_t r = ds.num_annotators(), k = bundle.generator.noise_dim();
  const Tensor z_all = bundle.classifier.predict(ds.instances());
  std::vector<std::pair<Annotation, bool>> rows;
  std::vector<std::size_t> miss_inst, miss_ann;
  std::vector<std::size_t> slot;  // position in rows of each missing pair
  for (std::size_t n = 0; n < ds.num_instances(); ++n) {
    const auto obs = ds.annotations_of(n);
    const bool train = ds.splits()[n] == Split::Train;
    std::size_t j = 0;
    for (std::size_t a = 0; a < r; ++a) {
      if (j < obs.size() && obs[j].annotator == a) {
        rows.push_back({obs[j], true});
        ++j;
      } else if (train) {
        slot.push_back(rows.size());
        rows.push_back({Annotation{n, a, 0}, false});
        miss_inst.push_back(n);
        miss_ann.push_back(a);
      }
    }
  }
  if (miss_inst.empty()) return rows;
  const std::size_t p = miss_inst.size();
  const Tensor noise({p, k}, standard_normal(p * k, rng));
  const Tensor probs = generator_probabilities(
      bundle.generator, gather(ds.instances(), miss_inst), gather(ds.annotators(), miss_ann),
      gather(z_all, miss_inst), noise);
  for (std::size_t i = 0; i < p; ++i)
    rows[slot[i]].first.label = sample_categorical(probs.row(i), rng);
  return rows;
}

}  // namespace

std::string export_augmented(const CrowdDataset& ds, const NetworkBundle& bundle,
                             std::uint64_t seed) {
  std::string out = "instance_id,annotator_id,label,authentic\n";
  for (const auto& [a, auth] : augmented_rows(ds, bundle, seed))
    out += std::to_string(a.instance) + ',' + std::to_string(a.annotator) + ',' +
           std::to_string(a.label) + ',' + (auth ? "1" : "0") + '\n';
  return out;
}

CrowdDataset augmented_dataset(const CrowdDataset& ds, const NetworkBundle& bundle,
                               std::uint64_t seed) {
  std::vector<Annotation> anns;
  for (const auto& [a, auth] : augmented_rows(ds, bundle, seed)) anns.push_back(a);
  return ds.with_annotations(std::move(anns));
}

}  // namespace crowding
