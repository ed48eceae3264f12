#include "crowding/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace crowding {

namespace {

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": expected dimension " +
                                std::to_string(want) + ", got " + std::to_string(got));
}

}  // namespace

Tensor row_tensor(std::span<const double> v) {
  return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

void glorot_fill(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : w.values()) v = dist(rng);
}

Dense make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                 bool zero_weights) {
  Tensor w = Tensor::matrix(in, out);
  if (!zero_weights) glorot_fill(w, in, out, rng);
  return Dense{make_param(name + ".weight", std::move(w)),
               make_param(name + ".bias", Tensor::matrix(1, out))};
}

Var Dense::operator()(Graph& g, Var x) const {
  return g.add_bias(g.matmul(x, g.param(weight)), g.param(bias));
}

// ---------------------------------------------------------------- classifier

Classifier::Classifier(const NetDims& dims, const NetworkConfig& cfg, Rng rng)
    : dims_(dims),
      hidden_(make_dense("classifier.hidden", dims.instance_dim, cfg.classifier_hidden, rng)),
      output_(make_dense("classifier.output", cfg.classifier_hidden, dims.num_classes, rng,
                         cfg.zero_output_layers)),
      dropout_(cfg.dropout) {
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw std::invalid_argument("dropout must lie in [0, 1)");
}

Tensor Classifier::dropout_mask(std::size_t batch, Rng& rng) const {
  Tensor mask = Tensor::matrix(batch, hidden_.out());
  std::bernoulli_distribution keep(1.0 - dropout_);
  const double scale = 1.0 / (1.0 - dropout_);
  for (double& m : mask.values()) m = keep(rng) ? scale : 0.0;
  return mask;
}

Var Classifier::logits(Graph& g, Var x, bool train_mode, Rng* rng, const Tensor* mask) const {
  require_dim(g.value(x).cols(), dims_.instance_dim, "classifier input");
  Var h = g.relu(hidden_(g, x));
  if (train_mode && dropout_ > 0.0) {
    if (mask) {
      h = g.mul(h, g.constant(*mask));
    } else {
      if (!rng) throw std::invalid_argument("classifier train mode needs an rng for dropout");
      h = g.mul(h, g.constant(dropout_mask(g.value(x).rows(), *rng)));
    }
  }
  return output_(g, h);
}

Var Classifier::probabilities(Graph& g, Var x, bool train_mode, Rng* rng) const {
  return g.softmax_rows(logits(g, x, train_mode, rng));
}

Tensor Classifier::predict(const Tensor& x) const {
  Graph g(false);
  return g.value(probabilities(g, g.constant(x), false));
}

std::vector<ParamPtr> Classifier::params() const {
  return {hidden_.weight, hidden_.bias, output_.weight, output_.bias};
}

// ----------------------------------------------------------------- generator

namespace {

std::size_t generator_input(const NetDims& d, const NetworkConfig& c) {
  return (c.generator_uses_instance ? d.instance_dim : 0) +
         (c.generator_uses_annotator ? d.annotator_dim : 0) + d.num_classes + c.noise_dim;
}

}  // namespace

Generator::Generator(const NetDims& dims, const NetworkConfig& cfg, Rng rng)
    : dims_(dims),
      noise_dim_(cfg.noise_dim),
      use_instance_(cfg.generator_uses_instance),
      use_annotator_(cfg.generator_uses_annotator),
      layer1_(make_dense("generator.layer1", generator_input(dims, cfg), cfg.generator_hidden1, rng)),
      layer2_(make_dense("generator.layer2", cfg.generator_hidden1, cfg.generator_hidden2, rng)),
      output_(make_dense("generator.output", cfg.generator_hidden2, dims.num_classes, rng,
                         cfg.zero_output_layers)) {}

Var Generator::logits(Graph& g, Var x, Var e, Var z_hat, Var noise) const {
  require_dim(g.value(z_hat).cols(), dims_.num_classes, "generator class input");
  require_dim(g.value(noise).cols(), noise_dim_, "generator noise");
  std::vector<Var> parts;
  if (use_instance_) {
    require_dim(g.value(x).cols(), dims_.instance_dim, "generator instance input");
    parts.push_back(x);
  }
  if (use_annotator_) {
    require_dim(g.value(e).cols(), dims_.annotator_dim, "generator annotator input");
    parts.push_back(e);
  }
  parts.push_back(z_hat);
  parts.push_back(noise);
  Var in = g.concat_cols(parts);
  Var h1 = g.relu(layer1_(g, in));
  Var h2 = g.relu(layer2_(g, h1));
  return output_(g, h2);
}

Var Generator::probabilities(Graph& g, Var x, Var e, Var z_hat, Var noise) const {
  return g.softmax_rows(logits(g, x, e, z_hat, noise));
}

std::vector<ParamPtr> Generator::params() const {
  return {layer1_.weight, layer1_.bias, layer2_.weight, layer2_.bias, output_.weight,
          output_.bias};
}

// ------------------------------------------------------------- discriminator

DiscriminatorCore::DiscriminatorCore(const NetDims& dims, const NetworkConfig& cfg, Rng rng)
    : annotator_encoder(make_dense("discriminator.annotator_encoder", dims.annotator_dim,
                                   cfg.embed_dim, rng)),
      instance_encoder(make_dense("discriminator.instance_encoder", dims.instance_dim,
                                  cfg.embed_dim, rng)),
      dims_(dims),
      embed_dim_(cfg.embed_dim),
      lca_(cfg.lca) {
  const std::size_t m = cfg.embed_dim;
  Tensor stack = Tensor::matrix(dims.num_classes, m * m);
  if (!cfg.zero_output_layers) glorot_fill(stack, m, m, rng);
  bilinear = make_param("discriminator.bilinear", std::move(stack));
  Tensor w = Tensor::matrix(m, m);
  glorot_fill(w, m, m, rng);
  mixing = make_param("discriminator.mixing", std::move(w));
}

void DiscriminatorCore::set_adjacency(const CoocAdjacency& adj) {
  if (adj.propagation.rows() != dims_.num_classes || adj.propagation.cols() != dims_.num_classes)
    throw std::invalid_argument("adjacency size does not match the number of classes");
  propagation_ = adj.propagation;
}

Var DiscriminatorCore::class_matrices(Graph& g) const {
  const std::size_t c = dims_.num_classes, m = embed_dim_;
  Var stack = g.param(bilinear);
  if (!lca_) return g.reshape(stack, c * m, m);
  if (propagation_.empty())
    throw std::logic_error("label correlation aggregation enabled without an adjacency");
  Var mixed = g.matmul(g.constant(propagation_), stack);  // P * M along the class axis
  return g.matmul(g.reshape(mixed, c * m, m), g.param(mixing));
}

DiscriminatorCore::Encoding DiscriminatorCore::encode(Graph& g, Var x, Var e) const {
  require_dim(g.value(x).cols(), dims_.instance_dim, "discriminator instance input");
  require_dim(g.value(e).cols(), dims_.annotator_dim, "discriminator annotator input");
  return {annotator_encoder(g, e), instance_encoder(g, x), class_matrices(g)};
}

std::vector<ParamPtr> DiscriminatorCore::params() const {
  return {annotator_encoder.weight, annotator_encoder.bias, instance_encoder.weight,
          instance_encoder.bias, bilinear, mixing};
}

Var Discriminator::scores(Graph& g, const DiscriminatorCore::Encoding& enc,
                          std::span<const std::size_t> labels) const {
  return g.bilinear_select(enc.annotator, enc.classes, enc.instance, labels);
}

Var Discriminator::probabilities(Graph& g, const DiscriminatorCore::Encoding& enc,
                                 std::span<const std::size_t> labels) const {
  return g.sigmoid(scores(g, enc, labels));
}

// ----------------------------------------------------------------- auxiliary

AuxNetwork::AuxNetwork(std::shared_ptr<DiscriminatorCore> core, const NetDims& dims,
                       const NetworkConfig& cfg, Rng rng)
    : core_(std::move(core)),
      class_embed_(make_dense("aux.class_embed", cfg.embed_dim * cfg.embed_dim,
                              cfg.class_embed_dim, rng)),
      layer1_(make_dense("aux.layer1", 2 * cfg.embed_dim + cfg.class_embed_dim,
                         cfg.aux_hidden1, rng)),
      layer2_(make_dense("aux.layer2", cfg.aux_hidden1, cfg.aux_hidden2, rng)),
      output_(make_dense("aux.output", cfg.aux_hidden2, dims.num_classes, rng,
                         cfg.zero_output_layers)) {}

Var AuxNetwork::logits(Graph& g, const DiscriminatorCore::Encoding& enc,
                       std::span<const std::size_t> labels) const {
  const std::size_t m = core_->embed_dim();
  const std::size_t c = g.value(enc.classes).rows() / m;
  Var flat = g.reshape(enc.classes, c, m * m);
  Var per_class = class_embed_(g, flat);
  Var emb = g.gather_rows(per_class, labels);
  const Var parts[] = {enc.instance, enc.annotator, emb};
  Var h1 = g.relu(layer1_(g, g.concat_cols(parts)));
  Var h2 = g.relu(layer2_(g, h1));
  return output_(g, h2);
}

std::vector<ParamPtr> AuxNetwork::params() const {
  return {class_embed_.weight, class_embed_.bias, layer1_.weight, layer1_.bias,
          layer2_.weight, layer2_.bias, output_.weight, output_.bias};
}

// -------------------------------------------------------------------- bundle

namespace {

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace

NetworkBundle::NetworkBundle(const NetDims& d, const NetworkConfig& cfg, std::uint64_t seed)
    : dims(d),
      config(cfg),
      classifier(d, cfg, seeded(seed, 1)),
      generator(d, cfg, seeded(seed, 2)),
      core(std::make_shared<DiscriminatorCore>(d, cfg, seeded(seed, 3))),
      discriminator(core),
      aux(core, d, cfg, seeded(seed, 4)) {
  if (d.num_classes < 2 || d.instance_dim == 0 || d.annotator_dim == 0)
    throw std::invalid_argument("network dimensions must be positive with >= 2 classes");
}

std::vector<ParamPtr> NetworkBundle::all_params() const {
  std::vector<ParamPtr> out;
  std::set<const Param*> seen;
  auto add = [&](const std::vector<ParamPtr>& ps) {
    for (const auto& p : ps)
      if (seen.insert(p.get()).second) out.push_back(p);
  };
  add(classifier.params());
  add(generator.params());
  add(discriminator.params());
  add(aux.params());
  return out;
}

std::vector<ParamPtr> NetworkBundle::discriminative_params() const {
  auto out = discriminator.params();
  for (const auto& p : aux.params()) out.push_back(p);
  return out;
}

void NetworkBundle::copy_values_from(const NetworkBundle& other) {
  const auto dst = all_params();
  const auto src = other.all_params();
  if (dst.size() != src.size()) throw std::invalid_argument("bundle layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i]->name || !dst[i]->value.same_shape(src[i]->value))
      throw std::invalid_argument("bundle layouts differ at " + dst[i]->name);
    dst[i]->value = src[i]->value;
    dst[i]->requires_grad = src[i]->requires_grad;
  }
  if (other.core->has_adjacency()) {
    CoocAdjacency adj;
    adj.propagation = other.core->propagation();
    core->set_adjacency(adj);
  }
  core->set_lca(other.core->lca());
}

NetworkBundle NetworkBundle::clone() const {
  NetworkBundle copy(dims, config, 0);
  copy.copy_values_from(*this);
  return copy;
}

NetDims dims_of(const CrowdDataset& ds) {
  return {ds.instance_dim(), ds.annotator_dim(), ds.num_classes()};
}

// ------------------------------------------------------- single-example API

std::vector<double> classify(const Classifier& c, std::span<const double> x, bool train_mode,
                             Rng* rng) {
  Graph g(false);
  Var p = c.probabilities(g, g.constant(row_tensor(x)), train_mode, rng);
  const auto v = g.value(p).values();
  return {v.begin(), v.end()};
}

std::vector<double> generate_distribution(const Generator& gen, std::span<const double> x,
                                          std::span<const double> e,
                                          std::span<const double> z_hat,
                                          std::span<const double> noise) {
  Graph g(false);
  Var p = gen.probabilities(g, g.constant(row_tensor(x)), g.constant(row_tensor(e)),
                            g.constant(row_tensor(z_hat)), g.constant(row_tensor(noise)));
  const auto v = g.value(p).values();
  return {v.begin(), v.end()};
}

double discriminate(const Discriminator& d, std::span<const double> x,
                    std::span<const double> e, std::size_t label) {
  Graph g(false);
  auto enc = d.core().encode(g, g.constant(row_tensor(x)), g.constant(row_tensor(e)));
  const std::size_t labels[] = {label};
  return g.value(d.probabilities(g, enc, labels))[0];
}

std::vector<double> aux_posterior(const AuxNetwork& q, std::span<const double> x,
                                  std::span<const double> e, std::size_t label) {
  Graph g(false);
  auto enc = q.core().encode(g, g.constant(row_tensor(x)), g.constant(row_tensor(e)));
  const std::size_t labels[] = {label};
  Var p = g.softmax_rows(q.logits(g, enc, labels));
  const auto v = g.value(p).values();
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------- checkpoint

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void save_checkpoint(const NetworkBundle& b, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  std::ofstream man(with_ext(stem, ".manifest"), std::ios::binary);
  if (!bin || !man) throw std::runtime_error("cannot write checkpoint " + stem.string());
  const auto& c = b.config;
  man << "crowding-checkpoint 1\n"
      << "instance_dim " << b.dims.instance_dim << '\n'
      << "annotator_dim " << b.dims.annotator_dim << '\n'
      << "num_classes " << b.dims.num_classes << '\n'
      << "classifier_hidden " << c.classifier_hidden << '\n'
      << "dropout " << c.dropout << '\n'
      << "generator_hidden1 " << c.generator_hidden1 << '\n'
      << "generator_hidden2 " << c.generator_hidden2 << '\n'
      << "noise_dim " << c.noise_dim << '\n'
      << "generator_uses_instance " << c.generator_uses_instance << '\n'
      << "generator_uses_annotator " << c.generator_uses_annotator << '\n'
      << "embed_dim " << c.embed_dim << '\n'
      << "class_embed_dim " << c.class_embed_dim << '\n'
      << "aux_hidden1 " << c.aux_hidden1 << '\n'
      << "aux_hidden2 " << c.aux_hidden2 << '\n'
      << "lca " << b.core->lca() << '\n';
  std::uint64_t offset = 0;
  auto emit = [&](const char* kind, const std::string& name, const Tensor& t) {
    man << kind << ' ' << name << ' ' << t.rows() << 'x' << t.cols() << ' ' << offset << '\n';
    bin.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    offset += t.size() * sizeof(double);
  };
  for (const auto& p : b.all_params()) emit("param", p->name, p->value);
  if (b.core->has_adjacency()) emit("array", "adjacency.propagation", b.core->propagation());
  if (!bin || !man) throw std::runtime_error("short write on checkpoint " + stem.string());
}

NetworkBundle load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream man(with_ext(stem, ".manifest"), std::ios::binary);
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!man || !bin) throw std::runtime_error("cannot open checkpoint " + stem.string());
  std::string magic;
  std::getline(man, magic);
  if (magic != "crowding-checkpoint 1")
    throw std::runtime_error("not a checkpoint manifest: " + stem.string());

  struct Entry {
    std::string name;
    std::size_t rows, cols;
    std::uint64_t offset;
  };
  std::map<std::string, std::string> keys;
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "param" || head == "array") {
      Entry e;
      std::string shape;
      ls >> e.name >> shape >> e.offset;
      const auto x = shape.find('x');
      if (x == std::string::npos) throw std::runtime_error("bad shape in manifest: " + line);
      e.rows = std::stoull(shape.substr(0, x));
      e.cols = std::stoull(shape.substr(x + 1));
      entries.push_back(e);
    } else {
      std::string value;
      ls >> value;
      keys[head] = value;
    }
  }
  auto num = [&](const char* k) -> std::size_t {
    auto it = keys.find(k);
    if (it == keys.end()) throw std::runtime_error(std::string("manifest lacks ") + k);
    return std::stoull(it->second);
  };
  NetDims dims{num("instance_dim"), num("annotator_dim"), num("num_classes")};
  NetworkConfig cfg;
  cfg.classifier_hidden = num("classifier_hidden");
  cfg.dropout = std::stod(keys.at("dropout"));
  cfg.generator_hidden1 = num("generator_hidden1");
  cfg.generator_hidden2 = num("generator_hidden2");
  cfg.noise_dim = num("noise_dim");
  cfg.generator_uses_instance = num("generator_uses_instance") != 0;
  cfg.generator_uses_annotator = num("generator_uses_annotator") != 0;
  cfg.embed_dim = num("embed_dim");
  cfg.class_embed_dim = num("class_embed_dim");
  cfg.aux_hidden1 = num("aux_hidden1");
  cfg.aux_hidden2 = num("aux_hidden2");
  cfg.lca = num("lca") != 0;
  NetworkBundle b(dims, cfg, 0);

  std::map<std::string, ParamPtr> by_name;
  for (const auto& p : b.all_params()) by_name[p->name] = p;
  auto read_into = [&](const Entry& e, Tensor& t) {
    if (t.rows() != e.rows || t.cols() != e.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + e.name);
    bin.seekg(static_cast<std::streamoff>(e.offset));
    bin.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("checkpoint data truncated at " + e.name);
  };
  std::size_t loaded = 0;
  for (const auto& e : entries) {
    if (e.name == "adjacency.propagation") {
      CoocAdjacency adj;
      adj.propagation = Tensor::matrix(e.rows, e.cols);
      read_into(e, adj.propagation);
      b.core->set_adjacency(adj);
      continue;
    }
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw std::runtime_error("unknown checkpoint array " + e.name);
    read_into(e, it->second->value);
    ++loaded;
  }
  if (loaded != by_name.size()) throw std::runtime_error("checkpoint misses parameters");
  return b;
}

}  // namespace crowding
