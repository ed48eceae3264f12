#pragma once

// Classifier C, generator G, discriminator D (bilinear, optional label
// correlation aggregation) and auxiliary network Q, built on Graph.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crowding/dataset.hpp"
#include "crowding/graph.hpp"
#include "crowding/numerics.hpp"

namespace crowding {

struct Dense {
  ParamPtr weight;  // in x out
  ParamPtr bias;    // 1 x out

  Var operator()(Graph& g, Var x) const;
  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
};

// Glorot-uniform weights and zero bias; zero_weights gives an all-zero layer.
Dense make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                 bool zero_weights = false);
void glorot_fill(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct NetDims {
  std::size_t instance_dim = 0;
  std::size_t annotator_dim = 0;
  std::size_t num_classes = 0;
};

struct NetworkConfig {
  std::size_t classifier_hidden = 128;
  double dropout = 0.5;
  std::size_t generator_hidden1 = 64;
  std::size_t generator_hidden2 = 128;
  std::size_t noise_dim = 8;
  bool generator_uses_instance = true;
  bool generator_uses_annotator = true;
  std::size_t embed_dim = 32;        // discriminator encoder width m
  std::size_t class_embed_dim = 16;  // width of the class embedding fed to Q
  std::size_t aux_hidden1 = 64;
  std::size_t aux_hidden2 = 128;
  bool lca = true;
  // Start output layers at zero (uniform outputs); for tests.
  bool zero_output_layers = false;
};

class Classifier {
 public:
  Classifier(const NetDims& dims, const NetworkConfig& cfg, Rng rng);

  // Logits (B x |C|). In train mode a fresh dropout mask is drawn from rng;
  // `mask` (B x hidden, already scaled) overrides it when non-null.
  Var logits(Graph& g, Var x, bool train_mode, Rng* rng = nullptr,
             const Tensor* mask = nullptr) const;
  Var probabilities(Graph& g, Var x, bool train_mode, Rng* rng = nullptr) const;

  // Eval-mode class probabilities for every row of x.
  Tensor predict(const Tensor& x) const;

  std::vector<ParamPtr> params() const;
  std::size_t hidden() const { return hidden_.out(); }
  double dropout() const { return dropout_; }
  Tensor dropout_mask(std::size_t batch, Rng& rng) const;

 private:
  NetDims dims_;
  Dense hidden_;
  Dense output_;
  double dropout_;
};

class Generator {
 public:
  Generator(const NetDims& dims, const NetworkConfig& cfg, Rng rng);

  // Logits over annotation labels from [x; e; z_hat; noise]; x or e are left
  // out when the corresponding use flag is off.
  Var logits(Graph& g, Var x, Var e, Var z_hat, Var noise) const;
  Var probabilities(Graph& g, Var x, Var e, Var z_hat, Var noise) const;

  std::vector<ParamPtr> params() const;
  std::size_t noise_dim() const { return noise_dim_; }
  std::size_t input_dim() const { return layer1_.in(); }
  bool uses_instance() const { return use_instance_; }
  bool uses_annotator() const { return use_annotator_; }

 private:
  NetDims dims_;
  std::size_t noise_dim_;
  bool use_instance_;
  bool use_annotator_;
  Dense layer1_;
  Dense layer2_;
  Dense output_;
};

// Annotator/instance encoders, per-class bilinear matrices and the label
// correlation mixing; one object shared by D and Q.
class DiscriminatorCore {
 public:
  DiscriminatorCore(const NetDims& dims, const NetworkConfig& cfg, Rng rng);

  struct Encoding {
    Var annotator;  // u: B x m
    Var instance;   // v: B x m
    Var classes;    // stacked class matrices, (|C|*m) x m
  };

  Encoding encode(Graph& g, Var x, Var e) const;
  // Class matrices after mixing: P * M * W with LCA, M otherwise.
  Var class_matrices(Graph& g) const;

  void set_adjacency(const CoocAdjacency& adj);
  bool has_adjacency() const { return !propagation_.empty(); }
  const Tensor& propagation() const { return propagation_; }
  bool lca() const { return lca_; }
  void set_lca(bool on) { lca_ = on; }
  std::size_t embed_dim() const { return embed_dim_; }

  Dense annotator_encoder;
  Dense instance_encoder;
  ParamPtr bilinear;  // |C| x (m*m), row c = M_c flattened row-major
  ParamPtr mixing;    // W: m x m

  std::vector<ParamPtr> params() const;

 private:
  NetDims dims_;
  std::size_t embed_dim_;
  bool lca_;
  Tensor propagation_;
};

class Discriminator {
 public:
  explicit Discriminator(std::shared_ptr<DiscriminatorCore> core) : core_(std::move(core)) {}

  // Pre-sigmoid bilinear scores u^T Mhat_y v (B x 1).
  Var scores(Graph& g, const DiscriminatorCore::Encoding& enc,
             std::span<const std::size_t> labels) const;
  Var probabilities(Graph& g, const DiscriminatorCore::Encoding& enc,
                    std::span<const std::size_t> labels) const;

  DiscriminatorCore& core() { return *core_; }
  const DiscriminatorCore& core() const { return *core_; }
  const std::shared_ptr<DiscriminatorCore>& shared_core() const { return core_; }
  std::vector<ParamPtr> params() const { return core_->params(); }

 private:
  std::shared_ptr<DiscriminatorCore> core_;
};

class AuxNetwork {
 public:
  AuxNetwork(std::shared_ptr<DiscriminatorCore> core, const NetDims& dims,
             const NetworkConfig& cfg, Rng rng);

  // Logits over classifier classes given the triplet's label.
  Var logits(Graph& g, const DiscriminatorCore::Encoding& enc,
             std::span<const std::size_t> labels) const;

  // Q's own parameters (the encoders belong to the discriminator).
  std::vector<ParamPtr> params() const;
  const DiscriminatorCore& core() const { return *core_; }

 private:
  std::shared_ptr<DiscriminatorCore> core_;
  Dense class_embed_;
  Dense layer1_;
  Dense layer2_;
  Dense output_;
};

struct NetworkBundle {
  NetworkBundle(const NetDims& dims, const NetworkConfig& cfg, std::uint64_t seed);

  NetDims dims;
  NetworkConfig config;
  Classifier classifier;
  Generator generator;
  std::shared_ptr<DiscriminatorCore> core;
  Discriminator discriminator;
  AuxNetwork aux;

  // Every parameter exactly once, in a stable order.
  std::vector<ParamPtr> all_params() const;
  std::vector<ParamPtr> discriminative_params() const;

  // Deep copy with the D/Q sharing preserved inside the copy.
  NetworkBundle clone() const;
  void copy_values_from(const NetworkBundle& other);
};

NetDims dims_of(const CrowdDataset& ds);

// Single-example convenience wrappers.
std::vector<double> classify(const Classifier& c, std::span<const double> x,
                             bool train_mode = false, Rng* rng = nullptr);
std::vector<double> generate_distribution(const Generator& gen, std::span<const double> x,
                                          std::span<const double> e,
                                          std::span<const double> z_hat,
                                          std::span<const double> noise);
double discriminate(const Discriminator& d, std::span<const double> x,
                    std::span<const double> e, std::size_t label);
std::vector<double> aux_posterior(const AuxNetwork& q, std::span<const double> x,
                                  std::span<const double> e, std::size_t label);

// Parameter checkpoint: <stem>.bin holds raw little-endian doubles back to
// back; <stem>.manifest lists architecture keys and one line per array:
// "param <name> <rows>x<cols> <byte offset>".
void save_checkpoint(const NetworkBundle& bundle, const std::filesystem::path& stem);
NetworkBundle load_checkpoint(const std::filesystem::path& stem);

// Row vector tensor from a span.
Tensor row_tensor(std::span<const double> v);

}  // namespace crowding
