#pragma once

// CrowdInG training: crowd-layer pretraining, generator/discriminator
// pretraining, the per-epoch logging/selection/two-step update loop, and the
// DL-MV baseline.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowding/dataset.hpp"
#include "crowding/nets.hpp"
#include "crowding/objectives.hpp"
#include "crowding/optim.hpp"

namespace crowding {

enum class Variant { Full, CrowdG, NoInstance, NoAnnotator, RandomSelection };

std::string_view variant_name(Variant v);  // full, CrowdG, CrowdInG_U, CrowdInG_I, CrowdInG_R
Variant parse_variant(std::string_view s);

// Fixed: mu as given. Baseline: the running mean of delta. Grid: each
// multiplier of the running mean is tried per epoch and the best by
// validation accuracy kept.
enum class MuPolicy { Fixed, Baseline, Grid };

struct TrainConfig {
  double lambda = 0.5;
  double entropy_threshold = 0.5;  // on H(z_hat) / ln|C|
  MuPolicy mu_policy = MuPolicy::Baseline;
  double mu = 0.0;  // used by MuPolicy::Fixed
  // Grid candidates are multiples of the running mean of delta.
  std::vector<double> mu_grid = {0.0, 0.5, 1.0};

  double lr_pretrain = 3e-3;
  double lr_classifier = 3e-4;
  double lr_generator = 1e-3;
  double lr_discriminator = 1e-3;

  std::size_t inner_steps = 5;
  std::size_t pretrain_epochs = 60;      // crowd-layer classifier pretraining
  std::size_t gen_pretrain_epochs = 30;  // generator maximum likelihood
  std::size_t disc_pretrain_epochs = 20;  // D/Q rounds against the pretrained G
  std::size_t epochs = 40;
  std::size_t batch_size = 64;           // pretraining minibatch
  std::size_t max_grid_pairs = 100000;   // cap on logged (n, r) pairs per epoch

  double beta = 1e-4;  // discriminator output L2
  bool one_step = false;
  Variant variant = Variant::Full;

  NetworkConfig network;
  std::uint64_t seed = 1;
};

// Network configuration with the variant's input restrictions applied.
NetworkConfig effective_network(const TrainConfig& cfg);
// lambda after the variant (CrowdG forces 0).
double effective_lambda(const TrainConfig& cfg);

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 = after pretraining
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
  double validation_nll = 0.0;
  double value = 0.0;       // V on authentic vs selected generated
  double info = 0.0;        // L_I
  double disc_auc = 0.0;    // D: authentic vs all logged generated
  double disc_loss = 0.0;
  std::size_t clamps = 0;
  std::size_t logged = 0;
  std::size_t selected = 0;
  double selected_entropy = 0.0;  // mean entropy of selected generated pairs
  double logged_entropy = 0.0;    // mean entropy over all logged pairs
  std::size_t low_entropy_instances = 0;
  std::size_t high_entropy_instances = 0;
  double mu_multiplier = 0.0;
  double mu_generator = 0.0;
  double mu_classifier = 0.0;
  std::vector<std::string> warnings;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  std::string method;  // crowding, CrowdG, ..., dl-cl, dl-mv
  NetworkBundle bundle;  // best-validation classifier; G/D/Q from the same epoch
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// --------------------------------------------------------------- pretraining

// Crowd-layer training: softmax(z_hat T_r) against each observed label, T_r
// initialised to identity. Keeps the best-validation classifier (by accuracy,
// then NLL) when the dataset has a labelled validation split.
struct CrowdLayerResult {
  std::vector<Tensor> transforms;  // per annotator |C| x |C|
  std::vector<double> validation_curve;
  std::size_t best_epoch = 0;
};
CrowdLayerResult pretrain_dl_cl(const CrowdDataset& ds, const TrainConfig& cfg,
                                Classifier& classifier, Rng& rng);

// Supervised training on fixed per-instance labels (majority vote for DL-MV).
void train_supervised(const CrowdDataset& ds, std::span<const std::size_t> instances,
                      std::span<const std::size_t> labels, const TrainConfig& cfg,
                      Classifier& classifier, Rng& rng);

// Maximum likelihood of the observed annotations under G given the frozen
// classifier's z_hat and fresh noise.
void pretrain_generator(const CrowdDataset& ds, const TrainConfig& cfg, NetworkBundle& bundle,
                        Rng& rng);
void pretrain_gen_disc(const CrowdDataset& ds, const TrainConfig& cfg, NetworkBundle& bundle,
                       Rng& rng);

// ----------------------------------------------------------------- selection

// For each annotator r, draws min(authentic_counts[r], available) pairs
// without replacement with probability proportional to 1 / max(H, 1e-6)
// (uniform when `uniform`). Returns indices into the pair arrays, sorted.
std::vector<std::size_t> select_for_discriminator(std::span<const double> entropies,
                                                  std::span<const std::size_t> pair_annotator,
                                                  std::span<const std::size_t> authentic_counts,
                                                  bool uniform, Rng& rng);

inline constexpr double kSelectionEntropyFloor = 1e-6;

// --------------------------------------------------------------- epoch loop

// Logged grid of one epoch: one generated annotation per (n, r) pair under
// the snapshot policy G_0.
struct LoggedGrid {
  std::vector<LoggedSample> samples;
  Tensor z_hat;       // per pair, snapshot classifier output (P x |C|)
  Tensor noise;       // per pair, P x k
  Tensor generated;   // per pair, G_0 distribution (P x |C|)
  std::vector<double> entropies;  // of `generated`
  std::vector<double> instance_entropy;  // normalised classifier entropy per instance
};

class CrowdTrainer {
 public:
  CrowdTrainer(const CrowdDataset& ds, TrainConfig cfg, NetworkBundle bundle);

  // One full epoch (steps 1-7). Returns the recorded metrics.
  EpochMetrics run_epoch();
  // Metrics of the current state without training (used for epoch 0).
  EpochMetrics evaluate(std::size_t epoch) const;

  LoggedGrid log_grid();
  // D/Q rounds against the current generator (log, select, inner steps).
  void pretrain_discriminator(std::size_t rounds);
  const NetworkBundle& bundle() const { return bundle_; }
  NetworkBundle& bundle() { return bundle_; }
  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }

  // Observed training triplets as pair arrays.
  const std::vector<LoggedSample>& authentic() const { return authentic_; }

  // Test hooks: parameter digests observed around the G and C update steps.
  struct FreezeTrace {
    std::uint64_t classifier_before_g = 0, classifier_after_g = 0;
    std::uint64_t generator_before_c = 0, generator_after_c = 0;
    bool generator_updated = false, classifier_updated = false;
  };
  const FreezeTrace& last_freeze_trace() const { return trace_; }
  const LoggedGrid& last_grid() const { return grid_; }

 private:
  struct Deltas {
    std::vector<double> full;        // log(1 - D) - lambda log Q
    std::vector<double> adversarial; // log(1 - D)
    std::vector<double> d_scores;
    std::vector<double> q_logprobs;
  };
  Deltas deltas(const LoggedGrid& grid, ClampStats* clamps) const;

  void train_discriminator(const LoggedGrid& grid, std::span<const std::size_t> selected,
                           std::size_t steps, EpochMetrics* m);
  void update_generator(const LoggedGrid& grid, std::span<const std::size_t> subset,
                        std::span<const double> delta, double mu);
  void update_classifier(const LoggedGrid& grid, std::span<const std::size_t> subset,
                         std::span<const double> delta, double mu);
  void update_joint(const LoggedGrid& grid, std::span<const double> delta, double mu);

  const CrowdDataset& ds_;
  TrainConfig cfg_;
  NetworkBundle bundle_;
  Adam opt_classifier_;
  Adam opt_generator_;
  Adam opt_discriminator_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<LoggedSample> authentic_;
  std::vector<std::size_t> authentic_counts_;
  std::vector<std::size_t> train_instances_;
  double running_delta_g_ = 0.0, running_delta_c_ = 0.0;
  std::size_t running_count_ = 0;
  FreezeTrace trace_;
  LoggedGrid grid_;
};

// Pretraining + cfg.epochs epochs; returns the best-validation bundle.
TrainResult train_crowding(const CrowdDataset& ds, const TrainConfig& cfg);
// Crowd-layer baseline (the CrowdInG starting point).
TrainResult train_dl_cl(const CrowdDataset& ds, const TrainConfig& cfg);
TrainResult train_dl_mv(const CrowdDataset& ds, const TrainConfig& cfg);

// Per-parameter-set digest (FNV-1a over the raw bytes).
std::uint64_t parameter_digest(std::span<const ParamPtr> params);

// Observed annotations plus one generated label for every missing train
// (n, r) pair, as CSV with columns instance_id,annotator_id,label,authentic.
std::string export_augmented(const CrowdDataset& ds, const NetworkBundle& bundle,
                             std::uint64_t seed);
// Dataset whose annotations are the observed plus generated ones.
CrowdDataset augmented_dataset(const CrowdDataset& ds, const NetworkBundle& bundle,
                               std::uint64_t seed);

}  // namespace crowding
