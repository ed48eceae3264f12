#pragma once

// Small networks and datasets that keep trainer-level tests fast.

#include <cstdint>

#include "crowding/synth.hpp"
#include "crowding/trainer.hpp"

namespace crowding::testing {

inline NetworkConfig small_network() {
  NetworkConfig n;
  n.classifier_hidden = 16;
  n.generator_hidden1 = 8;
  n.generator_hidden2 = 16;
  n.noise_dim = 4;
  n.embed_dim = 6;
  n.class_embed_dim = 4;
  n.aux_hidden1 = 8;
  n.aux_hidden2 = 16;
  return n;
}

inline TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.network = small_network();
  c.pretrain_epochs = 10;
  c.gen_pretrain_epochs = 5;
  c.disc_pretrain_epochs = 2;
  c.epochs = 3;
  c.inner_steps = 2;
  c.seed = seed;
  return c;
}

inline SynthConfig small_synth(double s = 0.5) {
  SynthConfig sc;
  sc.num_classes = 3;
  sc.num_train = 60;
  sc.num_annotators = 5;
  sc.annotations_per_instance = 2;
  sc.difficulty_sensitivity = s;
  sc.reliability_min = 0.6;
  sc.reliability_max = 0.9;
  return sc;
}

inline CrowdDataset small_dataset(std::uint64_t seed, double s = 0.5) {
  return synthesize_dataset(small_synth(s), seed);
}

}  // namespace crowding::testing
