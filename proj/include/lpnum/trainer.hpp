#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpnum/data.hpp"
#include "lpnum/io.hpp"
#include "lpnum/net.hpp"

namespace lpnum {

struct TrainConfig {
  TrainHyper hyper;
  int batch_size = 100;
  int epochs = 40;
  Rounding rounding = Rounding::Stochastic;
  uint64_t seed = 1;
  double target_accuracy = 0.70;
  bool emit_histograms = false;
  int checkpoint_every = 0;      // epochs between saves; 0 disables
  std::string checkpoint_path;   // overwritten on each save
  // Rounds the optimizer constants to powers of two (off by default).
  bool pot_hyper = false;
  int start_epoch = 0;           // resume point
  uint64_t start_iter = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  int epochs_to_target = -1;
  std::vector<PhaseTally> tallies;  // per layer, accumulated over training
};

// Deterministic inference accuracy over the whole set.
double evaluate(Network& net, const Dataset& test, int batch);

// Epoch metrics stream to `mw` when given; the caller owns run-level lines.
TrainResult train(Network& net, const Dataset& train_set,
                  const Dataset& test_set, const TrainConfig& cfg,
                  MetricsWriter* mw = nullptr);

double pot_round(double v);

}  // namespace lpnum
