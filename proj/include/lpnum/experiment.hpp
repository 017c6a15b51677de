#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "lpnum/data.hpp"
#include "lpnum/trainer.hpp"

namespace lpnum {

// Everything a run needs, mirroring the CLI flags one to one. A JSON config
// file carries the same keys; unknown keys are errors.
struct ExperimentConfig {
  std::string scheme = "fp32-baseline";
  std::map<std::string, std::string> format_overrides;  // class -> format
  std::string rounding = "stochastic";
  std::string kernel = "auto";
  uint64_t seed = 1;
  int epochs = 40;
  int batch_size = 100;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.004;
  double dropout_keep = 0.6;
  double init_gain_conv = 0.55;
  double init_std_fc = 0.005;
  bool pot_hyper = false;
  double target_accuracy = 0.70;

  // auto: CIFAR-10 when a data dir resolves, synthetic otherwise.
  std::string data = "auto";
  std::string data_dir;  // falls back to $LPNUM_DATA_DIR
  int64_t train_size = 0;  // 0 keeps the full set
  int64_t test_size = 0;
  double synth_separation = 0.08;
  uint64_t synth_seed = 9001;
  int64_t synth_train = 50000;
  int64_t synth_test = 10000;

  std::string metrics_path;
  std::string summary_csv;  // appended, header written when absent
  std::string checkpoint_path;
  int checkpoint_every = 0;
  std::string resume_path;
  std::string dump_params;  // prefix for post-run parameter dumps
  bool histograms = false;
};

ExperimentConfig experiment_from_json_file(const std::string& path);

SchemeConfig build_scheme(const std::string& name,
                          const std::map<std::string, std::string>& overrides);

struct ResolvedData {
  Dataset train;
  Dataset test;
};
ResolvedData resolve_data(const ExperimentConfig& cfg);

struct ExperimentResult {
  TrainResult train;
  std::string train_source;
  std::string test_source;
  std::string scheme_name;
};

// Runs one experiment end to end: data, network (fresh or resumed), training,
// metrics, summary row, optional parameter dumps. Progress goes to `log`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log);

}  // namespace lpnum
