#include "lpnum/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "lpnum/io.hpp"

namespace lpnum {

namespace {

using ordered_json = nlohmann::ordered_json;

Dataset slice_dataset(const Dataset& d, int64_t start, int64_t count,
                      const std::string& source) {
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.num_classes = d.num_classes;
  out.source = source;
  int64_t elems = d.image_elems();
  out.pixels.assign(d.pixels.begin() + start * elems,
                    d.pixels.begin() + (start + count) * elems);
  out.labels.assign(d.labels.begin() + start, d.labels.begin() + start + count);
  return out;
}

ParamClass class_by_name(const std::string& s) {
  for (int c = 0; c < kNumClasses; ++c)
    if (s == to_string(static_cast<ParamClass>(c)))
      return static_cast<ParamClass>(c);
  throw std::invalid_argument("unknown parameter class '" + s + "'");
}

}  // namespace

SchemeConfig build_scheme(const std::string& name,
                          const std::map<std::string, std::string>& overrides) {
  SchemeConfig s = SchemeConfig::preset(name);
  if (!overrides.empty()) {
    for (const auto& [cls, fmtspec] : overrides)
      s.at(class_by_name(cls)) = parse_class_format(fmtspec);
    s.name = name + "*";
  }
  return s;
}

ResolvedData resolve_data(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::string dir = cfg.data_dir;
  if (dir.empty())
    if (const char* env = std::getenv("LPNUM_DATA_DIR")) dir = env;

  bool have_cifar = !dir.empty() && fs::exists(fs::path(dir) / "data_batch_1.bin");
  bool want_cifar = cfg.data == "cifar10" || (cfg.data == "auto" && have_cifar);
  if (cfg.data != "auto" && cfg.data != "cifar10" && cfg.data != "synthetic")
    throw std::invalid_argument("data must be auto|cifar10|synthetic, got '" +
                                cfg.data + "'");
  if (cfg.data == "cifar10" && !have_cifar)
    throw std::runtime_error(
        "cifar10 requested but no data_batch_1.bin under '" + dir +
        "' (set --data-dir or LPNUM_DATA_DIR)");

  ResolvedData out;
  if (want_cifar) {
    out.train = load_cifar10_dir(dir, true);
    out.test = load_cifar10_dir(dir, false);
    if (cfg.train_size > 0) out.train = stratified_subset(out.train, cfg.train_size);
    if (cfg.test_size > 0) out.test = stratified_subset(out.test, cfg.test_size);
    return out;
  }

  int64_t ntr = cfg.train_size > 0 ? cfg.train_size : cfg.synth_train;
  int64_t nte = cfg.test_size > 0 ? cfg.test_size : cfg.synth_test;
  // One draw for both splits so they share class prototypes but no images.
  Dataset all = synthesize_dataset(ntr + nte, 10, 3, 32, 32,
                                   cfg.synth_separation, cfg.synth_seed);
  char buf[96];
  snprintf(buf, sizeof buf, "synthetic(sep=%g,seed=%llu)", cfg.synth_separation,
           static_cast<unsigned long long>(cfg.synth_seed));
  out.train = slice_dataset(all, 0, ntr, std::string(buf) + " train[" +
                                             std::to_string(ntr) + "]");
  out.test = slice_dataset(all, ntr, nte, std::string(buf) + " test[" +
                                              std::to_string(nte) + "]");
  return out;
}

ExperimentConfig experiment_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  ordered_json j;
  in >> j;
  if (!j.is_object()) throw std::runtime_error(path + ": config must be an object");

  ExperimentConfig cfg;
  for (const auto& [key, val] : j.items()) {
    if (key == "scheme") cfg.scheme = val.get<std::string>();
    else if (key == "format_overrides") {
      if (!val.is_object())
        throw std::runtime_error(path + ": format_overrides must be an object");
      for (const auto& [cls, fmtspec] : val.items())
        cfg.format_overrides[cls] = fmtspec.get<std::string>();
    }
    else if (key == "rounding") cfg.rounding = val.get<std::string>();
    else if (key == "kernel") cfg.kernel = val.get<std::string>();
    else if (key == "seed") cfg.seed = val.get<uint64_t>();
    else if (key == "epochs") cfg.epochs = val.get<int>();
    else if (key == "batch_size") cfg.batch_size = val.get<int>();
    else if (key == "learning_rate") cfg.learning_rate = val.get<double>();
    else if (key == "momentum") cfg.momentum = val.get<double>();
    else if (key == "weight_decay") cfg.weight_decay = val.get<double>();
    else if (key == "dropout_keep") cfg.dropout_keep = val.get<double>();
    else if (key == "init_gain_conv") cfg.init_gain_conv = val.get<double>();
    else if (key == "init_std_fc") cfg.init_std_fc = val.get<double>();
    else if (key == "pot_hyper") cfg.pot_hyper = val.get<bool>();
    else if (key == "target_accuracy") cfg.target_accuracy = val.get<double>();
    else if (key == "data") cfg.data = val.get<std::string>();
    else if (key == "data_dir") cfg.data_dir = val.get<std::string>();
    else if (key == "train_size") cfg.train_size = val.get<int64_t>();
    else if (key == "test_size") cfg.test_size = val.get<int64_t>();
    else if (key == "synth_separation") cfg.synth_separation = val.get<double>();
    else if (key == "synth_seed") cfg.synth_seed = val.get<uint64_t>();
    else if (key == "synth_train") cfg.synth_train = val.get<int64_t>();
    else if (key == "synth_test") cfg.synth_test = val.get<int64_t>();
    else if (key == "metrics") cfg.metrics_path = val.get<std::string>();
    else if (key == "summary_csv") cfg.summary_csv = val.get<std::string>();
    else if (key == "checkpoint") cfg.checkpoint_path = val.get<std::string>();
    else if (key == "checkpoint_every") cfg.checkpoint_every = val.get<int>();
    else if (key == "resume") cfg.resume_path = val.get<std::string>();
    else if (key == "dump_params") cfg.dump_params = val.get<std::string>();
    else if (key == "histograms") cfg.histograms = val.get<bool>();
    else throw std::runtime_error(path + ": unknown config key '" + key + "'");
  }
  return cfg;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::ostream* log) {
  SchemeConfig scheme = build_scheme(cfg.scheme, cfg.format_overrides);
  KernelMode kernel = parse_kernel_mode(cfg.kernel);
  Rounding rounding = parse_rounding(cfg.rounding);

  ResolvedData data = resolve_data(cfg);
  if (log)
    *log << "data: train " << data.train.source << " (" << data.train.size()
         << "), test " << data.test.source << " (" << data.test.size() << ")\n";

  NetConfig nc;
  nc.dropout_keep = cfg.dropout_keep;
  nc.init_gain_conv = cfg.init_gain_conv;
  nc.init_std_fc = cfg.init_std_fc;
  if (data.train.channels != nc.in_c || data.train.height != nc.in_h ||
      data.train.width != nc.in_w || data.train.num_classes != nc.classes())
    throw std::runtime_error("dataset geometry does not match the network");

  Network net(nc, scheme, cfg.seed, kernel);
  TrainConfig tc;
  tc.hyper.learning_rate = cfg.learning_rate;
  tc.hyper.momentum = cfg.momentum;
  tc.hyper.weight_decay = cfg.weight_decay;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.rounding = rounding;
  tc.seed = cfg.seed;
  tc.target_accuracy = cfg.target_accuracy;
  tc.emit_histograms = cfg.histograms;
  tc.checkpoint_every = cfg.checkpoint_every;
  tc.checkpoint_path = cfg.checkpoint_path;
  tc.pot_hyper = cfg.pot_hyper;

  if (!cfg.resume_path.empty()) {
    CheckpointMeta meta = load_checkpoint(cfg.resume_path, &net, kernel);
    if (net.scheme().cls != scheme.cls) {
      if (log)
        *log << "resume: converting " << net.scheme().name << " -> "
             << scheme.name << "\n";
      net = convert_scheme(net, scheme, kernel);
    }
    tc.seed = meta.seed;  // keep every derived stream aligned with the run
    tc.start_epoch = meta.epoch;
    tc.start_iter = meta.iter;
    if (log)
      *log << "resume: " << cfg.resume_path << " at epoch " << meta.epoch
           << ", iter " << meta.iter << "\n";
  } else {
    net.init_params();
  }

  MetricsWriter mw;
  if (!cfg.metrics_path.empty()) mw = MetricsWriter(cfg.metrics_path);
  MetricsWriter* mwp = cfg.metrics_path.empty() ? nullptr : &mw;
  if (mwp) {
    ordered_json run;
    run["event"] = "run";
    run["scheme"] = scheme.name;
    ordered_json classes;
    for (int c = 0; c < kNumClasses; ++c)
      classes[to_string(static_cast<ParamClass>(c))] =
          class_format_name(scheme.cls[c]);
    run["classes"] = classes;
    run["rounding"] = to_string(rounding);
    run["kernel"] = cfg.kernel;
    run["seed"] = tc.seed;
    run["epochs"] = cfg.epochs;
    run["batch_size"] = cfg.batch_size;
    run["learning_rate"] = cfg.learning_rate;
    run["momentum"] = cfg.momentum;
    run["weight_decay"] = cfg.weight_decay;
    run["dropout_keep"] = cfg.dropout_keep;
    run["pot_hyper"] = cfg.pot_hyper;
    run["target_accuracy"] = cfg.target_accuracy;
    run["train_data"] = data.train.source;
    run["train_size"] = data.train.size();
    run["test_data"] = data.test.source;
    run["test_size"] = data.test.size();
    run["resumed_from"] = cfg.resume_path;
    mwp->line(run.dump());
  }

  ExperimentResult res;
  res.scheme_name = scheme.name;
  res.train_source = data.train.source;
  res.test_source = data.test.source;
  res.train = train(net, data.train, data.test, tc, mwp);

  if (log) {
    *log << "final accuracy " << res.train.final_accuracy << ", best "
         << res.train.best_accuracy;
    if (res.train.epochs_to_target > 0)
      *log << ", reached " << cfg.target_accuracy << " at epoch "
           << res.train.epochs_to_target;
    *log << "\n";
  }

  if (!cfg.summary_csv.empty()) {
    bool fresh = !std::filesystem::exists(cfg.summary_csv) ||
                 std::filesystem::file_size(cfg.summary_csv) == 0;
    std::ofstream csv(cfg.summary_csv, std::ios::app);
    if (!csv)
      throw std::runtime_error("cannot open summary csv '" + cfg.summary_csv + "'");
    if (fresh)
      csv << "scheme,rounding,seed,final_accuracy,best_accuracy,"
             "epochs_to_target\n";
    char row[256];
    snprintf(row, sizeof row, "%s,%s,%llu,%.6f,%.6f,%d\n", scheme.name.c_str(),
             to_string(rounding).c_str(),
             static_cast<unsigned long long>(tc.seed),
             res.train.final_accuracy, res.train.best_accuracy,
             res.train.epochs_to_target);
    csv << row;
  }

  if (!cfg.dump_params.empty()) {
    auto dump_one = [&](std::string name, const Tensor& t, const Repr& r) {
      for (auto& ch : name)
        if (ch == '/') ch = '.';
      dump_tensor(cfg.dump_params + "." + name + ".bin", t, format_name(r));
    };
    for (size_t ci = 0; ci < net.conv_layers().size(); ++ci) {
      const auto& l = net.conv_layers()[ci];
      int lid = static_cast<int>(ci) + 1;
      std::string base = "conv" + std::to_string(ci + 1);
      dump_one(base + "/W", l.W, net.class_repr(lid, ParamClass::Weights));
      dump_one(base + "/B", l.B, net.class_repr(lid, ParamClass::Biases));
    }
    for (size_t fi = 0; fi < net.fc_layers().size(); ++fi) {
      const auto& l = net.fc_layers()[fi];
      int lid = static_cast<int>(net.conv_layers().size()) + 1 +
                static_cast<int>(fi);
      std::string base = "fc" + std::to_string(fi + 1);
      dump_one(base + "/W", l.W, net.class_repr(lid, ParamClass::Weights));
      dump_one(base + "/B", l.B, net.class_repr(lid, ParamClass::Biases));
    }
  }
  return res;
}

}  // namespace lpnum
