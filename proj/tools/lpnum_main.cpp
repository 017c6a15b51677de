#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lpnum/conformance.hpp"
#include "lpnum/costmodel.hpp"
#include "lpnum/experiment.hpp"
#include "lpnum/io.hpp"

namespace {

using lpnum::ParamClass;
using ordered_json = nlohmann::ordered_json;

std::string phase_bucket(const lpnum::SchemeConfig& s, int phase) {
  using lpnum::MacClass;
  if (phase == 3) return "update";
  const lpnum::ClassFormat* a = nullptr;
  const lpnum::ClassFormat* b = nullptr;
  switch (phase) {
    case 0:  // forward
      a = &s.at(ParamClass::Weights), b = &s.at(ParamClass::Outputs);
      break;
    case 1:  // error propagation
      a = &s.at(ParamClass::Weights), b = &s.at(ParamClass::Gradients);
      break;
    default:  // weight gradients
      a = &s.at(ParamClass::Gradients), b = &s.at(ParamClass::Outputs);
  }
  switch (lpnum::mac_class(*a, *b)) {
    case MacClass::Wide: return "wide";
    case MacClass::FloatLike: return "floatlike";
    default: return "fixed";
  }
}

ordered_json tally_json(const lpnum::OpTally& t) {
  ordered_json j;
  j["mul"] = t.mul;
  j["add"] = t.add;
  j["shift"] = t.shift;
  j["cmp"] = t.cmp;
  j["scale_adjust"] = t.scale_adjust;
  return j;
}

int cmd_run(const lpnum::ExperimentConfig& cfg) {
  lpnum::ExperimentResult res = lpnum::run_experiment(cfg, &std::cerr);
  printf("scheme %s: final accuracy %.4f, best %.4f", res.scheme_name.c_str(),
         res.train.final_accuracy, res.train.best_accuracy);
  if (res.train.epochs_to_target > 0)
    printf(", target reached at epoch %d", res.train.epochs_to_target);
  printf("\n");
  return 0;
}

lpnum::Network make_reference_net(const std::string& scheme_name,
                                  const std::string& kernel) {
  lpnum::NetConfig nc;
  return lpnum::Network(nc, lpnum::SchemeConfig::preset(scheme_name), 1,
                        lpnum::parse_kernel_mode(kernel));
}

int cmd_cost(const std::vector<std::string>& schemes, int batch, int64_t iters,
             const std::string& table_path, const std::string& time_csv,
             const std::string& memory_csv, const std::string& counts_json,
             const std::string& kernel) {
  lpnum::CostTable table = table_path.empty()
                               ? lpnum::CostTable::builtin()
                               : lpnum::load_cost_table(table_path);

  struct Row {
    std::string scheme;
    lpnum::TimeEstimate time;
    lpnum::MemoryEstimate mem;
  };
  std::vector<Row> rows;
  ordered_json counts;
  counts["batch"] = batch;
  counts["iters"] = iters;
  counts["schemes"] = ordered_json::object();

  for (const std::string& name : schemes) {
    lpnum::Network net = make_reference_net(name, kernel);
    rows.push_back({name, lpnum::estimate_time(net, batch, iters, table),
                    lpnum::estimate_memory(net)});

    std::vector<lpnum::PhaseTally> ops = lpnum::count_ops(net, batch);
    ordered_json layers = ordered_json::array();
    for (size_t lid = 0; lid < ops.size(); ++lid) {
      ordered_json lj;
      lj["layer"] = net.layer_name(static_cast<int>(lid));
      ordered_json phases;
      const lpnum::OpTally* ts[4] = {&ops[lid].fwd, &ops[lid].eprop,
                                     &ops[lid].wgrad, &ops[lid].update};
      const char* pn[4] = {"fwd", "eprop", "wgrad", "update"};
      for (int p = 0; p < 4; ++p) {
        ordered_json pj = tally_json(*ts[p]);
        pj["bucket"] = phase_bucket(net.scheme(), p);
        phases[pn[p]] = pj;
      }
      lj["phases"] = phases;
      layers.push_back(lj);
    }
    counts["schemes"][name] = layers;
  }

  for (const Row& r : rows) {
    printf("%-16s time %12.6f  memory %12.0f bytes (params %.0f + acts %.0f)\n",
           r.scheme.c_str(), r.time.total, r.mem.calibrated_bytes,
           r.mem.calibrated_param_bytes, r.mem.calibrated_act_bytes);
  }

  if (!time_csv.empty()) {
    std::ofstream out(time_csv);
    if (!out) throw std::runtime_error("cannot open " + time_csv);
    out << "scheme,Total,ConvLayer1,ReluLayer1,MaxPool,ConvLayer2,ReluLayer2,"
           "AvePool1,ConvLayer3,AvePool2,ReluLayer3,FullyConnLayer\n";
    for (const Row& r : rows) {
      const auto& pl = r.time.per_layer;
      double fc = 0.0;
      for (size_t i = 4; i < pl.size(); ++i) fc += pl[i];
      char buf[512];
      snprintf(buf, sizeof buf,
               "%s,%.9g,%.9g,0,0,%.9g,0,0,%.9g,0,0,%.9g\n", r.scheme.c_str(),
               r.time.total, pl[1], pl[2], pl[3], fc);
      out << buf;
    }
  }

  if (!memory_csv.empty()) {
    std::ofstream out(memory_csv);
    if (!out) throw std::runtime_error("cannot open " + memory_csv);
    out << "scheme,param_bits,act_bits,param_bytes,act_bytes,total_bytes,"
           "raw_param_count,raw_momentum_count,raw_act_per_image,"
           "raw_grad_per_image\n";
    for (const Row& r : rows) {
      char buf[512];
      snprintf(buf, sizeof buf, "%s,%d,%d,%.0f,%.0f,%.0f,%lld,%lld,%lld,%lld\n",
               r.scheme.c_str(), r.mem.param_bits, r.mem.act_bits,
               r.mem.calibrated_param_bytes, r.mem.calibrated_act_bytes,
               r.mem.calibrated_bytes,
               static_cast<long long>(r.mem.param_count),
               static_cast<long long>(r.mem.momentum_count),
               static_cast<long long>(r.mem.act_count_per_image),
               static_cast<long long>(r.mem.grad_count_per_image));
      out << buf;
    }
  }

  if (!counts_json.empty()) {
    std::ofstream out(counts_json);
    if (!out) throw std::runtime_error("cannot open " + counts_json);
    out << counts.dump(2) << "\n";
  }
  return 0;
}

int cmd_conformance(bool full) {
  auto results = lpnum::run_conformance(full ? 1 : 0);
  int failures = 0;
  for (const auto& r : results) {
    printf("%s: %s (%s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
           r.detail.c_str());
    if (!r.pass) ++failures;
  }
  printf("%zu checks, %d failed\n", results.size(), failures);
  return failures == 0 ? 0 : 1;
}

int cmd_summarize(const std::vector<std::string>& files,
                  const std::string& out_path) {
  std::ostream* out = &std::cout;
  std::ofstream file_out;
  if (!out_path.empty()) {
    file_out.open(out_path);
    if (!file_out) throw std::runtime_error("cannot open " + out_path);
    out = &file_out;
  }
  *out << "file,scheme,rounding,seed,train_data,epochs,final_accuracy,"
          "best_accuracy,epochs_to_target\n";
  for (const std::string& path : files) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path);
    std::string scheme, rounding, train_data;
    uint64_t seed = 0;
    int epochs = 0;
    double final_acc = 0, best_acc = 0;
    int to_target = -1;
    bool saw_summary = false;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ordered_json j = ordered_json::parse(line);
      std::string ev = j.value("event", "");
      if (ev == "run") {
        scheme = j.value("scheme", "");
        rounding = j.value("rounding", "");
        seed = j.value("seed", uint64_t{0});
        train_data = j.value("train_data", "");
      } else if (ev == "epoch") {
        epochs = j.value("epoch", 0);
      } else if (ev == "summary") {
        final_acc = j.value("final_accuracy", 0.0);
        best_acc = j.value("best_accuracy", 0.0);
        to_target = j.value("epochs_to_target", -1);
        saw_summary = true;
      }
    }
    if (!saw_summary)
      fprintf(stderr, "warning: %s has no summary line (run still going?)\n",
              path.c_str());
    char buf[640];
    snprintf(buf, sizeof buf, "%s,%s,%s,%llu,\"%s\",%d,%.6f,%.6f,%d\n",
             path.c_str(), scheme.c_str(), rounding.c_str(),
             static_cast<unsigned long long>(seed), train_data.c_str(), epochs,
             final_acc, best_acc, to_target);
    *out << buf;
  }
  return 0;
}

int cmd_dump_formats(const std::string& list_fmt, const std::string& scheme) {
  if (!list_fmt.empty()) {
    lpnum::Repr r = lpnum::parse_repr(list_fmt);
    auto pts = lpnum::enumerate_codepoints(r);
    printf("# %s: %zu codepoints\n", lpnum::format_name(r).c_str(), pts.size());
    for (double v : pts) printf("%.17g\n", v);
    return 0;
  }
  std::vector<std::string> names =
      scheme.empty() ? lpnum::SchemeConfig::preset_names()
                     : std::vector<std::string>{scheme};
  printf("%-16s", "scheme");
  for (int c = 0; c < lpnum::kNumClasses; ++c)
    printf(" %-18s", lpnum::to_string(static_cast<ParamClass>(c)));
  printf("\n");
  for (const std::string& name : names) {
    lpnum::SchemeConfig s = lpnum::SchemeConfig::preset(name);
    printf("%-16s", name.c_str());
    for (int c = 0; c < lpnum::kNumClasses; ++c)
      printf(" %-18s", lpnum::class_format_name(s.cls[c]).c_str());
    printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bit-accurate low-precision CNN training simulator"};
  app.require_subcommand(1);

  lpnum::ExperimentConfig cfg;
  // Config files load first so explicit flags win.
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc)
      cfg = lpnum::experiment_from_json_file(argv[i + 1]);
    else if (arg.rfind("--config=", 0) == 0)
      cfg = lpnum::experiment_from_json_file(arg.substr(9));
  }

  auto* run = app.add_subcommand("run", "train one scheme and log metrics");
  std::string config_path;
  std::vector<std::string> fmt_overrides;
  run->add_option("--config", config_path, "JSON config with the same keys");
  run->add_option("--scheme", cfg.scheme, "format scheme preset");
  run->add_option("--format", fmt_overrides,
                  "override one class, e.g. weights=fixed[2,10]");
  run->add_option("--rounding", cfg.rounding, "nearest|stochastic|truncate");
  run->add_option("--kernel", cfg.kernel, "auto|multiply|shift");
  run->add_option("--seed", cfg.seed, "run seed");
  run->add_option("--epochs", cfg.epochs, "training epochs");
  run->add_option("--batch-size", cfg.batch_size, "minibatch size");
  run->add_option("--learning-rate", cfg.learning_rate, "SGD learning rate");
  run->add_option("--momentum", cfg.momentum, "SGD momentum");
  run->add_option("--weight-decay", cfg.weight_decay, "L2 coefficient");
  run->add_option("--dropout-keep", cfg.dropout_keep, "dropout keep probability");
  run->add_option("--init-gain-conv", cfg.init_gain_conv,
                  "conv init: N(0, (gain/sqrt(fan_in))^2)");
  run->add_option("--init-std-fc", cfg.init_std_fc, "FC init std");
  run->add_flag("--pot-hyper", cfg.pot_hyper,
                "round optimizer constants to powers of two");
  run->add_option("--target-accuracy", cfg.target_accuracy,
                  "accuracy the epoch counter watches for");
  run->add_option("--data", cfg.data, "auto|cifar10|synthetic");
  run->add_option("--data-dir", cfg.data_dir, "CIFAR-10 binary batch dir");
  run->add_option("--train-size", cfg.train_size, "stratified train subset");
  run->add_option("--test-size", cfg.test_size, "stratified test subset");
  run->add_option("--synth-separation", cfg.synth_separation,
                  "synthetic class separation");
  run->add_option("--synth-seed", cfg.synth_seed, "synthetic data seed");
  run->add_option("--synth-train", cfg.synth_train, "synthetic train size");
  run->add_option("--synth-test", cfg.synth_test, "synthetic test size");
  run->add_option("--metrics", cfg.metrics_path, "JSONL metrics path");
  run->add_option("--summary-csv", cfg.summary_csv, "append a result row here");
  run->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint path");
  run->add_option("--checkpoint-every", cfg.checkpoint_every,
                  "epochs between checkpoint saves");
  run->add_option("--resume", cfg.resume_path, "checkpoint to resume from");
  run->add_option("--dump-params", cfg.dump_params,
                  "prefix for post-run parameter dumps");
  run->add_flag("--histograms", cfg.histograms, "log parameter histograms");

  auto* cost = app.add_subcommand("cost", "analytic time and memory model");
  std::vector<std::string> cost_schemes;
  bool cost_all = false;
  int cost_batch = 100;
  int64_t cost_iters = 20000;
  std::string cost_table, time_csv, memory_csv, counts_json;
  std::string cost_kernel = "auto";
  cost->add_option("--scheme", cost_schemes, "schemes to price");
  cost->add_flag("--all", cost_all, "price every preset scheme");
  cost->add_option("--batch", cost_batch, "minibatch size");
  cost->add_option("--iters", cost_iters, "training iterations to price");
  cost->add_option("--table", cost_table, "cost table JSON (default builtin)");
  cost->add_option("--kernel", cost_kernel, "auto|multiply|shift");
  cost->add_option("--time-csv", time_csv, "write per-layer times here");
  cost->add_option("--memory-csv", memory_csv, "write memory table here");
  cost->add_option("--counts-json", counts_json, "write raw op counts here");

  auto* conf = app.add_subcommand("conformance", "numeric behavior checks");
  bool conf_full = false;
  conf->add_flag("--full", conf_full, "full-size stochastic sweeps");

  auto* summ = app.add_subcommand("summarize", "metrics JSONL to CSV");
  std::vector<std::string> summ_files;
  std::string summ_out;
  summ->add_option("files", summ_files, "metrics files")->required();
  summ->add_option("--out", summ_out, "output CSV (default stdout)");

  auto* dumpf = app.add_subcommand("dump-formats", "preset formats and grids");
  std::string dump_list, dump_scheme;
  dumpf->add_option("--list", dump_list, "print every codepoint of a format");
  dumpf->add_option("--scheme", dump_scheme, "show one preset only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      for (const std::string& ov : fmt_overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
          throw std::invalid_argument("--format expects class=format, got '" +
                                      ov + "'");
        cfg.format_overrides[ov.substr(0, eq)] = ov.substr(eq + 1);
      }
      return cmd_run(cfg);
    }
    if (cost->parsed()) {
      if (cost_all || cost_schemes.empty())
        cost_schemes = lpnum::SchemeConfig::preset_names();
      return cmd_cost(cost_schemes, cost_batch, cost_iters, cost_table,
                      time_csv, memory_csv, counts_json, cost_kernel);
    }
    if (conf->parsed()) return cmd_conformance(conf_full);
    if (summ->parsed()) return cmd_summarize(summ_files, summ_out);
    if (dumpf->parsed()) return cmd_dump_formats(dump_list, dump_scheme);
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
