#include "lpnum/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "lpnum/rng.hpp"

namespace lpnum {

using json = nlohmann::ordered_json;

double pot_round(double v) {
  return quantize(v, Repr::flt(11, 0), Rounding::Nearest);
}

double evaluate(Network& net, const Dataset& test, int batch) {
  if (test.size() == 0) return 0.0;
  std::vector<double> images;
  std::vector<int> labels, pred;
  std::vector<int64_t> idx;
  int64_t correct = 0;
  for (int64_t off = 0; off < test.size(); off += batch) {
    const int n = (int)std::min<int64_t>(batch, test.size() - off);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), off);
    images.resize((size_t)n * test.image_elems());
    labels.resize(n);
    pred.resize(n);
    test.fill_batch(idx.data(), n, images.data(), labels.data());
    net.predict(images.data(), n, pred.data());
    for (int i = 0; i < n; ++i)
      if (pred[i] == labels[i]) ++correct;
  }
  return (double)correct / (double)test.size();
}

TrainResult train(Network& net, const Dataset& train_set,
                  const Dataset& test_set, const TrainConfig& cfg,
                  MetricsWriter* mw) {
  const int B = cfg.batch_size;
  if (B <= 0 || train_set.size() < B)
    throw std::invalid_argument("train: batch size " + std::to_string(B) +
                                " exceeds the training set of " +
                                std::to_string(train_set.size()));
  const int64_t ipe = train_set.size() / B;

  TrainHyper hp = cfg.hyper;
  if (cfg.pot_hyper) {
    hp.learning_rate = pot_round(hp.learning_rate);
    hp.momentum = pot_round(hp.momentum);
    hp.weight_decay = pot_round(hp.weight_decay);
  }

  TrainResult res;
  res.tallies.assign((size_t)net.layer_count(), PhaseTally{});

  std::vector<double> images((size_t)B * train_set.image_elems());
  std::vector<int> labels(B);
  std::vector<int64_t> order((size_t)train_set.size());
  uint64_t iter = cfg.start_iter;

  for (int e = cfg.start_epoch; e < cfg.epochs; ++e) {
    const uint64_t sk = derive(derive(cfg.seed, rng_tag::shuffle), (uint64_t)e);
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = train_set.size() - 1; i > 0; --i)
      std::swap(order[i],
                order[bounded_at(sk, (uint64_t)i, (uint64_t)i + 1)]);

    double loss_sum = 0.0;
    for (int64_t bi = 0; bi < ipe; ++bi, ++iter) {
      train_set.fill_batch(order.data() + bi * B, B, images.data(),
                           labels.data());
      BatchCache cache = net.forward(images.data(), B, true, cfg.rounding,
                                     iter, &res.tallies);
      loss_sum += Network::softmax_xent(cache.logits, labels.data(), nullptr);
      Gradients g =
          net.backward(cache, labels.data(), cfg.rounding, iter, &res.tallies);
      net.sgd_step(g, hp, cfg.rounding, iter, &res.tallies);
    }

    EpochStats es;
    es.epoch = e + 1;
    es.train_loss = loss_sum / (double)ipe;
    es.test_accuracy = evaluate(net, test_set, B);
    res.epochs.push_back(es);
    res.best_accuracy = std::max(res.best_accuracy, es.test_accuracy);
    if (res.epochs_to_target < 0 && es.test_accuracy >= cfg.target_accuracy)
      res.epochs_to_target = es.epoch;

    if (mw) {
      json j;
      j["event"] = "epoch";
      j["epoch"] = es.epoch;
      j["iter"] = iter;
      j["train_loss"] = es.train_loss;
      j["test_accuracy"] = es.test_accuracy;
      json ctx = json::object();
      for (const auto& [name, scale] : net.context_states()) ctx[name] = scale;
      j["contexts"] = ctx;
      mw->line(j.dump());
      if (cfg.emit_histograms) {
        auto hist_line = [&](const std::string& name, const Tensor& t) {
          json h;
          h["event"] = "histogram";
          h["epoch"] = es.epoch;
          h["tensor"] = name;
          h["hist"] = json::parse(
              histogram_json(log2_histogram(t.data.data(), t.numel())));
          mw->line(h.dump());
        };
        for (size_t ci = 0; ci < net.conv_layers().size(); ++ci) {
          hist_line("conv" + std::to_string(ci + 1) + "/W",
                    net.conv_layers()[ci].W);
          hist_line("conv" + std::to_string(ci + 1) + "/uW",
                    net.conv_layers()[ci].uW);
        }
        for (size_t fi = 0; fi < net.fc_layers().size(); ++fi) {
          hist_line("fc" + std::to_string(fi + 1) + "/W",
                    net.fc_layers()[fi].W);
          hist_line("fc" + std::to_string(fi + 1) + "/uW",
                    net.fc_layers()[fi].uW);
        }
      }
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (e + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.checkpoint_path, net, iter, e + 1);
  }

  if (!res.epochs.empty()) res.final_accuracy = res.epochs.back().test_accuracy;
  if (mw) {
    OpTally tot;
    for (const auto& pt : res.tallies) tot += pt.total();
    json j;
    j["event"] = "summary";
    j["final_accuracy"] = res.final_accuracy;
    j["best_accuracy"] = res.best_accuracy;
    j["epochs_to_target"] = res.epochs_to_target;
    j["target_accuracy"] = cfg.target_accuracy;
    json ops;
    ops["mul"] = tot.mul;
    ops["add"] = tot.add;
    ops["shift"] = tot.shift;
    ops["cmp"] = tot.cmp;
    ops["scale_adjust"] = tot.scale_adjust;
    j["ops"] = ops;
    mw->line(j.dump());
  }
  return res;
}

}  // namespace lpnum
