#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lpnum/context.hpp"
#include "lpnum/format.hpp"
#include "lpnum/kernels.hpp"
#include "lpnum/tensor.hpp"

namespace lpnum {

enum class ParamClass {
  Weights = 0,
  Biases = 1,
  Outputs = 2,
  Gradients = 3,
  WeightUpdates = 4,
  BiasUpdates = 5,
};
constexpr int kNumClasses = 6;
const char* to_string(ParamClass c);

// Per-class format assignment. Presets cover the seven named schemes.
struct SchemeConfig {
  std::string name;
  std::array<ClassFormat, kNumClasses> cls;

  ClassFormat& at(ParamClass c) { return cls[static_cast<int>(c)]; }
  const ClassFormat& at(ParamClass c) const {
    return cls[static_cast<int>(c)];
  }
  bool any_context() const;
  bool all_wide() const;

  static SchemeConfig preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
};

enum class KernelMode { Auto, Multiply, Shift };
KernelMode parse_kernel_mode(const std::string& s);

// Topology. Each conv entry is a block: conv 5x5 (stride 1, pad 2) -> max
// pool 3x3 (stride 2, ceil) -> ReLU. FC layers all but last get ReLU and
// dropout.
struct NetConfig {
  int in_c = 3;
  int in_h = 32;
  int in_w = 32;
  std::vector<int> conv_channels = {32, 32, 64};
  std::vector<int> fc_sizes = {1000, 10};
  double dropout_keep = 0.6;
  // Conv filters draw from N(0, (gain/sqrt(fan_in))^2) so the stack passes
  // signal at any depth; FC layers use a flat std.
  double init_gain_conv = 0.55;
  double init_std_fc = 0.005;

  int conv_kernel = 5;
  int conv_pad = 2;
  int conv_stride = 1;
  int pool_kernel = 3;
  int pool_stride = 2;

  int classes() const { return fc_sizes.back(); }
};

struct ConvLayer {
  int in_c, in_h, in_w;
  int K;
  int ksize;
  int out_h, out_w;  // conv output (same padding)
  int ph, pw;        // pooled output
  Tensor W;          // [K, kv]
  Tensor B;          // [K]
  Tensor uW, uB;     // momentum buffers, update formats
  int kv() const { return in_c * ksize * ksize; }
  int64_t out_elems() const { return int64_t{K} * out_h * out_w; }
  int64_t pooled_elems() const { return int64_t{K} * ph * pw; }
};

struct FcLayer {
  int n_in, n_out;
  Tensor W;  // [n_out, n_in]
  Tensor B;  // [n_out]
  Tensor uW, uB;
};

struct PhaseTally {
  OpTally fwd, eprop, wgrad, update;
  PhaseTally& operator+=(const PhaseTally& o) {
    fwd += o.fwd;
    eprop += o.eprop;
    wgrad += o.wgrad;
    update += o.update;
    return *this;
  }
  OpTally total() const {
    OpTally t;
    t += fwd;
    t += eprop;
    t += wgrad;
    t += update;
    return t;
  }
};

struct BatchCache {
  int B = 0;
  Tensor x0;                                     // quantized input
  std::vector<Tensor> conv_out;                  // quantized block outputs
  std::vector<std::vector<int32_t>> pool_arg;    // argmax index per pooled cell
  std::vector<std::vector<uint8_t>> relu_mask;   // conv block relu gates
  std::vector<Tensor> fc_out;                    // quantized fc activations
  std::vector<std::vector<uint8_t>> fc_relu_mask;
  std::vector<std::vector<uint8_t>> drop_mask;
  Tensor logits;  // wide
};

struct Gradients {
  std::vector<Tensor> conv_wg, conv_bg;
  std::vector<Tensor> fc_wg, fc_bg;
};

struct TrainHyper {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.004;
};

class Network {
 public:
  Network(NetConfig cfg, SchemeConfig scheme, uint64_t seed,
          KernelMode kernel = KernelMode::Auto);

  const NetConfig& config() const { return cfg_; }
  const SchemeConfig& scheme() const { return scheme_; }
  uint64_t seed() const { return seed_; }
  KernelMode kernel_mode() const { return kernel_; }
  void set_kernel_mode(KernelMode k) { kernel_ = k; }

  // Layer ids for context bookkeeping: 0 = input, then conv blocks, then fc.
  int layer_count() const;
  std::string layer_name(int lid) const;

  // Gaussian init (seeded), contexts refreshed, everything quantized.
  void init_params();

  BatchCache forward(const double* images, int batch, bool train,
                     Rounding mode, uint64_t iter,
                     std::vector<PhaseTally>* tallies);

  // Mean cross-entropy and the wide logits gradient (softmax - onehot)/B.
  static double softmax_xent(const Tensor& logits, const int* labels,
                             Tensor* dlogits);

  Gradients backward(const BatchCache& cache, const int* labels,
                     Rounding mode, uint64_t iter,
                     std::vector<PhaseTally>* tallies);

  void sgd_step(const Gradients& g, const TrainHyper& hp, Rounding mode,
                uint64_t iter, std::vector<PhaseTally>* tallies);

  // Argmax predictions with the deterministic inference path (Nearest
  // rounding, dropout scaled by keep probability).
  void predict(const double* images, int batch, int* out_labels);

  // True when every stored tensor is representable under its class format.
  bool check_conformance(std::string* what = nullptr) const;

  std::vector<ConvLayer>& conv_layers() { return conv_; }
  std::vector<FcLayer>& fc_layers() { return fc_; }
  const std::vector<ConvLayer>& conv_layers() const { return conv_; }
  const std::vector<FcLayer>& fc_layers() const { return fc_; }

  // Live context scales as (context id, scale exponent), stable order.
  std::vector<std::pair<std::string, int>> context_states() const;
  int context_scale(int lid, ParamClass c) const;
  void set_context_scale(int lid, ParamClass c, int scale_exp);
  bool context_exists(int lid, ParamClass c) const;

  // Re-quantizes every parameter tensor under the current scheme (Nearest),
  // refreshing parameter-class contexts first. Used after checkpoint loads
  // and scheme switches.
  void requantize_params();

  Repr class_repr(int lid, ParamClass c) const;

 private:
  void refresh_context(int lid, ParamClass c, const double* x, int64_t n);
  bool use_shift(const ClassFormat& operand) const;

  NetConfig cfg_;
  SchemeConfig scheme_;
  KernelMode kernel_;
  uint64_t seed_;
  std::vector<ConvLayer> conv_;
  std::vector<FcLayer> fc_;
  std::vector<int> ctx_scale_;
  std::vector<uint8_t> ctx_live_;
};

}  // namespace lpnum
