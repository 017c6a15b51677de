#include "lpnum/net.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "lpnum/rng.hpp"

namespace lpnum {
namespace {

uint64_t key4(uint64_t seed, uint64_t tag, uint64_t a, uint64_t b) {
  return derive(derive(derive(seed, tag), a), b);
}

bool is_ctx_float(const ClassFormat& cf) {
  return cf.context && cf.repr.flt() != nullptr;
}

int pool_out(int len, int k, int s) {
  int v = (len >= k) ? ((len - k + s - 1) / s + 1) : 1;
  while (v > 1 && (v - 1) * s >= len) --v;
  return v;
}

// Patch extraction for stride-1 convolution; patches is laid out
// [out_h*out_w][C*k*k] with zeros where the window leaves the input.
void im2col(const double* x, int C, int H, int W, int k, int pad, int out_h,
            int out_w, double* patches) {
  const int kv = C * k * k;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      double* row = patches + (int64_t)(oy * out_w + ox) * kv;
      for (int c = 0; c < C; ++c) {
        const double* xc = x + (int64_t)c * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy - pad + ky;
          double* dst = row + (c * k + ky) * k;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + k, 0.0);
            continue;
          }
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox - pad + kx;
            dst[kx] = (ix >= 0 && ix < W) ? xc[iy * W + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Patch-layout gradients accumulated back to input layout through a padded
// staging buffer; dx receives the interior.
void col2im(const double* patches, int C, int H, int W, int k, int pad,
            int out_h, int out_w, double* padbuf, double* dx) {
  const int PH = H + 2 * pad;
  const int PW = W + 2 * pad;
  std::fill(padbuf, padbuf + (int64_t)C * PH * PW, 0.0);
  const int kv = C * k * k;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const double* row = patches + (int64_t)(oy * out_w + ox) * kv;
      for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          double* dst = padbuf + ((int64_t)c * PH + oy + ky) * PW + ox;
          const double* src = row + (c * k + ky) * k;
          for (int kx = 0; kx < k; ++kx) dst[kx] += src[kx];
        }
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      const double* src = padbuf + ((int64_t)c * PH + y + pad) * PW + pad;
      double* dst = dx + ((int64_t)c * H + y) * W;
      std::copy(src, src + W, dst);
    }
  }
}

// Ceil-mode max pooling with windows clipped to the input. Ties keep the
// earliest index. Returns the comparison count (window size minus one per
// cell); argmax records the flat index within the [C][H][W] grid.
uint64_t maxpool(const double* in, int C, int H, int W, int k, int s, int ph,
                 int pw, double* out, int32_t* argmax) {
  uint64_t cmps = 0;
  for (int c = 0; c < C; ++c) {
    const double* xc = in + (int64_t)c * H * W;
    for (int py = 0; py < ph; ++py) {
      const int y0 = py * s;
      const int y1 = std::min(y0 + k, H);
      for (int px = 0; px < pw; ++px) {
        const int x0 = px * s;
        const int x1 = std::min(x0 + k, W);
        double best = xc[y0 * W + x0];
        int bi = y0 * W + x0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const int i = y * W + x;
            if (xc[i] > best) {
              best = xc[i];
              bi = i;
            }
          }
        }
        cmps += (uint64_t)(y1 - y0) * (x1 - x0) - 1;
        const int64_t o = ((int64_t)c * ph + py) * pw + px;
        out[o] = best;
        argmax[o] = (int32_t)(c * H * W + bi);
      }
    }
  }
  return cmps;
}

}  // namespace

const char* to_string(ParamClass c) {
  switch (c) {
    case ParamClass::Weights: return "weights";
    case ParamClass::Biases: return "biases";
    case ParamClass::Outputs: return "outputs";
    case ParamClass::Gradients: return "gradients";
    case ParamClass::WeightUpdates: return "weight_updates";
    case ParamClass::BiasUpdates: return "bias_updates";
  }
  return "?";
}

bool SchemeConfig::any_context() const {
  for (const auto& c : cls)
    if (c.context) return true;
  return false;
}

bool SchemeConfig::all_wide() const {
  for (const auto& c : cls)
    if (c.context || !c.repr.is_wide()) return false;
  return true;
}

const std::vector<std::string>& SchemeConfig::preset_names() {
  static const std::vector<std::string> names = {
      "fp32-baseline", "fixed12",     "scaled-fixed12", "float12",
      "ctx-fixed12",   "ctx-float12", "pot"};
  return names;
}

SchemeConfig SchemeConfig::preset(const std::string& name) {
  SchemeConfig s;
  s.name = name;
  const ClassFormat wide{false, Repr::wide()};
  auto fx = [](int i, int f, int scale) {
    return ClassFormat{false, Repr::fixed(i, f, scale)};
  };
  auto fl = [](int e, int m) { return ClassFormat{false, Repr::flt(e, m)}; };
  auto cfx = [](int i, int f) { return ClassFormat{true, Repr::fixed(i, f)}; };
  auto cfl = [](int e, int m) {
    return ClassFormat{true, Repr{FloatFormat::make_relative(e, m), 0}};
  };
  auto all = [&](const ClassFormat& cf) { s.cls.fill(cf); };
  if (name == "fp32-baseline") {
    all(wide);
  } else if (name == "fixed12") {
    all(fx(0, 12, 0));
    s.at(ParamClass::Outputs) = fx(6, 6, 0);
  } else if (name == "scaled-fixed12") {
    all(fx(0, 12, -4));
    s.at(ParamClass::Outputs) = fx(6, 6, -4);
  } else if (name == "float12") {
    all(fl(5, 6));
  } else if (name == "ctx-fixed12") {
    all(cfx(6, 6));
  } else if (name == "ctx-float12") {
    all(cfl(4, 7));
  } else if (name == "pot") {
    all(fx(0, 12, 0));
    s.at(ParamClass::Outputs) = fl(6, 0);
    s.at(ParamClass::Gradients) = fl(6, 0);
  } else {
    throw std::invalid_argument("scheme: unknown preset '" + name + "'");
  }
  return s;
}

KernelMode parse_kernel_mode(const std::string& s) {
  if (s == "auto") return KernelMode::Auto;
  if (s == "multiply") return KernelMode::Multiply;
  if (s == "shift") return KernelMode::Shift;
  throw std::invalid_argument("kernel: expected auto, multiply, or shift; got '" +
                              s + "'");
}

Network::Network(NetConfig cfg, SchemeConfig scheme, uint64_t seed,
                 KernelMode kernel)
    : cfg_(std::move(cfg)),
      scheme_(std::move(scheme)),
      kernel_(kernel),
      seed_(seed) {
  if (cfg_.fc_sizes.empty())
    throw std::invalid_argument("net: need at least one fully connected layer");
  if (cfg_.conv_stride != 1)
    throw std::invalid_argument("net: conv stride must be 1");
  if (cfg_.dropout_keep <= 0.0 || cfg_.dropout_keep > 1.0)
    throw std::invalid_argument("net: dropout keep probability must be in (0,1]");
  int c = cfg_.in_c;
  int h = cfg_.in_h;
  int w = cfg_.in_w;
  for (int K : cfg_.conv_channels) {
    ConvLayer l;
    l.in_c = c;
    l.in_h = h;
    l.in_w = w;
    l.K = K;
    l.ksize = cfg_.conv_kernel;
    l.out_h = h + 2 * cfg_.conv_pad - cfg_.conv_kernel + 1;
    l.out_w = w + 2 * cfg_.conv_pad - cfg_.conv_kernel + 1;
    if (l.out_h <= 0 || l.out_w <= 0)
      throw std::invalid_argument("net: conv output has no extent");
    l.ph = pool_out(l.out_h, cfg_.pool_kernel, cfg_.pool_stride);
    l.pw = pool_out(l.out_w, cfg_.pool_kernel, cfg_.pool_stride);
    l.W = Tensor({K, l.kv()});
    l.B = Tensor({K});
    l.uW = Tensor({K, l.kv()});
    l.uB = Tensor({K});
    c = K;
    h = l.ph;
    w = l.pw;
    conv_.push_back(std::move(l));
  }
  int n_in = c * h * w;
  for (int n_out : cfg_.fc_sizes) {
    FcLayer f;
    f.n_in = n_in;
    f.n_out = n_out;
    f.W = Tensor({n_out, n_in});
    f.B = Tensor({n_out});
    f.uW = Tensor({n_out, n_in});
    f.uB = Tensor({n_out});
    fc_.push_back(std::move(f));
    n_in = n_out;
  }

  const int L = layer_count();
  ctx_scale_.assign((size_t)L * kNumClasses, 0);
  ctx_live_.assign((size_t)L * kNumClasses, 0);
  for (int lid = 0; lid < L; ++lid) {
    for (int ci = 0; ci < kNumClasses; ++ci) {
      if (!scheme_.cls[ci].context) continue;
      const auto pc = static_cast<ParamClass>(ci);
      bool live;
      if (lid == 0) {
        live = (pc == ParamClass::Outputs);
      } else if (pc == ParamClass::Outputs) {
        live = (lid != L - 1);  // final logits stay wide
      } else {
        live = true;
      }
      ctx_live_[(size_t)lid * kNumClasses + ci] = live ? 1 : 0;
    }
  }
}

int Network::layer_count() const {
  return 1 + (int)conv_.size() + (int)fc_.size();
}

std::string Network::layer_name(int lid) const {
  if (lid == 0) return "input";
  const int nconv = (int)conv_.size();
  if (lid <= nconv) return "conv" + std::to_string(lid);
  return "fc" + std::to_string(lid - nconv);
}

void Network::refresh_context(int lid, ParamClass c, const double* x,
                              int64_t n) {
  const size_t idx = (size_t)lid * kNumClasses + (int)c;
  if (!ctx_live_[idx]) return;
  ctx_scale_[idx] = context_scale_exponent(x, n);
}

bool Network::context_exists(int lid, ParamClass c) const {
  return ctx_live_[(size_t)lid * kNumClasses + (int)c] != 0;
}

int Network::context_scale(int lid, ParamClass c) const {
  return ctx_scale_[(size_t)lid * kNumClasses + (int)c];
}

void Network::set_context_scale(int lid, ParamClass c, int scale_exp) {
  ctx_scale_[(size_t)lid * kNumClasses + (int)c] = scale_exp;
}

Repr Network::class_repr(int lid, ParamClass c) const {
  const ClassFormat& cf = scheme_.at(c);
  if (cf.context && context_exists(lid, c))
    return cf.with_scale(context_scale(lid, c));
  return cf.repr;
}

std::vector<std::pair<std::string, int>> Network::context_states() const {
  std::vector<std::pair<std::string, int>> out;
  for (int lid = 0; lid < layer_count(); ++lid) {
    for (int ci = 0; ci < kNumClasses; ++ci) {
      if (!ctx_live_[(size_t)lid * kNumClasses + ci]) continue;
      out.emplace_back(
          layer_name(lid) + "/" + to_string(static_cast<ParamClass>(ci)),
          ctx_scale_[(size_t)lid * kNumClasses + ci]);
    }
  }
  return out;
}

void Network::init_params() {
  const int nconv = (int)conv_.size();
  for (int ci = 0; ci < nconv; ++ci) {
    auto& l = conv_[ci];
    const uint64_t wk = key4(seed_, rng_tag::weight_init, (uint64_t)(1 + ci), 0);
    const double std = cfg_.init_gain_conv / std::sqrt((double)l.kv());
    for (int64_t j = 0; j < l.W.numel(); ++j)
      l.W.data[j] = std * gauss_at(wk, (uint64_t)j);
    std::fill(l.B.data.begin(), l.B.data.end(), 0.0);
    std::fill(l.uW.data.begin(), l.uW.data.end(), 0.0);
    std::fill(l.uB.data.begin(), l.uB.data.end(), 0.0);
  }
  for (size_t fi = 0; fi < fc_.size(); ++fi) {
    auto& f = fc_[fi];
    const uint64_t wk =
        key4(seed_, rng_tag::weight_init, (uint64_t)(1 + nconv + fi), 0);
    for (int64_t j = 0; j < f.W.numel(); ++j)
      f.W.data[j] = cfg_.init_std_fc * gauss_at(wk, (uint64_t)j);
    std::fill(f.B.data.begin(), f.B.data.end(), 0.0);
    std::fill(f.uW.data.begin(), f.uW.data.end(), 0.0);
    std::fill(f.uB.data.begin(), f.uB.data.end(), 0.0);
  }
  requantize_params();
}

void Network::requantize_params() {
  auto req = [&](Tensor& t, int lid, ParamClass c) {
    refresh_context(lid, c, t.data.data(), t.numel());
    quantize_buf(t.data.data(), t.data.data(), t.numel(), class_repr(lid, c),
                 Rounding::Nearest, 0);
  };
  const int nconv = (int)conv_.size();
  for (int ci = 0; ci < nconv; ++ci) {
    auto& l = conv_[ci];
    req(l.W, 1 + ci, ParamClass::Weights);
    req(l.B, 1 + ci, ParamClass::Biases);
    req(l.uW, 1 + ci, ParamClass::WeightUpdates);
    req(l.uB, 1 + ci, ParamClass::BiasUpdates);
  }
  for (size_t fi = 0; fi < fc_.size(); ++fi) {
    auto& f = fc_[fi];
    const int lid = 1 + nconv + (int)fi;
    req(f.W, lid, ParamClass::Weights);
    req(f.B, lid, ParamClass::Biases);
    req(f.uW, lid, ParamClass::WeightUpdates);
    req(f.uB, lid, ParamClass::BiasUpdates);
  }
}

bool Network::check_conformance(std::string* what) const {
  auto chk = [&](const Tensor& t, int lid, ParamClass c) {
    if (tensor_representable(t, class_repr(lid, c))) return true;
    if (what) *what = layer_name(lid) + "/" + to_string(c);
    return false;
  };
  const int nconv = (int)conv_.size();
  for (int ci = 0; ci < nconv; ++ci) {
    const auto& l = conv_[ci];
    if (!chk(l.W, 1 + ci, ParamClass::Weights)) return false;
    if (!chk(l.B, 1 + ci, ParamClass::Biases)) return false;
    if (!chk(l.uW, 1 + ci, ParamClass::WeightUpdates)) return false;
    if (!chk(l.uB, 1 + ci, ParamClass::BiasUpdates)) return false;
  }
  for (size_t fi = 0; fi < fc_.size(); ++fi) {
    const auto& f = fc_[fi];
    const int lid = 1 + nconv + (int)fi;
    if (!chk(f.W, lid, ParamClass::Weights)) return false;
    if (!chk(f.B, lid, ParamClass::Biases)) return false;
    if (!chk(f.uW, lid, ParamClass::WeightUpdates)) return false;
    if (!chk(f.uB, lid, ParamClass::BiasUpdates)) return false;
  }
  return true;
}

bool Network::use_shift(const ClassFormat& operand) const {
  switch (kernel_) {
    case KernelMode::Multiply:
      return false;
    case KernelMode::Shift:
      if (!operand.repr.is_pot())
        throw std::runtime_error(
            "kernel: shift mode needs a power-of-two operand format, got " +
            class_format_name(operand));
      return true;
    case KernelMode::Auto:
    default:
      return operand.repr.is_pot();
  }
}

BatchCache Network::forward(const double* images, int batch, bool train,
                            Rounding mode, uint64_t iter,
                            std::vector<PhaseTally>* tallies) {
  if (tallies && tallies->size() < (size_t)layer_count())
    tallies->resize(layer_count());
  BatchCache cache;
  cache.B = batch;
  const int nconv = (int)conv_.size();
  const int nfc = (int)fc_.size();
  const int64_t in_elems = (int64_t)cfg_.in_c * cfg_.in_h * cfg_.in_w;

  {
    std::vector<double> wide(images, images + (int64_t)batch * in_elems);
    refresh_context(0, ParamClass::Outputs, wide.data(), (int64_t)wide.size());
    cache.x0 = Tensor({batch, in_elems});
    quantize_buf(wide.data(), cache.x0.data.data(), (int64_t)wide.size(),
                 class_repr(0, ParamClass::Outputs), mode,
                 key4(seed_, rng_tag::quant_input, iter, 0));
  }

  const bool xshift = use_shift(scheme_.at(ParamClass::Outputs));
  const bool sa_fwd = is_ctx_float(scheme_.at(ParamClass::Weights)) &&
                      is_ctx_float(scheme_.at(ParamClass::Outputs));

  const Tensor* cur = &cache.x0;
  cache.conv_out.resize(nconv);
  cache.pool_arg.resize(nconv);
  cache.relu_mask.resize(nconv);
  for (int ci = 0; ci < nconv; ++ci) {
    auto& l = conv_[ci];
    const int lid = 1 + ci;
    const int kv = l.kv();
    const int64_t P = (int64_t)l.out_h * l.out_w;
    const int64_t in_sz = (int64_t)l.in_c * l.in_h * l.in_w;
    const int64_t pooled = l.pooled_elems();
    std::vector<double> patches((size_t)(P * kv));
    std::vector<double> convP((size_t)((int64_t)l.K * P));
    std::vector<double> widep((size_t)((int64_t)batch * pooled));
    cache.pool_arg[ci].assign((size_t)((int64_t)batch * pooled), 0);
    cache.relu_mask[ci].assign((size_t)((int64_t)batch * pooled), 0);
    uint64_t cmps = 0;
    int64_t shifts = 0, sadds = 0;
    for (int b = 0; b < batch; ++b) {
      im2col(cur->data.data() + (int64_t)b * in_sz, l.in_c, l.in_h, l.in_w,
             l.ksize, cfg_.conv_pad, l.out_h, l.out_w, patches.data());
      for (int k = 0; k < l.K; ++k) {
        const double* wrow = l.W.data.data() + (int64_t)k * kv;
        double* orow = convP.data() + (int64_t)k * P;
        const double bias = l.B.data[k];
        if (xshift) {
          for (int64_t p = 0; p < P; ++p) {
            int64_t nnz = 0;
            orow[p] =
                shift_dot_wide(wrow, patches.data() + p * kv, kv, bias, &nnz);
            shifts += nnz;
            sadds += nnz;
          }
        } else {
          for (int64_t p = 0; p < P; ++p)
            orow[p] = dot_wide(wrow, patches.data() + p * kv, kv, bias);
        }
      }
      double* prow = widep.data() + (int64_t)b * pooled;
      cmps += maxpool(convP.data(), l.K, l.out_h, l.out_w, cfg_.pool_kernel,
                      cfg_.pool_stride, l.ph, l.pw, prow,
                      cache.pool_arg[ci].data() + (int64_t)b * pooled);
      uint8_t* rm = cache.relu_mask[ci].data() + (int64_t)b * pooled;
      for (int64_t i = 0; i < pooled; ++i) {
        const bool pos = prow[i] > 0.0;
        rm[i] = pos ? 1 : 0;
        if (!pos) prow[i] = 0.0;
      }
      cmps += (uint64_t)pooled;
    }
    refresh_context(lid, ParamClass::Outputs, widep.data(),
                    (int64_t)widep.size());
    cache.conv_out[ci] = Tensor({batch, pooled});
    quantize_buf(widep.data(), cache.conv_out[ci].data.data(),
                 (int64_t)widep.size(), class_repr(lid, ParamClass::Outputs),
                 mode, key4(seed_, rng_tag::quant_outputs, iter, (uint64_t)lid));
    if (tallies) {
      auto& T = (*tallies)[lid].fwd;
      const uint64_t macs = (uint64_t)batch * l.K * P * kv;
      if (xshift) {
        T.shift += (uint64_t)shifts;
        T.add += (uint64_t)sadds;
      } else {
        T.mul += macs;
        T.add += (uint64_t)batch * l.K * P * (kv - 1);
      }
      T.cmp += cmps;
      if (sa_fwd) T.scale_adjust += macs;
    }
    cur = &cache.conv_out[ci];
  }

  cache.fc_out.resize(nfc);
  cache.fc_relu_mask.resize(nfc);
  cache.drop_mask.resize(nfc);
  for (int fi = 0; fi < nfc; ++fi) {
    auto& f = fc_[fi];
    const int lid = 1 + nconv + fi;
    const bool last = (fi == nfc - 1);
    const Tensor& x = *cur;
    const int64_t sz = (int64_t)batch * f.n_out;
    std::vector<double> out((size_t)sz);
    int64_t shifts = 0, sadds = 0;
    for (int b = 0; b < batch; ++b) {
      const double* xr = x.data.data() + (int64_t)b * f.n_in;
      double* orow = out.data() + (int64_t)b * f.n_out;
      for (int o = 0; o < f.n_out; ++o) {
        const double* wrow = f.W.data.data() + (int64_t)o * f.n_in;
        if (xshift) {
          int64_t nnz = 0;
          orow[o] = shift_dot_wide(wrow, xr, f.n_in, f.B.data[o], &nnz);
          shifts += nnz;
          sadds += nnz;
        } else {
          orow[o] = dot_wide(wrow, xr, f.n_in, f.B.data[o]);
        }
      }
    }
    if (tallies) {
      auto& T = (*tallies)[lid].fwd;
      const uint64_t macs = (uint64_t)batch * f.n_out * f.n_in;
      if (xshift) {
        T.shift += (uint64_t)shifts;
        T.add += (uint64_t)sadds;
      } else {
        T.mul += macs;
        T.add += (uint64_t)batch * f.n_out * (f.n_in - 1);
      }
      if (sa_fwd) T.scale_adjust += macs;
    }
    if (last) {
      cache.logits = Tensor({batch, f.n_out});
      cache.logits.data = std::move(out);
      break;
    }
    cache.fc_relu_mask[fi].assign((size_t)sz, 0);
    for (int64_t i = 0; i < sz; ++i) {
      const bool pos = out[i] > 0.0;
      cache.fc_relu_mask[fi][i] = pos ? 1 : 0;
      if (!pos) out[i] = 0.0;
    }
    if (tallies) (*tallies)[lid].fwd.cmp += (uint64_t)sz;
    refresh_context(lid, ParamClass::Outputs, out.data(), sz);
    Tensor q({batch, f.n_out});
    const Repr orep = class_repr(lid, ParamClass::Outputs);
    quantize_buf(out.data(), q.data.data(), sz, orep, mode,
                 key4(seed_, rng_tag::quant_outputs, iter, (uint64_t)lid));
    if (train) {
      cache.drop_mask[fi].assign((size_t)sz, 0);
      const uint64_t dk = key4(seed_, rng_tag::dropout, iter, (uint64_t)lid);
      for (int64_t i = 0; i < sz; ++i) {
        const bool keep = u01_at(dk, (uint64_t)i) < cfg_.dropout_keep;
        cache.drop_mask[fi][i] = keep ? 1 : 0;
        if (!keep) q.data[i] = 0.0;
      }
      if (tallies) (*tallies)[lid].fwd.mul += (uint64_t)sz;
    } else {
      for (int64_t i = 0; i < sz; ++i)
        q.data[i] =
            quantize(q.data[i] * cfg_.dropout_keep, orep, Rounding::Nearest);
    }
    cache.fc_out[fi] = std::move(q);
    cur = &cache.fc_out[fi];
  }
  return cache;
}

double Network::softmax_xent(const Tensor& logits, const int* labels,
                             Tensor* dlogits) {
  const int64_t B = logits.shape[0];
  const int64_t C = logits.shape[1];
  if (dlogits) *dlogits = Tensor({B, C});
  std::vector<double> p((size_t)C);
  double loss = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= C)
      throw std::invalid_argument("loss: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(C) + ")");
    const double* row = logits.data.data() + b * C;
    double m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      p[c] = std::exp(row[c] - m);
      s += p[c];
    }
    for (int64_t c = 0; c < C; ++c) p[c] /= s;
    loss -= std::log(std::max(p[y], 1e-300));
    if (dlogits) {
      double* dr = dlogits->data.data() + b * C;
      for (int64_t c = 0; c < C; ++c)
        dr[c] = (p[c] - (c == y ? 1.0 : 0.0)) / (double)B;
    }
  }
  return loss / (double)B;
}

Gradients Network::backward(const BatchCache& cache, const int* labels,
                            Rounding mode, uint64_t iter,
                            std::vector<PhaseTally>* tallies) {
  if (tallies && tallies->size() < (size_t)layer_count())
    tallies->resize(layer_count());
  const int nconv = (int)conv_.size();
  const int nfc = (int)fc_.size();
  const int B = cache.B;
  Gradients g;
  g.conv_wg.resize(nconv);
  g.conv_bg.resize(nconv);
  g.fc_wg.resize(nfc);
  g.fc_bg.resize(nfc);

  const bool gshift = use_shift(scheme_.at(ParamClass::Gradients));
  const bool xpot = scheme_.at(ParamClass::Outputs).repr.is_pot();
  const bool sa_w_g = is_ctx_float(scheme_.at(ParamClass::Weights)) &&
                      is_ctx_float(scheme_.at(ParamClass::Gradients));
  const bool sa_g_o = is_ctx_float(scheme_.at(ParamClass::Gradients)) &&
                      is_ctx_float(scheme_.at(ParamClass::Outputs));

  Tensor delta;
  {
    Tensor dl;
    softmax_xent(cache.logits, labels, &dl);
    const int lid = layer_count() - 1;
    refresh_context(lid, ParamClass::Gradients, dl.data.data(), dl.numel());
    delta = Tensor({B, fc_.back().n_out});
    quantize_buf(dl.data.data(), delta.data.data(), dl.numel(),
                 class_repr(lid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)lid * 8 + 0));
  }

  for (int fi = nfc - 1; fi >= 0; --fi) {
    auto& f = fc_[fi];
    const int lid = 1 + nconv + fi;
    const Tensor& xin = (fi > 0) ? cache.fc_out[fi - 1]
                                 : (nconv > 0 ? cache.conv_out[nconv - 1]
                                              : cache.x0);
    std::vector<double> dT((size_t)((int64_t)f.n_out * B));
    std::vector<double> xT((size_t)((int64_t)f.n_in * B));
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < f.n_out; ++o)
        dT[(int64_t)o * B + b] = delta.data[(int64_t)b * f.n_out + o];
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < f.n_in; ++i)
        xT[(int64_t)i * B + b] = xin.data[(int64_t)b * f.n_in + i];

    std::vector<double> wg((size_t)((int64_t)f.n_out * f.n_in));
    std::vector<double> bg((size_t)f.n_out);
    int64_t shifts = 0, sadds = 0;
    for (int o = 0; o < f.n_out; ++o) {
      const double* drow = dT.data() + (int64_t)o * B;
      for (int i = 0; i < f.n_in; ++i) {
        const double* xrow = xT.data() + (int64_t)i * B;
        double v;
        if (gshift) {
          int64_t nnz = 0;
          v = shift_dot_wide(xrow, drow, B, 0.0, &nnz);
          if (xpot) {
            sadds += 2 * nnz;
          } else {
            shifts += nnz;
            sadds += nnz;
          }
        } else {
          v = dot_wide(drow, xrow, B, 0.0);
        }
        wg[(int64_t)o * f.n_in + i] = v;
      }
      double s = 0.0;
      for (int b = 0; b < B; ++b) s += drow[b];
      bg[o] = s;
    }
    if (tallies) {
      auto& T = (*tallies)[lid].wgrad;
      const uint64_t macs = (uint64_t)f.n_out * f.n_in * B;
      if (gshift) {
        T.shift += (uint64_t)shifts;
        T.add += (uint64_t)sadds;
      } else {
        T.mul += macs;
        T.add += (uint64_t)f.n_out * f.n_in * (B - 1);
      }
      T.add += (uint64_t)f.n_out * (B - 1);
      if (sa_g_o) T.scale_adjust += macs;
    }
    g.fc_wg[fi] = Tensor({f.n_out, f.n_in});
    quantize_buf(wg.data(), g.fc_wg[fi].data.data(), (int64_t)wg.size(),
                 class_repr(lid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)lid * 8 + 1));
    g.fc_bg[fi] = Tensor({f.n_out});
    quantize_buf(bg.data(), g.fc_bg[fi].data.data(), (int64_t)bg.size(),
                 class_repr(lid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)lid * 8 + 2));

    const bool need_eprop = (fi > 0) || (nconv > 0);
    if (!need_eprop) continue;

    std::vector<double> WT((size_t)((int64_t)f.n_in * f.n_out));
    for (int o = 0; o < f.n_out; ++o)
      for (int i = 0; i < f.n_in; ++i)
        WT[(int64_t)i * f.n_out + o] = f.W.data[(int64_t)o * f.n_in + i];
    std::vector<double> dX((size_t)((int64_t)B * f.n_in));
    int64_t eshifts = 0, eadds = 0;
    for (int b = 0; b < B; ++b) {
      const double* drow = delta.data.data() + (int64_t)b * f.n_out;
      double* dxr = dX.data() + (int64_t)b * f.n_in;
      for (int i = 0; i < f.n_in; ++i) {
        if (gshift) {
          int64_t nnz = 0;
          dxr[i] = shift_dot_wide(WT.data() + (int64_t)i * f.n_out, drow,
                                  f.n_out, 0.0, &nnz);
          eshifts += nnz;
          eadds += nnz;
        } else {
          dxr[i] =
              dot_wide(WT.data() + (int64_t)i * f.n_out, drow, f.n_out, 0.0);
        }
      }
    }
    if (tallies) {
      auto& T = (*tallies)[lid].eprop;
      const uint64_t macs = (uint64_t)B * f.n_in * f.n_out;
      if (gshift) {
        T.shift += (uint64_t)eshifts;
        T.add += (uint64_t)eadds;
      } else {
        T.mul += macs;
        T.add += (uint64_t)B * f.n_in * (f.n_out - 1);
      }
      if (sa_w_g) T.scale_adjust += macs;
    }

    const int plid = lid - 1;
    refresh_context(plid, ParamClass::Gradients, dX.data(), (int64_t)dX.size());
    Tensor nd({B, f.n_in});
    quantize_buf(dX.data(), nd.data.data(), (int64_t)dX.size(),
                 class_repr(plid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)plid * 8 + 0));
    if (fi > 0) {
      const auto& dm = cache.drop_mask[fi - 1];
      const auto& rm = cache.fc_relu_mask[fi - 1];
      if (dm.empty())
        throw std::logic_error("backward needs a training-mode forward cache");
      for (int64_t i = 0; i < nd.numel(); ++i)
        if (!dm[i] || !rm[i]) nd.data[i] = 0.0;
      if (tallies) (*tallies)[plid].eprop.mul += (uint64_t)nd.numel();
      delta = std::move(nd);
    } else {
      const int ci = nconv - 1;
      const auto& l = conv_[ci];
      const auto& rm = cache.relu_mask[ci];
      const int64_t pooled = l.pooled_elems();
      const int64_t grid = l.out_elems();
      Tensor sc({B, grid});
      for (int b = 0; b < B; ++b) {
        const int64_t base = (int64_t)b * pooled;
        double* dst = sc.data.data() + (int64_t)b * grid;
        for (int64_t j = 0; j < pooled; ++j) {
          if (!rm[base + j]) continue;
          const double d = nd.data[base + j];
          if (d != 0.0) dst[cache.pool_arg[ci][base + j]] += d;
        }
      }
      // Overlapping pool windows can merge entries during the scatter;
      // the routed grid is stored in the gradient format like any other.
      quantize_buf(sc.data.data(), sc.data.data(), sc.numel(),
                   class_repr(plid, ParamClass::Gradients), mode,
                   key4(seed_, rng_tag::quant_gradients, iter,
                        (uint64_t)plid * 8 + 3));
      delta = std::move(sc);
    }
  }

  for (int ci = nconv - 1; ci >= 0; --ci) {
    auto& l = conv_[ci];
    const int lid = 1 + ci;
    const int kv = l.kv();
    const int64_t P = (int64_t)l.out_h * l.out_w;
    const int64_t in_sz = (int64_t)l.in_c * l.in_h * l.in_w;
    const Tensor& xin = (ci > 0) ? cache.conv_out[ci - 1] : cache.x0;
    std::vector<double> patches((size_t)(P * kv));
    std::vector<double> wg((size_t)((int64_t)l.K * kv), 0.0);
    std::vector<double> bg((size_t)l.K, 0.0);
    int64_t nnz_delta = 0;
    for (int b = 0; b < B; ++b) {
      im2col(xin.data.data() + (int64_t)b * in_sz, l.in_c, l.in_h, l.in_w,
             l.ksize, cfg_.conv_pad, l.out_h, l.out_w, patches.data());
      const double* dbase = delta.data.data() + (int64_t)b * l.K * P;
      for (int k = 0; k < l.K; ++k) {
        double* acc = wg.data() + (int64_t)k * kv;
        const double* dk = dbase + (int64_t)k * P;
        double bs = 0.0;
        for (int64_t p = 0; p < P; ++p) {
          const double d = dk[p];
          bs += d;
          if (d == 0.0) continue;
          ++nnz_delta;
          const double* pr = patches.data() + p * kv;
          if (gshift) {
            for (int t = 0; t < kv; ++t)
              if (pr[t] != 0.0) acc[t] += shift_apply(pr[t], d);
          } else {
            for (int t = 0; t < kv; ++t) acc[t] += d * pr[t];
          }
        }
        bg[k] += bs;
      }
    }
    if (tallies) {
      auto& T = (*tallies)[lid].wgrad;
      const uint64_t macs = (uint64_t)B * l.K * P * kv;
      if (gshift) {
        if (xpot) {
          T.add += (uint64_t)(2 * nnz_delta) * kv;
        } else {
          T.shift += (uint64_t)nnz_delta * kv;
          T.add += (uint64_t)nnz_delta * kv;
        }
      } else {
        T.mul += macs;
        T.add += macs;
      }
      T.add += (uint64_t)l.K * ((uint64_t)B * P - 1);
      if (sa_g_o) T.scale_adjust += macs;
    }
    g.conv_wg[ci] = Tensor({l.K, kv});
    quantize_buf(wg.data(), g.conv_wg[ci].data.data(), (int64_t)wg.size(),
                 class_repr(lid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)lid * 8 + 1));
    g.conv_bg[ci] = Tensor({l.K});
    quantize_buf(bg.data(), g.conv_bg[ci].data.data(), (int64_t)bg.size(),
                 class_repr(lid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)lid * 8 + 2));

    if (ci == 0) continue;  // input gradients are never used

    std::vector<double> dX((size_t)((int64_t)B * in_sz), 0.0);
    std::vector<double> dPat((size_t)(P * kv));
    std::vector<double> padbuf(
        (size_t)((int64_t)l.in_c * (l.in_h + 2 * cfg_.conv_pad) *
                 (l.in_w + 2 * cfg_.conv_pad)));
    int64_t ennz = 0;
    for (int b = 0; b < B; ++b) {
      std::fill(dPat.begin(), dPat.end(), 0.0);
      const double* dbase = delta.data.data() + (int64_t)b * l.K * P;
      for (int k = 0; k < l.K; ++k) {
        const double* wrow = l.W.data.data() + (int64_t)k * kv;
        const double* dk = dbase + (int64_t)k * P;
        for (int64_t p = 0; p < P; ++p) {
          const double d = dk[p];
          if (d == 0.0) continue;
          ++ennz;
          double* pr = dPat.data() + p * kv;
          if (gshift) {
            for (int t = 0; t < kv; ++t)
              if (wrow[t] != 0.0) pr[t] += shift_apply(wrow[t], d);
          } else {
            for (int t = 0; t < kv; ++t) pr[t] += d * wrow[t];
          }
        }
      }
      col2im(dPat.data(), l.in_c, l.in_h, l.in_w, l.ksize, cfg_.conv_pad,
             l.out_h, l.out_w, padbuf.data(), dX.data() + (int64_t)b * in_sz);
    }
    if (tallies) {
      auto& T = (*tallies)[lid].eprop;
      const uint64_t macs = (uint64_t)B * l.K * P * kv;
      if (gshift) {
        T.shift += (uint64_t)ennz * kv;
        T.add += (uint64_t)ennz * kv + (uint64_t)B * kv * P;
      } else {
        T.mul += macs;
        T.add += macs;
      }
      if (sa_w_g) T.scale_adjust += macs;
    }

    const int plid = lid - 1;
    refresh_context(plid, ParamClass::Gradients, dX.data(), (int64_t)dX.size());
    Tensor nd({B, in_sz});
    quantize_buf(dX.data(), nd.data.data(), (int64_t)dX.size(),
                 class_repr(plid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)plid * 8 + 0));
    const auto& pl = conv_[ci - 1];
    const auto& rm = cache.relu_mask[ci - 1];
    const int64_t ppooled = pl.pooled_elems();
    const int64_t pgrid = pl.out_elems();
    Tensor sc({B, pgrid});
    for (int b = 0; b < B; ++b) {
      const int64_t base = (int64_t)b * ppooled;
      double* dst = sc.data.data() + (int64_t)b * pgrid;
      for (int64_t j = 0; j < ppooled; ++j) {
        if (!rm[base + j]) continue;
        const double d = nd.data[base + j];
        if (d != 0.0) dst[cache.pool_arg[ci - 1][base + j]] += d;
      }
    }
    quantize_buf(sc.data.data(), sc.data.data(), sc.numel(),
                 class_repr(plid, ParamClass::Gradients), mode,
                 key4(seed_, rng_tag::quant_gradients, iter,
                      (uint64_t)plid * 8 + 3));
    delta = std::move(sc);
  }
  return g;
}

void Network::sgd_step(const Gradients& g, const TrainHyper& hp, Rounding mode,
                       uint64_t iter, std::vector<PhaseTally>* tallies) {
  if (tallies && tallies->size() < (size_t)layer_count())
    tallies->resize(layer_count());
  std::vector<double> scratch;
  auto update_one = [&](Tensor& w, Tensor& u, const Tensor& grad, int lid,
                        ParamClass wc, ParamClass uc, int role) {
    const int64_t n = w.numel();
    scratch.resize((size_t)n);
    for (int64_t i = 0; i < n; ++i)
      scratch[i] = hp.momentum * u.data[i] -
                   hp.learning_rate *
                       (grad.data[i] + hp.weight_decay * w.data[i]);
    refresh_context(lid, uc, scratch.data(), n);
    quantize_buf(scratch.data(), u.data.data(), n, class_repr(lid, uc), mode,
                 key4(seed_, rng_tag::quant_updates, iter,
                      (uint64_t)lid * 8 + role));
    for (int64_t i = 0; i < n; ++i) scratch[i] = w.data[i] + u.data[i];
    refresh_context(lid, wc, scratch.data(), n);
    quantize_buf(scratch.data(), w.data.data(), n, class_repr(lid, wc), mode,
                 key4(seed_, rng_tag::quant_params, iter,
                      (uint64_t)lid * 8 + role));
    if (tallies) {
      auto& T = (*tallies)[lid].update;
      T.mul += (uint64_t)(3 * n);
      T.add += (uint64_t)(3 * n);
    }
  };
  const int nconv = (int)conv_.size();
  for (int ci = 0; ci < nconv; ++ci) {
    auto& l = conv_[ci];
    update_one(l.W, l.uW, g.conv_wg[ci], 1 + ci, ParamClass::Weights,
               ParamClass::WeightUpdates, 0);
    update_one(l.B, l.uB, g.conv_bg[ci], 1 + ci, ParamClass::Biases,
               ParamClass::BiasUpdates, 1);
  }
  for (size_t fi = 0; fi < fc_.size(); ++fi) {
    auto& f = fc_[fi];
    const int lid = 1 + nconv + (int)fi;
    update_one(f.W, f.uW, g.fc_wg[fi], lid, ParamClass::Weights,
               ParamClass::WeightUpdates, 0);
    update_one(f.B, f.uB, g.fc_bg[fi], lid, ParamClass::Biases,
               ParamClass::BiasUpdates, 1);
  }
#ifndef NDEBUG
  assert(check_conformance(nullptr) && "stored tensors left their formats");
#endif
}

void Network::predict(const double* images, int batch, int* out_labels) {
  BatchCache c =
      forward(images, batch, false, Rounding::Nearest, 0, nullptr);
  const int64_t C = c.logits.shape[1];
  for (int b = 0; b < batch; ++b) {
    const double* row = c.logits.data.data() + (int64_t)b * C;
    int best = 0;
    for (int64_t j = 1; j < C; ++j)
      if (row[j] > row[best]) best = (int)j;
    out_labels[b] = best;
  }
}

}  // namespace lpnum
