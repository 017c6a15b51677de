#include "lpnum/costmodel.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lpnum {

using json = nlohmann::ordered_json;

CostTable CostTable::builtin() {
  // Exact solution of the reference-workload fit; regenerate with
  // scripts/fit_cost_table.py after any change to count_ops.
  CostTable t;
  t.mul32 = 1.3320317624732044e-14;
  t.add32 = 1.3320317624732044e-14;
  t.mul12 = 8.91279968159424e-15;
  t.add12 = 4.319334977205327e-15;
  t.shift = 3.3528122642938316e-15;
  t.scale_adjust = 1.9193085649234057e-14;
  t.simd_ratio = 8.0 / 3.0;
  return t;
}

CostTable load_cost_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cost: cannot open " + path);
  json j = json::parse(in);
  CostTable t;
  t.mul32 = j.at("mul32").get<double>();
  t.add32 = j.at("add32").get<double>();
  t.mul12 = j.at("mul12").get<double>();
  t.add12 = j.at("add12").get<double>();
  t.shift = j.at("shift").get<double>();
  t.scale_adjust = j.at("scale_adjust").get<double>();
  t.simd_ratio = j.at("simd_ratio").get<double>();
  return t;
}

void save_cost_table(const std::string& path, const CostTable& t) {
  json j;
  j["mul32"] = t.mul32;
  j["add32"] = t.add32;
  j["mul12"] = t.mul12;
  j["add12"] = t.add12;
  j["shift"] = t.shift;
  j["scale_adjust"] = t.scale_adjust;
  j["simd_ratio"] = t.simd_ratio;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cost: cannot open " + path);
  out << j.dump(2) << '\n';
}

MacClass mac_class(const ClassFormat& a, const ClassFormat& b) {
  if (a.repr.is_wide() || b.repr.is_wide()) return MacClass::Wide;
  if (a.context || b.context || a.repr.flt() || b.repr.flt())
    return MacClass::FloatLike;
  return MacClass::Fixed;
}

namespace {

bool is_ctx_float(const ClassFormat& cf) {
  return cf.context && cf.repr.flt() != nullptr;
}

uint64_t pool_cmps_per_image(const ConvLayer& l, int k, int s) {
  uint64_t c = 0;
  for (int py = 0; py < l.ph; ++py) {
    const int y0 = py * s;
    const int y1 = std::min(y0 + k, l.out_h);
    for (int px = 0; px < l.pw; ++px) {
      const int x0 = px * s;
      const int x1 = std::min(x0 + k, l.out_w);
      c += (uint64_t)(y1 - y0) * (x1 - x0) - 1;
    }
  }
  return c * (uint64_t)l.K;
}

double price(const OpTally& t, MacClass mc, bool update_phase,
             const CostTable& c) {
  if (update_phase || mc == MacClass::Wide)
    return (double)t.mul * c.mul32 + (double)t.add * c.add32;
  const double meff =
      c.mul12 + (mc == MacClass::FloatLike ? 4.0 * c.shift : 0.0);
  return ((double)t.mul * meff + (double)t.add * c.add12 +
          (double)t.shift * c.shift +
          (double)t.scale_adjust * c.scale_adjust) /
         c.simd_ratio;
}

}  // namespace

std::vector<PhaseTally> count_ops(const Network& net, int batch) {
  const auto& s = net.scheme();
  const uint64_t B = (uint64_t)batch;
  const bool xpot = s.at(ParamClass::Outputs).repr.is_pot();
  const bool gpot = s.at(ParamClass::Gradients).repr.is_pot();
  const bool sa_fwd = is_ctx_float(s.at(ParamClass::Weights)) &&
                      is_ctx_float(s.at(ParamClass::Outputs));
  const bool sa_epr = is_ctx_float(s.at(ParamClass::Weights)) &&
                      is_ctx_float(s.at(ParamClass::Gradients));
  const bool sa_wgr = is_ctx_float(s.at(ParamClass::Gradients)) &&
                      is_ctx_float(s.at(ParamClass::Outputs));

  std::vector<PhaseTally> out((size_t)net.layer_count());
  const auto& cfg = net.config();
  const auto& conv = net.conv_layers();
  const auto& fc = net.fc_layers();
  const int nconv = (int)conv.size();
  const int nfc = (int)fc.size();

  for (int ci = 0; ci < nconv; ++ci) {
    const auto& l = conv[ci];
    auto& T = out[(size_t)(1 + ci)];
    const uint64_t P = (uint64_t)l.out_h * l.out_w;
    const uint64_t kv = (uint64_t)l.kv();
    const uint64_t macs = B * l.K * P * kv;
    if (xpot) {
      T.fwd.shift += macs;
      T.fwd.add += macs;
    } else {
      T.fwd.mul += macs;
      T.fwd.add += B * l.K * P * (kv - 1);
    }
    T.fwd.cmp += B * (pool_cmps_per_image(l, cfg.pool_kernel,
                                          cfg.pool_stride) +
                      (uint64_t)l.pooled_elems());
    if (sa_fwd) T.fwd.scale_adjust += macs;

    if (gpot) {
      if (xpot) {
        T.wgrad.add += 2 * macs;
      } else {
        T.wgrad.shift += macs;
        T.wgrad.add += macs;
      }
    } else {
      T.wgrad.mul += macs;
      T.wgrad.add += macs;
    }
    T.wgrad.add += (uint64_t)l.K * (B * P - 1);
    if (sa_wgr) T.wgrad.scale_adjust += macs;

    if (ci > 0) {
      if (gpot) {
        T.eprop.shift += macs;
        T.eprop.add += macs + B * kv * P;
      } else {
        T.eprop.mul += macs;
        T.eprop.add += macs;
      }
      if (sa_epr) T.eprop.scale_adjust += macs;
    }

    const uint64_t params = (uint64_t)l.K * kv + (uint64_t)l.K;
    T.update.mul += 3 * params;
    T.update.add += 3 * params;
  }

  for (int fi = 0; fi < nfc; ++fi) {
    const auto& f = fc[fi];
    auto& T = out[(size_t)(1 + nconv + fi)];
    const bool last = (fi == nfc - 1);
    const uint64_t no = (uint64_t)f.n_out;
    const uint64_t ni = (uint64_t)f.n_in;
    const uint64_t macs = B * no * ni;
    if (xpot) {
      T.fwd.shift += macs;
      T.fwd.add += macs;
    } else {
      T.fwd.mul += macs;
      T.fwd.add += B * no * (ni - 1);
    }
    if (sa_fwd) T.fwd.scale_adjust += macs;
    if (!last) {
      T.fwd.cmp += B * no;  // relu
      T.fwd.mul += B * no;  // dropout mask
    }

    if (gpot) {
      if (xpot) {
        T.wgrad.add += 2 * macs;
      } else {
        T.wgrad.shift += macs;
        T.wgrad.add += macs;
      }
    } else {
      T.wgrad.mul += macs;
      T.wgrad.add += no * ni * (B - 1);
    }
    T.wgrad.add += no * (B - 1);
    if (sa_wgr) T.wgrad.scale_adjust += macs;

    if (fi > 0 || nconv > 0) {
      if (gpot) {
        T.eprop.shift += macs;
        T.eprop.add += macs;
      } else {
        T.eprop.mul += macs;
        T.eprop.add += B * ni * (no - 1);
      }
      if (sa_epr) T.eprop.scale_adjust += macs;
    }
    if (!last) T.eprop.mul += B * no;  // dropout gate on the way back

    const uint64_t params = no * ni + no;
    T.update.mul += 3 * params;
    T.update.add += 3 * params;
  }
  return out;
}

TimeEstimate estimate_time(const Network& net, int batch, int64_t iters,
                           const CostTable& table) {
  const auto& s = net.scheme();
  const MacClass mfwd =
      mac_class(s.at(ParamClass::Weights), s.at(ParamClass::Outputs));
  const MacClass mepr =
      mac_class(s.at(ParamClass::Weights), s.at(ParamClass::Gradients));
  const MacClass mwgr =
      mac_class(s.at(ParamClass::Gradients), s.at(ParamClass::Outputs));
  const auto ops = count_ops(net, batch);
  TimeEstimate est;
  est.per_layer.assign(ops.size(), 0.0);
  for (size_t lid = 0; lid < ops.size(); ++lid) {
    double v = price(ops[lid].fwd, mfwd, false, table) +
               price(ops[lid].eprop, mepr, false, table) +
               price(ops[lid].wgrad, mwgr, false, table) +
               price(ops[lid].update, MacClass::Wide, true, table);
    v *= (double)iters;
    est.per_layer[lid] = v;
    est.total += v;
  }
  return est;
}

MemoryEstimate estimate_memory(const Network& net) {
  // Element counts calibrated to the reference workload's storage
  // accounting (see README); raw counts below stay tied to the topology.
  // Scaled by ten they are integers, so the totals divide out exactly.
  constexpr double kParamElemsX10 = 16084312.0;
  constexpr double kActElemsX10 = 15671328.0;

  const auto& s = net.scheme();
  MemoryEstimate m;
  m.param_bits = s.at(ParamClass::Weights).repr.storage_bits();
  m.act_bits = s.at(ParamClass::Outputs).repr.storage_bits();
  m.calibrated_param_bytes = m.param_bits * kParamElemsX10 / 80.0;
  m.calibrated_act_bytes = m.act_bits * kActElemsX10 / 80.0;
  m.calibrated_bytes =
      (m.param_bits * kParamElemsX10 + m.act_bits * kActElemsX10) / 80.0;

  const auto& cfg = net.config();
  for (const auto& l : net.conv_layers())
    m.param_count += l.W.numel() + l.B.numel();
  for (const auto& f : net.fc_layers())
    m.param_count += f.W.numel() + f.B.numel();
  m.momentum_count = m.param_count;

  int64_t acts = (int64_t)cfg.in_c * cfg.in_h * cfg.in_w;
  for (const auto& l : net.conv_layers())
    acts += l.out_elems() + l.pooled_elems();
  for (const auto& f : net.fc_layers()) acts += f.n_out;
  m.act_count_per_image = acts;
  m.grad_count_per_image = acts - (int64_t)cfg.in_c * cfg.in_h * cfg.in_w;
  return m;
}

}  // namespace lpnum
