#include "lpnum/conformance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <vector>

#include "lpnum/kernels.hpp"
#include "lpnum/net.hpp"
#include "lpnum/rng.hpp"

namespace lpnum {

namespace {

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

bool same_bits(double a, double b) {
  return std::bit_cast<uint64_t>(a) == std::bit_cast<uint64_t>(b);
}

}  // namespace

std::vector<Repr> conformance_formats() {
  return {
      Repr::fixed(0, 12),
      Repr::fixed(6, 6),
      Repr::fixed(0, 12, -4),
      Repr::flt(5, 6),
      Repr::flt(4, 7),
      Repr{FloatFormat::make_relative(4, 7), 0},
      Repr::flt(6, 0),
  };
}

CheckResult check_codepoints(const Repr& r) {
  CheckResult res{"codepoints " + format_name(r), false, ""};
  auto pts = enumerate_codepoints(r);
  auto fail = [&](const std::string& d) {
    res.detail = d;
    return res;
  };

  if (pts.size() < 3) return fail("suspiciously small enumeration");
  for (size_t i = 1; i < pts.size(); ++i)
    if (!(pts[i - 1] < pts[i]))
      return fail(fmt("enumeration not strictly ascending at %zu", i));

  auto zit = std::lower_bound(pts.begin(), pts.end(), 0.0);
  if (zit == pts.end() || *zit != 0.0) return fail("zero is not on the grid");
  if (std::signbit(*zit)) return fail("grid zero is negative");
  auto zpos = static_cast<int64_t>(zit - pts.begin());

  if (parse_repr(format_name(r)) != r)
    return fail("format name does not round-trip: " + format_name(r));

  const Rounding modes[3] = {Rounding::Nearest, Rounding::Stochastic,
                             Rounding::Truncate};
  for (double v : pts) {
    if (!representable(v, r)) return fail(fmt("%.17g not representable", v));
    for (Rounding m : modes) {
      double q = quantize(v, r, m, 0.7);
      if (q != v || (q == 0.0 && std::signbit(q)))
        return fail(fmt("codepoint %.17g moved to %.17g", v, q));
    }
  }

  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    double a = pts[i], b = pts[i + 1];
    double m = 0.5 * (a + b);
    if (representable(m, r))
      return fail(fmt("midpoint %.17g claims representable", m));

    int64_t sa = static_cast<int64_t>(i) - zpos;
    double even = (((sa % 2) + 2) % 2 == 0) ? a : b;
    double qn = quantize(m, r, Rounding::Nearest);
    if (qn != even)
      return fail(fmt("tie at %.17g went to %.17g, expected %.17g (index %lld)",
                      m, qn, even, static_cast<long long>(sa)));
    // The lowest fixed-point interval has no mirror image; its negated
    // midpoint sits past +max and saturates.
    if (-m <= pts.back()) {
      double qnm = quantize(-m, r, Rounding::Nearest);
      if (qnm != -even && !(even == 0.0 && qnm == 0.0))
        return fail(fmt("tie at %.17g broke sign symmetry", -m));
    }

    if (quantize(m, r, Rounding::Truncate) != a)
      return fail(fmt("truncate at %.17g missed lower neighbor", m));
    if (quantize(m, r, Rounding::Stochastic, 0.25) != b ||
        quantize(m, r, Rounding::Stochastic, 0.75) != a)
      return fail(fmt("stochastic halves wrong at %.17g", m));

    double q1 = a + 0.25 * (b - a);
    double q3 = a + 0.75 * (b - a);
    if (quantize(q1, r, Rounding::Nearest) != a ||
        quantize(q3, r, Rounding::Nearest) != b)
      return fail(fmt("nearest missed closer neighbor near %.17g", m));
    if (quantize(q1, r, Rounding::Truncate) != a ||
        quantize(q3, r, Rounding::Truncate) != a)
      return fail(fmt("truncate not monotone near %.17g", m));
  }

  double top = pts.back(), bot = pts.front();
  for (Rounding m : modes) {
    if (quantize(top * 4.0, r, m, 0.3) != top)
      return fail("positive overflow did not saturate");
    if (quantize(bot * 4.0, r, m, 0.3) != bot)
      return fail("negative overflow did not saturate");
  }
  if (!same_bits(quantize(-0.0, r, Rounding::Nearest), 0.0))
    return fail("negative zero not canonicalized");

  res.pass = true;
  res.detail = fmt("%zu codepoints", pts.size());
  return res;
}

CheckResult check_stochastic_unbiased(const Repr& r, int points, int draws,
                                      double nsigma, uint64_t seed) {
  CheckResult res{"stochastic-unbiased " + format_name(r), false, ""};
  uint64_t pk = derive(seed, 0xA11CE);
  double mx = r.max_value();
  int tested = 0;
  uint64_t attempt = 0;
  uint64_t cap = static_cast<uint64_t>(points) * 64 + 1024;
  double worst_z = 0.0;

  while (tested < points && attempt < cap) {
    double u = u01_at(pk, attempt);
    ++attempt;
    Neighbors nb = grid_neighbors((2.0 * u - 1.0) * mx, r);
    double x = (2.0 * u - 1.0) * mx;
    if (!(nb.hi > nb.lo) || x <= nb.lo || x >= nb.hi) continue;
    double p = (x - nb.lo) / (nb.hi - nb.lo);

    uint64_t dk = derive(derive(seed, 0xD0), attempt);
    int64_t nhi = 0;
    for (int d = 0; d < draws; ++d) {
      double q = quantize(x, r, Rounding::Stochastic, u01_at(dk, d));
      if (q == nb.hi) {
        ++nhi;
      } else if (q != nb.lo) {
        res.detail = fmt("draw left the bracket at x=%.17g (got %.17g)", x, q);
        return res;
      }
    }
    double phat = static_cast<double>(nhi) / draws;
    double sigma = std::sqrt(p * (1.0 - p) / draws);
    double z = std::fabs(phat - p) / sigma;
    worst_z = std::max(worst_z, z);
    if (std::fabs(phat - p) > nsigma * sigma + 1.0 / draws) {
      res.detail = fmt("x=%.17g p=%.6f phat=%.6f z=%.2f", x, p, phat, z);
      return res;
    }
    ++tested;
  }
  if (tested < points) {
    res.detail = fmt("only found %d off-grid points", tested);
    return res;
  }
  res.pass = true;
  res.detail = fmt("%d points x %d draws, worst z=%.2f", points, draws, worst_z);
  return res;
}

CheckResult check_shift_identity(int pairs, int maxlen, uint64_t seed) {
  CheckResult res{"shift-equals-multiply", false, ""};
  auto pot = enumerate_codepoints(Repr::flt(6, 0));
  uint64_t lk = derive(seed, 0x51);
  std::vector<double> a, y;
  for (int t = 0; t < pairs; ++t) {
    auto n = static_cast<int64_t>(1 + bounded_at(lk, t, maxlen));
    a.resize(n);
    y.resize(n);
    uint64_t ka = derive(derive(seed, 0x52), t);
    uint64_t ky = derive(derive(seed, 0x53), t);
    for (int64_t i = 0; i < n; ++i) {
      auto code =
          static_cast<int64_t>(bounded_at(ka, i, 4096)) - 2048;  // fixed[0,12]
      a[i] = std::ldexp(static_cast<double>(code), -12);
      // one in five exactly zero, the rest drawn from the pot grid
      y[i] = bounded_at(ky, 2 * i, 5) == 0
                 ? 0.0
                 : pot[bounded_at(ky, 2 * i + 1, pot.size())];
    }
    double init = std::ldexp(u01_at(derive(seed, 0x54), t) - 0.5, -3);
    double mul = dot_wide(a.data(), y.data(), n, init);
    double shf = shift_dot_wide(a.data(), y.data(), n, init, nullptr);
    if (!same_bits(mul, shf)) {
      res.detail = fmt("pair %d (n=%lld): multiply %.17g vs shift %.17g", t,
                       static_cast<long long>(n), mul, shf);
      return res;
    }
  }
  res.pass = true;
  res.detail = fmt("%d random vectors bit-identical", pairs);
  return res;
}

CheckResult check_gradients(uint64_t seed) {
  CheckResult res{"gradient-check", false, ""};
  NetConfig cfg;
  cfg.in_c = 2;
  cfg.in_h = 6;
  cfg.in_w = 6;
  cfg.conv_channels = {2};
  cfg.fc_sizes = {5, 3};
  cfg.dropout_keep = 1.0;
  cfg.init_gain_conv = 0.3;
  cfg.init_std_fc = 0.3;

  SchemeConfig wideall = SchemeConfig::preset("fp32-baseline");
  Network net(cfg, wideall, seed, KernelMode::Auto);
  net.init_params();

  const int B = 3;
  std::vector<double> images(static_cast<size_t>(B) * cfg.in_c * cfg.in_h *
                             cfg.in_w);
  uint64_t ik = derive(seed, 0x61);
  for (size_t i = 0; i < images.size(); ++i) images[i] = u01_at(ik, i);
  std::vector<int> labels(B);
  for (int i = 0; i < B; ++i)
    labels[i] = static_cast<int>(bounded_at(derive(seed, 0x62), i, 3));

  auto loss_at = [&]() {
    BatchCache c = net.forward(images.data(), B, true, Rounding::Nearest, 0,
                               nullptr);
    return Network::softmax_xent(c.logits, labels.data(), nullptr);
  };

  BatchCache cache =
      net.forward(images.data(), B, true, Rounding::Nearest, 0, nullptr);
  Gradients g = net.backward(cache, labels.data(), Rounding::Nearest, 0,
                             nullptr);

  struct Slot {
    std::string name;
    double* param;
    const double* analytic;
    int64_t n;
  };
  std::vector<Slot> slots;
  for (size_t ci = 0; ci < net.conv_layers().size(); ++ci) {
    auto& l = net.conv_layers()[ci];
    slots.push_back({"conv" + std::to_string(ci + 1) + "/W", l.W.ptr(),
                     g.conv_wg[ci].ptr(), l.W.numel()});
    slots.push_back({"conv" + std::to_string(ci + 1) + "/B", l.B.ptr(),
                     g.conv_bg[ci].ptr(), l.B.numel()});
  }
  for (size_t fi = 0; fi < net.fc_layers().size(); ++fi) {
    auto& l = net.fc_layers()[fi];
    slots.push_back({"fc" + std::to_string(fi + 1) + "/W", l.W.ptr(),
                     g.fc_wg[fi].ptr(), l.W.numel()});
    slots.push_back({"fc" + std::to_string(fi + 1) + "/B", l.B.ptr(),
                     g.fc_bg[fi].ptr(), l.B.numel()});
  }

  const double h = 1e-5;
  double worst = 0.0;
  int checked = 0;
  for (size_t si = 0; si < slots.size(); ++si) {
    const Slot& s = slots[si];
    uint64_t sk = derive(derive(seed, 0x63), si);
    int samples = static_cast<int>(std::min<int64_t>(12, s.n));
    for (int t = 0; t < samples; ++t) {
      auto idx = static_cast<int64_t>(bounded_at(sk, t, s.n));
      double orig = s.param[idx];
      s.param[idx] = orig + h;
      double lp = loss_at();
      s.param[idx] = orig - h;
      double lm = loss_at();
      s.param[idx] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = s.analytic[idx];
      double rel = std::fabs(fd - an) / std::max(1e-6, std::fabs(fd) + std::fabs(an));
      worst = std::max(worst, rel);
      ++checked;
      if (rel >= 1e-4) {
        res.detail = fmt("%s[%lld]: analytic %.10g vs fd %.10g (rel %.3g)",
                         s.name.c_str(), static_cast<long long>(idx), an, fd,
                         rel);
        return res;
      }
    }
  }
  res.pass = true;
  res.detail = fmt("%d parameters, worst rel err %.3g", checked, worst);
  return res;
}

std::vector<CheckResult> run_conformance(int level) {
  std::vector<CheckResult> out;
  int points = level > 0 ? 1000 : 120;
  int draws = level > 0 ? 100000 : 20000;
  int pairs = level > 0 ? 10000 : 500;

  for (const Repr& r : conformance_formats()) out.push_back(check_codepoints(r));
  for (const Repr& r : conformance_formats())
    out.push_back(check_stochastic_unbiased(r, points, draws, 4.0, 20260816));
  out.push_back(check_shift_identity(pairs, 512, 7));
  out.push_back(check_gradients(4));
  return out;
}

}  // namespace lpnum
