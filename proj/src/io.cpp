#include "lpnum/io.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "lpnum/context.hpp"

namespace lpnum {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[6] = {'L', 'P', 'C', 'K', '1', '\n'};

struct NamedTensor {
  std::string name;
  Tensor* t;
};

std::vector<NamedTensor> tensor_list(Network& net) {
  std::vector<NamedTensor> v;
  auto& conv = net.conv_layers();
  for (size_t i = 0; i < conv.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1) + "/";
    v.push_back({p + "W", &conv[i].W});
    v.push_back({p + "B", &conv[i].B});
    v.push_back({p + "uW", &conv[i].uW});
    v.push_back({p + "uB", &conv[i].uB});
  }
  auto& fc = net.fc_layers();
  for (size_t i = 0; i < fc.size(); ++i) {
    const std::string p = "fc" + std::to_string(i + 1) + "/";
    v.push_back({p + "W", &fc[i].W});
    v.push_back({p + "B", &fc[i].B});
    v.push_back({p + "uW", &fc[i].uW});
    v.push_back({p + "uB", &fc[i].uB});
  }
  return v;
}

json net_config_json(const NetConfig& c) {
  json j;
  j["in_c"] = c.in_c;
  j["in_h"] = c.in_h;
  j["in_w"] = c.in_w;
  j["conv_channels"] = c.conv_channels;
  j["fc_sizes"] = c.fc_sizes;
  j["dropout_keep"] = c.dropout_keep;
  j["init_gain_conv"] = c.init_gain_conv;
  j["init_std_fc"] = c.init_std_fc;
  j["conv_kernel"] = c.conv_kernel;
  j["conv_pad"] = c.conv_pad;
  j["conv_stride"] = c.conv_stride;
  j["pool_kernel"] = c.pool_kernel;
  j["pool_stride"] = c.pool_stride;
  return j;
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  c.in_c = j.at("in_c").get<int>();
  c.in_h = j.at("in_h").get<int>();
  c.in_w = j.at("in_w").get<int>();
  c.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  c.fc_sizes = j.at("fc_sizes").get<std::vector<int>>();
  c.dropout_keep = j.at("dropout_keep").get<double>();
  c.init_gain_conv = j.at("init_gain_conv").get<double>();
  c.init_std_fc = j.at("init_std_fc").get<double>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.conv_pad = j.at("conv_pad").get<int>();
  c.conv_stride = j.at("conv_stride").get<int>();
  c.pool_kernel = j.at("pool_kernel").get<int>();
  c.pool_stride = j.at("pool_stride").get<int>();
  return c;
}

json scheme_json(const SchemeConfig& s) {
  json classes;
  for (int i = 0; i < kNumClasses; ++i)
    classes[to_string(static_cast<ParamClass>(i))] =
        class_format_name(s.cls[i]);
  json j;
  j["name"] = s.name;
  j["classes"] = classes;
  return j;
}

SchemeConfig scheme_from_json(const json& j) {
  SchemeConfig s;
  s.name = j.at("name").get<std::string>();
  const auto& classes = j.at("classes");
  for (int i = 0; i < kNumClasses; ++i)
    s.cls[i] = parse_class_format(
        classes.at(to_string(static_cast<ParamClass>(i))).get<std::string>());
  return s;
}

}  // namespace

MetricsWriter::MetricsWriter(const std::string& path)
    : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("metrics: cannot open " + path);
}

void MetricsWriter::line(const std::string& j) {
  out_ << j << '\n';
  out_.flush();
}

Histogram log2_histogram(const double* x, int64_t n) {
  Histogram h;
  h.total = (uint64_t)n;
  int lo = 0, hi = 0;
  bool any = false;
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] == 0.0) {
      ++h.zeros;
      continue;
    }
    const int e = std::ilogb(std::fabs(x[i]));
    if (!any) {
      lo = hi = e;
      any = true;
    } else {
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  }
  if (!any) return h;
  h.lo = lo;
  h.bins.assign((size_t)(hi - lo + 1), 0);
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] == 0.0) continue;
    ++h.bins[(size_t)(std::ilogb(std::fabs(x[i])) - lo)];
  }
  return h;
}

std::string histogram_json(const Histogram& h) {
  json j;
  j["lo"] = h.lo;
  j["zeros"] = h.zeros;
  j["total"] = h.total;
  j["bins"] = h.bins;
  return j.dump();
}

void save_checkpoint(const std::string& path, const Network& net,
                     uint64_t iter, int epoch) {
  auto& mut = const_cast<Network&>(net);
  auto tensors = tensor_list(mut);
  json header;
  header["scheme"] = scheme_json(net.scheme());
  header["seed"] = net.seed();
  header["iter"] = iter;
  header["epoch"] = epoch;
  header["net"] = net_config_json(net.config());
  json ctxs = json::array();
  for (int lid = 0; lid < net.layer_count(); ++lid)
    for (int c = 0; c < kNumClasses; ++c)
      if (net.context_exists(lid, static_cast<ParamClass>(c)))
        ctxs.push_back(
            {lid, c, net.context_scale(lid, static_cast<ParamClass>(c))});
  header["contexts"] = ctxs;
  json tj = json::array();
  int64_t offset = 0;
  for (const auto& nt : tensors) {
    json e;
    e["name"] = nt.name;
    e["shape"] = nt.t->shape;
    e["offset"] = offset;
    e["count"] = nt.t->numel();
    tj.push_back(e);
    offset += nt.t->numel();
  }
  header["tensors"] = tj;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), (std::streamsize)hs.size());
  for (const auto& nt : tensors)
    out.write(reinterpret_cast<const char*>(nt.t->data.data()),
              (std::streamsize)(nt.t->numel() * (int64_t)sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, Network* out,
                               KernelMode kernel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: " + path + " has a bad signature");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), (std::streamsize)hlen);
  if (in.gcount() != (std::streamsize)hlen)
    throw std::runtime_error("checkpoint: " + path + " truncated header");
  json header = json::parse(hs);

  const NetConfig cfg = net_config_from_json(header.at("net"));
  const SchemeConfig scheme = scheme_from_json(header.at("scheme"));
  CheckpointMeta meta;
  meta.scheme = scheme.name;
  meta.seed = header.at("seed").get<uint64_t>();
  meta.iter = header.at("iter").get<uint64_t>();
  meta.epoch = header.at("epoch").get<int>();

  Network net(cfg, scheme, meta.seed, kernel);
  auto tensors = tensor_list(net);
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const int64_t count = e.at("count").get<int64_t>();
    Tensor* dst = nullptr;
    for (auto& nt : tensors)
      if (nt.name == name) dst = nt.t;
    if (!dst)
      throw std::runtime_error("checkpoint: unknown tensor " + name + " in " +
                               path);
    if (dst->numel() != count)
      throw std::runtime_error(
          "checkpoint: " + name + " holds " + std::to_string(count) +
          " values, expected " + std::to_string(dst->numel()));
    in.read(reinterpret_cast<char*>(dst->data.data()),
            (std::streamsize)(count * (int64_t)sizeof(double)));
    if (in.gcount() != (std::streamsize)(count * (int64_t)sizeof(double)))
      throw std::runtime_error("checkpoint: " + path + " truncated at " + name);
  }
  for (const auto& c : header.at("contexts"))
    net.set_context_scale(c.at(0).get<int>(),
                          static_cast<ParamClass>(c.at(1).get<int>()),
                          c.at(2).get<int>());
  *out = std::move(net);
  return meta;
}

Network convert_scheme(const Network& src, const SchemeConfig& scheme,
                       KernelMode kernel) {
  Network dst(src.config(), scheme, src.seed(), kernel);
  auto& smut = const_cast<Network&>(src);
  auto from = tensor_list(smut);
  auto to = tensor_list(dst);
  for (size_t i = 0; i < from.size(); ++i) to[i].t->data = from[i].t->data;
  dst.requantize_params();
  return dst;
}

void dump_tensor(const std::string& path, const Tensor& t,
                 const std::string& format_name) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dump: cannot open " + path);
  out.write(reinterpret_cast<const char*>(t.data.data()),
            (std::streamsize)(t.numel() * (int64_t)sizeof(double)));
  if (!out) throw std::runtime_error("dump: short write to " + path);
  json side;
  side["dtype"] = "float64";
  side["byte_order"] = "little";
  side["shape"] = t.shape;
  side["count"] = t.numel();
  side["format"] = format_name;
  std::ofstream sj(path + ".json", std::ios::trunc);
  if (!sj) throw std::runtime_error("dump: cannot open " + path + ".json");
  sj << side.dump(2) << '\n';
}

Tensor load_tensor_dump(const std::string& path) {
  std::ifstream sj(path + ".json");
  if (!sj) throw std::runtime_error("dump: cannot open " + path + ".json");
  json side = json::parse(sj);
  Tensor t(side.at("shape").get<std::vector<int64_t>>());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dump: cannot open " + path);
  in.read(reinterpret_cast<char*>(t.data.data()),
          (std::streamsize)(t.numel() * (int64_t)sizeof(double)));
  if (in.gcount() != (std::streamsize)(t.numel() * (int64_t)sizeof(double)))
    throw std::runtime_error("dump: " + path + " holds fewer than " +
                             std::to_string(t.numel()) + " values");
  return t;
}

}  // namespace lpnum
