#include "wslmm/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace wsl {

void NetConfig::validate() const {
  if (in_channels == 0) throw std::invalid_argument("net: in_channels must be positive");
  if (classes < 2) throw std::invalid_argument("net: need at least 2 classes");
  if (modalities == 0) throw std::invalid_argument("net: modalities must be positive");
  if (widths.size() < 3) throw std::invalid_argument("net: backbone needs at least 3 blocks");
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("net: zero-width backbone block");
  if (strides.size() != widths.size()) throw std::invalid_argument("net: strides and widths differ in length");
  for (auto st : strides)
    if (st != 1 && st != 2) throw std::invalid_argument("net: strides must be 1 or 2");
  if (!(kmax > 0 && kmax <= 1)) throw std::invalid_argument("net: kmax must lie in (0,1]");
  if (!(kmin > 0 && kmin <= 1)) throw std::invalid_argument("net: kmin must lie in (0,1]");
  if (!(alpha >= 0)) throw std::invalid_argument("net: alpha must be >= 0");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("net: dropout must lie in [0,1)");
}

std::size_t pool_count(double fraction, std::size_t n) {
  if (!(fraction > 0 && fraction <= 1)) {
    throw std::invalid_argument("pool_count: fraction must lie in (0,1]");
  }
  // The small slack keeps exact products such as 0.09*100 from rounding up.
  const double raw = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

template <typename T>
ag::Var<T> wildcat_pool(const ag::Var<T>& rows, double kmax, double kmin, double alpha) {
  if (rows.shape().size() != 2 || rows.shape()[1] == 0) {
    throw std::invalid_argument("wildcat_pool: expected non-empty [R,n], got " +
                                shape_str(rows.shape()));
  }
  if (!(alpha >= 0)) throw std::invalid_argument("wildcat_pool: alpha must be >= 0");
  const std::size_t n = rows.shape()[1];
  auto top = ag::topk_mean(rows, pool_count(kmax, n), true);
  if (alpha == 0.0) return top;
  auto bottom = ag::topk_mean(rows, pool_count(kmin, n), false);
  return ag::add(top, ag::affine(bottom, alpha, 0.0));
}

template <typename T>
ag::Var<T> spatial_dropout(const ag::Var<T>& map, double rate, bool train, Rng& rng) {
  if (!(rate >= 0 && rate < 1)) {
    throw std::invalid_argument("spatial_dropout: rate must lie in [0,1), got " +
                                std::to_string(rate));
  }
  if (!train || rate == 0.0) return map;
  const Shape& s = map.shape();
  Tensor<T> mask(s);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (s.size() >= 3) {
    const std::size_t outer = s[0], shared = s[1];
    const std::size_t inner = map.size() / (outer * shared);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const T v = unit(rng) < rate ? T(0) : keep_scale;
        for (std::size_t c = 0; c < shared; ++c) mask.data[(o * shared + c) * inner + i] = v;
      }
    }
  } else {
    for (auto& v : mask.data) v = unit(rng) < rate ? T(0) : keep_scale;
  }
  return ag::dropout_mask_apply(map, mask);
}

namespace {

template <typename T>
ag::Var<T> kaiming(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return ag::Var<T>::parameter(std::move(t));
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(std::size_t in_channels, const std::vector<std::size_t>& widths,
                      const std::vector<std::size_t>& strides, Rng& rng)
    : in_channels_(in_channels) {
  if (strides.size() != widths.size()) throw std::invalid_argument("backbone: one stride per block required");
  std::size_t prev = in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ConvLayer<T> layer;
    layer.weight = kaiming<T>(Shape{widths[i], prev, 3, 3}, prev * 9, rng);
    layer.bias = ag::Var<T>::parameter(Tensor<T>(Shape{widths[i]}));
    layer.stride = strides[i];
    total_stride_ *= strides[i];
    layer.pad = 1;
    layers_.push_back(std::move(layer));
    prev = widths[i];
  }
}

template <typename T>
ag::Var<T> Backbone<T>::forward(const ag::Var<T>& x) const {
  ag::Var<T> h = x;
  for (const auto& l : layers_) h = ag::relu(ag::conv2d(h, l.weight, l.bias, l.stride, l.pad));
  return h;
}

template <typename T>
WslModel<T>::WslModel(NetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  loc_backbone_ = std::make_shared<Backbone<T>>(config_.in_channels, config_.widths, config_.strides, rng);
  cls_backbone_ = config_.shared_backbone
                      ? loc_backbone_
                      : std::make_shared<Backbone<T>>(config_.in_channels, config_.widths, config_.strides, rng);
  const std::size_t feat = loc_backbone_->out_channels();
  const std::size_t maps = config_.classes * config_.modalities;
  loc_head_.weight = kaiming<T>(Shape{maps, feat, 1, 1}, feat, rng);
  loc_head_.bias = ag::Var<T>::parameter(Tensor<T>(Shape{maps}));
  cls_weight_ = kaiming<T>(Shape{config_.classes, feat}, feat, rng);
  cls_bias_ = ag::Var<T>::parameter(Tensor<T>(Shape{config_.classes}));
}

template <typename T>
void WslModel<T>::check_input(const ag::Var<T>& x, const char* who) const {
  const Shape& s = x.shape();
  if (s.size() != 4) {
    throw std::invalid_argument(std::string(who) + ": expected [N,d,h,w], got " + shape_str(s));
  }
  if (s[1] != config_.in_channels) {
    throw std::invalid_argument(std::string(who) + ": channel mismatch, image has " +
                                std::to_string(s[1]) + " channels, backbone expects " +
                                std::to_string(config_.in_channels));
  }
  if (s[2] < loc_backbone_->total_stride() || s[3] < loc_backbone_->total_stride()) {
    throw std::invalid_argument(std::string(who) + ": image " + shape_str(s) +
                                " smaller than backbone stride");
  }
}

template <typename T>
ActivationStack<T> WslModel<T>::localize(const ag::Var<T>& x, bool train, Rng* rng) {
  check_input(x, "localizer_forward");
  const std::size_t n = x.shape()[0], c = config_.classes, m = config_.modalities;
  localizer_forwards_ += n;

  auto feats = loc_backbone_->forward(x);
  auto head = ag::conv2d(feats, loc_head_.weight, loc_head_.bias, 1, 0);
  const std::size_t hh = head.shape()[2], hw = head.shape()[3];
  auto per_class = ag::mean_axis(ag::reshape(head, Shape{n * c, m, hh * hw}), 1);

  ActivationStack<T> out;
  out.maps = ag::reshape(per_class, Shape{n, c, hh, hw});
  ag::Var<T> pool_in = out.maps;
  if (train && config_.dropout > 0) {
    if (!rng) throw std::invalid_argument("localizer_forward: dropout needs an rng");
    pool_in = spatial_dropout(out.maps, config_.dropout, true, *rng);
  }
  auto scores = wildcat_pool(ag::reshape(pool_in, Shape{n * c, hh * hw}), config_.kmax,
                             config_.kmin, config_.alpha);
  out.logits = ag::reshape(scores, Shape{n, c});
  out.probs = ag::softmax(out.logits);
  return out;
}

template <typename T>
ag::Var<T> WslModel<T>::classify(const ag::Var<T>& x) {
  check_input(x, "classifier_forward");
  auto feats = cls_backbone_->forward(x);
  const Shape& s = feats.shape();
  auto pooled = ag::mean_axis(ag::reshape(feats, Shape{s[0], s[1], s[2] * s[3]}), 2);
  return ag::softmax(ag::linear(pooled, cls_weight_, cls_bias_));
}

template <typename T>
std::vector<NamedParam<T>> WslModel<T>::named_parameters() const {
  std::vector<NamedParam<T>> out;
  auto add_backbone = [&out](const Backbone<T>& b, const std::string& prefix) {
    for (std::size_t i = 0; i < b.layers().size(); ++i) {
      const std::string base = prefix + ".conv" + std::to_string(i);
      out.push_back({base + ".weight", b.layers()[i].weight, true});
      out.push_back({base + ".bias", b.layers()[i].bias, false});
    }
  };
  if (config_.shared_backbone) {
    add_backbone(*loc_backbone_, "backbone");
  } else {
    add_backbone(*loc_backbone_, "loc_backbone");
    add_backbone(*cls_backbone_, "cls_backbone");
  }
  out.push_back({"loc_head.weight", loc_head_.weight, true});
  out.push_back({"loc_head.bias", loc_head_.bias, false});
  out.push_back({"cls_head.weight", cls_weight_, true});
  out.push_back({"cls_head.bias", cls_bias_, false});
  return out;
}

template <typename T>
std::vector<ag::Var<T>> WslModel<T>::localizer_parameters() const {
  std::vector<ag::Var<T>> out;
  for (const auto& l : loc_backbone_->layers()) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(loc_head_.weight);
  out.push_back(loc_head_.bias);
  return out;
}

template <typename T>
std::vector<ag::Var<T>> WslModel<T>::classifier_parameters() const {
  std::vector<ag::Var<T>> out;
  for (const auto& l : cls_backbone_->layers()) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(cls_weight_);
  out.push_back(cls_bias_);
  return out;
}

template <typename T>
void WslModel<T>::zero_grad() {
  for (auto& p : named_parameters()) p.var.zero_grad();
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'W', 'S', 'L', 'M', 'M', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(os, bits);
}

std::uint64_t get_uint(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  if (!is.read(reinterpret_cast<char*>(b), bytes)) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::string get_bytes(std::istream& is, std::uint64_t n) {
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint: implausible length field");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put_u32(os, kVersion);
    std::string cfg;
    for (const auto& [k, v] : ckpt.config) cfg += k + "=" + v + "\n";
    put_u64(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    put_u64(os, ckpt.params.size());
    for (const auto& [name, t] : ckpt.params) {
      put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) put_u64(os, d);
      for (double v : t.data) put_f64(os, v);
    }
    os.flush();
    if (!os) {
      os.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("checkpoint: write failed for " + path.string() +
                               " (disk full?)");
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = get_uint(is, 4);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::istringstream cfg(get_bytes(is, get_uint(is, 8)));
  for (std::string line; std::getline(cfg, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = get_uint(is, 8);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_bytes(is, get_uint(is, 4));
    const auto rank = get_uint(is, 4);
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(get_uint(is, 8));
    Tensor<double> t(shape);
    for (auto& v : t.data) {
      const std::uint64_t bits = get_uint(is, 8);
      std::memcpy(&v, &bits, sizeof v);
    }
    ckpt.params.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

template <typename T>
Checkpoint make_checkpoint(const WslModel<T>& model, std::map<std::string, std::string> config) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  for (const auto& p : model.named_parameters()) {
    ckpt.params.emplace_back(p.name, p.var.value().template cast<double>());
  }
  return ckpt;
}

template <typename T>
void load_parameters(WslModel<T>& model, const Checkpoint& ckpt) {
  auto params = model.named_parameters();
  if (params.size() != ckpt.params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                             " parameter arrays, found " + std::to_string(ckpt.params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = ckpt.params[i];
    if (name != params[i].name || t.shape != params[i].var.shape()) {
      throw std::runtime_error("checkpoint: parameter " + name + " " + shape_str(t.shape) +
                               " does not match model parameter " + params[i].name + " " +
                               shape_str(params[i].var.shape()));
    }
    auto& dst = params[i].var.mutable_value().data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(t.data[j]);
  }
}

#define WSL_INSTANTIATE(T)                                                                     \
  template ag::Var<T> wildcat_pool<T>(const ag::Var<T>&, double, double, double);              \
  template ag::Var<T> spatial_dropout<T>(const ag::Var<T>&, double, bool, Rng&);               \
  template class Backbone<T>;                                                                  \
  template class WslModel<T>;                                                                  \
  template Checkpoint make_checkpoint<T>(const WslModel<T>&, std::map<std::string, std::string>); \
  template void load_parameters<T>(WslModel<T>&, const Checkpoint&);

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl
