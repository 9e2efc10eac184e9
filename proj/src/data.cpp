#include "wslmm/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace wsl {

namespace fs = std::filesystem;

// ---- key=value files ------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const KeyValues& kv, const std::string& key, U fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::istringstream is(it->second);
  U v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) {
    throw std::invalid_argument("config: key '" + key + "' has invalid value '" + it->second + "'");
  }
  return v;
}

bool parse_flag(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

// ---- synthetic generator --------------------------------------------------

SynthSpec SynthSpec::from_key_values(const KeyValues& kv) {
  static const char* known[] = {"classes",         "height",         "width",
                                "min_instances",   "max_instances",  "min_radius",
                                "max_radius",      "background_noise", "background_blobs",
                                "foreground",      "seed",           "n_train",
                                "n_valid",         "n_test"};
  for (const auto& [k, v] : kv) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) ==
        std::end(known)) {
      throw std::invalid_argument("synth spec: unknown key '" + k + "'");
    }
  }
  SynthSpec s;
  s.classes = parse_number(kv, "classes", s.classes);
  s.height = parse_number(kv, "height", s.height);
  s.width = parse_number(kv, "width", s.width);
  s.min_instances = parse_number(kv, "min_instances", s.min_instances);
  s.max_instances = parse_number(kv, "max_instances", s.max_instances);
  s.min_radius = parse_number(kv, "min_radius", s.min_radius);
  s.max_radius = parse_number(kv, "max_radius", s.max_radius);
  s.background_noise = parse_number(kv, "background_noise", s.background_noise);
  s.background_blobs = parse_number(kv, "background_blobs", s.background_blobs);
  s.foreground = parse_flag(kv, "foreground", s.foreground);
  s.seed = parse_number(kv, "seed", s.seed);
  s.n_train = parse_number(kv, "n_train", s.n_train);
  s.n_valid = parse_number(kv, "n_valid", s.n_valid);
  s.n_test = parse_number(kv, "n_test", s.n_test);
  s.validate();
  return s;
}

KeyValues SynthSpec::to_key_values() const {
  return {{"classes", std::to_string(classes)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"min_instances", std::to_string(min_instances)},
          {"max_instances", std::to_string(max_instances)},
          {"min_radius", fmt(min_radius)},
          {"max_radius", fmt(max_radius)},
          {"background_noise", fmt(background_noise)},
          {"background_blobs", std::to_string(background_blobs)},
          {"foreground", foreground ? "1" : "0"},
          {"seed", std::to_string(seed)},
          {"n_train", std::to_string(n_train)},
          {"n_valid", std::to_string(n_valid)},
          {"n_test", std::to_string(n_test)}};
}

void SynthSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synth spec: need at least 2 classes");
  if (height < 8 || width < 8) throw std::invalid_argument("synth spec: image smaller than 8x8");
  if (min_instances == 0 || min_instances > max_instances) {
    throw std::invalid_argument("synth spec: instances range must satisfy 1 <= min <= max");
  }
  if (!(min_radius >= 1.0) || min_radius > max_radius) {
    throw std::invalid_argument("synth spec: radius range must satisfy 1 <= min <= max");
  }
  if (2.0 * max_radius + 1.0 > static_cast<double>(std::min(height, width))) {
    throw std::invalid_argument("synth spec: shape diameter " + fmt(2 * max_radius + 1) +
                                " larger than image " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (!(background_noise >= 0)) throw std::invalid_argument("synth spec: negative noise");
}

ClassStyle SynthSpec::style(std::size_t label) const {
  static const ClassStyle fixed[] = {
      {Texture::kStripes, ShapeFamily::kEllipse, {0.85f, 0.25f, 0.20f}, {0.55f, 0.10f, 0.15f}},
      {Texture::kChecker, ShapeFamily::kRectangle, {0.20f, 0.55f, 0.85f}, {0.10f, 0.25f, 0.55f}},
      {Texture::kDiagonal, ShapeFamily::kCross, {0.30f, 0.80f, 0.30f}, {0.10f, 0.45f, 0.15f}},
  };
  if (label < 3) return fixed[label];
  ClassStyle s;
  s.texture = static_cast<Texture>(label % 3);
  s.shape = static_cast<ShapeFamily>((label / 3) % 3);
  // Golden-angle hue walk, fully saturated.
  const double hue = std::fmod(0.1 + 0.618033988749895 * static_cast<double>(label), 1.0);
  for (int ch = 0; ch < 3; ++ch) {
    const double k = std::fmod(5.0 - 2.0 * ch + hue * 6.0, 6.0);
    const double v = 1.0 - std::clamp(std::min(k, 4.0 - k), 0.0, 1.0);
    s.color_a[ch] = static_cast<float>(0.15 + 0.75 * v);
    s.color_b[ch] = static_cast<float>(0.05 + 0.45 * v);
  }
  return s;
}

std::string SynthSpec::class_name(std::size_t label) const {
  std::ostringstream os;
  os << "class_" << std::setw(2) << std::setfill('0') << label;
  return os.str();
}

namespace {

float quantize(double v) {
  const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  return static_cast<float>(q) / 255.0f;
}

bool inside(ShapeFamily shape, double u, double v, double rx, double ry) {
  switch (shape) {
    case ShapeFamily::kEllipse:
      return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    case ShapeFamily::kRectangle:
      return std::abs(u) <= rx && std::abs(v) <= ry;
    case ShapeFamily::kCross: {
      const double arm = 0.35 * rx;
      return (std::abs(u) <= rx && std::abs(v) <= arm) || (std::abs(v) <= rx && std::abs(u) <= arm);
    }
  }
  return false;
}

bool texture_on(Texture t, std::size_t x, std::size_t y, std::size_t phase) {
  switch (t) {
    case Texture::kStripes:
      return ((y + phase) / 2) % 2 == 0;
    case Texture::kChecker:
      return (((x + phase) / 3) + ((y + phase) / 3)) % 2 == 0;
    case Texture::kDiagonal:
      return ((x + y + phase) / 3) % 2 == 0;
  }
  return false;
}

SampleRecord make_sample(const SynthSpec& spec, std::size_t label, Rng& rng, std::string id) {
  const std::size_t H = spec.height, W = spec.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> pix(3 * H * W);
  std::array<double, 3> base{};
  for (auto& b : base) b = 0.42 + 0.08 * unit(rng);
  for (std::size_t c = 0; c < 3; ++c)
    std::fill(pix.begin() + c * H * W, pix.begin() + (c + 1) * H * W, base[c]);
  for (std::size_t b = 0; b < spec.background_blobs; ++b) {
    const double cx = unit(rng) * W, cy = unit(rng) * H;
    const double s = 6.0 + 10.0 * unit(rng);
    std::array<double, 3> amp{};
    for (auto& a : amp) a = 0.3 * (unit(rng) - 0.5);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double g = std::exp(-d2 / (2 * s * s));
        for (std::size_t c = 0; c < 3; ++c) pix[(c * H + y) * W + x] += amp[c] * g;
      }
    }
  }

  Tensor<std::uint8_t> mask(Shape{H, W});
  if (spec.foreground) {
    const ClassStyle st = spec.style(label);
    std::uniform_int_distribution<std::size_t> count(spec.min_instances, spec.max_instances);
    const std::size_t k = count(rng);
    for (std::size_t inst = 0; inst < k; ++inst) {
      const double r = spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng);
      const double cx = r + unit(rng) * (W - 1 - 2 * r);
      const double cy = r + unit(rng) * (H - 1 - 2 * r);
      const double ry = r * (0.6 + 0.4 * unit(rng));
      const double theta = st.shape == ShapeFamily::kRectangle ? 0.0 : unit(rng) * std::numbers::pi;
      const std::size_t phase = static_cast<std::size_t>(unit(rng) * 6);
      const double ct = std::cos(theta), sn = std::sin(theta);
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double u = ct * dx + sn * dy, v = -sn * dx + ct * dy;
          const double ry_eff = st.shape == ShapeFamily::kCross ? r : ry;
          if (!inside(st.shape, u, v, r, ry_eff)) continue;
          mask.data[y * W + x] = 1;
          const auto& col = texture_on(st.texture, x, y, phase) ? st.color_a : st.color_b;
          for (std::size_t c = 0; c < 3; ++c) pix[(c * H + y) * W + x] = col[c];
        }
      }
    }
  }

  SampleRecord rec;
  rec.image = Tensor<float>(Shape{3, H, W});
  for (std::size_t i = 0; i < pix.size(); ++i)
    rec.image.data[i] = quantize(pix[i] + spec.background_noise * noise(rng));
  rec.label = label;
  rec.gt_mask = std::move(mask);
  rec.id = std::move(id);
  return rec;
}

std::vector<SampleRecord> make_split(const SynthSpec& spec, const std::string& name,
                                     std::size_t count, std::uint64_t stream) {
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ull + stream);
  std::vector<SampleRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream id;
    id << name << '_' << std::setw(5) << std::setfill('0') << i;
    out.push_back(make_sample(spec, i % spec.classes, rng, id.str()));
  }
  return out;
}

}  // namespace

SynthDataset gen_synthetic(const SynthSpec& spec, std::size_t n_train, std::size_t n_valid,
                           std::size_t n_test) {
  spec.validate();
  if (n_train + n_valid + n_test == 0) throw std::invalid_argument("gen_synthetic: nothing to generate");
  SynthDataset ds;
  for (std::size_t k = 0; k < spec.classes; ++k) ds.class_names.push_back(spec.class_name(k));
  ds.train = make_split(spec, "train", n_train, 1);
  ds.valid = make_split(spec, "valid", n_valid, 2);
  ds.test = make_split(spec, "test", n_test, 3);
  return ds;
}

// ---- folders --------------------------------------------------------------

namespace {

cv::Rect center_crop(int w, int h, std::size_t tw, std::size_t th) {
  const double target = static_cast<double>(tw) / static_cast<double>(th);
  const double src = static_cast<double>(w) / static_cast<double>(h);
  if (std::abs(src - target) < 1e-9) return {0, 0, w, h};
  if (src > target) {
    const int cw = std::max(1, static_cast<int>(std::lround(h * target)));
    return {(w - cw) / 2, 0, cw, h};
  }
  const int ch = std::max(1, static_cast<int>(std::lround(w / target)));
  return {0, (h - ch) / 2, w, ch};
}

cv::Mat fit(const cv::Mat& m, const LoadOptions& o, int interp) {
  const auto crop = m(center_crop(m.cols, m.rows, o.width, o.height));
  if (crop.cols == static_cast<int>(o.width) && crop.rows == static_cast<int>(o.height)) {
    return crop.clone();
  }
  cv::Mat out;
  cv::resize(crop, out, cv::Size(static_cast<int>(o.width), static_cast<int>(o.height)), 0, 0,
             interp);
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp" || ext == ".ppm" || ext == ".pgm" || ext == ".jpg" ||
         ext == ".jpeg" || ext == ".tif" || ext == ".tiff";
}

std::optional<Tensor<std::uint8_t>> read_mask(const fs::path& path, const LoadOptions& o) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) return std::nullopt;
  const cv::Mat f = fit(m, o, cv::INTER_NEAREST);
  Tensor<std::uint8_t> t(Shape{o.height, o.width});
  for (std::size_t y = 0; y < o.height; ++y)
    for (std::size_t x = 0; x < o.width; ++x)
      t.data[y * o.width + x] = f.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) >= 128;
  return t;
}

}  // namespace

std::optional<Tensor<float>> read_image(const fs::path& path, const LoadOptions& options) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return std::nullopt;
  const cv::Mat f = fit(bgr, options, cv::INTER_AREA);
  const std::size_t H = options.height, W = options.width;
  Tensor<float> t(Shape{3, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const auto px = f.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (std::size_t c = 0; c < 3; ++c)
        t.data[(c * H + y) * W + x] = static_cast<float>(px[2 - c]) / 255.0f;
    }
  }
  return t;
}

FolderDataset load_folder(const fs::path& root, const std::optional<fs::path>& masks_root,
                          const LoadOptions& options) {
  if (!fs::is_directory(root)) throw std::runtime_error("load_folder: no directory " + root.string());
  FolderDataset ds;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename() != "masks") {
      ds.class_names.push_back(e.path().filename().string());
    }
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.empty()) throw std::runtime_error("load_folder: no class directories in " + root.string());

  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    const fs::path dir = root / ds.class_names[label];
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("load_folder: empty class directory " + dir.string());
    for (const auto& f : files) {
      auto img = read_image(f, options);
      if (!img) {
        std::cerr << "warning: skipping unreadable image " << f << "\n";
        ++ds.skipped;
        continue;
      }
      SampleRecord rec;
      rec.image = std::move(*img);
      rec.label = label;
      rec.id = f.stem().string();
      if (masks_root) {
        for (const auto& cand : {*masks_root / (rec.id + ".png"), *masks_root / f.filename()}) {
          if (fs::exists(cand)) {
            rec.gt_mask = read_mask(cand, options);
            if (!rec.gt_mask) std::cerr << "warning: unreadable mask " << cand << "\n";
            break;
          }
        }
      }
      if (!rec.gt_mask) ++ds.without_mask;
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> make_splits(
    const std::vector<SampleRecord>& records, std::pair<double, double> fractions,
    std::uint64_t seed) {
  const auto [train_frac, valid_frac] = fractions;
  if (train_frac <= 0 || valid_frac <= 0 || std::abs(train_frac + valid_frac - 1.0) > 1e-9) {
    throw std::invalid_argument("make_splits: fractions must be positive and sum to 1");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train_idx, valid_idx;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) {
      throw std::invalid_argument("make_splits: class " + std::to_string(label) +
                                  " has fewer than 2 samples");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(train_frac * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    valid_idx.insert(valid_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
  for (auto i : train_idx) out.first.push_back(records[i]);
  for (auto i : valid_idx) out.second.push_back(records[i]);
  return out;
}

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& r : records) os << r.id << "\n";
  if (!os) throw std::runtime_error("write failed for manifest " + path.string());
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(is, line);) {
    line = trim(line);
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// ---- augmentation ---------------------------------------------------------

namespace {

template <typename V, typename F>
void remap_planes(std::vector<V>& data, std::size_t planes, std::size_t H, std::size_t W,
                  std::size_t outH, std::size_t outW, F src_index) {
  std::vector<V> out(data.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < outH; ++y)
      for (std::size_t x = 0; x < outW; ++x)
        out[(p * outH + y) * outW + x] = data[p * H * W + src_index(y, x)];
  data.swap(out);
}

template <typename F>
void remap(SampleRecord& r, bool swap_dims, F src_index) {
  const std::size_t d = r.image.dim(0), H = r.image.dim(1), W = r.image.dim(2);
  const std::size_t oH = swap_dims ? W : H, oW = swap_dims ? H : W;
  remap_planes(r.image.data, d, H, W, oH, oW, src_index);
  r.image.shape = {d, oH, oW};
  if (r.gt_mask) {
    remap_planes(r.gt_mask->data, 1, H, W, oH, oW, src_index);
    r.gt_mask->shape = {oH, oW};
  }
}

}  // namespace

void hflip(SampleRecord& r) {
  const std::size_t W = r.image.dim(2);
  remap(r, false, [W](std::size_t y, std::size_t x) { return y * W + (W - 1 - x); });
}

void vflip(SampleRecord& r) {
  const std::size_t H = r.image.dim(1), W = r.image.dim(2);
  remap(r, false, [H, W](std::size_t y, std::size_t x) { return (H - 1 - y) * W + x; });
}

void rot90(SampleRecord& r, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  for (int i = 0; i < k; ++i) {
    const std::size_t W = r.image.dim(2);
    // Counter-clockwise: out(y, x) = in(x, W-1-y); output is W x H.
    remap(r, true, [W](std::size_t y, std::size_t x) { return x * W + (W - 1 - y); });
  }
}

void normalize(SampleRecord& r) {
  for (auto& v : r.image.data) v = (v - 0.5f) / 0.5f;
}

SampleRecord augment_normalize(const SampleRecord& record, const AugmentOps& ops, bool train,
                               Rng& rng) {
  SampleRecord out = record;
  if (train) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (ops.hflip && unit(rng) < 0.5) hflip(out);
    if (ops.vflip && unit(rng) < 0.5) vflip(out);
    if (ops.rot90 && out.image.dim(1) == out.image.dim(2)) {
      rot90(out, static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng)));
    }
  }
  normalize(out);
  return out;
}

// ---- image files ----------------------------------------------------------

void write_image_png(const fs::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("write_image_png: expected [1|3,h,w], got " + shape_str(image.shape));
  }
  const std::size_t d = image.dim(0), H = image.dim(1), W = image.dim(2);
  cv::Mat m(static_cast<int>(H), static_cast<int>(W), d == 3 ? CV_8UC3 : CV_8UC1);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < d; ++c) {
        const float v = image.data[(c * H + y) * W + x];
        const auto q = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        if (d == 3) {
          m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x))[2 - c] = q;
        } else {
          m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) = q;
        }
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

void write_gray_png(const fs::path& path, const Tensor<std::uint8_t>& gray) {
  if (gray.rank() != 2) throw std::invalid_argument("write_gray_png: expected [h,w]");
  cv::Mat m(static_cast<int>(gray.dim(0)), static_cast<int>(gray.dim(1)), CV_8UC1);
  std::copy(gray.data.begin(), gray.data.end(), m.data);
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

void write_split(const fs::path& root, const std::string& split,
                 const std::vector<SampleRecord>& records,
                 const std::vector<std::string>& class_names) {
  for (const auto& name : class_names) fs::create_directories(root / split / name);
  fs::create_directories(root / "masks");
  for (const auto& r : records) {
    write_image_png(root / split / class_names.at(r.label) / (r.id + ".png"), r.image);
    if (r.gt_mask) {
      Tensor<std::uint8_t> m = *r.gt_mask;
      for (auto& v : m.data) v = v ? 255 : 0;
      write_gray_png(root / "masks" / (r.id + ".png"), m);
    }
  }
}

std::string content_hash(const fs::path& root) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), root).generic_string(), e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(p[i]);
      h *= 0x100000001b3ull;
    }
  };
  std::vector<char> buf(1 << 16);
  for (const auto& [rel, path] : files) {
    feed(rel.c_str(), rel.size() + 1);
    std::ifstream is(path, std::ios::binary);
    while (is.read(buf.data(), static_cast<std::streamsize>(buf.size())) || is.gcount() > 0) {
      feed(buf.data(), static_cast<std::size_t>(is.gcount()));
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace wsl
