// One PASS/FAIL line per acceptance criterion; nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "helpers.hpp"
#include "wslmm/commands.hpp"
#include "wslmm/erasing.hpp"
#include "wslmm/losses.hpp"
#include "wslmm/mask_ops.hpp"
#include "wslmm/metrics.hpp"
#include "wslmm/nets.hpp"

using namespace testing;
namespace ag = wsl::ag;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

wsl::NetConfig small_net() {
  wsl::NetConfig c;
  c.in_channels = 3;
  c.classes = 2;
  c.modalities = 2;
  c.widths = {4, 6, 8};
  c.strides = {2, 2, 1};
  return c;
}

void criterion1(Outcome& o) {
  const auto t0 = Clock::now();
  std::map<std::string, int> per_kind;
  double worst = 0;
  for (const auto& c : primitive_cases(1)) {
    const auto rep = ag::grad_check(c.f, c.x, 1e-4);
    o.require(rep.passed, c.kind + " " + rep.message);
    worst = std::max(worst, rep.max_rel_error);
    ++per_kind[c.kind];
  }
  for (const auto& [kind, n] : per_kind) o.require(n >= 5, kind + " has fewer than 5 cases");
  const double secs = seconds_since(t0);
  o.require(secs <= 60.0, "suite slower than 60 s");
  o.detail << per_kind.size() << " primitives, max rel error " << worst << ", " << secs << " s";
}

void criterion2(Outcome& o) {
  o.require(wsl::loss_positive(std::vector<double>{0, 1, 0}, 1) == 0.0, "loss_positive at certainty");
  double worst_gap = 0, min_excess = 1e9;
  for (std::size_t c = 2; c <= 10; ++c) {
    const std::vector<double> u(c, 1.0 / static_cast<double>(c));
    const double gap = std::abs(wsl::loss_negative(u) - std::log(static_cast<double>(c)));
    worst_gap = std::max(worst_gap, gap);
    o.require(gap <= 1e-9, "loss_negative at uniform");
  }
  wsl::Rng rng(2);
  std::gamma_distribution<double> g(1.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t c = 2 + rep % 9;
    std::vector<double> p(c);
    double s = 0;
    for (auto& v : p) s += (v = g(rng) + 1e-12);
    for (auto& v : p) v /= s;
    const double excess = wsl::loss_negative(p) - std::log(static_cast<double>(c));
    min_excess = std::min(min_excess, excess);
    o.require(excess > 0, "loss_negative not above log c");
  }
  o.detail << "uniform gap " << worst_gap << ", min excess over 1000 draws " << min_excess;
}

void criterion3(Outcome& o) {
  wsl::Rng rng(3);
  auto cfg = small_net();
  cfg.shared_backbone = false;
  wsl::WslModel<double> m(cfg, 3);
  const std::vector<std::size_t> y{0, 1};
  auto img = V::parameter(random_tensor({2, 3, 16, 16}, rng));

  // Instrumented path: T is materialized so its gradient can be inspected.
  auto stack = m.localize(img, false, nullptr);
  auto t = wsl::aggregate_maps(stack);
  auto r = wsl::pseudo_threshold(ag::bilinear_upsample(t, 16, 16, true), 8.0, 0.5);
  auto loss = ag::add(ag::sum(wsl::loss_positive(m.classify(wsl::apply_mask(img, r)), y)),
                      ag::sum(wsl::loss_negative(m.classify(wsl::apply_mask(img, wsl::complement(r))))));
  ag::backward(loss);
  double t_mass = 0, head_mass = 0, img_mass = 0, cls_mass = 0;
  for (double v : t.grad()) t_mass += std::abs(v);
  for (const auto& p : {m.localizer_head().weight, m.localizer_head().bias})
    for (double v : p.grad()) head_mass += std::abs(v);
  for (double v : img.grad()) img_mass += std::abs(v);
  for (double v : m.classifier_weight().grad()) cls_mass += std::abs(v);
  o.require(t_mass == 0.0, "gradient reached T");
  o.require(head_mass == 0.0, "gradient reached the localizer head");
  o.require(img_mass > 0.0, "no gradient on the image");
  o.require(cls_mass > 0.0, "no gradient on the classifier");

  // Control: the same instrument sees gradient on T once the upsample is not detached.
  m.zero_grad();
  auto stack_c = m.localize(img, false, nullptr);
  auto t_c = wsl::aggregate_maps(stack_c);
  auto r_c = wsl::pseudo_threshold(ag::bilinear_upsample(t_c, 16, 16, false), 8.0, 0.5);
  ag::backward(ag::sum(wsl::loss_positive(m.classify(wsl::apply_mask(img, r_c)), y)));
  double control = 0;
  for (double v : t_c.grad()) control += std::abs(v);
  o.require(control > 0.0, "instrument cannot see gradient on T");

  // Library path.
  m.zero_grad();
  auto stack2 = m.localize(V::constant(img.value()), false, nullptr);
  auto r2 = wsl::relevance_mask(stack2, 16, 16, 8.0, 0.5);
  ag::backward(ag::sum(wsl::loss_positive(m.classify(wsl::apply_mask(V::constant(img.value()), r2)), y)));
  double lib_mass = 0;
  for (const auto& p : m.localizer_parameters())
    for (double v : p.grad()) lib_mass += std::abs(v);
  o.require(lib_mass == 0.0, "relevance_mask leaks gradient into the localizer");
  o.detail << "|dL/dT| = " << t_mass << " (undetached control " << control << "), localizer grad " << lib_mass << ", |dL/dX| = " << img_mass;
}

void criterion4(Outcome& o) {
  wsl::Rng rng(4);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t h = 1 + rep % 23, w = 1 + (rep * 7) % 19;
    auto rp = V::constant(random_tensor({h, w}, rng, 0, 1));
    auto rm = wsl::complement(rp);
    for (std::size_t i = 0; i < rp.size(); ++i)
      o.require(rp.value().data[i] + rm.value().data[i] == 1.0, "r_plus + r_minus != 1");
    const auto pm = wsl::PseudoMask<double>::from_plus(rp.value(), wsl::MaskSource::kSinglePass);
    const auto bp = pm.binarize(), bm = pm.binarize_complement();
    std::size_t l0 = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) l0 += bp.data[i] + bm.data[i];
    o.require(l0 == h * w, "|M+|_0 + |M-|_0 != h*w");
    auto x = V::constant(random_tensor({3, h, w}, rng, -5, 5));
    auto xp = wsl::apply_mask(x, rp), xm = wsl::apply_mask(x, rm);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.value().data[i];
      const double err = std::abs(xp.value().data[i] + xm.value().data[i] - v);
      const double ulp = std::numeric_limits<double>::epsilon() * std::max(std::abs(v), 1e-300);
      worst = std::max(worst, err / ulp);
      o.require(err <= 4 * ulp, "X != X*R+ + X*R-");
    }
  }
  o.detail << "200 random masks, worst reconstruction error " << worst << " ulp";
}

void criterion5(Outcome& o) {
  wsl::Rng rng(5);
  wsl::WslModel<double> m(small_net(), 5);
  const std::size_t n = 8;
  const auto x = random_tensor({n, 3, 16, 16}, rng);
  auto s0 = m.localize(V::constant(x), false, nullptr);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = s0.probs.value().data;
    y[i] = p[i * 2 + 1] > p[i * 2] ? 1 : 0;
  }
  y[n - 1] = 1 - y[n - 1];  // misclassified at t=0
  auto loc = [&](const V& in) { return m.localize(in, true, nullptr); };
  std::size_t trusted = 0, max_fwd = 0;
  for (int u : {0, 2, 4}) {
    wsl::ErasingParams p;
    p.u = u;
    p.keep_history = true;
    const auto res = wsl::run_recursive_erasing<double>(x, y, loc, p);
    for (std::size_t i = 0; i < n; ++i) {
      o.require(res.forwards[i] <= static_cast<std::size_t>(u) + 1, "more than u+1 forwards");
      max_fwd = std::max(max_fwd, res.forwards[i]);
      const auto& hist = res.history[i];
      for (std::size_t t = 1; t < hist.size(); ++t)
        for (std::size_t q = 0; q < hist[t].size(); ++q)
          o.require(hist[t].data[q] >= hist[t - 1].data[q], "accumulator decreased");
    }
    for (const auto& rec : res.log) {
      if (!rec.trusted) continue;
      ++trusted;
      o.require(rec.argmax == rec.label && rec.h_t <= rec.h_0, "trusted step violates the trust condition");
    }
    for (double v : res.masks[n - 1].r_plus.data) o.require(v == 0.0, "misclassified sample accumulated");
    o.require(res.forwards[n - 1] == 1, "misclassified sample kept erasing");
  }

  wsl::WslModel<double> a(small_net(), 9), b(small_net(), 9);
  wsl::ErasingParams p0;
  p0.u = 0;
  auto loc_a = [&](const V& in) { return a.localize(in, false, nullptr); };
  wsl::run_recursive_erasing<double>(x, y, loc_a, p0);
  auto sb = b.localize(V::constant(x), false, nullptr);
  ag::backward(ag::sum(wsl::loss_secondary(sb.probs, std::span<const std::size_t>(y))));
  const auto pa = a.localizer_parameters(), pb = b.localizer_parameters();
  bool bitwise = pa.size() == pb.size();
  for (std::size_t k = 0; bitwise && k < pa.size(); ++k) bitwise = pa[k].grad() == pb[k].grad();
  o.require(bitwise, "u=0 gradient differs from a plain backward");
  o.detail << trusted << " trusted steps checked, max forwards " << max_fwd << ", u=0 gradient bitwise "
           << (bitwise ? "equal" : "different");
}

void criterion6(Outcome& o) {
  wsl::Rng rng(6);
  std::uniform_int_distribution<std::size_t> side(1, 32);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t mismatches = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const Shape s{side(rng), side(rng)};
    const double dp = u(rng), dg = rep % 9 == 0 ? 0.0 : u(rng);
    Tensor<double> pred(s);
    Tensor<std::uint8_t> bin(s), gt(s);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred.data[i] = u(rng) < dp ? 0.5 + 0.5 * u(rng) : 0.49 * u(rng);
      bin.data[i] = pred.data[i] >= 0.5;
      gt.data[i] = u(rng) < dg;
    }
    mismatches += wsl::f1_scores(pred, gt).plus != wsl::dice_oracle(bin, gt);
  }
  o.require(mismatches == 0, "f1 differs from the dice oracle");
  double worst = 0;
  for (double a : {0.25, 0.5, 0.75}) {
    Tensor<std::uint8_t> gt({20, 20});
    for (std::size_t i = 0; i < static_cast<std::size_t>(a * 400); ++i) gt.data[i] = 1;
    const auto f = wsl::f1_scores(Tensor<double>({20, 20}, 1.0), gt);
    worst = std::max(worst, std::abs(f.plus - 2 * a / (1 + a)));
    o.require(f.minus == 0.0, "all-ones F1- not zero");
    const auto base = wsl::all_ones_baseline({gt});
    o.require(std::abs(base.plus / 100.0 - 2 * a / (1 + a)) <= 1e-9, "all-ones baseline closed form");
  }
  o.require(worst <= 1e-9, "all-ones F1+ closed form");
  o.detail << "1000 pairs, " << mismatches << " mismatches; all-ones max error " << worst;
}

const char* kTrainConfig = "lr = 0.01\nmax_epochs = 40\n";

struct RunResult {
  wsl::KeyValues summary;
  double area = 0;
};

// synth -> train -> eval -> predict (test images) through the command layer.
RunResult full_run(const fs::path& dir, const std::string& spec, const std::string& extra, bool predict) {
  std::ostringstream log;
  write(dir / "spec.txt", spec);
  if (!fs::exists(dir / "data")) wsl::cmd_synth(dir / "spec.txt", dir / "data", log);
  write(dir / "train.cfg", "data = " + (dir / "data").string() + "\nout = " + (dir / "run").string() + "\n" + extra);
  wsl::cmd_train(dir / "train.cfg", false, log);
  wsl::cmd_eval(dir / "run" / "best.ckpt", dir / "data", dir / "eval", log);
  RunResult r;
  r.summary = wsl::read_key_values(dir / "eval" / "summary.txt");
  if (predict) {
    std::vector<fs::path> images;
    for (const auto& e : fs::recursive_directory_iterator(dir / "data" / "test"))
      if (e.is_regular_file()) images.push_back(e.path());
    std::sort(images.begin(), images.end());
    wsl::cmd_predict(dir / "run" / "best.ckpt", dir / "pred", images, log);
    std::vector<double> areas;
    for (const auto& p : images) {
      const auto bin = wsl::read_image(dir / "pred" / (p.stem().string() + "_bin.png"), {64, 64});
      if (!bin) continue;
      double on = 0;
      for (std::size_t q = 0; q < 64 * 64; ++q) on += bin->data[q] > 0.5f;
      areas.push_back(on / (64.0 * 64.0));
    }
    std::sort(areas.begin(), areas.end());
    const std::size_t k = areas.size();
    r.area = k % 2 ? areas[k / 2] : 0.5 * (areas[k / 2 - 1] + areas[k / 2]);
  }
  return r;
}

double num(const wsl::KeyValues& kv, const std::string& key) { return std::stod(kv.at(key)); }

void criterion7(Outcome& o, const fs::path& root) {
  const auto t0 = Clock::now();
  const std::string spec = "classes = 2\nheight = 64\nwidth = 64\nseed = 0\nn_train = 200\nn_valid = 50\nn_test = 100\n";
  const auto r = full_run(root / "c7", spec, std::string(kTrainConfig) + "u = 4\n", false);
  const double secs = seconds_since(t0);
  const double err = num(r.summary, "classification_error"), f1p = num(r.summary, "f1_plus"),
               f1m = num(r.summary, "f1_minus"), ones = num(r.summary, "all_ones_f1_plus");
  o.require(err <= 5.0, "test error above 5%");
  o.require(f1p >= ones + 10.0, "F1+ below all-ones + 10");
  o.require(f1m >= 50.0, "F1- below 50");
  o.require(secs <= 600.0, "slower than 10 min");
  o.detail << "error " << err << "%, F1+ " << f1p << " (all-ones " << ones << "), F1- " << f1m << ", " << secs
           << " s";
}

void criterion8(Outcome& o, const fs::path& root) {
  const std::string spec =
      "classes = 2\nheight = 64\nwidth = 64\nmin_instances = 2\nmax_instances = 3\nseed = 1\n"
      "n_train = 200\nn_valid = 50\nn_test = 100\n";
  const auto a = full_run(root / "c8_u4", spec, std::string(kTrainConfig) + "u = 4\n", true);
  const auto b = full_run(root / "c8_u0", spec, std::string(kTrainConfig) + "u = 0\n", true);
  const double f4 = num(a.summary, "f1_plus"), f0 = num(b.summary, "f1_plus");
  o.require(f4 >= f0 - 1.0, "F1+(u=4) more than 1 point below F1+(u=0)");
  o.require(a.area >= b.area, "median mask area at u=4 below u=0");
  o.detail << "F1+ u=4 " << f4 << " vs u=0 " << f0 << "; median area u=4 " << a.area << " vs u=0 " << b.area;
}

void criterion9(Outcome& o, const fs::path& root) {
  const std::string spec = "classes = 2\nheight = 32\nwidth = 32\nmin_radius = 4\nmax_radius = 8\nseed = 3\n"
                           "n_train = 40\nn_valid = 10\nn_test = 20\n";
  const std::string cfg = "height = 32\nwidth = 32\nlr = 0.01\nmax_epochs = 3\nu = 4\n";
  full_run(root / "c9_a", spec, cfg, false);
  full_run(root / "c9_b", spec, cfg, false);
  std::size_t compared = 0;
  for (const char* f : {"metrics.csv", "pr_fg.csv", "pr_bg.csv", "summary.txt"}) {
    const auto pa = root / "c9_a" / "eval" / f, pb = root / "c9_b" / "eval" / f;
    if (!fs::exists(pa) && !fs::exists(pb)) continue;
    o.require(fs::exists(pa) && fs::exists(pb) && slurp(pa) == slurp(pb), std::string(f) + " differs");
    ++compared;
  }
  o.require(compared >= 2, "too few metric files");
  o.require(slurp(root / "c9_a" / "run" / "epochs.csv").size() > 0, "no epochs written");
  o.detail << compared << " files byte-identical across two runs";
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : temp_dir("acceptance");
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<int, std::function<void(Outcome&)>>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, [&](Outcome& o) { criterion7(o, root); }},
      {8, [&](Outcome& o) { criterion8(o, root); }},
      {9, [&](Outcome& o) { criterion9(o, root); }},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail.str() << std::endl;
  }
  std::cout << (failures ? "acceptance: FAIL (" + std::to_string(failures) + " criteria)" : "acceptance: PASS")
            << std::endl;
  return failures ? 1 : 0;
}
