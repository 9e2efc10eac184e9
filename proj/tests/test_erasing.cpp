#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "helpers.hpp"
#include "wslmm/erasing.hpp"
#include "wslmm/losses.hpp"
#include "wslmm/train.hpp"

using namespace testing;
namespace ag = wsl::ag;
using Stack = wsl::ActivationStack<double>;

namespace {

wsl::NetConfig tiny() {
  wsl::NetConfig c;
  c.in_channels = 3;
  c.classes = 2;
  c.modalities = 2;
  c.widths = {4, 6, 8};
  c.strides = {2, 2, 1};
  return c;
}

std::vector<std::size_t> model_argmax(wsl::WslModel<double>& m, const Tensor<double>& x) {
  auto s = m.localize(V::constant(x), false, nullptr);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    const auto& p = s.probs.value().data;
    out.push_back(p[i * 2 + 1] > p[i * 2] ? 1 : 0);
  }
  return out;
}

// Two square blobs on a zero 16x16 background: the brighter one wins the first
// localization, the dimmer one only shows up once the first is erased.
constexpr std::size_t kSide = 16;

Tensor<double> two_blob_image() {
  Tensor<double> x({1, 1, kSide, kSide}, 0.0);
  for (std::size_t y = 2; y < 7; ++y)
    for (std::size_t c = 2; c < 7; ++c) x.data[y * kSide + c] = 1.0;
  for (std::size_t y = 9; y < 14; ++y)
    for (std::size_t c = 9; c < 14; ++c) x.data[y * kSide + c] = 0.6;
  return x;
}

// Class-0 map: 4 (x - 0.7 * mean of the 16 brightest pixels) + 0.5; class-1 map: 0.
// Constant logits [3, 0].
Stack blob_localizer(const V& images) {
  const std::size_t n = images.shape()[0], hw = kSide * kSide;
  auto flat = ag::reshape(images, Shape{n, hw});
  auto top = ag::reshape(ag::topk_mean(flat, 16, true), Shape{n, 1, 1});
  auto level = ag::matmul(top, V::constant(Tensor<double>({n, 1, hw}, 1.0)));
  auto a0 = ag::affine(ag::add(ag::reshape(flat, Shape{n, 1, hw}), ag::affine(level, -0.7, 0.0)), 4.0, 0.5);
  auto a1 = V::constant(Tensor<double>({n, 1, hw}, 0.0));
  std::vector<V> parts{a0, a1};
  Stack s;
  s.maps = ag::reshape(ag::concat<double>(parts, 1), Shape{n, 2, kSide, kSide});
  Tensor<double> logits({n, 2});
  for (std::size_t i = 0; i < n; ++i) logits.data[i * 2] = 3.0;
  s.logits = V::constant(logits);
  s.probs = ag::softmax(s.logits);
  return s;
}

}  // namespace

TEST_CASE("trust coefficient") {
  const std::vector<double> p{0.2, 0.8};
  auto r0 = wsl::compute_trust(0, p, 1, 0.3, 0.3, 10.0);
  CHECK(r0.psi == 0.8);
  CHECK(r0.gamma == 0.8);
  CHECK(wsl::compute_trust(0, p, 0, 0.3, 0.3, 10.0).psi == 0.0);
  CHECK(wsl::compute_trust(2, p, 1, 0.31, 0.3, 10.0).psi == 0.0);

  const std::vector<double> sure{0.0, 1.0};
  CHECK(wsl::compute_trust(10, sure, 1, 0, 0, 10.0).psi == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(wsl::compute_trust(10, sure, 1, 0, 0, 10.0).psi == doctest::Approx(0.3679).epsilon(1e-4));

  const std::vector<double> tie{0.5, 0.5};
  CHECK(wsl::compute_trust(0, tie, 0, 0, 0, 10.0).argmax == 0);
  CHECK(wsl::compute_trust(0, tie, 1, 0, 0, 10.0).psi == 0.0);
  CHECK_THROWS_AS(wsl::compute_trust(0, p, 2, 0, 0, 10.0), std::invalid_argument);
}

TEST_CASE("accumulator update") {
  Tensor<double> acc({2}, {0.2, 0.9});
  wsl::accumulate_mask(acc, Tensor<double>({2}, {0.8, 0.4}), 0.5);
  CHECK(acc.data == std::vector<double>{0.4, 0.9});

  Tensor<double> zero({3}, 0.0);
  const Tensor<double> r({3}, {0.1, 0.7, 0.3});
  wsl::accumulate_mask(zero, r, 1.0);
  CHECK(zero == r);
  wsl::accumulate_mask(zero, Tensor<double>({3}, 1.0), 0.0);
  CHECK(zero == r);
  CHECK_THROWS_AS(wsl::accumulate_mask(zero, Tensor<double>({2}, 1.0), 0.5), std::invalid_argument);
}

TEST_CASE("negative u is rejected") {
  wsl::ErasingParams p;
  p.u = -1;
  const std::vector<std::size_t> y{0};
  CHECK_THROWS_AS(wsl::run_recursive_erasing<double>(two_blob_image(), y, blob_localizer, p),
                  std::invalid_argument);
}

TEST_CASE("erasing recovers the second blob") {
  const auto x = two_blob_image();
  const std::vector<std::size_t> y{0};
  wsl::ErasingParams p;
  p.u = 0;
  const auto once = wsl::run_recursive_erasing<double>(x, y, blob_localizer, p);
  p.u = 4;
  const auto full = wsl::run_recursive_erasing<double>(x, y, blob_localizer, p);

  const auto m0 = once.masks[0].binarize(), m4 = full.masks[0].binarize();
  std::size_t n0 = 0, n4 = 0;
  for (std::size_t i = 0; i < m0.size(); ++i) {
    CHECK(m0.data[i] <= m4.data[i]);
    n0 += m0.data[i];
    n4 += m4.data[i];
    const bool blob = x.data[i] > 0;
    CHECK(m4.data[i] == (blob ? 1 : 0));
    CHECK(m0.data[i] == (x.data[i] == 1.0 ? 1 : 0));
  }
  CHECK(n0 == 25);
  CHECK(n4 == 50);
  CHECK(once.forwards[0] == 1);
  CHECK(full.forwards[0] == 5);
}

TEST_CASE("u = 0 runs one forward and keeps psi times the first mask") {
  wsl::Rng rng(1);
  wsl::WslModel<double> m(tiny(), 3);
  const auto x = random_tensor({4, 3, 16, 16}, rng);
  const auto y = model_argmax(m, x);
  wsl::ErasingParams p;
  p.u = 0;
  auto loc = [&](const V& in) { return m.localize(in, false, nullptr); };
  const auto res = wsl::run_recursive_erasing<double>(x, y, loc, p);
  auto s = m.localize(V::constant(x), false, nullptr);
  const auto r0 = wsl::relevance_mask(s, 16, 16, p.omega, p.sigma_prime);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(res.forwards[i] == 1);
    const double psi = s.probs.value().data[i * 2 + y[i]];
    for (std::size_t q = 0; q < 256; ++q)
      CHECK(res.masks[i].r_plus.data[q] == psi * r0.value().data[i * 256 + q]);
  }
}

TEST_CASE("a sample misclassified at the first step keeps an empty accumulator") {
  wsl::Rng rng(2);
  wsl::WslModel<double> m(tiny(), 4);
  const auto x = random_tensor({3, 3, 16, 16}, rng);
  auto y = model_argmax(m, x);
  for (auto& v : y) v = 1 - v;
  wsl::ErasingParams p;
  auto loc = [&](const V& in) { return m.localize(in, false, nullptr); };
  const auto res = wsl::run_recursive_erasing<double>(x, y, loc, p);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(res.forwards[i] == 1);
    for (double v : res.masks[i].r_plus.data) CHECK(v == 0.0);
  }
}

TEST_CASE("step log, forward budget and monotone accumulators") {
  wsl::Rng rng(5);
  wsl::WslModel<double> m(tiny(), 7);
  const auto x = random_tensor({6, 3, 16, 16}, rng);
  auto y = model_argmax(m, x);
  y[5] = 1 - y[5];
  auto loc = [&](const V& in) { return m.localize(in, true, nullptr); };
  for (int u : {0, 1, 4}) {
    wsl::ErasingParams p;
    p.u = u;
    p.keep_history = true;
    const auto res = wsl::run_recursive_erasing<double>(x, y, loc, p);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(res.forwards[i] <= static_cast<std::size_t>(u) + 1);
      CHECK(res.forwards[i] >= 1);
      const auto& hist = res.history[i];
      for (std::size_t t = 1; t < hist.size(); ++t)
        for (std::size_t q = 0; q < hist[t].size(); ++q) CHECK(hist[t].data[q] >= hist[t - 1].data[q]);
    }
    std::size_t trusted = 0;
    for (const auto& r : res.log) {
      if (!r.trusted) continue;
      ++trusted;
      CHECK(r.argmax == r.label);
      CHECK(r.h_t <= r.h_0);
      CHECK(r.psi > 0);
    }
    CHECK(trusted >= 5);
  }
}

TEST_CASE("u = 0 gradient equals a plain backward bit for bit") {
  wsl::Rng rng(6);
  wsl::WslModel<double> a(tiny(), 11), b(tiny(), 11);
  const auto x = random_tensor({3, 3, 16, 16}, rng);
  const std::vector<std::size_t> y{0, 1, 1};

  wsl::ErasingParams p;
  p.u = 0;
  auto loc = [&](const V& in) { return a.localize(in, false, nullptr); };
  wsl::run_recursive_erasing<double>(x, y, loc, p);

  auto s = b.localize(V::constant(x), false, nullptr);
  ag::backward(ag::sum(wsl::loss_secondary(s.probs, std::span<const std::size_t>(y))));

  const auto pa = a.localizer_parameters(), pb = b.localizer_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    REQUIRE(pa[k].grad().size() == pb[k].grad().size());
    CHECK(pa[k].grad() == pb[k].grad());
  }
}

TEST_CASE("a non-finite value aborts with the step index") {
  const std::vector<std::size_t> y{0};
  int calls = 0;
  auto loc = [&](const V& in) {
    auto s = blob_localizer(in);
    if (++calls == 2) {
      auto maps = s.maps.value();
      maps.data[3] = std::nan("");
      s.maps = V::constant(maps);
    }
    return s;
  };
  wsl::ErasingParams p;
  try {
    wsl::run_recursive_erasing<double>(two_blob_image(), y, loc, p);
    FAIL("non-finite map accepted");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("inference runs the localizer once per image") {
  wsl::HyperConfig cfg;
  cfg.widths = {4, 6, 8};
  cfg.strides = {2, 2, 1};
  cfg.modalities = 2;
  cfg.batch_size = 3;
  cfg.u = 4;
  wsl::Trainer<double> trainer(cfg, 2, 3);
  wsl::Rng rng(3);
  std::vector<wsl::SampleRecord> recs(7);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].image = random_tensor({3, 16, 16}, rng, 0, 1).cast<float>();
    recs[i].label = i % 2;
    recs[i].id = "s" + std::to_string(i);
  }
  const auto pred = trainer.predict(recs, true);
  CHECK(pred.localizer_forwards == recs.size());
  CHECK(pred.labels.size() == recs.size());
  CHECK(pred.losses.size() == recs.size());
}
