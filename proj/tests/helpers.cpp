#include "helpers.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <unistd.h>

namespace testing {

namespace ag = wsl::ag;

namespace {

Tensor<double> offset_grid(Shape s, wsl::Rng& rng) {
  // Entries +-(0.1 j + 0.05): never within 0.05 of a separated_tensor(gap 0.1) entry.
  Tensor<double> t(std::move(s));
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) + 0.05;
  std::shuffle(v.begin(), v.end(), rng);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = sign(rng) ? v[i] : -v[i];
  return t;
}

}  // namespace

std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed) {
  std::vector<PrimitiveCase> out;
  wsl::Rng rng(seed);
  auto add_case = [&](const std::string& kind, std::function<V(const V&)> op, Tensor<double> x) {
    out.push_back({kind, weighted(std::move(op), rng()), std::move(x)});
  };

  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t n = 1 + i % 2, c = 1 + i % 3, o = 2 + i % 2, k = i == 4 ? 1 : 3;
    const std::size_t stride = 1 + i % 2, pad = i % 2;
    const Shape xs{n, c, 4 + i % 3, 5}, ws{o, c, k, k};
    auto other_b = V::constant(random_tensor(Shape{o}, rng));
    if (i % 2 == 0) {
      auto w = V::constant(random_tensor(ws, rng));
      add_case("conv2d", [=](const V& x) { return ag::conv2d(x, w, other_b, stride, pad); },
               random_tensor(xs, rng));
    } else {
      auto x = V::constant(random_tensor(xs, rng));
      add_case("conv2d", [=](const V& w) { return ag::conv2d(x, w, other_b, stride, pad); },
               random_tensor(ws, rng));
    }
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t n = 1 + i, f = 2 + i % 3, o = 1 + i % 4;
    if (i % 3 == 0) {
      auto w = V::constant(random_tensor(Shape{o, f}, rng));
      auto b = V::constant(random_tensor(Shape{o}, rng));
      add_case("linear", [=](const V& x) { return ag::linear(x, w, b); }, random_tensor(Shape{n, f}, rng));
    } else if (i % 3 == 1) {
      auto x = V::constant(random_tensor(Shape{n, f}, rng));
      add_case("linear", [=](const V& w) { return ag::linear(x, w, V()); }, random_tensor(Shape{o, f}, rng));
    } else {
      auto x = V::constant(random_tensor(Shape{n, f}, rng));
      auto w = V::constant(random_tensor(Shape{o, f}, rng));
      add_case("linear", [=](const V& b) { return ag::linear(x, w, b); }, random_tensor(Shape{o}, rng));
    }
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t b = 1 + i % 2, m = 1 + i, kk = 2 + i % 3, p = 3;
    auto other = V::constant(random_tensor(i % 2 ? Shape{b, m, kk} : Shape{b, kk, p}, rng));
    if (i % 2) {
      add_case("matmul", [=](const V& x) { return ag::matmul(other, x); }, random_tensor(Shape{b, kk, p}, rng));
    } else {
      add_case("matmul", [=](const V& x) { return ag::matmul(x, other); }, random_tensor(Shape{b, m, kk}, rng));
    }
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const Shape s{2 + i, 3};
    add_case("relu", [](const V& x) { return ag::relu(x); }, separated_tensor(s, rng));
    add_case("sigmoid", [](const V& x) { return ag::sigmoid(x); }, random_tensor(s, rng, -3, 3));
    add_case("log", [](const V& x) { return ag::log(x); }, random_tensor(s, rng, 0.2, 2.0));
    add_case("exp", [](const V& x) { return ag::exp(x); }, random_tensor(s, rng, -2, 2));
    add_case("softmax", [](const V& x) { return ag::softmax(x); }, random_tensor(s, rng, -2, 2));
    add_case("affine", [i](const V& x) { return ag::affine(x, -1.5 + 0.7 * i, 0.3); }, random_tensor(s, rng));
    auto other = V::constant(random_tensor(s, rng));
    add_case("add", [=](const V& x) { return ag::add(x, other); }, random_tensor(s, rng));
    add_case("mul", [=](const V& x) { return ag::mul(other, x); }, random_tensor(s, rng));
    auto grid = V::constant(offset_grid(s, rng));
    if (i % 2) {
      add_case("maximum", [=](const V& x) { return ag::maximum(x, grid); }, separated_tensor(s, rng, 0.1));
    } else {
      add_case("maximum", [=](const V& x) { return ag::maximum(grid, x); }, separated_tensor(s, rng, 0.1));
    }
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const Shape s{2, 1 + i, 3 + i % 2};
    add_case("spatial-avg", [i](const V& x) { return ag::mean_axis(x, i % 3); }, random_tensor(s, rng));
    add_case("sum", [i](const V& x) { return ag::sum_axis(x, (i + 1) % 3); }, random_tensor(s, rng));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t rows = 1 + i % 3, n = 4 + i;
    const std::size_t k = 1 + i % n;
    const bool largest = i % 2 == 0;
    add_case("top-k-mean", [=](const V& x) { return ag::topk_mean(x, k, largest); },
             separated_tensor(Shape{rows, n}, rng));
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t h = 1 + i % 3, w = 2 + i % 2;
    const std::size_t oh = h + 1 + i, ow = w + 2;
    add_case("bilinear-upsample", [=](const V& x) { return ag::bilinear_upsample(x, oh, ow, false); },
             random_tensor(Shape{2, h, w}, rng));
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const Shape s{2, 3, 2 + i};
    add_case("reshape", [=](const V& x) { return ag::reshape(x, Shape{3, 2 * (2 + i)}); }, random_tensor(s, rng));
    const std::size_t axis = i % 3;
    Shape os = s;
    os[axis] += 1;
    auto other = V::constant(random_tensor(os, rng));
    add_case("concat", [=](const V& x) {
      std::vector<V> parts = i % 2 ? std::vector<V>{x, other} : std::vector<V>{other, x};
      return ag::concat<double>(parts, axis);
    }, random_tensor(s, rng));
    Tensor<double> mask(s);
    std::bernoulli_distribution keep(0.4);
    for (auto& m : mask.data) m = keep(rng) ? 2.5 : 0.0;
    add_case("dropout-mask-apply", [=](const V& x) { return ag::dropout_mask_apply(x, mask); },
             random_tensor(s, rng));
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto p = std::filesystem::temp_directory_path() /
                 ("wslmm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::size_t connected_components(const Tensor<std::uint8_t>& mask) {
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::vector<bool> seen(h * w, false);
  std::size_t count = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.data[start] || seen[start]) continue;
    ++count;
    std::deque<std::size_t> q{start};
    seen[start] = true;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop_front();
      const std::size_t y = p / w, x = p % w;
      const std::size_t nb[4] = {y > 0 ? p - w : p, y + 1 < h ? p + w : p, x > 0 ? p - 1 : p,
                                 x + 1 < w ? p + 1 : p};
      for (std::size_t q2 : nb) {
        if (q2 != p && mask.data[q2] && !seen[q2]) {
          seen[q2] = true;
          q.push_back(q2);
        }
      }
    }
  }
  return count;
}

}  // namespace testing
