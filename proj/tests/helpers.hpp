#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "wslmm/autograd.hpp"
#include "wslmm/data.hpp"

namespace testing {

using wsl::Shape;
using wsl::Tensor;
using V = wsl::ag::Var<double>;

inline Tensor<double> random_tensor(Shape s, wsl::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

/// Values whose pairwise gaps and distance from zero are at least `gap`,
/// randomly signed and shuffled. Keeps kinks (relu, max, top-k) away from the
/// finite-difference probes.
inline Tensor<double> separated_tensor(Shape s, wsl::Rng& rng, double gap = 0.05) {
  Tensor<double> t(std::move(s));
  const std::size_t n = t.size();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = gap * static_cast<double>(i + 1);
  std::shuffle(v.begin(), v.end(), rng);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = sign(rng) ? v[i] : -v[i];
  return t;
}

/// sum(y * R) with a random weight R fixed on first use, so the scalar probe
/// exercises every output coordinate with a distinct weight.
inline std::function<V(const V&)> weighted(std::function<V(const V&)> op, std::uint64_t seed) {
  auto weight = std::make_shared<Tensor<double>>();
  return [op, weight, seed](const V& x) {
    V y = op(x);
    if (weight->size() == 0) {
      wsl::Rng rng(seed);
      *weight = random_tensor(y.shape(), rng, 0.5, 1.5);
    }
    return wsl::ag::sum(wsl::ag::mul(y, V::constant(*weight)));
  };
}

struct PrimitiveCase {
  std::string kind;
  std::function<V(const V&)> f;
  Tensor<double> x;
};

/// At least five random cases for every primitive kind.
std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

/// Number of 4-connected foreground components.
std::size_t connected_components(const Tensor<std::uint8_t>& mask);

}  // namespace testing
