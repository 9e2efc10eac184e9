#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wsl {

using Shape = std::vector<std::size_t>;

/// Seeded engine used for every stochastic decision (init, dropout,
/// shuffling, augmentation, synthesis).
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major buffer. Value type only; gradients live on graph nodes.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0));
  Tensor(Shape s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  std::size_t rank() const { return shape.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Tensor& other) const = default;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template struct Tensor<std::uint8_t>;

}  // namespace wsl
