#include "wslmm/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace wsl {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, T fill) : shape(std::move(s)), data(numel(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel(shape)) {
    throw std::invalid_argument("tensor: " + std::to_string(data.size()) +
                                " values do not fill shape " + shape_str(shape));
  }
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Tensor<std::uint8_t>;

}  // namespace wsl
