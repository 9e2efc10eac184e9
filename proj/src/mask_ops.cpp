#include "wslmm/mask_ops.hpp"

#include <stdexcept>
#include <vector>

namespace wsl {

template <typename T>
PseudoMask<T> PseudoMask<T>::from_plus(Tensor<T> r_plus, MaskSource source) {
  PseudoMask m;
  m.r_minus = Tensor<T>(r_plus.shape);
  for (std::size_t i = 0; i < r_plus.size(); ++i) m.r_minus.data[i] = T(1) - r_plus.data[i];
  m.r_plus = std::move(r_plus);
  m.source = source;
  return m;
}

template <typename T>
Tensor<std::uint8_t> PseudoMask<T>::binarize(double threshold) const {
  Tensor<std::uint8_t> out(r_plus.shape);
  for (std::size_t i = 0; i < r_plus.size(); ++i)
    out.data[i] = static_cast<double>(r_plus.data[i]) >= threshold ? 1 : 0;
  return out;
}

template <typename T>
Tensor<std::uint8_t> PseudoMask<T>::binarize_complement(double threshold) const {
  auto out = binarize(threshold);
  for (auto& v : out.data) v = static_cast<std::uint8_t>(1 - v);
  return out;
}

template <typename T>
ag::Var<T> aggregate_maps(const ActivationStack<T>& stack) {
  const Shape& ms = stack.maps.shape();
  const Shape& ps = stack.probs.shape();
  if (ms.size() != 4 || ps.size() != 2 || ps[0] != ms[0] || ps[1] != ms[1]) {
    throw std::invalid_argument("aggregate_maps: maps " + shape_str(ms) +
                                " incompatible with scores " + shape_str(ps));
  }
  const std::size_t n = ms[0], c = ms[1], h = ms[2], w = ms[3];
  auto weights = ag::reshape(stack.probs, Shape{n, 1, c});
  auto flat = ag::reshape(stack.maps, Shape{n, c, h * w});
  return ag::reshape(ag::matmul(weights, flat), Shape{n, h, w});
}

template <typename T>
ag::Var<T> pseudo_threshold(const ag::Var<T>& t_up, double omega, double sigma_prime) {
  if (!(omega > 0)) throw std::invalid_argument("pseudo_threshold: omega must be positive");
  return ag::sigmoid(ag::affine(t_up, omega, -omega * sigma_prime));
}

template <typename T>
ag::Var<T> complement(const ag::Var<T>& r_plus) {
  return ag::affine(r_plus, -1.0, 1.0);
}

template <typename T>
ag::Var<T> apply_mask(const ag::Var<T>& x, const ag::Var<T>& r) {
  const Shape& xs = x.shape();
  const Shape& rs = r.shape();
  const bool batched = xs.size() == 4 && rs.size() == 3 && xs[0] == rs[0];
  const bool single = xs.size() == 3 && rs.size() == 2;
  const std::size_t off = batched ? 1 : 0;
  if (!(batched || single) || xs[off + 1] != rs[off] || xs[off + 2] != rs[off + 1]) {
    throw std::invalid_argument("apply_mask: image " + shape_str(xs) + " and mask " +
                                shape_str(rs) + " differ spatially");
  }
  Shape one = rs;
  one.insert(one.begin() + static_cast<std::ptrdiff_t>(off), 1);
  auto r1 = ag::reshape(r, one);
  const std::size_t d = xs[off];
  if (d == 1) return ag::mul(x, r1);
  std::vector<ag::Var<T>> copies(d, r1);
  return ag::mul(x, ag::concat<T>(copies, off));
}

template <typename T>
ag::Var<T> relevance_mask(const ActivationStack<T>& stack, std::size_t h, std::size_t w,
                          double omega, double sigma_prime) {
  auto t = aggregate_maps(stack);
  auto t_up = ag::bilinear_upsample(t, h, w, /*detach=*/true);
  return pseudo_threshold(t_up, omega, sigma_prime);
}

#define WSL_INSTANTIATE(T)                                                                   \
  template struct PseudoMask<T>;                                                             \
  template ag::Var<T> aggregate_maps<T>(const ActivationStack<T>&);                          \
  template ag::Var<T> pseudo_threshold<T>(const ag::Var<T>&, double, double);                \
  template ag::Var<T> complement<T>(const ag::Var<T>&);                                      \
  template ag::Var<T> apply_mask<T>(const ag::Var<T>&, const ag::Var<T>&);                   \
  template ag::Var<T> relevance_mask<T>(const ActivationStack<T>&, std::size_t, std::size_t, \
                                        double, double);

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl
