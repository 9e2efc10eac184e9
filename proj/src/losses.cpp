#include "wslmm/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wsl {

namespace {

void check_distribution(std::span<const double> p, const char* who) {
  if (p.empty()) throw std::invalid_argument(std::string(who) + ": empty distribution");
  double total = 0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0) {
      throw std::invalid_argument(std::string(who) + ": entries must be finite and >= 0");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string(who) + ": entries sum to " + std::to_string(total));
  }
}

void check_label(std::size_t y, std::size_t c, const char* who) {
  if (y >= c) {
    throw std::invalid_argument(std::string(who) + ": label " + std::to_string(y) +
                                " out of range for " + std::to_string(c) + " classes");
  }
}

double clamped_log(double v) { return std::log(std::max(v, ag::kLogEps)); }

template <typename T>
Tensor<T> one_hot(std::size_t n, std::size_t c, std::span<const std::size_t> labels,
                  const char* who) {
  if (labels.size() != n) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " samples");
  }
  Tensor<T> t(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    check_label(labels[i], c, who);
    t.data[i * c + labels[i]] = T(1);
  }
  return t;
}

template <typename T>
void check_probs(const ag::Var<T>& probs, const char* who) {
  if (probs.shape().size() != 2) {
    throw std::invalid_argument(std::string(who) + ": expected [N,c], got " +
                                shape_str(probs.shape()));
  }
}

}  // namespace

double entropy(std::span<const double> p) {
  check_distribution(p, "entropy");
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

double loss_positive(std::span<const double> p, std::size_t y) {
  check_distribution(p, "loss_positive");
  check_label(y, p.size(), "loss_positive");
  return -clamped_log(p[y]);
}

double loss_negative(std::span<const double> p) {
  check_distribution(p, "loss_negative");
  double acc = 0;
  for (double v : p) acc += clamped_log(v);
  return -acc / static_cast<double>(p.size());
}

double loss_secondary(std::span<const double> p_s, std::size_t y) {
  check_distribution(p_s, "loss_secondary");
  check_label(y, p_s.size(), "loss_secondary");
  return -clamped_log(p_s[y]);
}

template <typename T>
ag::Var<T> loss_positive(const ag::Var<T>& probs, std::span<const std::size_t> labels) {
  check_probs(probs, "loss_positive");
  const std::size_t n = probs.shape()[0], c = probs.shape()[1];
  auto picked = ag::mul(ag::log(probs), ag::Var<T>::constant(one_hot<T>(n, c, labels, "loss_positive")));
  return ag::affine(ag::sum_axis(picked, 1), -1.0, 0.0);
}

template <typename T>
ag::Var<T> loss_negative(const ag::Var<T>& probs) {
  check_probs(probs, "loss_negative");
  return ag::affine(ag::mean_axis(ag::log(probs), 1), -1.0, 0.0);
}

template <typename T>
ag::Var<T> loss_secondary(const ag::Var<T>& probs, std::span<const std::size_t> labels) {
  check_probs(probs, "loss_secondary");
  return loss_positive(probs, labels);
}

LossBundle total_loss(std::span<const SampleLoss> parts, const LossWeights& weights) {
  LossBundle b;
  b.per_sample.assign(parts.begin(), parts.end());
  if (parts.empty()) return b;
  for (const auto& s : parts) {
    b.l_pos += s.pos;
    b.l_neg += s.neg;
    b.l_sec += s.sec;
  }
  const double n = static_cast<double>(parts.size());
  b.l_pos /= n;
  b.l_neg /= n;
  b.l_sec /= n;
  b.total = weights.pos * b.l_pos + weights.neg * b.l_neg + weights.sec * b.l_sec;
  return b;
}

#define WSL_INSTANTIATE(T)                                                                   \
  template ag::Var<T> loss_positive<T>(const ag::Var<T>&, std::span<const std::size_t>);     \
  template ag::Var<T> loss_negative<T>(const ag::Var<T>&);                                   \
  template ag::Var<T> loss_secondary<T>(const ag::Var<T>&, std::span<const std::size_t>);

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl
