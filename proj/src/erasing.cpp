#include "wslmm/erasing.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "wslmm/losses.hpp"

namespace wsl {

TrustResult compute_trust(std::size_t t, std::span<const double> p_hat_s, std::size_t y,
                          double h_t, double h_0, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("compute_trust: sigma must be positive");
  if (y >= p_hat_s.size()) throw std::invalid_argument("compute_trust: label out of range");
  TrustResult r;
  for (std::size_t k = 1; k < p_hat_s.size(); ++k)
    if (p_hat_s[k] > p_hat_s[r.argmax]) r.argmax = k;
  r.gamma = (r.argmax == y && h_t <= h_0) ? p_hat_s[y] : 0.0;
  r.psi = std::exp(-static_cast<double>(t) / sigma) * r.gamma;
  return r;
}

template <typename T>
void accumulate_mask(Tensor<T>& acc, const Tensor<T>& r_t, double psi) {
  if (acc.shape != r_t.shape) {
    throw std::invalid_argument("accumulate_mask: shape " + shape_str(acc.shape) + " vs " +
                                shape_str(r_t.shape));
  }
  if (!(psi >= 0 && psi <= 1)) throw std::invalid_argument("accumulate_mask: psi outside [0,1]");
  const T p = static_cast<T>(psi);
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] = std::max(acc.data[i], p * r_t.data[i]);
}

template <typename T>
ErasingResult<T> run_recursive_erasing(const Tensor<T>& images,
                                       std::span<const std::size_t> labels,
                                       const LocalizerFn<T>& localizer,
                                       const ErasingParams& params) {
  if (params.u < 0) throw std::invalid_argument("recursive erasing: u must be >= 0");
  if (images.rank() != 4) {
    throw std::invalid_argument("recursive erasing: expected [N,d,h,w], got " +
                                shape_str(images.shape));
  }
  const std::size_t n = images.dim(0), d = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t plane = h * w, img = d * plane;
  if (labels.size() != n) throw std::invalid_argument("recursive erasing: label count mismatch");

  Tensor<T> x_star = images;
  std::vector<Tensor<T>> acc(n, Tensor<T>(Shape{h, w}));
  std::vector<bool> stopped(n, false);
  std::vector<double> h0(n, 0.0);

  ErasingResult<T> out;
  out.forwards.assign(n, 0);
  out.l_sec.assign(n, 0.0);
  if (params.keep_history) out.history.resize(n);

  for (std::size_t t = 0; t <= static_cast<std::size_t>(params.u); ++t) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i)
      if (!stopped[i]) active.push_back(i);
    if (active.empty()) break;

    const std::size_t a = active.size();
    Tensor<T> batch(Shape{a, d, h, w});
    std::vector<std::size_t> batch_labels(a);
    for (std::size_t j = 0; j < a; ++j) {
      std::copy_n(x_star.data.begin() + active[j] * img, img, batch.data.begin() + j * img);
      batch_labels[j] = labels[active[j]];
    }

    ActivationStack<T> stack;
    ag::Var<T> r_plus, sec;
    try {
      stack = localizer(ag::Var<T>::constant(std::move(batch)));
      r_plus = relevance_mask(stack, h, w, params.omega, params.sigma_prime);
      sec = loss_secondary(stack.probs, std::span<const std::size_t>(batch_labels));
    } catch (const std::domain_error& e) {
      throw std::runtime_error("recursive erasing: step " + std::to_string(t) + ": " + e.what());
    }
    const std::size_t c = stack.probs.shape()[1];

    Tensor<T> weight(Shape{a});
    bool any_weight = false;
    for (std::size_t j = 0; j < a; ++j) {
      const std::size_t i = active[j];
      ++out.forwards[i];
      const double h_t = static_cast<double>(sec.value().data[j]);
      if (!std::isfinite(h_t)) {
        throw std::runtime_error("recursive erasing: non-finite loss at step " +
                                 std::to_string(t) + " for sample " + std::to_string(i));
      }
      if (t == 0) h0[i] = h_t;
      std::vector<double> p(c);
      for (std::size_t k = 0; k < c; ++k) p[k] = stack.probs.value().data[j * c + k];
      const auto trust = compute_trust(t, p, labels[i], h_t, h0[i], params.sigma);

      StepRecord rec;
      rec.sample = i;
      rec.t = t;
      rec.psi = trust.psi;
      rec.gamma = trust.gamma;
      rec.h_t = h_t;
      rec.h_0 = h0[i];
      rec.argmax = trust.argmax;
      rec.label = labels[i];
      rec.trusted = trust.psi != 0.0;
      out.log.push_back(rec);

      if (rec.trusted) {
        Tensor<T> r_t(Shape{h, w});
        std::copy_n(r_plus.value().data.begin() + j * plane, plane, r_t.data.begin());
        accumulate_mask(acc[i], r_t, trust.psi);
      } else {
        stopped[i] = true;
      }
      if (rec.trusted || t == 0) {
        weight.data[j] = static_cast<T>(params.loss_weight);
        out.l_sec[i] += h_t;
        any_weight = true;
      }
      if (params.keep_history) out.history[i].push_back(acc[i]);
    }

    if (any_weight) ag::backward(ag::sum(ag::mul(sec, ag::Var<T>::constant(std::move(weight)))));

    for (std::size_t i : active) {
      if (stopped[i]) continue;
      T* xi = x_star.data.data() + i * img;
      const T* m = acc[i].data.data();
      for (std::size_t ch = 0; ch < d; ++ch)
        for (std::size_t p = 0; p < plane; ++p) xi[ch * plane + p] *= T(1) - m[p];
    }
  }

  out.masks.reserve(n);
  for (auto& m : acc) out.masks.push_back(PseudoMask<T>::from_plus(std::move(m), MaskSource::kAccumulated));
  return out;
}

#define WSL_INSTANTIATE(T)                                                               \
  template void accumulate_mask<T>(Tensor<T>&, const Tensor<T>&, double);                \
  template ErasingResult<T> run_recursive_erasing<T>(                                    \
      const Tensor<T>&, std::span<const std::size_t>, const LocalizerFn<T>&, const ErasingParams&);

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl
