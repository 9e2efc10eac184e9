#pragma once

// Incremental recursive erasing with trust coefficients.
//
// Per sample, the localizer is applied repeatedly to a working copy of the
// image. Every trusted step folds its mask into a max-accumulator and erases
// the accumulated region before the next step; the first untrusted step stops
// the sample for the rest of the training step. Localizer gradients of the
// secondary loss are accumulated into the parameters step by step, so only one
// graph is alive at a time.

#include <functional>
#include <span>
#include <vector>

#include "wslmm/autograd.hpp"
#include "wslmm/mask_ops.hpp"
#include "wslmm/nets.hpp"

namespace wsl {

struct TrustResult {
  double psi = 0;
  double gamma = 0;
  std::size_t argmax = 0;
};

/// psi = exp(-t/sigma) * gamma, gamma = p_s[y] when argmax(p_s) == y (ties
/// resolved to the lowest index) and h_t <= h_0, else 0.
TrustResult compute_trust(std::size_t t, std::span<const double> p_hat_s, std::size_t y,
                          double h_t, double h_0, double sigma);

/// acc := max(acc, psi * r_t), elementwise.
template <typename T>
void accumulate_mask(Tensor<T>& acc, const Tensor<T>& r_t, double psi);

struct ErasingParams {
  int u = 4;
  double sigma = 10.0;
  double omega = 8.0;
  double sigma_prime = 0.5;
  bool keep_history = false;
  double loss_weight = 1.0;  ///< scale applied to every back-propagated step
};

struct StepRecord {
  std::size_t sample = 0;
  std::size_t t = 0;
  double psi = 0;
  double gamma = 0;
  double h_t = 0;
  double h_0 = 0;
  std::size_t argmax = 0;
  std::size_t label = 0;
  bool trusted = false;
};

template <typename T>
struct ErasingResult {
  std::vector<PseudoMask<T>> masks;  ///< accumulated R+* and R-* per sample
  std::vector<StepRecord> log;
  std::vector<std::size_t> forwards;  ///< localizer forwards per sample
  std::vector<double> l_sec;          ///< secondary loss summed over back-propagated steps
  /// Accumulator snapshot after every processed step (only with keep_history).
  std::vector<std::vector<Tensor<T>>> history;
};

/// Batched localizer call: images [N,d,h,w] -> stack.
template <typename T>
using LocalizerFn = std::function<ActivationStack<T>(const ag::Var<T>&)>;

/// images: [N,d,h,w]. Gradients are accumulated (never zeroed) into whatever
/// parameters the localizer reaches. The un-erased t=0 step is always
/// back-propagated; later steps only when trusted.
template <typename T>
ErasingResult<T> run_recursive_erasing(const Tensor<T>& images,
                                       std::span<const std::size_t> labels,
                                       const LocalizerFn<T>& localizer,
                                       const ErasingParams& params);

}  // namespace wsl
