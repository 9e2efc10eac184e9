#pragma once

#include <span>
#include <vector>

#include "wslmm/autograd.hpp"

namespace wsl {

/// -sum p log p with 0 log 0 = 0. Rejects vectors that are not distributions.
double entropy(std::span<const double> p);

/// Cross-entropy against the true label on the visible region: -log p[y].
double loss_positive(std::span<const double> p, std::size_t y);
/// Cross-entropy against the uniform target: -(1/c) sum_y log p[y].
/// Bounded below by log c, reached only at the uniform distribution.
double loss_negative(std::span<const double> p);
/// Same contract as loss_positive, applied to the localizer's distribution.
double loss_secondary(std::span<const double> p_s, std::size_t y);

// Graph versions: probs [N, c] -> per-sample losses [N].
template <typename T>
ag::Var<T> loss_positive(const ag::Var<T>& probs, std::span<const std::size_t> labels);
template <typename T>
ag::Var<T> loss_negative(const ag::Var<T>& probs);
template <typename T>
ag::Var<T> loss_secondary(const ag::Var<T>& probs, std::span<const std::size_t> labels);

struct LossWeights {
  double pos = 1.0;
  double neg = 1.0;
  double sec = 1.0;
};

struct SampleLoss {
  double pos = 0;
  double neg = 0;
  double sec = 0;
};

struct LossBundle {
  double l_pos = 0;
  double l_neg = 0;
  double l_sec = 0;
  double total = 0;
  std::vector<SampleLoss> per_sample;
};

/// Mean over samples of the (weighted) sum of the three terms.
LossBundle total_loss(std::span<const SampleLoss> parts, const LossWeights& weights = {});

}  // namespace wsl
