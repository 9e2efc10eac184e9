#pragma once

#include <cstdint>

#include "wslmm/autograd.hpp"
#include "wslmm/nets.hpp"
#include "wslmm/tensor.hpp"

namespace wsl {

enum class MaskSource { kSinglePass, kAccumulated };

/// Relevance mask R+ with its complement R- (both h x w).
template <typename T>
struct PseudoMask {
  Tensor<T> r_plus;
  Tensor<T> r_minus;
  MaskSource source = MaskSource::kSinglePass;

  static PseudoMask from_plus(Tensor<T> r_plus, MaskSource source);

  /// M+ = [r_plus >= threshold].
  Tensor<std::uint8_t> binarize(double threshold = 0.5) const;
  /// M- = U - M+, so |M+|_0 + |M-|_0 = h*w.
  Tensor<std::uint8_t> binarize_complement(double threshold = 0.5) const;
};

/// T = sum_k p_s(k) * A(k). maps [N,c,h',w'], probs [N,c] -> [N,h',w'].
template <typename T>
ag::Var<T> aggregate_maps(const ActivationStack<T>& stack);

/// 1 / (1 + exp(-omega * (t_up - sigma_prime))), elementwise.
template <typename T>
ag::Var<T> pseudo_threshold(const ag::Var<T>& t_up, double omega, double sigma_prime);

/// 1 - r_plus.
template <typename T>
ag::Var<T> complement(const ag::Var<T>& r_plus);

/// Hadamard product broadcast over channels.
/// x [N,d,h,w] with r [N,h,w], or x [d,h,w] with r [h,w].
template <typename T>
ag::Var<T> apply_mask(const ag::Var<T>& x, const ag::Var<T>& r);

/// aggregate -> detached upsample to (h, w) -> pseudo-threshold. [N,h,w].
/// The result carries no gradient back into the stack.
template <typename T>
ag::Var<T> relevance_mask(const ActivationStack<T>& stack, std::size_t h, std::size_t w,
                          double omega, double sigma_prime);

}  // namespace wsl
