#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "wslmm/config.hpp"
#include "wslmm/data.hpp"
#include "wslmm/erasing.hpp"
#include "wslmm/losses.hpp"
#include "wslmm/metrics.hpp"
#include "wslmm/nets.hpp"

namespace wsl {

struct StepStats {
  std::vector<SampleLoss> losses;
  std::size_t correct = 0;
  std::vector<std::size_t> forwards;  ///< localizer forwards per sample
  std::vector<StepRecord> log;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  LossBundle train;
  double train_error = 0;
  double valid_error = 0;
  double valid_loss = 0;
  std::size_t localizer_forwards = 0;
  std::size_t max_forwards_per_sample = 0;  ///< within one training step
  double seconds = 0;
};

struct FitResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Single-forward inference output. Masks are R+ at image resolution.
struct Predictions {
  std::vector<std::size_t> labels;
  std::vector<Tensor<double>> masks;
  std::vector<std::vector<double>> probs;
  std::vector<SampleLoss> losses;  ///< filled only when requested
  std::size_t localizer_forwards = 0;
};

/// (epoch, batch index, sample ids of the batch, step log of the batch).
using ErasingLogFn = std::function<void(std::size_t, std::size_t, const std::vector<std::string>&,
                                        const std::vector<StepRecord>&)>;

/// Stacks raw [0,1] records into [N,d,h,w] after normalization.
template <typename T>
Tensor<T> stack_images(const std::vector<SampleRecord>& records);

template <typename T>
class Trainer {
 public:
  Trainer(HyperConfig config, std::size_t classes, std::size_t in_channels);

  WslModel<T>& model() { return model_; }
  const HyperConfig& config() const { return config_; }
  void set_erasing_log(ErasingLogFn fn) { log_fn_ = std::move(fn); }

  /// One optimization step on already augmented and normalized records.
  StepStats train_step(const std::vector<SampleRecord>& batch, double lr);

  /// Seeded shuffling, augmentation, erasing, SGD; validation every epoch.
  /// The best epoch by (validation error, validation loss) is restored at the end.
  FitResult fit(const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& valid,
                std::ostream* progress = nullptr);

  /// Raw [0,1] records; recursive erasing is never run here.
  Predictions predict(const std::vector<SampleRecord>& records, bool with_losses = false);

 private:
  void sgd_update(double lr, double scale);

  HyperConfig config_;
  WslModel<T> model_;
  Rng rng_;
  std::vector<Tensor<T>> momentum_;
  ErasingLogFn log_fn_;
  std::size_t epoch_ = 0;
  std::size_t batch_ = 0;
};

}  // namespace wsl
