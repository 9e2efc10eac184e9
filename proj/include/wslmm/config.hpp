#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wslmm/data.hpp"
#include "wslmm/erasing.hpp"
#include "wslmm/losses.hpp"
#include "wslmm/nets.hpp"

namespace wsl {

/// Every training knob. Plain-text key=value; unknown keys are rejected.
struct HyperConfig {
  // mask and erasing
  double omega = 8.0;
  double sigma_prime = 0.5;
  double sigma = 10.0;
  int u = 4;
  // pooling and heads
  double kmax = 0.09;
  double kmin = 0.09;
  double alpha = 0.0;
  std::size_t modalities = 5;
  double dropout = 0.0;
  std::vector<std::size_t> widths{16, 32, 64, 64};
  std::vector<std::size_t> strides{2, 2, 1, 1};
  bool shared_backbone = true;
  // optimization
  double lr = 0.001;
  double lr_decay = 0.1;
  std::size_t lr_step = 40;
  double lr_floor = 1e-7;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-5;
  std::size_t max_epochs = 40;
  std::size_t patience = 0;  ///< 0 disables early termination (best epoch is still kept)
  std::size_t batch_size = 8;
  LossWeights loss_weights;
  // data
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 0;  ///< 0: taken from the dataset
  bool hflip = true;
  bool vflip = true;
  bool rot90 = true;
  std::string precision = "float";  ///< float | double
  std::string data;                 ///< dataset root (train/ [valid/] masks/)
  std::string out = "run";

  static HyperConfig from_key_values(const KeyValues& kv);
  static HyperConfig load(const std::filesystem::path& path);
  KeyValues to_key_values() const;
  void validate() const;

  /// lr0 * decay^floor(epoch / step), never below the floor. Epochs count from 0.
  double lr_at(std::size_t epoch) const;
  NetConfig net(std::size_t n_classes, std::size_t in_channels) const;
  ErasingParams erasing() const;
  AugmentOps augment() const;
};

}  // namespace wsl
