#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wslmm/autograd.hpp"
#include "wslmm/tensor.hpp"

namespace wsl {

struct NetConfig {
  std::size_t in_channels = 3;
  std::size_t classes = 2;
  std::size_t modalities = 5;
  std::vector<std::size_t> widths{16, 32, 64, 64};
  std::vector<std::size_t> strides{2, 2, 1, 1};  ///< per block; product is the map stride
  bool shared_backbone = true;
  double kmax = 0.09;
  double kmin = 0.09;
  double alpha = 0.0;
  double dropout = 0.0;

  void validate() const;
};

/// Per-class spatial evidence emitted by the localizer.
template <typename T>
struct ActivationStack {
  ag::Var<T> maps;    ///< [N, c, h', w'], modality-averaged class maps.
  ag::Var<T> logits;  ///< [N, c], pooled class scores.
  ag::Var<T> probs;   ///< [N, c], softmax of logits.
};

/// ceil(fraction * n) clamped to [1, n].
std::size_t pool_count(double fraction, std::size_t n);

/// rows: [R, n]. Mean of the top ceil(kmax*n) entries plus alpha times the mean
/// of the bottom ceil(kmin*n) entries, per row -> [R].
template <typename T>
ag::Var<T> wildcat_pool(const ag::Var<T>& rows, double kmax, double kmin, double alpha);

/// Zeroes spatial locations with probability `rate` and rescales survivors by
/// 1/(1-rate). For inputs of rank >= 3 a location is shared across axis 1.
/// Identity outside training.
template <typename T>
ag::Var<T> spatial_dropout(const ag::Var<T>& map, double rate, bool train, Rng& rng);

template <typename T>
struct ConvLayer {
  ag::Var<T> weight;
  ag::Var<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Conv3x3+ReLU blocks with padding 1; maps come out at ceil(in / total_stride).
template <typename T>
class Backbone {
 public:
  Backbone(std::size_t in_channels, const std::vector<std::size_t>& widths,
           const std::vector<std::size_t>& strides, Rng& rng);

  ag::Var<T> forward(const ag::Var<T>& x) const;
  std::size_t in_channels() const { return in_channels_; }
  std::size_t total_stride() const { return total_stride_; }
  std::size_t out_channels() const { return layers_.back().weight.shape()[0]; }
  const std::vector<ConvLayer<T>>& layers() const { return layers_; }

 private:
  std::size_t in_channels_;
  std::size_t total_stride_ = 1;
  std::vector<ConvLayer<T>> layers_;
};

template <typename T>
struct NamedParam {
  std::string name;
  ag::Var<T> var;
  bool decay = true;  ///< weight decay applies (weights yes, biases no)
};

/// Localizer M and classifier C over one (optionally shared) backbone.
template <typename T>
class WslModel {
 public:
  WslModel(NetConfig config, std::uint64_t seed);

  /// x: [N, d, h, w]. Dropout (train only) touches the pooling input, never
  /// the returned maps.
  ActivationStack<T> localize(const ag::Var<T>& x, bool train, Rng* rng);
  /// x: [N, d, h, w] -> class probabilities [N, c].
  ag::Var<T> classify(const ag::Var<T>& x);

  const NetConfig& config() const { return config_; }
  std::vector<NamedParam<T>> named_parameters() const;
  std::vector<ag::Var<T>> localizer_parameters() const;
  std::vector<ag::Var<T>> classifier_parameters() const;
  void zero_grad();

  /// Number of images pushed through the localizer since the last reset.
  std::size_t localizer_forwards() const { return localizer_forwards_; }
  void reset_forward_count() { localizer_forwards_ = 0; }

  Backbone<T>& localizer_backbone() { return *loc_backbone_; }
  Backbone<T>& classifier_backbone() { return *cls_backbone_; }
  ConvLayer<T>& localizer_head() { return loc_head_; }
  ag::Var<T>& classifier_weight() { return cls_weight_; }
  ag::Var<T>& classifier_bias() { return cls_bias_; }

 private:
  void check_input(const ag::Var<T>& x, const char* who) const;

  NetConfig config_;
  std::shared_ptr<Backbone<T>> loc_backbone_;
  std::shared_ptr<Backbone<T>> cls_backbone_;
  ConvLayer<T> loc_head_;
  ag::Var<T> cls_weight_;
  ag::Var<T> cls_bias_;
  std::size_t localizer_forwards_ = 0;
};

// ---- checkpoints ----------------------------------------------------------
//
// Little-endian binary container:
//   "WSLMMCK1"                      8-byte magic
//   u32 version                     currently 1
//   u64 n, n bytes                  key=value config echo, one pair per line
//   u64 count                       number of parameter arrays
//   per array: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 values[prod(dims)]

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor<double>>> params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint make_checkpoint(const WslModel<T>& model, std::map<std::string, std::string> config);
/// Copies parameters by name; names and shapes must match the model exactly.
template <typename T>
void load_parameters(WslModel<T>& model, const Checkpoint& ckpt);

}  // namespace wsl
