#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wslmm/tensor.hpp"

namespace wsl {

/// One image with its image-level label and optional pixel-level ground truth.
/// Images are [d,h,w]; raw records hold values in [0,1], normalized ones in [-1,1].
struct SampleRecord {
  Tensor<float> image;
  std::size_t label = 0;
  std::optional<Tensor<std::uint8_t>> gt_mask;  ///< [h,w], values {0,1}
  std::string id;
};

using KeyValues = std::map<std::string, std::string>;

/// Plain-text `key = value` lines; '#' starts a comment.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

enum class Texture { kStripes, kChecker, kDiagonal };
enum class ShapeFamily { kEllipse, kRectangle, kCross };

struct ClassStyle {
  Texture texture = Texture::kStripes;
  ShapeFamily shape = ShapeFamily::kEllipse;
  std::array<float, 3> color_a{};
  std::array<float, 3> color_b{};
};

/// Synthetic shapes-on-texture generator settings. The background process is
/// identical for every class; only the foreground carries class evidence.
struct SynthSpec {
  std::size_t classes = 2;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  double min_radius = 8.0;
  double max_radius = 13.0;
  double background_noise = 0.06;
  std::size_t background_blobs = 6;
  bool foreground = true;
  std::uint64_t seed = 0;
  std::size_t n_train = 200;
  std::size_t n_valid = 50;
  std::size_t n_test = 100;

  static SynthSpec from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  void validate() const;
  ClassStyle style(std::size_t label) const;
  std::string class_name(std::size_t label) const;
};

struct SynthDataset {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> valid;
  std::vector<SampleRecord> test;
};

SynthDataset gen_synthetic(const SynthSpec& spec, std::size_t n_train, std::size_t n_valid,
                           std::size_t n_test);

struct LoadOptions {
  std::size_t height = 64;
  std::size_t width = 64;
};

struct FolderDataset {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> records;
  std::size_t skipped = 0;
  std::size_t without_mask = 0;
};

/// root/<class>/<id>.{png,bmp,ppm,...}; classes are the sorted subdirectory
/// names (a subdirectory called "masks" is never a class). Masks are looked up
/// as masks_root/<id>.png and binarized at 128. Images and masks are
/// center-cropped to the target aspect and resized to the target size.
FolderDataset load_folder(const std::filesystem::path& root,
                          const std::optional<std::filesystem::path>& masks_root,
                          const LoadOptions& options);

/// Stratified split, deterministic per seed. Each class needs >= 2 samples.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> make_splits(
    const std::vector<SampleRecord>& records, std::pair<double, double> fractions,
    std::uint64_t seed);

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::vector<std::string> read_manifest(const std::filesystem::path& path);

struct AugmentOps {
  bool hflip = true;
  bool vflip = true;
  bool rot90 = true;  ///< square images only
};

void hflip(SampleRecord& r);
void vflip(SampleRecord& r);
/// Rotates by 90 degrees counter-clockwise `quarter_turns` times.
void rot90(SampleRecord& r, int quarter_turns);
/// (x - 0.5) / 0.5 per channel.
void normalize(SampleRecord& r);

/// Train mode: one random composition of the enabled ops (mask follows the
/// image), then normalization. Eval mode: normalization only.
SampleRecord augment_normalize(const SampleRecord& record, const AugmentOps& ops, bool train,
                               Rng& rng);

// ---- image files ----------------------------------------------------------

/// [d,h,w] in [0,1] -> 8-bit PNG (d = 1 or 3).
void write_image_png(const std::filesystem::path& path, const Tensor<float>& image);
/// [h,w] with values 0..255.
void write_gray_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& gray);
/// Decodes to [3,h,w] in [0,1], cropped/resized to the target size.
std::optional<Tensor<float>> read_image(const std::filesystem::path& path,
                                        const LoadOptions& options);
/// Writes root/<split>/<class>/<id>.png and root/masks/<id>.png.
void write_split(const std::filesystem::path& root, const std::string& split,
                 const std::vector<SampleRecord>& records,
                 const std::vector<std::string>& class_names);

/// FNV-1a 64 over sorted relative paths and file bytes under root.
std::string content_hash(const std::filesystem::path& root);

}  // namespace wsl
