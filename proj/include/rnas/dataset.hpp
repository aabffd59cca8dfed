#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rnas/tensor.hpp"

namespace rnas {

// Tensor container: magic "RTEN", u32 version, u8 dtype, u32 rank,
// u32 extents[rank], payload little-endian.
enum class DType : std::uint8_t { u8 = 1, f32 = 2, f64 = 3 };

struct RawTensor {
  DType dtype = DType::f64;
  Shape shape;
  std::vector<double> values;  // exact for every supported dtype
};

void write_tensor(std::ostream& out, const RawTensor& t);
RawTensor read_tensor(std::istream& in);

/// Labeled images, pixels in [0,1].
struct Dataset {
  Tensor<double> images;  // [N,C,H,W]
  std::vector<std::int32_t> labels;
  std::size_t num_classes = 0;
  DType pixel_dtype = DType::f32;  // storage type used on save
  std::string name;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  /// Throws DataError on size mismatch, pixels outside [0,1] or labels outside [0, num_classes).
  void validate() const;
};

// Dataset file: an image container ([N,C,H,W], u8/f32/f64; u8 pixels are
// scaled by 1/255) followed by a u8 rank-1 label container.
void save_dataset(const Dataset& d, std::ostream& out);
void save_dataset_file(const Dataset& d, const std::string& path);

/// Reads a container file, or a CSV when the path ends in ".csv".
/// `num_classes` of 0 infers max(label) + 1.
Dataset load_dataset(const std::string& path, std::size_t num_classes = 0);
Dataset read_dataset(std::istream& in, std::size_t num_classes = 0);

/// CSV rows `label,p0,p1,...` with pixel values 0..255. An optional first
/// line `#shape,C,H,W` gives the layout; otherwise one channel, square.
Dataset parse_csv_dataset(const std::string& text, std::size_t num_classes = 0);

struct SyntheticOptions {
  std::size_t samples = 512;
  std::size_t classes = 4;
  std::size_t size = 16;
  double noise = 0.08;
  std::uint64_t seed = 0;
};

/// Seeded shapes on a noisy background, RGB, balanced classes:
/// 0 square, 1 disk, 2 bar, 3 cross.
Dataset make_synthetic(const SyntheticOptions& opt);

/// Rows of `images` at `indices`, cast to T.
template <typename T>
Tensor<T> gather_rows(const Tensor<double>& images, std::span<const std::size_t> indices);
std::vector<std::int32_t> gather_labels(std::span<const std::int32_t> labels, std::span<const std::size_t> indices);

/// In-place random horizontal flip and integer shift up to `max_shift`
/// pixels per sample (zero fill).
template <typename T>
void augment_batch(Tensor<T>& batch, std::size_t max_shift, std::mt19937_64& rng);

}  // namespace rnas
