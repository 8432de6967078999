#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semdiff/rng.hpp"
#include "semdiff/tensor.hpp"

namespace semdiff {

enum class Split { kTrain, kTest };
enum class DataSource { kMnist, kCifar10, kSynthetic };

std::string to_string(Split split);
std::string to_string(DataSource source);
DataSource parse_data_source(const std::string& name);

struct Dataset {
  Tensor images;  // (N, C, 32, 32), values in [-1, 1]
  Split split = Split::kTrain;
  DataSource source = DataSource::kSynthetic;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  // Dataset of the first n images (or all if n exceeds the size).
  Dataset head(std::size_t n) const;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;
inline constexpr std::size_t kCifarRecordBytes = 3073;

// Raw IDX array of unsigned bytes.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  // Leading-axis subset of the first n items.
  IdxArray head(std::size_t n) const;
};

// Big-endian IDX header and payload. Only the image and label magics are
// accepted. Throws DataError with kBadMagic, kTruncated or kDimOverflow.
IdxArray parse_idx_raw(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& array);

// Image file -> (N, 1, 32, 32) in [-1, 1]; 28x28 inputs are bilinearly resized.
Dataset parse_idx(std::span<const std::uint8_t> bytes, Split split = Split::kTrain);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

// Bilinear resize of an (h, w) byte plane (half-pixel centers, edge clamp).
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w);

// CIFAR-10 binary batch -> (N, 3, 32, 32); labels are skipped.
Dataset parse_cifar_bin(std::span<const std::uint8_t> bytes, Split split = Split::kTrain);

// Procedural (1, 32, 32) images: one axis-aligned rectangle (sides uniform in
// 4..16) or one disc (radius uniform in 3..8), chosen with equal probability,
// at a uniform position, with intensity uniform in [0.2, 1] on a -1 background.
struct ToyShapes {
  static constexpr int kSize = 32;
  static constexpr int kRectMin = 4, kRectMax = 16;
  static constexpr int kRadiusMin = 3, kRadiusMax = 8;
  static constexpr double kIntensityLo = 0.2, kIntensityHi = 1.0;
  static constexpr double kBackground = -1.0;
};
Dataset synthetic_toy(std::size_t n, Rng& rng, Split split = Split::kTrain);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Dataset root: the explicit value if non-empty, else $SEMDIFF_DATA_ROOT, else "data".
std::filesystem::path resolve_data_root(const std::string& configured);

// MNIST: {train,t10k}-images-idx3-ubyte under root or root/mnist.
// CIFAR-10: data_batch_{1..5}.bin / test_batch.bin under root, root/cifar10
// or root/cifar-10-batches-bin. limit = 0 keeps everything.
Dataset load_mnist(const std::filesystem::path& root, Split split, std::size_t limit = 0);
Dataset load_cifar10(const std::filesystem::path& root, Split split, std::size_t limit = 0);
bool mnist_available(const std::filesystem::path& root);

// Shuffled mini-batches; every index appears exactly once per epoch.
class BatchIterator {
 public:
  BatchIterator(std::size_t size, std::size_t batch_size, bool drop_last = false);

  // Reshuffles with the given epoch stream.
  void start_epoch(Rng& rng);
  // Fills the next batch of indices; false once the epoch is exhausted.
  bool next(std::vector<std::size_t>& batch);
  std::size_t batches_per_epoch() const;

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_, cursor_ = 0;
  bool drop_last_;
};

}  // namespace semdiff
