#include "semdiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>

#include "semdiff/errors.hpp"

namespace semdiff {
namespace {

constexpr std::size_t kImageSize = 32;
constexpr std::size_t kMaxElements = std::size_t{1} << 34;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

double scale_byte(double v) { return v / 127.5 - 1.0; }

std::filesystem::path find_file(const std::filesystem::path& root,
                                std::initializer_list<const char*> subdirs, const std::string& name) {
  for (const char* sub : subdirs) {
    const auto p = std::string(sub).empty() ? root / name : root / sub / name;
    if (std::filesystem::exists(p)) return p;
  }
  return {};
}

}  // namespace

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::kMnist: return "mnist";
    case DataSource::kCifar10: return "cifar10";
    case DataSource::kSynthetic: return "synthetic";
  }
  return "unknown";
}

DataSource parse_data_source(const std::string& name) {
  if (name == "mnist") return DataSource::kMnist;
  if (name == "cifar10") return DataSource::kCifar10;
  if (name == "synthetic") return DataSource::kSynthetic;
  throw ConfigError("unknown dataset '" + name + "' (expected mnist, cifar10 or synthetic)");
}

Dataset Dataset::head(std::size_t n) const {
  Dataset out = *this;
  if (n < size()) out.images = images.slice_rows(0, n);
  return out;
}

IdxArray IdxArray::head(std::size_t n) const {
  if (dims.empty()) throw ShapeError("IDX array has no dimensions");
  IdxArray out = *this;
  if (n >= dims[0]) return out;
  const std::size_t item = data.size() / std::max<std::size_t>(dims[0], 1);
  out.dims[0] = static_cast<std::uint32_t>(n);
  out.data.resize(n * item);
  return out;
}

IdxArray parse_idx_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw DataError(DataError::Kind::kTruncated, "IDX stream shorter than its magic");
  IdxArray out;
  out.magic = read_be32(bytes, 0);
  if (out.magic != kIdxImageMagic && out.magic != kIdxLabelMagic) {
    throw DataError(DataError::Kind::kBadMagic,
                    "bad IDX magic " + std::to_string(out.magic) + " (expected 2051 or 2049)");
  }
  const std::size_t ndims = out.magic & 0xFF;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw DataError(DataError::Kind::kTruncated, "IDX header truncated");
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = read_be32(bytes, 4 + 4 * i);
    out.dims.push_back(d);
    if (d != 0 && count > kMaxElements / d) {
      throw DataError(DataError::Kind::kDimOverflow, "IDX dimensions overflow the element limit");
    }
    count *= d;
  }
  if (bytes.size() - header < count) {
    throw DataError(DataError::Kind::kTruncated,
                    "IDX payload has " + std::to_string(bytes.size() - header) + " bytes, expected " +
                        std::to_string(count));
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                  bytes.begin() + static_cast<std::ptrdiff_t>(header + count));
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& array) {
  if ((array.magic & 0xFF) != array.dims.size()) {
    throw DataError(DataError::Kind::kFormat, "IDX magic does not match the dimension count");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * array.dims.size() + array.data.size());
  write_be32(out, array.magic);
  for (auto d : array.dims) write_be32(out, d);
  out.insert(out.end(), array.data.begin(), array.data.end());
  return out;
}

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w) throw ShapeError("resize_bilinear: source size mismatch");
  std::vector<double> out(out_h * out_w);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ly = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double lx = fx - static_cast<double>(x0);
      out[y * out_w + x] = (1 - ly) * ((1 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1]) +
                           ly * ((1 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]);
    }
  }
  return out;
}

Dataset parse_idx(std::span<const std::uint8_t> bytes, Split split) {
  const IdxArray raw = parse_idx_raw(bytes);
  if (raw.magic != kIdxImageMagic) {
    throw DataError(DataError::Kind::kBadMagic, "IDX stream holds labels (magic 2049), not images");
  }
  if (raw.dims.size() != 3) throw DataError(DataError::Kind::kFormat, "IDX image file must have 3 dimensions");
  const std::size_t n = raw.dims[0], rows = raw.dims[1], cols = raw.dims[2];
  if (rows == 0 || cols == 0) throw DataError(DataError::Kind::kFormat, "IDX images have zero size");
  Dataset ds;
  ds.split = split;
  ds.source = DataSource::kMnist;
  ds.images = Tensor({n, 1, kImageSize, kImageSize});
  std::vector<double> plane(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = raw.data[i * plane.size() + p];
    const auto resized = rows == kImageSize && cols == kImageSize
                             ? plane
                             : resize_bilinear(plane, rows, cols, kImageSize, kImageSize);
    double* dst = ds.images.data().data() + i * kImageSize * kImageSize;
    for (std::size_t p = 0; p < resized.size(); ++p) dst[p] = scale_byte(resized[p]);
  }
  return ds;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  IdxArray raw = parse_idx_raw(bytes);
  if (raw.magic != kIdxLabelMagic) {
    throw DataError(DataError::Kind::kBadMagic, "IDX stream holds images (magic 2051), not labels");
  }
  return std::move(raw.data);
}

Dataset parse_cifar_bin(std::span<const std::uint8_t> bytes, Split split) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(DataError::Kind::kBadLength,
                    "CIFAR-10 batch length " + std::to_string(bytes.size()) +
                        " is not a positive multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.split = split;
  ds.source = DataSource::kCifar10;
  ds.images = Tensor({n, 3, kImageSize, kImageSize});
  const std::size_t pixels = kCifarRecordBytes - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes + 1;
    double* dst = ds.images.data().data() + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) dst[p] = scale_byte(rec[p]);
  }
  return ds;
}

Dataset synthetic_toy(std::size_t n, Rng& rng, Split split) {
  using T = ToyShapes;
  if (n == 0) throw InvalidArgument("synthetic_toy needs at least one image");
  Dataset ds;
  ds.split = split;
  ds.source = DataSource::kSynthetic;
  ds.images = Tensor({n, 1, T::kSize, T::kSize}, T::kBackground);
  for (std::size_t i = 0; i < n; ++i) {
    double* img = ds.images.data().data() + i * T::kSize * T::kSize;
    const bool rect = rng.bernoulli(0.5);
    const double intensity = rng.uniform(T::kIntensityLo, T::kIntensityHi);
    if (rect) {
      const auto w = rng.uniform_int(T::kRectMin, T::kRectMax);
      const auto h = rng.uniform_int(T::kRectMin, T::kRectMax);
      const auto x0 = rng.uniform_int(0, T::kSize - w);
      const auto y0 = rng.uniform_int(0, T::kSize - h);
      for (auto y = y0; y < y0 + h; ++y)
        for (auto x = x0; x < x0 + w; ++x) img[y * T::kSize + x] = intensity;
    } else {
      const auto r = rng.uniform_int(T::kRadiusMin, T::kRadiusMax);
      const auto cx = rng.uniform_int(r, T::kSize - 1 - r);
      const auto cy = rng.uniform_int(r, T::kSize - 1 - r);
      for (auto y = cy - r; y <= cy + r; ++y)
        for (auto x = cx - r; x <= cx + r; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img[y * T::kSize + x] = intensity;
    }
  }
  return ds;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path resolve_data_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("SEMDIFF_DATA_ROOT"); env != nullptr && *env != '\0') return env;
  return "data";
}

bool mnist_available(const std::filesystem::path& root) {
  return !find_file(root, {"", "mnist"}, "train-images-idx3-ubyte").empty() &&
         !find_file(root, {"", "mnist"}, "t10k-images-idx3-ubyte").empty();
}

Dataset load_mnist(const std::filesystem::path& root, Split split, std::size_t limit) {
  const std::string name = split == Split::kTrain ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  const auto path = find_file(root, {"", "mnist"}, name);
  if (path.empty()) {
    throw DataError(DataError::Kind::kIo, "MNIST file " + name + " not found under " + root.string());
  }
  const auto bytes = read_file(path);
  IdxArray raw = parse_idx_raw(bytes);
  if (limit != 0) raw = raw.head(limit);
  return parse_idx(serialize_idx(raw), split);
}

Dataset load_cifar10(const std::filesystem::path& root, Split split, std::size_t limit) {
  std::vector<std::string> names;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    names.push_back("test_batch.bin");
  }
  std::vector<std::uint8_t> all;
  for (const auto& name : names) {
    const auto path = find_file(root, {"", "cifar10", "cifar-10-batches-bin"}, name);
    if (path.empty()) {
      throw DataError(DataError::Kind::kIo, "CIFAR-10 file " + name + " not found under " + root.string());
    }
    const auto bytes = read_file(path);
    all.insert(all.end(), bytes.begin(), bytes.end());
    if (limit != 0 && all.size() >= limit * kCifarRecordBytes) break;
  }
  if (limit != 0 && all.size() > limit * kCifarRecordBytes) all.resize(limit * kCifarRecordBytes);
  return parse_cifar_bin(all, split);
}

BatchIterator::BatchIterator(std::size_t size, std::size_t batch_size, bool drop_last)
    : order_(size), batch_size_(batch_size), drop_last_(drop_last) {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

void BatchIterator::start_epoch(Rng& rng) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

bool BatchIterator::next(std::vector<std::size_t>& batch) {
  const std::size_t remaining = order_.size() - cursor_;
  if (remaining == 0 || (drop_last_ && remaining < batch_size_)) return false;
  const std::size_t take = std::min(batch_size_, remaining);
  batch.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return drop_last_ ? order_.size() / batch_size_ : (order_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace semdiff
