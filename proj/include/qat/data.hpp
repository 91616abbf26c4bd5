#pragma once

// Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, seeded
// Gaussian clusters, and a small binary cache format.

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { train = 0, test = 1 };

struct Dataset {
  std::vector<float> images;          // [N, C, H, W], row-major
  std::vector<std::int32_t> labels;   // [N]
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  int num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return channels * height * width; }
  Shape shape() const { return Shape{size(), channels, height, width}; }

  void validate() const {
    if (images.size() != size() * sample_numel()) throw DataError("dataset: image buffer does not match shape");
    for (auto l : labels)
      if (l < 0 || l >= num_classes) throw DataError("dataset: label " + std::to_string(l) + " out of range");
  }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) {
    throw DataError(what + ": truncated at byte offset " + std::to_string(off) + " (file has " +
                    std::to_string(b.size()) + " bytes)");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(U)];
  const auto off = is.tellg();
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw DataError(what + ": truncated at byte offset " + std::to_string(static_cast<long long>(off)));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// MNIST-style IDX pair. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  const std::string iname = images_path.string(), lname = labels_path.string();

  if (auto magic = detail::read_be32(img, 0, iname); magic != kIdxImagesMagic) {
    throw DataError(iname + ": bad IDX image magic at byte offset 0");
  }
  if (auto magic = detail::read_be32(lab, 0, lname); magic != kIdxLabelsMagic) {
    throw DataError(lname + ": bad IDX label magic at byte offset 0");
  }
  const std::size_t n = detail::read_be32(img, 4, iname);
  const std::size_t rows = detail::read_be32(img, 8, iname);
  const std::size_t cols = detail::read_be32(img, 12, iname);
  const std::size_t nl = detail::read_be32(lab, 4, lname);
  if (n != nl) throw DataError(iname + ": " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  const std::size_t need_img = 16 + n * rows * cols;
  if (img.size() < need_img) {
    throw DataError(iname + ": truncated at byte offset " + std::to_string(img.size()) + ", expected " +
                    std::to_string(need_img) + " bytes");
  }
  if (lab.size() < 8 + n) {
    throw DataError(lname + ": truncated at byte offset " + std::to_string(lab.size()) + ", expected " +
                    std::to_string(8 + n) + " bytes");
  }

  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.images.resize(n * rows * cols);
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max(10, max_label + 1);
  return d;
}

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

// CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes per record.
inline Dataset load_cifar_bin(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw DataError("load_cifar_bin: no input files");
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.num_classes = 10;
  for (const auto& p : paths) {
    const auto bytes = detail::read_file(p);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw DataError(p.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kCifarRecord) + " (truncated record at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % kCifarRecord) + ")");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < n; ++r) {
      const unsigned char* rec = bytes.data() + r * kCifarRecord;
      if (rec[0] > 9) throw DataError(p.string() + ": label " + std::to_string(rec[0]) + " at byte offset " +
                                      std::to_string(r * kCifarRecord));
      d.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kCifarRecord; ++i) d.images.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
  }
  return d;
}

// Gaussian clusters around orthonormal directions scaled so that every pair
// of class means is exactly one unit apart; isotropic noise of std `noise`.
// The means depend only on `seed`; `stream` selects an independent sample
// draw (e.g. 0 = train, 1 = test). Values are mapped into [0,1] by a fixed
// affine transform that does not depend on the drawn samples.
inline Dataset make_synthetic(int num_classes, std::size_t n_per_class, std::size_t dim, std::uint64_t seed,
                              double noise = 0.1, std::uint64_t stream = 0) {
  if (num_classes < 2) throw DataError("make_synthetic: need at least two classes");
  if (n_per_class == 0) throw DataError("make_synthetic: n_per_class must be > 0");
  if (dim < static_cast<std::size_t>(num_classes)) throw DataError("make_synthetic: dim must be >= num_classes");
  if (!(noise >= 0.0)) throw DataError("make_synthetic: noise must be >= 0");

  std::mt19937_64 mean_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(num_classes), std::vector<double>(dim));
  for (auto& m : means) {
    for (auto& v : m) v = normal(mean_rng);
  }
  // Gram-Schmidt
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dot += means[c][j] * means[p][j];
      for (std::size_t j = 0; j < dim; ++j) means[c][j] -= dot * means[p][j];
    }
    double norm = 0.0;
    for (double v : means[c]) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : means[c]) v /= norm;
  }
  for (auto& m : means)
    for (double& v : m) v /= std::sqrt(2.0);

  const double bound = 1.0 / std::sqrt(2.0) + 5.0 * noise;
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
  std::normal_distribution<double> sample_noise(0.0, 1.0);
  Dataset d;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (side * side == dim) {
    d.height = side;
    d.width = side;
  } else {
    d.height = 1;
    d.width = dim;
  }
  d.channels = 1;
  d.num_classes = num_classes;
  d.split = stream == 0 ? Split::train : Split::test;
  d.images.reserve(n_per_class * static_cast<std::size_t>(num_classes) * dim);
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double x = means[static_cast<std::size_t>(c)][j] + noise * sample_noise(rng);
        d.images.push_back(static_cast<float>(std::clamp((x + bound) / (2.0 * bound), 0.0, 1.0)));
      }
      d.labels.push_back(c);
    }
  }
  return d;
}

inline Dataset take_subset(const Dataset& d, std::size_t count) {
  if (count == 0 || count >= d.size()) return d;
  Dataset s = d;
  s.labels.resize(count);
  s.images.resize(count * d.sample_numel());
  return s;
}

// Per-channel standardization fitted on a training split.
struct Standardizer {
  std::vector<float> mean;
  std::vector<float> stddev;

  static Standardizer fit(const Dataset& d) {
    Standardizer s;
    s.mean.assign(d.channels, 0.0f);
    s.stddev.assign(d.channels, 1.0f);
    const std::size_t hw = d.height * d.width;
    for (std::size_t c = 0; c < d.channels; ++c) {
      double acc = 0.0, acc2 = 0.0;
      for (std::size_t n = 0; n < d.size(); ++n)
        for (std::size_t k = 0; k < hw; ++k) {
          const double v = d.images[(n * d.channels + c) * hw + k];
          acc += v;
          acc2 += v * v;
        }
      const double cnt = static_cast<double>(d.size() * hw);
      const double m = acc / cnt;
      const double var = std::max(acc2 / cnt - m * m, 0.0);
      s.mean[c] = static_cast<float>(m);
      s.stddev[c] = static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
    }
    return s;
  }

  void apply(Dataset& d) const {
    const std::size_t hw = d.height * d.width;
    for (std::size_t n = 0; n < d.size(); ++n)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t k = 0; k < hw; ++k) {
          float& v = d.images[(n * d.channels + c) * hw + k];
          v = (v - mean[c]) / stddev[c];
        }
  }
};

inline constexpr std::uint32_t kCacheMagic = 0x44544151;  // "QATD" little-endian
inline constexpr std::uint32_t kCacheVersion = 1;

// Cache layout (little-endian): magic u32, version u32, N u64, C u32, H u32,
// W u32, num_classes i32, split u8, labels i32[N], pixels f32[N*C*H*W].
inline void save_cache(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  detail::put_le<std::uint32_t>(os, kCacheMagic);
  detail::put_le<std::uint32_t>(os, kCacheVersion);
  detail::put_le<std::uint64_t>(os, d.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.channels));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.height));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.width));
  detail::put_le<std::int32_t>(os, d.num_classes);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(d.split));
  for (auto l : d.labels) detail::put_le<std::int32_t>(os, l);
  for (float v : d.images) detail::put_le<float>(os, v);
}

inline Dataset load_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string what = path.string();
  if (detail::get_le<std::uint32_t>(is, what) != kCacheMagic) throw DataError(what + ": bad cache magic at byte offset 0");
  if (auto v = detail::get_le<std::uint32_t>(is, what); v != kCacheVersion) {
    throw DataError(what + ": unsupported cache version " + std::to_string(v));
  }
  Dataset d;
  const auto n = detail::get_le<std::uint64_t>(is, what);
  d.channels = detail::get_le<std::uint32_t>(is, what);
  d.height = detail::get_le<std::uint32_t>(is, what);
  d.width = detail::get_le<std::uint32_t>(is, what);
  d.num_classes = detail::get_le<std::int32_t>(is, what);
  d.split = static_cast<Split>(detail::get_le<std::uint8_t>(is, what));
  d.labels.resize(n);
  for (auto& l : d.labels) l = detail::get_le<std::int32_t>(is, what);
  d.images.resize(n * d.sample_numel());
  for (auto& v : d.images) v = detail::get_le<float>(is, what);
  d.validate();
  return d;
}

struct Batch {
  std::vector<float> images;
  std::vector<std::int32_t> labels;
  Shape shape;
};

// Seeded epoch-wise shuffling with optional CIFAR-style augmentation
// (4-pixel zero-pad random crop and horizontal flip).
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle = true,
                bool augment = false, bool drop_last = true)
      : data_(&data), batch_(batch_size), rng_(seed), shuffle_(shuffle), augment_(augment), drop_last_(drop_last) {
    if (batch_size == 0) throw DataError("batch size must be > 0");
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    start_epoch();
  }

  std::size_t batches_per_epoch() const {
    return drop_last_ ? data_->size() / batch_ : (data_->size() + batch_ - 1) / batch_;
  }

  // Returns false at the end of an epoch (and reshuffles for the next).
  bool next(Batch& b) {
    const std::size_t n = data_->size();
    if (pos_ >= n || (drop_last_ && pos_ + batch_ > n)) {
      start_epoch();
      return false;
    }
    const std::size_t count = std::min(batch_, n - pos_);
    const std::size_t per = data_->sample_numel();
    b.images.resize(count * per);
    b.labels.resize(count);
    b.shape = Shape{count, data_->channels, data_->height, data_->width};
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = order_[pos_ + i];
      b.labels[i] = data_->labels[idx];
      const float* src = data_->images.data() + idx * per;
      float* dst = b.images.data() + i * per;
      if (augment_) augment_into(src, dst);
      else std::copy(src, src + per, dst);
    }
    pos_ += count;
    return true;
  }

 private:
  void start_epoch() {
    pos_ = 0;
    if (!shuffle_) return;
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order_[i - 1], order_[pick(rng_)]);
    }
  }

  void augment_into(const float* src, float* dst) {
    const long H = static_cast<long>(data_->height), W = static_cast<long>(data_->width);
    std::uniform_int_distribution<int> shift(-4, 4);
    std::bernoulli_distribution flip(0.5);
    const long dy = shift(rng_), dx = shift(rng_);
    const bool f = flip(rng_);
    for (std::size_t c = 0; c < data_->channels; ++c)
      for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
          const long sy = y + dy;
          const long sx0 = x + dx;
          const long sx = f ? (W - 1 - sx0) : sx0;
          float v = 0.0f;
          if (sy >= 0 && sy < H && sx >= 0 && sx < W) v = src[(static_cast<long>(c) * H + sy) * W + sx];
          dst[(static_cast<long>(c) * H + y) * W + x] = v;
        }
  }

  const Dataset* data_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  bool shuffle_;
  bool augment_;
  bool drop_last_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace qat
