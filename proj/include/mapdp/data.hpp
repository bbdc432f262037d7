#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/rng.hpp"
#include "mapdp/tensor.hpp"

namespace mapdp {

template <typename T>
struct Dataset {
  size_t dim = 0;
  size_t classes = 0;
  std::vector<T> images;  // n x dim, row-major
  std::vector<int> labels;
  T norm_mean = T(0);
  T norm_std = T(1);

  size_t size() const { return labels.size(); }
};

/// Raw contents of an IDX file: dimension sizes plus the byte payload.
struct IdxData {
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;
};

namespace idx {

constexpr uint32_t kLabelMagic = 0x00000801;
constexpr uint32_t kImageMagic = 0x00000803;

inline uint32_t read_u32be(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated IDX header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

inline void write_u32be(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

/// Parses an IDX file of unsigned bytes; the magic must name either the
/// 1-d label layout or the 3-d image layout.
inline IdxData parse(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const uint32_t magic = read_u32be(in);
  size_t ndims;
  if (magic == kLabelMagic) ndims = 1;
  else if (magic == kImageMagic) ndims = 3;
  else throw IoError("bad IDX magic in " + path);
  IdxData out;
  uint64_t total = 1;
  for (size_t i = 0; i < ndims; ++i) {
    const uint32_t d = read_u32be(in);
    out.dims.push_back(d);
    total *= d;
    if (total > (uint64_t(1) << 36)) throw IoError("IDX dimensions overflow");
  }
  out.payload.resize(total);
  in.read(reinterpret_cast<char*>(out.payload.data()),
          static_cast<std::streamsize>(total));
  if (static_cast<uint64_t>(in.gcount()) != total)
    throw IoError("truncated IDX payload in " + path);
  return out;
}

inline void write(const std::string& path, const IdxData& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_u32be(out, data.dims.size() == 1 ? kLabelMagic : kImageMagic);
  for (uint32_t d : data.dims) write_u32be(out, d);
  out.write(reinterpret_cast<const char*>(data.payload.data()),
            static_cast<std::streamsize>(data.payload.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace idx

/// Loads a paired image/label IDX set; pixels scale by 1/255.
template <typename T>
Dataset<T> load_idx_dataset(const std::string& images_path,
                            const std::string& labels_path) {
  IdxData img = idx::parse(images_path);
  IdxData lab = idx::parse(labels_path);
  if (img.dims.size() != 3) throw IoError(images_path + " is not an image IDX file");
  if (lab.dims.size() != 1) throw IoError(labels_path + " is not a label IDX file");
  if (img.dims[0] != lab.dims[0])
    throw IoError("image/label counts differ: " + std::to_string(img.dims[0]) +
                  " vs " + std::to_string(lab.dims[0]));
  Dataset<T> ds;
  ds.dim = size_t(img.dims[1]) * img.dims[2];
  ds.images.resize(img.payload.size());
  for (size_t i = 0; i < img.payload.size(); ++i)
    ds.images[i] = static_cast<T>(img.payload[i]) / T(255);
  ds.labels.assign(lab.payload.begin(), lab.payload.end());
  int max_label = 0;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.classes = static_cast<size_t>(max_label) + 1;
  return ds;
}

/// Isotropic Gaussian blobs, one per class; blob means drawn uniform in
/// [-1, 1]^dim. Labels are assigned by blob.
template <typename T>
Dataset<T> gen_synthetic(size_t classes, size_t per_class, size_t dim,
                         uint64_t seed, double sigma = 0.3) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  Rng rng(seed);
  std::vector<double> means(classes * dim);
  for (auto& m : means) m = rng.uniform(-1.0, 1.0);
  Dataset<T> ds;
  ds.dim = dim;
  ds.classes = classes;
  ds.images.reserve(classes * per_class * dim);
  ds.labels.reserve(classes * per_class);
  for (size_t c = 0; c < classes; ++c) {
    for (size_t s = 0; s < per_class; ++s) {
      for (size_t d = 0; d < dim; ++d)
        ds.images.push_back(
            static_cast<T>(means[c * dim + d] + sigma * rng.gaussian()));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

/// Quantizes a synthetic dataset into IDX image/label payloads. Values are
/// affinely mapped from [lo, hi] (clamped) onto the byte range so files
/// round-trip through the standard loader.
template <typename T>
std::pair<IdxData, IdxData> to_idx(const Dataset<T>& ds, uint32_t rows,
                                   uint32_t cols, double lo = -2.0,
                                   double hi = 2.0) {
  if (size_t(rows) * cols != ds.dim)
    throw ConfigError("rows*cols must equal the feature dimension");
  IdxData images, labels;
  images.dims = {static_cast<uint32_t>(ds.size()), rows, cols};
  images.payload.resize(ds.images.size());
  for (size_t i = 0; i < ds.images.size(); ++i) {
    double v = (static_cast<double>(ds.images[i]) - lo) / (hi - lo);
    v = std::min(1.0, std::max(0.0, v));
    images.payload[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  labels.dims = {static_cast<uint32_t>(ds.size())};
  labels.payload.resize(ds.labels.size());
  for (size_t i = 0; i < ds.labels.size(); ++i)
    labels.payload[i] = static_cast<uint8_t>(ds.labels[i]);
  return {images, labels};
}

/// Standardizes train and test with scalar mean/std computed on train only.
template <typename T>
void standardize(Dataset<T>& train, Dataset<T>& test) {
  double sum = 0.0;
  for (T v : train.images) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(train.images.size());
  double var = 0.0;
  for (T v : train.images) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  double sd = std::sqrt(var / static_cast<double>(train.images.size()));
  if (sd == 0.0) sd = 1.0;
  train.norm_mean = test.norm_mean = static_cast<T>(mean);
  train.norm_std = test.norm_std = static_cast<T>(sd);
  for (auto* ds : {&train, &test})
    for (auto& v : ds->images)
      v = (v - ds->norm_mean) / ds->norm_std;
}

struct Batch {
  std::vector<size_t> indices;
};

/// Deterministic epoch batching: one fresh permutation per epoch seeded by
/// run_seed xor epoch; the last partial batch is kept.
inline std::vector<Batch> make_batches(size_t n, size_t batch_size,
                                       uint64_t run_seed, uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  Rng rng(run_seed ^ epoch);
  rng.shuffle(perm);
  std::vector<Batch> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    Batch b;
    const size_t end = std::min(n, start + batch_size);
    b.indices.assign(perm.begin() + start, perm.begin() + end);
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Materializes one batch as an autodiff input tensor plus labels.
template <typename T>
std::pair<TensorPtr<T>, std::vector<int>> gather_batch(const Dataset<T>& ds,
                                                       const Batch& batch) {
  auto x = make_tensor<T>({batch.indices.size(), ds.dim});
  std::vector<int> y(batch.indices.size());
  for (size_t r = 0; r < batch.indices.size(); ++r) {
    const size_t src = batch.indices[r];
    std::copy(ds.images.begin() + src * ds.dim,
              ds.images.begin() + (src + 1) * ds.dim,
              x->data.begin() + r * ds.dim);
    y[r] = ds.labels[src];
  }
  return {x, y};
}

/// Truncates a dataset to its first n rows (subset selection).
template <typename T>
void truncate(Dataset<T>& ds, size_t n) {
  if (n == 0 || n >= ds.size()) return;
  ds.images.resize(n * ds.dim);
  ds.labels.resize(n);
}

}  // namespace mapdp
