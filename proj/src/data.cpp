#include "weakenlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

#include "weakenlab/rng.hpp"

namespace weakenlab {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

void require_header(const std::vector<unsigned char>& bytes, std::size_t size, const std::string& what) {
  if (bytes.size() < size) {
    throw IdxError(IdxError::Kind::length, what + " is too short for an IDX header (" +
                                               std::to_string(bytes.size()) + " bytes)");
  }
}

std::size_t channel_count(const Tensor& inputs) { return inputs.rank() >= 2 ? inputs.dim(1) : 1; }

}  // namespace

Shape Dataset::sample_shape() const {
  if (inputs.rank() == 0) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void Dataset::validate() const {
  if (inputs.rank() < 2) throw ShapeError("dataset inputs must be [N, ...], got " + shape_str(inputs.shape()));
  if (inputs.dim(0) != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t class_count) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  require_header(images, 16, images_path.string());
  require_header(labels, 8, labels_path.string());

  const std::uint32_t image_magic = read_be32(images, 0);
  if (image_magic != kIdxImageMagic) {
    throw IdxError(IdxError::Kind::format, images_path.string() + ": image magic " + hex32(image_magic) +
                                               ", expected " + hex32(kIdxImageMagic));
  }
  const std::uint32_t label_magic = read_be32(labels, 0);
  if (label_magic != kIdxLabelMagic) {
    throw IdxError(IdxError::Kind::format, labels_path.string() + ": label magic " + hex32(label_magic) +
                                               ", expected " + hex32(kIdxLabelMagic));
  }
  const std::size_t count = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t label_count = read_be32(labels, 4);
  if (count != label_count) {
    throw IdxError(IdxError::Kind::consistency, "image file holds " + std::to_string(count) +
                                                    " images but label file holds " + std::to_string(label_count));
  }
  const std::size_t image_bytes = 16 + count * rows * cols;
  if (images.size() != image_bytes) {
    throw IdxError(IdxError::Kind::length, images_path.string() + ": expected " + std::to_string(image_bytes) +
                                               " bytes, found " + std::to_string(images.size()));
  }
  if (labels.size() != 8 + count) {
    throw IdxError(IdxError::Kind::length, labels_path.string() + ": expected " + std::to_string(8 + count) +
                                               " bytes, found " + std::to_string(labels.size()));
  }

  Dataset ds;
  std::vector<double> pixels(count * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = images[16 + i] / 255.0;
  ds.inputs = Tensor({count, 1, rows, cols}, std::move(pixels));
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = labels[8 + i];
    if (static_cast<std::size_t>(ds.labels[i]) >= class_count) {
      throw IdxError(IdxError::Kind::consistency,
                     "label " + std::to_string(ds.labels[i]) + " exceeds class count " + std::to_string(class_count));
    }
  }
  ds.class_count = class_count;
  ds.provenance = "idx:" + images_path.string() + "," + labels_path.string();
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  ds.validate();
  if (!ds.normalization.mean.empty()) throw std::invalid_argument("write_idx: dataset is normalized");
  const auto& s = ds.inputs.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("write_idx: expected [N,1,H,W], got " + shape_str(s));

  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images || !labels) throw IdxError(IdxError::Kind::io, "cannot open IDX output files");
  write_be32(images, kIdxImageMagic);
  write_be32(images, static_cast<std::uint32_t>(s[0]));
  write_be32(images, static_cast<std::uint32_t>(s[2]));
  write_be32(images, static_cast<std::uint32_t>(s[3]));
  for (double v : ds.inputs.data()) {
    const double scaled = v * 255.0;
    const double byte = std::round(scaled);
    if (byte < 0.0 || byte > 255.0 || std::abs(scaled - byte) > 1e-6) {
      throw std::invalid_argument("write_idx: pixel value " + std::to_string(v) + " is not on the k/255 grid");
    }
    images.put(static_cast<char>(static_cast<unsigned char>(byte)));
  }
  write_be32(labels, kIdxLabelMagic);
  write_be32(labels, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) {
    if (l > 255) throw std::invalid_argument("write_idx: label does not fit a byte");
    labels.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
  if (!images || !labels) throw IdxError(IdxError::Kind::io, "failed writing IDX files");
}

Dataset normalize(const Dataset& ds, const std::vector<double>& mean, const std::vector<double>& std) {
  if (!ds.normalization.mean.empty()) throw std::invalid_argument("dataset is already normalized");
  const std::size_t channels = channel_count(ds.inputs);
  if (mean.size() != std.size() || (mean.size() != 1 && mean.size() != channels)) {
    throw std::invalid_argument("normalization needs 1 or " + std::to_string(channels) + " mean/std entries");
  }
  for (double s : std)
    if (!(s > 0.0)) throw std::invalid_argument("normalization std must be > 0");
  Dataset out = ds;
  Normalization norm{mean.size() == 1 ? std::vector<double>(channels, mean[0]) : mean,
                     std.size() == 1 ? std::vector<double>(channels, std[0]) : std};
  const std::size_t n = ds.size();
  const std::size_t inner = n == 0 ? 0 : ds.inputs.numel() / (n * channels);
  const auto src = ds.inputs.data();
  std::vector<double> values(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t ch = (i / inner) % channels;
    values[i] = (src[i] - norm.mean[ch]) / norm.std[ch];
  }
  out.inputs = Tensor(ds.inputs.shape(), std::move(values));
  out.normalization = std::move(norm);
  return out;
}

Dataset denormalize(const Dataset& ds) {
  if (ds.normalization.mean.empty()) return ds;
  const std::size_t channels = ds.normalization.mean.size();
  const std::size_t n = ds.size();
  const std::size_t inner = n == 0 ? 0 : ds.inputs.numel() / (n * channels);
  const auto src = ds.inputs.data();
  std::vector<double> values(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t ch = (i / inner) % channels;
    values[i] = src[i] * ds.normalization.std[ch] + ds.normalization.mean[ch];
  }
  Dataset out = ds;
  out.inputs = Tensor(ds.inputs.shape(), std::move(values));
  out.normalization = {};
  return out;
}

Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const Shape sample = ds.sample_shape();
  const std::size_t row = shape_numel(sample);
  const auto src = ds.inputs.data();
  std::vector<double> values(indices.size() * row);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw std::out_of_range("select: index out of range");
    std::copy_n(src.begin() + static_cast<long>(indices[i] * row), row, values.begin() + static_cast<long>(i * row));
    labels[i] = ds.labels[indices[i]];
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Dataset out;
  out.inputs = Tensor(std::move(shape), std::move(values));
  out.labels = std::move(labels);
  out.class_count = ds.class_count;
  out.normalization = ds.normalization;
  out.provenance = ds.provenance;
  return out;
}

Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const std::size_t total = ds.size();
  if (n > total) {
    throw std::invalid_argument("subsample: requested " + std::to_string(n) + " of " + std::to_string(total) +
                                " samples");
  }
  std::vector<std::vector<std::size_t>> members(ds.class_count);
  for (std::size_t i = 0; i < total; ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Largest-remainder apportionment of n across classes.
  std::vector<std::size_t> quota(ds.class_count, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    const double exact = total == 0 ? 0.0
                                    : static_cast<double>(n) * static_cast<double>(members[k].size()) /
                                          static_cast<double>(total);
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    remainders.emplace_back(exact - static_cast<double>(quota[k]), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [frac, k] : remainders) {
    if (assigned == n) break;
    if (quota[k] < members[k].size()) {
      ++quota[k];
      ++assigned;
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    const auto perm = rng.permutation(members[k].size());
    for (std::size_t j = 0; j < quota[k]; ++j) chosen.push_back(members[k][perm[j]]);
  }
  std::shuffle(chosen.begin(), chosen.end(), rng.engine());
  Dataset out = select(ds, chosen);
  out.provenance = ds.provenance + "|subsample(" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
  return out;
}

Dataset scale_inputs(const Dataset& ds, double factor) {
  const auto src = ds.inputs.data();
  std::vector<double> values(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) values[i] = src[i] * factor;
  Dataset out = ds;
  out.inputs = Tensor(ds.inputs.shape(), std::move(values));
  return out;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
    : ds_(&ds), batch_size_(batch_size), order_(ds.size()) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (shuffle_seed) {
    order_ = Rng(*shuffle_seed).permutation(ds.size());
  } else {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  const Shape sample = ds_->sample_shape();
  const std::size_t row = shape_numel(sample);
  const auto src = ds_->inputs.data();
  std::vector<double> values((end - cursor_) * row);
  std::vector<int> labels(end - cursor_);
  for (std::size_t i = cursor_; i < end; ++i) {
    std::copy_n(src.begin() + static_cast<long>(order_[i] * row), row,
                values.begin() + static_cast<long>((i - cursor_) * row));
    labels[i - cursor_] = ds_->labels[order_[i]];
  }
  Shape shape{end - cursor_};
  shape.insert(shape.end(), sample.begin(), sample.end());
  cursor_ = end;
  return make_batch(Tensor(std::move(shape), std::move(values)), labels, ds_->class_count);
}

BatchIterator batches(const Dataset& ds, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed) {
  return BatchIterator(ds, batch_size, shuffle_seed);
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (dims < 2) throw std::invalid_argument("synthetic data needs at least 2 dimensions");
  if (samples_per_class < 1) throw std::invalid_argument("synthetic data needs samples_per_class >= 1");
  if (!(noise_std >= 0.0) || !(mean_scale >= 0.0)) throw std::invalid_argument("synthetic scales must be >= 0");
}

Dataset synthetic_blobs(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<double> centers(spec.classes * spec.dims, 0.0);
  if (spec.mean_scale > 0.0)
    for (auto& c : centers) c = rng.normal(0.0, spec.mean_scale);

  const std::size_t n = spec.classes * spec.samples_per_class;
  std::vector<double> values(n * spec.dims);
  std::vector<int> labels(n);
  for (std::size_t k = 0; k < spec.classes; ++k)
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const std::size_t i = k * spec.samples_per_class + s;
      labels[i] = static_cast<int>(k);
      for (std::size_t d = 0; d < spec.dims; ++d) {
        const double noise = spec.noise_std > 0.0 ? rng.normal(0.0, spec.noise_std) : 0.0;
        values[i * spec.dims + d] = centers[k * spec.dims + d] + noise;
      }
    }
  Dataset ds;
  ds.inputs = Tensor({n, spec.dims}, std::move(values));
  ds.labels = std::move(labels);
  ds.class_count = spec.classes;
  ds.provenance = "synthetic_blobs(seed=" + std::to_string(spec.seed) + ")";
  return ds;
}

void export_scatter(const Dataset& ds, const Dataset& weakened, std::array<std::size_t, 3> dims,
                    const std::filesystem::path& path) {
  if (ds.size() != weakened.size() || ds.sample_shape() != weakened.sample_shape()) {
    throw std::invalid_argument("export_scatter: datasets are not row-aligned");
  }
  const std::size_t row = shape_numel(ds.sample_shape());
  for (std::size_t d : dims) {
    if (d >= row) {
      throw std::invalid_argument("export_scatter: dimension " + std::to_string(d) + " outside sample width " +
                                  std::to_string(row));
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "x,y,z,label,kind\n";
  char buf[128];
  auto emit = [&](const Dataset& src, std::size_t i, const char* kind) {
    const auto v = src.inputs.data();
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%d,%s\n", v[i * row + dims[0]], v[i * row + dims[1]],
                  v[i * row + dims[2]], src.labels[i], kind);
    out << buf;
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    emit(ds, i, "original");
    emit(weakened, i, "weakened");
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace weakenlab
