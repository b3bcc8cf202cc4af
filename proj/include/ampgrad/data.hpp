#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ampgrad/rng.hpp"
#include "ampgrad/schedule.hpp"
#include "ampgrad/tensor.hpp"

namespace ampgrad {

// Labelled dataset; images is [N,C,H,W] for image data or [N,D] for vectors.
struct Dataset {
  Tensor<float> images;
  std::vector<int32_t> labels;
  int64_t num_classes = 0;

  int64_t size() const { return images.shape.empty() ? 0 : images.dim(0); }
  int64_t sample_numel() const { return size() == 0 ? 0 : images.numel() / size(); }
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

// Gathers rows `indices` into one batch tensor plus labels.
inline std::pair<Tensor<float>, std::vector<int32_t>> make_batch(
    const Dataset& ds, const std::vector<size_t>& indices, size_t first, size_t count) {
  Shape shape = ds.images.shape;
  shape[0] = static_cast<int64_t>(count);
  Tensor<float> batch(shape);
  std::vector<int32_t> labels(count);
  const int64_t stride = ds.sample_numel();
  for (size_t i = 0; i < count; ++i) {
    const size_t src = indices[first + i];
    std::copy_n(ds.images.data.data() + static_cast<int64_t>(src) * stride, stride,
                batch.data.data() + static_cast<int64_t>(i) * stride);
    labels[i] = ds.labels[src];
  }
  return {std::move(batch), std::move(labels)};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: 3073-byte records, 1 label byte then 3072 pixel
// bytes (1024 R, 1024 G, 1024 B; each plane row-major 32x32). Pixels are
// scaled to [0,1] on load; serialize_cifar_record inverts that byte-exactly.
// ---------------------------------------------------------------------------
inline constexpr int64_t kCifarRecordBytes = 3073;
inline constexpr int64_t kCifarPixels = 3072;

inline Dataset read_cifar_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open CIFAR file: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.empty() || static_cast<int64_t>(bytes.size()) % kCifarRecordBytes != 0)
    throw ParseError("CIFAR file " + path + ": size " + std::to_string(bytes.size()) +
                     " is not a multiple of " + std::to_string(kCifarRecordBytes) +
                     " (stray " + std::to_string(bytes.size() % kCifarRecordBytes) +
                     " bytes at offset " +
                     std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes) + ")");
  const int64_t n = static_cast<int64_t>(bytes.size()) / kCifarRecordBytes;
  Dataset ds;
  ds.num_classes = 10;
  ds.images = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const unsigned char* rec =
        reinterpret_cast<const unsigned char*>(bytes.data()) + i * kCifarRecordBytes;
    if (rec[0] > 9)
      throw ParseError("CIFAR file " + path + ": record " + std::to_string(i) + " has label byte " +
                       std::to_string(rec[0]) + " > 9 (offset " +
                       std::to_string(i * kCifarRecordBytes) + ")");
    ds.labels[static_cast<size_t>(i)] = rec[0];
    float* dst = ds.images.data.data() + i * kCifarPixels;
    for (int64_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return ds;
}

inline Dataset concat_datasets(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw ArgumentError("concat_datasets: nothing to concatenate");
  int64_t total = 0;
  for (const auto& p : parts) total += p.size();
  Shape shape = parts[0].images.shape;
  shape[0] = total;
  Dataset out;
  out.num_classes = parts[0].num_classes;
  out.images = Tensor<float>(shape);
  out.labels.reserve(static_cast<size_t>(total));
  float* dst = out.images.data.data();
  for (const auto& p : parts) {
    std::copy(p.images.data.begin(), p.images.data.end(), dst);
    dst += p.images.numel();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

// Loads data_batch_1..5.bin and test_batch.bin from dir.
inline std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i)
    train_parts.push_back(read_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin"));
  Dataset test = read_cifar_file(dir + "/test_batch.bin");
  return {concat_datasets(train_parts), std::move(test)};
}

// Inverse of the load scaling; valid for datasets still on the [0,1] pixel grid.
inline std::array<uint8_t, kCifarRecordBytes> serialize_cifar_record(const Dataset& ds, int64_t i) {
  if (i < 0 || i >= ds.size()) throw ArgumentError("serialize_cifar_record: index out of range");
  if (ds.sample_numel() != kCifarPixels)
    throw ShapeError("serialize_cifar_record: dataset is not CIFAR-shaped");
  std::array<uint8_t, kCifarRecordBytes> rec{};
  rec[0] = static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]);
  const float* src = ds.images.data.data() + i * kCifarPixels;
  for (int64_t p = 0; p < kCifarPixels; ++p) {
    const double v = static_cast<double>(src[p]) * 255.0;
    const long b = std::lround(v);
    if (b < 0 || b > 255)
      throw NumericError("serialize_cifar_record: pixel value " + std::to_string(src[p]) +
                         " is not on the byte grid");
    rec[static_cast<size_t>(1 + p)] = static_cast<uint8_t>(b);
  }
  return rec;
}

inline void write_cifar_file(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open CIFAR file for writing: " + path);
  for (int64_t i = 0; i < ds.size(); ++i) {
    const auto rec = serialize_cifar_record(ds, i);
    os.write(reinterpret_cast<const char*>(rec.data()), rec.size());
  }
  if (!os) throw IoError("CIFAR write failed: " + path);
}

// ---------------------------------------------------------------------------
// Subsetting & normalization
// ---------------------------------------------------------------------------
inline Dataset take_rows(const Dataset& ds, const std::vector<size_t>& rows) {
  Shape shape = ds.images.shape;
  shape[0] = static_cast<int64_t>(rows.size());
  Dataset out;
  out.num_classes = ds.num_classes;
  out.images = Tensor<float>(shape);
  out.labels.resize(rows.size());
  const int64_t stride = ds.sample_numel();
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(ds.images.data.data() + static_cast<int64_t>(rows[i]) * stride, stride,
                out.images.data.data() + static_cast<int64_t>(i) * stride);
    out.labels[i] = ds.labels[rows[i]];
  }
  return out;
}

// Seeded sample of n rows; stratified keeps per-class counts within +-1.
inline Dataset subset(const Dataset& ds, int64_t n, uint64_t seed, bool stratified) {
  if (n > ds.size())
    throw ArgumentError("subset: requested " + std::to_string(n) + " of " +
                        std::to_string(ds.size()) + " samples");
  auto rng = make_stream(seed, RngDomain::kSubset);
  std::vector<size_t> rows;
  if (!stratified) {
    auto perm = random_permutation(static_cast<size_t>(ds.size()), rng);
    rows.assign(perm.begin(), perm.begin() + n);
  } else {
    const int64_t k = ds.num_classes;
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(k));
    for (size_t i = 0; i < ds.labels.size(); ++i)
      by_class[static_cast<size_t>(ds.labels[i])].push_back(i);
    for (int64_t c = 0; c < k; ++c) {
      const int64_t quota = n / k + (c < n % k ? 1 : 0);
      auto& pool = by_class[static_cast<size_t>(c)];
      if (quota > static_cast<int64_t>(pool.size()))
        throw ArgumentError("subset: class " + std::to_string(c) + " has only " +
                            std::to_string(pool.size()) + " samples, need " + std::to_string(quota));
      auto picked = sample_without_replacement(pool, static_cast<size_t>(quota), rng);
      rows.insert(rows.end(), picked.begin(), picked.end());
    }
    auto shuffle_order = random_permutation(rows.size(), rng);
    std::vector<size_t> shuffled(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) shuffled[i] = rows[shuffle_order[i]];
    rows = std::move(shuffled);
  }
  return take_rows(ds, rows);
}

// Standardizes per channel: (x - mean) / std. Without given stats, computes
// them over ds (population std); pass train stats to normalize a test set.
inline std::pair<Dataset, NormalizationStats> normalize(const Dataset& ds,
                                                        const NormalizationStats* stats = nullptr) {
  const int64_t channels = ds.images.rank() >= 2 ? ds.images.dim(1) : 1;
  const int64_t spatial = ds.sample_numel() / channels;
  NormalizationStats st;
  if (stats != nullptr) {
    if (static_cast<int64_t>(stats->mean.size()) != channels ||
        static_cast<int64_t>(stats->std.size()) != channels)
      throw ArgumentError("normalize: stats channel count mismatch");
    st = *stats;
  } else {
    st.mean.assign(static_cast<size_t>(channels), 0.0);
    st.std.assign(static_cast<size_t>(channels), 0.0);
    const int64_t n = ds.size();
    for (int64_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const float* p = ds.images.data.data() + (i * channels + c) * spatial;
        for (int64_t j = 0; j < spatial; ++j) sum += static_cast<double>(p[j]);
      }
      const double mean = sum / static_cast<double>(n * spatial);
      double sq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const float* p = ds.images.data.data() + (i * channels + c) * spatial;
        for (int64_t j = 0; j < spatial; ++j) {
          const double d = static_cast<double>(p[j]) - mean;
          sq += d * d;
        }
      }
      st.mean[static_cast<size_t>(c)] = mean;
      st.std[static_cast<size_t>(c)] = std::sqrt(sq / static_cast<double>(n * spatial));
    }
  }
  for (int64_t c = 0; c < channels; ++c)
    if (!(st.std[static_cast<size_t>(c)] > 0.0))
      throw NumericError("normalize: channel " + std::to_string(c) + " has zero std");

  Dataset out;
  out.num_classes = ds.num_classes;
  out.labels = ds.labels;
  out.images = Tensor<float>(ds.images.shape);
  for (int64_t i = 0; i < ds.size(); ++i) {
    for (int64_t c = 0; c < channels; ++c) {
      const float* src = ds.images.data.data() + (i * channels + c) * spatial;
      float* dst = out.images.data.data() + (i * channels + c) * spatial;
      const float mu = static_cast<float>(st.mean[static_cast<size_t>(c)]);
      const float inv = static_cast<float>(1.0 / st.std[static_cast<size_t>(c)]);
      for (int64_t j = 0; j < spatial; ++j) dst[j] = (src[j] - mu) * inv;
    }
  }
  return {std::move(out), std::move(st)};
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

// Gaussian blobs with class means on a scaled simplex (separation * e_c),
// unit covariance. Labels cycle through classes, so the set is balanced.
inline Dataset synth_gaussians(uint64_t seed, int64_t n, int64_t classes, int64_t dim,
                               double separation = 6.0) {
  if (classes < 2) throw ArgumentError("synth_gaussians: classes must be >= 2");
  if (dim < classes)
    throw ArgumentError("synth_gaussians: dim must be >= classes to place simplex means");
  auto rng = make_stream(seed, RngDomain::kSynthData);
  Dataset ds;
  ds.num_classes = classes;
  ds.images = Tensor<float>({n, dim});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(i % classes);
    ds.labels[static_cast<size_t>(i)] = label;
    float* row = ds.images.data.data() + i * dim;
    for (int64_t d = 0; d < dim; ++d)
      row[d] = static_cast<float>(rng.next_gaussian() + (d == label ? separation : 0.0));
  }
  return ds;
}

// CIFAR-shaped procedural images. The class signal is an oriented grating
// confined to one randomly placed patch; a weaker patch with another class's
// pattern acts as a distractor and the rest is pixel noise. Values are
// quantized to the byte grid so the CIFAR serializer round-trips them.
// Difficulty is tuned so a small CNN lands well clear of chance but below
// saturation at desk scale.
inline Dataset synth_images(uint64_t seed, int64_t n, int64_t classes = 10,
                            double noise = 0.22) {
  if (classes < 2 || classes > 10) throw ArgumentError("synth_images: classes must be in [2,10]");
  auto rng = make_stream(seed, RngDomain::kSynthData, /*stream=*/1);
  Dataset ds;
  ds.num_classes = classes;
  ds.images = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  const double pi = 3.14159265358979323846;

  auto wave_of = [&](int64_t cls, int64_t ch, double phase, double x, double y) {
    const double theta = pi * static_cast<double>(cls) / static_cast<double>(classes);
    const double freq = 2.0 + static_cast<double>(cls % 3);
    const double arg =
        2.0 * pi * freq * (std::cos(theta) * x + std::sin(theta) * y) / 32.0 + phase +
        0.9 * static_cast<double>(ch);
    return std::sin(arg);
  };

  for (int64_t i = 0; i < n; ++i) {
    const int32_t c = static_cast<int32_t>(i % classes);
    ds.labels[static_cast<size_t>(i)] = c;
    const double phase = rng.next_uniform(0.0, 2.0 * pi);
    const double contrast = rng.next_uniform(0.6, 1.0);
    const int64_t patch = 14;
    const int64_t px = static_cast<int64_t>(rng.next_below(32 - patch));
    const int64_t py = static_cast<int64_t>(rng.next_below(32 - patch));
    // distractor: another class's texture, weaker and smaller
    const int32_t dc = static_cast<int32_t>((c + 1 + rng.next_below(static_cast<uint64_t>(classes - 1))) %
                                            classes);
    const double dphase = rng.next_uniform(0.0, 2.0 * pi);
    const int64_t dpatch = 10;
    const int64_t dx = static_cast<int64_t>(rng.next_below(32 - dpatch));
    const int64_t dy = static_cast<int64_t>(rng.next_below(32 - dpatch));

    for (int64_t ch = 0; ch < 3; ++ch) {
      const double bias = 0.04 * static_cast<double>((c + ch) % 3 - 1);
      float* plane = ds.images.data.data() + (i * 3 + ch) * 1024;
      for (int64_t y = 0; y < 32; ++y) {
        for (int64_t x = 0; x < 32; ++x) {
          double v = 0.5 + bias + noise * rng.next_gaussian();
          if (x >= px && x < px + patch && y >= py && y < py + patch)
            v += 0.3 * contrast *
                 wave_of(c, ch, phase, static_cast<double>(x - px), static_cast<double>(y - py));
          if (x >= dx && x < dx + dpatch && y >= dy && y < dy + dpatch)
            v += 0.15 *
                 wave_of(dc, ch, dphase, static_cast<double>(x - dx), static_cast<double>(y - dy));
          v = std::min(1.0, std::max(0.0, v));
          plane[y * 32 + x] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
        }
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------
inline void atomic_write_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + " failed: " + ec.message());
}

inline constexpr const char* kMetricsHeader =
    "epoch,phase,lr,beta,gamma,train_loss,train_acc,test_acc,wall_ms,seed";

inline std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw ArgumentError("write_metrics: no records");
  std::string out = kMetricsHeader;
  out += "\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%llu\n", r.epoch,
                  r.phase_index, r.lr, r.beta, r.gamma, r.train_loss, r.train_acc, r.test_acc,
                  r.wall_ms, static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

inline void write_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  atomic_write_text(path, metrics_to_csv(records));
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError("metrics file " + path + " is empty");
  if (line != kMetricsHeader) throw ParseError("metrics file " + path + ": unexpected header");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MetricsRecord r;
    unsigned long long seed = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%llu", &r.epoch,
                    &r.phase_index, &r.lr, &r.beta, &r.gamma, &r.train_loss, &r.train_acc,
                    &r.test_acc, &r.wall_ms, &seed) != 10)
      throw ParseError("metrics file " + path + ": bad row '" + line + "'");
    r.seed = seed;
    out.push_back(r);
  }
  return out;
}

}  // namespace ampgrad
