#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ampgrad/data.hpp"

using namespace ampgrad;

namespace {

std::string fixture_path() {
  // tests run from the build tree; fixtures live next to the sources
  return std::string(AMPGRAD_TEST_DIR) + "/fixtures/cifar_fixture.bin";
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(CifarLoader, FixtureParsesToKnownBytes) {
  // fixture formula: record 0 has label 3, pixel k = (7k+13) mod 256;
  // record 1 has label 9, pixel k = (5k+1) mod 256
  Dataset ds = read_cifar_file(fixture_path());
  ASSERT_EQ(ds.size(), 2);
  EXPECT_EQ(ds.labels[0], 3);
  EXPECT_EQ(ds.labels[1], 9);
  for (int64_t k = 0; k < kCifarPixels; ++k) {
    EXPECT_FLOAT_EQ(ds.images.data[static_cast<size_t>(k)],
                    static_cast<float>((7 * k + 13) % 256) / 255.0f);
    EXPECT_FLOAT_EQ(ds.images.data[static_cast<size_t>(kCifarPixels + k)],
                    static_cast<float>((5 * k + 1) % 256) / 255.0f);
  }
  // plane order: R plane first 1024 values, then G, then B
  EXPECT_EQ(ds.images.shape, (Shape{2, 3, 32, 32}));
}

TEST(CifarLoader, ReserializesByteExactly) {
  Dataset ds = read_cifar_file(fixture_path());
  std::ifstream is(fixture_path(), std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ASSERT_EQ(raw.size(), 2u * kCifarRecordBytes);
  for (int64_t i = 0; i < 2; ++i) {
    const auto rec = serialize_cifar_record(ds, i);
    for (int64_t b = 0; b < kCifarRecordBytes; ++b)
      ASSERT_EQ(static_cast<unsigned char>(raw[static_cast<size_t>(i * kCifarRecordBytes + b)]),
                rec[static_cast<size_t>(b)])
          << "record " << i << " byte " << b;
  }
}

TEST(CifarLoader, TruncatedFileRejectedWithOffset) {
  const std::string path = temp_file("cifar_truncated.bin");
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    std::vector<char> bytes(3072, 'x');  // one byte short of a record
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    read_cifar_file(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3072"), std::string::npos);
    EXPECT_NE(msg.find("offset"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(CifarLoader, BadLabelByteRejected) {
  const std::string path = temp_file("cifar_badlabel.bin");
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    std::vector<char> bytes(kCifarRecordBytes, 0);
    bytes[0] = 10;  // label > 9
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(read_cifar_file(path), ParseError);
  std::filesystem::remove(path);
}

TEST(CifarLoader, MissingFileRejected) {
  EXPECT_THROW(read_cifar_file("/nonexistent/cifar.bin"), IoError);
}

TEST(CifarLoader, RealDatasetWhenPresent) {
  const char* dir = std::getenv("AMPGRAD_CIFAR_DIR");
  std::string path = dir != nullptr ? dir : "data/cifar-10-batches-bin";
  if (!std::filesystem::exists(path + "/test_batch.bin"))
    GTEST_SKIP() << "real CIFAR-10 not present";
  auto [train, test] = load_cifar10(path);
  EXPECT_EQ(train.size(), 50000);
  EXPECT_EQ(test.size(), 10000);
  for (int32_t l : test.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LE(l, 9);
  }
}

TEST(CifarLoader, WriteReadRoundTrip) {
  Dataset ds = synth_images(5, 20);
  const std::string path = temp_file("cifar_roundtrip.bin");
  write_cifar_file(path, ds);
  Dataset back = read_cifar_file(path);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.images.data, ds.images.data);  // synth images sit on the byte grid
  std::filesystem::remove(path);
}

TEST(Subset, IdentityAndStratified) {
  Dataset ds = synth_gaussians(1, 40, 4, 6, 4.0);
  Dataset all = subset(ds, 40, 9, false);
  EXPECT_EQ(all.size(), 40);
  // same multiset of labels, order may differ
  auto sorted_labels = [](const Dataset& d) {
    auto l = d.labels;
    std::sort(l.begin(), l.end());
    return l;
  };
  EXPECT_EQ(sorted_labels(all), sorted_labels(ds));

  Dataset strat = subset(ds, 4, 9, true);
  auto labels = sorted_labels(strat);
  EXPECT_EQ(labels, (std::vector<int32_t>{0, 1, 2, 3}));  // one per class

  Dataset strat10 = subset(ds, 10, 9, true);
  std::vector<int> counts(4, 0);
  for (int32_t l : strat10.labels) counts[static_cast<size_t>(l)]++;
  for (int c : counts) EXPECT_TRUE(c == 2 || c == 3);  // balance within +-1
}

TEST(Subset, DeterministicAndValidated) {
  Dataset ds = synth_gaussians(2, 50, 5, 8, 4.0);
  Dataset a = subset(ds, 20, 33, true);
  Dataset b = subset(ds, 20, 33, true);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.images.data, b.images.data);
  Dataset c = subset(ds, 20, 34, true);
  EXPECT_NE(a.images.data, c.images.data);
  EXPECT_THROW(subset(ds, 51, 1, false), ArgumentError);
}

TEST(Normalize, TrainStatsNearZeroMeanUnitVar) {
  Dataset ds = synth_images(3, 64);
  auto [normed, stats] = normalize(ds);
  const int64_t spatial = 1024;
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int64_t i = 0; i < normed.size(); ++i) {
      const float* p = normed.images.data.data() + (i * 3 + c) * spatial;
      for (int64_t j = 0; j < spatial; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double n = static_cast<double>(normed.size() * spatial);
    EXPECT_LT(std::abs(sum / n), 1e-5);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
}

TEST(Normalize, TestSetWithTrainStatsMatchesHandComputedValues) {
  // train: one channel, values {0,2,4,6} -> mean 3, population std sqrt(5)
  Dataset train;
  train.num_classes = 2;
  train.images = Tensor<float>({2, 1, 1, 2}, {0.f, 2.f, 4.f, 6.f});
  train.labels = {0, 1};
  auto [_, stats] = normalize(train);
  EXPECT_DOUBLE_EQ(stats.mean[0], 3.0);
  EXPECT_NEAR(stats.std[0], std::sqrt(5.0), 1e-12);

  Dataset test;
  test.num_classes = 2;
  test.images = Tensor<float>({1, 1, 1, 2}, {8.f, 3.f});
  test.labels = {0};
  auto [normed, _2] = normalize(test, &stats);
  EXPECT_NEAR(normed.images.data[0], 2.2360679774997896, 1e-6);  // (8-3)/sqrt(5) = sqrt(5)
  EXPECT_NEAR(normed.images.data[1], 0.0, 1e-7);
}

TEST(Normalize, IdentityStatsIdempotent) {
  Dataset ds = synth_images(4, 16);
  auto [normed, stats] = normalize(ds);
  NormalizationStats identity{{0, 0, 0}, {1, 1, 1}};
  auto [again, _] = normalize(normed, &identity);
  for (size_t i = 0; i < normed.images.data.size(); ++i)
    EXPECT_NEAR(again.images.data[i], normed.images.data[i], 1e-6);
}

TEST(Normalize, ZeroStdChannelRejected) {
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor<float>::full({4, 1, 2, 2}, 0.25f);  // constant channel
  ds.labels = {0, 1, 0, 1};
  EXPECT_THROW(normalize(ds), NumericError);
}

TEST(SynthGaussians, DeterministicAndSeparable) {
  Dataset a = synth_gaussians(9, 100, 2, 4, 8.0);
  Dataset b = synth_gaussians(9, 100, 2, 4, 8.0);
  EXPECT_EQ(a.images.data, b.images.data);
  EXPECT_EQ(a.labels, b.labels);

  // far-separated blobs: the nearest-mean linear rule is perfect
  int correct = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const float* row = a.images.data.data() + i * 4;
    const double d0 = std::pow(row[0] - 8.0, 2) + std::pow(row[1], 2);
    const double d1 = std::pow(row[0], 2) + std::pow(row[1] - 8.0, 2);
    const int32_t pred = d0 < d1 ? 0 : 1;
    correct += pred == a.labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  EXPECT_EQ(correct, 100);

  EXPECT_THROW(synth_gaussians(1, 10, 1, 4), ArgumentError);
  EXPECT_THROW(synth_gaussians(1, 10, 4, 2), ArgumentError);
}

TEST(SynthGaussians, OverlapCaseApproachesBayesRate) {
  // separation 1.0 in unit-variance blobs: inter-mean distance sqrt(2),
  // Bayes accuracy = Phi(sqrt(2)/2), computed here by quadrature
  const double dist = std::sqrt(2.0);
  const double half = dist / 2.0;
  double acc_quad = 0.0;
  {
    const int steps = 200000;
    const double lo = -12.0, hi = half;
    double integral = 0.0;
    auto phi = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); };
    for (int i = 0; i < steps; ++i) {
      const double t0 = lo + (hi - lo) * i / steps;
      const double t1 = lo + (hi - lo) * (i + 1) / steps;
      integral += 0.5 * (phi(t0) + phi(t1)) * (t1 - t0);
    }
    acc_quad = integral;  // P(correct) under the optimal rule
  }

  Dataset big = synth_gaussians(77, 40000, 2, 2, 1.0);
  int correct = 0;
  for (int64_t i = 0; i < big.size(); ++i) {
    const float* row = big.images.data.data() + i * 2;
    const double d0 = std::pow(row[0] - 1.0, 2) + std::pow(row[1], 2);
    const double d1 = std::pow(row[0], 2) + std::pow(row[1] - 1.0, 2);
    const int32_t pred = d0 < d1 ? 0 : 1;
    correct += pred == big.labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(big.size());
  EXPECT_NEAR(acc, acc_quad, 0.01);
}

TEST(SynthImages, DeterministicBalancedAndOnByteGrid) {
  Dataset a = synth_images(6, 30, 10);
  Dataset b = synth_images(6, 30, 10);
  EXPECT_EQ(a.images.data, b.images.data);
  EXPECT_EQ(a.labels[0], 0);
  EXPECT_EQ(a.labels[10], 0);
  EXPECT_EQ(a.labels[11], 1);
  for (float v : a.images.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
    const double scaled = static_cast<double>(v) * 255.0;
    EXPECT_NEAR(scaled, std::round(scaled), 1e-3);
  }
}

TEST(MetricsCsv, WriteReadRoundTrip) {
  std::vector<MetricsRecord> recs;
  MetricsRecord r;
  r.epoch = 1;
  r.phase_index = 1;
  r.lr = 0.1;
  r.beta = 0.5;
  r.gamma = 2;
  r.train_loss = 1.234567;
  r.train_acc = 56.789;
  r.test_acc = 43.21;
  r.wall_ms = 12.5;
  r.seed = 42;
  recs.push_back(r);

  const std::string path = temp_file("ampgrad_metrics.csv");
  write_metrics(recs, path);

  std::ifstream is(path);
  std::string header, row, extra;
  ASSERT_TRUE(std::getline(is, header));
  ASSERT_TRUE(std::getline(is, row));
  EXPECT_FALSE(std::getline(is, extra));  // 1 record -> exactly 2 lines
  EXPECT_EQ(header, "epoch,phase,lr,beta,gamma,train_loss,train_acc,test_acc,wall_ms,seed");

  auto back = read_metrics(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].epoch, 1);
  EXPECT_NEAR(back[0].train_loss, r.train_loss, 1e-5);  // %.6g precision
  EXPECT_NEAR(back[0].train_acc, r.train_acc, 1e-3);
  EXPECT_EQ(back[0].seed, 42u);

  EXPECT_THROW(write_metrics({}, path), ArgumentError);
  std::filesystem::remove(path);
}
