// Copyright 2026 the confine authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "confine/data.hpp"
#include "confine/error.hpp"
#include "confine/neighbors.hpp"
#include "test_util.hpp"

using namespace confine;
using confine::testing::TempDir;
using confine::testing::write_text;

namespace {

LabeledDataset tiny_dataset(std::vector<ClassId> labels, std::size_t n_classes) {
  LabeledDataset ds;
  std::vector<float> v;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    v.push_back(1.0f + static_cast<float>(i));
    v.push_back(1.0f);
  }
  ds.embeddings = EmbeddingMatrix(labels.size(), 2, std::move(v));
  ds.labels = std::move(labels);
  ds.n_classes = n_classes;
  ds.provenance.resize(ds.labels.size());
  std::iota(ds.provenance.begin(), ds.provenance.end(), std::size_t{0});
  return ds;
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(LoadEmbeddings, ParsesCsv) {
  TempDir dir;
  write_text(dir / "m.csv", "1.0,0.0\n0.0,1.0");
  const auto m = load_embeddings(dir / "m.csv", MatrixFormat::kCsv);
  ASSERT_EQ(m.rows(), 2u);
  ASSERT_EQ(m.dim(), 2u);
  EXPECT_EQ(m.values(), (std::vector<float>{1, 0, 0, 1}));
}

TEST(LoadEmbeddings, CsvHeaderAndBlankLinesSkipped) {
  TempDir dir;
  write_text(dir / "m.csv", "# a header\n1,2,3\n\n4,5,6\n");
  const auto m = load_embeddings(dir / "m.csv", MatrixFormat::kCsv);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.dim(), 3u);
}

TEST(LoadEmbeddings, CsvNanNamesRow) {
  TempDir dir;
  write_text(dir / "m.csv", "1,2\n3,4\nnan,1\n");
  const auto msg = error_of([&] { load_embeddings(dir / "m.csv", MatrixFormat::kCsv); });
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadEmbeddings, CsvRaggedRowsRejected) {
  TempDir dir;
  write_text(dir / "m.csv", "1,2\n3,4,5\n");
  EXPECT_THROW(load_embeddings(dir / "m.csv", MatrixFormat::kCsv), DataError);
}

TEST(LoadEmbeddings, ZeroRowRejected) {
  TempDir dir;
  write_text(dir / "m.csv", "1,2\n0,0\n");
  const auto msg = error_of([&] { load_embeddings(dir / "m.csv", MatrixFormat::kCsv); });
  EXPECT_NE(msg.find("zero-norm row 1"), std::string::npos) << msg;
}

TEST(LoadEmbeddings, BinaryPayloadBitIdentical) {
  TempDir dir;
  std::vector<float> payload(12);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = 0.1f * static_cast<float>(i + 1);
  std::string bytes = "CNFE";
  const std::uint16_t version = 1;
  const std::uint64_t rows = 3, cols = 4;
  bytes.append(reinterpret_cast<const char*>(&version), 2);
  bytes.append(reinterpret_cast<const char*>(&rows), 8);
  bytes.append(reinterpret_cast<const char*>(&cols), 8);
  bytes.append(reinterpret_cast<const char*>(payload.data()), payload.size() * 4);
  write_text(dir / "m.cnfe", bytes);

  EXPECT_EQ(detect_format(dir / "m.cnfe"), MatrixFormat::kBinary);
  const auto m = load_embeddings(dir / "m.cnfe", MatrixFormat::kBinary);
  ASSERT_EQ(m.rows(), 3u);
  ASSERT_EQ(m.dim(), 4u);
  EXPECT_EQ(std::memcmp(m.values().data(), payload.data(), payload.size() * 4), 0);
}

TEST(LoadEmbeddings, BinaryTruncatedRejected) {
  TempDir dir;
  std::mt19937_64 rng(1);
  save_matrix_binary(confine::testing::random_matrix(3, 4, rng), dir / "m.cnfe");
  auto bytes = confine::testing::read_text(dir / "m.cnfe");
  write_text(dir / "cut.cnfe", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_embeddings(dir / "cut.cnfe", MatrixFormat::kBinary), DataError);
  write_text(dir / "magic.cnfe", "XXXX" + bytes.substr(4));
  EXPECT_THROW(load_embeddings(dir / "magic.cnfe", MatrixFormat::kBinary), DataError);
}

TEST(RoundTrip, BinaryIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(5);
  const auto m = confine::testing::random_matrix(17, 9, rng);
  save_matrix_binary(m, dir / "m.cnfe");
  EXPECT_EQ(load_embeddings(dir / "m.cnfe", MatrixFormat::kBinary), m);
}

TEST(RoundTrip, CsvWithinTolerance) {
  TempDir dir;
  std::mt19937_64 rng(6);
  const auto m = confine::testing::random_matrix(17, 9, rng);
  save_matrix_csv(m, dir / "m.csv");
  const auto back = load_embeddings(dir / "m.csv", MatrixFormat::kCsv);
  ASSERT_EQ(back.rows(), m.rows());
  for (std::size_t i = 0; i < m.values().size(); ++i) {
    EXPECT_NEAR(back.values()[i], m.values()[i], 1e-6);
  }
}

TEST(LoadLabels, Parses) {
  TempDir dir;
  write_text(dir / "l.txt", "0\n2\n1");
  EXPECT_EQ(load_labels(dir / "l.txt"), (std::vector<ClassId>{0, 2, 1}));
  write_text(dir / "l2.txt", "0\n2\n1\n");
  EXPECT_EQ(load_labels(dir / "l2.txt"), (std::vector<ClassId>{0, 2, 1}));
}

TEST(LoadLabels, EmptyFile) {
  TempDir dir;
  write_text(dir / "l.txt", "");
  const auto msg = error_of([&] { load_labels(dir / "l.txt"); });
  EXPECT_NE(msg.find("empty label file"), std::string::npos) << msg;
}

TEST(LoadLabels, NegativeAtLine2) {
  TempDir dir;
  write_text(dir / "l.txt", "0\n-1");
  const auto msg = error_of([&] { load_labels(dir / "l.txt"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(LoadLabels, NonInteger) {
  TempDir dir;
  write_text(dir / "l.txt", "0\n1.5\n");
  const auto msg = error_of([&] { load_labels(dir / "l.txt"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Manifest, LoadsAndResolvesRelativePaths) {
  TempDir dir;
  std::filesystem::create_directories(dir / "d");
  write_text(dir / "d/e.csv", "1,0\n0,1\n1,1\n");
  write_text(dir / "d/l.txt", "0\n1\n1\n");
  write_text(dir / "d/m.json",
             R"({"embeddings": "e.csv", "labels": "l.txt", "n_classes": 2, "layer_tag": "l50"})");
  const auto ds = load_manifest(dir / "d/m.json");
  EXPECT_EQ(ds.rows(), 3u);
  EXPECT_EQ(ds.n_classes, 2u);
  EXPECT_EQ(ds.layer_tag, "l50");
  EXPECT_FALSE(ds.logits.has_value());
}

TEST(Manifest, MissingLabelsFieldIsConfigError) {
  TempDir dir;
  write_text(dir / "e.csv", "1,0\n");
  write_text(dir / "m.json", R"({"embeddings": "e.csv", "n_classes": 2, "layer_tag": ""})");
  try {
    load_manifest(dir / "m.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("labels"), std::string::npos);
  }
}

TEST(Manifest, LabelOutOfRangeRejected) {
  TempDir dir;
  write_text(dir / "e.csv", "1,0\n0,1\n");
  write_text(dir / "l.txt", "0\n2\n");
  write_text(dir / "m.json",
             R"({"embeddings": "e.csv", "labels": "l.txt", "n_classes": 2, "layer_tag": ""})");
  EXPECT_THROW(load_manifest(dir / "m.json"), DataError);
}

TEST(Manifest, SaveDatasetRoundTrip) {
  TempDir dir;
  auto ds = generate_gaussian_mixture(3, 4, 10, 2.0, 9);
  save_dataset(ds, dir / "out/m.json", "data");
  const auto back = load_manifest(dir / "out/m.json");
  EXPECT_EQ(back.embeddings, ds.embeddings);
  EXPECT_EQ(back.labels, ds.labels);
  ASSERT_TRUE(back.logits && ds.logits);
  EXPECT_EQ(*back.logits, *ds.logits);
  EXPECT_EQ(back.predicted_labels, ds.predicted_labels);
  EXPECT_EQ(back.layer_tag, ds.layer_tag);
}

TEST(Split, SizesAndDisjointness) {
  const auto ds = tiny_dataset({0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
  const auto [proper, calib] = split_train_calibration(ds, 0.3, 7);
  EXPECT_EQ(proper.rows(), 7u);
  EXPECT_EQ(calib.rows(), 3u);
  std::set<std::size_t> seen(proper.provenance.begin(), proper.provenance.end());
  for (auto i : calib.provenance) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Split, Deterministic) {
  const auto ds = tiny_dataset({0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
  const auto a = split_train_calibration(ds, 0.3, 7);
  const auto b = split_train_calibration(ds, 0.3, 7);
  EXPECT_EQ(a.first.provenance, b.first.provenance);
  EXPECT_EQ(a.second.provenance, b.second.provenance);
}

TEST(Split, RoundingRuleOnLargeDataset) {
  // 0.3 * 67349 = 20204.7, rounded to the nearest integer.
  const std::size_t n = 67349;
  const auto expected_calib = static_cast<std::size_t>(std::floor(0.3 * n + 0.5));
  ASSERT_EQ(expected_calib, 20205u);
  std::vector<ClassId> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<ClassId>(i % 2);
  const auto [proper, calib] = split_train_calibration(tiny_dataset(labels, 2), 0.3, 1);
  EXPECT_EQ(calib.rows(), expected_calib);
  EXPECT_EQ(proper.rows(), n - expected_calib);
  EXPECT_EQ(proper.rows(), 47144u);
}

TEST(Split, MissingClassInProperNamesIt) {
  // Class 2 has one row; with a 0.9 fraction only 1 proper row remains.
  const auto ds = tiny_dataset({0, 1, 2, 0, 1, 0, 1, 0, 1, 0}, 3);
  const auto msg = error_of([&] { split_train_calibration(ds, 0.9, 3); });
  EXPECT_NE(msg.find("absent"), std::string::npos) << msg;
}

TEST(Split, BadFraction) {
  const auto ds = tiny_dataset({0, 1, 0, 1}, 2);
  EXPECT_THROW(split_train_calibration(ds, 0.0, 1), ConfigError);
  EXPECT_THROW(split_train_calibration(ds, 1.0, 1), ConfigError);
}

TEST(Filter, KeepsCorrectRows) {
  auto ds = tiny_dataset({0, 1, 1}, 2);
  ds.predicted_labels = std::vector<ClassId>{0, 1, 0};
  const auto out = filter_misclassified(ds);
  EXPECT_EQ(out.provenance, (std::vector<std::size_t>{0, 1}));
  for (std::size_t i = 0; i < out.rows(); ++i) {
    EXPECT_EQ((*out.predicted_labels)[i], out.labels[i]);
  }
}

TEST(Filter, AllCorrectIsIdentity) {
  auto ds = tiny_dataset({0, 1, 1}, 2);
  ds.predicted_labels = ds.labels;
  const auto out = filter_misclassified(ds);
  EXPECT_EQ(out.embeddings, ds.embeddings);
  EXPECT_EQ(out.labels, ds.labels);
}

TEST(Filter, AllWrongIsError) {
  auto ds = tiny_dataset({0, 1, 1}, 2);
  ds.predicted_labels = std::vector<ClassId>{1, 0, 0};
  const auto msg = error_of([&] { filter_misclassified(ds); });
  EXPECT_NE(msg.find("empty proper training set after filtering"), std::string::npos);
}

TEST(Filter, MissingPredictions) {
  const auto ds = tiny_dataset({0, 1, 1}, 2);
  const auto msg = error_of([&] { filter_misclassified(ds); });
  EXPECT_NE(msg.find("disable filtering"), std::string::npos) << msg;
}

TEST(Softmax, Examples) {
  const std::vector<float> zero{0.0f, 0.0f};
  for (double t : {0.1, 1.0, 7.0}) {
    const auto p = temperature_softmax(zero, t);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
  }
  const std::vector<float> one{1.0f, 0.0f};
  const auto p = temperature_softmax(one, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1.0), 1e-12);
  EXPECT_NEAR(p[0], 0.73106, 1e-4);
  EXPECT_NEAR(p[1], 0.26894, 1e-4);

  const std::vector<float> two{2.0f, 0.0f};
  EXPECT_EQ(temperature_softmax(two, 2.0), p);
}

TEST(Softmax, ScalingPropertyAndNormalization) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 5.0f);
  std::uniform_real_distribution<double> tdist(0.1, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> z(1 + trial % 9);
    for (auto& x : z) x = n(rng);
    const double t = tdist(rng);
    std::vector<float> scaled(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      scaled[i] = static_cast<float>(static_cast<double>(z[i]) / t);
    }
    const auto a = temperature_softmax(z, t);
    const auto b = temperature_softmax(scaled, 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-6);  // z/T is re-rounded to f32 on the right side
      EXPECT_GT(a[i], 0.0);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const std::vector<float> z{1000.0f, 999.0f, -1000.0f};
  const auto p = temperature_softmax(z, 1.0);
  for (double x : p) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(Softmax, NonPositiveTemperature) {
  const std::vector<float> z{1.0f, 0.0f};
  EXPECT_THROW(temperature_softmax(z, 0.0), ConfigError);
  EXPECT_THROW(temperature_softmax(z, -1.0), ConfigError);
}

TEST(GaussianMixture, BalancedAndValid) {
  const auto ds = generate_gaussian_mixture(2, 2, 5, 10.0, 1);
  EXPECT_EQ(ds.rows(), 10u);
  const auto counts = ds.class_counts();
  EXPECT_EQ(counts, (std::vector<std::size_t>{5, 5}));
  EXPECT_NO_THROW(ds.validate());
  ASSERT_TRUE(ds.logits && ds.predicted_labels);
  EXPECT_EQ(ds.logits->dim(), 2u);
}

TEST(GaussianMixture, Deterministic) {
  const auto a = generate_gaussian_mixture(3, 5, 20, 3.0, 4);
  const auto b = generate_gaussian_mixture(3, 5, 20, 3.0, 4);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(a.labels, b.labels);
  const auto c = generate_gaussian_mixture(3, 5, 20, 3.0, 5);
  EXPECT_NE(a.embeddings, c.embeddings);
}

TEST(GaussianMixture, SeparatedClassesAreNearlyPerfectFor1nn) {
  const auto ds = generate_gaussian_mixture(3, 8, 1000, 6.0, 42);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.rows(); ++i) (i % 2 ? test_idx : train_idx).push_back(i);
  const auto train = ds.subset(train_idx);
  const auto test = ds.subset(test_idx);
  const TrainIndex index(train.embeddings, train.labels, 3);
  const auto hits = batch_class_topk(test.embeddings, index, 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    ClassId best = 0;
    for (ClassId c = 1; c < 3; ++c) {
      if (neighbor_less(hits[i].by_class[c][0], hits[i].by_class[best][0])) best = c;
    }
    correct += best == test.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / test.rows(), 0.99);
}

TEST(GaussianMixture, ZeroSeparationIsChanceLevel) {
  const auto ds = generate_gaussian_mixture(2, 4, 2000, 0.0, 3);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.rows(); ++i) correct += (*ds.predicted_labels)[i] == ds.labels[i];
  const double acc = static_cast<double>(correct) / ds.rows();
  EXPECT_NEAR(acc, 0.5, 0.05);
}
