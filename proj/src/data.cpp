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

#include "confine/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "confine/error.hpp"

namespace confine {

void LabeledDataset::validate() const {
  embeddings.validate(RowCheck::kFiniteNonZero);
  if (n_classes == 0) throw DataError("n_classes must be positive");
  if (labels.size() != rows()) {
    throw DataError("labels length " + std::to_string(labels.size()) +
                    " does not match " + std::to_string(rows()) + " embedding rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " is not below n_classes=" +
                      std::to_string(n_classes));
    }
  }
  if (logits) {
    logits->validate(RowCheck::kFiniteOnly);
    if (logits->rows() != rows() || logits->dim() != n_classes) {
      throw DataError("logits shape " + std::to_string(logits->rows()) + "x" +
                      std::to_string(logits->dim()) + " must be " +
                      std::to_string(rows()) + "x" + std::to_string(n_classes));
    }
  }
  if (predicted_labels) {
    if (predicted_labels->size() != rows()) {
      throw DataError("predicted_labels length does not match embedding rows");
    }
    for (std::size_t i = 0; i < predicted_labels->size(); ++i) {
      if ((*predicted_labels)[i] >= n_classes) {
        throw DataError("predicted label at row " + std::to_string(i) +
                        " is not below n_classes");
      }
    }
  }
  if (!provenance.empty() && provenance.size() != rows()) {
    throw DataError("provenance length does not match embedding rows");
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.embeddings = embeddings.select_rows(indices);
  out.n_classes = n_classes;
  out.layer_tag = layer_tag;
  out.labels.reserve(indices.size());
  out.provenance.reserve(indices.size());
  for (std::size_t i : indices) {
    out.labels.push_back(labels[i]);
    out.provenance.push_back(provenance.empty() ? i : provenance[i]);
  }
  if (logits) out.logits = logits->select_rows(indices);
  if (predicted_labels) {
    std::vector<ClassId> pred;
    pred.reserve(indices.size());
    for (std::size_t i : indices) pred.push_back((*predicted_labels)[i]);
    out.predicted_labels = std::move(pred);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (ClassId l : labels) ++counts[l];
  return counts;
}

void DataSplit::validate() const {
  proper_train.validate();
  calibration.validate();
  if (!test.embeddings.empty()) test.validate();
  const auto same_shape = [&](const LabeledDataset& d, const char* name) {
    if (d.n_classes != proper_train.n_classes) {
      throw DataError(std::string(name) + " n_classes differs from proper training set");
    }
    if (d.embeddings.dim() != proper_train.embeddings.dim()) {
      throw DataError(std::string(name) +
                      " embedding dim differs from proper training set");
    }
  };
  same_shape(calibration, "calibration");
  if (!test.embeddings.empty()) same_shape(test, "test");
}

std::pair<LabeledDataset, LabeledDataset> split_train_calibration(
    const LabeledDataset& ds, double calib_fraction, std::uint64_t seed) {
  if (!(calib_fraction > 0.0 && calib_fraction < 1.0)) {
    throw ConfigError("calib_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.rows();
  if (n < 2) throw DataError("need at least 2 rows to split");
  const auto n_calib =
      static_cast<std::size_t>(std::llround(calib_fraction * static_cast<double>(n)));
  if (n_calib == 0 || n_calib >= n) {
    throw DataError("split of " + std::to_string(n) + " rows at fraction " +
                    std::to_string(calib_fraction) + " leaves an empty part");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> calib(order.begin(), order.begin() + n_calib);
  std::vector<std::size_t> proper(order.begin() + n_calib, order.end());
  std::sort(calib.begin(), calib.end());
  std::sort(proper.begin(), proper.end());

  LabeledDataset proper_ds = ds.subset(proper);
  const auto counts = proper_ds.class_counts();
  std::string missing;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing.empty()) {
    throw DataError("classes absent from proper training split: " + missing);
  }
  return {std::move(proper_ds), ds.subset(calib)};
}

LabeledDataset filter_misclassified(const LabeledDataset& proper) {
  if (!proper.predicted_labels) {
    throw DataError(
        "misclassification filtering needs predicted_labels; supply model "
        "predictions in the manifest or disable filtering");
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < proper.rows(); ++i) {
    if ((*proper.predicted_labels)[i] == proper.labels[i]) keep.push_back(i);
  }
  if (keep.empty()) throw DataError("empty proper training set after filtering");
  return proper.subset(keep);
}

std::vector<double> temperature_softmax(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("softmax temperature must be positive");
  }
  if (logits.empty()) throw DataError("softmax of an empty logit vector");
  std::vector<double> out(logits.size());
  double max_z = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw DataError("non-finite logit");
    out[i] = static_cast<double>(logits[i]) / temperature;
    max_z = std::max(max_z, out[i]);
  }
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - max_z);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

EmbeddingMatrix softmax_features(const EmbeddingMatrix& logits, double temperature) {
  std::vector<float> values;
  values.reserve(logits.values().size());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (double p : temperature_softmax(logits.row(i), temperature)) {
      // Underflow to 0 is harmless for cosine distance; the max entry is >= 1/C.
      values.push_back(static_cast<float>(p));
    }
  }
  return EmbeddingMatrix(logits.rows(), logits.dim(), std::move(values));
}

LabeledDataset generate_gaussian_mixture(std::size_t n_classes, std::size_t dim,
                                         std::size_t n_per_class, double separation,
                                         std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("gaussian mixture needs n_classes >= 2");
  if (dim < 1) throw ConfigError("gaussian mixture needs dim >= 1");
  if (n_per_class < 1) throw ConfigError("gaussian mixture needs n_per_class >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw ConfigError("separation must be finite and non-negative");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
  for (auto& c : centers) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : c) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (double& v : c) v = separation * v / norm;
  }

  const std::size_t n = n_classes * n_per_class;
  std::vector<float> values;
  values.reserve(n * dim);
  std::vector<ClassId> labels;
  labels.reserve(n);
  std::vector<float> point(dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      double sq = 0.0;
      do {
        sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          point[j] = static_cast<float>(centers[c][j] + normal(rng));
          sq += static_cast<double>(point[j]) * point[j];
        }
      } while (std::sqrt(sq) <= kMinRowNorm);
      values.insert(values.end(), point.begin(), point.end());
      labels.push_back(static_cast<ClassId>(c));
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  LabeledDataset ordered;
  ordered.embeddings = EmbeddingMatrix(n, dim, std::move(values));
  ordered.labels = std::move(labels);
  ordered.n_classes = n_classes;
  LabeledDataset ds = ordered.subset(order);
  ds.layer_tag = "gaussian_mixture";
  for (std::size_t i = 0; i < n; ++i) ds.provenance[i] = i;

  std::vector<float> logits(n * n_classes);
  std::vector<ClassId> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = ds.embeddings.row(i);
    ClassId best = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = static_cast<double>(x[j]) - centers[c][j];
        sq += d * d;
      }
      logits[i * n_classes + c] = static_cast<float>(-0.5 * sq);
      if (logits[i * n_classes + c] > logits[i * n_classes + best]) {
        best = static_cast<ClassId>(c);
      }
    }
    predicted[i] = best;
  }
  ds.logits = EmbeddingMatrix(n, n_classes, std::move(logits));
  ds.predicted_labels = std::move(predicted);
  return ds;
}

}  // namespace confine
