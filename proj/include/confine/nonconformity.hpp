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

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include <json.hpp>

#include "confine/data.hpp"
#include "confine/neighbors.hpp"

namespace confine {

enum class MeasureKind { kConfineKnn, kOneNn, kSoftmaxMargin, kSoftmaxRatio };
enum class FeatureSource { kLayerEmbedding, kSoftmaxOfLogits };

std::string to_string(MeasureKind kind);
std::string to_string(FeatureSource source);

struct MeasureConfig {
  MeasureKind kind = MeasureKind::kConfineKnn;
  std::size_t k = 1;
  double gamma = 0.0;
  double temperature = 1.0;
  FeatureSource feature_source = FeatureSource::kLayerEmbedding;

  /// Throws ConfigError.
  void validate() const;

  bool neighbor_based() const {
    return kind == MeasureKind::kConfineKnn || kind == MeasureKind::kOneNn;
  }
  /// Neighbors per partition the score consumes (1 for one_nn).
  std::size_t neighbor_k() const { return kind == MeasureKind::kOneNn ? 1 : k; }

  friend bool operator==(const MeasureConfig&, const MeasureConfig&) = default;
};

void to_json(nlohmann::json& j, const MeasureConfig& m);
/// Strict parse: unknown kinds, wrong types and out-of-range values throw
/// ConfigError.
void from_json(const nlohmann::json& j, MeasureConfig& m);

inline constexpr double kMaxNonconformity = std::numeric_limits<double>::infinity();

/// same_avg / diff_avg, with x/0 = +inf for x > 0 and 0/0 = 1.
double confine_score(double same_avg, double diff_avg);

/// Mean of the first min(k, size) distances, summed in list order.
double mean_distance(const NeighborList& list, std::size_t k);

/// Score of a same/diff neighbor split under the top-k ratio. Empty
/// partitions throw DataError naming `candidate`.
double knn_score(const PartitionedNeighbors& split, std::size_t k, ClassId candidate);

double one_nn_score(std::span<const float> query, const TrainIndex& index, ClassId candidate);

double softmax_margin_score(std::span<const double> probs, ClassId candidate);
double softmax_ratio_score(std::span<const double> probs, ClassId candidate, double gamma);

/// The feature matrix a measure operates on: the layer embeddings, or the
/// temperature softmax of the logits.
EmbeddingMatrix measure_features(const LabeledDataset& ds, const MeasureConfig& measure);

}  // namespace confine
