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

#include "confine/nonconformity.hpp"

#include <algorithm>
#include <cmath>

#include "confine/error.hpp"

namespace confine {

using json = nlohmann::json;

std::string to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::kConfineKnn: return "confine_knn";
    case MeasureKind::kOneNn: return "one_nn";
    case MeasureKind::kSoftmaxMargin: return "softmax_margin";
    case MeasureKind::kSoftmaxRatio: return "softmax_ratio";
  }
  return "?";
}

std::string to_string(FeatureSource source) {
  return source == FeatureSource::kLayerEmbedding ? "layer_embedding" : "softmax_of_logits";
}

void MeasureConfig::validate() const {
  if (kind == MeasureKind::kConfineKnn && k < 1) {
    throw ConfigError("measure.k must be >= 1 for confine_knn");
  }
  if (kind == MeasureKind::kSoftmaxRatio && !(gamma >= 0.0 && std::isfinite(gamma))) {
    throw ConfigError("measure.gamma must be finite and >= 0 for softmax_ratio");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("measure.temperature must be > 0");
  }
  if (!neighbor_based() && feature_source != FeatureSource::kSoftmaxOfLogits) {
    throw ConfigError("measure." + to_string(kind) +
                      " scores softmax probabilities; set feature_source to "
                      "softmax_of_logits");
  }
}

void to_json(json& j, const MeasureConfig& m) {
  j = json{{"kind", to_string(m.kind)}, {"feature_source", to_string(m.feature_source)}};
  if (m.kind == MeasureKind::kConfineKnn) j["k"] = m.k;
  if (m.kind == MeasureKind::kSoftmaxRatio) j["gamma"] = m.gamma;
  if (m.feature_source == FeatureSource::kSoftmaxOfLogits) j["temperature"] = m.temperature;
}

void from_json(const json& j, MeasureConfig& m) {
  if (!j.is_object()) throw ConfigError("measure: expected a JSON object");
  m = MeasureConfig{};
  if (!j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError("measure.kind: required string");
  }
  const auto kind = j["kind"].get<std::string>();
  if (kind == "confine_knn") {
    m.kind = MeasureKind::kConfineKnn;
  } else if (kind == "one_nn") {
    m.kind = MeasureKind::kOneNn;
  } else if (kind == "softmax_margin") {
    m.kind = MeasureKind::kSoftmaxMargin;
  } else if (kind == "softmax_ratio") {
    m.kind = MeasureKind::kSoftmaxRatio;
  } else {
    throw ConfigError("measure.kind: unknown measure '" + kind + "'");
  }

  if (j.contains("k")) {
    if (!j["k"].is_number_integer() || j["k"].get<long long>() < 1) {
      throw ConfigError("measure.k: expected integer >= 1");
    }
    m.k = j["k"].get<std::size_t>();
  }
  if (j.contains("gamma")) {
    if (!j["gamma"].is_number()) throw ConfigError("measure.gamma: expected number");
    m.gamma = j["gamma"].get<double>();
  }
  if (j.contains("temperature")) {
    if (!j["temperature"].is_number()) {
      throw ConfigError("measure.temperature: expected number");
    }
    m.temperature = j["temperature"].get<double>();
  }
  if (j.contains("feature_source")) {
    if (!j["feature_source"].is_string()) {
      throw ConfigError("measure.feature_source: expected string");
    }
    const auto src = j["feature_source"].get<std::string>();
    if (src == "layer_embedding") {
      m.feature_source = FeatureSource::kLayerEmbedding;
    } else if (src == "softmax_of_logits") {
      m.feature_source = FeatureSource::kSoftmaxOfLogits;
    } else {
      throw ConfigError("measure.feature_source: unknown source '" + src + "'");
    }
  } else if (!m.neighbor_based()) {
    m.feature_source = FeatureSource::kSoftmaxOfLogits;
  }
  m.validate();
}

double confine_score(double same_avg, double diff_avg) {
  if (!(same_avg >= 0.0) || !(diff_avg >= 0.0)) {
    throw DataError("neighbor distance averages must be non-negative");
  }
  if (diff_avg == 0.0) return same_avg > 0.0 ? kMaxNonconformity : 1.0;
  return same_avg / diff_avg;
}

double mean_distance(const NeighborList& list, std::size_t k) {
  const std::size_t n = std::min(k, list.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += list[i].distance;
  return sum / static_cast<double>(n);
}

double knn_score(const PartitionedNeighbors& split, std::size_t k, ClassId candidate) {
  if (split.same.empty()) {
    throw DataError("no proper training rows with label " + std::to_string(candidate));
  }
  if (split.diff.empty()) {
    throw DataError("no proper training rows with a label other than " +
                    std::to_string(candidate));
  }
  return confine_score(mean_distance(split.same, k), mean_distance(split.diff, k));
}

double one_nn_score(std::span<const float> query, const TrainIndex& index, ClassId candidate) {
  return knn_score(topk_partitioned(query, index, candidate, 1), 1, candidate);
}

namespace {

double max_other(std::span<const double> probs, ClassId candidate) {
  if (candidate >= probs.size()) {
    throw DataError("candidate label " + std::to_string(candidate) +
                    " out of range for " + std::to_string(probs.size()) + " classes");
  }
  if (probs.size() < 2) throw DataError("softmax scores need at least 2 classes");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (j != candidate) best = std::max(best, probs[j]);
  }
  return best;
}

}  // namespace

double softmax_margin_score(std::span<const double> probs, ClassId candidate) {
  return max_other(probs, candidate) - probs[candidate];
}

double softmax_ratio_score(std::span<const double> probs, ClassId candidate, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  const double other = max_other(probs, candidate);
  const double denom = probs[candidate] + gamma;
  if (denom == 0.0) {
    throw DataError("softmax_ratio denominator is zero for class " + std::to_string(candidate));
  }
  return other / denom;
}

EmbeddingMatrix measure_features(const LabeledDataset& ds, const MeasureConfig& measure) {
  if (measure.feature_source == FeatureSource::kLayerEmbedding) return ds.embeddings;
  if (!ds.logits) {
    throw DataError("feature_source softmax_of_logits needs logits in the dataset");
  }
  return softmax_features(*ds.logits, measure.temperature);
}

}  // namespace confine
