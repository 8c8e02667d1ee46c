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

#include "confine/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "confine/error.hpp"
#include "confine/parallel.hpp"

namespace confine {

using json = nlohmann::json;

namespace {

// Bounds the memory held by per-class neighbor lists during batch scoring.
constexpr std::size_t kScoreBlock = 2048;

std::vector<double> to_double(std::span<const float> v) {
  return {v.begin(), v.end()};
}

double softmax_score(std::span<const float> feature, ClassId candidate,
                     const MeasureConfig& measure) {
  const auto probs = to_double(feature);
  if (measure.kind == MeasureKind::kSoftmaxMargin) {
    return softmax_margin_score(probs, candidate);
  }
  return softmax_ratio_score(probs, candidate, measure.gamma);
}

// Runs `fn(block_matrix, first_row)` over consecutive row blocks.
template <typename Fn>
void for_each_block(const EmbeddingMatrix& features, Fn&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < features.rows(); begin += kScoreBlock) {
    const std::size_t end = std::min(features.rows(), begin + kScoreBlock);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    fn(features.select_rows(idx), begin);
  }
}

}  // namespace

std::string to_string(ClasswiseMode mode) {
  switch (mode) {
    case ClasswiseMode::kOff: return "off";
    case ClasswiseMode::kPaperLiteral: return "paper_literal";
    case ClasswiseMode::kPerClassDenominator: return "per_class_denominator";
  }
  return "?";
}

ClasswiseMode classwise_mode_from_string(const std::string& s) {
  if (s == "off") return ClasswiseMode::kOff;
  if (s == "paper_literal") return ClasswiseMode::kPaperLiteral;
  if (s == "per_class_denominator") return ClasswiseMode::kPerClassDenominator;
  throw ConfigError("classwise_mode: unknown mode '" + s +
                    "' (expected off, paper_literal or per_class_denominator)");
}

json to_json(const PredictionResult& r) {
  json j;
  j["p_values"] = r.p_values;
  j["prediction"] = r.prediction;
  j["credibility"] = r.credibility;
  j["confidence"] = r.confidence;
  j["prediction_set"] = r.prediction_set;
  json ex = json::object();
  for (const auto& [cls, split] : r.explanations) {
    const auto pairs = [](const NeighborList& l) {
      json a = json::array();
      for (const auto& n : l) a.push_back(json::array({n.index, n.distance}));
      return a;
    };
    ex[std::to_string(cls)] = json{{"same", pairs(split.same)}, {"diff", pairs(split.diff)}};
  }
  j["explanations"] = std::move(ex);
  return j;
}

PredictionResult summarize_p_values(std::vector<double> p_values, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ConfigError("epsilon must lie in [0, 1)");
  }
  if (p_values.empty()) throw DataError("no p-values to summarize");
  PredictionResult r;
  r.epsilon = epsilon;
  r.p_values = std::move(p_values);
  const auto& p = r.p_values;
  r.prediction = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
  r.credibility = p[r.prediction];
  double runner_up = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j != r.prediction) runner_up = std::max(runner_up, p[j]);
  }
  r.confidence = 1.0 - runner_up;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > epsilon) r.prediction_set.push_back(static_cast<ClassId>(j));
  }
  return r;
}

LabeledDataset prepare_proper(const LabeledDataset& proper, bool filter) {
  LabeledDataset out = filter ? filter_misclassified(proper) : proper;
  if (out.provenance.empty()) {
    out.provenance.resize(out.rows());
    std::iota(out.provenance.begin(), out.provenance.end(), std::size_t{0});
  }
  if (out.n_classes < 2) throw DataError("conformal prediction needs at least 2 classes");
  const auto counts = out.class_counts();
  std::string missing;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing.empty()) {
    throw DataError(std::string("empty class in proper training set") +
                    (filter ? " after filtering" : "") + ": " + missing);
  }
  return out;
}

std::vector<double> scores_from_neighbors(const ClassNeighbors& neighbors,
                                          const MeasureConfig& measure) {
  const std::size_t k = measure.neighbor_k();
  std::vector<double> out(neighbors.by_class.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    const auto cls = static_cast<ClassId>(c);
    out[c] = knn_score(partition(neighbors, cls, k), k, cls);
  }
  return out;
}

std::vector<double> true_label_scores(const TrainIndex& proper, const EmbeddingMatrix& features,
                                      std::span<const ClassId> labels,
                                      const MeasureConfig& measure) {
  if (labels.size() != features.rows()) {
    throw DataError("label count does not match feature rows");
  }
  if (features.dim() != proper.dim()) {
    throw DataError("feature dimension " + std::to_string(features.dim()) +
                    " does not match proper training dimension " +
                    std::to_string(proper.dim()));
  }
  std::vector<double> out(features.rows());
  if (!measure.neighbor_based()) {
    for (std::size_t i = 0; i < features.rows(); ++i) {
      out[i] = softmax_score(features.row(i), labels[i], measure);
    }
    return out;
  }
  const std::size_t k = measure.neighbor_k();
  for_each_block(features, [&](const EmbeddingMatrix& block, std::size_t first) {
    const auto neighbors = batch_class_topk(block, proper, k);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      const ClassId y = labels[first + i];
      out[first + i] = knn_score(partition(neighbors[i], y, k), k, y);
    }
  });
  return out;
}

CalibratedPredictor::CalibratedPredictor(std::shared_ptr<const TrainIndex> proper,
                                         std::vector<std::size_t> provenance,
                                         MeasureConfig measure, ClasswiseMode mode,
                                         std::span<const double> calib_scores,
                                         std::span<const ClassId> calib_labels)
    : proper_(std::move(proper)),
      provenance_(std::move(provenance)),
      measure_(measure),
      mode_(mode) {
  if (!proper_) throw DataError("predictor needs a proper training index");
  measure_.validate();
  if (provenance_.empty()) {
    provenance_.resize(proper_->rows());
    std::iota(provenance_.begin(), provenance_.end(), std::size_t{0});
  }
  if (provenance_.size() != proper_->rows()) {
    throw DataError("provenance length does not match proper training rows");
  }
  if (calib_scores.size() != calib_labels.size()) {
    throw DataError("calibration scores and labels differ in length");
  }
  if (calib_scores.empty()) throw DataError("empty calibration set");

  std::vector<std::pair<double, ClassId>> pairs(calib_scores.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (std::isnan(calib_scores[i])) throw DataError("NaN calibration score");
    if (calib_labels[i] >= n_classes()) {
      throw DataError("calibration label " + std::to_string(calib_labels[i]) +
                      " out of range");
    }
    pairs[i] = {calib_scores[i], calib_labels[i]};
  }
  std::sort(pairs.begin(), pairs.end());

  calib_by_class_.assign(n_classes(), {});
  calib_global_.reserve(pairs.size());
  calib_global_labels_.reserve(pairs.size());
  for (const auto& [score, label] : pairs) {
    calib_global_.push_back(score);
    calib_global_labels_.push_back(label);
    calib_by_class_[label].push_back(score);
  }
  if (mode_ == ClasswiseMode::kPerClassDenominator) {
    for (std::size_t c = 0; c < n_classes(); ++c) {
      if (calib_by_class_[c].empty()) {
        throw DataError("class " + std::to_string(c) +
                        " has no calibration samples; per_class_denominator "
                        "p-values are undefined for it");
      }
    }
  }
}

CalibratedPredictor CalibratedPredictor::calibrate(const DataSplit& split,
                                                   const MeasureConfig& measure,
                                                   ClasswiseMode mode, bool filter) {
  measure.validate();
  split.validate();
  LabeledDataset proper = prepare_proper(split.proper_train, filter);
  auto index = std::make_shared<const TrainIndex>(measure_features(proper, measure),
                                                  proper.labels, proper.n_classes);
  const auto calib_features = measure_features(split.calibration, measure);
  const auto scores =
      true_label_scores(*index, calib_features, split.calibration.labels, measure);
  return CalibratedPredictor(std::move(index), std::move(proper.provenance), measure, mode,
                             scores, split.calibration.labels);
}

void CalibratedPredictor::check_feature(std::span<const float> feature) const {
  if (feature.size() != dim()) {
    throw DataError("test feature dimension " + std::to_string(feature.size()) +
                    " does not match predictor dimension " + std::to_string(dim()));
  }
}

std::vector<double> CalibratedPredictor::batch_scores(const EmbeddingMatrix& features) const {
  if (features.rows() > 0 && features.dim() != dim()) {
    throw DataError("test feature dimension " + std::to_string(features.dim()) +
                    " does not match predictor dimension " + std::to_string(dim()));
  }
  const std::size_t nc = n_classes();
  std::vector<double> out(features.rows() * nc);
  if (!measure_.neighbor_based()) {
    for (std::size_t i = 0; i < features.rows(); ++i) {
      for (std::size_t c = 0; c < nc; ++c) {
        out[i * nc + c] = softmax_score(features.row(i), static_cast<ClassId>(c), measure_);
      }
    }
    return out;
  }
  for_each_block(features, [&](const EmbeddingMatrix& block, std::size_t first) {
    const auto neighbors = batch_class_topk(block, *proper_, measure_.neighbor_k());
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      const auto s = scores_from_neighbors(neighbors[i], measure_);
      std::copy(s.begin(), s.end(), out.begin() + (first + i) * nc);
    }
  });
  return out;
}

std::vector<double> CalibratedPredictor::scores(std::span<const float> feature) const {
  check_feature(feature);
  return batch_scores(
      EmbeddingMatrix(1, feature.size(), std::vector<float>(feature.begin(), feature.end())));
}

double CalibratedPredictor::p_value(double score, ClassId candidate) const {
  if (candidate >= n_classes()) {
    throw DataError("candidate label " + std::to_string(candidate) + " out of range");
  }
  const auto count_ge = [score](const std::vector<double>& sorted) {
    return static_cast<double>(sorted.end() -
                               std::lower_bound(sorted.begin(), sorted.end(), score));
  };
  const auto n_all = static_cast<double>(calib_global_.size());
  switch (mode_) {
    case ClasswiseMode::kOff:
      return (count_ge(calib_global_) + 1.0) / (n_all + 1.0);
    case ClasswiseMode::kPaperLiteral:
      return (count_ge(calib_by_class_[candidate]) + 1.0) / (n_all + 1.0);
    case ClasswiseMode::kPerClassDenominator: {
      const auto& own = calib_by_class_[candidate];
      return (count_ge(own) + 1.0) / (static_cast<double>(own.size()) + 1.0);
    }
  }
  return 0.0;
}

std::vector<double> CalibratedPredictor::p_values_from_scores(
    std::span<const double> scores) const {
  if (scores.size() != n_classes()) throw DataError("expected one score per class");
  std::vector<double> p(scores.size());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = p_value(scores[c], static_cast<ClassId>(c));
  return p;
}

std::vector<double> CalibratedPredictor::p_values(std::span<const float> feature) const {
  return p_values_from_scores(scores(feature));
}

PartitionedNeighbors CalibratedPredictor::with_provenance(PartitionedNeighbors split) const {
  for (auto& n : split.same) n.index = provenance_[n.index];
  for (auto& n : split.diff) n.index = provenance_[n.index];
  return split;
}

PredictionResult CalibratedPredictor::predict(std::span<const float> feature,
                                              double epsilon) const {
  check_feature(feature);
  if (!measure_.neighbor_based()) return summarize_p_values(p_values(feature), epsilon);

  const std::size_t k = measure_.neighbor_k();
  const ClassNeighbors neighbors = class_topk(feature, *proper_, k);
  PredictionResult r =
      summarize_p_values(p_values_from_scores(scores_from_neighbors(neighbors, measure_)), epsilon);
  for (std::size_t c = 0; c < n_classes(); ++c) {
    const auto cls = static_cast<ClassId>(c);
    r.explanations.emplace(cls, with_provenance(partition(neighbors, cls, k)));
  }
  return r;
}

PartitionedNeighbors CalibratedPredictor::explain(std::span<const float> feature,
                                                  ClassId candidate, std::size_t k) const {
  if (!measure_.neighbor_based()) throw Error("no neighbor explanation for this measure");
  check_feature(feature);
  return with_provenance(topk_partitioned(feature, *proper_, candidate, k));
}

std::vector<std::map<ClassId, PartitionedNeighbors>> CalibratedPredictor::explain_all(
    const EmbeddingMatrix& features, std::size_t k) const {
  if (!measure_.neighbor_based()) throw Error("no neighbor explanation for this measure");
  std::vector<std::map<ClassId, PartitionedNeighbors>> out(features.rows());
  for_each_block(features, [&](const EmbeddingMatrix& block, std::size_t first) {
    const auto neighbors = batch_class_topk(block, *proper_, k);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      for (std::size_t c = 0; c < n_classes(); ++c) {
        const auto cls = static_cast<ClassId>(c);
        out[first + i].emplace(cls, with_provenance(partition(neighbors[i], cls, k)));
      }
    }
  });
  return out;
}

}  // namespace confine
