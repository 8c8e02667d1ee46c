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
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "confine/data.hpp"
#include "confine/neighbors.hpp"
#include "confine/nonconformity.hpp"

namespace confine {

/// How the p-value of candidate y is ranked against calibration scores.
///  - kOff: against every calibration score, denominator N + 1.
///  - kPaperLiteral: only class-y scores are counted, denominator still N + 1.
///  - kPerClassDenominator: only class-y scores, denominator N_y + 1; this
///    is the form with a per-class coverage guarantee.
enum class ClasswiseMode { kOff, kPaperLiteral, kPerClassDenominator };

std::string to_string(ClasswiseMode mode);
ClasswiseMode classwise_mode_from_string(const std::string& s);

struct PredictionResult {
  std::vector<double> p_values;
  ClassId prediction = 0;
  double credibility = 0.0;
  double confidence = 0.0;
  double epsilon = 0.0;
  std::vector<ClassId> prediction_set;
  /// Keyed by candidate class; indices are rows of the source dataset the
  /// proper training set was drawn from. Empty for softmax measures.
  std::map<ClassId, PartitionedNeighbors> explanations;
};

nlohmann::json to_json(const PredictionResult& r);

/// Prediction set, argmax, credibility and confidence from p-values alone.
PredictionResult summarize_p_values(std::vector<double> p_values, double epsilon);

/// Frozen proper-training features plus sorted calibration scores.
/// Immutable after construction; every query method is const and safe to
/// call concurrently.
class CalibratedPredictor {
 public:
  /// Scores every calibration row against the (optionally filtered) proper
  /// training set using its true label.
  static CalibratedPredictor calibrate(const DataSplit& split, const MeasureConfig& measure,
                                       ClasswiseMode mode, bool filter_misclassified);

  /// Assembles a predictor from already computed calibration scores.
  /// `calib_scores[i]` belongs to a calibration row of class `calib_labels[i]`.
  CalibratedPredictor(std::shared_ptr<const TrainIndex> proper,
                      std::vector<std::size_t> provenance,
                      MeasureConfig measure, ClasswiseMode mode,
                      std::span<const double> calib_scores,
                      std::span<const ClassId> calib_labels);

  const TrainIndex& proper() const { return *proper_; }
  const std::vector<std::size_t>& provenance() const { return provenance_; }
  const MeasureConfig& measure() const { return measure_; }
  ClasswiseMode mode() const { return mode_; }
  std::size_t n_classes() const { return proper_->n_classes(); }
  std::size_t dim() const { return proper_->dim(); }

  /// Ascending; ties ordered by class.
  const std::vector<double>& calib_scores() const { return calib_global_; }
  const std::vector<ClassId>& calib_score_labels() const { return calib_global_labels_; }
  const std::vector<std::vector<double>>& calib_scores_by_class() const {
    return calib_by_class_;
  }

  /// Nonconformity of `feature` under every candidate class.
  std::vector<double> scores(std::span<const float> feature) const;
  /// Row-parallel scores for a feature matrix, row-major rows x n_classes.
  std::vector<double> batch_scores(const EmbeddingMatrix& features) const;

  double p_value(double score, ClassId candidate) const;
  std::vector<double> p_values_from_scores(std::span<const double> scores) const;
  std::vector<double> p_values(std::span<const float> feature) const;

  /// Explanations use the measure's own k.
  PredictionResult predict(std::span<const float> feature, double epsilon) const;

  /// Same/diff neighbors for `candidate` with source-row indices.
  PartitionedNeighbors explain(std::span<const float> feature, ClassId candidate,
                               std::size_t k) const;

  /// explain() for every row and every class, sharing one batched search.
  std::vector<std::map<ClassId, PartitionedNeighbors>> explain_all(
      const EmbeddingMatrix& features, std::size_t k) const;

 private:
  void check_feature(std::span<const float> feature) const;
  PartitionedNeighbors with_provenance(PartitionedNeighbors split) const;

  std::shared_ptr<const TrainIndex> proper_;
  std::vector<std::size_t> provenance_;
  MeasureConfig measure_;
  ClasswiseMode mode_ = ClasswiseMode::kOff;
  std::vector<double> calib_global_;
  std::vector<ClassId> calib_global_labels_;
  std::vector<std::vector<double>> calib_by_class_;
};

/// Per-class nonconformity scores from one query's neighbor lists.
std::vector<double> scores_from_neighbors(const ClassNeighbors& neighbors,
                                          const MeasureConfig& measure);

/// Scores of every row of `features` under its own label `labels[i]`.
std::vector<double> true_label_scores(const TrainIndex& proper, const EmbeddingMatrix& features,
                                      std::span<const ClassId> labels,
                                      const MeasureConfig& measure);

/// Proper training set after optional filtering; every class must remain.
LabeledDataset prepare_proper(const LabeledDataset& proper, bool filter_misclassified);

/// Versioned binary predictor file ("CNFP", u16 version 1).
void save_predictor(const CalibratedPredictor& pred, const std::filesystem::path& path);
CalibratedPredictor load_predictor(const std::filesystem::path& path);

}  // namespace confine
