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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "confine/conformal.hpp"
#include "confine/data.hpp"
#include "confine/nonconformity.hpp"

namespace confine {

/// p-values for every test row and candidate class, row-major.
struct PValueTable {
  std::size_t n_classes = 0;
  std::vector<double> p;
  std::vector<ClassId> truth;

  std::size_t rows() const { return truth.size(); }
  std::span<const double> row(std::size_t i) const {
    return {p.data() + i * n_classes, n_classes};
  }
};

PValueTable compute_p_values(const CalibratedPredictor& pred, const LabeledDataset& test);

struct MetricsReport {
  double epsilon = 0.0;
  std::size_t n_test = 0;
  double accuracy = 0.0;
  double class_averaged_accuracy = 0.0;
  double coverage = 0.0;
  double correct_efficiency = 0.0;
  /// Fraction of sets that hold the truth plus at least one other class.
  double multi_label_coverage = 0.0;
  /// nullopt for classes absent from the test set.
  std::vector<std::optional<double>> classwise_coverage;
};

nlohmann::json to_json(const MetricsReport& m);

MetricsReport metrics_at(const PValueTable& table, double epsilon);
MetricsReport evaluate(const CalibratedPredictor& pred, const LabeledDataset& test,
                       double epsilon);

struct SweepCurve {
  std::vector<double> epsilons;
  std::vector<double> coverage_at;
  std::vector<double> correct_efficiency_at;
  /// classwise_coverage_at[c][i]; nullopt where class c has no test rows.
  std::vector<std::vector<std::optional<double>>> classwise_coverage_at;
  std::size_t n_test = 0;
  /// min over the grid of coverage - (1 - eps).
  double min_margin = 0.0;
  /// Every grid point has coverage >= 1 - eps - 3 * sqrt(eps (1 - eps) / N).
  bool valid = true;
};

/// 200 log-spaced points in [1e-3, 0.5] merged with {0.005, 0.01, 0.05, 0.1}.
std::vector<double> default_epsilon_grid();

/// Throws ConfigError unless strictly ascending within [0, 1).
void check_epsilon_grid(std::span<const double> grid);

SweepCurve sweep_from_table(const PValueTable& table, std::span<const double> grid);
SweepCurve sweep_epsilon(const CalibratedPredictor& pred, const LabeledDataset& test,
                         std::span<const double> grid);

/// `epsilon,coverage,correct_efficiency,class_0,...`; empty cells mark
/// classes absent from the test set.
std::string curve_to_csv(const SweepCurve& curve);
nlohmann::json summary_json(const SweepCurve& curve);

/// Best correct efficiency over the grid, ties to the smallest epsilon.
std::pair<double, double> top_correct_efficiency(const SweepCurve& curve);
std::pair<double, double> top_correct_efficiency(const CalibratedPredictor& pred,
                                                 const LabeledDataset& test,
                                                 std::span<const double> grid);

/// -A ranks by accuracy, -C by top correct efficiency.
enum class SelectionMode { kAccuracy, kCorrectEfficiency };

struct GridEntry {
  std::size_t config_index = 0;
  MeasureConfig measure;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double class_averaged_accuracy = 0.0;
  double top_correct_efficiency = 0.0;
  double best_epsilon = 0.0;
  std::size_t rank = 0;  // 1-based; 0 for failed configs
};

nlohmann::json to_json(const GridEntry& e);

struct GridOptions {
  SelectionMode selection = SelectionMode::kCorrectEfficiency;
  ClasswiseMode classwise = ClasswiseMode::kOff;
  bool filter_misclassified = false;
  std::vector<double> epsilons = default_epsilon_grid();
};

/// Calibrates and evaluates every config on `split`; configs sharing a
/// feature space share one neighbor search at the largest k. Entries are
/// returned in config order with `rank` filled in. A failing config is
/// recorded, not thrown.
std::vector<GridEntry> grid_search(const DataSplit& split,
                                   std::span<const MeasureConfig> measure_space,
                                   const GridOptions& options);

}  // namespace confine
