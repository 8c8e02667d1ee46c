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

#include "confine/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <tuple>

#include "confine/error.hpp"

namespace confine {

using json = nlohmann::json;

namespace {

void check_test_set(const LabeledDataset& test, std::size_t n_classes) {
  if (test.rows() == 0 || test.labels.empty()) throw DataError("empty test set");
  if (test.n_classes != n_classes) {
    throw DataError("test set has " + std::to_string(test.n_classes) +
                    " classes, predictor has " + std::to_string(n_classes));
  }
}

PValueTable table_from_scores(const CalibratedPredictor& pred, std::span<const double> scores,
                              std::span<const ClassId> truth) {
  PValueTable t;
  t.n_classes = pred.n_classes();
  t.truth.assign(truth.begin(), truth.end());
  t.p.resize(scores.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = pred.p_values_from_scores(scores.subspan(i * t.n_classes, t.n_classes));
    std::copy(p.begin(), p.end(), t.p.begin() + i * t.n_classes);
  }
  return t;
}

json optional_array(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
  return a;
}

}  // namespace

PValueTable compute_p_values(const CalibratedPredictor& pred, const LabeledDataset& test) {
  check_test_set(test, pred.n_classes());
  const auto scores = pred.batch_scores(measure_features(test, pred.measure()));
  return table_from_scores(pred, scores, test.labels);
}

MetricsReport metrics_at(const PValueTable& table, double epsilon) {
  if (table.rows() == 0) throw DataError("empty test set");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
  const std::size_t nc = table.n_classes;
  std::vector<std::size_t> per_class(nc, 0), per_class_hit(nc, 0), per_class_cover(nc, 0);
  std::size_t hits = 0, covered = 0, exact = 0, multi = 0;

  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto p = table.row(i);
    const ClassId y = table.truth[i];
    const auto argmax = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
    std::size_t set_size = 0;
    for (double v : p) set_size += v > epsilon ? 1 : 0;
    const bool has_truth = p[y] > epsilon;

    ++per_class[y];
    if (argmax == y) {
      ++hits;
      ++per_class_hit[y];
    }
    if (has_truth) {
      ++covered;
      ++per_class_cover[y];
      if (set_size == 1) {
        ++exact;
      } else {
        ++multi;
      }
    }
  }

  MetricsReport m;
  m.epsilon = epsilon;
  m.n_test = table.rows();
  const auto n = static_cast<double>(table.rows());
  m.accuracy = static_cast<double>(hits) / n;
  m.coverage = static_cast<double>(covered) / n;
  m.correct_efficiency = static_cast<double>(exact) / n;
  m.multi_label_coverage = static_cast<double>(multi) / n;
  m.classwise_coverage.resize(nc);
  double acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (per_class[c] == 0) continue;
    const auto nc_d = static_cast<double>(per_class[c]);
    m.classwise_coverage[c] = static_cast<double>(per_class_cover[c]) / nc_d;
    acc_sum += static_cast<double>(per_class_hit[c]) / nc_d;
    ++present;
  }
  m.class_averaged_accuracy = acc_sum / static_cast<double>(present);
  return m;
}

MetricsReport evaluate(const CalibratedPredictor& pred, const LabeledDataset& test,
                       double epsilon) {
  return metrics_at(compute_p_values(pred, test), epsilon);
}

json to_json(const MetricsReport& m) {
  return json{{"epsilon", m.epsilon},
              {"n_test", m.n_test},
              {"accuracy", m.accuracy},
              {"class_averaged_accuracy", m.class_averaged_accuracy},
              {"coverage", m.coverage},
              {"correct_efficiency", m.correct_efficiency},
              {"classwise_coverage", optional_array(m.classwise_coverage)}};
}

std::vector<double> default_epsilon_grid() {
  std::vector<double> grid;
  const double lo = std::log10(1e-3);
  const double hi = std::log10(0.5);
  constexpr int kPoints = 200;
  for (int i = 1; i + 1 < kPoints; ++i) {
    grid.push_back(std::pow(10.0, lo + (hi - lo) * i / (kPoints - 1)));
  }
  grid.insert(grid.end(), {1e-3, 0.5});  // exact endpoints
  grid.insert(grid.end(), {0.005, 0.01, 0.05, 0.1});
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

void check_epsilon_grid(std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("epsilon grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] < 1.0)) {
      throw ConfigError("epsilon grid value " + std::to_string(grid[i]) + " outside [0, 1)");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw ConfigError("epsilon grid must be strictly ascending");
    }
  }
}

SweepCurve sweep_from_table(const PValueTable& table, std::span<const double> grid) {
  check_epsilon_grid(grid);
  SweepCurve curve;
  curve.n_test = table.rows();
  curve.epsilons.assign(grid.begin(), grid.end());
  curve.classwise_coverage_at.assign(table.n_classes, {});
  curve.min_margin = std::numeric_limits<double>::infinity();
  const auto n = static_cast<double>(table.rows());
  for (double eps : grid) {
    const MetricsReport m = metrics_at(table, eps);
    curve.coverage_at.push_back(m.coverage);
    curve.correct_efficiency_at.push_back(m.correct_efficiency);
    for (std::size_t c = 0; c < table.n_classes; ++c) {
      curve.classwise_coverage_at[c].push_back(m.classwise_coverage[c]);
    }
    const double margin = m.coverage - (1.0 - eps);
    curve.min_margin = std::min(curve.min_margin, margin);
    if (margin < -3.0 * std::sqrt(eps * (1.0 - eps) / n)) curve.valid = false;
  }
  return curve;
}

SweepCurve sweep_epsilon(const CalibratedPredictor& pred, const LabeledDataset& test,
                         std::span<const double> grid) {
  check_epsilon_grid(grid);
  return sweep_from_table(compute_p_values(pred, test), grid);
}

std::string curve_to_csv(const SweepCurve& curve) {
  std::string out = "epsilon,coverage,correct_efficiency";
  for (std::size_t c = 0; c < curve.classwise_coverage_at.size(); ++c) {
    out += ",class_" + std::to_string(c);
  }
  out += '\n';
  char buf[40];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < curve.epsilons.size(); ++i) {
    out += num(curve.epsilons[i]) + "," + num(curve.coverage_at[i]) + "," +
           num(curve.correct_efficiency_at[i]);
    for (const auto& cls : curve.classwise_coverage_at) {
      out += ',';
      if (cls[i]) out += num(*cls[i]);
    }
    out += '\n';
  }
  return out;
}

json summary_json(const SweepCurve& curve) {
  const auto [best_eps, best_ce] = top_correct_efficiency(curve);
  return json{{"n_test", curve.n_test},
              {"grid_points", curve.epsilons.size()},
              {"min_margin", curve.min_margin},
              {"verdict", curve.valid ? "valid" : "invalid"},
              {"top_correct_efficiency", best_ce},
              {"best_epsilon", best_eps}};
}

std::pair<double, double> top_correct_efficiency(const SweepCurve& curve) {
  if (curve.epsilons.empty()) throw ConfigError("epsilon grid is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.epsilons.size(); ++i) {
    if (curve.correct_efficiency_at[i] > curve.correct_efficiency_at[best]) best = i;
  }
  return {curve.epsilons[best], curve.correct_efficiency_at[best]};
}

std::pair<double, double> top_correct_efficiency(const CalibratedPredictor& pred,
                                                 const LabeledDataset& test,
                                                 std::span<const double> grid) {
  return top_correct_efficiency(sweep_epsilon(pred, test, grid));
}

json to_json(const GridEntry& e) {
  json m;
  to_json(m, e.measure);
  json j{{"config_index", e.config_index}, {"measure", m}, {"status", e.ok ? "ok" : "failed"}};
  if (e.ok) {
    j["rank"] = e.rank;
    j["accuracy"] = e.accuracy;
    j["class_averaged_accuracy"] = e.class_averaged_accuracy;
    j["top_correct_efficiency"] = e.top_correct_efficiency;
    j["best_epsilon"] = e.best_epsilon;
  } else {
    j["error"] = e.error;
  }
  return j;
}

namespace {

void fill_entry(GridEntry& e, const PValueTable& table, std::span<const double> grid) {
  const SweepCurve curve = sweep_from_table(table, grid);
  // Accuracy and class-averaged accuracy do not depend on epsilon.
  const MetricsReport m = metrics_at(table, grid.front());
  e.accuracy = m.accuracy;
  e.class_averaged_accuracy = m.class_averaged_accuracy;
  std::tie(e.best_epsilon, e.top_correct_efficiency) = top_correct_efficiency(curve);
  e.ok = true;
}

// Configs that can share one neighbor search: same features on both sides.
struct FeatureKey {
  FeatureSource source;
  double temperature;
  auto operator<=>(const FeatureKey&) const = default;
};

}  // namespace

std::vector<GridEntry> grid_search(const DataSplit& split,
                                   std::span<const MeasureConfig> measure_space,
                                   const GridOptions& options) {
  if (measure_space.empty()) throw ConfigError("grid search needs at least one measure config");
  check_epsilon_grid(options.epsilons);
  split.validate();
  check_test_set(split.test, split.proper_train.n_classes);

  std::vector<GridEntry> entries(measure_space.size());
  std::map<FeatureKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < measure_space.size(); ++i) {
    entries[i].config_index = i;
    entries[i].measure = measure_space[i];
    const auto& m = measure_space[i];
    try {
      m.validate();
    } catch (const Error& e) {
      entries[i].error = e.what();
      continue;
    }
    if (m.neighbor_based()) {
      const double t = m.feature_source == FeatureSource::kSoftmaxOfLogits ? m.temperature : 0.0;
      groups[{m.feature_source, t}].push_back(i);
      continue;
    }
    try {
      const auto pred = CalibratedPredictor::calibrate(split, m, options.classwise,
                                                       options.filter_misclassified);
      fill_entry(entries[i], compute_p_values(pred, split.test), options.epsilons);
    } catch (const Error& e) {
      entries[i].error = e.what();
    }
  }

  for (const auto& [key, members] : groups) {
    const MeasureConfig& first = measure_space[members.front()];
    std::size_t max_k = 0;
    for (std::size_t i : members) max_k = std::max(max_k, measure_space[i].neighbor_k());

    std::shared_ptr<const TrainIndex> index;
    std::vector<std::size_t> provenance;
    std::vector<ClassNeighbors> calib_nb, test_nb;
    try {
      LabeledDataset proper = prepare_proper(split.proper_train, options.filter_misclassified);
      index = std::make_shared<const TrainIndex>(measure_features(proper, first), proper.labels,
                                                 proper.n_classes);
      provenance = std::move(proper.provenance);
      calib_nb = batch_class_topk(measure_features(split.calibration, first), *index, max_k);
      test_nb = batch_class_topk(measure_features(split.test, first), *index, max_k);
    } catch (const Error& e) {
      for (std::size_t i : members) entries[i].error = e.what();
      continue;
    }

    const auto& calib_labels = split.calibration.labels;
    for (std::size_t i : members) {
      const MeasureConfig& m = measure_space[i];
      try {
        const std::size_t k = m.neighbor_k();
        std::vector<double> calib_scores(calib_nb.size());
        for (std::size_t r = 0; r < calib_nb.size(); ++r) {
          calib_scores[r] = knn_score(partition(calib_nb[r], calib_labels[r], k), k,
                                      calib_labels[r]);
        }
        const CalibratedPredictor pred(index, provenance, m, options.classwise, calib_scores,
                                       calib_labels);
        std::vector<double> test_scores;
        test_scores.reserve(test_nb.size() * pred.n_classes());
        for (const auto& nb : test_nb) {
          const auto s = scores_from_neighbors(nb, m);
          test_scores.insert(test_scores.end(), s.begin(), s.end());
        }
        fill_entry(entries[i], table_from_scores(pred, test_scores, split.test.labels),
                   options.epsilons);
      } catch (const Error& e) {
        entries[i].error = e.what();
      }
    }
  }

  std::vector<std::size_t> order;
  for (const auto& e : entries) {
    if (e.ok) order.push_back(e.config_index);
  }
  const auto metric = [&](std::size_t i) {
    return options.selection == SelectionMode::kAccuracy ? entries[i].accuracy
                                                         : entries[i].top_correct_efficiency;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return metric(a) > metric(b); });
  for (std::size_t r = 0; r < order.size(); ++r) entries[order[r]].rank = r + 1;
  return entries;
}

}  // namespace confine
