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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "confine/conformal.hpp"
#include "confine/data.hpp"
#include "confine/evaluation.hpp"
#include "confine/nonconformity.hpp"

namespace confine::cli {

/// Everything a run needs. Data comes either from three role manifests
/// (proper, calibration, optional test) or from one dataset manifest plus
/// split fractions, never both.
struct RunConfig {
  std::optional<std::filesystem::path> proper;
  std::optional<std::filesystem::path> calibration;
  std::optional<std::filesystem::path> test;
  std::optional<std::filesystem::path> dataset;
  std::optional<double> calib_fraction;
  std::optional<double> test_fraction;

  MeasureConfig measure;
  std::vector<MeasureConfig> measures;  // grid only
  ClasswiseMode classwise = ClasswiseMode::kPerClassDenominator;
  bool filter_misclassified = false;
  double epsilon = 0.05;
  std::vector<double> grid = default_epsilon_grid();
  SelectionMode selection = SelectionMode::kCorrectEfficiency;
  std::filesystem::path output_dir = "confine_out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  /// Checks the data-source exclusivity rule and value ranges.
  void validate(bool need_test) const;
};

/// Parses a config object. Relative paths resolve against `base_dir`.
/// Errors are ConfigErrors prefixed with `where` and the JSON field path.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                           const std::string& where);

RunConfig load_run_config(const std::filesystem::path& path);

/// Loads manifests and performs the configured split.
DataSplit build_split(const RunConfig& cfg, bool need_test);

}  // namespace confine::cli
