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

#include "cli/run_config.hpp"

#include <cmath>
#include <set>

#include "confine/atomic_file.hpp"
#include "confine/error.hpp"

namespace confine::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kKnownKeys = {
    "proper",  "calibration", "test",     "dataset",     "split",          "measure",
    "measures", "classwise_mode", "filter_misclassified", "epsilon", "grid", "selection",
    "output_dir", "seed", "threads"};

class FieldReader {
 public:
  FieldReader(const json& j, fs::path base, std::string where)
      : j_(j), base_(std::move(base)), where_(std::move(where)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    throw ConfigError(where_ + ": " + field + ": " + msg);
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  std::optional<fs::path> path(const char* key) const {
    if (!has(key)) return std::nullopt;
    if (!j_.at(key).is_string()) fail(key, "expected a path string");
    fs::path p(j_.at(key).get<std::string>());
    return p.is_absolute() ? p : base_ / p;
  }

  double number(const json& v, const std::string& field) const {
    if (!v.is_number()) fail(field, "expected a number");
    return v.get<double>();
  }

 private:
  const json& j_;
  fs::path base_;
  std::string where_;
};

}  // namespace

void RunConfig::validate(bool need_test) const {
  const bool role_mode = proper || calibration;
  if (dataset && (role_mode || test)) {
    throw ConfigError(
        "config: give either proper/calibration/test manifests or dataset + split, not both");
  }
  if (!dataset && !role_mode) {
    throw ConfigError("config: no data source; set proper and calibration, or dataset");
  }
  if (role_mode) {
    if (!proper) throw ConfigError("config: proper: manifest path required");
    if (!calibration) throw ConfigError("config: calibration: manifest path required");
    if (need_test && !test) throw ConfigError("config: test: manifest path required");
  } else {
    if (!calib_fraction) {
      throw ConfigError("config: split.calib_fraction: required with dataset");
    }
    if (need_test && !test_fraction) {
      throw ConfigError("config: split.test_fraction: required for commands that evaluate");
    }
  }
  measure.validate();
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("config: epsilon: must lie in [0, 1)");
  check_epsilon_grid(grid);
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKnownKeys.contains(key)) throw ConfigError(where + ": " + key + ": unknown field");
  }
  FieldReader r(j, base_dir, where);
  RunConfig cfg;
  cfg.proper = r.path("proper");
  cfg.calibration = r.path("calibration");
  cfg.test = r.path("test");
  cfg.dataset = r.path("dataset");

  if (r.has("split")) {
    const json& s = j["split"];
    if (!s.is_object()) r.fail("split", "expected an object");
    if (s.contains("calib_fraction")) {
      cfg.calib_fraction = r.number(s["calib_fraction"], "split.calib_fraction");
    }
    if (s.contains("test_fraction")) {
      cfg.test_fraction = r.number(s["test_fraction"], "split.test_fraction");
    }
  }
  const auto measure_at = [&](const json& m, const std::string& field) {
    try {
      return m.get<MeasureConfig>();
    } catch (const ConfigError& e) {
      r.fail(field, e.what());
    }
  };
  if (r.has("measure")) cfg.measure = measure_at(j["measure"], "measure");
  if (r.has("measures")) {
    if (!j["measures"].is_array()) r.fail("measures", "expected an array");
    for (std::size_t i = 0; i < j["measures"].size(); ++i) {
      cfg.measures.push_back(
          measure_at(j["measures"][i], "measures[" + std::to_string(i) + "]"));
    }
  }
  if (r.has("classwise_mode")) {
    if (!j["classwise_mode"].is_string()) r.fail("classwise_mode", "expected a string");
    try {
      cfg.classwise = classwise_mode_from_string(j["classwise_mode"].get<std::string>());
    } catch (const ConfigError& e) {
      r.fail("classwise_mode", e.what());
    }
  }
  if (r.has("filter_misclassified")) {
    if (!j["filter_misclassified"].is_boolean()) {
      r.fail("filter_misclassified", "expected true or false");
    }
    cfg.filter_misclassified = j["filter_misclassified"].get<bool>();
  }
  if (r.has("epsilon")) cfg.epsilon = r.number(j["epsilon"], "epsilon");
  if (r.has("grid")) {
    if (!j["grid"].is_array()) r.fail("grid", "expected an array of epsilons");
    cfg.grid.clear();
    for (std::size_t i = 0; i < j["grid"].size(); ++i) {
      cfg.grid.push_back(r.number(j["grid"][i], "grid[" + std::to_string(i) + "]"));
    }
  }
  if (r.has("selection")) {
    const auto s = j["selection"].is_string() ? j["selection"].get<std::string>() : "";
    if (s == "A") {
      cfg.selection = SelectionMode::kAccuracy;
    } else if (s == "C") {
      cfg.selection = SelectionMode::kCorrectEfficiency;
    } else {
      r.fail("selection", "expected \"A\" or \"C\"");
    }
  }
  if (r.has("output_dir")) cfg.output_dir = *r.path("output_dir");
  if (r.has("seed")) {
    if (!j["seed"].is_number_unsigned()) r.fail("seed", "expected a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (r.has("threads")) {
    if (!j["threads"].is_number_unsigned()) r.fail("threads", "expected a non-negative integer");
    cfg.threads = j["threads"].get<std::size_t>();
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j, path.parent_path(), path.string());
}

DataSplit build_split(const RunConfig& cfg, bool need_test) {
  cfg.validate(need_test);
  DataSplit split;
  if (cfg.dataset) {
    LabeledDataset rest = load_manifest(*cfg.dataset);
    if (cfg.test_fraction) {
      auto [kept, test] = split_train_calibration(rest, *cfg.test_fraction, cfg.seed);
      rest = std::move(kept);
      split.test = std::move(test);
    }
    auto [proper, calib] = split_train_calibration(rest, *cfg.calib_fraction, cfg.seed + 1);
    split.proper_train = std::move(proper);
    split.calibration = std::move(calib);
  } else {
    split.proper_train = load_manifest(*cfg.proper);
    split.calibration = load_manifest(*cfg.calibration);
    if (cfg.test) split.test = load_manifest(*cfg.test);
  }
  split.validate();
  return split;
}

}  // namespace confine::cli
