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

#include "cli/commands.hpp"

#include <charconv>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/run_config.hpp"
#include "confine/atomic_file.hpp"
#include "confine/conformal.hpp"
#include "confine/data.hpp"
#include "confine/error.hpp"
#include "confine/evaluation.hpp"
#include "confine/parallel.hpp"

namespace confine::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Command-line values that override the config file when given.
struct Overrides {
  std::string config;
  std::string proper, calibration, test, dataset, out;
  double calib_fraction = 0, test_fraction = 0, epsilon = 0, gamma = 0, temperature = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string kind, feature_source, classwise, selection;
  bool filter = false;

  CLI::Option* o_proper = nullptr;
  CLI::Option* o_calibration = nullptr;
  CLI::Option* o_test = nullptr;
  CLI::Option* o_dataset = nullptr;
  CLI::Option* o_out = nullptr;
  CLI::Option* o_calib_fraction = nullptr;
  CLI::Option* o_test_fraction = nullptr;
  CLI::Option* o_epsilon = nullptr;
  CLI::Option* o_k = nullptr;
  CLI::Option* o_gamma = nullptr;
  CLI::Option* o_temperature = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_kind = nullptr;
  CLI::Option* o_feature_source = nullptr;
  CLI::Option* o_classwise = nullptr;
  CLI::Option* o_selection = nullptr;
  CLI::Option* o_filter = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run config");
    o_proper = app->add_option("--proper", proper, "proper-training manifest");
    o_calibration = app->add_option("--calibration", calibration, "calibration manifest");
    o_test = app->add_option("--test", test, "test manifest");
    o_dataset = app->add_option("--dataset", dataset, "single manifest to split");
    o_calib_fraction = app->add_option("--calib-fraction", calib_fraction);
    o_test_fraction = app->add_option("--test-fraction", test_fraction);
    o_out = app->add_option("--out", out, "output directory");
    o_epsilon = app->add_option("--epsilon", epsilon, "significance level");
    o_kind = app->add_option("--kind", kind, "confine_knn | one_nn | softmax_margin | softmax_ratio");
    o_k = app->add_option("--k", k, "neighbors per partition");
    o_gamma = app->add_option("--gamma", gamma);
    o_temperature = app->add_option("--temperature", temperature);
    o_feature_source = app->add_option("--feature-source", feature_source,
                                       "layer_embedding | softmax_of_logits");
    o_classwise = app->add_option("--classwise-mode", classwise,
                                  "off | paper_literal | per_class_denominator");
    o_selection = app->add_option("--selection", selection, "A | C (grid)");
    o_seed = app->add_option("--seed", seed);
    o_filter = app->add_flag("--filter-misclassified", filter,
                             "drop proper rows the model misclassifies");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    const auto set_path = [](CLI::Option* o, const std::string& v,
                             std::optional<fs::path>& dst) {
      if (o->count()) dst = fs::path(v);
    };
    set_path(o_proper, proper, cfg.proper);
    set_path(o_calibration, calibration, cfg.calibration);
    set_path(o_test, test, cfg.test);
    set_path(o_dataset, dataset, cfg.dataset);
    if (o_out->count()) cfg.output_dir = out;
    if (o_calib_fraction->count()) cfg.calib_fraction = calib_fraction;
    if (o_test_fraction->count()) cfg.test_fraction = test_fraction;
    if (o_epsilon->count()) cfg.epsilon = epsilon;
    if (o_seed->count()) cfg.seed = seed;
    if (o_filter->count()) cfg.filter_misclassified = filter;
    if (o_classwise->count()) cfg.classwise = classwise_mode_from_string(classwise);
    if (o_selection->count()) {
      if (selection != "A" && selection != "C") {
        throw ConfigError("--selection: expected A or C");
      }
      cfg.selection = selection == "A" ? SelectionMode::kAccuracy
                                       : SelectionMode::kCorrectEfficiency;
    }

    json m;
    to_json(m, cfg.measure);
    if (o_kind->count()) {
      m["kind"] = kind;
      if ((kind == "softmax_margin" || kind == "softmax_ratio") && !o_feature_source->count()) {
        m["feature_source"] = "softmax_of_logits";
      }
    }
    if (o_k->count()) m["k"] = k;
    if (o_gamma->count()) m["gamma"] = gamma;
    if (o_temperature->count()) m["temperature"] = temperature;
    if (o_feature_source->count()) m["feature_source"] = feature_source;
    cfg.measure = m.get<MeasureConfig>();
    return cfg;
  }
};

void apply_threads(std::size_t flag_threads, std::size_t config_threads) {
  std::size_t n = flag_threads ? flag_threads : config_threads;
  if (n == 0) {
    if (const char* env = std::getenv("CONFINE_THREADS")) {
      std::string_view s(env);
      auto [_, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
      if (ec != std::errc()) throw ConfigError("CONFINE_THREADS: expected an integer");
    }
  }
  set_max_threads(n);
}

std::string join_counts(const std::vector<std::size_t>& counts) {
  std::string s;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    s += (c ? " " : "") + std::to_string(c) + ":" + std::to_string(counts[c]);
  }
  return s;
}

CalibratedPredictor calibrate_from(const RunConfig& cfg, const DataSplit& split) {
  return CalibratedPredictor::calibrate(split, cfg.measure, cfg.classwise,
                                        cfg.filter_misclassified);
}

int cmd_calibrate(const RunConfig& cfg, std::ostream& out) {
  const DataSplit split = build_split(cfg, false);
  const CalibratedPredictor pred = calibrate_from(cfg, split);
  const fs::path file = cfg.output_dir / "predictor.cnfp";
  save_predictor(pred, file);

  std::vector<std::size_t> calib_counts;
  for (const auto& l : pred.calib_scores_by_class()) calib_counts.push_back(l.size());
  out << "N_t=" << pred.proper().rows() << " N_c=" << pred.calib_scores().size() << "\n"
      << "proper per class: " << join_counts(pred.proper().class_sizes()) << "\n"
      << "calibration per class: " << join_counts(calib_counts) << "\n"
      << "wrote " << file.string() << "\n";
  return kExitOk;
}

int cmd_predict(const fs::path& predictor, const fs::path& test_manifest, double epsilon,
                std::size_t explain_k, const std::string& out_file, std::ostream& out,
                std::ostream& err) {
  const CalibratedPredictor pred = load_predictor(predictor);
  const LabeledDataset test = load_manifest(test_manifest);
  const EmbeddingMatrix features = measure_features(test, pred.measure());
  const std::vector<double> scores = pred.batch_scores(features);

  std::vector<std::map<ClassId, PartitionedNeighbors>> explanations;
  if (explain_k > 0) {
    if (pred.measure().neighbor_based()) {
      explanations = pred.explain_all(features, explain_k);
    } else {
      err << "warning: --explain ignored, " << to_string(pred.measure().kind)
          << " has no neighbor explanation\n";
    }
  }

  std::string lines;
  const std::size_t nc = pred.n_classes();
  for (std::size_t i = 0; i < features.rows(); ++i) {
    PredictionResult r = summarize_p_values(
        pred.p_values_from_scores(std::span<const double>(scores).subspan(i * nc, nc)), epsilon);
    if (!explanations.empty()) r.explanations = std::move(explanations[i]);
    lines += to_json(r).dump() + "\n";
  }
  if (out_file.empty()) {
    out << lines;
  } else {
    write_file_atomic(out_file, lines);
  }
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const DataSplit split = build_split(cfg, true);
  const CalibratedPredictor pred = calibrate_from(cfg, split);
  const std::string text = to_json(evaluate(pred, split.test, cfg.epsilon)).dump(2) + "\n";
  write_file_atomic(cfg.output_dir / "metrics.json", text);
  out << text;
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  const DataSplit split = build_split(cfg, true);
  const CalibratedPredictor pred = calibrate_from(cfg, split);
  const SweepCurve curve = sweep_epsilon(pred, split.test, cfg.grid);
  write_file_atomic(cfg.output_dir / "curve.csv", curve_to_csv(curve));
  const json summary = summary_json(curve);
  write_file_atomic(cfg.output_dir / "sweep.json", summary.dump(2) + "\n");
  out << "verdict: " << summary["verdict"].get<std::string>()
      << " (min coverage margin " << curve.min_margin << " over " << curve.epsilons.size()
      << " epsilons)\n"
      << "top correct efficiency " << summary["top_correct_efficiency"].get<double>()
      << " at epsilon " << summary["best_epsilon"].get<double>() << "\n";
  return kExitOk;
}

int cmd_grid(const RunConfig& cfg, std::ostream& out) {
  if (cfg.measures.empty()) throw ConfigError("config: measures: grid needs a non-empty list");
  const DataSplit split = build_split(cfg, true);
  GridOptions opts;
  opts.selection = cfg.selection;
  opts.classwise = cfg.classwise;
  opts.filter_misclassified = cfg.filter_misclassified;
  opts.epsilons = cfg.grid;
  const auto entries = grid_search(split, cfg.measures, opts);
  std::string lines;
  for (const auto& e : entries) lines += to_json(e).dump() + "\n";
  write_file_atomic(cfg.output_dir / "grid.jsonl", lines);
  for (const auto& e : entries) {
    if (e.rank == 1) {
      json m;
      to_json(m, e.measure);
      out << "best config #" << e.config_index << ": " << m.dump()
          << " accuracy=" << e.accuracy << " top_correct_efficiency="
          << e.top_correct_efficiency << "\n";
    }
  }
  out << "wrote " << entries.size() << " results to "
      << (cfg.output_dir / "grid.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_synth(std::size_t classes, std::size_t dim, std::size_t per_class, double separation,
              std::uint64_t seed, const fs::path& dir, std::ostream& out) {
  const LabeledDataset ds = generate_gaussian_mixture(classes, dim, per_class, separation, seed);
  const fs::path manifest = dir / "manifest.json";
  save_dataset(ds, manifest, "data");
  out << "wrote " << ds.rows() << " rows to " << manifest.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal prediction over classifier embeddings"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker cap (default: CONFINE_THREADS or all cores)");

  Overrides calib_o, eval_o, sweep_o, grid_o;
  auto* calibrate = app.add_subcommand("calibrate", "score the calibration set, save a predictor");
  calib_o.attach(calibrate);
  auto* evaluate_cmd = app.add_subcommand("evaluate", "metrics at one epsilon");
  eval_o.attach(evaluate_cmd);
  auto* sweep = app.add_subcommand("sweep", "coverage and correct efficiency over an epsilon grid");
  sweep_o.attach(sweep);
  auto* grid = app.add_subcommand("grid", "hyperparameter search over measure configs");
  grid_o.attach(grid);

  auto* predict = app.add_subcommand("predict", "p-values and prediction sets as JSON lines");
  std::string predictor_path, test_path, predict_out;
  double predict_eps = 0.05;
  std::size_t explain_k = 0;
  predict->add_option("--predictor", predictor_path, "predictor file from calibrate")->required();
  predict->add_option("--test", test_path, "test manifest")->required();
  predict->add_option("--epsilon", predict_eps, "significance level");
  predict->add_option("--explain", explain_k, "attach k same/diff neighbors per class");
  predict->add_option("--out", predict_out, "JSON-lines file (default: stdout)");

  auto* synth = app.add_subcommand("synth", "write a Gaussian-mixture dataset");
  std::size_t classes = 3, dim = 8, per_class = 100;
  double separation = 4.0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--classes", classes);
  synth->add_option("--dim", dim);
  synth->add_option("--per-class", per_class);
  synth->add_option("--separation", separation);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const auto with_config = [&](Overrides& o, auto&& fn) {
      const RunConfig cfg = o.resolve();
      apply_threads(threads, cfg.threads);
      return fn(cfg);
    };
    if (calibrate->parsed()) {
      return with_config(calib_o, [&](const RunConfig& c) { return cmd_calibrate(c, out); });
    }
    if (evaluate_cmd->parsed()) {
      return with_config(eval_o, [&](const RunConfig& c) { return cmd_evaluate(c, out); });
    }
    if (sweep->parsed()) {
      return with_config(sweep_o, [&](const RunConfig& c) { return cmd_sweep(c, out); });
    }
    if (grid->parsed()) {
      return with_config(grid_o, [&](const RunConfig& c) { return cmd_grid(c, out); });
    }
    apply_threads(threads, 0);
    if (predict->parsed()) {
      if (!(predict_eps >= 0.0 && predict_eps < 1.0)) {
        throw ConfigError("--epsilon: must lie in [0, 1)");
      }
      return cmd_predict(predictor_path, test_path, predict_eps, explain_k, predict_out, out,
                         err);
    }
    if (synth->parsed()) {
      return cmd_synth(classes, dim, per_class, separation, synth_seed, synth_out, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace confine::cli
