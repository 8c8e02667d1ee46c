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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "cli/commands.hpp"
#include "confine/conformal.hpp"
#include "confine/evaluation.hpp"
#include "confine/neighbors.hpp"
#include "confine/nonconformity.hpp"
#include "test_util.hpp"

using namespace confine;
using confine::testing::random_labels;
using confine::testing::random_matrix;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Oracles: plain scans and counts, no shared search code.

PartitionedNeighbors sort_all(std::span<const float> q, const EmbeddingMatrix& train,
                              std::span<const ClassId> labels, ClassId c, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    all.push_back({i, cosine_distance(q, train.row(i))});
  }
  std::sort(all.begin(), all.end(), neighbor_less);
  PartitionedNeighbors out;
  for (const auto& n : all) {
    auto& dst = labels[n.index] == c ? out.same : out.diff;
    if (dst.size() < k) dst.push_back(n);
  }
  return out;
}

double scan_score(std::span<const float> q, const EmbeddingMatrix& train,
                  std::span<const ClassId> labels, ClassId c, std::size_t k) {
  std::vector<double> same, diff;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    (labels[i] == c ? same : diff).push_back(cosine_distance(q, train.row(i)));
  }
  std::sort(same.begin(), same.end());
  std::sort(diff.begin(), diff.end());
  const auto mean = [k](const std::vector<double>& d) {
    const std::size_t n = std::min(k, d.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += d[i];
    return s / static_cast<double>(n);
  };
  const double a = mean(same), b = mean(diff);
  if (b == 0.0) return a > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return a / b;
}

double count_p(const std::vector<double>& calib, const std::vector<ClassId>& calib_labels,
               double alpha, ClassId c, ClasswiseMode mode) {
  std::size_t ge = 0, own = 0;
  for (std::size_t i = 0; i < calib.size(); ++i) {
    if (calib_labels[i] == c) ++own;
    if ((mode == ClasswiseMode::kOff || calib_labels[i] == c) && calib[i] >= alpha) ++ge;
  }
  const std::size_t n = mode == ClasswiseMode::kPerClassDenominator ? own : calib.size();
  return (static_cast<double>(ge) + 1.0) / (static_cast<double>(n) + 1.0);
}

LabeledDataset random_dataset(std::size_t rows, std::size_t dim, std::size_t nc,
                              std::mt19937_64& rng) {
  LabeledDataset ds;
  ds.embeddings = random_matrix(rows, dim, rng);
  ds.labels = random_labels(rows, nc, rng);
  for (std::size_t c = 0; c < nc && c < rows; ++c) ds.labels[c] = static_cast<ClassId>(c);
  ds.n_classes = nc;
  return ds;
}

// ---------------------------------------------------------------------------

Outcome p_value_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::size_t checked = 0, mismatches = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t nc = 2 + rng() % 4;
    const std::size_t n_t = nc + rng() % (201 - nc);
    const std::size_t n_c = nc + rng() % (101 - nc);
    const std::size_t dim = 1 + rng() % 16;
    const std::size_t k = 1 + rng() % 10;
    DataSplit split;
    split.proper_train = random_dataset(n_t, dim, nc, rng);
    split.calibration = random_dataset(n_c, dim, nc, rng);
    const auto queries = random_matrix(10, dim, rng);
    const MeasureConfig m{.kind = MeasureKind::kConfineKnn, .k = k};

    std::vector<double> calib(n_c);
    for (std::size_t i = 0; i < n_c; ++i) {
      calib[i] = scan_score(split.calibration.embeddings.row(i), split.proper_train.embeddings,
                            split.proper_train.labels, split.calibration.labels[i], k);
    }
    for (auto mode : {ClasswiseMode::kOff, ClasswiseMode::kPaperLiteral,
                      ClasswiseMode::kPerClassDenominator}) {
      const auto pred = CalibratedPredictor::calibrate(split, m, mode, false);
      for (std::size_t q = 0; q < queries.rows(); ++q) {
        const auto p = pred.p_values(queries.row(q));
        for (ClassId c = 0; c < nc; ++c) {
          const double alpha = scan_score(queries.row(q), split.proper_train.embeddings,
                                          split.proper_train.labels, c, k);
          ++checked;
          mismatches += p[c] != count_p(calib, split.calibration.labels, alpha, c, mode);
        }
      }
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0,
          fmt("%zu p-values, %zu mismatches, %.2fs (limit 10s)", checked, mismatches, t)};
}

Outcome neighbor_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1002);
  std::size_t checked = 0, mismatches = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t rows = 1 + rng() % 200, dim = 1 + rng() % 32, k = 1 + rng() % 10;
    const std::size_t nc = 1 + rng() % 5;
    const auto train = random_matrix(rows, dim, rng);
    const auto labels = random_labels(rows, nc, rng);
    const TrainIndex index(train, labels, nc);
    const auto queries = random_matrix(8, dim, rng);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      for (ClassId c = 0; c < nc; ++c) {
        ++checked;
        mismatches += topk_partitioned(queries.row(q), index, c, k) !=
                      sort_all(queries.row(q), train, labels, c, k);
      }
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0,
          fmt("%zu searches, %zu mismatches, %.2fs (limit 10s)", checked, mismatches, t)};
}

// 3,000 proper / 1,000 calibration / 2,000 test from a 6,000-row mixture.
DataSplit validity_split(double separation, std::uint64_t seed) {
  const auto ds = generate_gaussian_mixture(3, 8, 2000, separation, seed);
  DataSplit split;
  auto [rest, test] = split_train_calibration(ds, 1.0 / 3.0, seed + 1);
  auto [proper, calib] = split_train_calibration(rest, 0.25, seed + 2);
  split.proper_train = std::move(proper);
  split.calibration = std::move(calib);
  split.test = std::move(test);
  return split;
}

double band(double eps, std::size_t n) {
  return 1.0 - eps - 3.0 * std::sqrt(eps * (1.0 - eps) / static_cast<double>(n));
}

struct ValidityRun {
  DataSplit split;
  PValueTable marginal;
  PValueTable classwise;
  double seconds = 0.0;
};

const ValidityRun& validity_run() {
  static const ValidityRun run = [] {
    const auto t0 = Clock::now();
    ValidityRun r;
    r.split = validity_split(4.0, 2024);
    const MeasureConfig m{.kind = MeasureKind::kConfineKnn, .k = 5};
    const auto off = CalibratedPredictor::calibrate(r.split, m, ClasswiseMode::kOff, false);
    r.marginal = compute_p_values(off, r.split.test);
    const auto per =
        CalibratedPredictor::calibrate(r.split, m, ClasswiseMode::kPerClassDenominator, false);
    r.classwise = compute_p_values(per, r.split.test);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome marginal_validity() {
  const auto t0 = Clock::now();
  const auto& run = validity_run();
  Outcome o;
  const std::size_t n = run.split.test.rows();
  o.detail = fmt("N_t=%zu N_c=%zu N=%zu;", run.split.proper_train.rows(),
                 run.split.calibration.rows(), n);
  for (double eps : {0.01, 0.05, 0.1, 0.2, 0.3}) {
    const double cov = metrics_at(run.marginal, eps).coverage;
    const bool ok = cov >= band(eps, n);
    o.pass = o.pass && ok;
    o.detail += fmt(" eps=%.2f cov=%.4f>=%.4f%s", eps, cov, band(eps, n), ok ? "" : "!");
  }
  const double t = seconds_since(t0);
  o.pass = o.pass && t < 60.0 && n == 2000;
  o.detail += fmt("; %.2fs (limit 60s)", t);
  return o;
}

Outcome classwise_validity() {
  const auto& run = validity_run();
  const auto counts = run.split.test.class_counts();
  Outcome o;
  for (double eps : {0.05, 0.1, 0.2}) {
    const auto m = metrics_at(run.classwise, eps);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const double cov = *m.classwise_coverage[c];
      const bool ok = cov >= band(eps, counts[c]);
      o.pass = o.pass && ok;
      o.detail += fmt("%seps=%.2f c%zu(n=%zu)=%.4f%s", o.detail.empty() ? "" : " ", eps, c,
                      counts[c], cov, ok ? "" : "!");
    }
  }
  return o;
}

Outcome curve_structure() {
  const auto& run = validity_run();
  std::vector<double> grid{0.0};
  for (double e : default_epsilon_grid()) grid.push_back(e);
  std::size_t violations = 0;
  for (const PValueTable* table : {&run.marginal, &run.classwise}) {
    const auto curve = sweep_from_table(*table, grid);
    violations += curve.coverage_at[0] != 1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (i && curve.coverage_at[i] > curve.coverage_at[i - 1]) ++violations;
      if (curve.correct_efficiency_at[i] > curve.coverage_at[i]) ++violations;
    }
    // Nestedness: a class in the set at a larger epsilon is in every smaller one.
    for (std::size_t r = 0; r < table->rows(); ++r) {
      const auto p = table->row(r);
      for (std::size_t i = 1; i < grid.size(); ++i) {
        for (double v : p) violations += (v > grid[i]) && !(v > grid[i - 1]);
      }
    }
  }
  return {violations == 0, fmt("%zu grid points x 2 modes, %zu violations", grid.size(),
                               violations)};
}

Outcome coverage_efficiency_overlap() {
  const auto split = validity_split(6.0, 606);
  const MeasureConfig m{.kind = MeasureKind::kConfineKnn, .k = 5};
  Outcome o;
  double worst = 0.0, worst_eps = 0.0;
  for (auto mode : {ClasswiseMode::kOff, ClasswiseMode::kPerClassDenominator}) {
    const auto pred = CalibratedPredictor::calibrate(split, m, mode, false);
    const auto table = compute_p_values(pred, split.test);
    for (double e : default_epsilon_grid()) {
      if (e < 0.02) continue;
      const auto mt = metrics_at(table, e);
      const double gap = mt.coverage - mt.correct_efficiency;
      if (gap > worst) worst = gap, worst_eps = e;
    }
  }
  o.pass = worst < 0.01;
  o.detail = fmt("max coverage-correct_efficiency over eps>=0.02 = %.4f (at eps=%.4f), limit 0.01",
                 worst, worst_eps);
  return o;
}

Outcome measure_cross_check() {
  std::mt19937_64 rng(1007);
  const auto train = random_matrix(500, 16, rng);
  const auto labels = random_labels(500, 4, rng);
  const TrainIndex index(train, labels, 4);
  const auto queries = random_matrix(1000, 16, rng);
  const auto hits = batch_class_topk(queries, index, 8);
  const MeasureConfig knn1{.kind = MeasureKind::kConfineKnn, .k = 1};
  std::size_t nn_mismatch = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto via_knn = scores_from_neighbors(hits[q], knn1);
    for (ClassId c = 0; c < 4; ++c) {
      nn_mismatch += one_nn_score(queries.row(q), index, c) != via_knn[c];
    }
  }
  std::gamma_distribution<double> g(0.5, 1.0);
  std::size_t margin_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(2 + rng() % 9);
    double s = 0.0;
    for (auto& x : p) s += (x = g(rng));
    for (auto& x : p) x /= s;
    ClassId arg_min = 0;
    for (ClassId c = 1; c < p.size(); ++c) {
      if (softmax_margin_score(p, c) < softmax_margin_score(p, arg_min)) arg_min = c;
    }
    margin_mismatch += arg_min != std::max_element(p.begin(), p.end()) - p.begin();
  }
  return {nn_mismatch == 0 && margin_mismatch == 0,
          fmt("one_nn vs k=1: %zu/4000 mismatches; margin argmin vs argmax: %zu/1000",
              nn_mismatch, margin_mismatch)};
}

double time_batch_scoring(std::size_t n_train, std::mt19937_64& rng) {
  const std::size_t dim = 512, n_classes = 10;
  auto index = std::make_shared<const TrainIndex>(random_matrix(n_train, dim, rng),
                                                  random_labels(n_train, n_classes, rng),
                                                  n_classes);
  std::vector<double> calib(n_classes);
  std::vector<ClassId> calib_labels(n_classes);
  std::iota(calib_labels.begin(), calib_labels.end(), ClassId{0});
  std::iota(calib.begin(), calib.end(), 0.0);
  const CalibratedPredictor pred(index, {}, {.kind = MeasureKind::kConfineKnn, .k = 20},
                                 ClasswiseMode::kOff, calib, calib_labels);
  const auto queries = random_matrix(2000, dim, rng);
  const auto t0 = Clock::now();
  const auto scores = pred.batch_scores(queries);
  const double t = seconds_since(t0);
  if (scores.size() != 2000 * n_classes) return -1.0;
  return t;
}

Outcome performance_budget() {
  std::mt19937_64 rng(1008);
  const double half = time_batch_scoring(25000, rng);
  const double full = time_batch_scoring(50000, rng);
  const double ratio = full / (2.0 * half);
  return {half > 0 && full > 0 && full < 30.0 && ratio >= 0.5 && ratio <= 2.0,
          fmt("2000 x 50000 x 512, k=20: %.2fs (limit 30s); 25000 rows: %.2fs; "
              "t(2N)/(2 t(N)) = %.2f; threads=%u",
              full, half, ratio, std::thread::hardware_concurrency())};
}

Outcome cli_determinism() {
  confine::testing::TempDir dir;
  const auto run = [](std::vector<std::string> args, std::string* stdout_text = nullptr) {
    args.insert(args.begin(), "confine");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (stdout_text) *stdout_text = out.str();
    return code;
  };
  const auto d = [&](const std::string& s) { return (dir / s).string(); };
  const auto same_tree = [](const std::filesystem::path& a, const std::filesystem::path& b) {
    std::set<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(a)) {
      names.insert(e.path().filename().string());
    }
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(b)) {
      if (!names.contains(e.path().filename().string())) return false;
      ++n;
    }
    if (n != names.size() || names.empty()) return false;
    for (const auto& name : names) {
      if (confine::testing::read_text(a / name) != confine::testing::read_text(b / name)) {
        return false;
      }
    }
    return true;
  };

  std::vector<std::string> failed;
  int bad_exit = 0;
  for (const char* rep : {"1", "2"}) {
    bad_exit += run({"synth", "--classes", "3", "--dim", "8", "--per-class", "300",
                     "--separation", "3", "--seed", "9", "--out", d(std::string("synth") + rep)});
  }
  if (!same_tree(dir / "synth1", dir / "synth2")) failed.push_back("synth");

  const std::string manifest = d("synth1/manifest.json");
  confine::testing::write_text(dir / "run.json", R"({
    "dataset": ")" + manifest + R"(",
    "split": {"calib_fraction": 0.3, "test_fraction": 0.25},
    "measure": {"kind": "confine_knn", "k": 5},
    "measures": [{"kind": "confine_knn", "k": 1}, {"kind": "confine_knn", "k": 10},
                 {"kind": "one_nn"}, {"kind": "softmax_ratio", "gamma": 1.0}],
    "seed": 17
  })");
  for (const char* cmd : {"calibrate", "evaluate", "sweep", "grid"}) {
    for (const char* rep : {"1", "2"}) {
      bad_exit += run({cmd, "--config", d("run.json"), "--out", d(std::string(cmd) + rep)});
    }
    if (!same_tree(dir / (std::string(cmd) + "1"), dir / (std::string(cmd) + "2"))) {
      failed.push_back(cmd);
    }
  }
  std::string p1, p2;
  bad_exit += run({"predict", "--predictor", d("calibrate1/predictor.cnfp"), "--test", manifest,
                   "--explain", "3", "--out", d("pred1.jsonl")});
  bad_exit += run({"predict", "--predictor", d("calibrate1/predictor.cnfp"), "--test", manifest,
                   "--explain", "3", "--out", d("pred2.jsonl")});
  run({"predict", "--predictor", d("calibrate2/predictor.cnfp"), "--test", manifest}, &p1);
  run({"predict", "--predictor", d("calibrate2/predictor.cnfp"), "--test", manifest}, &p2);
  if (confine::testing::read_text(dir / "pred1.jsonl") !=
          confine::testing::read_text(dir / "pred2.jsonl") ||
      p1 != p2 || p1.empty()) {
    failed.push_back("predict");
  }

  std::string detail = "synth, calibrate, evaluate, sweep, grid, predict re-run twice";
  for (const auto& f : failed) detail += "; differs: " + f;
  if (bad_exit) detail += "; non-zero exit";
  return {failed.empty() && bad_exit == 0, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"p-value exactness", p_value_exactness},
      {"neighbor exactness", neighbor_exactness},
      {"marginal validity", marginal_validity},
      {"class-conditional validity", classwise_validity},
      {"curve structure", curve_structure},
      {"coverage/efficiency overlap", coverage_efficiency_overlap},
      {"measure cross-check", measure_cross_check},
      {"performance budget", performance_budget},
      {"CLI determinism", cli_determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
