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

// Predictor file layout (all integers little-endian):
//
//   "CNFP" u16 version=1
//   u32 len, measure JSON (len bytes)
//   u8  classwise mode (0 off, 1 paper_literal, 2 per_class_denominator)
//   u64 n_classes, u64 rows, u64 dim
//   rows*dim f32 proper features, rows u32 labels, rows u64 source-row indices
//   u64 n_calib, n_calib x (f64 score, u32 label) ascending

#include <string>

#include "byte_io.hpp"
#include "confine/atomic_file.hpp"
#include "confine/conformal.hpp"
#include "confine/error.hpp"

namespace confine {

namespace {
constexpr char kMagic[4] = {'C', 'N', 'F', 'P'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void save_predictor(const CalibratedPredictor& pred, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 4);
  bytes::put<std::uint16_t>(out, kVersion);
  nlohmann::json mj;
  to_json(mj, pred.measure());
  const std::string measure = mj.dump();
  bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(measure.size()));
  out += measure;
  bytes::put<std::uint8_t>(out, static_cast<std::uint8_t>(pred.mode()));

  const auto& proper = pred.proper();
  bytes::put<std::uint64_t>(out, proper.n_classes());
  bytes::put<std::uint64_t>(out, proper.rows());
  bytes::put<std::uint64_t>(out, proper.dim());
  for (float v : proper.features().values()) bytes::put_f32(out, v);
  for (ClassId l : proper.labels()) bytes::put<std::uint32_t>(out, l);
  for (std::size_t p : pred.provenance()) bytes::put<std::uint64_t>(out, p);

  const auto& scores = pred.calib_scores();
  const auto& labels = pred.calib_score_labels();
  bytes::put<std::uint64_t>(out, scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bytes::put_f64(out, scores[i]);
    bytes::put<std::uint32_t>(out, labels[i]);
  }
  write_file_atomic(path, out);
}

CalibratedPredictor load_predictor(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  bytes::Reader in(data, path.string());
  if (in.take(4) != std::string_view(kMagic, 4)) {
    throw DataError(path.string() + ": not a predictor file (bad magic)");
  }
  if (const auto v = in.get<std::uint16_t>(); v != kVersion) {
    throw DataError(path.string() + ": unsupported predictor version " + std::to_string(v));
  }
  const auto mlen = in.get<std::uint32_t>();
  MeasureConfig measure;
  try {
    from_json(nlohmann::json::parse(in.take(mlen)), measure);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt measure block: " + e.what());
  }
  const auto mode_byte = in.get<std::uint8_t>();
  if (mode_byte > 2) throw DataError(path.string() + ": bad classwise mode byte");
  const auto mode = static_cast<ClasswiseMode>(mode_byte);

  const auto n_classes = in.get<std::uint64_t>();
  const auto rows = in.get<std::uint64_t>();
  const auto dim = in.get<std::uint64_t>();
  if (dim == 0 || rows > in.remaining() / (4 * dim + 12)) {
    throw DataError(path.string() + ": proper set header exceeds file size");
  }
  std::vector<float> values(rows * dim);
  for (float& v : values) v = in.get_f32();
  std::vector<ClassId> labels(rows);
  for (ClassId& l : labels) l = in.get<std::uint32_t>();
  std::vector<std::size_t> provenance(rows);
  for (std::size_t& p : provenance) p = in.get<std::uint64_t>();

  const auto n_calib = in.get<std::uint64_t>();
  if (n_calib > in.remaining() / 12) {
    throw DataError(path.string() + ": calibration block exceeds file size");
  }
  std::vector<double> scores(n_calib);
  std::vector<ClassId> calib_labels(n_calib);
  for (std::size_t i = 0; i < n_calib; ++i) {
    scores[i] = in.get_f64();
    calib_labels[i] = in.get<std::uint32_t>();
  }
  if (in.remaining() != 0) throw DataError(path.string() + ": trailing bytes");

  auto index = std::make_shared<const TrainIndex>(
      EmbeddingMatrix::checked(rows, dim, std::move(values)), std::move(labels), n_classes);
  return CalibratedPredictor(std::move(index), std::move(provenance), measure, mode, scores,
                             calib_labels);
}

}  // namespace confine
