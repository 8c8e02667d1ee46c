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

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>

#include <json.hpp>

#include "byte_io.hpp"
#include "confine/atomic_file.hpp"
#include "confine/data.hpp"
#include "confine/error.hpp"

namespace confine {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 8 + 8;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

EmbeddingMatrix parse_binary(const std::string& bytes, const fs::path& path) {
  bytes::Reader in(bytes, path.string());
  if (in.take(4) != std::string_view(kBinaryMagic, 4)) {
    throw DataError(path.string() + ": bad magic, expected CNFE");
  }
  const auto version = in.get<std::uint16_t>();
  if (version != kBinaryVersion) {
    throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto rows = in.get<std::uint64_t>();
  const auto cols = in.get<std::uint64_t>();
  const std::uint64_t payload = in.remaining();
  if (cols != 0 && rows > payload / 4 / cols) {
    throw DataError(path.string() + ": header claims more values than the file holds");
  }
  if (payload != rows * cols * 4) {
    throw DataError(path.string() + ": payload is " + std::to_string(payload) +
                    " bytes, expected " + std::to_string(rows * cols * 4));
  }
  std::vector<float> values(rows * cols);
  for (float& v : values) v = in.get_f32();
  return EmbeddingMatrix(rows, cols, std::move(values));
}

EmbeddingMatrix parse_csv(const std::string& text, const fs::path& path) {
  std::vector<float> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (rows == 0) continue;
      throw DataError(path.string() + ": comment line " + std::to_string(line_no) +
                      " after data");
    }
    std::size_t n = 0;
    while (true) {
      const std::size_t comma = line.find(',');
      std::string_view tok = trim(line.substr(0, comma));
      if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
      float v = 0.0f;
      auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || ec != std::errc() || end != tok.data() + tok.size()) {
        throw DataError(path.string() + ": row " + std::to_string(rows) + " (line " +
                        std::to_string(line_no) + "): cannot parse '" +
                        std::string(tok) + "'");
      }
      values.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (rows == 0) {
      cols = n;
    } else if (n != cols) {
      throw DataError(path.string() + ": row " + std::to_string(rows) + " has " +
                      std::to_string(n) + " columns, expected " + std::to_string(cols));
    }
    ++rows;
  }
  return EmbeddingMatrix(rows, cols, std::move(values));
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

MatrixFormat detect_format(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kBinaryMagic, 4) == 0) {
    return MatrixFormat::kBinary;
  }
  return MatrixFormat::kCsv;
}

EmbeddingMatrix load_matrix(const fs::path& path, MatrixFormat format, RowCheck check) {
  const std::string bytes = read_file(path);
  EmbeddingMatrix m = format == MatrixFormat::kBinary ? parse_binary(bytes, path)
                                                      : parse_csv(bytes, path);
  try {
    m.validate(check);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

EmbeddingMatrix load_embeddings(const fs::path& path, MatrixFormat format) {
  return load_matrix(path, format, RowCheck::kFiniteNonZero);
}

void save_matrix_binary(const EmbeddingMatrix& m, const fs::path& path) {
  std::string out;
  out.reserve(kHeaderBytes + m.values().size() * 4);
  out.append(kBinaryMagic, 4);
  bytes::put<std::uint16_t>(out, kBinaryVersion);
  bytes::put<std::uint64_t>(out, m.rows());
  bytes::put<std::uint64_t>(out, m.dim());
  for (float v : m.values()) bytes::put_f32(out, v);
  write_file_atomic(path, out);
}

void save_matrix_csv(const EmbeddingMatrix& m, const fs::path& path) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out.push_back(',');
      out += format_float(r[j]);
    }
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

std::vector<ClassId> load_labels(const fs::path& path) {
  const std::string text = read_file(path);
  if (trim(text).empty()) throw DataError(path.string() + ": empty label file");
  std::vector<ClassId> labels;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  // Content ends at the last non-blank character; a trailing LF is allowed.
  const std::size_t end = text.find_last_not_of(" \t\r\n") + 1;
  while (pos < end) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos || eol > end) eol = end;
    std::string_view tok = trim(std::string_view(text).substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    if (!tok.empty() && tok.front() == '-') {
      throw DataError(where + ": negative label '" + std::string(tok) + "'");
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() ||
        v > std::numeric_limits<ClassId>::max()) {
      throw DataError(where + ": not a non-negative integer '" + std::string(tok) + "'");
    }
    labels.push_back(static_cast<ClassId>(v));
  }
  return labels;
}

void save_labels(std::span<const ClassId> labels, const fs::path& path) {
  std::string out;
  for (ClassId l : labels) {
    out += std::to_string(l);
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

LabeledDataset load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  const auto field = [&](const char* name) -> const json& {
    if (!j.is_object() || !j.contains(name)) {
      throw ConfigError(path.string() + ": missing field '" + name + "'");
    }
    return j.at(name);
  };
  const auto path_field = [&](const char* name) {
    const json& v = field(name);
    if (!v.is_string()) {
      throw ConfigError(path.string() + ": field '" + std::string(name) +
                        "' must be a path string");
    }
    return resolve(base, v.get<std::string>());
  };

  LabeledDataset ds;
  const fs::path emb = path_field("embeddings");
  const fs::path lab = path_field("labels");
  const json& nc = field("n_classes");
  if (!nc.is_number_integer() || nc.get<long long>() < 1) {
    throw ConfigError(path.string() + ": field 'n_classes' must be a positive integer");
  }
  ds.n_classes = nc.get<std::size_t>();
  if (j.contains("layer_tag")) {
    if (!j["layer_tag"].is_string()) {
      throw ConfigError(path.string() + ": field 'layer_tag' must be a string");
    }
    ds.layer_tag = j["layer_tag"].get<std::string>();
  }
  ds.embeddings = load_embeddings(emb, detect_format(emb));
  ds.labels = load_labels(lab);
  if (j.contains("logits") && !j["logits"].is_null()) {
    const fs::path lg = path_field("logits");
    ds.logits = load_matrix(lg, detect_format(lg), RowCheck::kFiniteOnly);
  }
  if (j.contains("predicted_labels") && !j["predicted_labels"].is_null()) {
    ds.predicted_labels = load_labels(path_field("predicted_labels"));
  }
  ds.provenance.resize(ds.rows());
  for (std::size_t i = 0; i < ds.rows(); ++i) ds.provenance[i] = i;
  try {
    ds.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const fs::path& manifest_path,
                  const std::string& stem) {
  const fs::path dir = manifest_path.parent_path();
  json j;
  j["embeddings"] = stem + ".emb.cnfe";
  j["labels"] = stem + ".labels.txt";
  save_matrix_binary(ds.embeddings, dir / (stem + ".emb.cnfe"));
  save_labels(ds.labels, dir / (stem + ".labels.txt"));
  if (ds.logits) {
    j["logits"] = stem + ".logits.cnfe";
    save_matrix_binary(*ds.logits, dir / (stem + ".logits.cnfe"));
  }
  if (ds.predicted_labels) {
    j["predicted_labels"] = stem + ".pred.txt";
    save_labels(*ds.predicted_labels, dir / (stem + ".pred.txt"));
  }
  j["n_classes"] = ds.n_classes;
  j["layer_tag"] = ds.layer_tag;
  write_file_atomic(manifest_path, j.dump(2) + "\n");
}

}  // namespace confine
