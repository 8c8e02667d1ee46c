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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "confine/matrix.hpp"

namespace confine {

/// Embeddings plus labels for one role (proper-train, calibration or test).
///
/// `provenance[i]` is the row index of row i in the dataset it was
/// originally loaded or generated as; it survives splitting and filtering
/// so explanations can point back at source rows.
struct LabeledDataset {
  EmbeddingMatrix embeddings;
  std::vector<ClassId> labels;
  std::optional<EmbeddingMatrix> logits;
  std::optional<std::vector<ClassId>> predicted_labels;
  std::size_t n_classes = 0;
  std::string layer_tag;
  std::vector<std::size_t> provenance;

  std::size_t rows() const { return embeddings.rows(); }

  /// Checks every cross-field invariant; throws DataError.
  void validate() const;

  /// Rows in the order given by `indices`, provenance carried through.
  LabeledDataset subset(std::span<const std::size_t> indices) const;

  /// Per-class row counts, length n_classes.
  std::vector<std::size_t> class_counts() const;
};

struct DataSplit {
  LabeledDataset proper_train;
  LabeledDataset calibration;
  LabeledDataset test;

  void validate() const;
};

// ---------------------------------------------------------------------------
// File formats

enum class MatrixFormat { kCsv, kBinary };

inline constexpr char kBinaryMagic[4] = {'C', 'N', 'F', 'E'};
inline constexpr std::uint16_t kBinaryVersion = 1;

/// Sniffs the magic bytes; anything that does not start with "CNFE" is CSV.
MatrixFormat detect_format(const std::filesystem::path& path);

EmbeddingMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format,
                            RowCheck check);

/// Loads and validates an embedding matrix (finite, non-zero rows).
EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                MatrixFormat format);

void save_matrix_binary(const EmbeddingMatrix& m, const std::filesystem::path& path);
/// Values written with 9 significant digits, which round-trips f32 exactly.
void save_matrix_csv(const EmbeddingMatrix& m, const std::filesystem::path& path);

std::vector<ClassId> load_labels(const std::filesystem::path& path);
void save_labels(std::span<const ClassId> labels, const std::filesystem::path& path);

/// Reads a dataset manifest. Relative paths resolve against the manifest's
/// directory.
LabeledDataset load_manifest(const std::filesystem::path& path);

/// Writes embeddings/labels (and logits/predictions when present) as binary
/// files next to `manifest_path` using `stem` as the file-name prefix.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& manifest_path,
                  const std::string& stem);

// ---------------------------------------------------------------------------
// Transformations

/// Seeded uniform shuffle, then prefix partition: the first
/// round(fraction * rows) shuffled rows form the calibration part.
std::pair<LabeledDataset, LabeledDataset> split_train_calibration(
    const LabeledDataset& ds, double calib_fraction, std::uint64_t seed);

/// Keeps rows whose model prediction matches the label.
LabeledDataset filter_misclassified(const LabeledDataset& proper);

std::vector<double> temperature_softmax(std::span<const float> logits, double temperature);

/// Row-wise temperature softmax of a logits matrix, as f32 features.
EmbeddingMatrix softmax_features(const EmbeddingMatrix& logits, double temperature);

/// Isotropic unit-variance Gaussian blobs, one per class, centred at
/// `separation` times a random unit direction. Also emits logits from the
/// Bayes-optimal scorer (negative half squared distance to each centre) and
/// their argmax as predicted labels.
LabeledDataset generate_gaussian_mixture(std::size_t n_classes, std::size_t dim,
                                         std::size_t n_per_class, double separation,
                                         std::uint64_t seed);

}  // namespace confine
