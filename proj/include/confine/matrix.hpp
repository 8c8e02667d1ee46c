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
#include <span>
#include <vector>

namespace confine {

using ClassId = std::uint32_t;

/// Which invariants a matrix must satisfy beyond its shape.
enum class RowCheck {
  kFiniteOnly,     // logits: any finite value, zero rows allowed
  kFiniteNonZero,  // embeddings: finite and row norm > 1e-12
};

inline constexpr double kMinRowNorm = 1e-12;

/// Dense row-major n x d matrix of f32 values.
///
/// Construction through `EmbeddingMatrix::checked` validates the
/// invariants (finite values, non-zero rows); the unchecked constructor is
/// for callers that produce values known to satisfy them.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values);

  /// Throws DataError naming the first offending row.
  static EmbeddingMatrix checked(std::size_t rows, std::size_t dim,
                                 std::vector<float> values,
                                 RowCheck check = RowCheck::kFiniteNonZero);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_ == 0; }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<float> row(std::size_t i) {
    return {values_.data() + i * dim_, dim_};
  }
  const std::vector<float>& values() const { return values_; }

  /// Rows gathered in the order given by `indices`.
  EmbeddingMatrix select_rows(std::span<const std::size_t> indices) const;

  void validate(RowCheck check) const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

}  // namespace confine
