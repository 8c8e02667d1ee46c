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

#include "confine/matrix.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "confine/error.hpp"

namespace confine {

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim,
                                 std::vector<float> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
  if (values_.size() != rows_ * dim_) {
    throw DataError("matrix payload has " + std::to_string(values_.size()) +
                    " values, expected " + std::to_string(rows_) + "x" +
                    std::to_string(dim_));
  }
}

EmbeddingMatrix EmbeddingMatrix::checked(std::size_t rows, std::size_t dim,
                                         std::vector<float> values,
                                         RowCheck check) {
  EmbeddingMatrix m(rows, dim, std::move(values));
  m.validate(check);
  return m;
}

void EmbeddingMatrix::validate(RowCheck check) const {
  if (rows_ == 0) throw DataError("matrix has no rows");
  if (dim_ == 0) throw DataError("matrix has zero columns");
  for (std::size_t i = 0; i < rows_; ++i) {
    double sq = 0.0;
    for (float v : row(i)) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite value in row " + std::to_string(i));
      }
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
    if (check == RowCheck::kFiniteNonZero && std::sqrt(sq) <= kMinRowNorm) {
      throw DataError("zero-norm row " + std::to_string(i) +
                      " (cosine distance undefined)");
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::select_rows(
    std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * dim_);
  for (std::size_t idx : indices) {
    auto r = row(idx);
    out.insert(out.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(indices.size(), dim_, std::move(out));
}

}  // namespace confine
