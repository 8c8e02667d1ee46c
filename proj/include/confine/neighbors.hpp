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
#include <span>
#include <vector>

#include "confine/matrix.hpp"

namespace confine {

struct Neighbor {
  std::size_t index = 0;  // row in the searched matrix
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Strict total order used everywhere neighbors are ranked.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

/// Ascending by (distance, index).
using NeighborList = std::vector<Neighbor>;

struct PartitionedNeighbors {
  NeighborList same;  // rows labelled with the candidate class
  NeighborList diff;  // all other rows

  friend bool operator==(const PartitionedNeighbors&, const PartitionedNeighbors&) = default;
};

/// The k nearest rows of every class for one query. Because the ranking is
/// a total order, the first j entries of a top-k list are exactly the
/// top-j list, so one search at the largest k serves every smaller k.
struct ClassNeighbors {
  std::vector<NeighborList> by_class;
  std::size_t k = 0;
};

/// Dot product of two f32 vectors accumulated in f64 with a fixed 8-lane
/// order. Every distance in the library goes through this arithmetic.
double dot_f64(std::span<const float> a, std::span<const float> b);

/// 1 - a.b / (|a| |b|), clamped to [0, 2]. Exactly symmetric.
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Read-only search structure over a labelled matrix with cached row norms.
class TrainIndex {
 public:
  TrainIndex() = default;
  TrainIndex(EmbeddingMatrix features, std::vector<ClassId> labels, std::size_t n_classes);

  const EmbeddingMatrix& features() const { return features_; }
  const std::vector<ClassId>& labels() const { return labels_; }
  /// Squared Euclidean norms, computed once.
  const std::vector<double>& sq_norms() const { return sq_norms_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t rows() const { return features_.rows(); }
  std::size_t dim() const { return features_.dim(); }
  const std::vector<std::size_t>& class_sizes() const { return class_sizes_; }

 private:
  EmbeddingMatrix features_;
  std::vector<ClassId> labels_;
  std::vector<double> sq_norms_;
  std::vector<std::size_t> class_sizes_;
  std::size_t n_classes_ = 0;
};

/// Per-class top-k for every query row. Queries run independently and in
/// parallel; output is identical for any worker count.
std::vector<ClassNeighbors> batch_class_topk(const EmbeddingMatrix& queries,
                                             const TrainIndex& index, std::size_t k);

ClassNeighbors class_topk(std::span<const float> query, const TrainIndex& index,
                          std::size_t k);

/// Same/diff split for `candidate` truncated to `k` (k <= neighbors.k).
PartitionedNeighbors partition(const ClassNeighbors& neighbors, ClassId candidate,
                               std::size_t k);

PartitionedNeighbors topk_partitioned(std::span<const float> query, const TrainIndex& index,
                                      ClassId candidate, std::size_t k);

PartitionedNeighbors topk_partitioned(std::span<const float> query,
                                      const EmbeddingMatrix& train,
                                      std::span<const ClassId> train_labels,
                                      std::size_t n_classes, ClassId candidate,
                                      std::size_t k);

/// result[q][j] is the split for query q and labels_to_test[j].
std::vector<std::vector<PartitionedNeighbors>> batch_topk(
    const EmbeddingMatrix& queries, const TrainIndex& index,
    std::span<const ClassId> labels_to_test, std::size_t k);

}  // namespace confine
