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

#include "confine/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "confine/error.hpp"
#include "confine/parallel.hpp"

namespace confine {

namespace {

constexpr std::size_t kLanes = 8;
constexpr std::size_t kQueryTile = 4;
constexpr std::size_t kRowChunk = 256;

// Products of two f32 values are exact in f64, so fused and unfused
// multiply-add give the same bits; only the summation order matters, and it
// is fixed: lane j accumulates elements j, j+8, j+16, ... then a fixed tree.
inline double reduce_lanes(const double* acc) {
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

template <std::size_t Q>
void dot_tile(const double* const* queries, const float* row, std::size_t dim,
              double* out) {
  double acc[Q][kLanes] = {};
  const std::size_t body = dim - dim % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes) {
    double r[kLanes];
    for (std::size_t j = 0; j < kLanes; ++j) r[j] = static_cast<double>(row[i + j]);
    for (std::size_t q = 0; q < Q; ++q) {
      const double* qv = queries[q] + i;
      for (std::size_t j = 0; j < kLanes; ++j) acc[q][j] += qv[j] * r[j];
    }
  }
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t j = 0; body + j < dim; ++j) {
      acc[q][j] += queries[q][body + j] * static_cast<double>(row[body + j]);
    }
    out[q] = reduce_lanes(acc[q]);
  }
}

// Squared norms go under one sqrt so that a row's distance to itself is
// exactly 0: sqrt(x * x) == x in IEEE arithmetic.
inline double to_distance(double dot, double sq_a, double sq_b) {
  const double d = 1.0 - dot / std::sqrt(sq_a * sq_b);
  return std::clamp(d, 0.0, 2.0);
}

double checked_sq_norm(std::span<const float> v) {
  const double n = dot_f64(v, v);
  if (!(std::sqrt(n) > kMinRowNorm)) throw DataError("zero-norm vector: cosine distance undefined");
  return n;
}

// Bounded max-heap on neighbor_less; the root is the current k-th best.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(const Neighbor& n) {
    if (heap_.size() < k_) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
    } else if (neighbor_less(n, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), neighbor_less);
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
    }
  }

  NeighborList sorted() && {
    std::sort_heap(heap_.begin(), heap_.end(), neighbor_less);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  NeighborList heap_;
};

void check_query_dim(std::size_t got, const TrainIndex& index) {
  if (got != index.dim()) {
    throw DataError("query dimension " + std::to_string(got) +
                    " does not match train dimension " + std::to_string(index.dim()));
  }
}

}  // namespace

double dot_f64(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DataError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  }
  double acc[kLanes] = {};
  const std::size_t dim = a.size();
  const std::size_t body = dim - dim % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) {
      acc[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    }
  }
  for (std::size_t j = 0; body + j < dim; ++j) {
    acc[j] += static_cast<double>(a[body + j]) * static_cast<double>(b[body + j]);
  }
  return reduce_lanes(acc);
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  const double dot = dot_f64(a, b);
  return to_distance(dot, checked_sq_norm(a), checked_sq_norm(b));
}

TrainIndex::TrainIndex(EmbeddingMatrix features, std::vector<ClassId> labels,
                       std::size_t n_classes)
    : features_(std::move(features)), labels_(std::move(labels)), n_classes_(n_classes) {
  if (features_.rows() == 0) throw DataError("neighbor search over an empty train set");
  if (labels_.size() != features_.rows()) {
    throw DataError("train labels length does not match train rows");
  }
  class_sizes_.assign(n_classes_, 0);
  for (ClassId l : labels_) {
    if (l >= n_classes_) throw DataError("train label " + std::to_string(l) + " out of range");
    ++class_sizes_[l];
  }
  sq_norms_.resize(features_.rows());
  for (std::size_t i = 0; i < features_.rows(); ++i) {
    sq_norms_[i] = checked_sq_norm(features_.row(i));
  }
}

std::vector<ClassNeighbors> batch_class_topk(const EmbeddingMatrix& queries,
                                             const TrainIndex& index, std::size_t k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (queries.rows() == 0) return {};
  check_query_dim(queries.dim(), index);
  const std::size_t dim = index.dim();
  const std::size_t n_train = index.rows();
  const std::size_t n_classes = index.n_classes();
  const auto& train = index.features();
  const auto& labels = index.labels();
  const auto& sq_norms = index.sq_norms();

  std::vector<ClassNeighbors> result(queries.rows());
  const std::size_t n_tiles = (queries.rows() + kQueryTile - 1) / kQueryTile;

  parallel_for(n_tiles, 1, [&](std::size_t tile_begin, std::size_t tile_end) {
    const std::size_t q_begin = tile_begin * kQueryTile;
    const std::size_t q_end = std::min(queries.rows(), tile_end * kQueryTile);
    const std::size_t nq = q_end - q_begin;

    std::vector<double> qbuf(nq * dim);
    std::vector<double> qsq(nq);
    std::vector<std::vector<TopK>> heaps(nq);
    for (std::size_t q = 0; q < nq; ++q) {
      auto src = queries.row(q_begin + q);
      std::transform(src.begin(), src.end(), qbuf.begin() + q * dim,
                     [](float v) { return static_cast<double>(v); });
      qsq[q] = checked_sq_norm(src);
      heaps[q].assign(n_classes, TopK(k));
    }

    double dots[kQueryTile];
    for (std::size_t r0 = 0; r0 < n_train; r0 += kRowChunk) {
      const std::size_t r1 = std::min(n_train, r0 + kRowChunk);
      for (std::size_t t = 0; t < nq; t += kQueryTile) {
        const std::size_t width = std::min(kQueryTile, nq - t);
        const double* qp[kQueryTile];
        for (std::size_t w = 0; w < width; ++w) qp[w] = qbuf.data() + (t + w) * dim;
        for (std::size_t r = r0; r < r1; ++r) {
          const float* row = train.row(r).data();
          switch (width) {
            case 4: dot_tile<4>(qp, row, dim, dots); break;
            case 3: dot_tile<3>(qp, row, dim, dots); break;
            case 2: dot_tile<2>(qp, row, dim, dots); break;
            default: dot_tile<1>(qp, row, dim, dots); break;
          }
          for (std::size_t w = 0; w < width; ++w) {
            heaps[t + w][labels[r]].offer({r, to_distance(dots[w], qsq[t + w], sq_norms[r])});
          }
        }
      }
    }

    for (std::size_t q = 0; q < nq; ++q) {
      ClassNeighbors& out = result[q_begin + q];
      out.k = k;
      out.by_class.reserve(n_classes);
      for (auto& h : heaps[q]) out.by_class.push_back(std::move(h).sorted());
    }
  });
  return result;
}

ClassNeighbors class_topk(std::span<const float> query, const TrainIndex& index,
                          std::size_t k) {
  check_query_dim(query.size(), index);
  EmbeddingMatrix one(1, query.size(), std::vector<float>(query.begin(), query.end()));
  return std::move(batch_class_topk(one, index, k).front());
}

PartitionedNeighbors partition(const ClassNeighbors& neighbors, ClassId candidate,
                               std::size_t k) {
  if (candidate >= neighbors.by_class.size()) {
    throw DataError("candidate label " + std::to_string(candidate) +
                    " is not below n_classes=" + std::to_string(neighbors.by_class.size()));
  }
  if (k < 1 || k > neighbors.k) {
    throw ConfigError("k=" + std::to_string(k) + " outside the searched range [1, " +
                      std::to_string(neighbors.k) + "]");
  }
  PartitionedNeighbors out;
  const NeighborList& same = neighbors.by_class[candidate];
  out.same.assign(same.begin(), same.begin() + std::min(k, same.size()));

  // The k best "other" rows are among the k best of each other class.
  for (std::size_t c = 0; c < neighbors.by_class.size(); ++c) {
    if (c == candidate) continue;
    const NeighborList& l = neighbors.by_class[c];
    out.diff.insert(out.diff.end(), l.begin(), l.begin() + std::min(k, l.size()));
  }
  const std::size_t keep = std::min(k, out.diff.size());
  std::partial_sort(out.diff.begin(), out.diff.begin() + keep, out.diff.end(), neighbor_less);
  out.diff.resize(keep);
  return out;
}

PartitionedNeighbors topk_partitioned(std::span<const float> query, const TrainIndex& index,
                                      ClassId candidate, std::size_t k) {
  if (candidate >= index.n_classes()) {
    throw DataError("candidate label " + std::to_string(candidate) +
                    " is not below n_classes=" + std::to_string(index.n_classes()));
  }
  return partition(class_topk(query, index, k), candidate, k);
}

PartitionedNeighbors topk_partitioned(std::span<const float> query,
                                      const EmbeddingMatrix& train,
                                      std::span<const ClassId> train_labels,
                                      std::size_t n_classes, ClassId candidate,
                                      std::size_t k) {
  TrainIndex index(train, std::vector<ClassId>(train_labels.begin(), train_labels.end()),
                   n_classes);
  return topk_partitioned(query, index, candidate, k);
}

std::vector<std::vector<PartitionedNeighbors>> batch_topk(
    const EmbeddingMatrix& queries, const TrainIndex& index,
    std::span<const ClassId> labels_to_test, std::size_t k) {
  for (ClassId c : labels_to_test) {
    if (c >= index.n_classes()) {
      throw DataError("candidate label " + std::to_string(c) + " is not below n_classes=" +
                      std::to_string(index.n_classes()));
    }
  }
  const auto all = batch_class_topk(queries, index, k);
  std::vector<std::vector<PartitionedNeighbors>> out(all.size());
  for (std::size_t q = 0; q < all.size(); ++q) {
    out[q].reserve(labels_to_test.size());
    for (ClassId c : labels_to_test) out[q].push_back(partition(all[q], c, k));
  }
  return out;
}

}  // namespace confine
