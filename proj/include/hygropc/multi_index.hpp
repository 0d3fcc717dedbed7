// SPDX-License-Identifier: Apache-2.0
//
// Total-degree multi-index sets indexing the multivariate Hermite basis.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hygropc::pce {

using MultiIndex = std::vector<int>;

/// Number of multi-indices of dimension M and total degree <= P:
/// R = (M+P)! / (M! P!). Overflow-guarded.
inline std::uint64_t index_set_cardinality(int dimension, int degree) {
  if (dimension < 1 || degree < 0)
    throw std::invalid_argument("index_set_cardinality: need M >= 1, P >= 0");
  std::uint64_t r = 1;
  for (int k = 1; k <= degree; ++k) {
    const std::uint64_t num = static_cast<std::uint64_t>(dimension + k);
    if (r > UINT64_MAX / num)
      throw std::overflow_error("index_set_cardinality: R overflows 64 bits");
    r = r * num / k;  // exact: r accumulates binomial(M+k, k)
  }
  return r;
}

/// All multi-indices with |alpha| <= P in graded lexicographic order (the
/// zero index first, then degree by degree).
struct MultiIndexSet {
  int dimension = 0;
  int degree = 0;
  std::vector<MultiIndex> indices;

  int size() const { return static_cast<int>(indices.size()); }
  const MultiIndex& operator[](int k) const { return indices[k]; }
};

inline MultiIndexSet build_index_set(int dimension, int degree) {
  const std::uint64_t r = index_set_cardinality(dimension, degree);
  if (r > (std::uint64_t{1} << 31))
    throw std::overflow_error("build_index_set: index set too large");

  MultiIndexSet set;
  set.dimension = dimension;
  set.degree = degree;
  set.indices.reserve(r);

  MultiIndex idx(dimension, 0);
  for (int total = 0; total <= degree; ++total) {
    // enumerate compositions of `total` into `dimension` parts, lexicographic
    auto recurse = [&](auto&& self, int pos, int remaining) -> void {
      if (pos == dimension - 1) {
        idx[pos] = remaining;
        set.indices.push_back(idx);
        return;
      }
      for (int v = remaining; v >= 0; --v) {
        idx[pos] = v;
        self(self, pos + 1, remaining - v);
      }
    };
    recurse(recurse, 0, total);
  }
  if (set.indices.size() != r) throw std::logic_error("build_index_set: cardinality mismatch");
  return set;
}

inline int total_degree(const MultiIndex& alpha) {
  int d = 0;
  for (int a : alpha) d += a;
  return d;
}

}  // namespace hygropc::pce
