// Copyright 2026 The fedmeta Authors. All Rights Reserved.
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

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedmeta/error.hpp"

namespace fedmeta {

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat vector of model or algorithm parameters.
using ParamVector = Vector<double>;

using Matrix = RowMatrix<double>;

/// N labeled samples, one feature row per sample.
struct Batch {
  Matrix features;          // N x d
  std::vector<int> labels;  // N entries in [0, C)

  std::size_t size() const noexcept { return labels.size(); }
  Eigen::Index dim() const noexcept { return features.cols(); }

  /// Rows `indices` of this batch, in the given order.
  template <class IndexRange>
  Batch select(const IndexRange& indices) const {
    Batch out;
    out.features.resize(static_cast<Eigen::Index>(std::size(indices)), features.cols());
    out.labels.reserve(std::size(indices));
    Eigen::Index r = 0;
    for (auto i : indices) {
      out.features.row(r++) = features.row(static_cast<Eigen::Index>(i));
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  bool operator==(const Batch& o) const {
    return labels == o.labels && features.rows() == o.features.rows() &&
           features.cols() == o.features.cols() && features == o.features;
  }
};

inline Batch concatenate(const Batch& a, const Batch& b) {
  if (a.size() > 0 && b.size() > 0 && a.dim() != b.dim())
    throw ConfigError("concatenate: feature dimensions differ");
  Batch out;
  out.features.resize(a.features.rows() + b.features.rows(),
                      a.size() > 0 ? a.dim() : b.dim());
  if (a.size() > 0) out.features.topRows(a.features.rows()) = a.features;
  if (b.size() > 0) out.features.bottomRows(b.features.rows()) = b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

template <class T>
void require_finite(const Vector<T>& v, const std::string& what) {
  if (!v.allFinite()) throw NumericalError(what + ": non-finite parameter vector");
}

}  // namespace fedmeta
