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

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"
#include "fedmeta/types.hpp"

namespace fedmeta {

enum class Architecture { SoftmaxLR, MLP1 };
enum class InitScheme { Zeros, UniformScaled };
enum class Pass { Forward, Backward, HVP };

/// Classifier f_theta. SoftmaxLR is softmax(Wx + b); MLP1 is
/// softmax(W2 relu(W1 x + b1) + b2).
///
/// Flat parameter layout, layer by layer: the layer's weight matrix
/// (out x in, row-major) followed by its bias (out). SoftmaxLR: [W | b].
/// MLP1: [W1 | b1 | W2 | b2].
struct ModelSpec {
  Architecture architecture = Architecture::SoftmaxLR;
  int input_dim = 1;
  int classes = 2;
  int hidden = 0;
  InitScheme init = InitScheme::UniformScaled;

  bool operator==(const ModelSpec&) const = default;
};

inline std::string_view to_string(Architecture a) {
  return a == Architecture::SoftmaxLR ? "softmax_lr" : "mlp1";
}
inline std::string_view to_string(InitScheme s) {
  return s == InitScheme::Zeros ? "zeros" : "uniform_scaled";
}

inline void validate(const ModelSpec& spec) {
  if (spec.input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (spec.classes < 2) throw ConfigError("model: classes must be >= 2");
  if (spec.architecture == Architecture::MLP1 && spec.hidden < 1)
    throw ConfigError("model: hidden must be >= 1 for mlp1");
}

/// One affine layer's position inside the flat parameter vector.
struct LayerSlot {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;

  Eigen::Index end() const { return bias_offset + out; }
};

struct Layout {
  std::array<LayerSlot, 2> slots{};
  int count = 0;

  const LayerSlot& operator[](int i) const { return slots[static_cast<std::size_t>(i)]; }
  const LayerSlot& back() const { return slots[static_cast<std::size_t>(count - 1)]; }
  Eigen::Index size() const { return back().end(); }
};

inline Layout layout(const ModelSpec& spec) {
  auto slot = [](Eigen::Index offset, Eigen::Index in, Eigen::Index out) {
    return LayerSlot{in, out, offset, offset + in * out};
  };
  Layout l;
  const Eigen::Index d = spec.input_dim, c = spec.classes, h = spec.hidden;
  if (spec.architecture == Architecture::SoftmaxLR) {
    l.slots[0] = slot(0, d, c);
    l.count = 1;
  } else {
    l.slots[0] = slot(0, d, h);
    l.slots[1] = slot(l.slots[0].end(), h, c);
    l.count = 2;
  }
  return l;
}

inline std::size_t param_count(const ModelSpec& spec) {
  return static_cast<std::size_t>(layout(spec).size());
}

template <class T>
Eigen::Map<const RowMatrix<T>> weights(const Vector<T>& p, const LayerSlot& s) {
  return {p.data() + s.weight_offset, s.out, s.in};
}
template <class T>
Eigen::Map<RowMatrix<T>> weights(Vector<T>& p, const LayerSlot& s) {
  return {p.data() + s.weight_offset, s.out, s.in};
}
template <class T>
auto bias(const Vector<T>& p, const LayerSlot& s) {
  return p.segment(s.bias_offset, s.out);
}
template <class T>
auto bias(Vector<T>& p, const LayerSlot& s) {
  return p.segment(s.bias_offset, s.out);
}

template <class T>
void check_params(const ModelSpec& spec, const Vector<T>& params) {
  if (static_cast<std::size_t>(params.size()) != param_count(spec))
    throw ConfigError("parameter vector has length " + std::to_string(params.size()) +
                      ", model expects " + std::to_string(param_count(spec)));
}

inline void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw ConfigError("batch is empty");
  if (batch.features.rows() != static_cast<Eigen::Index>(batch.size()))
    throw ConfigError("batch has mismatched feature rows and labels");
  if (batch.dim() != spec.input_dim)
    throw ConfigError("batch feature dimension " + std::to_string(batch.dim()) +
                      " does not match model input_dim " + std::to_string(spec.input_dim));
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.labels[i] < 0 || batch.labels[i] >= spec.classes)
      throw ConfigError("label " + std::to_string(batch.labels[i]) + " of sample " +
                        std::to_string(i) + " outside [0, " + std::to_string(spec.classes) + ")");
}

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  const Layout l = layout(spec);
  ParamVector p = ParamVector::Zero(l.size());
  if (spec.init == InitScheme::Zeros) return p;
  Rng rng(seed);
  for (int i = 0; i < l.count; ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l[i].in + l[i].out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index k = 0; k < l[i].in * l[i].out; ++k) p[l[i].weight_offset + k] = u(rng);
  }
  return p;
}

/// Intermediate activations of a batched forward pass.
template <class T>
struct Activations {
  RowMatrix<T> pre_hidden;  // N x h, MLP1 only
  RowMatrix<T> hidden;      // N x h, MLP1 only
  RowMatrix<T> logits;      // N x C
};

template <class T>
Activations<T> forward(const ModelSpec& spec, const Vector<T>& params, const RowMatrix<T>& x) {
  const Layout l = layout(spec);
  Activations<T> a;
  if (spec.architecture == Architecture::SoftmaxLR) {
    a.logits = x * weights(params, l[0]).transpose();
    a.logits.rowwise() += bias(params, l[0]).transpose();
    return a;
  }
  a.pre_hidden = x * weights(params, l[0]).transpose();
  a.pre_hidden.rowwise() += bias(params, l[0]).transpose();
  a.hidden = a.pre_hidden.cwiseMax(T(0));
  a.logits = a.hidden * weights(params, l[1]).transpose();
  a.logits.rowwise() += bias(params, l[1]).transpose();
  return a;
}

/// Row-wise softmax with max subtraction.
template <class T>
RowMatrix<T> softmax_rows(const RowMatrix<T>& logits) {
  RowMatrix<T> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

inline Eigen::VectorXd predict(const ModelSpec& spec, const ParamVector& params,
                               const Eigen::VectorXd& features) {
  check_params(spec, params);
  if (features.size() != spec.input_dim)
    throw ConfigError("predict: feature dimension " + std::to_string(features.size()) +
                      " does not match model input_dim " + std::to_string(spec.input_dim));
  const Matrix x = features.transpose();
  return softmax_rows(forward(spec, params, x).logits).row(0).transpose();
}

/// Argmax of predict; ties go to the lowest class index.
inline int classify(const ModelSpec& spec, const ParamVector& params,
                    const Eigen::VectorXd& features) {
  const Eigen::VectorXd p = predict(spec, params, features);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return static_cast<int>(best);
}

/// Number of correctly classified rows of `batch`.
inline std::size_t count_correct(const ModelSpec& spec, const ParamVector& params,
                                 const Batch& batch) {
  check_params(spec, params);
  check_batch(spec, batch);
  const Matrix probs = softmax_rows(forward(spec, params, batch.features).logits);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < probs.cols(); ++k)
      if (probs(i, k) > probs(i, best)) best = k;
    if (best == batch.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return correct;
}

/// FLOPs for one sample: 2 per multiply-accumulate on the forward pass,
/// backward costs 2x forward, a Hessian-vector product 4x forward.
inline std::uint64_t flops_per_sample(const ModelSpec& spec, Pass pass) {
  const auto d = static_cast<std::uint64_t>(spec.input_dim);
  const auto c = static_cast<std::uint64_t>(spec.classes);
  const auto h = static_cast<std::uint64_t>(spec.hidden);
  const std::uint64_t macs = spec.architecture == Architecture::SoftmaxLR ? d * c : d * h + h * c;
  const std::uint64_t fwd = 2 * macs;
  switch (pass) {
    case Pass::Forward: return fwd;
    case Pass::Backward: return 2 * fwd;
    case Pass::HVP: return 4 * fwd;
  }
  return 0;
}

}  // namespace fedmeta
