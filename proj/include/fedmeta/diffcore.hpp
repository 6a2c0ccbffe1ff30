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

#include <cmath>
#include <concepts>
#include <string>
#include <type_traits>
#include <utility>

#include "fedmeta/error.hpp"
#include "fedmeta/models.hpp"
#include "fedmeta/types.hpp"

namespace fedmeta {

/// Log-probabilities below this floor are clamped in the cross-entropy;
/// clamped samples contribute a constant loss and zero derivatives.
inline constexpr double kLogProbFloor = -50.0;

/// Scalar objective over a flat parameter vector with exact first and
/// second derivatives.
template <class F>
concept DifferentiableObjective = requires(const F& f, const typename F::vector_type& x) {
  typename F::scalar_type;
  { f.value(x) } -> std::convertible_to<typename F::scalar_type>;
  { f.gradient(x) } -> std::convertible_to<typename F::vector_type>;
  { f.hessian_vector_product(x, x) } -> std::convertible_to<typename F::vector_type>;
};

namespace detail {

// Mean cross-entropy pieces shared by loss, gradient and HVP.
template <class T>
struct CrossEntropyState {
  RowMatrix<T> x;
  Activations<T> act;
  RowMatrix<T> probs;
  RowMatrix<T> residual;  // (softmax - onehot) / N, zero rows for clamped samples
  Vector<T> active;
  T loss = T(0);
};

template <class T>
CrossEntropyState<T> cross_entropy(const ModelSpec& spec, const Vector<T>& params,
                                   const Batch& batch, bool need_residual) {
  using std::exp;
  using std::isfinite;
  using std::log;
  check_params(spec, params);
  check_batch(spec, batch);
  CrossEntropyState<T> s;
  s.x = batch.features.template cast<T>();
  s.act = forward(spec, params, s.x);
  const RowMatrix<T>& z = s.act.logits;
  const auto n = static_cast<Eigen::Index>(batch.size());
  s.active = Vector<T>::Ones(n);
  T total = T(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!z.row(i).allFinite())
      throw NumericalError("non-finite logits for sample " + std::to_string(i), i);
    const T m = z.row(i).maxCoeff();
    const T lse = m + log((z.row(i).array() - m).exp().sum());
    T logp = z(i, batch.labels[static_cast<std::size_t>(i)]) - lse;
    if (logp < T(kLogProbFloor)) {
      logp = T(kLogProbFloor);
      s.active[i] = T(0);
    }
    total -= logp;
  }
  s.loss = total / static_cast<T>(n);
  if (!isfinite(s.loss)) throw NumericalError("non-finite loss");
  if (need_residual) {
    s.probs = softmax_rows(z);
    s.residual = s.probs;
    for (Eigen::Index i = 0; i < n; ++i) s.residual(i, batch.labels[static_cast<std::size_t>(i)]) -= T(1);
    s.residual.array().colwise() *= s.active.array() / static_cast<T>(n);
  }
  return s;
}

template <class T>
RowMatrix<T> relu_mask(const RowMatrix<T>& pre) {
  return (pre.array() > T(0)).template cast<T>().matrix();
}

}  // namespace detail

/// Mean cross-entropy of the model over the batch.
template <class T>
T loss(const ModelSpec& spec, const Vector<T>& params, const Batch& batch) {
  return detail::cross_entropy(spec, params, batch, false).loss;
}

template <class T>
std::pair<T, Vector<T>> loss_and_gradient(const ModelSpec& spec, const Vector<T>& params,
                                          const Batch& batch) {
  auto s = detail::cross_entropy(spec, params, batch, true);
  const Layout l = layout(spec);
  Vector<T> g(l.size());
  const RowMatrix<T>& x = s.x;
  const RowMatrix<T>& r = s.residual;
  if (spec.architecture == Architecture::SoftmaxLR) {
    weights(g, l[0]) = r.transpose() * x;
    bias(g, l[0]) = r.colwise().sum().transpose();
  } else {
    weights(g, l[1]) = r.transpose() * s.act.hidden;
    bias(g, l[1]) = r.colwise().sum().transpose();
    const RowMatrix<T> delta_pre =
        (r * weights(params, l[1])).cwiseProduct(detail::relu_mask(s.act.pre_hidden));
    weights(g, l[0]) = delta_pre.transpose() * x;
    bias(g, l[0]) = delta_pre.colwise().sum().transpose();
  }
  if (!g.allFinite()) throw NumericalError("non-finite gradient");
  return {s.loss, std::move(g)};
}

/// Exact gradient of `loss` with respect to every parameter.
template <class T>
Vector<T> gradient(const ModelSpec& spec, const Vector<T>& params, const Batch& batch) {
  return loss_and_gradient(spec, params, batch).second;
}

/// Exact H(params) v via forward-over-reverse differentiation of the
/// closed-form gradient. ReLU is treated as piecewise linear.
template <class T>
Vector<T> hessian_vector_product(const ModelSpec& spec, const Vector<T>& params,
                                 const Batch& batch, const Vector<T>& v) {
  if (v.size() != params.size())
    throw ConfigError("hessian_vector_product: direction has length " + std::to_string(v.size()) +
                      ", parameters have " + std::to_string(params.size()));
  auto s = detail::cross_entropy(spec, params, batch, true);
  const Layout l = layout(spec);
  const RowMatrix<T>& x = s.x;
  const auto n = static_cast<T>(batch.size());

  // Directional derivative of the residual given the logit tangent.
  auto residual_tangent = [&](const RowMatrix<T>& dz) {
    RowMatrix<T> dp = s.probs.cwiseProduct(dz);
    const Vector<T> inner = dp.rowwise().sum();
    dp -= s.probs.cwiseProduct(inner.replicate(1, dz.cols()));
    dp.array().colwise() *= s.active.array() / n;
    return dp;
  };

  Vector<T> hv(l.size());
  if (spec.architecture == Architecture::SoftmaxLR) {
    RowMatrix<T> dz = x * weights(v, l[0]).transpose();
    dz.rowwise() += bias(v, l[0]).transpose();
    const RowMatrix<T> dr = residual_tangent(dz);
    weights(hv, l[0]) = dr.transpose() * x;
    bias(hv, l[0]) = dr.colwise().sum().transpose();
  } else {
    const RowMatrix<T> mask = detail::relu_mask(s.act.pre_hidden);
    RowMatrix<T> dpre = x * weights(v, l[0]).transpose();
    dpre.rowwise() += bias(v, l[0]).transpose();
    const RowMatrix<T> dhidden = dpre.cwiseProduct(mask);
    RowMatrix<T> dz = dhidden * weights(params, l[1]).transpose() +
                      s.act.hidden * weights(v, l[1]).transpose();
    dz.rowwise() += bias(v, l[1]).transpose();
    const RowMatrix<T>& r = s.residual;
    const RowMatrix<T> dr = residual_tangent(dz);
    weights(hv, l[1]) = dr.transpose() * s.act.hidden + r.transpose() * dhidden;
    bias(hv, l[1]) = dr.colwise().sum().transpose();
    const RowMatrix<T> ddelta = (dr * weights(params, l[1]) + r * weights(v, l[1])).cwiseProduct(mask);
    weights(hv, l[0]) = ddelta.transpose() * x;
    bias(hv, l[0]) = ddelta.colwise().sum().transpose();
  }
  if (!hv.allFinite()) throw NumericalError("non-finite Hessian-vector product");
  return hv;
}

// Double-precision entry points; these also accept Eigen expressions.

inline double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  return loss<double>(spec, params, batch);
}
inline std::pair<double, ParamVector> loss_and_gradient(const ModelSpec& spec,
                                                        const ParamVector& params,
                                                        const Batch& batch) {
  return loss_and_gradient<double>(spec, params, batch);
}
inline ParamVector gradient(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  return gradient<double>(spec, params, batch);
}
inline ParamVector hessian_vector_product(const ModelSpec& spec, const ParamVector& params,
                                          const Batch& batch, const ParamVector& v) {
  return hessian_vector_product<double>(spec, params, batch, v);
}

/// Central finite-difference gradient of any scalar function. Test oracle
/// only; training code never calls it.
template <class F, class T>
Vector<T> fd_gradient(F&& f, const std::type_identity_t<Vector<T>>& x, T step) {
  if (!(step > T(0))) throw ConfigError("finite-difference step must be > 0");
  Vector<T> g(x.size());
  Vector<T> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const T up = f(probe);
    probe[i] = x[i] - step;
    const T down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (T(2) * step);
  }
  return g;
}

inline ParamVector fd_gradient_oracle(const ModelSpec& spec, const ParamVector& params,
                                      const Batch& batch, double step) {
  return fd_gradient([&](const ParamVector& p) { return loss(spec, p, batch); }, params, step);
}

/// Mean cross-entropy of a model on a fixed batch.
template <class T = double>
class BasicModelObjective {
 public:
  using scalar_type = T;
  using vector_type = Vector<T>;

  BasicModelObjective(const ModelSpec& spec, const Batch& batch) : spec_(&spec), batch_(&batch) {}

  T value(const vector_type& p) const { return loss<T>(*spec_, p, *batch_); }
  vector_type gradient(const vector_type& p) const { return fedmeta::gradient<T>(*spec_, p, *batch_); }
  vector_type hessian_vector_product(const vector_type& p, const vector_type& v) const {
    return fedmeta::hessian_vector_product<T>(*spec_, p, *batch_, v);
  }

  const ModelSpec& spec() const { return *spec_; }
  const Batch& batch() const { return *batch_; }

 private:
  const ModelSpec* spec_;
  const Batch* batch_;
};

/// 0.5 * ||p - center||^2; unit curvature in every direction.
template <class T = double>
class BasicQuadraticObjective {
 public:
  using scalar_type = T;
  using vector_type = Vector<T>;

  explicit BasicQuadraticObjective(vector_type center) : center_(std::move(center)) {}

  T value(const vector_type& p) const { return T(0.5) * (p - center_).squaredNorm(); }
  vector_type gradient(const vector_type& p) const { return p - center_; }
  vector_type hessian_vector_product(const vector_type&, const vector_type& v) const { return v; }

 private:
  vector_type center_;
};

/// <slope, p> + offset; identically zero Hessian.
template <class T = double>
class BasicLinearObjective {
 public:
  using scalar_type = T;
  using vector_type = Vector<T>;

  explicit BasicLinearObjective(vector_type slope, T offset = T(0))
      : slope_(std::move(slope)), offset_(offset) {}

  T value(const vector_type& p) const { return slope_.dot(p) + offset_; }
  vector_type gradient(const vector_type&) const { return slope_; }
  vector_type hessian_vector_product(const vector_type&, const vector_type& v) const {
    return vector_type::Zero(v.size());
  }

 private:
  vector_type slope_;
  T offset_;
};

using ModelObjective = BasicModelObjective<double>;
using QuadraticObjective = BasicQuadraticObjective<double>;
using LinearObjective = BasicLinearObjective<double>;

static_assert(DifferentiableObjective<ModelObjective>);
static_assert(DifferentiableObjective<QuadraticObjective>);
static_assert(DifferentiableObjective<LinearObjective>);
static_assert(DifferentiableObjective<BasicModelObjective<long double>>);

}  // namespace fedmeta
