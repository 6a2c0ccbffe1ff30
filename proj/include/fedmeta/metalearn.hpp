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

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmeta/diffcore.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"
#include "fedmeta/types.hpp"

namespace fedmeta {

enum class Method { FedAvg, FedAvgMeta, MAML, FOMAML, MetaSGD };

inline constexpr Method kAllMethods[] = {Method::FedAvg, Method::FedAvgMeta, Method::MAML,
                                         Method::FOMAML, Method::MetaSGD};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::FedAvg: return "fedavg";
    case Method::FedAvgMeta: return "fedavg_meta";
    case Method::MAML: return "maml";
    case Method::FOMAML: return "fomaml";
    case Method::MetaSGD: return "metasgd";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// True for the methods whose clients upload meta-gradients.
inline bool is_meta_method(Method m) {
  return m == Method::MAML || m == Method::FOMAML || m == Method::MetaSGD;
}

/// One gradient step on the support objective: theta - alpha * grad.
template <DifferentiableObjective Support>
typename Support::vector_type inner_update(const typename Support::vector_type& theta,
                                           typename Support::scalar_type alpha,
                                           const Support& support) {
  const typename Support::vector_type g = support.gradient(theta);
  require_finite(g, "inner_update");
  return theta - alpha * g;
}

/// Meta-SGD inner step: theta - alpha o grad, alpha per coordinate.
template <DifferentiableObjective Support>
typename Support::vector_type inner_update(const typename Support::vector_type& theta,
                                           const typename Support::vector_type& alpha,
                                           const Support& support) {
  if (alpha.size() != theta.size())
    throw ConfigError("inner_update: alpha has length " + std::to_string(alpha.size()) +
                      ", theta has " + std::to_string(theta.size()));
  const typename Support::vector_type g = support.gradient(theta);
  require_finite(g, "inner_update");
  return theta - alpha.cwiseProduct(g);
}

/// Exact MAML meta-gradient d/dtheta L_Q(theta - alpha grad L_S(theta))
/// = (I - alpha H_S(theta)) grad L_Q(theta_u).
template <DifferentiableObjective Support, DifferentiableObjective Query>
typename Support::vector_type maml_meta_gradient(const typename Support::vector_type& theta,
                                                 typename Support::scalar_type alpha,
                                                 const Support& support, const Query& query) {
  using V = typename Support::vector_type;
  const V adapted = inner_update(theta, alpha, support);
  const V gq = query.gradient(adapted);
  V out = gq - alpha * support.hessian_vector_product(theta, gq);
  require_finite(out, "maml_meta_gradient");
  return out;
}

/// First-order MAML: grad L_Q(theta_u), no second-order term.
template <DifferentiableObjective Support, DifferentiableObjective Query>
typename Support::vector_type fomaml_meta_gradient(const typename Support::vector_type& theta,
                                                   typename Support::scalar_type alpha,
                                                   const Support& support, const Query& query) {
  typename Support::vector_type out = query.gradient(inner_update(theta, alpha, support));
  require_finite(out, "fomaml_meta_gradient");
  return out;
}

/// Meta-SGD meta-gradient with respect to (theta, alpha), length 2P.
///
/// With theta_u = theta - alpha o g_S and g_Q = grad L_Q(theta_u):
///   theta part: g_Q - H_S (alpha o g_Q)   (transpose of I - diag(alpha) H_S)
///   alpha part: -g_S o g_Q
template <DifferentiableObjective Support, DifferentiableObjective Query>
typename Support::vector_type metasgd_meta_gradient(const typename Support::vector_type& theta,
                                                    const typename Support::vector_type& alpha,
                                                    const Support& support, const Query& query) {
  using V = typename Support::vector_type;
  if (alpha.size() != theta.size())
    throw ConfigError("metasgd_meta_gradient: alpha has length " + std::to_string(alpha.size()) +
                      ", theta has " + std::to_string(theta.size()));
  const V gs = support.gradient(theta);
  require_finite(gs, "metasgd_meta_gradient");
  const V adapted = theta - alpha.cwiseProduct(gs);
  const V gq = query.gradient(adapted);
  const Eigen::Index p = theta.size();
  V out(2 * p);
  out.head(p) = gq - support.hessian_vector_product(theta, V(alpha.cwiseProduct(gq)));
  out.tail(p) = -gs.cwiseProduct(gq);
  require_finite(out, "metasgd_meta_gradient");
  return out;
}

// Model-and-batch forms.

inline ParamVector inner_update(const ParamVector& theta, double alpha, const ModelSpec& spec,
                                const Batch& support) {
  return inner_update(theta, alpha, ModelObjective(spec, support));
}
inline ParamVector inner_update(const ParamVector& theta, const ParamVector& alpha,
                                const ModelSpec& spec, const Batch& support) {
  return inner_update(theta, alpha, ModelObjective(spec, support));
}
inline ParamVector maml_meta_gradient(const ParamVector& theta, double alpha,
                                      const ModelSpec& spec, const Batch& support,
                                      const Batch& query) {
  return maml_meta_gradient(theta, alpha, ModelObjective(spec, support), ModelObjective(spec, query));
}
inline ParamVector fomaml_meta_gradient(const ParamVector& theta, double alpha,
                                        const ModelSpec& spec, const Batch& support,
                                        const Batch& query) {
  return fomaml_meta_gradient(theta, alpha, ModelObjective(spec, support),
                              ModelObjective(spec, query));
}
inline ParamVector metasgd_meta_gradient(const ParamVector& theta, const ParamVector& alpha,
                                         const ModelSpec& spec, const Batch& support,
                                         const Batch& query) {
  return metasgd_meta_gradient(theta, alpha, ModelObjective(spec, support),
                               ModelObjective(spec, query));
}

struct LocalSgdOptions {
  int epochs = 1;
  int batch_size = 10;
  double lr = 0.01;
};

/// Mini-batch SGD over `n` samples. `grad(theta, indices)` returns the
/// mean gradient over the listed samples. Indices are reshuffled each
/// epoch; the final short batch is kept. A single batch covering all
/// samples is taken in natural order.
template <class GradientFn>
ParamVector local_sgd_train(ParamVector theta, std::size_t n, const LocalSgdOptions& opts,
                            Rng& rng, GradientFn&& grad) {
  if (n == 0) throw ConfigError("local_sgd_train: no training data");
  if (opts.epochs < 1) throw ConfigError("local_sgd_train: epochs must be >= 1");
  if (opts.batch_size < 1) throw ConfigError("local_sgd_train: batch_size must be >= 1");
  if (!(opts.lr >= 0.0)) throw ConfigError("local_sgd_train: lr must be >= 0");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto b = static_cast<std::size_t>(opts.batch_size);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (b < n) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t len = std::min(b, n - start);
      const ParamVector g = grad(theta, std::span<const std::size_t>(order.data() + start, len));
      require_finite(g, "local_sgd_train");
      theta -= opts.lr * g;
    }
  }
  return theta;
}

inline ParamVector local_sgd_train(const ParamVector& theta, const ModelSpec& spec,
                                   const Batch& data, const LocalSgdOptions& opts, Rng& rng) {
  return local_sgd_train(theta, data.size(), opts, rng,
                         [&](const ParamVector& t, std::span<const std::size_t> idx) {
                           if (idx.size() == data.size()) return gradient(spec, t, data);
                           return gradient(spec, t, data.select(idx));
                         });
}

}  // namespace fedmeta
