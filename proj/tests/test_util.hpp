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

// Shared generators and independent oracles for the unit and acceptance
// suites. Nothing here calls into the derivative code it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedmeta/fedmeta.hpp"

namespace fedmeta::testing {

inline ModelSpec mlp(int d, int h, int c) {
  return {Architecture::MLP1, d, c, h, InitScheme::UniformScaled};
}
inline ModelSpec softmax_lr(int d, int c) {
  return {Architecture::SoftmaxLR, d, c, 0, InitScheme::UniformScaled};
}

inline ParamVector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  ParamVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline Batch random_batch(int n, int d, int c, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, c - 1);
  Batch b;
  b.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) b.features(i, k) = g(rng);
    b.labels.push_back(label(rng));
  }
  return b;
}

inline ClientDataset random_client(const std::string& id, int n, int d, int c, Rng& rng) {
  return {id, random_batch(n, d, c, rng)};
}

/// Per-sample softmax cross-entropy written with scalar loops straight
/// from the documented flat layout.
inline double per_sample_loss_oracle(const ModelSpec& spec, const ParamVector& p, const Batch& b) {
  const int d = spec.input_dim, c = spec.classes, h = spec.hidden;
  double total = 0.0;
  for (std::size_t s = 0; s < b.size(); ++s) {
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) x[static_cast<std::size_t>(k)] = b.features(static_cast<Eigen::Index>(s), k);
    std::vector<double> in = x;
    int in_dim = d;
    std::size_t off = 0;
    if (spec.architecture == Architecture::MLP1) {
      std::vector<double> hid(static_cast<std::size_t>(h));
      for (int j = 0; j < h; ++j) {
        double a = p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(d * h + j))];
        for (int k = 0; k < d; ++k) a += p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(j * d + k))] * x[static_cast<std::size_t>(k)];
        hid[static_cast<std::size_t>(j)] = a > 0 ? a : 0.0;
      }
      off += static_cast<std::size_t>(d * h + h);
      in = hid;
      in_dim = h;
    }
    std::vector<double> z(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
      double a = p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(in_dim * c + j))];
      for (int k = 0; k < in_dim; ++k) a += p[static_cast<Eigen::Index>(off + static_cast<std::size_t>(j * in_dim + k))] * in[static_cast<std::size_t>(k)];
      z[static_cast<std::size_t>(j)] = a;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double se = 0.0;
    for (double v : z) se += std::exp(v - m);
    double logp = z[static_cast<std::size_t>(b.labels[s])] - m - std::log(se);
    total += -std::max(logp, -50.0);
  }
  return total / static_cast<double>(b.size());
}

/// Largest per-component relative error, skipping components where both
/// values are below `floor` in magnitude.
inline double max_relative_error(const ParamVector& a, const ParamVector& b, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Fourth-order central differences evaluated in long double. `f` maps a
/// long double vector to a long double scalar.
template <class F>
ParamVector fd4_gradient_extended(F&& f, const ParamVector& x, long double step = 1e-4L) {
  const Vector<long double> base = x.cast<long double>();
  ParamVector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](long double k) {
      Vector<long double> y = base;
      y[i] += k * step;
      return f(y);
    };
    g[i] = static_cast<double>((at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * step));
  }
  return g;
}

inline double relative_difference(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

/// Two-pass population variance.
inline double two_pass_variance(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size());
}

}  // namespace fedmeta::testing
