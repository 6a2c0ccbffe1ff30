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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "fedmeta/error.hpp"
#include "fedmeta/metalearn.hpp"
#include "fedmeta/models.hpp"

namespace fedmeta {

/// Wire size of one parameter (32-bit serialization convention).
inline constexpr std::uint64_t kBytesPerParameter = 4;

struct CostTotals {
  std::uint64_t flops = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;

  CostTotals& operator+=(const CostTotals& o) {
    flops += o.flops;
    uplink_bytes += o.uplink_bytes;
    downlink_bytes += o.downlink_bytes;
    return *this;
  }
  bool operator==(const CostTotals&) const = default;
};

/// Cumulative FLOPs and bytes across all devices, with per-round increments.
class CostLedger {
 public:
  void record_round(const CostTotals& increment) {
    totals_ += increment;
    increments_.push_back(increment);
  }

  const CostTotals& totals() const { return totals_; }
  const std::vector<CostTotals>& increments() const { return increments_; }

 private:
  CostTotals totals_;
  std::vector<CostTotals> increments_;
};

struct RoundBytes {
  std::uint64_t downlink = 0;
  std::uint64_t uplink = 0;
};

/// Meta-SGD ships (theta, alpha) down and a 2P meta-gradient up; every
/// other method moves P parameters each way per client.
inline RoundBytes bytes_per_round(Method method, std::uint64_t param_count, std::uint64_t clients,
                                  std::uint64_t bytes_per_parameter = kBytesPerParameter) {
  const std::uint64_t vectors = method == Method::MetaSGD ? 2 : 1;
  const std::uint64_t b = vectors * bytes_per_parameter * param_count * clients;
  return {b, b};
}

/// Training FLOPs of one client in one round.
///
/// Meta methods: forward+backward on support and query, plus one
/// Hessian-vector product over the support set for MAML and Meta-SGD.
/// FedAvg and FedAvg(Meta): epochs * n_local forward+backward passes.
inline std::uint64_t flops_for_client_round(const ModelSpec& spec, Method method,
                                            std::uint64_t n_support, std::uint64_t n_query,
                                            std::uint64_t epochs, std::uint64_t n_local) {
  const std::uint64_t step = flops_per_sample(spec, Pass::Forward) + flops_per_sample(spec, Pass::Backward);
  switch (method) {
    case Method::FedAvg:
    case Method::FedAvgMeta:
      return epochs * n_local * step;
    case Method::FOMAML:
      return (n_support + n_query) * step;
    case Method::MAML:
    case Method::MetaSGD:
      return (n_support + n_query) * step + n_support * flops_per_sample(spec, Pass::HVP);
  }
  return 0;
}

struct ClientAccuracy {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
};

/// Sum of correct predictions over sum of evaluated samples.
inline double accuracy_datapoint_weighted(std::span<const ClientAccuracy> per_client) {
  if (per_client.empty()) throw ConfigError("accuracy is undefined for an empty client list");
  std::uint64_t correct = 0, total = 0;
  for (const auto& c : per_client) {
    if (c.total == 0) throw ConfigError("client with zero evaluated samples");
    if (c.correct > c.total) throw ConfigError("client has more correct predictions than samples");
    correct += c.correct;
    total += c.total;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline constexpr std::size_t kFairnessBins = 20;
inline constexpr std::size_t kKdePoints = 101;

struct FairnessReport {
  std::vector<double> per_client_accuracy;
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::array<std::uint64_t, kFairnessBins> histogram{};
  double bandwidth = 0.0;
  std::array<double, kKdePoints> kde_grid{};
  std::array<double, kKdePoints> kde_density{};
};

/// Gaussian KDE restricted to [0, 1]. Kernels are reflected at both
/// boundaries so the density keeps unit mass on the interval.
inline double reflected_kde(double x, std::span<const double> samples, double bandwidth) {
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  // Images of a sample a under repeated reflection: 2k + a and 2k - a.
  const int reach = static_cast<int>(std::ceil(8.0 * bandwidth)) + 1;
  double sum = 0.0;
  for (double a : samples) {
    for (int k = -reach; k <= reach; ++k) {
      const double u1 = (x - (2.0 * k + a)) / bandwidth;
      const double u2 = (x - (2.0 * k - a)) / bandwidth;
      sum += std::exp(-0.5 * u1 * u1) + std::exp(-0.5 * u2 * u2);
    }
  }
  return norm * sum;
}

/// Mean, population variance, 20-bin histogram on [0, 1] and a KDE with
/// Silverman bandwidth 1.06 sigma n^(-1/5) (floored at 0.01) sampled at
/// 101 points.
inline FairnessReport fairness_stats(std::span<const double> accuracies) {
  if (accuracies.empty()) throw ConfigError("fairness_stats: no client accuracies");
  FairnessReport r;
  r.per_client_accuracy.assign(accuracies.begin(), accuracies.end());
  // Welford
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double a : accuracies) {
    ++n;
    const double delta = a - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (a - mean);
  }
  r.mean = mean;
  r.variance = m2 / static_cast<double>(n);
  for (double a : accuracies) {
    auto bin = static_cast<std::size_t>(std::floor(std::clamp(a, 0.0, 1.0) * kFairnessBins));
    ++r.histogram[std::min(bin, kFairnessBins - 1)];
  }
  const double sigma = std::sqrt(r.variance);
  r.bandwidth = std::max(0.01, 1.06 * sigma * std::pow(static_cast<double>(n), -0.2));
  for (std::size_t i = 0; i < kKdePoints; ++i) {
    r.kde_grid[i] = static_cast<double>(i) / static_cast<double>(kKdePoints - 1);
    r.kde_density[i] = reflected_kde(r.kde_grid[i], accuracies, r.bandwidth);
  }
  return r;
}

struct TargetHit {
  std::size_t round = 0;
  CostTotals cost;
};

/// First evaluated record whose test accuracy reaches `target`, with the
/// cumulative costs at that point.
template <class Records>
std::optional<TargetHit> rounds_to_target(const Records& records, double target) {
  for (const auto& r : records) {
    if (r.test_accuracy && *r.test_accuracy >= target) return TargetHit{r.round, r.cumulative};
  }
  return std::nullopt;
}

}  // namespace fedmeta
