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
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "fedmeta/data.hpp"
#include "fedmeta/diffcore.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/metalearn.hpp"
#include "fedmeta/metrics.hpp"
#include "fedmeta/models.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

/// Server-side weighting of client payloads. `Default` resolves to
/// UniformMean for meta methods and SampleWeighted for FedAvg variants.
enum class Aggregation { Default, UniformMean, SampleWeighted };

inline std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Default: return "default";
    case Aggregation::UniformMean: return "uniform_mean";
    case Aggregation::SampleWeighted: return "sample_weighted";
  }
  return "?";
}

struct FederatedConfig {
  Method method = Method::MAML;
  int rounds = 100;
  int clients_per_round = 4;
  double outer_lr = 0.001;  // beta
  double inner_lr = 0.01;   // alpha, or the initial value of every Meta-SGD alpha
  double local_lr = 0.001;  // FedAvg local SGD step
  std::optional<double> finetune_lr;  // FedAvg(Meta) test-time step, defaults to local_lr
  int local_epochs = 1;
  int local_batch = 10;
  double support_fraction = 0.2;
  Aggregation aggregation = Aggregation::Default;
  int eval_every = 10;
  std::uint64_t master_seed = 0;
  bool clamp_alpha = false;    // floor Meta-SGD alpha at 0 when adapting test clients
  bool ordered_split = false;  // support = leading samples instead of a shuffled prefix
  bool evaluate_validation = true;

  bool operator==(const FederatedConfig&) const = default;

  double resolved_finetune_lr() const { return finetune_lr.value_or(local_lr); }
  Aggregation resolved_aggregation() const {
    if (aggregation != Aggregation::Default) return aggregation;
    return is_meta_method(method) ? Aggregation::UniformMean : Aggregation::SampleWeighted;
  }
  LocalSgdOptions training_sgd() const { return {local_epochs, local_batch, local_lr}; }
  LocalSgdOptions finetune_sgd() const { return {local_epochs, local_batch, resolved_finetune_lr()}; }
};

inline void validate(const FederatedConfig& c) {
  if (c.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (c.clients_per_round < 1) throw ConfigError("clients_per_round must be >= 1");
  if (!(c.support_fraction > 0.0 && c.support_fraction < 1.0))
    throw ConfigError("support_fraction must lie in (0, 1)");
  if (!(c.outer_lr >= 0.0) || !std::isfinite(c.outer_lr)) throw ConfigError("outer_lr must be >= 0");
  if (!std::isfinite(c.inner_lr)) throw ConfigError("inner_lr must be finite");
  if (is_meta_method(c.method) && c.method != Method::MetaSGD && !(c.inner_lr >= 0.0))
    throw ConfigError("inner_lr must be >= 0");
  if (!(c.local_lr >= 0.0) || !std::isfinite(c.local_lr)) throw ConfigError("local_lr must be >= 0");
  if (!(c.resolved_finetune_lr() >= 0.0)) throw ConfigError("finetune_lr must be >= 0");
  if (c.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (c.local_batch < 1) throw ConfigError("local_batch must be >= 1");
  if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

/// The parameterized algorithm held by the server: theta, plus a scalar
/// inner rate (MAML, FOMAML, FedAvg(Meta)) or a per-coordinate rate
/// vector (Meta-SGD).
struct AlgorithmState {
  Method method = Method::MAML;
  ParamVector theta;
  std::variant<double, ParamVector> alpha = 0.0;
  double outer_lr = 0.0;

  double scalar_alpha() const {
    if (const auto* a = std::get_if<double>(&alpha)) return *a;
    throw ConfigError("algorithm state holds a vector alpha");
  }
  const ParamVector& vector_alpha() const {
    if (const auto* a = std::get_if<ParamVector>(&alpha)) return *a;
    throw ConfigError("algorithm state holds a scalar alpha");
  }
  /// Parameters shipped to clients: theta, or (theta, alpha) for Meta-SGD.
  ParamVector algorithm_parameters() const {
    if (method != Method::MetaSGD) return theta;
    ParamVector out(2 * theta.size());
    out << theta, vector_alpha();
    return out;
  }
};

inline AlgorithmState initial_state(const FederatedConfig& cfg, const ModelSpec& spec) {
  AlgorithmState s;
  s.method = cfg.method;
  s.theta = init_params(spec, derive_seed(cfg.master_seed, Stream::Initialization));
  s.outer_lr = cfg.outer_lr;
  if (cfg.method == Method::MetaSGD)
    s.alpha = ParamVector::Constant(s.theta.size(), cfg.inner_lr);
  else
    s.alpha = cfg.inner_lr;
  return s;
}

/// One client's upload for a round.
struct ClientResult {
  std::string client_id;
  ParamVector payload;  // meta-gradient (2P for Meta-SGD) or the locally trained model
  std::size_t n_support = 0;
  std::size_t n_query = 0;
  double support_loss = 0.0;
  double query_loss = 0.0;
  std::size_t query_correct = 0;
};

/// m distinct clients drawn uniformly without replacement, returned in
/// pool order.
inline std::vector<std::string> sample_clients(std::span<const std::string> pool, std::size_t m,
                                               Rng& rng) {
  if (m > pool.size())
    throw ConfigError(fmt::format("cannot sample {} clients from a pool of {}", m, pool.size()));
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates: the first m slots become a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::string> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(pool[idx[i]]);
  return out;
}

/// Seed of a client's fixed support/query division; depends only on the
/// master seed and the client, so every method and round sees the same
/// division.
inline std::uint64_t split_seed(std::uint64_t master_seed, const std::string& client_id) {
  return derive_seed(master_seed, Stream::SupportQuerySplit, 0, client_id);
}

/// Meta client step: split, adapt on the support
/// set, evaluate on the query set and return the meta-gradient. Returns
/// nullopt for clients with fewer than two samples.
inline std::optional<ClientResult> run_client_meta(const AlgorithmState& state,
                                                   const ModelSpec& spec,
                                                   const ClientDataset& client, double p,
                                                   std::uint64_t seed, bool ordered = false) {
  if (!is_meta_method(state.method))
    throw ConfigError(fmt::format("run_client_meta called for method {}", to_string(state.method)));
  auto sq = split_support_query(client, p, seed, ordered);
  if (!sq) return std::nullopt;
  const ModelObjective support(spec, sq->support);
  const ModelObjective query(spec, sq->query);

  ClientResult r;
  r.client_id = client.id;
  r.n_support = sq->support.size();
  r.n_query = sq->query.size();
  ParamVector adapted;
  switch (state.method) {
    case Method::MAML:
      r.payload = maml_meta_gradient(state.theta, state.scalar_alpha(), support, query);
      adapted = inner_update(state.theta, state.scalar_alpha(), support);
      break;
    case Method::FOMAML:
      r.payload = fomaml_meta_gradient(state.theta, state.scalar_alpha(), support, query);
      adapted = inner_update(state.theta, state.scalar_alpha(), support);
      break;
    case Method::MetaSGD:
      r.payload = metasgd_meta_gradient(state.theta, state.vector_alpha(), support, query);
      adapted = inner_update(state.theta, state.vector_alpha(), support);
      break;
    default:
      break;
  }
  r.support_loss = support.value(state.theta);
  r.query_loss = query.value(adapted);
  r.query_correct = count_correct(spec, adapted, sq->query);
  return r;
}

/// FedAvg client: local SGD over all of the client's samples.
inline std::optional<ClientResult> run_client_fedavg(const ParamVector& theta,
                                                     const ModelSpec& spec,
                                                     const ClientDataset& client,
                                                     const LocalSgdOptions& opts, Rng& rng) {
  if (client.size() == 0) return std::nullopt;
  ClientResult r;
  r.client_id = client.id;
  r.n_support = client.size();
  r.support_loss = loss(spec, theta, client.data);
  r.payload = local_sgd_train(theta, spec, client.data, opts, rng);
  r.query_loss = loss(spec, r.payload, client.data);
  return r;
}

namespace detail {

// Results ordered by client id so that summation order never depends on
// completion order.
inline std::vector<const ClientResult*> ordered(std::span<const ClientResult> results) {
  std::vector<const ClientResult*> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(),
                   [](const ClientResult* a, const ClientResult* b) { return a->client_id < b->client_id; });
  return out;
}

template <class WeightOf>
ParamVector weighted_sum(std::span<const ClientResult> results, Aggregation agg, WeightOf weight_of) {
  if (results.empty()) throw ProtocolError("aggregation needs at least one client result");
  const Eigen::Index len = results.front().payload.size();
  for (const auto& r : results)
    if (r.payload.size() != len)
      throw ProtocolError(fmt::format("client '{}' sent a payload of length {}, expected {}",
                                      r.client_id, r.payload.size(), len));
  const auto sorted = ordered(results);
  double total = 0.0;
  if (agg == Aggregation::SampleWeighted) {
    for (const auto* r : sorted) total += static_cast<double>(weight_of(*r));
    if (!(total > 0.0)) throw ProtocolError("sample-weighted aggregation with zero total weight");
  }
  ParamVector sum = ParamVector::Zero(len);
  for (const auto* r : sorted) {
    const double w = agg == Aggregation::SampleWeighted
                         ? static_cast<double>(weight_of(*r)) / total
                         : 1.0 / static_cast<double>(results.size());
    sum += w * r->payload;
  }
  return sum;
}

}  // namespace detail

/// theta <- theta - beta * sum_u w_u g_u with w_u = 1/m (UniformMean) or
/// n_query,u / sum n_query (SampleWeighted). Meta-SGD updates (theta,
/// alpha) jointly from the 2P payload.
inline AlgorithmState server_update_meta(const AlgorithmState& state,
                                         std::span<const ClientResult> results, Aggregation agg) {
  if (agg == Aggregation::Default) agg = Aggregation::UniformMean;
  const Eigen::Index p = state.theta.size();
  const Eigen::Index expected = state.method == Method::MetaSGD ? 2 * p : p;
  for (const auto& r : results)
    if (r.payload.size() != expected)
      throw ProtocolError(fmt::format("client '{}' sent a payload of length {}, expected {}",
                                      r.client_id, r.payload.size(), expected));
  const ParamVector mean = detail::weighted_sum(results, agg, [](const ClientResult& r) { return r.n_query; });
  AlgorithmState next = state;
  if (state.method == Method::MetaSGD) {
    next.theta = state.theta - state.outer_lr * mean.head(p);
    next.alpha = ParamVector(state.vector_alpha() - state.outer_lr * mean.tail(p));
  } else {
    next.theta = state.theta - state.outer_lr * mean;
  }
  require_finite(next.theta, "server_update_meta");
  return next;
}

/// Weighted model average; SampleWeighted uses each client's local sample
/// count (n_support).
inline ParamVector server_update_fedavg(std::span<const ClientResult> results, Aggregation agg) {
  if (agg == Aggregation::Default) agg = Aggregation::SampleWeighted;
  ParamVector out = detail::weighted_sum(results, agg, [](const ClientResult& r) { return r.n_support; });
  require_finite(out, "server_update_fedavg");
  return out;
}

struct ClientEvaluation {
  std::string client_id;
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvaluationReport {
  std::vector<ClientEvaluation> clients;
  std::vector<std::string> excluded;  // too small to form a query set
  std::optional<double> accuracy;     // data-point weighted

  std::vector<double> per_client_accuracy() const {
    std::vector<double> out;
    for (const auto& c : clients) out.push_back(c.accuracy());
    return out;
  }
};

/// Model a client would deploy after adapting the server state on its
/// support set.
inline ParamVector adapt_for_client(const AlgorithmState& state, const FederatedConfig& cfg,
                                    const ModelSpec& spec, const Batch& support,
                                    const std::string& client_id) {
  switch (state.method) {
    case Method::FedAvg:
      return state.theta;
    case Method::FedAvgMeta: {
      Rng rng(derive_seed(cfg.master_seed, Stream::Evaluation, 0, client_id));
      return local_sgd_train(state.theta, spec, support, cfg.finetune_sgd(), rng);
    }
    case Method::MAML:
    case Method::FOMAML:
      return inner_update(state.theta, state.scalar_alpha(), spec, support);
    case Method::MetaSGD: {
      ParamVector alpha = state.vector_alpha();
      if (cfg.clamp_alpha) alpha = alpha.cwiseMax(0.0);
      return inner_update(state.theta, alpha, spec, support);
    }
  }
  return state.theta;
}

/// Accuracy on each client's query set after adaptation on its support
/// set. Never modifies `state`.
inline EvaluationReport evaluate(const AlgorithmState& state, const FederatedConfig& cfg,
                                 const ModelSpec& spec,
                                 std::span<const ClientDataset* const> clients) {
  EvaluationReport report;
  std::vector<ClientAccuracy> counts;
  for (const ClientDataset* c : clients) {
    auto sq = split_support_query(*c, cfg.support_fraction, split_seed(cfg.master_seed, c->id),
                                  cfg.ordered_split);
    if (!sq) {
      report.excluded.push_back(c->id);
      continue;
    }
    const ParamVector model = adapt_for_client(state, cfg, spec, sq->support, c->id);
    ClientEvaluation e{c->id, count_correct(spec, model, sq->query), sq->query.size()};
    counts.push_back({e.correct, e.total});
    report.clients.push_back(std::move(e));
  }
  if (!counts.empty()) report.accuracy = accuracy_datapoint_weighted(counts);
  return report;
}

struct SkippedClient {
  std::string client_id;
  std::string reason;
};

struct RoundRecord {
  std::size_t round = 0;
  Method method = Method::MAML;
  std::vector<std::string> sampled;
  std::vector<SkippedClient> skipped;
  double mean_support_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_query_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> test_accuracy;
  std::optional<double> val_accuracy;
  CostTotals increment;
  CostTotals cumulative;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  AlgorithmState final_state;
  EvaluationReport final_test;
  std::optional<EvaluationReport> final_val;
  CostLedger ledger;
};

using RoundSink = std::function<void(const RoundRecord&)>;

namespace detail {

inline std::vector<const ClientDataset*> clients_in(const FederatedDataset& ds, ClientRole role) {
  std::vector<const ClientDataset*> out;
  for (const auto& c : ds.clients) {
    auto it = ds.split.find(c.id);
    if (it != ds.split.end() && it->second == role) out.push_back(&c);
  }
  return out;
}

}  // namespace detail

/// Runs `cfg.rounds` communication rounds on an already split dataset.
/// Every random choice derives from cfg.master_seed, so identical inputs
/// produce identical records.
inline ExperimentResult run_experiment(const FederatedConfig& cfg, const ModelSpec& spec,
                                       const FederatedDataset& dataset, const RoundSink& sink = {}) {
  validate(cfg);
  validate(spec);
  if (dataset.feature_dim != spec.input_dim || dataset.class_count != spec.classes)
    throw ConfigError(fmt::format("dataset has d={}, C={} but model expects d={}, C={}",
                                  dataset.feature_dim, dataset.class_count, spec.input_dim, spec.classes));
  if (dataset.split.empty()) throw ConfigError("dataset has not been split into train/val/test clients");

  const auto train = detail::clients_in(dataset, ClientRole::Train);
  const auto val = detail::clients_in(dataset, ClientRole::Val);
  const auto test = detail::clients_in(dataset, ClientRole::Test);
  std::vector<std::string> pool;
  for (const auto* c : train) pool.push_back(c->id);
  const auto m = static_cast<std::size_t>(cfg.clients_per_round);
  if (m > pool.size())
    throw ConfigError(fmt::format("clients_per_round={} exceeds the {} training clients", m, pool.size()));

  const Aggregation agg = cfg.resolved_aggregation();
  const auto p_count = static_cast<std::uint64_t>(param_count(spec));
  ExperimentResult out;
  AlgorithmState state = initial_state(cfg, spec);

  for (std::size_t t = 1; t <= static_cast<std::size_t>(cfg.rounds); ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.method = cfg.method;
    Rng sampler(derive_seed(cfg.master_seed, Stream::ClientSampling, t));
    rec.sampled = sample_clients(pool, m, sampler);

    std::vector<ClientResult> results;
    for (const auto& id : rec.sampled) {
      const ClientDataset& client = dataset.client(id);
      try {
        std::optional<ClientResult> r;
        if (is_meta_method(cfg.method)) {
          r = run_client_meta(state, spec, client, cfg.support_fraction,
                              split_seed(cfg.master_seed, id), cfg.ordered_split);
        } else {
          Rng rng(derive_seed(cfg.master_seed, Stream::ClientTraining, t, id));
          r = run_client_fedavg(state.theta, spec, client, cfg.training_sgd(), rng);
        }
        if (r)
          results.push_back(std::move(*r));
        else
          rec.skipped.push_back({id, "fewer than 2 samples"});
      } catch (const NumericalError& e) {
        rec.skipped.push_back({id, fmt::format("round {}: {}", t, e.what())});
      }
    }

    for (const auto& r : results) {
      rec.increment.flops += flops_for_client_round(
          spec, cfg.method, r.n_support, r.n_query, static_cast<std::uint64_t>(cfg.local_epochs),
          is_meta_method(cfg.method) ? 0 : r.n_support);
    }
    const RoundBytes bytes = bytes_per_round(cfg.method, p_count, rec.sampled.size());
    rec.increment.downlink_bytes = bytes.downlink;
    rec.increment.uplink_bytes = bytes.uplink;
    out.ledger.record_round(rec.increment);
    rec.cumulative = out.ledger.totals();

    if (!results.empty()) {
      double s = 0.0, q = 0.0;
      for (const auto& r : results) {
        s += r.support_loss;
        q += r.query_loss;
      }
      rec.mean_support_loss = s / static_cast<double>(results.size());
      rec.mean_query_loss = q / static_cast<double>(results.size());
      if (is_meta_method(cfg.method))
        state = server_update_meta(state, results, agg);
      else
        state.theta = server_update_fedavg(results, agg);
    }

    if (t % static_cast<std::size_t>(cfg.eval_every) == 0 || t == static_cast<std::size_t>(cfg.rounds)) {
      EvaluationReport test_report = evaluate(state, cfg, spec, test);
      rec.test_accuracy = test_report.accuracy;
      if (cfg.evaluate_validation && !val.empty()) {
        EvaluationReport val_report = evaluate(state, cfg, spec, val);
        rec.val_accuracy = val_report.accuracy;
        if (t == static_cast<std::size_t>(cfg.rounds)) out.final_val = std::move(val_report);
      }
      if (t == static_cast<std::size_t>(cfg.rounds)) out.final_test = std::move(test_report);
    }
    if (sink) sink(rec);
    out.records.push_back(std::move(rec));
  }
  out.final_state = std::move(state);
  return out;
}

}  // namespace fedmeta
