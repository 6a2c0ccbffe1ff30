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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fedmeta/fedmeta.hpp"
#include "test_util.hpp"

namespace fedmeta {
namespace {

using testing::max_relative_error;
using testing::mlp;
using testing::random_batch;
using testing::random_vector;
using testing::two_pass_variance;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. Meta-gradient exactness

using LVec = Vector<long double>;

std::vector<bool> relu_pattern(const ModelSpec& s, const LVec& p, const Batch& b) {
  const auto a = forward<long double>(s, p, b.features.cast<long double>());
  std::vector<bool> out;
  out.reserve(static_cast<std::size_t>(a.pre_hidden.size()));
  for (Eigen::Index i = 0; i < a.pre_hidden.size(); ++i) out.push_back(a.pre_hidden.data()[i] > 0);
  return out;
}

// Fourth-order central differences of L_Q(theta'(z)) in long double, where
// `adapt` maps the differentiation variable z to (theta, theta'). Returns
// nullopt when a stencil point crosses a ReLU kink, where the composite is
// not differentiable and differences are meaningless.
std::optional<ParamVector> composite_fd(const ModelSpec& s, const Batch& sup, const Batch& qry,
                                        const ParamVector& z0,
                                        const std::function<std::pair<LVec, LVec>(const LVec&)>& adapt) {
  const long double h = 1e-5L;
  const auto [t0, a0] = adapt(z0.cast<long double>());
  const auto sup_mask = relu_pattern(s, t0, sup);
  const auto qry_mask = relu_pattern(s, a0, qry);
  ParamVector g(z0.size());
  for (Eigen::Index i = 0; i < z0.size(); ++i) {
    long double f[4];
    const long double offsets[4] = {-2, -1, 1, 2};
    for (int k = 0; k < 4; ++k) {
      LVec z = z0.cast<long double>();
      z[i] += offsets[k] * h;
      const auto [t, adapted] = adapt(z);
      if (relu_pattern(s, t, sup) != sup_mask || relu_pattern(s, adapted, qry) != qry_mask) return std::nullopt;
      f[k] = loss<long double>(s, adapted, qry);
    }
    g[i] = static_cast<double>((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h));
  }
  return g;
}

Outcome criterion_meta_gradient() {
  const auto start = Clock::now();
  const ModelSpec s = mlp(8, 6, 4);
  const auto p = static_cast<Eigen::Index>(param_count(s));
  Rng rng(20260101);
  std::uniform_int_distribution<int> batch_size(8, 32);
  std::uniform_real_distribution<double> alpha_dist(0.01, 0.5);
  int checked = 0, kinks = 0;
  double worst_maml = 0, worst_theta = 0, worst_alpha = 0;
  while (checked < 100) {
    const ParamVector theta = random_vector(p, rng, 0.5);
    const Batch sup = random_batch(batch_size(rng), 8, 4, rng);
    const Batch qry = random_batch(batch_size(rng), 8, 4, rng);
    const double alpha = alpha_dist(rng);
    ParamVector alpha_vec(p);
    for (Eigen::Index i = 0; i < p; ++i) alpha_vec[i] = alpha_dist(rng);
    const BasicModelObjective<long double> sup_ld(s, sup);

    const auto maml_fd = composite_fd(s, sup, qry, theta, [&](const LVec& t) {
      return std::pair{t, inner_update(t, static_cast<long double>(alpha), sup_ld)};
    });
    ParamVector joint(2 * p);
    joint << theta, alpha_vec;
    const auto msgd_fd = composite_fd(s, sup, qry, joint, [&](const LVec& z) {
      const LVec t = z.head(p), a = z.tail(p);
      return std::pair{t, inner_update(t, a, sup_ld)};
    });
    if (!maml_fd || !msgd_fd) {
      ++kinks;
      continue;
    }
    const ParamVector maml = maml_meta_gradient(theta, alpha, s, sup, qry);
    const ParamVector msgd = metasgd_meta_gradient(theta, alpha_vec, s, sup, qry);
    worst_maml = std::max(worst_maml, max_relative_error(maml, *maml_fd));
    worst_theta = std::max(worst_theta, max_relative_error(msgd.head(p), msgd_fd->head(p)));
    worst_alpha = std::max(worst_alpha, max_relative_error(msgd.tail(p), msgd_fd->tail(p)));
    ++checked;
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = worst_maml < 1e-5 && worst_theta < 1e-5 && worst_alpha < 1e-5 && secs < 30;
  o.detail = fmt::format("{} instances ({} redrawn at ReLU kinks), max rel err maml {:.2e}, metasgd theta {:.2e}, "
                         "alpha {:.2e}, {:.1f}s",
                         checked, kinks, worst_maml, worst_theta, worst_alpha, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 2. First-order identity

Outcome criterion_first_order() {
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const LinearObjective support(random_vector(7, rng));
    const QuadraticObjective query(random_vector(7, rng));
    const ParamVector theta = random_vector(7, rng);
    const double alpha = std::abs(random_vector(1, rng)[0]);
    worst = std::max(worst, (maml_meta_gradient(theta, alpha, support, query) -
                             fomaml_meta_gradient(theta, alpha, support, query))
                                .cwiseAbs()
                                .maxCoeff());
  }
  const QuadraticObjective s1(ParamVector::Constant(1, 1.0)), q2(ParamVector::Constant(1, 2.0));
  const ParamVector zero = ParamVector::Zero(1);
  const double maml = maml_meta_gradient(zero, 0.5, s1, q2)[0];
  const double fomaml = fomaml_meta_gradient(zero, 0.5, s1, q2)[0];
  Outcome o;
  o.pass = worst <= 1e-12 && maml == -0.75 && fomaml == -1.5;
  o.detail = fmt::format("linear support max |maml - fomaml| {:.1e}; quadratic fixture maml {}, fomaml {}", worst,
                         maml, fomaml);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Reduction identities

Outcome criterion_reductions() {
  Rng rng(3);
  const ModelSpec s = mlp(6, 5, 3);
  const auto p = static_cast<Eigen::Index>(param_count(s));
  double worst_zero = 0, worst_const = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector theta = random_vector(p, rng, 0.5);
    const Batch sup = random_batch(12, 6, 3, rng), qry = random_batch(15, 6, 3, rng);
    const ParamVector gq = gradient(s, theta, qry);
    worst_zero = std::max({worst_zero, (maml_meta_gradient(theta, 0.0, s, sup, qry) - gq).cwiseAbs().maxCoeff(),
                           (fomaml_meta_gradient(theta, 0.0, s, sup, qry) - gq).cwiseAbs().maxCoeff()});
    const double alpha = 0.05 + 0.1 * trial / 50.0;
    const ParamVector msgd = metasgd_meta_gradient(theta, ParamVector::Constant(p, alpha), s, sup, qry);
    worst_const = std::max(worst_const,
                           (msgd.head(p) - maml_meta_gradient(theta, alpha, s, sup, qry)).cwiseAbs().maxCoeff());
  }
  Outcome o;
  o.pass = worst_zero <= 1e-12 && worst_const <= 1e-12;
  o.detail = fmt::format("alpha=0 max diff {:.1e}; constant-alpha metasgd vs maml max diff {:.1e}", worst_zero,
                         worst_const);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Directional experiment

constexpr const char* kDirectionalConfig = R"([dataset]
source = synthetic
classes = 10
classes_per_client = 2
num_clients = 100
min_samples = 40
max_samples = 80
feature_dim = 20

[model]
architecture = mlp1
hidden = 16

[method]
rounds = 300
clients_per_round = 5
support_fraction = 0.2
local_epochs = 1
inner_lr = 0.3
outer_lr = 0.3
local_lr = 0.05
eval_every = 300
evaluate_validation = false
)";

Outcome criterion_directional() {
  const auto start = Clock::now();
  std::map<Method, double> mean;
  const std::vector<Method> methods{Method::FedAvg, Method::FedAvgMeta, Method::MAML};
  const int seeds = 5;
  for (int seed = 1; seed <= seeds; ++seed) {
    ExperimentSpecFile cfg = parse_config_text(kDirectionalConfig);
    cfg.method.master_seed = static_cast<std::uint64_t>(seed);
    const FederatedDataset ds = build_dataset(cfg);
    const ModelSpec spec = model_spec_for(cfg, ds);
    for (Method m : methods) {
      FederatedConfig fc = cfg.method;
      fc.method = m;
      const ExperimentResult r = run_experiment(fc, spec, ds);
      mean[m] += *r.final_test.accuracy / seeds;
    }
  }
  const double secs = seconds_since(start);
  const double gain = 100.0 * (mean[Method::MAML] - mean[Method::FedAvg]);
  Outcome o;
  o.pass = gain >= 5.0 && mean[Method::FedAvgMeta] > mean[Method::FedAvg] && secs < 300;
  o.detail = fmt::format("mean test accuracy over {} seeds: fedavg {:.4f}, fedavg_meta {:.4f}, maml {:.4f} "
                         "(maml - fedavg = {:.2f} points), {:.1f}s",
                         seeds, mean[Method::FedAvg], mean[Method::FedAvgMeta], mean[Method::MAML], gain, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Cost accounting

Outcome criterion_costs() {
  // Support fraction 1/4 so the support count is the integer (n + 3) / 4.
  ExperimentSpecFile cfg = parse_config_text(
      "[dataset]\nnum_clients = 30\nmin_samples = 3\nmax_samples = 25\nfeature_dim = 6\nclasses = 4\n"
      "[model]\nhidden = 5\n[method]\nrounds = 25\nclients_per_round = 4\nsupport_fraction = 0.25\n"
      "inner_lr = 0.1\nouter_lr = 0.1\nmaster_seed = 5\n");
  const FederatedDataset ds = build_dataset(cfg);
  const ModelSpec spec = model_spec_for(cfg, ds);
  std::map<Method, ExperimentResult> runs;
  for (Method m : {Method::MAML, Method::FOMAML, Method::MetaSGD}) {
    FederatedConfig fc = cfg.method;
    fc.method = m;
    runs.emplace(m, run_experiment(fc, spec, ds));
  }
  const CostTotals maml = runs.at(Method::MAML).ledger.totals();
  const CostTotals fomaml = runs.at(Method::FOMAML).ledger.totals();
  const CostTotals msgd = runs.at(Method::MetaSGD).ledger.totals();
  const std::uint64_t hvp = 8ull * (6 * 5 + 5 * 4);
  std::uint64_t expected_gap = 0;
  for (const auto& rec : runs.at(Method::MAML).records) {
    std::set<std::string> skipped;
    for (const auto& s : rec.skipped) skipped.insert(s.client_id);
    for (const auto& id : rec.sampled) {
      if (skipped.count(id)) continue;
      const std::uint64_t n = ds.client(id).size();
      expected_gap += (n + 3) / 4 * hvp;
    }
  }
  Outcome o;
  o.pass = msgd.uplink_bytes == 2 * maml.uplink_bytes && msgd.downlink_bytes == 2 * maml.downlink_bytes &&
           fomaml.flops < maml.flops && maml.flops - fomaml.flops == expected_gap;
  o.detail = fmt::format("bytes metasgd {} / maml {}; flops maml {} - fomaml {} = {} (expected {})",
                         msgd.uplink_bytes + msgd.downlink_bytes, maml.uplink_bytes + maml.downlink_bytes,
                         maml.flops, fomaml.flops, maml.flops - fomaml.flops, expected_gap);
  return o;
}

// ---------------------------------------------------------------------------
// 6. Determinism

Outcome criterion_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fedmeta_acceptance_determinism";
  fs::remove_all(dir);
  const ExperimentSpecFile cfg = parse_config_text(
      "[dataset]\nnum_clients = 25\nmin_samples = 5\nmax_samples = 20\nfeature_dim = 5\nclasses = 3\n"
      "[model]\nhidden = 4\n[method]\nrounds = 12\nclients_per_round = 3\neval_every = 3\nmaster_seed = 77\n"
      "[output]\ndirectory = " + dir.string() + "\n");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string first = slurp(run(cfg).csv_path);
  const std::string second = slurp(run(cfg).csv_path);
  const CompareOutput cmp = compare(method_variants(cfg, std::vector<Method>(std::begin(kAllMethods), std::end(kAllMethods))));
  bool shared = true;
  for (const auto& r : cmp.runs) {
    for (std::size_t t = 0; t < r.result.records.size(); ++t)
      shared = shared && r.result.records[t].sampled == cmp.runs.front().result.records[t].sampled;
  }
  fs::remove_all(dir);
  Outcome o;
  o.pass = !first.empty() && first == second && shared;
  o.detail = fmt::format("csv {} bytes, identical: {}; sampled sequences shared across {} methods: {}", first.size(),
                         first == second, cmp.runs.size(), shared);
  return o;
}

// ---------------------------------------------------------------------------
// 7. Aggregation arithmetic

Outcome criterion_aggregation() {
  Rng rng(7);
  std::uniform_int_distribution<int> m_dist(1, 10), p_dist(1, 20), n_dist(1, 50);
  double worst = 0, worst_equal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = m_dist(rng), p = p_dist(rng);
    std::vector<ClientResult> rs;
    for (int u = 0; u < m; ++u) {
      ClientResult r;
      r.client_id = fmt::format("u{:02}", u);
      r.payload = random_vector(p, rng);
      r.n_support = static_cast<std::size_t>(n_dist(rng));
      r.n_query = static_cast<std::size_t>(n_dist(rng));
      rs.push_back(std::move(r));
    }
    std::shuffle(rs.begin(), rs.end(), rng);
    AlgorithmState st;
    st.method = Method::MAML;
    st.theta = random_vector(p, rng);
    st.outer_lr = 0.37;

    // Reference sums, accumulated in long double.
    std::vector<long double> uni(static_cast<std::size_t>(p), 0), by_query(uni), by_support(uni);
    long double nq = 0, ns = 0;
    for (const auto& r : rs) {
      nq += r.n_query;
      ns += r.n_support;
    }
    for (const auto& r : rs) {
      for (int k = 0; k < p; ++k) {
        uni[k] += static_cast<long double>(r.payload[k]) / m;
        by_query[k] += r.n_query * static_cast<long double>(r.payload[k]) / nq;
        by_support[k] += r.n_support * static_cast<long double>(r.payload[k]) / ns;
      }
    }
    const ParamVector a = server_update_meta(st, rs, Aggregation::UniformMean).theta;
    const ParamVector b = server_update_meta(st, rs, Aggregation::SampleWeighted).theta;
    const ParamVector c = server_update_fedavg(rs, Aggregation::SampleWeighted);
    const ParamVector d = server_update_fedavg(rs, Aggregation::UniformMean);
    for (int k = 0; k < p; ++k) {
      const long double t = st.theta[k];
      worst = std::max({worst, static_cast<double>(std::abs(a[k] - (t - 0.37L * uni[k]))),
                        static_cast<double>(std::abs(b[k] - (t - 0.37L * by_query[k]))),
                        static_cast<double>(std::abs(c[k] - by_support[k])),
                        static_cast<double>(std::abs(d[k] - uni[k]))});
    }
    for (auto& r : rs) r.n_query = r.n_support = 6;
    worst_equal = std::max({worst_equal,
                            (server_update_meta(st, rs, Aggregation::SampleWeighted).theta -
                             server_update_meta(st, rs, Aggregation::UniformMean).theta)
                                .cwiseAbs()
                                .maxCoeff(),
                            (server_update_fedavg(rs, Aggregation::SampleWeighted) -
                             server_update_fedavg(rs, Aggregation::UniformMean))
                                .cwiseAbs()
                                .maxCoeff()});
  }
  Outcome o;
  o.pass = worst <= 1e-12 && worst_equal <= 1e-12;
  o.detail = fmt::format("1000 inputs, max diff vs reference {:.1e}; equal-weight weighted vs uniform {:.1e}", worst,
                         worst_equal);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Data contracts

Outcome criterion_data() {
  Rng rng(8);
  std::uniform_int_distribution<int> n_dist(2, 120);
  int violations = 0, checks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = n_dist(rng);
    ClientDataset c{"c", {}};
    c.data.features.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      c.data.features(i, 0) = i;
      c.data.features(i, 1) = -i;
      c.data.labels.push_back(i % 4);
    }
    for (double p : {0.2, 0.5, 0.9}) {
      const auto sq = split_support_query(c, p, static_cast<std::uint64_t>(trial));
      ++checks;
      if (!sq || sq->support.size() == 0 || sq->query.size() == 0) {
        ++violations;
        continue;
      }
      std::vector<int> seen;
      for (const Batch* b : {&sq->support, &sq->query})
        for (Eigen::Index i = 0; i < b->features.rows(); ++i) {
          const int idx = static_cast<int>(b->features(i, 0));
          if (b->labels[static_cast<std::size_t>(i)] != idx % 4) ++violations;
          seen.push_back(idx);
        }
      std::sort(seen.begin(), seen.end());
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      if (seen != all) ++violations;
    }
  }
  SyntheticParams sp;
  sp.num_clients = 40;
  sp.min_samples = 1;
  sp.max_samples = 30;
  sp.seed = 8;
  const FederatedDataset ds = generate_synthetic_noniid(sp);
  const bool round_trip = parse_leaf_json(to_leaf_json(ds).dump(), ds.class_count) == ds;
  const FederatedDataset once = filter_inactive(ds, 10);
  const bool idempotent = filter_inactive(once, 10) == once && once.clients.size() < ds.clients.size();
  Outcome o;
  o.pass = violations == 0 && round_trip && idempotent;
  o.detail = fmt::format("{} support/query splits, {} violations; LEAF round-trip lossless: {}; filter idempotent: {}",
                         checks, violations, round_trip, idempotent);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Fairness statistics

Outcome criterion_fairness() {
  Rng rng(9);
  std::uniform_int_distribution<int> len(1, 200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_var = 0, worst_mass = 0;
  int bad_hist = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(len(rng)));
    // Mix of spread-out lists and lists piled against either boundary.
    const int kind = trial % 3;
    for (double& x : a) {
      const double r = u(rng);
      x = kind == 0 ? r : kind == 1 ? r * r * r * 0.2 : 1.0 - r * 0.1;
    }
    const FairnessReport f = fairness_stats(a);
    worst_var = std::max(worst_var, std::abs(f.variance - two_pass_variance(a)));
    if (std::accumulate(f.histogram.begin(), f.histogram.end(), std::uint64_t{0}) != a.size()) ++bad_hist;
    double area = 0;
    for (std::size_t i = 1; i < kKdePoints; ++i)
      area += 0.5 * (f.kde_density[i] + f.kde_density[i - 1]) * (f.kde_grid[i] - f.kde_grid[i - 1]);
    worst_mass = std::max(worst_mass, std::abs(area - 1.0));
  }
  Outcome o;
  o.pass = worst_var <= 1e-12 && bad_hist == 0 && worst_mass <= 0.02;
  o.detail = fmt::format("1000 lists, max variance diff {:.1e}, histogram mismatches {}, max |KDE mass - 1| {:.4f}",
                         worst_var, bad_hist, worst_mass);
  return o;
}

}  // namespace
}  // namespace fedmeta

int main() {
  using namespace fedmeta;
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"meta-gradient exactness", criterion_meta_gradient},
      {"first-order identity", criterion_first_order},
      {"reduction identities", criterion_reductions},
      {"directional experiment", criterion_directional},
      {"cost-accounting exactness", criterion_costs},
      {"determinism", criterion_determinism},
      {"aggregation arithmetic", criterion_aggregation},
      {"data contracts", criterion_data},
      {"fairness statistics", criterion_fairness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    fmt::print("{} {}. {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures), criteria.size());
  return failures == 0 ? 0 : 1;
}
