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
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"
#include "fedmeta/types.hpp"

namespace fedmeta {

/// One client's local data; each client is one meta-learning task.
struct ClientDataset {
  std::string id;
  Batch data;

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const ClientDataset&) const = default;
};

enum class ClientRole { Train, Val, Test };

struct FederatedDataset {
  std::vector<ClientDataset> clients;
  int class_count = 0;
  int feature_dim = 0;
  std::map<std::string, ClientRole> split;  // empty until split_clients

  bool operator==(const FederatedDataset&) const = default;

  const ClientDataset& client(const std::string& id) const {
    for (const auto& c : clients)
      if (c.id == id) return c;
    throw ConfigError("unknown client '" + id + "'");
  }

  std::vector<std::string> ids(ClientRole role) const {
    std::vector<std::string> out;
    for (const auto& c : clients) {
      auto it = split.find(c.id);
      if (it != split.end() && it->second == role) out.push_back(c.id);
    }
    return out;
  }
};

// LEAF JSON layout:
//   {"users": [id...], "num_samples": [n...],
//    "user_data": {id: {"x": [[f...]...], "y": [label...]}}}

/// Parses LEAF JSON text. When `class_count` is given labels must lie in
/// [0, class_count); otherwise it is inferred as max label + 1.
inline FederatedDataset parse_leaf_json(const std::string& text,
                                        std::optional<int> class_count = std::nullopt) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(std::string("malformed LEAF JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("users") || !doc.contains("user_data") ||
      !doc["users"].is_array() || !doc["user_data"].is_object())
    throw IngestionError("LEAF JSON must have \"users\" array and \"user_data\" object");
  const auto& users = doc["users"];
  const nlohmann::json* counts = nullptr;
  if (doc.contains("num_samples")) {
    counts = &doc["num_samples"];
    if (!counts->is_array() || counts->size() != users.size())
      throw IngestionError("\"num_samples\" must be an array parallel to \"users\"");
  }

  FederatedDataset ds;
  int max_label = -1;
  int dim = -1;
  std::set<std::string> seen;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (!users[u].is_string()) throw IngestionError("user id at index " + std::to_string(u) + " is not a string");
    const std::string id = users[u].get<std::string>();
    auto fail = [&](const std::string& why) { return IngestionError("user '" + id + "': " + why); };
    if (!seen.insert(id).second) throw fail("duplicate user id");
    if (!doc["user_data"].contains(id)) throw fail("missing from user_data");
    const auto& entry = doc["user_data"][id];
    if (!entry.is_object() || !entry.contains("x") || !entry.contains("y") ||
        !entry["x"].is_array() || !entry["y"].is_array())
      throw fail("user_data entry needs \"x\" and \"y\" arrays");
    const auto& xs = entry["x"];
    const auto& ys = entry["y"];
    if (xs.size() != ys.size())
      throw fail(fmt::format("{} feature rows but {} labels", xs.size(), ys.size()));
    if (counts) {
      const auto& declared = (*counts)[u];
      if (!declared.is_number_integer() || declared.get<long long>() != static_cast<long long>(xs.size()))
        throw fail(fmt::format("num_samples says {} but x has {} rows", declared.dump(), xs.size()));
    }
    if (xs.empty()) throw fail("no samples");
    ClientDataset c;
    c.id = id;
    c.data.labels.reserve(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i].is_array()) throw fail(fmt::format("x[{}] is not an array", i));
      // Nested image rows are flattened.
      std::vector<double> row;
      auto flatten = [&](auto&& self, const nlohmann::json& node) -> void {
        if (node.is_array()) {
          for (const auto& child : node) self(self, child);
        } else if (node.is_number()) {
          row.push_back(node.get<double>());
        } else {
          throw fail(fmt::format("x[{}] contains a non-numeric entry", i));
        }
      };
      flatten(flatten, xs[i]);
      if (dim < 0) dim = static_cast<int>(row.size());
      if (static_cast<int>(row.size()) != dim || dim == 0)
        throw fail(fmt::format("x[{}] has {} features, expected {}", i, row.size(), dim));
      if (c.data.features.rows() == 0) c.data.features.resize(static_cast<Eigen::Index>(xs.size()), dim);
      for (int k = 0; k < dim; ++k) c.data.features(static_cast<Eigen::Index>(i), k) = row[static_cast<std::size_t>(k)];
      if (!ys[i].is_number_integer()) throw fail(fmt::format("y[{}] is not an integer", i));
      const long long y = ys[i].get<long long>();
      if (y < 0 || (class_count && y >= *class_count))
        throw fail(fmt::format("label {} at y[{}] out of range", y, i));
      c.data.labels.push_back(static_cast<int>(y));
      max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.clients.push_back(std::move(c));
  }
  if (ds.clients.empty()) throw IngestionError("LEAF JSON has no users");
  ds.feature_dim = dim;
  ds.class_count = class_count ? *class_count : std::max(2, max_label + 1);
  return ds;
}

inline FederatedDataset load_leaf_json(const std::filesystem::path& path,
                                       std::optional<int> class_count = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open LEAF file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_leaf_json(text, class_count);
}

inline nlohmann::json to_leaf_json(const FederatedDataset& ds) {
  nlohmann::json doc;
  doc["users"] = nlohmann::json::array();
  doc["num_samples"] = nlohmann::json::array();
  doc["user_data"] = nlohmann::json::object();
  for (const auto& c : ds.clients) {
    doc["users"].push_back(c.id);
    doc["num_samples"].push_back(c.size());
    nlohmann::json xs = nlohmann::json::array();
    for (Eigen::Index i = 0; i < c.data.features.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < c.data.features.cols(); ++k) row.push_back(c.data.features(i, k));
      xs.push_back(std::move(row));
    }
    doc["user_data"][c.id] = {{"x", std::move(xs)}, {"y", c.data.labels}};
  }
  return doc;
}

inline void write_leaf_json(const FederatedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_leaf_json(ds).dump();
}

struct SyntheticParams {
  int classes = 10;
  int classes_per_client = 2;  // k
  int num_clients = 100;
  int min_samples = 40;
  int max_samples = 80;
  int feature_dim = 20;
  double noise = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticParams&) const = default;
};

/// k-of-C non-IID clients: each client holds k distinct classes; class c
/// samples are prototype_c + noise * N(0, I), prototypes unit-norm.
inline FederatedDataset generate_synthetic_noniid(const SyntheticParams& sp) {
  if (sp.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  if (sp.classes_per_client < 1 || sp.classes_per_client > sp.classes)
    throw ConfigError(fmt::format("synthetic: classes_per_client must be in [1, {}]", sp.classes));
  if (sp.num_clients < 1) throw ConfigError("synthetic: num_clients must be >= 1");
  if (sp.min_samples < 1 || sp.max_samples < sp.min_samples)
    throw ConfigError("synthetic: need 1 <= min_samples <= max_samples");
  if (sp.feature_dim < 1) throw ConfigError("synthetic: feature_dim must be >= 1");
  if (!(sp.noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");

  Rng rng(sp.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix prototypes(sp.classes, sp.feature_dim);
  for (int c = 0; c < sp.classes; ++c) {
    for (int k = 0; k < sp.feature_dim; ++k) prototypes(c, k) = gauss(rng);
    prototypes.row(c).normalize();
  }

  FederatedDataset ds;
  ds.class_count = sp.classes;
  ds.feature_dim = sp.feature_dim;
  const int width = static_cast<int>(std::to_string(sp.num_clients - 1).size());
  std::vector<int> classes(static_cast<std::size_t>(sp.classes));
  std::uniform_int_distribution<int> count_dist(sp.min_samples, sp.max_samples);
  std::uniform_int_distribution<int> pick(0, sp.classes_per_client - 1);
  for (int u = 0; u < sp.num_clients; ++u) {
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    const int n = count_dist(rng);
    ClientDataset c;
    c.id = fmt::format("c{:0{}}", u, width);
    c.data.features.resize(n, sp.feature_dim);
    c.data.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int label = classes[static_cast<std::size_t>(pick(rng))];
      c.data.labels[static_cast<std::size_t>(i)] = label;
      for (int k = 0; k < sp.feature_dim; ++k)
        c.data.features(i, k) = prototypes(label, k) + sp.noise * gauss(rng);
    }
    ds.clients.push_back(std::move(c));
  }
  return ds;
}

/// Drops clients with fewer than `min_records` samples.
inline FederatedDataset filter_inactive(const FederatedDataset& ds, int min_records) {
  if (min_records < 1) throw ConfigError("filter_inactive: min_records must be >= 1");
  FederatedDataset out = ds;
  out.clients.clear();
  out.split.clear();
  for (const auto& c : ds.clients) {
    if (c.size() < static_cast<std::size_t>(min_records)) continue;
    out.clients.push_back(c);
    if (auto it = ds.split.find(c.id); it != ds.split.end()) out.split.insert(*it);
  }
  if (out.clients.empty())
    throw ConfigError(fmt::format("filter_inactive: every client has fewer than {} records", min_records));
  return out;
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  bool operator==(const SplitFractions&) const = default;
};

/// Shuffled client-level partition: floor(train*N) training clients,
/// floor(val*N) validation clients, the remainder for testing.
inline FederatedDataset split_clients(const FederatedDataset& ds, const SplitFractions& f,
                                      std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split_clients: fractions must be non-negative and sum to 1");
  const std::size_t n = ds.clients.size();
  if (n < 3) throw ConfigError("split_clients: need at least 3 clients");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  FederatedDataset out = ds;
  out.split.clear();
  for (std::size_t r = 0; r < n; ++r) {
    const ClientRole role = r < n_train ? ClientRole::Train
                            : r < n_train + n_val ? ClientRole::Val
                                                  : ClientRole::Test;
    out.split[ds.clients[order[r]].id] = role;
  }
  return out;
}

struct SupportQuery {
  Batch support;
  Batch query;
};

/// Number of support samples: ceil(p * n), kept in [1, n - 1].
inline std::size_t support_size(std::size_t n, double p) {
  auto s = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  s = std::max<std::size_t>(s, 1);
  if (s >= n) s = n - 1;
  return s;
}

/// Disjoint support/query division of one client. Shuffled with `seed`
/// unless `ordered`, in which case the first samples form the support
/// set (chronological data). Returns nullopt when the client has fewer
/// than two samples.
inline std::optional<SupportQuery> split_support_query(const ClientDataset& client, double p,
                                                       std::uint64_t seed, bool ordered = false) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("support_fraction must lie in (0, 1)");
  const std::size_t n = client.size();
  if (n < 2) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!ordered) {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t s = support_size(n, p);
  const std::vector<std::size_t> head(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
  const std::vector<std::size_t> tail(order.begin() + static_cast<std::ptrdiff_t>(s), order.end());
  return SupportQuery{client.data.select(head), client.data.select(tail)};
}

}  // namespace fedmeta
