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

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fedmeta/data.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/fedsim.hpp"
#include "fedmeta/models.hpp"

namespace fedmeta {

enum class DatasetSource { Synthetic, Leaf };

struct DatasetBlock {
  DatasetSource source = DatasetSource::Synthetic;
  std::string path;            // LEAF JSON file
  std::optional<int> classes;  // synthetic class count, or the label range of a LEAF file
  SyntheticParams synthetic;
  int min_records = 1;
  SplitFractions fractions;
  std::optional<std::uint64_t> seed;  // generation and client partition; defaults to master_seed

  bool operator==(const DatasetBlock&) const = default;
};

/// Architecture choice; input_dim and classes come from the dataset.
struct ModelBlock {
  Architecture architecture = Architecture::MLP1;
  int hidden = 16;
  InitScheme init = InitScheme::UniformScaled;

  bool operator==(const ModelBlock&) const = default;
};

struct OutputBlock {
  std::string directory = "out";
  bool csv = true;
  bool json = true;
  std::vector<double> targets;  // accuracies for cost-to-target extraction

  bool operator==(const OutputBlock&) const = default;
};

/// A fully resolved experiment description.
struct ExperimentSpecFile {
  DatasetBlock dataset;
  ModelBlock model;
  FederatedConfig method;
  OutputBlock output;

  std::uint64_t data_seed() const { return dataset.seed.value_or(method.master_seed); }
  bool operator==(const ExperimentSpecFile&) const = default;
};

namespace detail {

inline std::string key_error(std::string_view section, std::string_view key, std::string_view why) {
  return fmt::format("{}.{}: {}", section, key, why);
}

template <class Int>
Int parse_int(std::string_view section, std::string_view key, const std::string& text) {
  Int v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(key_error(section, key, fmt::format("expected an integer, got '{}'", text)));
  return v;
}

inline double parse_double(std::string_view section, std::string_view key, const std::string& text) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v))
    throw ConfigError(key_error(section, key, fmt::format("expected a finite number, got '{}'", text)));
  return v;
}

inline bool parse_bool(std::string_view section, std::string_view key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key_error(section, key, fmt::format("expected true or false, got '{}'", text)));
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::string_view name;
  std::function<void(ExperimentSpecFile&, const std::string&)> read;
  std::function<std::optional<std::string>(const ExperimentSpecFile&)> write;
};

struct Section {
  std::string_view name;
  std::vector<Field> fields;
};

// Single table driving both parsing and serialization.
inline const std::vector<Section>& schema() {
  using S = ExperimentSpecFile;
  using Opt = std::optional<std::string>;
  static const std::vector<Section> table = [] {
    std::vector<Section> t;
    auto int_field = [](std::string_view sec, std::string_view key, auto member) {
      return Field{key,
                   [=](S& s, const std::string& v) { member(s) = parse_int<std::remove_reference_t<decltype(member(s))>>(sec, key, v); },
                   [=](const S& s) -> Opt { return fmt::format("{}", member(const_cast<S&>(s))); }};
    };
    auto dbl_field = [](std::string_view sec, std::string_view key, auto member) {
      return Field{key, [=](S& s, const std::string& v) { member(s) = parse_double(sec, key, v); },
                   [=](const S& s) -> Opt { return fmt_double(member(const_cast<S&>(s))); }};
    };
    auto bool_field = [](std::string_view sec, std::string_view key, auto member) {
      return Field{key, [=](S& s, const std::string& v) { member(s) = parse_bool(sec, key, v); },
                   [=](const S& s) -> Opt { return member(const_cast<S&>(s)) ? "true" : "false"; }};
    };

    constexpr std::string_view ds = "dataset";
    t.push_back({ds,
                 {
                     {"source",
                      [](S& s, const std::string& v) {
                        if (v == "synthetic") s.dataset.source = DatasetSource::Synthetic;
                        else if (v == "leaf") s.dataset.source = DatasetSource::Leaf;
                        else throw ConfigError(key_error("dataset", "source", fmt::format("expected synthetic or leaf, got '{}'", v)));
                      },
                      [](const S& s) -> Opt { return s.dataset.source == DatasetSource::Leaf ? "leaf" : "synthetic"; }},
                     {"path", [](S& s, const std::string& v) { s.dataset.path = v; },
                      [](const S& s) -> Opt { return s.dataset.path.empty() ? Opt{} : Opt{s.dataset.path}; }},
                     {"classes",
                      [](S& s, const std::string& v) {
                        s.dataset.classes = parse_int<int>("dataset", "classes", v);
                      },
                      [](const S& s) -> Opt {
                        return s.dataset.classes ? Opt{fmt::format("{}", *s.dataset.classes)} : Opt{};
                      }},
                     int_field(ds, "classes_per_client", [](S& s) -> int& { return s.dataset.synthetic.classes_per_client; }),
                     int_field(ds, "num_clients", [](S& s) -> int& { return s.dataset.synthetic.num_clients; }),
                     int_field(ds, "min_samples", [](S& s) -> int& { return s.dataset.synthetic.min_samples; }),
                     int_field(ds, "max_samples", [](S& s) -> int& { return s.dataset.synthetic.max_samples; }),
                     int_field(ds, "feature_dim", [](S& s) -> int& { return s.dataset.synthetic.feature_dim; }),
                     dbl_field(ds, "noise", [](S& s) -> double& { return s.dataset.synthetic.noise; }),
                     {"seed", [](S& s, const std::string& v) { s.dataset.seed = parse_int<std::uint64_t>("dataset", "seed", v); },
                      [](const S& s) -> Opt { return s.dataset.seed ? Opt{fmt::format("{}", *s.dataset.seed)} : Opt{}; }},
                     int_field(ds, "min_records", [](S& s) -> int& { return s.dataset.min_records; }),
                     dbl_field(ds, "train_fraction", [](S& s) -> double& { return s.dataset.fractions.train; }),
                     dbl_field(ds, "val_fraction", [](S& s) -> double& { return s.dataset.fractions.val; }),
                     dbl_field(ds, "test_fraction", [](S& s) -> double& { return s.dataset.fractions.test; }),
                 }});

    constexpr std::string_view md = "model";
    t.push_back({md,
                 {
                     {"architecture",
                      [](S& s, const std::string& v) {
                        if (v == "softmax_lr") s.model.architecture = Architecture::SoftmaxLR;
                        else if (v == "mlp1") s.model.architecture = Architecture::MLP1;
                        else throw ConfigError(key_error("model", "architecture", fmt::format("expected softmax_lr or mlp1, got '{}'", v)));
                      },
                      [](const S& s) -> Opt { return std::string(to_string(s.model.architecture)); }},
                     int_field(md, "hidden", [](S& s) -> int& { return s.model.hidden; }),
                     {"init",
                      [](S& s, const std::string& v) {
                        if (v == "zeros") s.model.init = InitScheme::Zeros;
                        else if (v == "uniform_scaled") s.model.init = InitScheme::UniformScaled;
                        else throw ConfigError(key_error("model", "init", fmt::format("expected zeros or uniform_scaled, got '{}'", v)));
                      },
                      [](const S& s) -> Opt { return std::string(to_string(s.model.init)); }},
                 }});

    constexpr std::string_view me = "method";
    t.push_back({me,
                 {
                     {"method",
                      [](S& s, const std::string& v) {
                        auto m = parse_method(v);
                        if (!m) throw ConfigError(key_error("method", "method", fmt::format("unknown method '{}' (fedavg, fedavg_meta, maml, fomaml, metasgd)", v)));
                        s.method.method = *m;
                      },
                      [](const S& s) -> Opt { return std::string(to_string(s.method.method)); }},
                     int_field(me, "rounds", [](S& s) -> int& { return s.method.rounds; }),
                     int_field(me, "clients_per_round", [](S& s) -> int& { return s.method.clients_per_round; }),
                     dbl_field(me, "outer_lr", [](S& s) -> double& { return s.method.outer_lr; }),
                     dbl_field(me, "inner_lr", [](S& s) -> double& { return s.method.inner_lr; }),
                     dbl_field(me, "local_lr", [](S& s) -> double& { return s.method.local_lr; }),
                     {"finetune_lr", [](S& s, const std::string& v) { s.method.finetune_lr = parse_double("method", "finetune_lr", v); },
                      [](const S& s) -> Opt { return s.method.finetune_lr ? Opt{fmt_double(*s.method.finetune_lr)} : Opt{}; }},
                     int_field(me, "local_epochs", [](S& s) -> int& { return s.method.local_epochs; }),
                     int_field(me, "local_batch", [](S& s) -> int& { return s.method.local_batch; }),
                     dbl_field(me, "support_fraction", [](S& s) -> double& { return s.method.support_fraction; }),
                     {"aggregation",
                      [](S& s, const std::string& v) {
                        if (v == "default") s.method.aggregation = Aggregation::Default;
                        else if (v == "uniform_mean") s.method.aggregation = Aggregation::UniformMean;
                        else if (v == "sample_weighted") s.method.aggregation = Aggregation::SampleWeighted;
                        else throw ConfigError(key_error("method", "aggregation", fmt::format("expected default, uniform_mean or sample_weighted, got '{}'", v)));
                      },
                      [](const S& s) -> Opt { return std::string(to_string(s.method.aggregation)); }},
                     int_field(me, "eval_every", [](S& s) -> int& { return s.method.eval_every; }),
                     int_field(me, "master_seed", [](S& s) -> std::uint64_t& { return s.method.master_seed; }),
                     bool_field(me, "clamp_alpha", [](S& s) -> bool& { return s.method.clamp_alpha; }),
                     {"split_mode",
                      [](S& s, const std::string& v) {
                        if (v == "shuffled") s.method.ordered_split = false;
                        else if (v == "ordered") s.method.ordered_split = true;
                        else throw ConfigError(key_error("method", "split_mode", fmt::format("expected shuffled or ordered, got '{}'", v)));
                      },
                      [](const S& s) -> Opt { return s.method.ordered_split ? "ordered" : "shuffled"; }},
                     bool_field(me, "evaluate_validation", [](S& s) -> bool& { return s.method.evaluate_validation; }),
                 }});

    constexpr std::string_view out = "output";
    t.push_back({out,
                 {
                     {"directory", [](S& s, const std::string& v) { s.output.directory = v; },
                      [](const S& s) -> Opt { return s.output.directory; }},
                     {"formats",
                      [](S& s, const std::string& v) {
                        s.output.csv = s.output.json = false;
                        for (const auto& f : split_list(v)) {
                          if (f == "csv") s.output.csv = true;
                          else if (f == "json") s.output.json = true;
                          else throw ConfigError(key_error("output", "formats", fmt::format("unknown format '{}'", f)));
                        }
                      },
                      [](const S& s) -> Opt {
                        std::vector<std::string> f;
                        if (s.output.csv) f.push_back("csv");
                        if (s.output.json) f.push_back("json");
                        return fmt::format("{}", fmt::join(f, ","));
                      }},
                     {"targets",
                      [](S& s, const std::string& v) {
                        s.output.targets.clear();
                        for (const auto& x : split_list(v)) s.output.targets.push_back(parse_double("output", "targets", x));
                      },
                      [](const S& s) -> Opt {
                        if (s.output.targets.empty()) return Opt{};
                        std::vector<std::string> parts;
                        for (double x : s.output.targets) parts.push_back(fmt_double(x));
                        return fmt::format("{}", fmt::join(parts, ","));
                      }},
                 }});
    return t;
  }();
  return table;
}

}  // namespace detail

/// Checks every field against the preconditions of the module that will
/// consume it. Errors name the offending key.
inline void validate(const ExperimentSpecFile& s) {
  using detail::key_error;
  const auto& d = s.dataset;
  if (d.source == DatasetSource::Leaf && d.path.empty())
    throw ConfigError(key_error("dataset", "path", "required when source = leaf"));
  if (d.classes && *d.classes < 2) throw ConfigError(key_error("dataset", "classes", "must be >= 2"));
  if (d.source == DatasetSource::Synthetic) {
    const auto& sp = d.synthetic;
    if (sp.classes < 2) throw ConfigError(key_error("dataset", "classes", "must be >= 2"));
    if (sp.classes_per_client < 1 || sp.classes_per_client > sp.classes)
      throw ConfigError(key_error("dataset", "classes_per_client", "must lie in [1, classes]"));
    if (sp.num_clients < 3) throw ConfigError(key_error("dataset", "num_clients", "must be >= 3"));
    if (sp.min_samples < 1) throw ConfigError(key_error("dataset", "min_samples", "must be >= 1"));
    if (sp.max_samples < sp.min_samples)
      throw ConfigError(key_error("dataset", "max_samples", "must be >= min_samples"));
    if (sp.feature_dim < 1) throw ConfigError(key_error("dataset", "feature_dim", "must be >= 1"));
    if (sp.noise < 0) throw ConfigError(key_error("dataset", "noise", "must be >= 0"));
  }
  if (d.min_records < 1) throw ConfigError(key_error("dataset", "min_records", "must be >= 1"));
  const auto& f = d.fractions;
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError(key_error("dataset", "train_fraction", "train/val/test fractions must be >= 0 and sum to 1"));

  if (s.model.architecture == Architecture::MLP1 && s.model.hidden < 1)
    throw ConfigError(key_error("model", "hidden", "must be >= 1 for mlp1"));

  const auto& m = s.method;
  if (m.rounds < 1) throw ConfigError(key_error("method", "rounds", "must be >= 1"));
  if (m.clients_per_round < 1) throw ConfigError(key_error("method", "clients_per_round", "must be >= 1"));
  if (!(m.support_fraction > 0.0 && m.support_fraction < 1.0))
    throw ConfigError(key_error("method", "support_fraction", fmt::format("must lie in (0, 1), got {}", m.support_fraction)));
  if (m.outer_lr < 0) throw ConfigError(key_error("method", "outer_lr", "must be >= 0"));
  if (m.inner_lr < 0 && m.method != Method::MetaSGD) throw ConfigError(key_error("method", "inner_lr", "must be >= 0"));
  if (m.local_lr < 0) throw ConfigError(key_error("method", "local_lr", "must be >= 0"));
  if (m.finetune_lr && *m.finetune_lr < 0) throw ConfigError(key_error("method", "finetune_lr", "must be >= 0"));
  if (m.local_epochs < 1) throw ConfigError(key_error("method", "local_epochs", "must be >= 1"));
  if (m.local_batch < 1) throw ConfigError(key_error("method", "local_batch", "must be >= 1"));
  if (m.eval_every < 1) throw ConfigError(key_error("method", "eval_every", "must be >= 1"));
  validate(m);

  if (s.output.directory.empty()) throw ConfigError(key_error("output", "directory", "must not be empty"));
  for (double t : s.output.targets)
    if (!(t >= 0) || !std::isfinite(t)) throw ConfigError(key_error("output", "targets", "accuracies must be finite and >= 0"));
}

/// Fills defaults that depend on other fields.
inline void resolve_defaults(ExperimentSpecFile& s) {
  if (s.dataset.source == DatasetSource::Synthetic) {
    if (!s.dataset.classes) s.dataset.classes = s.dataset.synthetic.classes;
    s.dataset.synthetic.classes = *s.dataset.classes;
  }
}

/// Parses `[section]` / `key = value` text. Unknown sections and keys are
/// rejected; omitted keys keep their defaults.
inline ExperimentSpecFile parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  ExperimentSpecFile spec;
  for (const auto& [section_name, section] : tree) {
    if (section.empty() && !section.data().empty())
      throw ConfigError(fmt::format("key '{}' must appear inside a [section]", section_name));
    const detail::Section* sec = nullptr;
    for (const auto& s : detail::schema())
      if (s.name == section_name) sec = &s;
    if (!sec) throw ConfigError(fmt::format("unknown section [{}]", section_name));
    for (const auto& [key, node] : section) {
      const detail::Field* field = nullptr;
      for (const auto& f : sec->fields)
        if (f.name == key) field = &f;
      if (!field) throw ConfigError(fmt::format("{}.{}: unknown key", section_name, key));
      field->read(spec, node.data());
    }
  }
  resolve_defaults(spec);
  validate(spec);
  return spec;
}

inline ExperimentSpecFile parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

/// Emits every resolved field, so that parse_config_text(to_config_text(s)) == s.
inline std::string to_config_text(const ExperimentSpecFile& spec) {
  std::string out;
  for (const auto& sec : detail::schema()) {
    if (!out.empty()) out += '\n';
    out += fmt::format("[{}]\n", sec.name);
    for (const auto& f : sec.fields)
      if (auto v = f.write(spec)) out += fmt::format("{} = {}\n", f.name, *v);
  }
  return out;
}

}  // namespace fedmeta
