#pragma once

// Experiment configuration: one JSON object with sections
//
//   seed        (required) global seed; every stochastic stage derives its own stream
//   output_dir  run directory, default "run"
//   dataset     kind = segments | two_moons | two_circles | idx | csv
//   model       hidden widths and activation; input and output widths come from the data
//   loss        kind plus its parameters; sp_ce needs an explicit variant
//   train       optimizer, learning_rate, epochs, batch_size, shuffle, record_trace
//   attacks     list of attacks; omitted fields take the standard settings of the kind
//   sweep       one attack swept over an epsilon list or range
//   analysis    boundary / landscape / midpoint toggles
//
// Unknown keys are rejected so that misspelt settings cannot silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sploss/attacks.hpp"
#include "sploss/datasets.hpp"
#include "sploss/error.hpp"
#include "sploss/losses.hpp"
#include "sploss/network.hpp"
#include "sploss/optimizer.hpp"
#include "sploss/training.hpp"

namespace sploss {

using Json = nlohmann::ordered_json;

enum class DataSource { toy, idx, csv };

struct DatasetConfig {
  DataSource source = DataSource::toy;
  ToySpec toy;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path csv;
  int num_classes = 0;        // csv only; 0 = max label + 1
  std::size_t per_class = 0;  // stratified subsample before splitting; 0 = keep all
  double train_fraction = 0.8;
};

struct ModelConfig {
  std::vector<std::size_t> hidden = {16};
  Activation activation = Activation::tanh;
};

/// Clip range of an attack: the data's value range unless given.
struct AttackEntry {
  AttackConfig config;
  bool clip_from_data = true;
};

struct SweepConfig {
  bool enabled = false;
  AttackEntry attack;
  std::vector<double> epsilons;
};

struct AnalysisConfig {
  bool boundary = false;
  std::size_t resolution = 200;
  double threshold = 0.9;
  double pad = 0.5;
  bool landscape = false;
  double landscape_span = 1.0;
  std::size_t landscape_resolution = 21;
  std::uint64_t landscape_seed_a = 1;
  std::uint64_t landscape_seed_b = 2;
  bool midpoint = false;
  std::size_t midpoint_pairs = 20;  // first n samples of each class, all cross pairs

  bool any() const { return boundary || landscape || midpoint; }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  DatasetConfig dataset;
  ModelConfig model;
  LossSpec loss;
  TrainSettings train;
  std::vector<AttackEntry> attacks;
  SweepConfig sweep;
  AnalysisConfig analysis;
};

/// Seed streams of the global seed.
namespace stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t subsample = 3;
inline constexpr std::uint64_t init = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t attack = 6;  // + index in the attack list
inline constexpr std::uint64_t sweep = 1000;
}  // namespace stream

namespace detail {

class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(j_.at(key), key);
  }

  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(name_ + "." + key + " is required");
    return as<T>(j_.at(key), key);
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
  }

 private:
  template <class T>
  T as(const Json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <class F>
auto rethrow_as_config(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

inline DatasetConfig parse_dataset(const Json& j, const std::filesystem::path& base) {
  Section s(j, "dataset");
  DatasetConfig d;
  const auto kind = s.require<std::string>("kind");
  auto resolve = [&](const std::string& key) {
    std::filesystem::path p = s.require<std::string>(key);
    if (p.is_relative()) p = base / p;
    require_file(p, s.path(key));
    return p;
  };
  if (kind == "idx") {
    d.source = DataSource::idx;
    d.images = resolve("images");
    d.labels = resolve("labels");
  } else if (kind == "csv") {
    d.source = DataSource::csv;
    d.csv = resolve("path");
    d.num_classes = s.get<int>("num_classes", 0);
    if (d.num_classes < 0) throw ConfigError("dataset.num_classes must be >= 0");
  } else {
    d.source = DataSource::toy;
    d.toy.kind = rethrow_as_config("dataset.kind", [&] { return parse_toy_kind(kind); });
    d.toy.n_per_class = s.get<std::size_t>("n_per_class", d.toy.n_per_class);
    d.toy.margin = s.get<double>("margin", d.toy.margin);
    d.toy.noise = s.get<double>("noise", d.toy.noise);
    d.toy.drop_fraction = s.get<double>("drop_fraction", d.toy.drop_fraction);
    d.toy.drop_class = s.get<int>("drop_class", d.toy.drop_class);
    // ToySpec::seed is set from the global seed at load time
    rethrow_as_config("dataset", [&] {
      detail::check_toy(d.toy);
      if (d.toy.kind == ToyKind::segments && !(d.toy.margin > 0.0)) throw InvalidArgument("segments margin must be > 0");
      return 0;
    });
  }
  d.per_class = s.get<std::size_t>("per_class", 0);
  d.train_fraction = s.get<double>("train_fraction", d.train_fraction);
  if (!(d.train_fraction > 0.0 && d.train_fraction <= 1.0))
    throw ConfigError("dataset.train_fraction must lie in (0, 1]");
  s.finish();
  return d;
}

inline ModelConfig parse_model(const Json& j) {
  Section s(j, "model");
  ModelConfig m;
  if (s.has("hidden")) {
    const Json& h = s.raw("hidden");
    if (!h.is_array()) throw ConfigError("model.hidden must be an array of widths");
    m.hidden.clear();
    for (const auto& w : h) {
      if (!w.is_number_integer() || w.get<long long>() < 1) throw ConfigError("model.hidden widths must be integers >= 1");
      m.hidden.push_back(w.get<std::size_t>());
    }
  }
  if (s.has("activation"))
    m.activation = rethrow_as_config("model.activation", [&] { return parse_activation(s.require<std::string>("activation")); });
  s.finish();
  return m;
}

inline LossSpec parse_loss(const Json& j, const std::string& where = "loss") {
  Section s(j, where);
  LossSpec l;
  l.kind = rethrow_as_config(where + ".kind", [&] { return parse_loss_kind(s.require<std::string>("kind")); });
  l.alpha = s.get<double>("alpha", l.alpha);
  l.gamma = s.get<double>("gamma", l.gamma);
  l.eta = s.get<double>("eta", l.eta);
  if (l.kind == LossKind::sp_ce) {
    if (!s.has("variant")) throw ConfigError(where + ".variant is required for sp_ce (single_term or with_complement)");
    l.variant = rethrow_as_config(where + ".variant", [&] { return parse_sp_ce_variant(s.require<std::string>("variant")); });
  } else if (s.has("variant")) {
    throw ConfigError(where + ".variant only applies to sp_ce");
  }
  l.full_vector = s.get<bool>("full_vector", false);
  rethrow_as_config(where, [&] {
    l.validate();
    return 0;
  });
  s.finish();
  return l;
}

inline TrainSettings parse_train(const Json& j) {
  Section s(j, "train");
  TrainSettings t;
  t.epochs = 50;
  t.batch_size = 128;
  if (s.has("optimizer"))
    t.optimizer.kind = rethrow_as_config("train.optimizer", [&] { return parse_optimizer(s.require<std::string>("optimizer")); });
  t.optimizer.learning_rate = s.get<double>("learning_rate", t.optimizer.learning_rate);
  t.optimizer.beta1 = s.get<double>("beta1", t.optimizer.beta1);
  t.optimizer.beta2 = s.get<double>("beta2", t.optimizer.beta2);
  t.optimizer.epsilon = s.get<double>("epsilon", t.optimizer.epsilon);
  t.epochs = s.get<std::size_t>("epochs", t.epochs);
  t.batch_size = s.get<std::size_t>("batch_size", t.batch_size);
  t.shuffle = s.get<bool>("shuffle", t.shuffle);
  t.record_trace = s.get<bool>("record_trace", t.record_trace);
  rethrow_as_config("train", [&] {
    t.optimizer.validate();
    return 0;
  });
  s.finish();
  return t;
}

inline AttackEntry parse_attack(const Json& j, const std::string& where) {
  Section s(j, where);
  AttackEntry e;
  const auto kind = rethrow_as_config(where + ".kind", [&] { return parse_attack_kind(s.require<std::string>("kind")); });
  AttackConfig& c = e.config;
  c = AttackConfig::standard(kind);
  c.epsilon = s.get<double>("epsilon", c.epsilon);
  c.step_size = s.get<double>("step_size", kind == AttackKind::fgsm ? c.epsilon : c.step_size);
  c.steps = s.get<std::size_t>("steps", c.steps);
  c.random_start = s.get<bool>("random_start", c.random_start);
  c.momentum = s.get<double>("momentum", c.momentum);
  c.batch_size = s.get<std::size_t>("batch_size", c.batch_size);
  if (s.has("clip")) {
    const Json& r = s.raw("clip");
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
      throw ConfigError(where + ".clip must be [lo, hi]");
    c.clip_lo = r[0].get<double>();
    c.clip_hi = r[1].get<double>();
    e.clip_from_data = false;
  }
  if (s.has("attack_loss")) c.attack_loss = parse_loss(s.raw("attack_loss"), where + ".attack_loss");
  rethrow_as_config(where, [&] {
    c.validate();
    return 0;
  });
  s.finish();
  return e;
}

inline SweepConfig parse_sweep(const Json& j) {
  if (!j.is_object()) throw ConfigError("sweep: expected an object");
  Json attack = j;
  SweepConfig sw;
  sw.enabled = true;
  if (attack.contains("epsilons") && attack.contains("epsilon_range"))
    throw ConfigError("sweep: give either epsilons or epsilon_range");
  if (attack.contains("epsilons")) {
    const Json& e = attack["epsilons"];
    if (!e.is_array() || e.empty()) throw ConfigError("sweep.epsilons must be a non-empty array");
    for (const auto& v : e) {
      if (!v.is_number()) throw ConfigError("sweep.epsilons must hold numbers");
      sw.epsilons.push_back(v.get<double>());
    }
    attack.erase("epsilons");
  } else {
    // Fig.-5-style default: 0.01 .. 0.3
    double from = 0.01, to = 0.3;
    std::size_t count = 30;
    if (attack.contains("epsilon_range")) {
      Section r(attack["epsilon_range"], "sweep.epsilon_range");
      from = r.get<double>("from", from);
      to = r.get<double>("to", to);
      count = r.get<std::size_t>("count", count);
      r.finish();
      attack.erase("epsilon_range");
    }
    if (count < 1 || !(from <= to)) throw ConfigError("sweep.epsilon_range needs from <= to and count >= 1");
    for (std::size_t i = 0; i < count; ++i)
      sw.epsilons.push_back(count == 1 ? from : from + (to - from) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  for (double e : sw.epsilons)
    if (!(e >= 0.0)) throw ConfigError("sweep epsilons must be >= 0");
  for (std::size_t i = 1; i < sw.epsilons.size(); ++i)
    if (sw.epsilons[i] < sw.epsilons[i - 1]) throw ConfigError("sweep epsilons must be ascending");
  if (!attack.contains("kind")) attack["kind"] = "pgd";
  sw.attack = parse_attack(attack, "sweep");
  return sw;
}

inline AnalysisConfig parse_analysis(const Json& j) {
  Section s(j, "analysis");
  AnalysisConfig a;
  a.boundary = s.get<bool>("boundary", a.boundary);
  a.resolution = s.get<std::size_t>("resolution", a.resolution);
  a.threshold = s.get<double>("threshold", a.threshold);
  a.pad = s.get<double>("pad", a.pad);
  a.landscape = s.get<bool>("landscape", a.landscape);
  a.landscape_span = s.get<double>("landscape_span", a.landscape_span);
  a.landscape_resolution = s.get<std::size_t>("landscape_resolution", a.landscape_resolution);
  if (s.has("landscape_seeds")) {
    const Json& p = s.raw("landscape_seeds");
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned())
      throw ConfigError("analysis.landscape_seeds must be [a, b]");
    a.landscape_seed_a = p[0].get<std::uint64_t>();
    a.landscape_seed_b = p[1].get<std::uint64_t>();
  }
  a.midpoint = s.get<bool>("midpoint", a.midpoint);
  a.midpoint_pairs = s.get<std::size_t>("midpoint_pairs", a.midpoint_pairs);
  if (a.resolution < 2) throw ConfigError("analysis.resolution must be >= 2");
  if (!(a.threshold > 0.0 && a.threshold <= 1.0)) throw ConfigError("analysis.threshold must lie in (0, 1]");
  if (!(a.pad >= 0.0)) throw ConfigError("analysis.pad must be >= 0");
  if (a.landscape_resolution < 2) throw ConfigError("analysis.landscape_resolution must be >= 2");
  if (!(a.landscape_span > 0.0)) throw ConfigError("analysis.landscape_span must be > 0");
  if (a.midpoint_pairs < 1) throw ConfigError("analysis.midpoint_pairs must be >= 1");
  s.finish();
  return a;
}

}  // namespace detail

/// Relative data paths resolve against `base` (the config file's directory).
inline ExperimentConfig parse_config(const Json& j, const std::filesystem::path& base = ".") {
  detail::Section s(j, "config");
  ExperimentConfig c;
  c.seed = s.require<std::uint64_t>("seed");
  c.output_dir = s.get<std::string>("output_dir", c.output_dir.string());
  if (!s.has("dataset")) throw ConfigError("config.dataset is required");
  c.dataset = detail::parse_dataset(s.raw("dataset"), base);
  if (s.has("model")) c.model = detail::parse_model(s.raw("model"));
  if (!s.has("loss")) throw ConfigError("config.loss is required");
  c.loss = detail::parse_loss(s.raw("loss"));
  c.train = s.has("train") ? detail::parse_train(s.raw("train")) : detail::parse_train(Json::object());
  if (s.has("attacks")) {
    const Json& a = s.raw("attacks");
    if (!a.is_array()) throw ConfigError("attacks must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) c.attacks.push_back(detail::parse_attack(a[i], "attacks[" + std::to_string(i) + "]"));
  }
  if (s.has("sweep")) c.sweep = detail::parse_sweep(s.raw("sweep"));
  if (s.has("analysis")) c.analysis = detail::parse_analysis(s.raw("analysis"));
  s.finish();
  return c;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_config(read_json_file(path), dir);
}

namespace detail {

inline Json loss_to_json(const LossSpec& l) {
  Json j;
  j["kind"] = to_string(l.kind);
  if (l.uses_focal_terms()) {
    j["alpha"] = l.alpha;
    j["gamma"] = l.gamma;
  }
  if (l.kind != LossKind::ce && l.kind != LossKind::focal) j["eta"] = l.eta;
  if (l.kind == LossKind::sp_ce) j["variant"] = to_string(l.variant);
  if (l.full_vector) j["full_vector"] = true;
  return j;
}

inline Json attack_to_json(const AttackEntry& e) {
  const AttackConfig& c = e.config;
  Json j;
  j["kind"] = to_string(c.kind);
  j["epsilon"] = c.epsilon;
  j["step_size"] = c.step_size;
  j["steps"] = c.steps;
  j["random_start"] = c.random_start;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  if (!e.clip_from_data) j["clip"] = {c.clip_lo, c.clip_hi};
  if (c.attack_loss) j["attack_loss"] = loss_to_json(*c.attack_loss);
  return j;
}

}  // namespace detail

/// Fully resolved config; parse_config(to_json(c)) reproduces c.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  Json d;
  const auto& ds = c.dataset;
  switch (ds.source) {
    case DataSource::idx:
      d["kind"] = "idx";
      d["images"] = ds.images.string();
      d["labels"] = ds.labels.string();
      break;
    case DataSource::csv:
      d["kind"] = "csv";
      d["path"] = ds.csv.string();
      d["num_classes"] = ds.num_classes;
      break;
    case DataSource::toy:
      d["kind"] = to_string(ds.toy.kind);
      d["n_per_class"] = ds.toy.n_per_class;
      d["margin"] = ds.toy.margin;
      d["noise"] = ds.toy.noise;
      d["drop_fraction"] = ds.toy.drop_fraction;
      d["drop_class"] = ds.toy.drop_class;
      break;
  }
  d["per_class"] = ds.per_class;
  d["train_fraction"] = ds.train_fraction;
  j["dataset"] = d;
  j["model"] = {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  j["loss"] = detail::loss_to_json(c.loss);
  const auto& t = c.train;
  j["train"] = {{"optimizer", to_string(t.optimizer.kind)}, {"learning_rate", t.optimizer.learning_rate},
                {"beta1", t.optimizer.beta1},           {"beta2", t.optimizer.beta2},
                {"epsilon", t.optimizer.epsilon},        {"epochs", t.epochs},
                {"batch_size", t.batch_size},            {"shuffle", t.shuffle},
                {"record_trace", t.record_trace}};
  Json attacks = Json::array();
  for (const auto& a : c.attacks) attacks.push_back(detail::attack_to_json(a));
  j["attacks"] = attacks;
  if (c.sweep.enabled) {
    Json sw = detail::attack_to_json(c.sweep.attack);
    sw["epsilons"] = c.sweep.epsilons;
    j["sweep"] = sw;
  }
  const auto& a = c.analysis;
  j["analysis"] = {{"boundary", a.boundary},
                   {"resolution", a.resolution},
                   {"threshold", a.threshold},
                   {"pad", a.pad},
                   {"landscape", a.landscape},
                   {"landscape_span", a.landscape_span},
                   {"landscape_resolution", a.landscape_resolution},
                   {"landscape_seeds", {a.landscape_seed_a, a.landscape_seed_b}},
                   {"midpoint", a.midpoint},
                   {"midpoint_pairs", a.midpoint_pairs}};
  return j;
}

}  // namespace sploss
