#pragma once

// Run orchestration. One directory per run with fixed file names:
//
//   config_echo.json   resolved config; feeding it back reproduces the run
//   model_best.spnet   highest test accuracy (train accuracy without a test split)
//   model_final.spnet  last epoch, with optimizer state
//   train_log.csv      per-epoch loss and accuracies
//   trace.csv          last-layer weights per epoch (train.record_trace)
//   attack_<kind>.csv  per-sample attack outcome; attack_table.csv holds one table row
//   sweep.csv          robust accuracy against epsilon
//   boundary.csv       confidence grid; boundary_report.txt its margin summary
//   landscape.csv      loss surface around the trained weights
//   midpoint.csv       midpoint deviation for cross-class feature pairs
//   loss_curve.csv     loss and gradient along the binary logit gap (stationary)
//   summary.txt        [section] key=value blocks, one per command
//
// Every CSV is a pure function of (config, seed). summary.txt also records wall
// time, which is excluded from each section's hash.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sploss/analysis.hpp"
#include "sploss/attacks.hpp"
#include "sploss/checkpoint.hpp"
#include "sploss/config.hpp"
#include "sploss/datasets.hpp"
#include "sploss/idx.hpp"
#include "sploss/network.hpp"
#include "sploss/stationary.hpp"
#include "sploss/training.hpp"

namespace sploss {

namespace fs = std::filesystem;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct SummarySection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
  double wall_time_s = 0.0;

  void add(const std::string& k, const std::string& v) { entries.emplace_back(k, v); }
  void add(const std::string& k, double v) { add(k, fmt(v)); }
  void add(const std::string& k, std::size_t v) { add(k, std::to_string(v)); }
  void add(const std::string& k, bool v) { add(k, std::string(v ? "true" : "false")); }
  void add_artifact(const fs::path& p) { add("artifact." + p.filename().string(), hex64(fnv1a(read_bytes(p)))); }

  std::optional<std::string> get(const std::string& k) const {
    for (const auto& [key, v] : entries)
      if (key == k) return v;
    return std::nullopt;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(name);
    for (const auto& [k, v] : entries) h = fnv1a(k + "=" + v + "\n", h);
    return h;
  }
};

namespace detail {

inline int section_rank(const std::string& name) {
  static const char* order[] = {"train", "attack", "sweep", "analyze", "stationary"};
  for (int i = 0; i < 5; ++i)
    if (name == order[i]) return i;
  return 5;
}

inline std::map<std::string, std::string> read_sections(const fs::path& p) {
  std::map<std::string, std::string> out;
  if (!fs::exists(p)) return out;
  std::istringstream in(read_bytes(p));
  std::string line, current;
  while (std::getline(in, line)) {
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      out[current];
      continue;
    }
    if (!current.empty() && !line.empty()) out[current] += line + "\n";
  }
  return out;
}

}  // namespace detail

/// Replaces (or adds) one section of <dir>/summary.txt, keeping the others.
inline void write_summary_section(const fs::path& dir, const SummarySection& s) {
  const fs::path p = dir / "summary.txt";
  auto sections = detail::read_sections(p);
  std::ostringstream body;
  for (const auto& [k, v] : s.entries) body << k << '=' << v << '\n';
  body << "section_hash=" << hex64(s.hash()) << '\n';
  body << "wall_time_s=" << fmt(s.wall_time_s) << '\n';
  sections[s.name] = body.str();
  std::vector<std::string> names;
  for (const auto& [n, b] : sections) names.push_back(n);
  std::stable_sort(names.begin(), names.end(),
                   [](const std::string& a, const std::string& b) { return detail::section_rank(a) < detail::section_rank(b); });
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out << '\n';
    out << '[' << names[i] << "]\n" << sections[names[i]];
  }
}

struct RunData {
  Dataset all;
  Split split;

  /// The evaluation set: the test split, or the training split when there is none.
  const Dataset& eval() const { return split.test.size() > 0 ? split.test : split.train; }
  std::pair<double, double> value_range() const { return all.value_range(); }
};

inline RunData load_data(const ExperimentConfig& cfg) {
  RunData d;
  const auto& dc = cfg.dataset;
  switch (dc.source) {
    case DataSource::toy: {
      ToySpec spec = dc.toy;
      spec.seed = derive_seed(cfg.seed, stream::data);
      d.all = generate(spec);
      break;
    }
    case DataSource::idx: d.all = load_idx(dc.images, dc.labels); break;
    case DataSource::csv: d.all = read_dataset_csv(dc.csv, dc.num_classes); break;
  }
  if (dc.per_class > 0) d.all = subsample(d.all, dc.per_class, derive_seed(cfg.seed, stream::subsample));
  d.split = train_test_split(d.all, dc.train_fraction, derive_seed(cfg.seed, stream::split));
  return d;
}

inline Network build_network(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes) {
  std::vector<std::size_t> widths = {input_dim};
  widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  widths.push_back(classes);
  return Network::random(std::span<const std::size_t>(widths), cfg.model.activation, derive_seed(cfg.seed, stream::init));
}

inline void check_fits(const Network& net, const Dataset& ds, const std::string& what) {
  if (net.input_dim() != ds.dim())
    throw DimensionError(what + ": network expects " + std::to_string(net.input_dim()) + " features, data has " +
                         std::to_string(ds.dim()));
  if (net.output_dim() < static_cast<std::size_t>(ds.num_classes))
    throw DimensionError(what + ": network has " + std::to_string(net.output_dim()) + " outputs, data has " +
                         std::to_string(ds.num_classes) + " classes");
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  out << text;
}

inline void add_stationary(SummarySection& s, const LossSpec& loss) {
  const auto r = find_stationary_point(loss);
  s.add("stationary_exists", r.exists);
  if (r.exists) {
    s.add("stationary_xi", *r.xi_star);
    s.add("stationary_z_gap", r.z_gap);
  }
}

}  // namespace detail

struct TrainOutcome {
  TrainResult result;
  RunData data;
  SummarySection summary;
};

inline void write_train_log(std::span<const EpochLog> log, bool has_test, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epoch,train_loss,train_accuracy,test_accuracy\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',';
    if (has_test) out << e.test_accuracy;
    out << '\n';
  }
}

inline TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  detail::write_text(dir / "config_echo.json", to_json(cfg).dump(2) + "\n");

  TrainOutcome o;
  o.data = load_data(cfg);
  const Dataset& tr = o.data.split.train;
  const bool has_test = o.data.split.test.size() > 0;
  Network init = build_network(cfg, tr.dim(), static_cast<std::size_t>(o.data.all.num_classes));
  TrainSettings ts = cfg.train;
  ts.seed = derive_seed(cfg.seed, stream::shuffle);
  o.result = train(std::move(init), cfg.loss, tr, has_test ? &o.data.split.test : nullptr, ts, on_epoch);
  const auto& r = o.result;

  save_checkpoint(r.best_net, dir / "model_best.spnet");
  save_checkpoint(r.final_net, dir / "model_final.spnet", &r.optimizer);
  write_train_log(r.log, has_test, dir / "train_log.csv");

  SummarySection& s = o.summary;
  s.name = "train";
  s.add("loss", cfg.loss.describe());
  s.add("seed", std::to_string(cfg.seed));
  s.add("train_samples", tr.size());
  s.add("test_samples", o.data.split.test.size());
  s.add("epochs", r.log.size());
  s.add("best_epoch", r.best_epoch);
  s.add("train_accuracy", accuracy(r.best_net, tr.features, tr.labels));
  if (has_test) s.add("test_accuracy", accuracy(r.best_net, o.data.split.test.features, o.data.split.test.labels));
  s.add("final_train_accuracy", accuracy(r.final_net, tr.features, tr.labels));
  if (has_test)
    s.add("final_test_accuracy", accuracy(r.final_net, o.data.split.test.features, o.data.split.test.labels));
  s.add("final_train_loss", mean_loss(r.final_net, cfg.loss, tr.features, tr.labels));
  s.add("clamp_count", r.clamp_count);
  detail::add_stationary(s, cfg.loss);
  if (ts.record_trace) {
    write_trace_csv(r.trace, dir / "trace.csv");
    s.add("trace_final_max_abs", r.trace.final_max_abs());
    s.add("trace_tail_drift", r.trace.tail_drift());
    s.add_artifact(dir / "trace.csv");
  }
  s.add_artifact(dir / "train_log.csv");
  s.add_artifact(dir / "model_best.spnet");
  s.add_artifact(dir / "model_final.spnet");
  s.wall_time_s = detail::seconds_since(t0);
  write_summary_section(dir, s);
  return o;
}

inline fs::path default_checkpoint(const ExperimentConfig& cfg) { return cfg.output_dir / "model_best.spnet"; }

namespace detail {

inline AttackConfig resolve_attack(const AttackEntry& e, const RunData& d, std::uint64_t seed) {
  AttackConfig c = e.config;
  if (e.clip_from_data) std::tie(c.clip_lo, c.clip_hi) = d.value_range();
  c.seed = seed;
  return c;
}

}  // namespace detail

struct AttackRow {
  AttackKind kind;
  double epsilon;
  double robust_accuracy;
};

struct AttackOutcome {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<AttackRow> rows;
  SummarySection summary;
};

inline AttackOutcome cmd_attack(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const Network net = load_checkpoint(checkpoint);
  const RunData d = load_data(cfg);
  check_fits(net, d.all, "attack");
  const Dataset& ev = d.eval();

  AttackOutcome o;
  o.train_accuracy = accuracy(net, d.split.train.features, d.split.train.labels);
  o.test_accuracy = accuracy(net, ev.features, ev.labels);
  SummarySection& s = o.summary;
  s.name = "attack";
  s.add("checkpoint", checkpoint.filename().string());
  s.add("eval_samples", ev.size());
  s.add("train_accuracy", o.train_accuracy);
  s.add("test_accuracy", o.test_accuracy);
  std::map<std::string, int> used;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    const AttackConfig ac = detail::resolve_attack(cfg.attacks[i], d, derive_seed(cfg.seed, stream::attack + i));
    const AttackResult r = run_attack(net, cfg.loss, ev.features, ev.labels, ac);
    std::string name = to_string(ac.kind);
    if (const int n = ++used[name]; n > 1) name += "_" + std::to_string(n);
    const fs::path p = dir / ("attack_" + name + ".csv");
    write_attack_csv(r, ev.features, ev.labels, p);
    o.rows.push_back({ac.kind, ac.epsilon, r.robust_accuracy});
    names.push_back(name);
    s.add(name + "_epsilon", ac.epsilon);
    s.add(name + "_robust_accuracy", r.robust_accuracy);
    s.add(name + "_max_perturbation", r.max_perturbation_seen);
    s.add_artifact(p);
  }
  {
    std::ofstream t(dir / "attack_table.csv");
    if (!t) throw Error("cannot write attack_table.csv");
    t.precision(17);
    t << "train_accuracy,test_accuracy";
    for (const auto& n : names) t << ',' << n;
    t << '\n' << o.train_accuracy << ',' << o.test_accuracy;
    for (const auto& row : o.rows) t << ',' << row.robust_accuracy;
    t << '\n';
  }
  s.add_artifact(dir / "attack_table.csv");
  s.wall_time_s = detail::seconds_since(t0);
  write_summary_section(dir, s);
  return o;
}

struct SweepOutcome {
  std::vector<SweepPoint> curve;
  SummarySection summary;
};

inline SweepOutcome cmd_sweep(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  if (!cfg.sweep.enabled) throw ConfigError("sweep: config has no sweep section");
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const Network net = load_checkpoint(checkpoint);
  const RunData d = load_data(cfg);
  check_fits(net, d.all, "sweep");
  const Dataset& ev = d.eval();
  const AttackConfig base = detail::resolve_attack(cfg.sweep.attack, d, derive_seed(cfg.seed, stream::sweep));
  SweepOutcome o;
  o.curve = robust_accuracy_sweep(net, cfg.loss, ev.features, ev.labels, base, cfg.sweep.epsilons);
  write_sweep_csv(o.curve, dir / "sweep.csv");
  SummarySection& s = o.summary;
  s.name = "sweep";
  s.add("kind", std::string(to_string(base.kind)));
  s.add("points", o.curve.size());
  s.add("first_robust_accuracy", o.curve.front().robust_accuracy);
  s.add("last_robust_accuracy", o.curve.back().robust_accuracy);
  s.add_artifact(dir / "sweep.csv");
  s.wall_time_s = detail::seconds_since(t0);
  write_summary_section(dir, s);
  return o;
}

struct AnalyzeOutcome {
  std::optional<BoundaryReport> boundary;
  std::optional<LandscapeGrid> landscape;
  std::optional<double> midpoint_max;
  std::optional<double> midpoint_mean;
  std::vector<fs::path> artifacts;
  SummarySection summary;
};

namespace detail {

struct Pairs {
  double max = 0.0;
  double mean = 0.0;
};

/// Deviation over all cross pairs of the first `n` samples of each binary class.
inline Pairs midpoint_pairs(const Network& net, const Dataset& ds, std::size_t n, const fs::path& csv) {
  std::vector<std::size_t> idx[2];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& v = idx[ds.labels[i] == 0 ? 0 : 1];
    if (v.size() < n) v.push_back(i);
  }
  if (idx[0].empty() || idx[1].empty()) throw InvalidArgument("midpoint: both classes need at least one sample");
  const Tensor u = features(net, ds.features);
  std::ofstream out(csv);
  if (!out) throw Error("cannot open " + csv.string() + " for writing");
  out.precision(17);
  out << "sample_0,sample_1,deviation\n";
  Pairs p;
  std::size_t count = 0;
  for (std::size_t a : idx[0])
    for (std::size_t b : idx[1]) {
      const double dev = midpoint_deviation(net, u.row(a), u.row(b));
      out << a << ',' << b << ',' << dev << '\n';
      p.max = std::max(p.max, dev);
      p.mean += dev;
      ++count;
    }
  p.mean /= static_cast<double>(count);
  return p;
}

}  // namespace detail

inline AnalyzeOutcome cmd_analyze(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  AnalyzeOutcome o;
  o.summary.name = "analyze";
  const auto& a = cfg.analysis;
  if (!a.any()) return o;
  const Network net = load_checkpoint(checkpoint);
  const RunData d = load_data(cfg);
  check_fits(net, d.all, "analyze");
  if (a.boundary && net.input_dim() != 2)
    throw ConfigError("analysis.boundary needs a 2-D model, checkpoint has " + std::to_string(net.input_dim()) + " inputs");
  if (a.midpoint && (net.output_dim() != 2 || d.all.num_classes != 2))
    throw ConfigError("analysis.midpoint needs a binary model");
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const Dataset& tr = d.split.train;
  SummarySection& s = o.summary;
  if (a.boundary) {
    const auto grid = confidence_grid(net, Region::around(tr, a.pad), a.resolution);
    write_grid_csv(grid, dir / "boundary.csv");
    o.boundary = margin_report(grid, tr, a.threshold);
    write_boundary_report(*o.boundary, dir / "boundary_report.txt");
    s.add("boundary_cells", o.boundary->boundary_cells);
    for (std::size_t k = 0; k < o.boundary->class_margin.size(); ++k)
      s.add("margin_class_" + std::to_string(k), o.boundary->class_margin[k]);
    s.add("margin_balance", o.boundary->margin_balance);
    s.add("confidence_band_width", o.boundary->confidence_band_width);
    o.artifacts.push_back(dir / "boundary.csv");
    o.artifacts.push_back(dir / "boundary_report.txt");
  }
  if (a.landscape) {
    o.landscape = landscape(net, cfg.loss, tr, a.landscape_span, a.landscape_resolution, a.landscape_seed_a,
                            a.landscape_seed_b);
    write_landscape_csv(*o.landscape, dir / "landscape.csv");
    if (o.landscape->has_center()) {
      s.add("landscape_center_loss", o.landscape->at(o.landscape->center(), o.landscape->center()));
      s.add("landscape_center_strict_min", center_is_strict_local_min(*o.landscape));
    }
    o.artifacts.push_back(dir / "landscape.csv");
  }
  if (a.midpoint) {
    const auto p = detail::midpoint_pairs(net, tr, a.midpoint_pairs, dir / "midpoint.csv");
    o.midpoint_max = p.max;
    o.midpoint_mean = p.mean;
    s.add("midpoint_max", p.max);
    s.add("midpoint_mean", p.mean);
    o.artifacts.push_back(dir / "midpoint.csv");
  }
  for (const auto& p : o.artifacts) s.add_artifact(p);
  s.wall_time_s = detail::seconds_since(t0);
  write_summary_section(dir, s);
  return o;
}

struct StationaryReport {
  StationaryPointResult result;
  std::optional<double> closed_form;
  std::string text;
};

/// Binary sweep along the logit gap: z_gap,xi,value,dvalue_dz
inline void write_loss_curve(const LossSpec& spec, const fs::path& path, std::size_t points = 999) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "z_gap,xi,value,dvalue_dz\n";
  for (std::size_t i = 1; i <= points; ++i) {
    const double xi = static_cast<double>(i) / static_cast<double>(points + 1);
    out << std::log(xi / (1.0 - xi)) << ',' << xi << ',' << loss_of_xi(spec, xi) << ','
        << true_class_gradient(spec, xi) << '\n';
  }
}

inline StationaryReport cmd_stationary(const LossSpec& spec, const std::optional<fs::path>& out_dir = std::nullopt) {
  spec.validate();
  StationaryReport rep;
  rep.result = find_stationary_point(spec);
  if (spec.kind == LossKind::sp_ce || spec.kind == LossKind::grad_starvation)
    rep.closed_form = closed_form_stationary_point(spec);
  std::ostringstream os;
  os.precision(12);
  os << "loss: " << spec.describe() << '\n';
  os << "exists: " << (rep.result.exists ? "true" : "false") << '\n';
  if (rep.result.exists) {
    os << "xi_star: " << *rep.result.xi_star << '\n';
    os << "z_gap: " << rep.result.z_gap << '\n';
  }
  if (rep.closed_form) {
    os << "closed_form_xi: " << *rep.closed_form << '\n';
    if (rep.result.exists) os << "closed_form_abs_diff: " << std::abs(*rep.closed_form - *rep.result.xi_star) << '\n';
  }
  if (!rep.result.note.empty()) os << "note: " << rep.result.note << '\n';
  rep.text = os.str();
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_loss_curve(spec, *out_dir / "loss_curve.csv");
    SummarySection s;
    s.name = "stationary";
    s.add("loss", spec.describe());
    detail::add_stationary(s, spec);
    if (rep.closed_form) s.add("closed_form_xi", *rep.closed_form);
    s.add_artifact(*out_dir / "loss_curve.csv");
    write_summary_section(*out_dir, s);
  }
  return rep;
}

}  // namespace sploss
