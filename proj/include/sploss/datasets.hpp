#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/rng.hpp"
#include "sploss/tensor.hpp"

namespace sploss {

struct Dataset {
  Tensor features;  // n x d
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::pair<double, double>> feature_range;  // per dimension

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (int l : labels) ++c.at(static_cast<std::size_t>(l));
    return c;
  }

  /// Smallest lo and largest hi over all dimensions.
  std::pair<double, double> value_range() const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& [a, b] : feature_range) {
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    return {lo, hi};
  }

  void validate() const {
    if (labels.empty()) throw InvalidArgument("dataset is empty");
    if (features.rows() != labels.size())
      throw DimensionError("dataset has " + std::to_string(features.rows()) + " rows and " +
                           std::to_string(labels.size()) + " labels");
    if (num_classes < 1) throw InvalidArgument("dataset needs at least one class");
    for (int l : labels)
      if (l < 0 || l >= num_classes) throw InvalidArgument("label " + std::to_string(l) + " outside [0, K)");
    if (feature_range.size() != dim()) throw DimensionError("feature_range length does not match dim");
    for (std::size_t r = 0; r < features.rows(); ++r) {
      auto row = features.row(r);
      for (std::size_t c = 0; c < row.size(); ++c)
        if (row[c] < feature_range[c].first || row[c] > feature_range[c].second)
          throw InvalidArgument("feature outside declared range");
    }
  }
};

/// Per-dimension min/max of the data.
inline std::vector<std::pair<double, double>> bounding_range(const Tensor& x) {
  std::vector<std::pair<double, double>> r(x.cols(), {std::numeric_limits<double>::infinity(),
                                                      -std::numeric_limits<double>::infinity()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      r[c].first = std::min(r[c].first, row[c]);
      r[c].second = std::max(r[c].second, row[c]);
    }
  }
  return r;
}

/// Rows of `ds` at `indices`, in that order.
inline Dataset take(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.feature_range = ds.feature_range;
  out.features = Tensor(indices.size(), ds.dim());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= ds.size()) throw InvalidArgument("take: index out of range");
    std::copy(ds.features.row(src).begin(), ds.features.row(src).end(), out.features.row(i).begin());
    out.labels.push_back(ds.labels[src]);
  }
  return out;
}

enum class ToyKind { segments, two_moons, two_circles };

inline const char* to_string(ToyKind k) {
  switch (k) {
    case ToyKind::segments: return "segments";
    case ToyKind::two_moons: return "two_moons";
    case ToyKind::two_circles: return "two_circles";
  }
  return "?";
}

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "segments") return ToyKind::segments;
  if (s == "two_moons") return ToyKind::two_moons;
  if (s == "two_circles") return ToyKind::two_circles;
  throw InvalidArgument("unknown toy dataset '" + s + "'");
}

struct ToySpec {
  ToyKind kind = ToyKind::segments;
  std::size_t n_per_class = 100;
  /// segments: vertical gap between the two lines; two_moons: vertical separation
  /// of the moons (negative values overlap them). Ignored by two_circles.
  double margin = 1.8;
  double noise = 0.0;
  /// Fraction of `drop_class` removed after generation.
  double drop_fraction = 0.0;
  int drop_class = 1;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_toy(const ToySpec& spec) {
  if (spec.n_per_class == 0) throw InvalidArgument("toy dataset needs n_per_class >= 1");
  if (!(spec.noise >= 0.0)) throw InvalidArgument("toy noise must be >= 0");
  if (!(spec.drop_fraction >= 0.0 && spec.drop_fraction < 1.0))
    throw InvalidArgument("drop_fraction must lie in [0, 1)");
  if (spec.drop_class != 0 && spec.drop_class != 1) throw InvalidArgument("drop_class must be 0 or 1");
}

/// Assembles two classes of points, keeping only the first `keep` of the dropped class.
inline Dataset assemble(const ToySpec& spec, const std::vector<std::pair<double, double>>& class0,
                        const std::vector<std::pair<double, double>>& class1) {
  const auto n = static_cast<double>(spec.n_per_class);
  const auto keep = static_cast<std::size_t>(std::llround(n * (1.0 - spec.drop_fraction)));
  if (keep < 1) throw InvalidArgument("drop_fraction leaves no samples in the dropped class");
  const std::size_t n0 = spec.drop_class == 0 ? keep : class0.size();
  const std::size_t n1 = spec.drop_class == 1 ? keep : class1.size();
  Dataset ds;
  ds.num_classes = 2;
  ds.features = Tensor(n0 + n1, 2);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n0; ++i, ++r) {
    ds.features(r, 0) = class0[i].first;
    ds.features(r, 1) = class0[i].second;
    ds.labels.push_back(0);
  }
  for (std::size_t i = 0; i < n1; ++i, ++r) {
    ds.features(r, 0) = class1[i].first;
    ds.features(r, 1) = class1[i].second;
    ds.labels.push_back(1);
  }
  ds.feature_range = bounding_range(ds.features);
  return ds;
}

}  // namespace detail

/// Two horizontal segments x in [-2, 2] at y = -margin/2 (class 0) and y = +margin/2
/// (class 1); Gaussian noise of std `noise` on y only.
inline Dataset gen_segments(const ToySpec& spec) {
  detail::check_toy(spec);
  if (!(spec.margin > 0.0)) throw InvalidArgument("segments margin must be > 0");
  Rng rng(spec.seed);
  std::vector<std::pair<double, double>> c0;
  std::vector<std::pair<double, double>> c1;
  for (int cls = 0; cls < 2; ++cls) {
    auto& dst = cls == 0 ? c0 : c1;
    const double y0 = (cls == 0 ? -0.5 : 0.5) * spec.margin;
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const double x = rng.uniform(-2.0, 2.0);
      const double y = y0 + (spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0);
      dst.emplace_back(x, y);
    }
  }
  return detail::assemble(spec, c0, c1);
}

/// Upper unit half-circle centred at the origin (class 0) and lower unit half-circle
/// centred at (1, -margin) (class 1). The lower moon's top sits at y = -margin, so a
/// negative margin overlaps the classes' vertical extents by |margin|.
inline Dataset gen_two_moons(const ToySpec& spec) {
  detail::check_toy(spec);
  Rng rng(spec.seed);
  std::vector<std::pair<double, double>> c0;
  std::vector<std::pair<double, double>> c1;
  auto jitter = [&] { return spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0; };
  for (std::size_t i = 0; i < spec.n_per_class; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    const double dx = jitter();
    const double dy = jitter();
    c0.emplace_back(std::cos(t) + dx, std::sin(t) + dy);
  }
  for (std::size_t i = 0; i < spec.n_per_class; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    const double dx = jitter();
    const double dy = jitter();
    c1.emplace_back(1.0 - std::cos(t) + dx, -spec.margin - std::sin(t) + dy);
  }
  return detail::assemble(spec, c0, c1);
}

inline constexpr double kInnerCircleRadius = 1.0;
inline constexpr double kOuterCircleRadius = 1.5;

/// Concentric circles of radius 1.0 (class 0) and 1.5 (class 1), angle uniform,
/// isotropic Gaussian noise.
inline Dataset gen_two_circles(const ToySpec& spec) {
  detail::check_toy(spec);
  Rng rng(spec.seed);
  std::vector<std::pair<double, double>> c0;
  std::vector<std::pair<double, double>> c1;
  for (int cls = 0; cls < 2; ++cls) {
    auto& dst = cls == 0 ? c0 : c1;
    const double radius = cls == 0 ? kInnerCircleRadius : kOuterCircleRadius;
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double dx = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
      const double dy = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
      dst.emplace_back(radius * std::cos(t) + dx, radius * std::sin(t) + dy);
    }
  }
  return detail::assemble(spec, c0, c1);
}

inline Dataset generate(const ToySpec& spec) {
  switch (spec.kind) {
    case ToyKind::segments: return gen_segments(spec);
    case ToyKind::two_moons: return gen_two_moons(spec);
    case ToyKind::two_circles: return gen_two_circles(spec);
  }
  throw InvalidArgument("unknown toy kind");
}

struct Split {
  Dataset train;
  Dataset test;
};

/// Seeded shuffle, then the first round(train_fraction * n) rows train.
inline Split train_test_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw InvalidArgument("train_fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ds.size());
  Split s;
  s.train = take(ds, std::span<const std::size_t>(idx).first(n_train));
  s.test = take(ds, std::span<const std::size_t>(idx).subspan(n_train));
  return s;
}

/// Stratified subset: for every class k, `per_class[k]` rows chosen by a seeded shuffle,
/// emitted in original order.
inline Dataset subsample(const Dataset& ds, std::span<const std::size_t> per_class, std::uint64_t seed) {
  if (per_class.size() != static_cast<std::size_t>(ds.num_classes))
    throw InvalidArgument("subsample: need one count per class");
  std::vector<std::vector<std::size_t>> by_class(per_class.size());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    if (per_class[k] > by_class[k].size())
      throw InvalidArgument("subsample: class " + std::to_string(k) + " has " +
                            std::to_string(by_class[k].size()) + " samples, " +
                            std::to_string(per_class[k]) + " requested");
    Rng rng(derive_seed(seed, k));
    rng.shuffle(std::span<std::size_t>(by_class[k]));
    chosen.insert(chosen.end(), by_class[k].begin(), by_class[k].begin() + static_cast<std::ptrdiff_t>(per_class[k]));
  }
  std::sort(chosen.begin(), chosen.end());
  return take(ds, chosen);
}

inline Dataset subsample(const Dataset& ds, std::size_t each, std::uint64_t seed) {
  const std::vector<std::size_t> counts(static_cast<std::size_t>(ds.num_classes), each);
  return subsample(ds, counts, seed);
}

/// CSV with header "x0,x1,...,label"; doubles printed with 17 significant digits.
inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  for (std::size_t c = 0; c < ds.dim(); ++c) out << 'x' << c << ',';
  out << "label\n";
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.features.row(r)) out << v << ',';
    out << ds.labels[r] << '\n';
  }
}

/// Reads the CSV written above. num_classes = max label + 1 unless given.
inline Dataset read_dataset_csv(const std::filesystem::path& path, int num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (cols == 0 || line.substr(line.rfind(',') + 1) != "label")
    throw ParseError(path.string() + ": header must end with ',label'");
  std::vector<double> values;
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        if (c < cols) {
          values.push_back(std::stod(cell, &used));
        } else if (c == cols) {
          ds.labels.push_back(std::stoi(cell, &used));
        }
        if (used != cell.size()) throw ParseError("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      ++c;
    }
    if (c != cols + 1) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
  }
  ds.features = Tensor(ds.labels.size(), cols, std::move(values));
  int max_label = -1;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.feature_range = bounding_range(ds.features);
  ds.validate();
  return ds;
}

}  // namespace sploss
