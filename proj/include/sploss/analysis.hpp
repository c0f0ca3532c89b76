#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sploss/datasets.hpp"
#include "sploss/error.hpp"
#include "sploss/losses.hpp"
#include "sploss/network.hpp"
#include "sploss/objective.hpp"
#include "sploss/rng.hpp"

namespace sploss {

struct Region {
  double x_lo = -1.0;
  double x_hi = 1.0;
  double y_lo = -1.0;
  double y_hi = 1.0;

  void validate() const {
    if (!(x_lo < x_hi) || !(y_lo < y_hi)) throw InvalidArgument("region bounds must be increasing");
  }

  /// Bounding box of the data grown by `pad` on every side.
  static Region around(const Dataset& ds, double pad) {
    if (ds.dim() != 2) throw InvalidArgument("region: dataset is not 2-D");
    const auto r = bounding_range(ds.features);
    return {r[0].first - pad, r[0].second + pad, r[1].first - pad, r[1].second + pad};
  }
};

/// Cell (i, j): column i along x, row j along y, centre at the cell midpoint.
struct ConfidenceGrid {
  Region region;
  std::size_t resolution = 0;
  std::vector<int> predicted;      // j * resolution + i
  std::vector<double> confidence;  // max class probability
  std::vector<bool> boundary;      // argmax differs from a 4-neighbour

  std::size_t index(std::size_t i, std::size_t j) const { return j * resolution + i; }
  double cell_x(std::size_t i) const {
    return region.x_lo + (static_cast<double>(i) + 0.5) * (region.x_hi - region.x_lo) / static_cast<double>(resolution);
  }
  double cell_y(std::size_t j) const {
    return region.y_lo + (static_cast<double>(j) + 0.5) * (region.y_hi - region.y_lo) / static_cast<double>(resolution);
  }
  double cell_width() const { return (region.x_hi - region.x_lo) / static_cast<double>(resolution); }
  double cell_height() const { return (region.y_hi - region.y_lo) / static_cast<double>(resolution); }

  std::vector<std::pair<double, double>> boundary_points() const {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t j = 0; j < resolution; ++j)
      for (std::size_t i = 0; i < resolution; ++i)
        if (boundary[index(i, j)]) pts.emplace_back(cell_x(i), cell_y(j));
    return pts;
  }
};

inline ConfidenceGrid confidence_grid(const Network& net, const Region& region, std::size_t resolution) {
  if (net.input_dim() != 2) throw InvalidArgument("confidence_grid: model input is not 2-D");
  if (resolution < 2) throw InvalidArgument("confidence_grid: resolution must be >= 2");
  region.validate();
  ConfidenceGrid g;
  g.region = region;
  g.resolution = resolution;
  const std::size_t cells = resolution * resolution;
  Tensor pts(cells, 2);
  for (std::size_t j = 0; j < resolution; ++j)
    for (std::size_t i = 0; i < resolution; ++i) {
      pts(g.index(i, j), 0) = g.cell_x(i);
      pts(g.index(i, j), 1) = g.cell_y(j);
    }
  const Tensor z = logits(net, pts);
  g.predicted.resize(cells);
  g.confidence.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const auto p = softmax(z.row(c));
    const auto it = std::max_element(p.begin(), p.end());
    g.predicted[c] = static_cast<int>(it - p.begin());
    g.confidence[c] = *it;
  }
  g.boundary.assign(cells, false);
  for (std::size_t j = 0; j < resolution; ++j)
    for (std::size_t i = 0; i < resolution; ++i) {
      const int k = g.predicted[g.index(i, j)];
      const bool edge = (i > 0 && g.predicted[g.index(i - 1, j)] != k) ||
                        (i + 1 < resolution && g.predicted[g.index(i + 1, j)] != k) ||
                        (j > 0 && g.predicted[g.index(i, j - 1)] != k) ||
                        (j + 1 < resolution && g.predicted[g.index(i, j + 1)] != k);
      g.boundary[g.index(i, j)] = edge;
    }
  return g;
}

/// x,y,predicted,confidence,boundary
inline void write_grid_csv(const ConfidenceGrid& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "x,y,predicted,confidence,boundary\n";
  for (std::size_t j = 0; j < g.resolution; ++j)
    for (std::size_t i = 0; i < g.resolution; ++i) {
      const std::size_t c = g.index(i, j);
      out << g.cell_x(i) << ',' << g.cell_y(j) << ',' << g.predicted[c] << ',' << g.confidence[c] << ','
          << (g.boundary[c] ? 1 : 0) << '\n';
    }
}

struct BoundaryReport {
  std::size_t boundary_cells = 0;
  std::vector<double> class_margin;  // min distance of each class's samples to a boundary cell centre
  double margin_balance = 0.0;       // min / max over class_margin
  double confidence_band_width = 0.0;  // fraction of cells with max probability < threshold
  double threshold = 0.9;
};

/// Margins are measured against boundary cell centres on the grid.
inline BoundaryReport margin_report(const ConfidenceGrid& grid, const Dataset& ds, double threshold) {
  if (ds.dim() != 2) throw InvalidArgument("margin_report: dataset is not 2-D");
  const auto pts = grid.boundary_points();
  if (pts.empty()) throw InvalidArgument("margin_report: no boundary in region");
  BoundaryReport rep;
  rep.threshold = threshold;
  rep.boundary_cells = pts.size();
  rep.class_margin.assign(static_cast<std::size_t>(ds.num_classes), std::numeric_limits<double>::infinity());
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const double x = ds.features(s, 0);
    const double y = ds.features(s, 1);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [bx, by] : pts) best = std::min(best, (bx - x) * (bx - x) + (by - y) * (by - y));
    auto& m = rep.class_margin[static_cast<std::size_t>(ds.labels[s])];
    m = std::min(m, std::sqrt(best));
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (double m : rep.class_margin) {
    if (!std::isfinite(m)) continue;  // class absent from the dataset
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  rep.margin_balance = hi > 0.0 ? lo / hi : 1.0;
  std::size_t low = 0;
  for (double c : grid.confidence) low += c < threshold ? 1 : 0;
  rep.confidence_band_width = static_cast<double>(low) / static_cast<double>(grid.confidence.size());
  return rep;
}

inline BoundaryReport margin_report(const Network& net, const Dataset& ds, const Region& region,
                                    std::size_t resolution, double threshold = 0.9) {
  return margin_report(confidence_grid(net, region, resolution), ds, threshold);
}

/// Flat key=value summary.
inline void write_boundary_report(const BoundaryReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "boundary_cells=" << r.boundary_cells << '\n';
  for (std::size_t k = 0; k < r.class_margin.size(); ++k) out << "margin_class_" << k << '=' << r.class_margin[k] << '\n';
  out << "margin_balance=" << r.margin_balance << '\n';
  out << "confidence_threshold=" << r.threshold << '\n';
  out << "confidence_band_width=" << r.confidence_band_width << '\n';
}

/// Last-layer inputs u(x) for every row of x.
inline Tensor features(const Network& net, const Tensor& x) { return forward(net, x).features(); }

/// |z_0(u_bar) - z_1(u_bar)| / ||w_0 - w_1|| at u_bar = (u0 + u1) / 2: the distance, in
/// feature space, from the midpoint of two features to the binary head's boundary.
inline double midpoint_deviation(const DenseLayer& head, std::span<const double> u0, std::span<const double> u1) {
  if (head.out_dim() != 2) throw InvalidArgument("midpoint_deviation: head is not binary");
  if (u0.size() != head.in_dim() || u1.size() != head.in_dim())
    throw DimensionError("midpoint_deviation: feature width does not match head");
  double gap = head.bias(0, 0) - head.bias(1, 0);
  double norm2 = 0.0;
  for (std::size_t c = 0; c < head.in_dim(); ++c) {
    const double dw = head.weights(0, c) - head.weights(1, c);
    gap += dw * 0.5 * (u0[c] + u1[c]);
    norm2 += dw * dw;
  }
  if (norm2 == 0.0) throw InvalidArgument("midpoint_deviation: degenerate head (w0 == w1)");
  return std::abs(gap) / std::sqrt(norm2);
}

inline double midpoint_deviation(const Network& net, std::span<const double> u0, std::span<const double> u1) {
  return midpoint_deviation(net.head(), u0, u1);
}

struct LandscapeGrid {
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
  double span = 1.0;
  std::size_t resolution = 0;
  std::vector<double> coords;  // shared by both axes: span * (2i - (res-1)) / (res-1)
  std::vector<double> loss;    // jb * resolution + ia

  double at(std::size_t ia, std::size_t jb) const { return loss[jb * resolution + ia]; }
  bool has_center() const { return resolution % 2 == 1; }
  std::size_t center() const { return resolution / 2; }
};

namespace detail {

/// Gaussian direction per weight matrix, rescaled to that matrix's Frobenius norm;
/// bias directions are zero.
inline std::vector<Tensor> layer_normalized_direction(const Network& net, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> dir;
  for (const auto& l : net.layers()) {
    Tensor d(l.weights.rows(), l.weights.cols());
    for (double& v : d.data()) v = rng.normal();
    const double dn = std::sqrt(d.squared_norm());
    const double wn = std::sqrt(l.weights.squared_norm());
    if (dn > 0.0) d *= wn / dn;
    dir.push_back(std::move(d));
  }
  return dir;
}

}  // namespace detail

/// Mean loss over `ds` at theta + a * delta + b * eta for a, b on a symmetric grid.
inline LandscapeGrid landscape(const Network& net, const LossSpec& loss, const Dataset& ds, double span,
                               std::size_t resolution, std::uint64_t seed_a, std::uint64_t seed_b) {
  if (resolution < 2) throw InvalidArgument("landscape: resolution must be >= 2");
  if (!(span > 0.0)) throw InvalidArgument("landscape: span must be > 0");
  LandscapeGrid g;
  g.seed_a = seed_a;
  g.seed_b = seed_b;
  g.span = span;
  g.resolution = resolution;
  const auto da = detail::layer_normalized_direction(net, seed_a);
  const auto db = detail::layer_normalized_direction(net, seed_b);
  const double denom = static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i)
    g.coords.push_back(span * (2.0 * static_cast<double>(i) - denom) / denom);
  g.loss.resize(resolution * resolution);
  Network probe = net;
  for (std::size_t jb = 0; jb < resolution; ++jb)
    for (std::size_t ia = 0; ia < resolution; ++ia) {
      const double a = g.coords[ia];
      const double b = g.coords[jb];
      for (std::size_t l = 0; l < net.depth(); ++l) {
        auto& dst = probe.mutable_layer(l).weights;
        auto w = net.layer(l).weights.data();
        auto pa = da[l].data();
        auto pb = db[l].data();
        auto out = dst.data();
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = w[k] + a * pa[k] + b * pb[k];
      }
      g.loss[jb * resolution + ia] = mean_loss(probe, loss, ds.features, ds.labels);
    }
  return g;
}

/// Centre strictly below all 8 neighbours (odd resolution only).
inline bool center_is_strict_local_min(const LandscapeGrid& g) {
  if (!g.has_center()) return false;
  const std::size_t c = g.center();
  const double v = g.at(c, c);
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      if (di == 0 && dj == 0) continue;
      if (!(g.at(c + static_cast<std::size_t>(di), c + static_cast<std::size_t>(dj)) > v)) return false;
    }
  return true;
}

/// a,b,loss
inline void write_landscape_csv(const LandscapeGrid& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "a,b,loss\n";
  for (std::size_t jb = 0; jb < g.resolution; ++jb)
    for (std::size_t ia = 0; ia < g.resolution; ++ia)
      out << g.coords[ia] << ',' << g.coords[jb] << ',' << g.at(ia, jb) << '\n';
}

/// Last-layer parameters (weights row-major, then bias) recorded once per epoch,
/// starting with the initial state.
struct WeightTrace {
  std::vector<std::size_t> epochs;
  std::vector<std::vector<double>> snapshots;

  void record(std::size_t epoch, const Network& net) {
    const auto& h = net.head();
    std::vector<double> s(h.weights.data().begin(), h.weights.data().end());
    s.insert(s.end(), h.bias.data().begin(), h.bias.data().end());
    epochs.push_back(epoch);
    snapshots.push_back(std::move(s));
  }

  std::size_t size() const { return snapshots.size(); }

  double final_max_abs() const {
    double m = 0.0;
    if (snapshots.empty()) return m;
    for (double v : snapshots.back()) m = std::max(m, std::abs(v));
    return m;
  }

  /// max_k |w_k(last) - w_k(last - window)|, window clamped to the trace length.
  double drift_over(std::size_t window) const {
    if (snapshots.size() < 2) return 0.0;
    window = std::min(window, snapshots.size() - 1);
    const auto& a = snapshots[snapshots.size() - 1 - window];
    const auto& b = snapshots.back();
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(b[k] - a[k]));
    return m;
  }

  /// Drift over the final 10% of recorded epochs (at least one).
  double tail_drift() const {
    if (snapshots.size() < 2) return 0.0;
    const std::size_t span = snapshots.size() - 1;
    return drift_over(std::max<std::size_t>(1, span / 10));
  }
};

/// epoch,index,value
inline void write_trace_csv(const WeightTrace& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epoch,index,value\n";
  for (std::size_t s = 0; s < t.size(); ++s)
    for (std::size_t k = 0; k < t.snapshots[s].size(); ++k) out << t.epochs[s] << ',' << k << ',' << t.snapshots[s][k] << '\n';
}

}  // namespace sploss
