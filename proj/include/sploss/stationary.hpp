#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "sploss/error.hpp"
#include "sploss/losses.hpp"

namespace sploss {

/// Bisection for a root of f on [lo, hi]; f(lo) and f(hi) must differ in sign.
/// Stops when the bracket can no longer be halved in double precision.
template <class F>
double bisect(F&& f, double lo, double hi, int max_iter = 2000) {
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo < 0.0) == (fhi < 0.0)) throw InvalidArgument("bisect: no sign change on bracket");
  for (int i = 0; i < max_iter; ++i) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  // the endpoint with the smaller residual
  return std::abs(f(lo)) <= std::abs(f(hi)) ? lo : hi;
}

struct StationaryPointResult {
  bool exists = false;
  std::optional<double> xi_star;
  double z_gap = 0.0;  // z_y - z_other = log(xi* / (1 - xi*)); z = [z_gap/2, -z_gap/2]
  std::pair<double, double> bracket{1e-6, 1.0 - 1e-6};
  std::string note;
};

/// Closed forms for the SP-CE variants (binary, scalar regularizer):
///   single_term:     xi* = 1 / sqrt(2 eta),                 needs eta > 1/2
///   with_complement: xi* = (eta + sqrt(eta (4 + eta))) / (4 eta),  needs eta > 1/2
/// grad_starvation maps onto with_complement at eta / 2.
inline std::optional<double> closed_form_stationary_point(const LossSpec& spec) {
  if (spec.full_vector && spec.kind == LossKind::sp_ce) return std::nullopt;
  auto complement = [](double eta) { return (eta + std::sqrt(eta * (4.0 + eta))) / (4.0 * eta); };
  if (spec.kind == LossKind::sp_ce) {
    if (!(spec.eta > 0.0)) return std::nullopt;
    if (spec.variant == SpCeVariant::single_term) {
      if (!(spec.eta > 0.5)) return std::nullopt;
      return 1.0 / std::sqrt(2.0 * spec.eta);
    }
    const double xi = complement(spec.eta);
    if (!(xi < 1.0)) return std::nullopt;
    return xi;
  }
  if (spec.kind == LossKind::grad_starvation && spec.eta > 0.0) {
    const double xi = complement(0.5 * spec.eta);
    if (!(xi < 1.0)) return std::nullopt;
    return xi;
  }
  return std::nullopt;
}

/// Solves dL/dz_y = 0 over xi in (1e-6, 1 - 1e-6) by bisection on the binary
/// true-class gradient. No sign change means no interior stationary point.
inline StationaryPointResult find_stationary_point(const LossSpec& spec) {
  StationaryPointResult out;
  if (spec.full_vector && (spec.kind == LossKind::sp_ce || spec.kind == LossKind::sp_focal)) {
    // For K = 2 the full-vector regularizer is still a function of xi_y alone.
    out.note = "full-vector regularizer evaluated in the binary case";
  }
  auto g = [&](double xi) {
    if (spec.full_vector) {
      const double probs[2] = {xi, 1.0 - xi};
      return evaluate(spec, probs, 0).grad[0];
    }
    return true_class_gradient(spec, xi);
  };
  const auto [lo, hi] = out.bracket;
  const double glo = g(lo);
  const double ghi = g(hi);
  if ((glo < 0.0) == (ghi < 0.0) || glo == 0.0 || ghi == 0.0) {
    out.exists = false;
    if (!spec.stationary_family()) {
      out.note = std::string(to_string(spec.kind)) +
                 " has a strictly negative true-class gradient: no stationary point";
    } else {
      out.note = "true-class gradient does not change sign on the bracket";
      if (spec.kind == LossKind::sp_ce && !spec.full_vector) out.note += " (sp_ce needs eta > 0.5)";
      if (spec.kind == LossKind::grad_starvation) out.note += " (grad_starvation needs eta > 1)";
    }
    return out;
  }
  const double xi = bisect(g, lo, hi);
  out.exists = true;
  out.xi_star = xi;
  out.z_gap = std::log(xi / (1.0 - xi));
  return out;
}

}  // namespace sploss
