#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/tensor.hpp"

namespace sploss {

enum class LossKind { ce, focal, sp_ce, sp_focal, grad_starvation };

/// Regularizer shape of the stationary-point CE loss.
///   single_term:     -log xi_y + eta * xi_y^2
///   with_complement: -log xi_y + eta * (xi_y^2 + (1 - xi_y)^2)
enum class SpCeVariant { single_term, with_complement };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::focal: return "focal";
    case LossKind::sp_ce: return "sp_ce";
    case LossKind::sp_focal: return "sp_focal";
    case LossKind::grad_starvation: return "grad_starvation";
  }
  return "?";
}

inline const char* to_string(SpCeVariant v) {
  return v == SpCeVariant::single_term ? "single_term" : "with_complement";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "focal") return LossKind::focal;
  if (s == "sp_ce") return LossKind::sp_ce;
  if (s == "sp_focal") return LossKind::sp_focal;
  if (s == "grad_starvation") return LossKind::grad_starvation;
  throw InvalidArgument("unknown loss kind '" + s + "'");
}

inline SpCeVariant parse_sp_ce_variant(const std::string& s) {
  if (s == "single_term") return SpCeVariant::single_term;
  if (s == "with_complement") return SpCeVariant::with_complement;
  throw InvalidArgument("unknown sp_ce variant '" + s + "'");
}

struct LossSpec {
  LossKind kind = LossKind::ce;
  double alpha = 0.25;
  double gamma = 2.0;
  double eta = 0.0;
  SpCeVariant variant = SpCeVariant::with_complement;
  /// Apply the regularizer to every class probability instead of xi_y alone.
  /// Closed-form stationary points assume the default (false).
  bool full_vector = false;

  static LossSpec cross_entropy() { return {}; }
  static LossSpec focal_loss(double alpha, double gamma) {
    LossSpec s;
    s.kind = LossKind::focal;
    s.alpha = alpha;
    s.gamma = gamma;
    return s;
  }
  static LossSpec sp_ce_loss(double eta, SpCeVariant variant) {
    LossSpec s;
    s.kind = LossKind::sp_ce;
    s.eta = eta;
    s.variant = variant;
    return s;
  }
  static LossSpec sp_focal_loss(double alpha, double gamma, double eta) {
    LossSpec s;
    s.kind = LossKind::sp_focal;
    s.alpha = alpha;
    s.gamma = gamma;
    s.eta = eta;
    return s;
  }
  static LossSpec grad_starvation_loss(double eta) {
    LossSpec s;
    s.kind = LossKind::grad_starvation;
    s.eta = eta;
    return s;
  }

  bool uses_focal_terms() const { return kind == LossKind::focal || kind == LossKind::sp_focal; }
  bool stationary_family() const {
    return kind == LossKind::sp_ce || kind == LossKind::sp_focal || kind == LossKind::grad_starvation;
  }

  void validate() const {
    if (uses_focal_terms()) {
      if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("focal alpha must be > 0");
      if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("focal gamma must be >= 0");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidArgument("eta must be >= 0");
    if (stationary_family() && eta == 0.0)
      throw InvalidArgument(std::string(to_string(kind)) + " needs eta > 0");
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (uses_focal_terms()) os << " alpha=" << alpha << " gamma=" << gamma;
    if (kind != LossKind::ce && kind != LossKind::focal) os << " eta=" << eta;
    if (kind == LossKind::sp_ce) os << " variant=" << to_string(variant);
    if (full_vector && (kind == LossKind::sp_ce || kind == LossKind::sp_focal)) os << " full_vector";
    return os.str();
  }
};

/// Probability floor applied before taking logarithms; hits are counted.
inline constexpr double kProbabilityFloor = 1e-300;

/// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp(z[k] - m);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // dL/dz, one entry per logit
  bool clamped = false;
};

namespace detail {

struct TrueClass {
  double xi;    // xi_y
  double comp;  // 1 - xi_y, summed from the other classes
  double log_xi;
  bool clamped;
};

inline TrueClass true_class(std::span<const double> probs, std::size_t y) {
  if (y >= probs.size()) throw InvalidArgument("label out of range for probability vector");
  TrueClass t{};
  t.xi = probs[y];
  double c = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k)
    if (k != y) c += probs[k];
  t.comp = c;
  t.clamped = !(t.xi >= kProbabilityFloor);
  t.log_xi = std::log(t.clamped ? kProbabilityFloor : t.xi);
  return t;
}

/// Turns s = xi_y * dL/dxi_y into dL/dz through the softmax Jacobian:
/// dL/dz_y = s (1 - xi_y), dL/dz_k = -s xi_k.
inline std::vector<double> scalar_chain(std::span<const double> probs, std::size_t y, double s,
                                        double comp) {
  std::vector<double> g(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) g[k] = -s * probs[k];
  g[y] = s * comp;
  return g;
}

/// Adds eta * sum_k f(xi_k) to `out`; fprime is f'.
/// dR/dz_j = eta * xi_j * (f'(xi_j) - sum_i xi_i f'(xi_i)).
template <class F, class FPrime>
void add_vector_regularizer(std::span<const double> probs, double eta, F f, FPrime fprime,
                            LossValue& out) {
  double weighted = 0.0;
  for (double p : probs) {
    out.value += eta * f(p);
    weighted += p * fprime(p);
  }
  for (std::size_t j = 0; j < probs.size(); ++j)
    out.grad[j] += eta * probs[j] * (fprime(probs[j]) - weighted);
}

/// s-factor of the focal term -alpha (1 - xi)^gamma log xi.
inline double focal_s(double xi, double comp, double log_xi, double alpha, double gamma) {
  const double powg = gamma == 0.0 ? 1.0 : std::pow(comp, gamma);
  double lead = 0.0;
  if (gamma != 0.0 && comp > 0.0) lead = gamma * std::pow(comp, gamma - 1.0) * xi * log_xi;
  return alpha * (lead - powg);
}

inline void require_eta_positive(double eta, const char* what) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument(std::string(what) + ": eta must be > 0");
}

}  // namespace detail

/// -log xi_y
inline LossValue ce(std::span<const double> probs, std::size_t y) {
  const auto t = detail::true_class(probs, y);
  return {-t.log_xi, detail::scalar_chain(probs, y, -1.0, t.comp), t.clamped};
}

/// -alpha (1 - xi_y)^gamma log xi_y
inline LossValue focal(std::span<const double> probs, std::size_t y, double alpha, double gamma) {
  if (!(alpha > 0.0)) throw InvalidArgument("focal: alpha must be > 0");
  if (!(gamma >= 0.0)) throw InvalidArgument("focal: gamma must be >= 0");
  const auto t = detail::true_class(probs, y);
  const double powg = gamma == 0.0 ? 1.0 : std::pow(t.comp, gamma);
  const double s = detail::focal_s(t.xi, t.comp, t.log_xi, alpha, gamma);
  return {-alpha * powg * t.log_xi, detail::scalar_chain(probs, y, s, t.comp), t.clamped};
}

inline LossValue sp_ce(std::span<const double> probs, std::size_t y, double eta, SpCeVariant variant,
                       bool full_vector = false) {
  if (!(eta >= 0.0)) throw InvalidArgument("sp_ce: eta must be >= 0");
  const auto t = detail::true_class(probs, y);
  if (full_vector) {
    LossValue out{-t.log_xi, detail::scalar_chain(probs, y, -1.0, t.comp), t.clamped};
    if (variant == SpCeVariant::single_term) {
      detail::add_vector_regularizer(
          probs, eta, [](double p) { return p * p; }, [](double p) { return 2.0 * p; }, out);
    } else {
      detail::add_vector_regularizer(
          probs, eta, [](double p) { return p * p + (1.0 - p) * (1.0 - p); },
          [](double p) { return 4.0 * p - 2.0; }, out);
    }
    return out;
  }
  double value = -t.log_xi;
  double s = -1.0;
  if (variant == SpCeVariant::single_term) {
    value += eta * t.xi * t.xi;
    s += 2.0 * eta * t.xi * t.xi;
  } else {
    value += eta * (t.xi * t.xi + t.comp * t.comp);
    s += 2.0 * eta * t.xi * (t.xi - t.comp);
  }
  return {value, detail::scalar_chain(probs, y, s, t.comp), t.clamped};
}

/// -alpha (1 - xi_y)^gamma log xi_y + eta xi_y^2
inline LossValue sp_focal(std::span<const double> probs, std::size_t y, double alpha, double gamma,
                          double eta, bool full_vector = false) {
  if (!(eta >= 0.0)) throw InvalidArgument("sp_focal: eta must be >= 0");
  LossValue out = focal(probs, y, alpha, gamma);
  if (full_vector) {
    detail::add_vector_regularizer(
        probs, eta, [](double p) { return p * p; }, [](double p) { return 2.0 * p; }, out);
    return out;
  }
  const auto t = detail::true_class(probs, y);
  out.value += eta * t.xi * t.xi;
  const auto reg = detail::scalar_chain(probs, y, 2.0 * eta * t.xi * t.xi, t.comp);
  for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += reg[k];
  return out;
}

/// Binary only: log(1 + exp(-m)) + (eta / 2) ||xi||^2 where m = z_y - z_other is
/// recovered from the probabilities as log xi_y - log xi_other. With two classes
/// ||xi||^2 = xi_y^2 + (1 - xi_y)^2, so this equals sp_ce(with_complement) at eta / 2.
inline LossValue grad_starvation(std::span<const double> probs, std::size_t y, double eta) {
  if (probs.size() != 2) throw InvalidArgument("grad_starvation: defined for two classes only");
  if (!(eta >= 0.0)) throw InvalidArgument("grad_starvation: eta must be >= 0");
  const auto t = detail::true_class(probs, y);
  const double other = probs[1 - y];
  const bool other_clamped = !(other >= kProbabilityFloor);
  const double margin = t.log_xi - std::log(other_clamped ? kProbabilityFloor : other);
  // softplus(-m), stable for either sign of m
  const double bce = margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  LossValue out{bce, detail::scalar_chain(probs, y, -1.0, t.comp), t.clamped || other_clamped};
  detail::add_vector_regularizer(
      probs, 0.5 * eta, [](double p) { return p * p; }, [](double p) { return 2.0 * p; }, out);
  return out;
}

inline LossValue evaluate(const LossSpec& spec, std::span<const double> probs, std::size_t y) {
  switch (spec.kind) {
    case LossKind::ce: return ce(probs, y);
    case LossKind::focal: return focal(probs, y, spec.alpha, spec.gamma);
    case LossKind::sp_ce: return sp_ce(probs, y, spec.eta, spec.variant, spec.full_vector);
    case LossKind::sp_focal: return sp_focal(probs, y, spec.alpha, spec.gamma, spec.eta, spec.full_vector);
    case LossKind::grad_starvation: return grad_starvation(probs, y, spec.eta);
  }
  throw InvalidArgument("unknown loss kind");
}

inline LossValue evaluate_logits(const LossSpec& spec, std::span<const double> z, std::size_t y) {
  return evaluate(spec, softmax(z), y);
}

/// Binary-case loss as a function of xi = xi_y (the other class holds 1 - xi).
inline double loss_of_xi(const LossSpec& spec, double xi) {
  const double probs[2] = {xi, 1.0 - xi};
  return evaluate(spec, probs, 0).value;
}

/// dL/dz_y as a function of xi = xi_y in the binary case, written out in closed form:
///   ce:              xi - 1
///   focal:           alpha (1-xi)^gamma (gamma xi log xi - 1 + xi)
///   sp_ce single:    (xi - 1)(1 - 2 eta xi^2)
///   sp_ce compl.:    (1 - xi)(-1 + 2 eta xi (2 xi - 1))
///   sp_focal:        focal + 2 eta xi^2 (1 - xi)
///   grad_starvation: sp_ce compl. at eta / 2
inline double true_class_gradient(const LossSpec& spec, double xi) {
  const double c = 1.0 - xi;
  const double lx = std::log(xi);
  auto focal_term = [&] {
    const double powg = spec.gamma == 0.0 ? 1.0 : std::pow(c, spec.gamma);
    return spec.alpha * powg * (spec.gamma * xi * lx - 1.0 + xi);
  };
  switch (spec.kind) {
    case LossKind::ce: return xi - 1.0;
    case LossKind::focal: return focal_term();
    case LossKind::sp_ce:
      if (spec.variant == SpCeVariant::single_term) return (xi - 1.0) * (1.0 - 2.0 * spec.eta * xi * xi);
      return c * (-1.0 + 2.0 * spec.eta * xi * (2.0 * xi - 1.0));
    case LossKind::sp_focal: return focal_term() + 2.0 * spec.eta * xi * xi * c;
    case LossKind::grad_starvation: return c * (-1.0 + spec.eta * xi * (2.0 * xi - 1.0));
  }
  throw InvalidArgument("unknown loss kind");
}

struct BatchLoss {
  double mean = 0.0;
  Tensor dlogits;  // gradient of the mean loss
  std::size_t clamp_count = 0;
};

/// Mean loss over rows of `z` and its gradient; `per_sample` skips the 1/n scaling
/// so each row carries the gradient of its own loss.
inline BatchLoss batch_loss(const LossSpec& spec, const Tensor& z, std::span<const int> labels,
                            bool per_sample = false) {
  if (labels.size() != z.rows())
    throw DimensionError("batch_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(z.rows()) + " rows");
  BatchLoss out;
  out.dlogits = Tensor(z.rows(), z.cols());
  if (z.rows() == 0) return out;
  const double scale = per_sample ? 1.0 : 1.0 / static_cast<double>(z.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= z.cols())
      throw InvalidArgument("label " + std::to_string(labels[r]) + " out of range");
    const LossValue v = evaluate_logits(spec, z.row(r), static_cast<std::size_t>(labels[r]));
    total += v.value;
    if (v.clamped) ++out.clamp_count;
    auto g = out.dlogits.row(r);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * v.grad[k];
  }
  out.mean = total / static_cast<double>(z.rows());
  return out;
}

}  // namespace sploss
