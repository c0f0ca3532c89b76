#pragma once

// White-box L-infinity attacks. Every attack ascends the loss through the sign of its
// input gradient (sign(0) = 0) and keeps the result inside both the eps-ball around
// the clean input and the valid feature range [clip_lo, clip_hi].
//
//   fgsm:  x' = clip(x + eps * sign(g))
//   bim:   repeat x <- ball(clip(x + alpha * sign(g))), starting at x
//   pgd:   bim from a uniform random point of the eps-ball (when random_start)
//   upgd:  pgd whose step direction is sign(m_t), m_t = mu * m_{t-1} + g / ||g||_1
//          (momentum accumulation of normalized gradients; mu = 0 gives pgd)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/losses.hpp"
#include "sploss/network.hpp"
#include "sploss/objective.hpp"
#include "sploss/rng.hpp"

namespace sploss {

enum class AttackKind { fgsm, bim, pgd, upgd };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::bim: return "bim";
    case AttackKind::pgd: return "pgd";
    case AttackKind::upgd: return "upgd";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "bim") return AttackKind::bim;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "upgd") return AttackKind::upgd;
  throw InvalidArgument("unknown attack '" + s + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 1.0 / 255.0;
  std::size_t steps = 40;
  bool random_start = true;
  double momentum = 0.0;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::uint64_t seed = 0;
  /// Loss the attacker ascends; unset means the model's training loss.
  std::optional<LossSpec> attack_loss;
  std::size_t batch_size = 500;

  /// Image-data settings: fgsm eps 0.007; bim and pgd eps 8/255; upgd eps 4/255;
  /// 40 iterations of step 1/255.
  static AttackConfig standard(AttackKind kind) {
    AttackConfig c;
    c.kind = kind;
    switch (kind) {
      case AttackKind::fgsm:
        c.epsilon = 0.007;
        c.step_size = 0.007;
        c.steps = 1;
        c.random_start = false;
        break;
      case AttackKind::bim:
        c.epsilon = 8.0 / 255.0;
        c.random_start = false;
        break;
      case AttackKind::pgd: c.epsilon = 8.0 / 255.0; break;
      case AttackKind::upgd:
        c.epsilon = 4.0 / 255.0;
        c.momentum = 1.0;
        break;
    }
    return c;
  }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("attack epsilon must be >= 0");
    if (kind != AttackKind::fgsm) {
      if (!(step_size > 0.0)) throw InvalidArgument("iterative attack step_size must be > 0");
      if (steps < 1) throw InvalidArgument("iterative attack needs steps >= 1");
    }
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("momentum must lie in [0, 1]");
    if (!(clip_lo <= clip_hi)) throw InvalidArgument("clip range is empty");
    if (batch_size == 0) throw InvalidArgument("attack batch_size must be >= 1");
    if (attack_loss) attack_loss->validate();
  }
};

struct AttackResult {
  Tensor adversarial;
  std::vector<int> clean_pred;
  std::vector<int> adv_pred;
  std::vector<bool> clean_correct;
  std::vector<bool> adv_correct;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  double max_perturbation_seen = 0.0;
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Tensor rows_of(const Tensor& x, std::size_t start, std::size_t n) {
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols());
  return Tensor(n, x.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * x.cols())));
}

inline void check_inputs(const Network& net, const Tensor& x, std::span<const int> y) {
  if (x.cols() != net.input_dim())
    throw DimensionError("attack: inputs have " + std::to_string(x.cols()) + " features, network expects " +
                         std::to_string(net.input_dim()));
  if (y.size() != x.rows()) throw DimensionError("attack: label count does not match rows");
}

/// Attacks rows [start, start + n) of x in place of `adv` (same shape).
inline void attack_chunk(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                         const AttackConfig& cfg, bool random_start, double momentum, std::size_t start,
                         Tensor& adv) {
  const std::size_t d = x.cols();
  const Tensor clean = rows_of(x, start, y.size());
  Tensor cur = clean;
  const double eps = cfg.epsilon;
  auto clip = [&](double v) { return std::clamp(v, cfg.clip_lo, cfg.clip_hi); };

  if (cfg.kind == AttackKind::fgsm) {
    const Tensor g = input_gradient(net, loss, cur, y);
    for (std::size_t i = 0; i < cur.size(); ++i) cur.data()[i] = clip(clean.data()[i] + eps * sign(g.data()[i]));
  } else {
    if (random_start) {
      for (std::size_t r = 0; r < cur.rows(); ++r) {
        Rng rng(derive_seed(cfg.seed, start + r));
        auto row = cur.row(r);
        auto base = clean.row(r);
        for (std::size_t c = 0; c < d; ++c) row[c] = clip(base[c] + rng.uniform(-eps, eps));
      }
    }
    Tensor accum;
    const bool use_momentum = cfg.kind == AttackKind::upgd;
    if (use_momentum) accum = Tensor(cur.rows(), d);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const Tensor g = input_gradient(net, loss, cur, y);
      for (std::size_t r = 0; r < cur.rows(); ++r) {
        auto row = cur.row(r);
        auto base = clean.row(r);
        auto grow = g.row(r);
        std::span<const double> dir = grow;
        if (use_momentum) {
          double l1 = 0.0;
          for (double v : grow) l1 += std::abs(v);
          auto m = accum.row(r);
          for (std::size_t c = 0; c < d; ++c) m[c] = momentum * m[c] + (l1 > 0.0 ? grow[c] / l1 : 0.0);
          dir = m;
        }
        for (std::size_t c = 0; c < d; ++c) {
          const double stepped = clip(row[c] + cfg.step_size * sign(dir[c]));
          row[c] = std::min(std::max(stepped, base[c] - eps), base[c] + eps);
        }
      }
    }
  }
  std::copy(cur.data().begin(), cur.data().end(),
            adv.data().begin() + static_cast<std::ptrdiff_t>(start * d));
}

inline AttackResult run(const Network& net, const LossSpec& training_loss, const Tensor& x,
                        std::span<const int> y, const AttackConfig& cfg, bool random_start, double momentum) {
  cfg.validate();
  check_inputs(net, x, y);
  const LossSpec& loss = cfg.attack_loss ? *cfg.attack_loss : training_loss;
  AttackResult res;
  res.adversarial = Tensor(x.rows(), x.cols());
  for (std::size_t start = 0; start < x.rows(); start += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, x.rows() - start);
    attack_chunk(net, loss, x, y.subspan(start, n), cfg, random_start, momentum, start, res.adversarial);
  }
  res.clean_pred = predict(net, x);
  res.adv_pred = predict(net, res.adversarial);
  std::size_t clean_hits = 0;
  std::size_t adv_hits = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    res.clean_correct.push_back(res.clean_pred[i] == y[i]);
    res.adv_correct.push_back(res.adv_pred[i] == y[i]);
    clean_hits += res.clean_correct.back() ? 1 : 0;
    adv_hits += res.adv_correct.back() ? 1 : 0;
  }
  const double n = x.rows() == 0 ? 1.0 : static_cast<double>(x.rows());
  res.clean_accuracy = static_cast<double>(clean_hits) / n;
  res.robust_accuracy = static_cast<double>(adv_hits) / n;
  for (std::size_t i = 0; i < x.size(); ++i)
    res.max_perturbation_seen = std::max(res.max_perturbation_seen, std::abs(res.adversarial.data()[i] - x.data()[i]));
  return res;
}

}  // namespace detail

inline AttackResult fgsm(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                         AttackConfig cfg) {
  cfg.kind = AttackKind::fgsm;
  return detail::run(net, loss, x, y, cfg, false, 0.0);
}

/// Never uses a random start, whatever cfg.random_start says.
inline AttackResult bim(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                        AttackConfig cfg) {
  cfg.kind = AttackKind::bim;
  return detail::run(net, loss, x, y, cfg, false, 0.0);
}

inline AttackResult pgd(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                        AttackConfig cfg) {
  cfg.kind = AttackKind::pgd;
  return detail::run(net, loss, x, y, cfg, cfg.random_start, 0.0);
}

inline AttackResult upgd(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                         AttackConfig cfg) {
  cfg.kind = AttackKind::upgd;
  return detail::run(net, loss, x, y, cfg, cfg.random_start, cfg.momentum);
}

inline AttackResult run_attack(const Network& net, const LossSpec& loss, const Tensor& x, std::span<const int> y,
                               const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::fgsm: return fgsm(net, loss, x, y, cfg);
    case AttackKind::bim: return bim(net, loss, x, y, cfg);
    case AttackKind::pgd: return pgd(net, loss, x, y, cfg);
    case AttackKind::upgd: return upgd(net, loss, x, y, cfg);
  }
  throw InvalidArgument("unknown attack kind");
}

struct SweepPoint {
  double epsilon = 0.0;
  double robust_accuracy = 0.0;
  double max_perturbation_seen = 0.0;
};

/// One attack per epsilon (ascending), every other setting taken from `base`.
/// For fgsm the step equals eps.
inline std::vector<SweepPoint> robust_accuracy_sweep(const Network& net, const LossSpec& loss, const Tensor& x,
                                                     std::span<const int> y, const AttackConfig& base,
                                                     std::span<const double> eps_list) {
  if (eps_list.empty()) throw InvalidArgument("sweep: epsilon list is empty");
  if (!std::is_sorted(eps_list.begin(), eps_list.end()))
    throw InvalidArgument("sweep: epsilon list must be ascending");
  std::vector<SweepPoint> curve;
  for (double eps : eps_list) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    if (cfg.kind == AttackKind::fgsm) cfg.step_size = eps;
    const AttackResult r = run_attack(net, loss, x, y, cfg);
    curve.push_back({eps, r.robust_accuracy, r.max_perturbation_seen});
  }
  return curve;
}

/// sample_id,clean_pred,adv_pred,label,linf_perturbation
inline void write_attack_csv(const AttackResult& r, const Tensor& clean, std::span<const int> labels,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "sample_id,clean_pred,adv_pred,label,linf_perturbation\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double linf = 0.0;
    auto a = r.adversarial.row(i);
    auto c = clean.row(i);
    for (std::size_t k = 0; k < a.size(); ++k) linf = std::max(linf, std::abs(a[k] - c[k]));
    out << i << ',' << r.clean_pred[i] << ',' << r.adv_pred[i] << ',' << labels[i] << ',' << linf << '\n';
  }
}

/// epsilon,robust_accuracy
inline void write_sweep_csv(std::span<const SweepPoint> curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epsilon,robust_accuracy\n";
  for (const auto& p : curve) out << p.epsilon << ',' << p.robust_accuracy << '\n';
}

}  // namespace sploss
