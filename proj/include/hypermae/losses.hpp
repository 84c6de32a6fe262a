#pragma once

// Hybrid reconstruction objective: Charbonnier distance plus the spectral
// angle term, evaluated on the masked patches by default.

#include "hypermae/mae.hpp"
#include "hypermae/tape.hpp"

namespace hypermae {

struct LossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double epsilon = 1e-3;      // Charbonnier constant
  bool masked_only = true;
  bool sam_per_pixel = true;  // false: angle between per-patch mean spectra
};

struct LossDiagnostics {
  double total = 0;
  double charbonnier = 0;
  double sam = 0;
  std::size_t zero_norm_positions = 0;  // positions that hit the stabilized denominator
};

template <class T>
struct LossVars {
  Var<T> total;
  Var<T> charbonnier;
  Var<T> sam;
  LossDiagnostics diag;
};

/// Mean over all elements of sqrt((x - x_hat)^2 + eps^2). Exactly eps at a
/// perfect reconstruction, and differentiable there (zero gradient).
template <class T>
Var<T> charbonnier(Var<T> x_hat, Var<T> x, double epsilon) {
  check(x.shape() == x_hat.shape(), "charbonnier shape mismatch: " + shape_str(x.shape()) +
                                        " vs " + shape_str(x_hat.shape()));
  check(epsilon > 0, "charbonnier epsilon must be positive");
  auto d = ops::sub(x, x_hat);
  auto inside = ops::add_scalar(ops::mul(d, d), static_cast<T>(epsilon * epsilon));
  return ops::mean_all(ops::sqrt(inside));
}

namespace detail_loss {

constexpr double kDenomEps = 1e-8;  // stabilizer for zero-norm spectra

template <class T>
constexpr T norm_guard() {
  // keeps sqrt differentiable at exactly-zero vectors without moving
  // any norm of practical magnitude
  return std::is_same_v<T, float> ? T(1e-12) : T(1e-24);
}

// cosine similarity along `axis` with stabilized denominator
template <class T>
Var<T> cosine_along(Var<T> a, Var<T> b, std::size_t axis, std::size_t* zero_norms) {
  auto dot = ops::sum_axis(ops::mul(a, b), axis);
  auto na = ops::sqrt(ops::add_scalar(ops::sum_axis(ops::mul(a, a), axis), norm_guard<T>()));
  auto nb = ops::sqrt(ops::add_scalar(ops::sum_axis(ops::mul(b, b), axis), norm_guard<T>()));
  auto denom = ops::add_scalar(ops::mul(na, nb), static_cast<T>(kDenomEps));
  if (zero_norms) {
    const auto& dv = denom.val();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dv.numel(); ++i)
      if (static_cast<double>(dv[i]) < 10 * kDenomEps) ++hits;
    *zero_norms = hits;
  }
  return ops::div(dot, denom);
}

}  // namespace detail_loss

/// Mean over positions of 1 - cos(x, x_hat); spectra run along `axis`.
/// Zero-norm vectors hit the eps-stabilized denominator and are counted.
template <class T>
Var<T> sam_loss(Var<T> x_hat, Var<T> x, std::size_t axis, std::size_t* zero_norms = nullptr) {
  check(x.shape() == x_hat.shape(), "sam shape mismatch");
  auto cosine = detail_loss::cosine_along(x, x_hat, axis, zero_norms);
  return ops::mean_all(ops::add_scalar(ops::neg(cosine), T(1)));
}

/// Full objective on (reconstruction, target), both N x C x k^2; the plan
/// restricts the support to masked tokens when masked_only is set. The
/// spectral angle runs along the channel axis at each in-patch pixel.
template <class T>
LossVars<T> total_loss(Tape<T>& tape, Var<T> recon, const Tensor<T>& target,
                       const MaskPlan& plan, const LossConfig& cfg) {
  check(recon.shape() == target.shape(), "loss operand shape mismatch: " +
                                             shape_str(recon.shape()) + " vs " +
                                             shape_str(target.shape()));
  check(recon.shape().size() == 3, "loss expects N x C x k^2 operands");
  auto tgt = tape.constant(target);
  Var<T> r = recon, t = tgt;
  if (cfg.masked_only && !plan.masked.empty()) {
    r = ops::gather_rows(recon, plan.masked);
    t = ops::gather_rows(tgt, plan.masked);
  }
  auto charb = charbonnier(r, t, cfg.epsilon);

  std::size_t zero_norms = 0;
  Var<T> sam;
  if (cfg.sam_per_pixel) {
    sam = sam_loss(r, t, 1, &zero_norms);  // spectra along C per (token, pixel)
  } else {
    auto r_mean = ops::mean_axis(r, 2);
    auto t_mean = ops::mean_axis(t, 2);
    sam = sam_loss(r_mean, t_mean, 1, &zero_norms);
  }

  auto total = ops::add(ops::scale(charb, static_cast<T>(cfg.alpha)),
                        ops::scale(sam, static_cast<T>(cfg.beta)));
  LossVars<T> out{total, charb, sam, {}};
  out.diag.total = static_cast<double>(total.val()[0]);
  out.diag.charbonnier = static_cast<double>(charb.val()[0]);
  out.diag.sam = static_cast<double>(sam.val()[0]);
  out.diag.zero_norm_positions = zero_norms;
  return out;
}

}  // namespace hypermae
