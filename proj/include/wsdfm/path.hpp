#pragma once

#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

namespace wsdfm {

/// Mixing schedule κ on the local clock s ∈ [0,1]: the probability mass the
/// pinned path assigns to the target branch. κ(0)=0, κ(1)=1, κ̇ ≥ 0.
struct KappaSchedule {
  enum class Kind { linear };
  Kind kind = Kind::linear;

  double kappa(double s) const;
  double kappa_dot(double s) const;
};

/// The warm-start reparameterization: global time t ∈ [t0, 1] maps to local
/// time s = (t - t0)/(1 - t0) ∈ [0, 1] with constant ds/dt = 1/(1 - t0).
struct WarmStartClock {
  double t0 = 0.0;

  WarmStartClock() = default;
  explicit WarmStartClock(double t0_in);

  double local_time(double t) const { return (t - t0) / (1.0 - t0); }
  double global_time(double s) const { return t0 + s * (1.0 - t0); }
  double dsdt() const { return 1.0 / (1.0 - t0); }
};

/// Guard below which conditional_rate refuses to evaluate: κ̇/(1-κ) diverges
/// as s→1, so the caller finalizes with a direct posterior draw instead.
inline constexpr double kClockEpsilon = 1e-6;

/// Jump-rate coefficient κ̇(s)/(1-κ(s)) toward the target branch. Throws
/// ClockSaturatedError for s ≥ 1 - kClockEpsilon.
double rate_coefficient(double s, const KappaSchedule& schedule);

/// Draw x_s from the pinned mixture: independently per token, x1's token
/// with probability κ(s), the source token otherwise.
TokenSeq sample_xt(double s, const Eigen::Ref<const TokenSeq>& x_src,
                   const Eigen::Ref<const TokenSeq>& x1,
                   const KappaSchedule& schedule, RngStream& rng);

/// Conditional generator rows of the pinned path (one per token): the
/// coefficient κ̇/(1-κ) times (δ_{x1} - δ_{x_s}); identically zero at
/// positions already agreeing with x1. vocab gives the row width.
RateVector conditional_rate(double s, const Eigen::Ref<const TokenSeq>& x_s,
                            const Eigen::Ref<const TokenSeq>& x1,
                            const KappaSchedule& schedule, int vocab);

/// Convert a local-clock rate to the global clock: multiply by ds/dt.
RateVector to_global_rate(const RateVector& rate_local,
                          const WarmStartClock& clock);

/// True when every row of `rate` sums to zero within `tol`, the entry at the
/// current token is ≤ 0 and all others are ≥ 0.
bool is_valid_rate(const RateVector& rate,
                   const Eigen::Ref<const TokenSeq>& x_current, double tol);

}  // namespace wsdfm
