#include "wsdfm/path.hpp"

#include <cmath>
#include <string>

namespace wsdfm {

double KappaSchedule::kappa(double s) const {
  switch (kind) {
    case Kind::linear:
      return s;
  }
  throw ValidationError("KappaSchedule: unknown kind");
}

double KappaSchedule::kappa_dot(double s) const {
  (void)s;
  switch (kind) {
    case Kind::linear:
      return 1.0;
  }
  throw ValidationError("KappaSchedule: unknown kind");
}

WarmStartClock::WarmStartClock(double t0_in) : t0(t0_in) {
  if (!(t0 >= 0.0 && t0 < 1.0)) {
    throw ValidationError("WarmStartClock: t0 must lie in [0, 1), got " +
                          std::to_string(t0));
  }
}

double rate_coefficient(double s, const KappaSchedule& schedule) {
  if (!(s >= 0.0)) {
    throw ValidationError("rate_coefficient: s must be >= 0, got " +
                          std::to_string(s));
  }
  if (s >= 1.0 - kClockEpsilon) {
    throw ClockSaturatedError(
        "rate coefficient diverges at s=" + std::to_string(s) +
        "; finalize with a posterior draw");
  }
  return schedule.kappa_dot(s) / (1.0 - schedule.kappa(s));
}

TokenSeq sample_xt(double s, const Eigen::Ref<const TokenSeq>& x_src,
                   const Eigen::Ref<const TokenSeq>& x1,
                   const KappaSchedule& schedule, RngStream& rng) {
  if (x_src.size() != x1.size()) {
    throw ValidationError("sample_xt: x_src and x1 lengths differ");
  }
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ValidationError("sample_xt: s must lie in [0, 1], got " +
                          std::to_string(s));
  }
  const double k = schedule.kappa(s);
  TokenSeq out(x_src.size());
  for (Eigen::Index i = 0; i < x_src.size(); ++i) {
    out(i) = rng.uniform() < k ? x1(i) : x_src(i);
  }
  return out;
}

RateVector conditional_rate(double s, const Eigen::Ref<const TokenSeq>& x_s,
                            const Eigen::Ref<const TokenSeq>& x1,
                            const KappaSchedule& schedule, int vocab) {
  if (x_s.size() != x1.size()) {
    throw ValidationError("conditional_rate: x_s and x1 lengths differ");
  }
  const double coef = rate_coefficient(s, schedule);
  RateVector rate = RateVector::Zero(x_s.size(), vocab);
  for (Eigen::Index i = 0; i < x_s.size(); ++i) {
    if (x_s(i) == x1(i)) continue;
    rate(i, x1(i)) = coef;
    rate(i, x_s(i)) = -coef;
  }
  return rate;
}

RateVector to_global_rate(const RateVector& rate_local,
                          const WarmStartClock& clock) {
  return rate_local * clock.dsdt();
}

bool is_valid_rate(const RateVector& rate,
                   const Eigen::Ref<const TokenSeq>& x_current, double tol) {
  if (rate.rows() != x_current.size()) return false;
  for (Eigen::Index i = 0; i < rate.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index v = 0; v < rate.cols(); ++v) {
      const double r = rate(i, v);
      if (!std::isfinite(r)) return false;
      if (v == x_current(i)) {
        if (r > tol) return false;
      } else if (r < -tol) {
        return false;
      }
      sum += r;
    }
    if (std::abs(sum) > tol) return false;
  }
  return true;
}

}  // namespace wsdfm
