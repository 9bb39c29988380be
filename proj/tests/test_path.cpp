#include "doctest.h"

#include "wsdfm/path.hpp"
#include "wsdfm/sample.hpp"

#include <cmath>
#include <vector>

using namespace wsdfm;

namespace {

TokenSeq seq2(int a, int b) {
  TokenSeq s(2);
  s << a, b;
  return s;
}

TokenSeq seq1(int a) {
  TokenSeq s(1);
  s << a;
  return s;
}

}  // namespace

TEST_CASE("KappaSchedule: linear schedule endpoints and slope") {
  KappaSchedule k;
  CHECK(k.kappa(0.0) == 0.0);
  CHECK(k.kappa(1.0) == 1.0);
  CHECK(k.kappa(0.25) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(k.kappa_dot(0.0) == 1.0);
  CHECK(k.kappa_dot(0.9) == 1.0);
  // Monotone non-decreasing on a grid.
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = k.kappa(i / 100.0);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("WarmStartClock: local/global conversion round trips") {
  WarmStartClock clock(0.8);
  CHECK(clock.local_time(0.8) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(clock.local_time(1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(clock.local_time(0.9) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(clock.global_time(0.5) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(clock.dsdt() == doctest::Approx(5.0).epsilon(1e-15));
  for (double t : {0.8, 0.85, 0.93, 1.0}) {
    CHECK(clock.global_time(clock.local_time(t)) ==
          doctest::Approx(t).epsilon(1e-12));
  }

  WarmStartClock trivial(0.0);
  CHECK(trivial.local_time(0.37) == doctest::Approx(0.37).epsilon(1e-15));
  CHECK(trivial.dsdt() == 1.0);

  CHECK_THROWS_AS(WarmStartClock(1.0), ValidationError);
  CHECK_THROWS_AS(WarmStartClock(-0.1), ValidationError);
}

TEST_CASE("rate_coefficient: hand values and the clock guard") {
  KappaSchedule k;
  CHECK(rate_coefficient(0.0, k) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rate_coefficient(0.5, k) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rate_coefficient(0.9, k) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK_THROWS_AS(rate_coefficient(1.0 - kClockEpsilon, k),
                  ClockSaturatedError);
  CHECK_THROWS_AS(rate_coefficient(1.0, k), ClockSaturatedError);
}

TEST_CASE("sample_xt: s=0 returns the source, s=1 returns the target") {
  KappaSchedule k;
  RngStream rng(1, "xt-endpoints");
  const TokenSeq src = seq2(3, 70);
  const TokenSeq dst = seq2(90, 12);
  for (int i = 0; i < 50; ++i) {
    CHECK(sample_xt(0.0, src, dst, k, rng) == src);
    CHECK(sample_xt(1.0, src, dst, k, rng) == dst);
  }
}

TEST_CASE("sample_xt: s=0.5 matches the target half the time") {
  KappaSchedule k;
  RngStream rng(2, "xt-half");
  const TokenSeq src = seq2(3, 70);
  const TokenSeq dst = seq2(90, 12);
  const int n = 100000;
  int match0 = 0;
  int match1 = 0;
  for (int i = 0; i < n; ++i) {
    const TokenSeq x = sample_xt(0.5, src, dst, k, rng);
    if (x(0) == dst(0)) ++match0;
    if (x(1) == dst(1)) ++match1;
  }
  const double tol = 3.0 * std::sqrt(0.25 / n);
  CHECK(std::abs(match0 / static_cast<double>(n) - 0.5) < tol);
  CHECK(std::abs(match1 / static_cast<double>(n) - 0.5) < tol);
}

TEST_CASE("sample_xt: mismatched lengths are rejected") {
  KappaSchedule k;
  RngStream rng(3, "xt-bad");
  const TokenSeq src = seq2(3, 70);
  const TokenSeq dst = seq1(5);
  CHECK_THROWS_AS(sample_xt(0.5, src, dst, k, rng), ValidationError);
}

TEST_CASE("conditional_rate: agreeing positions carry zero rate") {
  KappaSchedule k;
  const TokenSeq x = seq2(4, 9);
  const RateVector rate = conditional_rate(0.3, x, x, k, 16);
  CHECK(rate.rows() == 2);
  CHECK(rate.cols() == 16);
  CHECK(rate.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conditional_rate: disagreeing position at s=0.5 carries +/-2") {
  KappaSchedule k;
  const TokenSeq x_s = seq2(4, 9);
  const TokenSeq x1 = seq2(4, 2);
  const RateVector rate = conditional_rate(0.5, x_s, x1, k, 16);
  // Position 0 agrees: zero row.
  CHECK(rate.row(0).cwiseAbs().maxCoeff() == 0.0);
  // Position 1: +2 at the target token, -2 at the current token.
  CHECK(rate(1, 2) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rate(1, 9) == doctest::Approx(-2.0).epsilon(1e-12));
  for (int v = 0; v < 16; ++v) {
    if (v != 2 && v != 9) CHECK(rate(1, v) == 0.0);
  }
}

TEST_CASE("conditional_rate: coefficient 10 at s=0.9 and the clock guard") {
  KappaSchedule k;
  const TokenSeq x_s = seq1(0);
  const TokenSeq x1 = seq1(3);
  const RateVector rate = conditional_rate(0.9, x_s, x1, k, 4);
  CHECK(rate(0, 3) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(rate(0, 0) == doctest::Approx(-10.0).epsilon(1e-12));
  CHECK_THROWS_AS(conditional_rate(1.0 - kClockEpsilon / 2, x_s, x1, k, 4),
                  ClockSaturatedError);
}

TEST_CASE("to_global_rate: identity at t0=0, scaling by 1/(1-t0) otherwise") {
  KappaSchedule k;
  const TokenSeq x_s = seq1(0);
  const TokenSeq x1 = seq1(3);
  const RateVector local = conditional_rate(0.5, x_s, x1, k, 4);

  const RateVector same = to_global_rate(local, WarmStartClock(0.0));
  CHECK((same - local).cwiseAbs().maxCoeff() == 0.0);

  // Local coefficient 2 at s=0.5 under t0=0.8 is global time t=0.9; the
  // global coefficient must equal 1/(1-0.9) = 10.
  const WarmStartClock clock(0.8);
  const RateVector global = to_global_rate(local, clock);
  CHECK(global(0, 3) == doctest::Approx(10.0).epsilon(1e-12));
  const double t = clock.global_time(0.5);
  CHECK(global(0, 3) == doctest::Approx(1.0 / (1.0 - t)).epsilon(1e-12));

  const RateVector zeros = RateVector::Zero(2, 8);
  CHECK(to_global_rate(zeros, clock).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("time-warp equivalence: local and global jump masses agree") {
  // Stepping the local clock with step h/(1-t0) and the global clock with
  // step h after to_global_rate must assign identical jump probabilities.
  KappaSchedule k;
  RngStream rng(7, "warp");
  for (int trial = 0; trial < 200; ++trial) {
    const double t0 = rng.uniform() * 0.95;
    const WarmStartClock clock(t0);
    const double s = rng.uniform() * 0.99;
    const int vocab = 8;
    const TokenSeq x_s = seq2(static_cast<int>(rng.uniform_int(vocab)),
                              static_cast<int>(rng.uniform_int(vocab)));
    const TokenSeq x1 = seq2(static_cast<int>(rng.uniform_int(vocab)),
                             static_cast<int>(rng.uniform_int(vocab)));
    const RateVector local = conditional_rate(s, x_s, x1, k, vocab);
    const RateVector global = to_global_rate(local, clock);
    const double h = 0.05;
    const RateVector local_mass = local * (h / (1.0 - t0));
    const RateVector global_mass = global * h;
    CHECK((local_mass - global_mass).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("fuzz: conditional_rate rows are conservative and kernel-valid") {
  KappaSchedule k;
  RngStream rng(8, "fuzz-rate");
  const int vocab = 12;
  for (int trial = 0; trial < 2000; ++trial) {
    const double s = rng.uniform() * (1.0 - 2 * kClockEpsilon);
    TokenSeq x_s(3), x1(3);
    for (int i = 0; i < 3; ++i) {
      x_s(i) = static_cast<int>(rng.uniform_int(vocab));
      x1(i) = static_cast<int>(rng.uniform_int(vocab));
    }
    const RateVector rate = conditional_rate(s, x_s, x1, k, vocab);
    REQUIRE(is_valid_rate(rate, x_s, 1e-9));
    // Kernel validity: delta + h*rate is a distribution when h*max|entry|<=1.
    const double max_abs = rate.cwiseAbs().maxCoeff();
    const double h = max_abs > 0 ? 1.0 / max_abs : 1.0;
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd kernel = (h * rate.row(i)).transpose();
      kernel(x_s(i)) += 1.0;
      CHECK(kernel.minCoeff() >= -1e-12);
      CHECK(kernel.sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("is_valid_rate rejects broken rows") {
  const TokenSeq x = seq1(1);
  RateVector rate = RateVector::Zero(1, 4);
  CHECK(is_valid_rate(rate, x, 1e-9));

  rate(0, 1) = -2.0;
  rate(0, 3) = 2.0;
  CHECK(is_valid_rate(rate, x, 1e-9));

  RateVector bad_sum = rate;
  bad_sum(0, 3) = 2.5;  // breaks conservativity
  CHECK(!is_valid_rate(bad_sum, x, 1e-9));

  RateVector bad_sign = RateVector::Zero(1, 4);
  bad_sign(0, 1) = 2.0;  // positive mass at the current token
  bad_sign(0, 3) = -2.0;
  CHECK(!is_valid_rate(bad_sign, x, 1e-9));
}

TEST_CASE("CTMC marginal consistency for one pinned pair (N=1, V=8)") {
  // Euler-simulating the conditional generator from s=0 must reproduce the
  // pinned mixture marginal (1-kappa) delta_src + kappa delta_dst.
  KappaSchedule k;
  const int vocab = 8;
  const TokenSeq src = seq1(2);
  const TokenSeq dst = seq1(6);
  const double h = 0.001;
  const int n = 100000;
  const std::vector<int> checkpoints = {250, 500, 750};  // s = k*h

  Eigen::MatrixXd occupancy = Eigen::MatrixXd::Zero(3, vocab);
  RngStream root(9, "ctmc-marginal");
  for (int traj = 0; traj < n; ++traj) {
    RngStream rng = root.substream(traj);
    TokenSeq x = src;
    int next_check = 0;
    for (int step = 0; step < 750 && next_check < 3; ++step) {
      const double s = step * h;
      const RateVector rate = conditional_rate(s, x, dst, k, vocab);
      x = euler_step(x, rate, h, rng);
      if (step + 1 == checkpoints[next_check]) {
        occupancy(next_check, x(0)) += 1.0;
        ++next_check;
      }
    }
  }

  for (int c = 0; c < 3; ++c) {
    const double s = checkpoints[c] * h;
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(vocab);
    expected(src(0)) += 1.0 - k.kappa(s);
    expected(dst(0)) += k.kappa(s);
    const Eigen::VectorXd empirical = occupancy.row(c).transpose() / n;
    const double tv = 0.5 * (empirical - expected).cwiseAbs().sum();
    CHECK(tv < 0.02);
  }
}
