#include "wsdfm/sample.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

namespace wsdfm {

int nfe_count(double t0, double h) {
  if (!(t0 >= 0.0 && t0 < 1.0)) {
    throw ValidationError("nfe_count: t0 must lie in [0, 1), got " +
                          std::to_string(t0));
  }
  if (!(h > 0.0 && h <= 1.0 - t0 + 1e-12)) {
    throw ValidationError("nfe_count: h must lie in (0, 1 - t0], got " +
                          std::to_string(h));
  }
  // The 1e-9 slack absorbs representation error in (1-t0)/h (e.g. 0.65/0.05
  // evaluating to 13.000000000000002).
  const int nfe = static_cast<int>(std::ceil((1.0 - t0) / h - 1e-9));
  return std::max(1, nfe);
}

namespace detail {

StepGrid make_step_grid(double t0, double h) {
  StepGrid grid;
  grid.nfe = nfe_count(t0, h);  // validates t0 and h
  grid.t0 = t0;
  grid.h = h;
  grid.dsdt = 1.0 / (1.0 - t0);
  return grid;
}

int draw_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                     RngStream& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    cum += probs(v);
    if (u < cum) {
      return static_cast<int>(v);
    }
  }
  // u fell into the rounding sliver past the accumulated total; return the
  // last token with positive mass.
  for (Eigen::Index v = probs.size() - 1; v >= 0; --v) {
    if (probs(v) > 0.0) return static_cast<int>(v);
  }
  throw NumericalError("draw_categorical: all-zero probability row");
}

}  // namespace detail

RateVector assemble_rate(const Eigen::MatrixXd& posterior,
                         const Eigen::Ref<const TokenSeq>& x_t, double s,
                         const KappaSchedule& schedule) {
  if (posterior.rows() != x_t.size()) {
    throw ValidationError("assemble_rate: posterior row count mismatch");
  }
  const int V = static_cast<int>(posterior.cols());
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    if (x_t(i) < 0 || x_t(i) >= V) {
      throw ValidationError("assemble_rate: current token out of range");
    }
    const double sum = posterior.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6 || posterior.row(i).minCoeff() < -1e-12) {
      throw ValidationError(
          "assemble_rate: posterior row " + std::to_string(i) +
          " is not a probability vector");
    }
  }
  const double coef = rate_coefficient(s, schedule);  // clock guard inside

  RateVector rate(x_t.size(), V);
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    const int x = x_t(i);
    // Neumaier-compensated sum of the off entries keeps the diagonal exact
    // enough that rows stay conservative within 1e-9 even when coef is
    // large (s near the clock guard).
    double off_sum = 0.0, comp = 0.0;
    for (int v = 0; v < V; ++v) {
      if (v == x) continue;
      const double r = coef * std::max(posterior(i, v), 0.0);
      rate(i, v) = r;
      const double t = off_sum + r;
      comp += std::abs(off_sum) >= std::abs(r) ? (off_sum - t) + r
                                               : (r - t) + off_sum;
      off_sum = t;
    }
    rate(i, x) = -(off_sum + comp);
  }
  return rate;
}

TokenSeq euler_step(const Eigen::Ref<const TokenSeq>& x_t,
                    const RateVector& rate, double h_eff, RngStream& rng) {
  if (rate.rows() != x_t.size()) {
    throw ValidationError("euler_step: rate row count mismatch");
  }
  if (!(h_eff > 0.0)) {
    throw ValidationError("euler_step: h_eff must be > 0");
  }
  const int V = static_cast<int>(rate.cols());
  TokenSeq out(x_t.size());
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    const int x = x_t(i);
    double mass = 0.0;
    for (int v = 0; v < V; ++v) {
      if (v != x) mass += h_eff * rate(i, v);
    }
    // Kernel: stay with probability 1 - mass, else jump proportionally to
    // the off-state rates. When mass > 1 the kernel clamps: certain jump,
    // same destination law.
    double u = rng.uniform();
    if (mass > 1.0) {
      u *= mass;
    }
    int next = x;
    double cum = 0.0;
    for (int v = 0; v < V; ++v) {
      if (v == x) continue;
      cum += h_eff * rate(i, v);
      if (u < cum) {
        next = v;
        break;
      }
    }
    if (mass > 1.0 && next == x) {
      // Rounding sliver at the top of a clamped draw: take the last mass-
      // bearing destination.
      for (int v = V - 1; v >= 0; --v) {
        if (v != x && rate(i, v) > 0.0) {
          next = v;
          break;
        }
      }
    }
    out(i) = next;
  }
  return out;
}

GenerateResult oracle_generate(const PairedDataset& pairs, const Dataset& init,
                               double t0, double h, Eigen::Index n,
                               RngStream& rng, ClockMode mode) {
  pairs.validate();
  init.validate();
  if (!(init.spec == pairs.spec)) {
    throw ValidationError("oracle_generate: init grid does not match pairs");
  }
  if (n < 1 || n > init.size()) {
    throw ValidationError("oracle_generate: n must lie in [1, |init|]");
  }
  const detail::StepGrid grid = detail::make_step_grid(t0, h);
  const WarmStartClock clock(t0);
  const KappaSchedule schedule;
  const int N = pairs.spec.n_tokens;
  const int V = pairs.spec.vocab;

  // Memoize posteriors per step when the state space is enumerable: every
  // sample at the same step shares s, so the posterior depends only on x.
  double space = 1.0;
  for (int i = 0; i < N; ++i) space *= V;
  const bool memoize = space <= 1e6;
  auto encode = [V, N](const Eigen::Ref<const TokenSeq>& x) {
    long long idx = 0;
    for (int i = 0; i < N; ++i) idx = idx * V + x(i);
    return idx;
  };

  GenerateResult out;
  out.nfe = grid.nfe;
  out.samples.spec = pairs.spec;
  out.samples.samples.resize(n, N);

  const auto t_start = std::chrono::steady_clock::now();
  SampleMatrix X = init.samples.topRows(n);
  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    streams.push_back(rng.substream(static_cast<std::uint64_t>(r)));
  }

  std::unordered_map<long long, Eigen::MatrixXd> memo;
  for (int k = 0; k < grid.nfe; ++k) {
    const double s = grid.local_time(k);
    const bool final_step = k == grid.nfe - 1;
    memo.clear();
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::MatrixXd* posterior = nullptr;
      Eigen::MatrixXd scratch;
      if (memoize) {
        const long long idx = encode(X.row(r));
        auto it = memo.find(idx);
        if (it == memo.end()) {
          it = memo.emplace(idx, exact_posterior(s, X.row(r), pairs, schedule))
                   .first;
        }
        posterior = &it->second;
      } else {
        scratch = exact_posterior(s, X.row(r), pairs, schedule);
        posterior = &scratch;
      }

      auto& stream = streams[static_cast<std::size_t>(r)];
      if (final_step) {
        for (int i = 0; i < N; ++i) {
          X(r, i) = detail::draw_categorical(posterior->row(i), stream);
        }
      } else {
        const RateVector rate_local = assemble_rate(*posterior, X.row(r), s,
                                                    schedule);
        if (mode == ClockMode::global) {
          X.row(r) = euler_step(X.row(r), to_global_rate(rate_local, clock),
                                grid.h, stream);
        } else {
          X.row(r) =
              euler_step(X.row(r), rate_local, grid.h * grid.dsdt, stream);
        }
      }
    }
  }
  out.samples.samples = X;
  const auto t_end = std::chrono::steady_clock::now();
  out.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
  out.wall_seconds_per_sample = out.wall_seconds / static_cast<double>(n);
  return out;
}

}  // namespace wsdfm
