#pragma once

#include "wsdfm/coupling.hpp"
#include "wsdfm/eval.hpp"
#include "wsdfm/net.hpp"
#include "wsdfm/path.hpp"
#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include <chrono>
#include <vector>

namespace wsdfm {

/// Forward evaluations needed to integrate [t0, 1] at step h: ceil((1-t0)/h),
/// the guaranteed 1/(1-t0) reduction over a cold start. h must lie in
/// (0, 1-t0].
int nfe_count(double t0, double h);

/// Sampling generator from a posterior estimate (Eq. 7 shape): per token,
/// coef(s)·(posteriorᶦ(·) − δ_{x_tᶦ}) with coef = κ̇(s)/(1−κ(s)). The
/// diagonal entry is set to the exact negative sum of the off entries
/// (compensated summation), so rows are conservative to well below 1e-9 even
/// near the clock guard. Posterior rows must sum to 1 within 1e-6.
RateVector assemble_rate(const Eigen::MatrixXd& posterior,
                         const Eigen::Ref<const TokenSeq>& x_t, double s,
                         const KappaSchedule& schedule);

/// One Euler kernel draw per token from δ_{x_t} + h_eff·rate, with total
/// clamping: when the off-state mass h_eff·Σ_{y≠x} rate(y) exceeds 1, the
/// step jumps with certainty, destination proportional to the rate.
TokenSeq euler_step(const Eigen::Ref<const TokenSeq>& x_t,
                    const RateVector& rate, double h_eff, RngStream& rng);

/// Which clock the Euler loop steps on. The two are algebraically identical
/// (h·(u/(1−t0)) = (h/(1−t0))·u); both are kept so the identity is testable.
enum class ClockMode { global, local };

struct GenerateResult {
  Dataset samples;
  int nfe = 0;
  double wall_seconds = 0.0;             // total generation time
  double wall_seconds_per_sample = 0.0;  // wall_seconds / n
};

namespace detail {

/// Draw one token from a probability row via a single uniform.
int draw_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                     RngStream& rng);

/// Shared Euler drive used by both the network and oracle samplers: the
/// posterior provider is called as (step index k, local time s, states X,
/// out posterior per row).
struct StepGrid {
  double t0 = 0.0;
  double h = 0.0;
  int nfe = 0;
  double dsdt = 1.0;
  double local_time(int k) const { return k * h * dsdt; }
};

StepGrid make_step_grid(double t0, double h);

}  // namespace detail

/// Euler-discretized CTMC generation with a learned posterior: start from
/// the first n rows of `init` (draft samples; uniform noise when t0=0), do
/// nfe-1 Euler steps on the chosen clock, and finalize each token with a
/// direct posterior draw (the h→0 limit of the diverging last step). Exactly
/// nfe forward evaluations per sample. Per-sample RNG substreams keep the
/// output independent of batching.
template <typename Scalar>
GenerateResult generate(const ModelParams<Scalar>& params, const Dataset& init,
                        double t0, double h, Eigen::Index n, RngStream& rng,
                        ClockMode mode = ClockMode::global) {
  params.validate();
  init.validate();
  if (!(init.spec == params.spec)) {
    throw ValidationError("generate: init grid does not match model");
  }
  if (n < 1 || n > init.size()) {
    throw ValidationError("generate: n must lie in [1, |init|]");
  }
  const detail::StepGrid grid = detail::make_step_grid(t0, h);
  const WarmStartClock clock(t0);
  const KappaSchedule schedule;
  const int N = params.spec.n_tokens;
  const int V = params.spec.vocab;

  GenerateResult out;
  out.nfe = grid.nfe;
  out.samples.spec = params.spec;
  out.samples.samples.resize(n, N);

  const auto t_start = std::chrono::steady_clock::now();
  constexpr Eigen::Index kBlock = 4096;
  Eigen::MatrixXd posterior(N, V);
  DenseMatrix<Scalar> logits_mat(N, V);
  for (Eigen::Index block = 0; block < n; block += kBlock) {
    const Eigen::Index B = std::min(kBlock, n - block);
    SampleMatrix X = init.samples.middleRows(block, B);
    std::vector<RngStream> streams;
    streams.reserve(static_cast<std::size_t>(B));
    for (Eigen::Index r = 0; r < B; ++r) {
      streams.push_back(rng.substream(static_cast<std::uint64_t>(block + r)));
    }

    for (int k = 0; k < grid.nfe; ++k) {
      const double s = grid.local_time(k);
      const bool final_step = k == grid.nfe - 1;
      const Eigen::VectorXd s_vec = Eigen::VectorXd::Constant(B, s);
      const DenseMatrix<Scalar> logits = forward_batch(params, s_vec, X);
      if (!logits.allFinite()) {
        throw NumericalError("generate: non-finite logits at step " +
                             std::to_string(k));
      }
      for (Eigen::Index r = 0; r < B; ++r) {
        for (int i = 0; i < N; ++i) {
          logits_mat.row(i) = logits.row(r).segment(i * V, V);
        }
        posterior = softmax_posterior(logits_mat);
        auto& stream = streams[static_cast<std::size_t>(r)];
        if (final_step) {
          for (int i = 0; i < N; ++i) {
            X(r, i) = detail::draw_categorical(posterior.row(i), stream);
          }
        } else {
          const RateVector rate_local =
              assemble_rate(posterior, X.row(r), s, schedule);
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
    out.samples.samples.middleRows(block, B) = X;
  }
  const auto t_end = std::chrono::steady_clock::now();
  out.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
  out.wall_seconds_per_sample = out.wall_seconds / static_cast<double>(n);
  return out;
}

/// As generate, but with the exact Bayes posterior enumerated over the
/// coupling instead of a network — the ground-truth sampler for validation.
/// States visited with zero likelihood under every pair raise
/// UnreachableStateError.
GenerateResult oracle_generate(const PairedDataset& pairs, const Dataset& init,
                               double t0, double h, Eigen::Index n,
                               RngStream& rng,
                               ClockMode mode = ClockMode::global);

}  // namespace wsdfm
