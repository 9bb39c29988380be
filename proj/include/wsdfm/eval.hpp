#pragma once

#include "wsdfm/coupling.hpp"
#include "wsdfm/path.hpp"
#include "wsdfm/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace wsdfm {

/// Default histogram smoothing: added to every cell before renormalizing.
/// SKL magnitudes depend on it, so it is recorded in every metrics file.
inline constexpr double kDefaultSklEpsilon = 1e-6;

/// Default evaluation sample count for SKL estimates.
inline constexpr Eigen::Index kDefaultEvalCount = 100000;

/// 2D occupancy counts of a two-token dataset over the vocab x vocab grid,
/// with additive smoothing for strictly positive probabilities.
struct Histogram2D {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;  // vocab x vocab
  double epsilon = kDefaultSklEpsilon;

  static Histogram2D from_dataset(const Dataset& ds, double epsilon);

  /// (counts + ε) / (total + ε·V²); strictly positive, sums to 1 within 1e-9.
  Eigen::MatrixXd smoothed_probabilities() const;
};

/// Symmetric KL divergence KL(p‖q) + KL(q‖p) between the ε-smoothed
/// histograms of two two-token datasets sharing a GridSpec. Symmetric in its
/// arguments, non-negative, and exactly zero for identical datasets.
double skl(const Dataset& a, const Dataset& b, double epsilon);

/// Exact Bayes posterior of the terminal token per position, by enumeration
/// over the coupling: each pair is weighted by its pinned-mixture likelihood
/// ∏ᵢ[(1−κ)·1{x=src} + κ·1{x=dst}] (a factor of exactly 1 where src and dst
/// agree with x), weights normalized, and the dst one-hots averaged. This is
/// the Bayes-optimal training target and the ground-truth generator input.
/// Throws UnreachableStateError when every pair has zero likelihood.
Eigen::MatrixXd exact_posterior(double s, const Eigen::Ref<const TokenSeq>& x_s,
                                const PairedDataset& pairs,
                                const KappaSchedule& schedule);

/// One sweep measurement: the quality and cost of a candidate t0.
struct SweepEval {
  double skl = 0.0;
  int nfe = 0;
  double wall_seconds = 0.0;
};

struct SweepRow {
  double t0 = 0.0;
  double skl = 0.0;
  int nfe = 0;
  double wall_seconds = 0.0;
  bool qualifies = false;  // skl <= baseline_skl
};

struct SweepReport {
  double baseline_skl = 0.0;
  std::vector<SweepRow> rows;             // in candidate (descending) order
  std::optional<double> selected_t0;      // largest qualifying t0, if any
};

/// Evaluate each candidate t0 (must be strictly descending, all in [0,1))
/// through `evaluate` and select the largest one whose SKL does not exceed
/// the baseline. An empty selection is reported, not an error.
SweepReport t0_sweep(const std::vector<double>& candidates,
                     const std::function<SweepEval(double)>& evaluate,
                     double baseline_skl);

}  // namespace wsdfm
