#include "wsdfm/eval.hpp"

#include <cmath>
#include <string>

namespace wsdfm {

Histogram2D Histogram2D::from_dataset(const Dataset& ds, double epsilon) {
  ds.validate();
  if (ds.spec.n_tokens != 2) {
    throw ValidationError("Histogram2D: requires n_tokens == 2");
  }
  if (!(epsilon > 0.0)) {
    throw ValidationError("Histogram2D: epsilon must be > 0");
  }
  Histogram2D h;
  h.epsilon = epsilon;
  h.counts.setZero(ds.spec.vocab, ds.spec.vocab);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    h.counts(ds.samples(i, 0), ds.samples(i, 1)) += 1;
  }
  return h;
}

Eigen::MatrixXd Histogram2D::smoothed_probabilities() const {
  const double total = static_cast<double>(counts.sum());
  if (!(total > 0.0)) {
    throw ValidationError("Histogram2D: total count must be > 0");
  }
  const double denom =
      total + epsilon * static_cast<double>(counts.size());
  return (counts.cast<double>().array() + epsilon).matrix() / denom;
}

double skl(const Dataset& a, const Dataset& b, double epsilon) {
  if (!(a.spec == b.spec)) {
    throw ValidationError("skl: datasets must share a GridSpec");
  }
  const Eigen::MatrixXd p =
      Histogram2D::from_dataset(a, epsilon).smoothed_probabilities();
  const Eigen::MatrixXd q =
      Histogram2D::from_dataset(b, epsilon).smoothed_probabilities();
  double total = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double lr = std::log(p(r, c) / q(r, c));
      total += p(r, c) * lr - q(r, c) * lr;  // p·ln(p/q) + q·ln(q/p)
    }
  }
  return total;
}

Eigen::MatrixXd exact_posterior(double s, const Eigen::Ref<const TokenSeq>& x_s,
                                const PairedDataset& pairs,
                                const KappaSchedule& schedule) {
  pairs.validate();
  const int N = pairs.spec.n_tokens;
  const int V = pairs.spec.vocab;
  if (x_s.size() != N) {
    throw ValidationError("exact_posterior: state length mismatch");
  }
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ValidationError("exact_posterior: s must lie in [0, 1], got " +
                          std::to_string(s));
  }
  const double k = schedule.kappa(s);

  Eigen::MatrixXd numer = Eigen::MatrixXd::Zero(N, V);
  double total_weight = 0.0;
  for (Eigen::Index j = 0; j < pairs.size(); ++j) {
    double w = 1.0;
    for (int i = 0; i < N && w > 0.0; ++i) {
      const int src = pairs.src(j, i);
      const int dst = pairs.dst(j, i);
      const int x = x_s(i);
      if (src == dst) {
        if (x != src) w = 0.0;
      } else if (x == src) {
        w *= 1.0 - k;
      } else if (x == dst) {
        w *= k;
      } else {
        w = 0.0;
      }
    }
    if (w <= 0.0) continue;
    total_weight += w;
    for (int i = 0; i < N; ++i) {
      numer(i, pairs.dst(j, i)) += w;
    }
  }
  if (total_weight <= 0.0) {
    throw UnreachableStateError(
        "exact_posterior: state has zero likelihood under every pair");
  }
  Eigen::MatrixXd posterior = numer / total_weight;
  for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
    posterior.row(i) /= posterior.row(i).sum();
  }
  return posterior;
}

SweepReport t0_sweep(const std::vector<double>& candidates,
                     const std::function<SweepEval(double)>& evaluate,
                     double baseline_skl) {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!(candidates[i] >= 0.0 && candidates[i] < 1.0)) {
      throw ValidationError("t0_sweep: candidates must lie in [0, 1)");
    }
    if (i > 0 && !(candidates[i] < candidates[i - 1])) {
      throw ValidationError("t0_sweep: candidates must be strictly descending");
    }
  }
  if (!evaluate) {
    throw ValidationError("t0_sweep: evaluate callback must be set");
  }

  SweepReport report;
  report.baseline_skl = baseline_skl;
  for (double t0 : candidates) {
    const SweepEval ev = evaluate(t0);
    SweepRow row;
    row.t0 = t0;
    row.skl = ev.skl;
    row.nfe = ev.nfe;
    row.wall_seconds = ev.wall_seconds;
    row.qualifies = ev.skl <= baseline_skl;
    if (row.qualifies && !report.selected_t0.has_value()) {
      report.selected_t0 = t0;  // descending order: first hit is the largest
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace wsdfm
