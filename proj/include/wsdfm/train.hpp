#pragma once

#include "wsdfm/coupling.hpp"
#include "wsdfm/drafts.hpp"
#include "wsdfm/net.hpp"
#include "wsdfm/path.hpp"
#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace wsdfm {

/// Optional observers for the training loop. All default-disabled; the loop
/// itself never touches the filesystem — the pipeline wires these up.
template <typename Scalar>
struct TrainHooks {
  /// Every `probe_every` iterations (and once after the last when the count
  /// is not a cadence multiple), `probe` is called with a read-only
  /// parameter snapshot; the returned score (lower = better, e.g. a
  /// validation SKL) drives best-checkpoint selection.
  long probe_every = 5000;
  std::function<double(long iteration, const ModelParams<Scalar>&)> probe;

  /// Called on the same cadence as `probe` (checkpoint writing).
  std::function<void(long iteration, const ModelParams<Scalar>&)> on_checkpoint;

  /// Progress logging.
  long progress_every = 0;
  std::function<void(long iteration, double loss)> on_progress;

  /// Test hook: records every local time drawn, in draw order.
  std::vector<double>* record_local_times = nullptr;
};

template <typename Scalar>
struct TrainResult {
  /// Best parameters by probe score (equal to final_params when no probe is
  /// installed or probing never ran).
  ModelParams<Scalar> params;
  ModelParams<Scalar> final_params;
  std::vector<double> losses;  // one entry per iteration
  std::vector<std::pair<long, double>> probe_history;
  long best_iteration = -1;
};

namespace detail {

template <typename Scalar>
TrainResult<Scalar> train_loop(const RunConfig& config,
                               const PairedDataset& pairs,
                               ModelParams<Scalar> params,
                               const TrainHooks<Scalar>& hooks,
                               RngStream& batch_rng, RngStream& time_rng,
                               RngStream& xt_rng) {
  const Eigen::Index n_pairs = pairs.size();
  const int N = pairs.spec.n_tokens;
  const int B = config.batch_size;
  const KappaSchedule schedule;

  ModelParams<Scalar> grads = params.zeros_like();
  OptimizerState<Scalar> opt = OptimizerState<Scalar>::shaped_like(params);

  TrainResult<Scalar> result;
  result.losses.reserve(static_cast<std::size_t>(config.iterations));
  double best_score = std::numeric_limits<double>::infinity();

  TrainingBatch batch;
  batch.s.resize(B);
  batch.xs.resize(B, N);
  batch.x1.resize(B, N);

  auto run_probe = [&](long iteration) {
    if (hooks.probe) {
      const double score = hooks.probe(iteration, params);
      result.probe_history.emplace_back(iteration, score);
      if (score < best_score) {
        best_score = score;
        result.params = params;
        result.best_iteration = iteration;
      }
    }
    if (hooks.on_checkpoint) {
      hooks.on_checkpoint(iteration, params);
    }
  };

  for (long iter = 0; iter < config.iterations; ++iter) {
    for (int b = 0; b < B; ++b) {
      const Eigen::Index row = static_cast<Eigen::Index>(
          batch_rng.uniform_int(static_cast<std::uint64_t>(n_pairs)));
      const double s = time_rng.uniform();
      if (hooks.record_local_times != nullptr) {
        hooks.record_local_times->push_back(s);
      }
      batch.s(b) = s;
      batch.x1.row(b) = pairs.dst.row(row);
      batch.xs.row(b) = sample_xt(s, pairs.src.row(row), pairs.dst.row(row),
                                  schedule, xt_rng);
    }

    double loss = 0.0;
    try {
      loss = loss_and_grads(params, batch, grads);
    } catch (const NumericalError& e) {
      throw NumericalError("training iteration " + std::to_string(iter) + ": " +
                           e.what());
    }
    amsgrad_step(params, grads, opt, config.learning_rate);
    result.losses.push_back(loss);

    if (hooks.on_progress && hooks.progress_every > 0 &&
        (iter + 1) % hooks.progress_every == 0) {
      hooks.on_progress(iter + 1, loss);
    }
    if (hooks.probe_every > 0 && (iter + 1) % hooks.probe_every == 0) {
      run_probe(iter + 1);
    }
  }
  // Close out the probe/checkpoint cadence when the loop length is not a
  // multiple of it (or probing is cadence-free).
  if (config.iterations == 0 || hooks.probe_every <= 0 ||
      config.iterations % hooks.probe_every != 0) {
    run_probe(config.iterations);
  }

  result.final_params = std::move(params);
  if (result.best_iteration < 0) {
    result.params = result.final_params;
  }
  return result;
}

}  // namespace detail

/// The warm-start training loop: per iteration draw a batch of coupled
/// (src, dst) pairs, a local time s ~ Uniform(0,1) per example (equivalently
/// t ~ Uniform(t0,1) on the global clock), the noisy state x_s from the
/// pinned mixture, then one cross-entropy/AMSGrad step toward the dst
/// tokens. The network sees only the local clock, so the trained model
/// depends on the coupling but not on t0.
template <typename Scalar = float>
TrainResult<Scalar> train(const RunConfig& config, const PairedDataset& pairs,
                          const TrainHooks<Scalar>& hooks = {}) {
  config.validate();
  pairs.validate();

  RngStream init_rng(config.seed, "train/init");
  RngStream batch_rng(config.seed, "train/batch");
  RngStream time_rng(config.seed, "train/time");
  RngStream xt_rng(config.seed, "train/xt");

  ModelParams<Scalar> params =
      ModelParams<Scalar>::init(pairs.spec, config.embed_dim,
                                config.hidden_dim, config.n_layers, init_rng);
  return detail::train_loop(config, pairs, std::move(params), hooks,
                            batch_rng, time_rng, xt_rng);
}

/// Continue training from an existing parameter set (the paper's finetuning
/// path); dimensions must match the pairs' grid.
template <typename Scalar = float>
TrainResult<Scalar> finetune(const ModelParams<Scalar>& base,
                             const RunConfig& config, const PairedDataset& pairs,
                             const TrainHooks<Scalar>& hooks = {}) {
  config.validate();
  pairs.validate();
  base.validate();
  if (!(base.spec == pairs.spec)) {
    throw ValidationError("finetune: checkpoint grid does not match pairs");
  }
  RngStream batch_rng(config.seed, "finetune/batch");
  RngStream time_rng(config.seed, "finetune/time");
  RngStream xt_rng(config.seed, "finetune/xt");
  return detail::train_loop(config, pairs, base, hooks, batch_rng, time_rng,
                            xt_rng);
}

/// Vanilla DFM is the t0=0 special case: uniform-noise drafts, independent
/// coupling, same loop.
template <typename Scalar = float>
TrainResult<Scalar> train_vanilla(const RunConfig& config, const Dataset& data,
                                  const TrainHooks<Scalar>& hooks = {}) {
  config.validate();
  data.validate();
  RngStream draft_rng(config.seed, "train/vanilla/drafts");
  RngStream pair_rng(config.seed, "train/vanilla/pairs");
  const Dataset noise = uniform_noise_dataset(data.size(), data.spec, draft_rng);
  const PairedDataset pairs =
      independent_pairs(noise, data, data.size(), pair_rng);
  return train<Scalar>(config, pairs, hooks);
}

}  // namespace wsdfm
