#pragma once

#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include <filesystem>

namespace wsdfm {

/// A draft-sample source P_{t0}: either a corruption of the data at a given
/// noise level, or samples loaded from a Dataset CSV.
struct DraftModel {
  enum class Kind { corrupted_data, file };
  Kind kind = Kind::corrupted_data;
  double p_noise = 0.3;        // corrupted_data only
  std::filesystem::path path;  // file only

  void validate() const;
};

/// Draw `n` drafts. corrupted_data picks a uniformly random data row per
/// draft, then independently per token replaces it with a uniform draw from
/// [0, vocab) with probability p_noise. file reads the Dataset CSV at `path`,
/// validates it against data.spec, and draws n rows from it uniformly with
/// replacement (the file is an empirical P_{t0}).
Dataset sample_drafts(const DraftModel& model, const Dataset& data,
                      Eigen::Index n, RngStream& rng);

/// Pure-noise source: every token uniform over [0, vocab) — the t0=0 cold
/// start. Equivalent to corrupted_data with p_noise=1 but needs no data.
Dataset uniform_noise_dataset(Eigen::Index n, const GridSpec& spec,
                              RngStream& rng);

}  // namespace wsdfm
