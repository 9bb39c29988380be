#include "wsdfm/drafts.hpp"

#include "wsdfm/io.hpp"

#include <string>

namespace wsdfm {

void DraftModel::validate() const {
  if (kind == Kind::corrupted_data) {
    if (!(p_noise >= 0.0 && p_noise <= 1.0)) {
      throw ValidationError("DraftModel: p_noise must lie in [0, 1], got " +
                            std::to_string(p_noise));
    }
  } else if (path.empty()) {
    throw ValidationError("DraftModel: file kind requires a path");
  }
}

Dataset sample_drafts(const DraftModel& model, const Dataset& data,
                      Eigen::Index n, RngStream& rng) {
  model.validate();
  if (n < 1) {
    throw ValidationError("sample_drafts: n must be >= 1");
  }

  Dataset out;
  out.spec = data.spec;
  out.samples.resize(n, data.spec.n_tokens);

  if (model.kind == DraftModel::Kind::file) {
    Dataset file_ds = read_dataset_csv(model.path);
    if (file_ds.spec.n_tokens != data.spec.n_tokens) {
      throw ValidationError("sample_drafts: draft file has " +
                            std::to_string(file_ds.spec.n_tokens) +
                            " tokens per row, expected " +
                            std::to_string(data.spec.n_tokens));
    }
    validate_tokens(file_ds.samples, data.spec, "draft file " +
                                                    model.path.string());
    const auto rows = static_cast<std::uint64_t>(file_ds.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      out.samples.row(i) = file_ds.samples.row(
          static_cast<Eigen::Index>(rng.uniform_int(rows)));
    }
    return out;
  }

  data.validate();
  const auto rows = static_cast<std::uint64_t>(data.size());
  const auto vocab = static_cast<std::uint64_t>(data.spec.vocab);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.samples.row(i) =
        data.samples.row(static_cast<Eigen::Index>(rng.uniform_int(rows)));
    for (int c = 0; c < data.spec.n_tokens; ++c) {
      if (rng.uniform() < model.p_noise) {
        out.samples(i, c) = static_cast<int>(rng.uniform_int(vocab));
      }
    }
  }
  return out;
}

Dataset uniform_noise_dataset(Eigen::Index n, const GridSpec& spec,
                              RngStream& rng) {
  spec.validate();
  if (n < 1) {
    throw ValidationError("uniform_noise_dataset: n must be >= 1");
  }
  Dataset out;
  out.spec = spec;
  out.samples.resize(n, spec.n_tokens);
  const auto vocab = static_cast<std::uint64_t>(spec.vocab);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < spec.n_tokens; ++c) {
      out.samples(i, c) = static_cast<int>(rng.uniform_int(vocab));
    }
  }
  return out;
}

}  // namespace wsdfm
