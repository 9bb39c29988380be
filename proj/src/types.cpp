#include "wsdfm/types.hpp"

#include <cmath>
#include <sstream>

namespace wsdfm {

void GridSpec::validate() const {
  if (n_tokens < 1) {
    throw ValidationError("GridSpec: n_tokens must be >= 1, got " +
                          std::to_string(n_tokens));
  }
  if (vocab < 2) {
    throw ValidationError("GridSpec: vocab must be >= 2, got " +
                          std::to_string(vocab));
  }
}

void Dataset::validate() const {
  spec.validate();
  if (samples.rows() == 0) {
    throw ValidationError("Dataset: empty sample set");
  }
  validate_tokens(samples, spec, "Dataset");
}

void RunConfig::validate() const {
  if (!(t0 >= 0.0 && t0 < 1.0)) {
    throw ValidationError("RunConfig: t0 must lie in [0, 1), got " +
                          std::to_string(t0));
  }
  if (!(step_size > 0.0 && step_size <= 1.0)) {
    throw ValidationError("RunConfig: step_size must lie in (0, 1], got " +
                          std::to_string(step_size));
  }
  if (batch_size < 1) {
    throw ValidationError("RunConfig: batch_size must be >= 1");
  }
  if (iterations < 0) {
    throw ValidationError("RunConfig: iterations must be >= 0");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("RunConfig: learning_rate must be positive");
  }
  if (hidden_dim < 1 || n_layers < 1 || embed_dim < 1) {
    throw ValidationError("RunConfig: model dimensions must be >= 1");
  }
}

void validate_tokens(const Eigen::Ref<const SampleMatrix>& samples,
                     const GridSpec& spec, const std::string& what) {
  if (samples.cols() != spec.n_tokens) {
    std::ostringstream os;
    os << what << ": expected " << spec.n_tokens << " tokens per row, got "
       << samples.cols();
    throw ValidationError(os.str());
  }
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
      const int v = samples(r, c);
      if (v < 0 || v >= spec.vocab) {
        std::ostringstream os;
        os << what << ": token out of range at row " << r << ", column " << c
           << ": " << v << " not in [0, " << spec.vocab << ")";
        throw ValidationError(os.str());
      }
    }
  }
}

}  // namespace wsdfm
