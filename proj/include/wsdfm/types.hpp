#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wsdfm {

/// One categorical sequence: n_tokens entries, each in [0, vocab).
using TokenSeq = Eigen::RowVectorXi;

/// A batch of sequences, one per row. Row-major so a row view is contiguous.
using SampleMatrix =
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-token CTMC generator rows, shape n_tokens x vocab. Each row sums to
/// zero: the entry at the current token is non-positive, all others
/// non-negative.
using RateVector = Eigen::MatrixXd;

/// Bad arguments or malformed/inconsistent input data. Mapped to exit code 2
/// by the CLI.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed text input; the message names the offending line.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Generator coefficient requested too close to the end of the clock, where
/// it diverges. Callers finalize with a direct posterior draw instead.
class ClockSaturatedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value encountered during training or generation. Mapped to
/// exit code 3 by the CLI.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state with zero likelihood under every pair of a coupling.
class UnreachableStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token grid: sequences of n_tokens positions over a vocabulary of size
/// vocab. The two-moons experiment uses n_tokens = 2, vocab = 128.
struct GridSpec {
  int n_tokens = 2;
  int vocab = 128;

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

/// An empirical distribution: a non-empty set of sequences over one grid.
struct Dataset {
  GridSpec spec;
  SampleMatrix samples;  // n x n_tokens

  Eigen::Index size() const { return samples.rows(); }
  void validate() const;
};

/// Scalar knobs shared by training and generation.
struct RunConfig {
  std::uint64_t seed = 1;
  double t0 = 0.0;         // warm-start time in [0, 1)
  double step_size = 0.05; // global Euler step h in (0, 1]
  int batch_size = 256;
  long iterations = 50000;
  double learning_rate = 3e-4;
  int hidden_dim = 128;
  int n_layers = 4;
  int embed_dim = 128;

  void validate() const;
};

/// Throws ValidationError unless every entry of `samples` is in
/// [0, spec.vocab) and the column count equals spec.n_tokens. `what` names
/// the offending object in the message.
void validate_tokens(const Eigen::Ref<const SampleMatrix>& samples,
                     const GridSpec& spec, const std::string& what);

}  // namespace wsdfm
