#include "wsdfm/two_moons.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wsdfm {

int quantize_coord(double c, int vocab) {
  const int v = static_cast<int>(std::floor(c * vocab));
  return std::clamp(v, 0, vocab - 1);
}

double dequantize_coord(int v, int vocab) { return (v + 0.5) / vocab; }

TokenSeq quantize(std::pair<double, double> point, const GridSpec& spec) {
  if (spec.n_tokens != 2) {
    throw ValidationError("quantize: point form requires n_tokens == 2");
  }
  TokenSeq seq(2);
  seq(0) = quantize_coord(point.first, spec.vocab);
  seq(1) = quantize_coord(point.second, spec.vocab);
  return seq;
}

std::pair<double, double> dequantize(const Eigen::Ref<const TokenSeq>& seq,
                                     const GridSpec& spec) {
  if (spec.n_tokens != 2 || seq.size() != 2) {
    throw ValidationError("dequantize: point form requires n_tokens == 2");
  }
  return {dequantize_coord(seq(0), spec.vocab),
          dequantize_coord(seq(1), spec.vocab)};
}

Dataset two_moons_dataset(Eigen::Index n, double noise_std,
                          const GridSpec& spec, RngStream& rng) {
  spec.validate();
  if (spec.n_tokens != 2) {
    throw ValidationError("two_moons_dataset: requires n_tokens == 2");
  }
  if (n < 1) {
    throw ValidationError("two_moons_dataset: n must be >= 1");
  }
  if (!(noise_std >= 0.0)) {
    throw ValidationError("two_moons_dataset: noise_std must be >= 0");
  }

  constexpr double kRadius = 0.3;
  constexpr double kUpperCx = 0.35, kUpperCy = 0.55;
  constexpr double kLowerCx = 0.65, kLowerCy = 0.45;

  Dataset out;
  out.spec = spec;
  out.samples.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool upper = rng.uniform_int(2) == 0;
    // Upper moon spans theta in [0, pi]; lower spans [pi, 2*pi].
    const double theta =
        std::numbers::pi * (rng.uniform() + (upper ? 0.0 : 1.0));
    double x = (upper ? kUpperCx : kLowerCx) + kRadius * std::cos(theta);
    double y = (upper ? kUpperCy : kLowerCy) + kRadius * std::sin(theta);
    if (noise_std > 0.0) {
      x += noise_std * rng.normal();
      y += noise_std * rng.normal();
    }
    out.samples(i, 0) = quantize_coord(x, spec.vocab);
    out.samples(i, 1) = quantize_coord(y, spec.vocab);
  }
  return out;
}

}  // namespace wsdfm
