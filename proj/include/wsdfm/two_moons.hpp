#pragma once

#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include <utility>

namespace wsdfm {

/// Map a unit coordinate to its grid cell: floor(c * vocab), clamped into
/// [0, vocab). Values outside [0, 1] clip to the boundary cells.
int quantize_coord(double c, int vocab);

/// Cell center of token v: (v + 0.5) / vocab.
double dequantize_coord(int v, int vocab);

/// Quantize a 2D point in unit coordinates to a two-token sequence.
TokenSeq quantize(std::pair<double, double> point, const GridSpec& spec);

/// Dequantize a two-token sequence to the cell-center point.
std::pair<double, double> dequantize(const Eigen::Ref<const TokenSeq>& seq,
                                     const GridSpec& spec);

/// Sample `n` points from the standard two-moons layout — upper half-circle
/// centered at (0.35, 0.55), lower at (0.65, 0.45), radius 0.3 in unit
/// coordinates — jittered with isotropic Gaussian noise of std `noise_std`,
/// then quantized onto the grid. Requires spec.n_tokens == 2.
Dataset two_moons_dataset(Eigen::Index n, double noise_std,
                          const GridSpec& spec, RngStream& rng);

}  // namespace wsdfm
