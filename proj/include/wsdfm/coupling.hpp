#pragma once

#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include <filesystem>
#include <vector>

namespace wsdfm {

/// An explicit sample of the coupling Q(x_{t0}, x1): row i of `src` pairs
/// with row i of `dst`.
struct PairedDataset {
  GridSpec spec;
  SampleMatrix src;
  SampleMatrix dst;

  Eigen::Index size() const { return src.rows(); }
  void validate() const;
};

/// How the coupling is built: independent product pairing, k-nearest-neighbor
/// refinement, or kNN with k_inject random data samples mixed in per draft.
struct CouplingSpec {
  enum class Kind { independent, knn, knn_injected };
  Kind kind = Kind::knn_injected;
  int k = 5;
  int k_inject = 5;

  void validate() const;
};

/// n pairs, each an independently drawn (uniform src sample, uniform data
/// sample) — the vanilla-DFM product coupling.
PairedDataset independent_pairs(const Dataset& srcs, const Dataset& data,
                                Eigen::Index n, RngStream& rng);

/// Indices of the k data rows nearest to `draft` in dequantized Euclidean
/// distance, ascending; ties broken toward the lower dataset index.
std::vector<Eigen::Index> knn_indices(const Eigen::Ref<const TokenSeq>& draft,
                                      const Dataset& data, int k);

/// As knn_indices but materialized: the k nearest data rows themselves.
SampleMatrix knn(const Eigen::Ref<const TokenSeq>& draft, const Dataset& data,
                 int k);

/// Build the coupling per `cspec`: for each draft, its k nearest-neighbor
/// pairs (knn kinds) plus k_inject pairs with uniformly random data rows
/// (knn_injected). Pair order is deterministic given the rng identity.
PairedDataset build_coupling(const Dataset& drafts, const Dataset& data,
                             const CouplingSpec& cspec, RngStream& rng);

/// Pairs CSV persistence (`src0..,dst0..` header). `vocab` bounds token
/// validation on load.
void save_pairs(const std::filesystem::path& path, const PairedDataset& pd);
PairedDataset load_pairs(const std::filesystem::path& path, int vocab);

}  // namespace wsdfm
