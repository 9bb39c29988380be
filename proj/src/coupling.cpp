#include "wsdfm/coupling.hpp"

#include "wsdfm/io.hpp"
#include "wsdfm/two_moons.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

namespace wsdfm {

void PairedDataset::validate() const {
  spec.validate();
  if (src.rows() == 0) {
    throw ValidationError("PairedDataset: empty pair set");
  }
  if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
    throw ValidationError("PairedDataset: src and dst shapes differ");
  }
  validate_tokens(src, spec, "PairedDataset src");
  validate_tokens(dst, spec, "PairedDataset dst");
}

void CouplingSpec::validate() const {
  if (kind != Kind::independent && k < 1) {
    throw ValidationError("CouplingSpec: k must be >= 1 for knn kinds");
  }
  if (k_inject < 0) {
    throw ValidationError("CouplingSpec: k_inject must be >= 0");
  }
}

PairedDataset independent_pairs(const Dataset& srcs, const Dataset& data,
                                Eigen::Index n, RngStream& rng) {
  srcs.validate();
  data.validate();
  if (!(srcs.spec == data.spec)) {
    throw ValidationError("independent_pairs: GridSpec mismatch");
  }
  if (n < 1) {
    throw ValidationError("independent_pairs: n must be >= 1");
  }
  PairedDataset out;
  out.spec = data.spec;
  out.src.resize(n, data.spec.n_tokens);
  out.dst.resize(n, data.spec.n_tokens);
  const auto n_src = static_cast<std::uint64_t>(srcs.size());
  const auto n_dst = static_cast<std::uint64_t>(data.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.src.row(i) =
        srcs.samples.row(static_cast<Eigen::Index>(rng.uniform_int(n_src)));
    out.dst.row(i) =
        data.samples.row(static_cast<Eigen::Index>(rng.uniform_int(n_dst)));
  }
  return out;
}

namespace {

// Precondition-free kNN core shared by the public entry point and the
// (already-validated) coupling builder.
std::vector<Eigen::Index> knn_indices_unchecked(
    const Eigen::Ref<const TokenSeq>& draft, const Dataset& data, int k) {
  // Squared Euclidean distance in dequantized unit coordinates. The map
  // v -> (v+0.5)/V is affine, so this is (1/V^2) * squared token distance —
  // computed on token integers to stay exact, compared before scaling.
  const Eigen::Index n = data.size();
  std::vector<long long> d2(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    long long acc = 0;
    for (Eigen::Index c = 0; c < draft.size(); ++c) {
      const long long diff = data.samples(r, c) - draft(c);
      acc += diff * diff;
    }
    d2[static_cast<std::size_t>(r)] = acc;
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      const auto da = d2[static_cast<std::size_t>(a)];
                      const auto db = d2[static_cast<std::size_t>(b)];
                      return da != db ? da < db : a < b;
                    });
  // Right-size the result: callers may hold many of these, and a shrunken
  // resize would keep the full n-element capacity alive.
  return {order.begin(), order.begin() + k};
}

}  // namespace

std::vector<Eigen::Index> knn_indices(const Eigen::Ref<const TokenSeq>& draft,
                                      const Dataset& data, int k) {
  data.validate();
  if (k < 1) {
    throw ValidationError("knn: k must be >= 1");
  }
  if (k > data.size()) {
    throw ValidationError("knn: k exceeds dataset size");
  }
  if (draft.size() != data.spec.n_tokens) {
    throw ValidationError("knn: draft length does not match GridSpec");
  }
  return knn_indices_unchecked(draft, data, k);
}

SampleMatrix knn(const Eigen::Ref<const TokenSeq>& draft, const Dataset& data,
                 int k) {
  const auto idx = knn_indices(draft, data, k);
  SampleMatrix out(k, data.spec.n_tokens);
  for (int j = 0; j < k; ++j) {
    out.row(j) = data.samples.row(idx[static_cast<std::size_t>(j)]);
  }
  return out;
}

PairedDataset build_coupling(const Dataset& drafts, const Dataset& data,
                             const CouplingSpec& cspec, RngStream& rng) {
  drafts.validate();
  data.validate();
  cspec.validate();
  if (!(drafts.spec == data.spec)) {
    throw ValidationError("build_coupling: GridSpec mismatch");
  }
  if (cspec.kind == CouplingSpec::Kind::independent) {
    return independent_pairs(drafts, data, drafts.size(), rng);
  }
  if (cspec.k > data.size()) {
    throw ValidationError("build_coupling: k exceeds dataset size");
  }

  const int per_draft =
      cspec.k +
      (cspec.kind == CouplingSpec::Kind::knn_injected ? cspec.k_inject : 0);
  PairedDataset out;
  out.spec = data.spec;
  out.src.resize(drafts.size() * per_draft, data.spec.n_tokens);
  out.dst.resize(drafts.size() * per_draft, data.spec.n_tokens);

  // Drafts collide heavily on a quantized grid (far fewer distinct cells
  // than drafts), so memoize the neighbor search per distinct draft.
  std::map<std::vector<int>, std::vector<Eigen::Index>> memo;
  std::vector<int> key(static_cast<std::size_t>(data.spec.n_tokens));

  const auto n_data = static_cast<std::uint64_t>(data.size());
  for (Eigen::Index d = 0; d < drafts.size(); ++d) {
    // Each draft owns a substream so the injected draws are independent of
    // draft count and order.
    RngStream draft_rng = rng.substream(static_cast<std::uint64_t>(d));
    for (int c = 0; c < data.spec.n_tokens; ++c) {
      key[static_cast<std::size_t>(c)] = drafts.samples(d, c);
    }
    auto it = memo.find(key);
    if (it == memo.end()) {
      it = memo.emplace(key, knn_indices_unchecked(drafts.samples.row(d), data,
                                                   cspec.k))
               .first;
    }
    const auto& neighbors = it->second;
    Eigen::Index row = d * per_draft;
    for (int j = 0; j < cspec.k; ++j, ++row) {
      out.src.row(row) = drafts.samples.row(d);
      out.dst.row(row) = data.samples.row(neighbors[static_cast<std::size_t>(j)]);
    }
    if (cspec.kind == CouplingSpec::Kind::knn_injected) {
      for (int j = 0; j < cspec.k_inject; ++j, ++row) {
        out.src.row(row) = drafts.samples.row(d);
        out.dst.row(row) = data.samples.row(
            static_cast<Eigen::Index>(draft_rng.uniform_int(n_data)));
      }
    }
  }
  return out;
}

void save_pairs(const std::filesystem::path& path, const PairedDataset& pd) {
  pd.validate();
  write_pairs_csv(path, pd.src, pd.dst);
}

PairedDataset load_pairs(const std::filesystem::path& path, int vocab) {
  PairsFile pf = read_pairs_csv(path);
  PairedDataset pd;
  pd.spec.n_tokens = static_cast<int>(pf.src.cols());
  pd.spec.vocab = vocab;
  pd.src = std::move(pf.src);
  pd.dst = std::move(pf.dst);
  pd.validate();
  return pd;
}

}  // namespace wsdfm
