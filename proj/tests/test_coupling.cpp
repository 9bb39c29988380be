#include "doctest.h"

#include "wsdfm/coupling.hpp"
#include "wsdfm/io.hpp"
#include "wsdfm/two_moons.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

using namespace wsdfm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "wsdfm_test_coupling";
  fs::create_directories(dir);
  return dir;
}

Dataset make_dataset(const GridSpec& spec,
                     std::initializer_list<std::pair<int, int>> rows) {
  Dataset ds;
  ds.spec = spec;
  ds.samples.resize(static_cast<Eigen::Index>(rows.size()), 2);
  Eigen::Index r = 0;
  for (const auto& [a, b] : rows) {
    ds.samples(r, 0) = a;
    ds.samples(r, 1) = b;
    ++r;
  }
  return ds;
}

}  // namespace

TEST_CASE("independent_pairs: singleton supports make identical pairs") {
  GridSpec spec{2, 128};
  Dataset srcs = make_dataset(spec, {{3, 4}});
  Dataset data = make_dataset(spec, {{7, 8}});
  RngStream rng(1, "indep-singleton");
  PairedDataset pd = independent_pairs(srcs, data, 50, rng);
  REQUIRE(pd.size() == 50);
  for (Eigen::Index i = 0; i < pd.size(); ++i) {
    CHECK(pd.src(i, 0) == 3);
    CHECK(pd.src(i, 1) == 4);
    CHECK(pd.dst(i, 0) == 7);
    CHECK(pd.dst(i, 1) == 8);
  }
}

TEST_CASE("independent_pairs: two-point target splits 50/50 within 4 sigma") {
  GridSpec spec{2, 128};
  Dataset srcs = make_dataset(spec, {{0, 0}});
  Dataset data = make_dataset(spec, {{10, 10}, {20, 20}});
  RngStream rng(2, "indep-split");
  const Eigen::Index n = 100000;
  PairedDataset pd = independent_pairs(srcs, data, n, rng);
  Eigen::Index first = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pd.dst(i, 0) == 10) ++first;
  }
  const double frac = static_cast<double>(first) / static_cast<double>(n);
  const double tol = 4.0 * std::sqrt(0.25 / static_cast<double>(n));
  CHECK(std::abs(frac - 0.5) < tol);
}

TEST_CASE("independent_pairs: n=0 is rejected") {
  GridSpec spec{2, 128};
  Dataset srcs = make_dataset(spec, {{3, 4}});
  Dataset data = make_dataset(spec, {{7, 8}});
  RngStream rng(3, "indep-bad");
  CHECK_THROWS_AS(independent_pairs(srcs, data, 0, rng), ValidationError);
}

TEST_CASE("knn: a draft present in the data is its own first neighbor") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{5, 5}, {40, 40}, {90, 90}});
  TokenSeq draft(2);
  draft << 40, 40;
  SampleMatrix nn = knn(draft, data, 1);
  CHECK(nn(0, 0) == 40);
  CHECK(nn(0, 1) == 40);
}

TEST_CASE("knn: hand-checked two-neighbor ordering") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{0, 0}, {10, 10}, {100, 100}});
  TokenSeq draft(2);
  draft << 12, 12;
  SampleMatrix nn = knn(draft, data, 2);
  CHECK(nn(0, 0) == 10);
  CHECK(nn(0, 1) == 10);
  CHECK(nn(1, 0) == 0);
  CHECK(nn(1, 1) == 0);
}

TEST_CASE("knn: equidistant candidates resolve to the lower index") {
  GridSpec spec{2, 128};
  // Rows 0 and 1 are both at distance 10 from the draft.
  Dataset data = make_dataset(spec, {{30, 20}, {10, 20}, {90, 90}});
  TokenSeq draft(2);
  draft << 20, 20;
  const auto idx = knn_indices(draft, data, 2);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 1);
}

TEST_CASE("knn: k bounds are enforced") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{1, 1}, {2, 2}});
  TokenSeq draft(2);
  draft << 0, 0;
  CHECK_THROWS_AS(knn(draft, data, 3), ValidationError);
  CHECK_THROWS_AS(knn(draft, data, 0), ValidationError);
}

TEST_CASE("knn: k = |data| returns a permutation of the data") {
  GridSpec spec{2, 128};
  RngStream rng(4, "knn-perm");
  Dataset data;
  data.spec = spec;
  data.samples.resize(20, 2);
  for (Eigen::Index r = 0; r < 20; ++r) {
    data.samples(r, 0) = static_cast<int>(rng.uniform_int(128));
    data.samples(r, 1) = static_cast<int>(rng.uniform_int(128));
  }
  TokenSeq draft(2);
  draft << 64, 64;
  const auto idx = knn_indices(draft, data, 20);
  std::set<Eigen::Index> seen(idx.begin(), idx.end());
  CHECK(seen.size() == 20);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 19);
}

TEST_CASE("knn agrees with a naive all-pairs sort oracle") {
  GridSpec spec{2, 128};
  RngStream rng(5, "knn-oracle");
  Dataset data;
  data.spec = spec;
  data.samples.resize(50, 2);
  for (Eigen::Index r = 0; r < 50; ++r) {
    data.samples(r, 0) = static_cast<int>(rng.uniform_int(128));
    data.samples(r, 1) = static_cast<int>(rng.uniform_int(128));
  }

  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq draft(2);
    draft << static_cast<int>(rng.uniform_int(128)),
        static_cast<int>(rng.uniform_int(128));
    const int k = 1 + static_cast<int>(rng.uniform_int(10));

    // Naive oracle: stable sort of all rows by exact squared distance.
    std::vector<Eigen::Index> order(50);
    for (Eigen::Index i = 0; i < 50; ++i) order[static_cast<std::size_t>(i)] = i;
    auto d2 = [&](Eigen::Index r) {
      const long long dx = data.samples(r, 0) - draft(0);
      const long long dy = data.samples(r, 1) - draft(1);
      return dx * dx + dy * dy;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return d2(a) < d2(b); });

    const auto idx = knn_indices(draft, data, k);
    REQUIRE(static_cast<int>(idx.size()) == k);
    for (int j = 0; j < k; ++j) {
      CHECK(idx[static_cast<std::size_t>(j)] ==
            order[static_cast<std::size_t>(j)]);
    }
  }
}

TEST_CASE("build_coupling: k=5 plus 5 injected over 100 drafts is 1000 pairs") {
  GridSpec spec;
  RngStream data_rng(6, "coupling-data");
  Dataset data = two_moons_dataset(500, 0.04, spec, data_rng);
  RngStream draft_rng(6, "coupling-drafts");
  Dataset drafts = two_moons_dataset(100, 0.1, spec, draft_rng);

  CouplingSpec cspec;
  cspec.kind = CouplingSpec::Kind::knn_injected;
  cspec.k = 5;
  cspec.k_inject = 5;
  RngStream rng(6, "coupling-build");
  PairedDataset pd = build_coupling(drafts, data, cspec, rng);
  CHECK(pd.size() == 1000);
  CHECK_NOTHROW(pd.validate());

  // Layout per draft: k nearest neighbors first, then k_inject injected rows,
  // so the injected fraction is exactly k_inject/(k+k_inject).
  for (Eigen::Index d = 0; d < drafts.size(); ++d) {
    SampleMatrix nn = knn(drafts.samples.row(d), data, cspec.k);
    for (int j = 0; j < cspec.k + cspec.k_inject; ++j) {
      const Eigen::Index row = d * 10 + j;
      CHECK(pd.src.row(row) == drafts.samples.row(d));
      if (j < cspec.k) {
        CHECK(pd.dst.row(row) == nn.row(j));
      }
    }
  }
}

TEST_CASE("build_coupling: k=1 with drafts from the data pairs identically") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{5, 5}, {40, 40}, {90, 90}, {120, 7}});
  Dataset drafts = make_dataset(spec, {{40, 40}, {120, 7}});
  CouplingSpec cspec;
  cspec.kind = CouplingSpec::Kind::knn;
  cspec.k = 1;
  RngStream rng(7, "coupling-self");
  PairedDataset pd = build_coupling(drafts, data, cspec, rng);
  REQUIRE(pd.size() == 2);
  CHECK(pd.src == pd.dst);
}

TEST_CASE("build_coupling: invalid k is rejected") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{5, 5}});
  Dataset drafts = make_dataset(spec, {{4, 4}});
  CouplingSpec cspec;
  cspec.kind = CouplingSpec::Kind::knn;
  cspec.k = 0;
  RngStream rng(8, "coupling-bad");
  CHECK_THROWS_AS(build_coupling(drafts, data, cspec, rng), ValidationError);
  cspec.k = 2;  // exceeds |data|
  CHECK_THROWS_AS(build_coupling(drafts, data, cspec, rng), ValidationError);
}

TEST_CASE("build_coupling: independent kind delegates to the product pairing") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{5, 5}, {9, 9}});
  Dataset drafts = make_dataset(spec, {{1, 1}, {2, 2}, {3, 3}});
  CouplingSpec cspec;
  cspec.kind = CouplingSpec::Kind::independent;
  RngStream rng(9, "coupling-indep");
  PairedDataset pd = build_coupling(drafts, data, cspec, rng);
  CHECK(pd.size() == drafts.size());
  for (Eigen::Index i = 0; i < pd.size(); ++i) {
    CHECK((pd.dst(i, 0) == 5 || pd.dst(i, 0) == 9));
  }
}

TEST_CASE("build_coupling is deterministic given the rng identity") {
  GridSpec spec;
  RngStream data_rng(10, "coupling-det-data");
  Dataset data = two_moons_dataset(300, 0.04, spec, data_rng);
  RngStream draft_rng(10, "coupling-det-drafts");
  Dataset drafts = two_moons_dataset(50, 0.1, spec, draft_rng);
  CouplingSpec cspec;  // default knn_injected, k = k_inject = 5
  RngStream rng_a(10, "coupling-det");
  RngStream rng_b(10, "coupling-det");
  PairedDataset a = build_coupling(drafts, data, cspec, rng_a);
  PairedDataset b = build_coupling(drafts, data, cspec, rng_b);
  CHECK(a.src == b.src);
  CHECK(a.dst == b.dst);
}

TEST_CASE("pairs file: save/load round trip") {
  GridSpec spec{2, 128};
  Dataset data = make_dataset(spec, {{5, 5}, {40, 40}, {90, 90}});
  Dataset drafts = make_dataset(spec, {{6, 4}, {91, 88}});
  CouplingSpec cspec;
  cspec.kind = CouplingSpec::Kind::knn;
  cspec.k = 2;
  RngStream rng(11, "pairs-roundtrip");
  PairedDataset pd = build_coupling(drafts, data, cspec, rng);

  const fs::path path = temp_dir() / "pairs.csv";
  save_pairs(path, pd);
  PairedDataset back = load_pairs(path, spec.vocab);
  CHECK(back.spec == pd.spec);
  CHECK(back.src == pd.src);
  CHECK(back.dst == pd.dst);
}

TEST_CASE("pairs file: truncated row names the line") {
  const fs::path path = temp_dir() / "truncated_pairs.csv";
  atomic_write(path, "src0,src1,dst0,dst1\n1,2,3,4\n5,6,7\n");
  try {
    load_pairs(path, 128);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("pairs file: token at or above vocab fails validation") {
  const fs::path path = temp_dir() / "hot_pairs.csv";
  atomic_write(path, "src0,src1,dst0,dst1\n1,2,3,130\n");
  CHECK_THROWS_AS(load_pairs(path, 128), ValidationError);
  // The same file is fine under a wider vocabulary.
  CHECK_NOTHROW(load_pairs(path, 131));
}
