#include "doctest.h"

#include "wsdfm/net.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

using namespace wsdfm;
namespace fs = std::filesystem;

namespace {

constexpr double kLn128 = 4.852030263919617;  // ln(128), frozen

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "wsdfm_test_net";
  fs::create_directories(dir);
  return dir;
}

// Smallest pre-activation magnitude across hidden layers for a batch: the
// finite-difference check must stay away from ReLU kinks, so instances are
// re-drawn until this margin is comfortable.
template <typename Scalar>
double min_preactivation(const ModelParams<Scalar>& params,
                         const TrainingBatch& batch) {
  ForwardCache<Scalar> cache;
  forward_batch(params, batch.s, batch.xs, &cache);
  DenseMatrix<Scalar> h = cache.input;
  double min_abs = std::numeric_limits<double>::infinity();
  for (int l = 0; l + 1 < params.n_layers; ++l) {
    DenseMatrix<Scalar> pre = h * params.weights[static_cast<std::size_t>(l)];
    pre.rowwise() += params.biases[static_cast<std::size_t>(l)].row(0);
    min_abs = std::min(min_abs,
                       static_cast<double>(pre.cwiseAbs().minCoeff()));
    h = pre.cwiseMax(Scalar(0));
  }
  return min_abs;
}

TrainingBatch small_batch(const GridSpec& spec, RngStream& rng,
                          Eigen::Index B) {
  TrainingBatch batch;
  batch.s.resize(B);
  batch.xs.resize(B, spec.n_tokens);
  batch.x1.resize(B, spec.n_tokens);
  for (Eigen::Index b = 0; b < B; ++b) {
    batch.s(b) = rng.uniform();
    for (int i = 0; i < spec.n_tokens; ++i) {
      batch.xs(b, i) = static_cast<int>(rng.uniform_int(spec.vocab));
      batch.x1(b, i) = static_cast<int>(rng.uniform_int(spec.vocab));
    }
  }
  return batch;
}

}  // namespace

TEST_CASE("time_features: shape, range, and hand values") {
  const auto f0 = time_features<double>(0.0);
  REQUIRE(f0.size() == kTimeFeatureDim);
  for (int k = 0; k < 8; ++k) {
    CHECK(f0(2 * k) == doctest::Approx(0.0).epsilon(1e-12));      // sin
    CHECK(f0(2 * k + 1) == doctest::Approx(1.0).epsilon(1e-12));  // cos
  }
  const auto fq = time_features<double>(0.25);
  CHECK(fq(0) == doctest::Approx(1.0).epsilon(1e-12));   // sin(pi/2)
  CHECK(fq(1) == doctest::Approx(0.0).epsilon(1e-9));    // cos(pi/2)
  for (double s : {0.1, 0.37, 0.99}) {
    const auto f = time_features<double>(s);
    CHECK(f.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }
}

TEST_CASE("init: fan-in bounds and a zero final layer") {
  GridSpec spec{2, 32};
  RngStream rng(1, "net-init");
  auto p = ModelParams<double>::init(spec, 16, 24, 4, rng);
  CHECK_NOTHROW(p.validate());

  CHECK(p.embed.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  for (int l = 0; l + 1 < p.n_layers; ++l) {
    const double bound =
        1.0 / std::sqrt(static_cast<double>(p.weights[l].rows()));
    CHECK(p.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(p.biases[l].cwiseAbs().maxCoeff() <= bound);
  }
  CHECK(p.weights.back().cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.biases.back().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: zero-initialized head gives the exact uniform posterior") {
  GridSpec spec{2, 128};
  RngStream rng(2, "net-uniform");
  auto p = ModelParams<float>::init(spec, 32, 64, 4, rng);
  TokenSeq x(2);
  x << 3, 90;
  const auto logits = forward(p, 0.4, x);
  REQUIRE(logits.rows() == 2);
  REQUIRE(logits.cols() == 128);
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0f);
  const Eigen::MatrixXd post = softmax_posterior(logits);
  for (Eigen::Index i = 0; i < post.rows(); ++i) {
    CHECK(post.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (Eigen::Index v = 0; v < post.cols(); ++v) {
      CHECK(post(i, v) == doctest::Approx(1.0 / 128.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward: bitwise deterministic") {
  GridSpec spec{2, 16};
  RngStream rng(3, "net-det");
  auto p = ModelParams<double>::init(spec, 8, 12, 3, rng);
  // Give the head nonzero weights so the logits are nontrivial.
  RngStream wrng(3, "net-det-head");
  for (Eigen::Index r = 0; r < p.weights.back().rows(); ++r) {
    for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
      p.weights.back()(r, c) = wrng.uniform() - 0.5;
    }
  }
  TokenSeq x(2);
  x << 5, 11;
  const auto a = forward(p, 0.7, x);
  const auto b = forward(p, 0.7, x);
  CHECK(a == b);
}

TEST_CASE("forward: position encoding is not exchangeable") {
  GridSpec spec{2, 16};
  RngStream rng(4, "net-swap");
  auto p = ModelParams<double>::init(spec, 8, 12, 3, rng);
  RngStream wrng(4, "net-swap-head");
  for (Eigen::Index r = 0; r < p.weights.back().rows(); ++r) {
    for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
      p.weights.back()(r, c) = wrng.uniform() - 0.5;
    }
  }
  TokenSeq x(2), y(2);
  x << 5, 11;
  y << 11, 5;
  const auto lx = forward(p, 0.3, x);
  const auto ly = forward(p, 0.3, y);
  CHECK((lx - ly).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("forward: argument validation") {
  GridSpec spec{2, 16};
  RngStream rng(5, "net-args");
  auto p = ModelParams<double>::init(spec, 8, 12, 3, rng);
  TokenSeq short_x(1);
  short_x << 3;
  CHECK_THROWS_AS(forward(p, 0.5, short_x), ValidationError);
  TokenSeq hot(2);
  hot << 3, 16;
  CHECK_THROWS_AS(forward(p, 0.5, hot), ValidationError);
  TokenSeq ok(2);
  ok << 3, 4;
  CHECK_THROWS_AS(forward(p, -0.1, ok), ValidationError);
  CHECK_THROWS_AS(forward(p, 1.1, ok), ValidationError);
}

TEST_CASE("loss_and_grads: zero logits cost exactly ln V") {
  GridSpec spec{2, 128};
  RngStream rng(6, "net-lnv");
  auto p = ModelParams<float>::init(spec, 32, 64, 4, rng);
  auto grads = p.zeros_like();
  RngStream brng(6, "net-lnv-batch");
  TrainingBatch batch = small_batch(spec, brng, 4);
  const double loss = loss_and_grads(p, batch, grads);
  CHECK(loss == doctest::Approx(kLn128).epsilon(1e-12));
  CHECK(loss == doctest::Approx(std::log(128.0)).epsilon(1e-15));
}

TEST_CASE("loss_and_grads: saturated logits cost ~0") {
  GridSpec spec{2, 8};
  ModelParams<double> p;
  p.spec = spec;
  p.embed_dim = 4;
  p.hidden_dim = 8;
  p.n_layers = 1;  // single affine layer, zero weights: logits = bias
  p.embed = DenseMatrix<double>::Zero(8, 4);
  p.weights.push_back(DenseMatrix<double>::Zero(p.input_dim(), p.output_dim()));
  p.biases.push_back(DenseMatrix<double>::Zero(1, p.output_dim()));
  // Saturate the target tokens: position 0 -> 3, position 1 -> 5.
  p.biases[0](0, 0 * 8 + 3) = 50.0;
  p.biases[0](0, 1 * 8 + 5) = 50.0;

  TrainingBatch batch;
  batch.s.resize(2);
  batch.s << 0.2, 0.8;
  batch.xs.resize(2, 2);
  batch.xs << 0, 1, 2, 3;
  batch.x1.resize(2, 2);
  batch.x1 << 3, 5, 3, 5;

  auto grads = p.zeros_like();
  const double loss = loss_and_grads(p, batch, grads);
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-12);
}

TEST_CASE("loss_and_grads: batch order does not change the loss") {
  GridSpec spec{2, 16};
  RngStream rng(7, "net-perm");
  auto p = ModelParams<double>::init(spec, 8, 12, 3, rng);
  RngStream wrng(7, "net-perm-head");
  for (Eigen::Index r = 0; r < p.weights.back().rows(); ++r) {
    for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
      p.weights.back()(r, c) = wrng.uniform() - 0.5;
    }
  }
  RngStream brng(7, "net-perm-batch");
  TrainingBatch batch = small_batch(spec, brng, 6);

  TrainingBatch reversed;
  reversed.s = batch.s.reverse();
  reversed.xs = batch.xs.colwise().reverse();
  reversed.x1 = batch.x1.colwise().reverse();

  auto g1 = p.zeros_like();
  auto g2 = p.zeros_like();
  const double a = loss_and_grads(p, batch, g1);
  const double b = loss_and_grads(p, reversed, g2);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("loss_and_grads: non-finite logits raise NumericalError") {
  GridSpec spec{2, 8};
  RngStream rng(8, "net-nan");
  auto p = ModelParams<double>::init(spec, 4, 8, 2, rng);
  RngStream wrng(8, "net-nan-head");
  for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
    p.weights.back()(0, c) = wrng.uniform();
  }
  p.embed(3, 0) = std::numeric_limits<double>::quiet_NaN();

  TrainingBatch batch;
  batch.s.resize(1);
  batch.s << 0.5;
  batch.xs.resize(1, 2);
  batch.xs << 3, 1;
  batch.x1.resize(1, 2);
  batch.x1 << 0, 0;
  auto grads = p.zeros_like();
  try {
    loss_and_grads(p, batch, grads);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("batch index") != std::string::npos);
  }
}

TEST_CASE("gradcheck: reverse-mode gradients match central differences") {
  // V=8, N=2, hidden 16 in double precision; instances are re-drawn until
  // every pre-activation clears the ReLU kink by a margin that dwarfs the
  // finite-difference step.
  GridSpec spec{2, 8};
  ModelParams<double> p;
  TrainingBatch batch;
  bool found = false;
  for (std::uint64_t seed = 1; seed <= 50 && !found; ++seed) {
    RngStream rng(seed, "gradcheck-params");
    p = ModelParams<double>::init(spec, 8, 16, 4, rng);
    RngStream wrng(seed, "gradcheck-head");
    for (Eigen::Index r = 0; r < p.weights.back().rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
        p.weights.back()(r, c) = 0.5 * (wrng.uniform() - 0.5);
      }
    }
    RngStream brng(seed, "gradcheck-batch");
    batch = small_batch(spec, brng, 3);
    found = min_preactivation(p, batch) > 1e-3;
  }
  REQUIRE(found);

  auto analytic = p.zeros_like();
  loss_and_grads(p, batch, analytic);

  const double step = 1e-4;
  auto scratch_grads = p.zeros_like();
  auto tensors = p.tensor_list();
  auto grad_tensors = analytic.tensor_list();
  int checked = 0;
  double worst_rel = 0.0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto& tensor = *tensors[t];
    const auto& grad = *grad_tensors[t];
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
        const double saved = tensor(r, c);
        tensor(r, c) = saved + step;
        const double up = loss_and_grads(p, batch, scratch_grads);
        tensor(r, c) = saved - step;
        const double down = loss_and_grads(p, batch, scratch_grads);
        tensor(r, c) = saved;
        const double fd = (up - down) / (2.0 * step);
        const double g = grad(r, c);
        const double denom = std::max(std::abs(fd), std::abs(g));
        if (denom < 1e-8) {
          CHECK(std::abs(fd - g) < 1e-8);
        } else {
          const double rel = std::abs(fd - g) / denom;
          worst_rel = std::max(worst_rel, rel);
          if (rel >= 1e-5) {
            CAPTURE(t);
            CAPTURE(r);
            CAPTURE(c);
            CHECK(rel < 1e-5);
          }
        }
        ++checked;
      }
    }
  }
  CHECK(worst_rel < 1e-5);
  CHECK(checked > 1000);  // the whole parameter vector was exercised
}

TEST_CASE("amsgrad_step: zero gradient is a fixed point") {
  GridSpec spec{2, 8};
  RngStream rng(9, "adam-zero");
  auto p = ModelParams<double>::init(spec, 4, 8, 2, rng);
  auto snapshot = p;
  auto grads = p.zeros_like();
  auto state = OptimizerState<double>::shaped_like(p);
  amsgrad_step(p, grads, state, 1e-3);
  for (std::size_t t = 0; t < p.tensor_list().size(); ++t) {
    CHECK(*p.tensor_list()[t] == *snapshot.tensor_list()[t]);
  }
}

TEST_CASE("amsgrad_step: first step moves by ~lr against the gradient sign") {
  GridSpec spec{2, 8};
  RngStream rng(10, "adam-first");
  auto p = ModelParams<double>::init(spec, 4, 8, 2, rng);
  auto snapshot = p;
  auto grads = p.zeros_like();
  grads.embed(2, 1) = 3.0;
  grads.embed(5, 0) = -0.7;
  auto state = OptimizerState<double>::shaped_like(p);
  const double lr = 1e-3;
  amsgrad_step(p, grads, state, lr);

  const double d_pos = p.embed(2, 1) - snapshot.embed(2, 1);
  const double d_neg = p.embed(5, 0) - snapshot.embed(5, 0);
  CHECK(d_pos == doctest::Approx(-lr).epsilon(1e-6));
  CHECK(d_neg == doctest::Approx(lr).epsilon(1e-6));
  // Untouched entries keep their value: zero gradient, zero update.
  CHECK(p.embed(0, 0) == snapshot.embed(0, 0));
  CHECK(state.step == 1);
}

TEST_CASE("amsgrad_step: vmax is the running entrywise max of v") {
  GridSpec spec{2, 8};
  RngStream rng(11, "adam-vmax");
  auto p = ModelParams<double>::init(spec, 4, 8, 2, rng);
  auto state = OptimizerState<double>::shaped_like(p);

  auto g1 = p.zeros_like();
  g1.embed(1, 1) = 2.0;
  amsgrad_step(p, g1, state, 1e-3);
  const double v_after_1 = state.v[0](1, 1);
  CHECK(state.vmax[0](1, 1) == v_after_1);

  auto g0 = p.zeros_like();  // zero gradient: v decays, vmax must hold
  amsgrad_step(p, g0, state, 1e-3);
  CHECK(state.v[0](1, 1) < v_after_1);
  CHECK(state.vmax[0](1, 1) == v_after_1);

  // Fuzz: vmax is entrywise non-decreasing across random steps.
  RngStream grng(11, "adam-vmax-fuzz");
  auto prev_vmax = state.vmax;
  for (int it = 0; it < 20; ++it) {
    auto g = p.zeros_like();
    for (auto* t : g.tensor_list()) {
      for (Eigen::Index r = 0; r < t->rows(); ++r) {
        for (Eigen::Index c = 0; c < t->cols(); ++c) {
          (*t)(r, c) = grng.normal();
        }
      }
    }
    amsgrad_step(p, g, state, 1e-4);
    for (std::size_t k = 0; k < state.vmax.size(); ++k) {
      CHECK((state.vmax[k] - prev_vmax[k]).minCoeff() >= 0.0);
    }
    prev_vmax = state.vmax;
  }
}

TEST_CASE("checkpoint: float round trip is bit-exact with header intact") {
  GridSpec spec{2, 32};
  RngStream rng(12, "ckpt");
  auto p = ModelParams<float>::init(spec, 16, 24, 4, rng);
  // Give the head nonzero values so the payload is not trivially zero.
  RngStream wrng(12, "ckpt-head");
  for (Eigen::Index c = 0; c < p.weights.back().cols(); ++c) {
    p.weights.back()(0, c) = static_cast<float>(wrng.uniform());
  }

  const fs::path path = temp_dir() / "model.ckpt";
  save_checkpoint(path, p, 0.8, 77, 12345);
  auto [loaded, info] = load_checkpoint<float>(path);

  CHECK(info.spec == spec);
  CHECK(info.embed_dim == 16);
  CHECK(info.hidden_dim == 24);
  CHECK(info.n_layers == 4);
  CHECK(info.t0 == 0.8);
  CHECK(info.seed == 77);
  CHECK(info.iteration == 12345);

  auto orig_tensors = p.tensor_list();
  auto back_tensors = loaded.tensor_list();
  REQUIRE(orig_tensors.size() == back_tensors.size());
  for (std::size_t t = 0; t < orig_tensors.size(); ++t) {
    CHECK(*orig_tensors[t] == *back_tensors[t]);
  }
}

TEST_CASE("checkpoint: malformed files raise ParseError") {
  const fs::path missing = temp_dir() / "nope.ckpt";
  CHECK_THROWS_AS(load_checkpoint<float>(missing), ValidationError);

  const fs::path bad_header = temp_dir() / "bad_header.ckpt";
  atomic_write(bad_header, "not json\n");
  CHECK_THROWS_AS(load_checkpoint<float>(bad_header), ParseError);

  // Valid header, payload cut short.
  GridSpec spec{2, 8};
  RngStream rng(13, "ckpt-trunc");
  auto p = ModelParams<float>::init(spec, 4, 8, 2, rng);
  const fs::path full = temp_dir() / "full.ckpt";
  save_checkpoint(full, p, 0.0, 1, 0);
  std::ifstream is(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  is.close();
  const fs::path trunc = temp_dir() / "trunc.ckpt";
  atomic_write(trunc, bytes.substr(0, bytes.size() - 13));
  CHECK_THROWS_AS(load_checkpoint<float>(trunc), ParseError);

  const fs::path padded = temp_dir() / "padded.ckpt";
  atomic_write(padded, bytes + "xx");
  CHECK_THROWS_AS(load_checkpoint<float>(padded), ParseError);
}
