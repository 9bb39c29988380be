#pragma once

#include "wsdfm/io.hpp"
#include "wsdfm/rng.hpp"
#include "wsdfm/types.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace wsdfm {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Fourier time conditioning: [sin(2πk·s), cos(2πk·s)] for k = 1..8.
inline constexpr int kTimeFeatureDim = 16;

template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> time_features(double s) {
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> f(kTimeFeatureDim);
  for (int k = 1; k <= kTimeFeatureDim / 2; ++k) {
    const double angle = 2.0 * std::numbers::pi * k * s;
    f(2 * (k - 1)) = static_cast<Scalar>(std::sin(angle));
    f(2 * (k - 1) + 1) = static_cast<Scalar>(std::cos(angle));
  }
  return f;
}

/// The posterior network v_θ(s, x): each token is looked up in a shared
/// embedding table, the embeddings are concatenated position-wise together
/// with the time features, and an MLP (n_layers affine maps, ReLU between)
/// emits n_tokens·vocab logits — per position, a softmax over the vocab axis
/// is the predicted distribution of the terminal token x₁ᶦ.
///
/// This is the single-head collapse of the general J-component output: with
/// the two-delta path the source-branch coefficient folds into the δ_{x_t}
/// term of the sampling generator, so predicting x₁ alone suffices.
///
/// The same struct doubles as the gradient container (zeros_like()).
template <typename Scalar>
struct ModelParams {
  GridSpec spec;
  int embed_dim = 0;
  int hidden_dim = 0;
  int n_layers = 0;

  DenseMatrix<Scalar> embed;                 // vocab x embed_dim
  std::vector<DenseMatrix<Scalar>> weights;  // [l]: in_dim x out_dim
  std::vector<DenseMatrix<Scalar>> biases;   // [l]: 1 x out_dim

  int input_dim() const { return spec.n_tokens * embed_dim + kTimeFeatureDim; }
  int output_dim() const { return spec.n_tokens * spec.vocab; }

  /// Layer width sequence: input_dim, hidden…, output_dim (n_layers+1 long).
  std::vector<int> layer_dims() const {
    std::vector<int> dims(static_cast<std::size_t>(n_layers) + 1, hidden_dim);
    dims.front() = input_dim();
    dims.back() = output_dim();
    return dims;
  }

  /// All tensors in the declared (checkpoint) order: embed, then per layer
  /// weight and bias.
  std::vector<DenseMatrix<Scalar>*> tensor_list() {
    std::vector<DenseMatrix<Scalar>*> out;
    out.push_back(&embed);
    for (int l = 0; l < n_layers; ++l) {
      out.push_back(&weights[static_cast<std::size_t>(l)]);
      out.push_back(&biases[static_cast<std::size_t>(l)]);
    }
    return out;
  }
  std::vector<const DenseMatrix<Scalar>*> tensor_list() const {
    std::vector<const DenseMatrix<Scalar>*> out;
    out.push_back(&embed);
    for (int l = 0; l < n_layers; ++l) {
      out.push_back(&weights[static_cast<std::size_t>(l)]);
      out.push_back(&biases[static_cast<std::size_t>(l)]);
    }
    return out;
  }

  /// Same shapes, all entries zero — the gradient accumulator.
  ModelParams zeros_like() const {
    ModelParams z;
    z.spec = spec;
    z.embed_dim = embed_dim;
    z.hidden_dim = hidden_dim;
    z.n_layers = n_layers;
    z.embed = DenseMatrix<Scalar>::Zero(embed.rows(), embed.cols());
    z.weights.reserve(weights.size());
    z.biases.reserve(biases.size());
    for (const auto& w : weights) {
      z.weights.push_back(DenseMatrix<Scalar>::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : biases) {
      z.biases.push_back(DenseMatrix<Scalar>::Zero(b.rows(), b.cols()));
    }
    return z;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.spec = spec;
    out.embed_dim = embed_dim;
    out.hidden_dim = hidden_dim;
    out.n_layers = n_layers;
    out.embed = embed.template cast<Other>();
    out.weights.reserve(weights.size());
    out.biases.reserve(biases.size());
    for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
    return out;
  }

  void validate() const {
    spec.validate();
    if (embed_dim < 1 || hidden_dim < 1 || n_layers < 1) {
      throw ValidationError("ModelParams: dimensions must be >= 1");
    }
    if (embed.rows() != spec.vocab || embed.cols() != embed_dim) {
      throw ValidationError("ModelParams: embed table shape mismatch");
    }
    const auto dims = layer_dims();
    if (static_cast<int>(weights.size()) != n_layers ||
        static_cast<int>(biases.size()) != n_layers) {
      throw ValidationError("ModelParams: layer count mismatch");
    }
    for (int l = 0; l < n_layers; ++l) {
      const auto& w = weights[static_cast<std::size_t>(l)];
      const auto& b = biases[static_cast<std::size_t>(l)];
      if (w.rows() != dims[static_cast<std::size_t>(l)] ||
          w.cols() != dims[static_cast<std::size_t>(l) + 1] || b.rows() != 1 ||
          b.cols() != w.cols()) {
        throw ValidationError("ModelParams: layer " + std::to_string(l) +
                              " shape mismatch");
      }
    }
    for (const auto* t : tensor_list()) {
      if (!t->allFinite()) {
        throw NumericalError("ModelParams: non-finite parameter entries");
      }
    }
  }

  /// Fresh parameters: embeddings and hidden weights/biases drawn from
  /// uniform(−1/√fan_in, +1/√fan_in); the final layer zero so the model
  /// starts at the exact uniform posterior (iteration-0 loss = ln V).
  static ModelParams init(const GridSpec& spec_in, int embed_dim_in,
                          int hidden_dim_in, int n_layers_in, RngStream& rng) {
    ModelParams p;
    p.spec = spec_in;
    p.embed_dim = embed_dim_in;
    p.hidden_dim = hidden_dim_in;
    p.n_layers = n_layers_in;
    p.spec.validate();
    if (embed_dim_in < 1 || hidden_dim_in < 1 || n_layers_in < 1) {
      throw ValidationError("ModelParams::init: dimensions must be >= 1");
    }

    auto fill_uniform = [&rng](DenseMatrix<Scalar>& m, double bound) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          m(r, c) = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
        }
      }
    };

    p.embed.resize(p.spec.vocab, p.embed_dim);
    fill_uniform(p.embed, 1.0 / std::sqrt(static_cast<double>(p.embed_dim)));

    const auto dims = p.layer_dims();
    p.weights.resize(static_cast<std::size_t>(p.n_layers));
    p.biases.resize(static_cast<std::size_t>(p.n_layers));
    for (int l = 0; l < p.n_layers; ++l) {
      auto& w = p.weights[static_cast<std::size_t>(l)];
      auto& b = p.biases[static_cast<std::size_t>(l)];
      w.resize(dims[static_cast<std::size_t>(l)],
               dims[static_cast<std::size_t>(l) + 1]);
      b.resize(1, w.cols());
      if (l == p.n_layers - 1) {
        w.setZero();
        b.setZero();
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
        fill_uniform(w, bound);
        fill_uniform(b, bound);
      }
    }
    return p;
  }
};

/// Post-activation values kept during a forward pass for reuse in backward.
template <typename Scalar>
struct ForwardCache {
  DenseMatrix<Scalar> input;                // B x input_dim
  std::vector<DenseMatrix<Scalar>> hidden;  // post-ReLU, n_layers-1 entries
};

/// Batched forward pass: one local time per row of x. Returns B x
/// (n_tokens·vocab) logits; fills `cache` when given.
template <typename Scalar>
DenseMatrix<Scalar> forward_batch(const ModelParams<Scalar>& params,
                                  const Eigen::Ref<const Eigen::VectorXd>& s,
                                  const Eigen::Ref<const SampleMatrix>& x,
                                  ForwardCache<Scalar>* cache = nullptr) {
  const Eigen::Index B = x.rows();
  const int N = params.spec.n_tokens;
  const int E = params.embed_dim;
  if (x.cols() != N) {
    throw ValidationError("forward: sequence length mismatch");
  }
  if (s.size() != B) {
    throw ValidationError("forward: time vector length mismatch");
  }
  if (B == 0) {
    throw ValidationError("forward: empty batch");
  }

  DenseMatrix<Scalar> input(B, params.input_dim());
  for (Eigen::Index b = 0; b < B; ++b) {
    if (!(s(b) >= 0.0 && s(b) <= 1.0)) {
      throw ValidationError("forward: local time outside [0, 1]");
    }
    for (int i = 0; i < N; ++i) {
      const int tok = x(b, i);
      if (tok < 0 || tok >= params.spec.vocab) {
        throw ValidationError("forward: token out of range");
      }
      input.block(b, i * E, 1, E) = params.embed.row(tok);
    }
    input.block(b, N * E, 1, kTimeFeatureDim) = time_features<Scalar>(s(b));
  }

  if (cache != nullptr) {
    cache->input = input;
    cache->hidden.clear();
    cache->hidden.reserve(static_cast<std::size_t>(params.n_layers) - 1);
  }

  DenseMatrix<Scalar> h = std::move(input);
  for (int l = 0; l < params.n_layers; ++l) {
    DenseMatrix<Scalar> next =
        h * params.weights[static_cast<std::size_t>(l)];
    next.rowwise() += params.biases[static_cast<std::size_t>(l)].row(0);
    if (l + 1 < params.n_layers) {
      next = next.cwiseMax(Scalar(0));
      if (cache != nullptr) cache->hidden.push_back(next);
    }
    h = std::move(next);
  }
  return h;
}

/// Single-sequence forward: logits reshaped to n_tokens x vocab (row i is
/// position i's logit row).
template <typename Scalar>
DenseMatrix<Scalar> forward(const ModelParams<Scalar>& params, double s,
                            const Eigen::Ref<const TokenSeq>& x) {
  Eigen::VectorXd sv(1);
  sv(0) = s;
  SampleMatrix xm(1, x.size());
  xm.row(0) = x;
  const DenseMatrix<Scalar> flat = forward_batch(params, sv, xm);
  const int V = params.spec.vocab;
  DenseMatrix<Scalar> logits(params.spec.n_tokens, V);
  for (int i = 0; i < params.spec.n_tokens; ++i) {
    logits.row(i) = flat.row(0).segment(i * V, V);
  }
  return logits;
}

/// Softmax over the vocab axis in double precision; rows sum to 1 within
/// 1e-9 (renormalized exactly after exponentiation).
template <typename Scalar>
Eigen::MatrixXd softmax_posterior(const DenseMatrix<Scalar>& logits) {
  Eigen::MatrixXd p = logits.template cast<double>();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// One training batch: per example a local time s, the noisy state x_s, and
/// the terminal target x1.
struct TrainingBatch {
  Eigen::VectorXd s;
  SampleMatrix xs;
  SampleMatrix x1;
};

/// Mean cross-entropy of the per-position posterior against the x1 tokens
/// (averaged over batch AND positions), plus exact reverse-mode gradients
/// into `grads` (overwritten; must be shaped like `params`).
///
/// The loss sum and the softmax run in double even when Scalar is float so
/// the reported curve is comparable across precisions.
template <typename Scalar>
double loss_and_grads(const ModelParams<Scalar>& params,
                      const TrainingBatch& batch, ModelParams<Scalar>& grads) {
  const Eigen::Index B = batch.xs.rows();
  const int N = params.spec.n_tokens;
  const int V = params.spec.vocab;
  if (B == 0) {
    throw ValidationError("loss_and_grads: empty batch");
  }
  if (batch.x1.rows() != B || batch.x1.cols() != N ||
      batch.xs.cols() != N || batch.s.size() != B) {
    throw ValidationError("loss_and_grads: batch shape mismatch");
  }

  ForwardCache<Scalar> cache;
  const DenseMatrix<Scalar> logits =
      forward_batch(params, batch.s, batch.xs, &cache);

  const double inv = 1.0 / (static_cast<double>(B) * N);
  DenseMatrix<Scalar> delta(B, params.output_dim());
  double loss_sum = 0.0;
  Eigen::VectorXd row(V);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < N; ++i) {
      const int target = batch.x1(b, i);
      if (target < 0 || target >= V) {
        throw ValidationError("loss_and_grads: target token out of range");
      }
      row = logits.row(b).segment(i * V, V).template cast<double>();
      const double m = row.maxCoeff();
      row = (row.array() - m).exp();
      const double z = row.sum();
      const double nll =
          -(static_cast<double>(logits(b, i * V + target)) - m - std::log(z));
      if (!std::isfinite(nll)) {
        throw NumericalError("loss_and_grads: non-finite loss at batch index " +
                             std::to_string(b));
      }
      loss_sum += nll;
      for (int v = 0; v < V; ++v) {
        const double p = row(v) / z;
        const double g = (p - (v == target ? 1.0 : 0.0)) * inv;
        // Flush vanishing softmax tails: they carry no gradient signal but
        // land in float's subnormal range once the model gets confident,
        // collapsing GEMM throughput on the backward pass.
        delta(b, i * V + v) =
            std::abs(g) < 1e-30 ? Scalar(0) : static_cast<Scalar>(g);
      }
    }
  }

  // Reverse pass: affine layers, then scatter into the embedding table.
  for (int l = params.n_layers - 1; l >= 0; --l) {
    const DenseMatrix<Scalar>& prev =
        l == 0 ? cache.input : cache.hidden[static_cast<std::size_t>(l) - 1];
    grads.weights[static_cast<std::size_t>(l)].noalias() =
        prev.transpose() * delta;
    grads.biases[static_cast<std::size_t>(l)] = delta.colwise().sum();
    if (l == 0) break;
    DenseMatrix<Scalar> dprev =
        delta * params.weights[static_cast<std::size_t>(l)].transpose();
    // ReLU mask recovered from the post-activation (positive iff pre > 0;
    // the kink at exactly 0 takes derivative 0).
    delta = dprev.cwiseProduct(
        (prev.array() > Scalar(0)).template cast<Scalar>().matrix());
  }
  DenseMatrix<Scalar> dinput =
      delta * params.weights[0].transpose();
  grads.embed.setZero();
  const int E = params.embed_dim;
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < N; ++i) {
      grads.embed.row(batch.xs(b, i)) += dinput.block(b, i * E, 1, E);
    }
  }
  return loss_sum * inv;
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// AMSGrad accumulators, one tensor per parameter tensor in declared order.
template <typename Scalar>
struct OptimizerState {
  std::vector<DenseMatrix<Scalar>> m;     // first moment
  std::vector<DenseMatrix<Scalar>> v;     // second moment
  std::vector<DenseMatrix<Scalar>> vmax;  // running max of v
  long step = 0;

  static OptimizerState shaped_like(const ModelParams<Scalar>& p) {
    OptimizerState st;
    for (const auto* t : p.tensor_list()) {
      st.m.push_back(DenseMatrix<Scalar>::Zero(t->rows(), t->cols()));
      st.v.push_back(DenseMatrix<Scalar>::Zero(t->rows(), t->cols()));
      st.vmax.push_back(DenseMatrix<Scalar>::Zero(t->rows(), t->cols()));
    }
    return st;
  }
};

/// One AMSGrad update: exponential moments with bias correction and the
/// max-second-moment denominator,
///   m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²;  v̂ ← max(v̂, v)
///   θ ← θ − (lr/(1−β₁ᵗ)) · m / (√v̂/√(1−β₂ᵗ) + ε).
template <typename Scalar>
void amsgrad_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads,
                  OptimizerState<Scalar>& state, double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  const Scalar step_size = static_cast<Scalar>(lr / bc1);
  const Scalar inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const Scalar b1 = static_cast<Scalar>(kAdamBeta1);
  const Scalar b2 = static_cast<Scalar>(kAdamBeta2);
  const Scalar eps = static_cast<Scalar>(kAdamEpsilon);

  auto ps = params.tensor_list();
  auto gs = grads.tensor_list();
  if (ps.size() != gs.size()) {
    throw ValidationError("amsgrad_step: gradient tensor count mismatch");
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = *ps[k];
    const auto& g = *gs[k];
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ValidationError("amsgrad_step: gradient shape mismatch");
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    auto& vmax = state.vmax[k];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    vmax = vmax.cwiseMax(v);
    p.array() -=
        step_size * m.array() / (vmax.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

/// Checkpoint header fields (the JSON first line of the file).
struct CheckpointInfo {
  GridSpec spec;
  int embed_dim = 0;
  int hidden_dim = 0;
  int n_layers = 0;
  double t0 = 0.0;
  std::uint64_t seed = 0;
  long iteration = 0;
};

/// Checkpoint layout: one JSON header line {spec, dims, t0, seed, iteration},
/// then each tensor in declared order (embed, then layer weights/biases) as
/// a flat little-endian float32 array in row-major element order.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams<Scalar>& params, double t0,
                     std::uint64_t seed, long iteration) {
  params.validate();
  nlohmann::json header;
  header["spec"] = {{"n_tokens", params.spec.n_tokens},
                    {"vocab", params.spec.vocab}};
  header["dims"] = {{"embed_dim", params.embed_dim},
                    {"hidden_dim", params.hidden_dim},
                    {"n_layers", params.n_layers}};
  header["t0"] = t0;
  header["seed"] = seed;
  header["iteration"] = iteration;

  atomic_write_stream(path, [&](std::ostream& os) {
    os << header.dump() << '\n';
    std::vector<float> buf;
    for (const auto* t : params.tensor_list()) {
      buf.resize(static_cast<std::size_t>(t->size()));
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < t->rows(); ++r) {
        for (Eigen::Index c = 0; c < t->cols(); ++c) {
          buf[k++] = static_cast<float>((*t)(r, c));
        }
      }
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  });
}

template <typename Scalar>
std::pair<ModelParams<Scalar>, CheckpointInfo> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ValidationError("cannot open checkpoint " + path.string());
  }
  std::string header_line;
  if (!std::getline(is, header_line)) {
    throw ParseError(path.string() + ":1: missing checkpoint header");
  }
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded()) {
    throw ParseError(path.string() + ":1: malformed JSON checkpoint header");
  }

  CheckpointInfo info;
  try {
    info.spec.n_tokens = header.at("spec").at("n_tokens").get<int>();
    info.spec.vocab = header.at("spec").at("vocab").get<int>();
    info.embed_dim = header.at("dims").at("embed_dim").get<int>();
    info.hidden_dim = header.at("dims").at("hidden_dim").get<int>();
    info.n_layers = header.at("dims").at("n_layers").get<int>();
    info.t0 = header.at("t0").get<double>();
    info.seed = header.at("seed").get<std::uint64_t>();
    info.iteration = header.at("iteration").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ":1: checkpoint header field error: " +
                     e.what());
  }

  ModelParams<Scalar> params;
  params.spec = info.spec;
  params.embed_dim = info.embed_dim;
  params.hidden_dim = info.hidden_dim;
  params.n_layers = info.n_layers;
  params.spec.validate();
  if (info.embed_dim < 1 || info.hidden_dim < 1 || info.n_layers < 1) {
    throw ValidationError(path.string() + ": invalid checkpoint dimensions");
  }
  params.embed.resize(params.spec.vocab, params.embed_dim);
  const auto dims = params.layer_dims();
  params.weights.resize(static_cast<std::size_t>(params.n_layers));
  params.biases.resize(static_cast<std::size_t>(params.n_layers));
  for (int l = 0; l < params.n_layers; ++l) {
    params.weights[static_cast<std::size_t>(l)].resize(
        dims[static_cast<std::size_t>(l)], dims[static_cast<std::size_t>(l) + 1]);
    params.biases[static_cast<std::size_t>(l)].resize(
        1, dims[static_cast<std::size_t>(l) + 1]);
  }

  std::vector<float> buf;
  for (auto* t : params.tensor_list()) {
    buf.resize(static_cast<std::size_t>(t->size()));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (is.gcount() !=
        static_cast<std::streamsize>(buf.size() * sizeof(float))) {
      throw ParseError(path.string() + ": truncated checkpoint payload");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < t->rows(); ++r) {
      for (Eigen::Index c = 0; c < t->cols(); ++c) {
        (*t)(r, c) = static_cast<Scalar>(buf[k++]);
      }
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw ParseError(path.string() + ": trailing bytes after parameters");
  }
  params.validate();
  return {std::move(params), info};
}

}  // namespace wsdfm
