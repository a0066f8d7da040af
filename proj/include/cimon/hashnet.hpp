#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "cimon/binary_io.hpp"
#include "cimon/error.hpp"
#include "cimon/ingest.hpp"
#include "cimon/random.hpp"

namespace cimon {

/// y = x W^T + b, with `weight` shaped (out, in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Fully-connected hashing head: ReLU on hidden layers, identity on the
/// output layer, which emits one pre-activation per code bit.
struct HashModel {
  std::vector<DenseLayer> layers;

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> out;
    if (layers.empty()) return out;
    out.push_back(static_cast<std::size_t>(layers.front().weight.cols()));
    for (const auto& l : layers) out.push_back(static_cast<std::size_t>(l.weight.rows()));
    return out;
  }
  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t code_length() const { return static_cast<std::size_t>(layers.back().weight.rows()); }
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return total;
  }
};

/// Relaxed codes v = tanh(G(x)), strictly inside (-1, 1).
struct RelaxedCodes {
  Eigen::MatrixXd values;
};

using CodeMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BinaryCodes {
  CodeMatrix bits;  ///< entries in {-1, +1}

  std::size_t n() const { return static_cast<std::size_t>(bits.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(bits.cols()); }
};

struct ForwardCache {
  std::vector<std::size_t> dims;
  std::vector<Eigen::MatrixXd> inputs;          ///< input to each layer
  std::vector<Eigen::MatrixXd> pre_activations;  ///< output of each layer before its nonlinearity
  Eigen::MatrixXd codes;                         ///< tanh of the last pre-activation
};

struct Gradients {
  std::vector<DenseLayer> layers;
  Eigen::MatrixXd input;  ///< dLoss/dX
};

struct OptimState {
  std::vector<DenseLayer> velocity;
  double learning_rate = 0.001;
  double momentum = 0.9;
};

// ---------------------------------------------------------------------------

/// Glorot-uniform weights, zero biases. `hidden` may be empty for a single
/// linear layer.
inline HashModel init_model(std::size_t d, const std::vector<std::size_t>& hidden, std::size_t code_length,
                            std::uint64_t seed) {
  require(code_length >= 1, "code length L must be >= 1");
  require(d >= 1, "feature dimension must be >= 1");
  std::vector<std::size_t> dims{d};
  for (auto h : hidden) {
    require(h >= 1, "hidden widths must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(code_length);

  Rng rng(seed);
  HashModel model;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

namespace detail {

inline void check_input(const HashModel& model, const Eigen::MatrixXd& x) {
  require(!model.layers.empty(), "model has no layers");
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.cols()) +
                                              " columns, model expects " + std::to_string(model.input_dim()));
  }
}

inline void check_finite(const Eigen::MatrixXd& m, std::size_t layer) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "layer output", layer);
}

inline Eigen::MatrixXd affine(const DenseLayer& layer, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

/// Last pre-activation layer output G(X).
inline Eigen::MatrixXd head_output(const HashModel& model, const Eigen::MatrixXd& x) {
  check_input(model, x);
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Eigen::MatrixXd z = affine(model.layers[l], a);
    check_finite(z, l);
    a = l + 1 < model.layers.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
  }
  return a;
}

}  // namespace detail

/// Largest double below 1; tanh saturates to exactly +-1 past |z| ~ 19.
inline constexpr double kTanhBound = 1.0 - std::numeric_limits<double>::epsilon() / 2;

inline std::pair<RelaxedCodes, ForwardCache> forward_relaxed(const HashModel& model, const Eigen::MatrixXd& x) {
  detail::check_input(model, x);
  ForwardCache cache;
  cache.dims = model.dims();
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cache.inputs.push_back(a);
    Eigen::MatrixXd z = detail::affine(model.layers[l], a);
    detail::check_finite(z, l);
    cache.pre_activations.push_back(z);
    if (l + 1 < model.layers.size()) a = z.cwiseMax(0.0);
  }
  cache.codes = cache.pre_activations.back().array().tanh().cwiseMax(-kTanhBound).cwiseMin(kTanhBound).matrix();
  return {RelaxedCodes{cache.codes}, std::move(cache)};
}

inline std::pair<RelaxedCodes, ForwardCache> forward_relaxed(const HashModel& model, const FeatureMatrix& x) {
  return forward_relaxed(model, Eigen::MatrixXd(x.cast<double>()));
}

/// Backpropagates dLoss/dV through tanh and the dense stack.
inline Gradients backward(const HashModel& model, const ForwardCache& cache, const Eigen::MatrixXd& grad_codes) {
  if (cache.dims != model.dims() || cache.pre_activations.size() != model.layers.size()) {
    throw Error(ErrorCode::CacheMismatch, "cache was produced by a model of different shape");
  }
  if (grad_codes.rows() != cache.codes.rows() || grad_codes.cols() != cache.codes.cols()) {
    throw Error(ErrorCode::CacheMismatch, "code gradient shape differs from cached codes");
  }
  Gradients grads;
  grads.layers.resize(model.layers.size());
  Eigen::MatrixXd delta = grad_codes.cwiseProduct((1.0 - cache.codes.array().square()).matrix());
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    grads.layers[l].weight = delta.transpose() * cache.inputs[l];
    grads.layers[l].bias = delta.colwise().sum().transpose();
    Eigen::MatrixXd upstream = delta * model.layers[l].weight;
    if (l > 0) {
      const auto& z = cache.pre_activations[l - 1];
      delta = upstream.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    } else {
      grads.input = std::move(upstream);
    }
  }
  return grads;
}

/// sign(G(x)) with sign(0) = +1.
inline BinaryCodes encode(const HashModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = detail::head_output(model, x);
  BinaryCodes codes{CodeMatrix(z.rows(), z.cols())};
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) codes.bits(i, j) = z(i, j) >= 0.0 ? 1 : -1;
  return codes;
}

inline BinaryCodes encode(const HashModel& model, const FeatureMatrix& x) {
  return encode(model, Eigen::MatrixXd(x.cast<double>()));
}

// ---------------------------------------------------------------------------
// SGD with momentum: v <- mu v + g; p <- p - lr v.

inline OptimState make_optim_state(const HashModel& model, double learning_rate, double momentum) {
  require(learning_rate > 0.0, "learning rate must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  OptimState state{{}, learning_rate, momentum};
  for (const auto& l : model.layers) {
    state.velocity.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                              Eigen::VectorXd::Zero(l.bias.size())});
  }
  return state;
}

inline void sgd_momentum_step(HashModel& model, OptimState& state, const Gradients& grads) {
  if (grads.layers.size() != model.layers.size() || state.velocity.size() != model.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient/velocity layer count differs from model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& p = model.layers[l];
    auto& v = state.velocity[l];
    const auto& g = grads.layers[l];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size() || v.weight.rows() != p.weight.rows() ||
        v.weight.cols() != p.weight.cols() || v.bias.size() != p.bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter shape differs", l);
    }
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& p = model.layers[l];
    auto& v = state.velocity[l];
    const auto& g = grads.layers[l];
    v.weight = state.momentum * v.weight + g.weight;
    v.bias = state.momentum * v.bias + g.bias;
    p.weight -= state.learning_rate * v.weight;
    p.bias -= state.learning_rate * v.bias;
  }
}

/// Elementwise a += b over matching gradient sets.
inline void accumulate(Gradients& into, const Gradients& other) {
  if (into.layers.empty()) {
    into = other;
    return;
  }
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    into.layers[l].weight += other.layers[l].weight;
    into.layers[l].bias += other.layers[l].bias;
  }
}

// ---------------------------------------------------------------------------
// CIMM checkpoint: magic | layer count u32 | dims (count + 1) u64 |
// per layer: weight f64 row-major (out x in), then bias f64.

inline std::vector<std::uint8_t> encode_model(const HashModel& model) {
  std::vector<std::uint8_t> out;
  io::put_magic(out, "CIMM");
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers.size()));
  for (auto d : model.dims()) io::put<std::uint64_t>(out, d);
  for (const auto& l : model.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) io::put<double>(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) io::put<double>(out, l.bias(r));
  }
  return out;
}

inline HashModel decode_model(std::vector<std::uint8_t> bytes) {
  io::Reader in(std::move(bytes));
  in.expect_magic("CIMM");
  const auto count = in.get<std::uint32_t>();
  if (count == 0 || count > 64) throw Error(ErrorCode::MalformedHeader, "implausible layer count", 4);
  std::vector<std::uint64_t> dims(count + 1);
  std::uint64_t params = 0;
  for (auto& d : dims) {
    d = in.get<std::uint64_t>();
    if (d == 0 || d > (1ULL << 24)) throw Error(ErrorCode::MalformedHeader, "implausible layer width");
  }
  for (std::uint32_t l = 0; l < count; ++l) params += dims[l + 1] * (dims[l] + 1);
  if (in.remaining() != params * 8) {
    throw Error(ErrorCode::MalformedHeader, "parameter payload size does not match dims");
  }
  HashModel model;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto inputs = static_cast<Eigen::Index>(dims[l]);
    const auto outputs = static_cast<Eigen::Index>(dims[l + 1]);
    DenseLayer layer{Eigen::MatrixXd(outputs, inputs), Eigen::VectorXd(outputs)};
    for (Eigen::Index r = 0; r < outputs; ++r)
      for (Eigen::Index c = 0; c < inputs; ++c) layer.weight(r, c) = in.get<double>();
    for (Eigen::Index r = 0; r < outputs; ++r) layer.bias(r) = in.get<double>();
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "checkpoint parameters", l);
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

inline void save_model(const std::filesystem::path& path, const HashModel& model) {
  io::write_file(path, encode_model(model));
}

inline HashModel load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace cimon
