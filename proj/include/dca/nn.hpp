#pragma once

// Feed-forward networks with hand-written reverse mode, an Adam optimizer
// over a flat parameter view, and the DCA1 checkpoint container.
//
// Parameters live in one flat buffer: for each layer the weight matrix
// (column-major, out x in) followed by the bias vector. Activations are
// applied on hidden layers only; the output layer is linear.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/core/error.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"

namespace dca {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { relu, silu };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  fail(Errc::invalid_argument, "unknown activation '" + std::string(s) + "'");
}

struct MlpSpec {
  // widths[0] is the full feature width, including the time embedding.
  std::vector<int> widths;
  Activation activation = Activation::relu;
  int time_embed = 0;

  bool operator==(const MlpSpec&) const = default;
};

// Sinusoidal embedding: sin(t f_i) for the first half, cos(t f_i) for the
// second, with f_i = 10000^(-i / (width/2)).
inline Vec time_embedding(int t, int width) {
  Vec e(width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    require(spec_.widths.size() >= 2, Errc::invalid_argument, "an MLP needs at least one layer");
    for (int w : spec_.widths) require(w >= 1, Errc::invalid_argument, "layer widths must be >= 1");
    require(spec_.time_embed >= 0 && spec_.time_embed % 2 == 0, Errc::invalid_argument,
            "time embedding width must be even");
    require(spec_.widths[0] > spec_.time_embed, Errc::invalid_argument, "no room for inputs beside the embedding");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
      offsets_.push_back(offset);
      offset += static_cast<std::size_t>(spec_.widths[l + 1]) * (spec_.widths[l] + 1);
    }
    params_ = Vec::Zero(static_cast<Eigen::Index>(offset));
  }

  // He-style scaled uniform weights, zero biases.
  static Mlp init(MlpSpec spec, std::uint64_t seed) {
    Mlp net(std::move(spec));
    Rng rng(derive_seed(seed, "mlp-init"));
    for (int l = 0; l < net.num_layers(); ++l) {
      auto w = net.weight(l);
      const double bound = std::sqrt(6.0 / w.cols());
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    }
    return net;
  }

  const MlpSpec& spec() const { return spec_; }
  int num_layers() const { return static_cast<int>(offsets_.size()); }
  int input_dim() const { return spec_.widths.front() - spec_.time_embed; }
  int output_dim() const { return spec_.widths.back(); }
  bool has_time_embedding() const { return spec_.time_embed > 0; }

  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  std::span<double> params() { return {params_.data(), num_params()}; }
  std::span<const double> params() const { return {params_.data(), num_params()}; }
  const Vec& param_vector() const { return params_; }

  Eigen::Map<Mat> weight(int l) { return {params_.data() + offsets_[l], rows(l), cols(l)}; }
  Eigen::Map<const Mat> weight(int l) const { return {params_.data() + offsets_[l], rows(l), cols(l)}; }
  Eigen::Map<Vec> bias(int l) { return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)}; }
  Eigen::Map<const Vec> bias(int l) const { return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)}; }

  std::size_t offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }

 private:
  Eigen::Index rows(int l) const { return spec_.widths[static_cast<std::size_t>(l) + 1]; }
  Eigen::Index cols(int l) const { return spec_.widths[static_cast<std::size_t>(l)]; }

  MlpSpec spec_;
  std::vector<std::size_t> offsets_;
  Vec params_;
};

// Per-layer values saved by a batched forward pass; columns are samples.
struct MlpTape {
  std::vector<Mat> inputs;  // input to each layer (post-activation of the previous one)
  std::vector<Mat> pre;     // pre-activation of each layer
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void activate(Activation a, const Mat& pre, Mat& out) {
  if (a == Activation::relu) {
    out = pre.cwiseMax(0.0);
  } else {
    out = pre.unaryExpr([](double x) { return x * sigmoid(x); });
  }
}

inline void activation_backward(Activation a, const Mat& pre, Mat& grad) {
  if (a == Activation::relu) {
    grad = grad.cwiseProduct(pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }));
  } else {
    grad = grad.cwiseProduct(pre.unaryExpr([](double x) {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }));
  }
}

inline Mat features(const Mlp& net, const Mat& inputs, std::span<const int> timesteps) {
  require(inputs.rows() == net.input_dim(), Errc::dimension_mismatch,
          "network expects input dimension " + std::to_string(net.input_dim()) + ", got " +
              std::to_string(inputs.rows()));
  if (!net.has_time_embedding()) {
    require(timesteps.empty(), Errc::invalid_argument, "timestep passed to a network without time embedding");
    return inputs;
  }
  require(timesteps.size() == static_cast<std::size_t>(inputs.cols()), Errc::missing_timestep,
          "network with time embedding needs one timestep per input");
  const int e = net.spec().time_embed;
  Mat f(inputs.rows() + e, inputs.cols());
  f.topRows(inputs.rows()) = inputs;
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) f.col(c).tail(e) = time_embedding(timesteps[c], e);
  return f;
}

}  // namespace detail

// Batched forward pass. `inputs` is input_dim x n; returns output_dim x n.
inline Mat forward_batch(const Mlp& net, const Mat& inputs, std::span<const int> timesteps = {},
                         MlpTape* tape = nullptr) {
  Mat h = detail::features(net, inputs, timesteps);
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  const int L = net.num_layers();
  for (int l = 0; l < L; ++l) {
    Mat pre = net.weight(l) * h;
    pre.colwise() += net.bias(l);
    if (tape) tape->inputs.push_back(h);
    if (l + 1 < L) {
      detail::activate(net.spec().activation, pre, h);
      if (tape) tape->pre.push_back(std::move(pre));
    } else {
      if (tape) tape->pre.push_back(pre);
      h = std::move(pre);
    }
  }
  return h;
}

inline Vec forward(const Mlp& net, const Vec& input, std::optional<int> t = std::nullopt) {
  if (t) {
    const int ts[1] = {*t};
    return forward_batch(net, input, ts).col(0);
  }
  if (net.has_time_embedding()) fail(Errc::missing_timestep, "network with time embedding needs a timestep");
  return forward_batch(net, input).col(0);
}

// Reverse pass of <outputs, cotangent>. Parameter gradients are accumulated
// into `param_grad` (same layout as Mlp::params). Returns the gradient with
// respect to the inputs, excluding the embedding rows.
inline Mat backward_batch(const Mlp& net, const MlpTape& tape, const Mat& cotangent, std::span<double> param_grad) {
  const int L = net.num_layers();
  require(static_cast<int>(tape.inputs.size()) == L, Errc::shape_mismatch, "tape does not match network depth");
  require(cotangent.rows() == net.output_dim() && cotangent.cols() == tape.inputs.front().cols(),
          Errc::shape_mismatch, "cotangent shape does not match the forward outputs");
  require(param_grad.empty() || param_grad.size() == net.num_params(), Errc::shape_mismatch,
          "parameter gradient buffer has the wrong length");
  Mat g = cotangent;
  for (int l = L - 1; l >= 0; --l) {
    if (l + 1 < L) detail::activation_backward(net.spec().activation, tape.pre[static_cast<std::size_t>(l)], g);
    if (!param_grad.empty()) {
      const auto w = net.weight(l);
      Eigen::Map<Mat> dw(param_grad.data() + net.offset(l), w.rows(), w.cols());
      Eigen::Map<Vec> db(param_grad.data() + net.offset(l) + w.size(), w.rows());
      dw.noalias() += g * tape.inputs[static_cast<std::size_t>(l)].transpose();
      db += g.rowwise().sum();
    }
    g = net.weight(l).transpose() * g;
  }
  return g.topRows(net.input_dim());
}

struct Gradients {
  Vec params;
  Vec input;
};

inline Gradients backward(const Mlp& net, const Vec& input, const Vec& cotangent,
                          std::optional<int> t = std::nullopt) {
  MlpTape tape;
  int ts[1] = {t.value_or(0)};
  if (t) {
    forward_batch(net, input, ts, &tape);
  } else {
    if (net.has_time_embedding()) fail(Errc::missing_timestep, "network with time embedding needs a timestep");
    forward_batch(net, input, {}, &tape);
  }
  require(cotangent.size() == net.output_dim(), Errc::shape_mismatch, "cotangent length");
  Gradients out;
  out.params = Vec::Zero(static_cast<Eigen::Index>(net.num_params()));
  out.input = backward_batch(net, tape, cotangent, {out.params.data(), net.num_params()}).col(0);
  return out;
}

inline std::uint64_t param_checksum(std::span<const double> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double p : params) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// A flat view of trainable parameters with matching gradient and moment
// buffers. The tape does not own the parameters.
struct ParamTape {
  std::span<double> params;
  Vec grad;
  Vec m;
  Vec v;
  std::int64_t step = 0;

  explicit ParamTape(std::span<double> p)
      : params(p),
        grad(Vec::Zero(static_cast<Eigen::Index>(p.size()))),
        m(Vec::Zero(static_cast<Eigen::Index>(p.size()))),
        v(Vec::Zero(static_cast<Eigen::Index>(p.size()))) {}

  std::span<double> grad_span() { return {grad.data(), static_cast<std::size_t>(grad.size())}; }
  void zero_grad() { grad.setZero(); }
};

inline void adam_step(ParamTape& tape, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  require(lr >= 0.0 && eps > 0.0, Errc::invalid_argument, "adam needs lr >= 0 and eps > 0");
  require(tape.grad.size() == static_cast<Eigen::Index>(tape.params.size()), Errc::shape_mismatch,
          "gradient length differs from parameter count");
  for (Eigen::Index i = 0; i < tape.grad.size(); ++i)
    if (!std::isfinite(tape.grad[i]))
      fail(Errc::non_finite, "non-finite gradient at parameter " + std::to_string(i) + " (step " +
                                 std::to_string(tape.step + 1) + ")");
  ++tape.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(tape.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(tape.step));
  for (Eigen::Index i = 0; i < tape.grad.size(); ++i) {
    const double g = tape.grad[i];
    tape.m[i] = beta1 * tape.m[i] + (1.0 - beta1) * g;
    tape.v[i] = beta2 * tape.v[i] + (1.0 - beta2) * g * g;
    const double mhat = tape.m[i] / c1;
    const double vhat = tape.v[i] / c2;
    tape.params[static_cast<std::size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  tape.zero_grad();
}

inline void adam_step(ParamTape& tape, const AdamConfig& cfg) { adam_step(tape, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps); }

// ---------------------------------------------------------------------------
// DCA1 checkpoints: "DCA1", u32 LE metadata length, JSON metadata, then every
// parameter as an f64 LE in layer order.

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Mlp net;
  nlohmann::json meta;
};

inline std::string encode_checkpoint(const Mlp& net, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json meta = extra;
  meta["format_version"] = kCheckpointVersion;
  meta["widths"] = net.spec().widths;
  meta["activation"] = to_string(net.spec().activation);
  meta["time_embed"] = net.spec().time_embed;
  meta["num_params"] = net.num_params();
  const std::string blob = meta.dump();
  std::string out = "DCA1";
  const auto len = static_cast<std::uint32_t>(blob.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += blob;
  for (double p : net.params()) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  require(bytes.size() >= 8 && bytes.substr(0, 4) == "DCA1", Errc::version_mismatch, "missing DCA1 magic");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  require(bytes.size() >= 8 + static_cast<std::size_t>(len), Errc::io, "truncated checkpoint metadata");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("bad checkpoint metadata: ") + e.what());
  }
  require(ck.meta.value("format_version", 0) == kCheckpointVersion, Errc::version_mismatch,
          "checkpoint format_version " + ck.meta.value("format_version", nlohmann::json(0)).dump() +
              ", expected " + std::to_string(kCheckpointVersion));
  MlpSpec spec;
  spec.widths = ck.meta.at("widths").get<std::vector<int>>();
  spec.activation = activation_from_string(ck.meta.at("activation").get<std::string>());
  spec.time_embed = ck.meta.at("time_embed").get<int>();
  ck.net = Mlp(spec);
  const std::size_t n = ck.net.num_params();
  require(bytes.size() == 8 + len + 8 * n, Errc::io, "checkpoint parameter block has the wrong length");
  auto params = ck.net.params();
  const char* p = bytes.data() + 8 + len;
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[8 * k + i])) << (8 * i);
    std::memcpy(&params[k], &bits, sizeof bits);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Mlp& net, const nlohmann::json& extra = nlohmann::json::object()) {
  write_file(path, encode_checkpoint(net, extra));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace dca
