#pragma once

// Coordinate MLPs with positional encoding. Input derivatives (gradient and Hessian) are carried
// forward as second-order jets through every layer; parameter gradients come from one reverse
// sweep over the jet pass, so losses on f, grad f and Hess f all share the same backward code.

#include "sdfforge/core.hpp"

#include <random>
#include <span>

namespace sdfforge {

enum class Activation : std::uint32_t { Softplus = 0, Relu = 1 };
enum class FinalActivation : std::uint32_t { None = 0, Sigmoid = 1 };
enum class InputKind : std::uint32_t { Position = 0, SurfaceLight = 1 };

/// Unique entries of a symmetric 3x3 matrix, in jet-channel order.
inline constexpr std::array<std::array<int, 2>, 6> kHessianPairs{
    {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}}};

/// Jet channels per point: value, 3 tangents, 6 second-order entries.
inline constexpr int jet_channels(int order) { return order <= 0 ? 1 : (order == 1 ? 4 : 10); }

struct MlpArchitecture {
  std::vector<int> layer_widths;  // hidden layers
  std::vector<int> skip_layers;   // linear layer l receives [a_{l-1}, encoded input]
  Activation activation = Activation::Softplus;
  double softplus_beta = 100.0;
  int pe_octaves = 6;             // Position: applied to x. SurfaceLight: applied to the view direction.
  InputKind input = InputKind::Position;
  int descriptor_in = 0;          // SurfaceLight only
  int output_width = 1;
  int descriptor_width = 256;
  FinalActivation final_activation = FinalActivation::None;

  /// Signed distance network: softplus hidden layers, scalar head plus a location descriptor.
  static MlpArchitecture sdf(std::vector<int> widths, std::vector<int> skips, int octaves = 6,
                             int descriptor = 256) {
    MlpArchitecture a;
    a.layer_widths = std::move(widths);
    a.skip_layers = std::move(skips);
    a.pe_octaves = octaves;
    a.descriptor_width = descriptor;
    return a;
  }

  /// Surface light field g(x, n, v, descriptor) -> rgb in [0,1].
  static MlpArchitecture light_field(std::vector<int> widths, int descriptor_in, int view_octaves = 4) {
    MlpArchitecture a;
    a.layer_widths = std::move(widths);
    a.activation = Activation::Relu;
    a.pe_octaves = view_octaves;
    a.input = InputKind::SurfaceLight;
    a.descriptor_in = descriptor_in;
    a.output_width = 3;
    a.descriptor_width = 0;
    a.final_activation = FinalActivation::Sigmoid;
    return a;
  }

  int encoded_width() const {
    const int pe = 3 + 6 * pe_octaves;
    return input == InputKind::Position ? pe : 3 + 3 + pe + descriptor_in;
  }
  int linear_layers() const { return static_cast<int>(layer_widths.size()) + 1; }
  int head_width() const { return output_width + descriptor_width; }
  bool is_skip(int layer) const {
    return std::find(skip_layers.begin(), skip_layers.end(), layer) != skip_layers.end();
  }
  int fan_in(int layer) const {
    if (layer == 0) return encoded_width();
    return layer_widths[layer - 1] + (is_skip(layer) ? encoded_width() : 0);
  }
  int fan_out(int layer) const {
    return layer < static_cast<int>(layer_widths.size()) ? layer_widths[layer] : head_width();
  }
  bool twice_differentiable() const { return activation != Activation::Relu; }

  void validate() const {
    for (int w : layer_widths) require(w >= 1, ErrorKind::Config, "layer widths must be >= 1");
    const int n = static_cast<int>(layer_widths.size());
    for (int s : skip_layers)
      require(s >= 1 && s <= n - 1, ErrorKind::Config,
              "skip layer " + std::to_string(s) + " outside [1, " + std::to_string(n - 1) + "]");
    require(pe_octaves >= 0, ErrorKind::Config, "pe_octaves must be >= 0");
    require(output_width >= 1 && descriptor_width >= 0 && descriptor_in >= 0, ErrorKind::Config,
            "invalid head widths");
    require(softplus_beta > 0, ErrorKind::Config, "softplus beta must be positive");
  }

  bool operator==(const MlpArchitecture &) const = default;
};

struct ParamSegment {
  enum class Kind { Weight, Bias };
  int layer = 0;
  Kind kind = Kind::Weight;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
};

/// Weights are column-major (fan_out x fan_in) followed by the bias, layer by layer.
inline std::vector<ParamSegment> param_layout(const MlpArchitecture &arch) {
  std::vector<ParamSegment> out;
  std::size_t off = 0;
  for (int l = 0; l < arch.linear_layers(); ++l) {
    const int r = arch.fan_out(l), c = arch.fan_in(l);
    out.push_back({l, ParamSegment::Kind::Weight, r, c, off});
    off += static_cast<std::size_t>(r) * c;
    out.push_back({l, ParamSegment::Kind::Bias, r, 1, off});
    off += r;
  }
  return out;
}

inline std::size_t param_count(const MlpArchitecture &arch) {
  auto layout = param_layout(arch);
  return layout.back().offset + layout.back().rows;
}

template <class T>
struct ParamStore {
  std::vector<T> values;
  std::vector<ParamSegment> layout;

  std::size_t size() const { return values.size(); }

  Eigen::Map<MatrixX<T>> weight(int layer) {
    const auto &s = layout[2 * layer];
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const MatrixX<T>> weight(int layer) const {
    const auto &s = layout[2 * layer];
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<VectorX<T>> bias(int layer) {
    const auto &s = layout[2 * layer + 1];
    return {values.data() + s.offset, s.rows};
  }
  Eigen::Map<const VectorX<T>> bias(int layer) const {
    const auto &s = layout[2 * layer + 1];
    return {values.data() + s.offset, s.rows};
  }
  /// Aligned copy of a weight matrix. Products use it so results do not depend on where the
  /// parameter buffer happens to be allocated.
  MatrixX<T> weight_copy(int layer) const { return weight(layer); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
  }
};

/// An architecture together with its parameters.
template <class T>
struct Mlp {
  MlpArchitecture arch;
  ParamStore<T> params;

  template <class U>
  Mlp<U> cast() const {
    Mlp<U> out;
    out.arch = arch;
    out.params.layout = params.layout;
    out.params.values.assign(params.values.begin(), params.values.end());
    return out;
  }
};

template <class T>
Mlp<T> zero_mlp(const MlpArchitecture &arch) {
  arch.validate();
  Mlp<T> m;
  m.arch = arch;
  m.params.layout = param_layout(arch);
  m.params.values.assign(param_count(arch), T(0));
  return m;
}

namespace detail {

// Position encodings: the octave k sin/cos columns of layer 0 and of skip layers start 4^-(k+1)
// smaller so the fresh field is not dominated by high-frequency curvature.
inline double init_column_scale(const MlpArchitecture &arch, int layer, int col) {
  if (arch.input != InputKind::Position || (layer != 0 && !arch.is_skip(layer))) return 1.0;
  const int pe_col = col - (arch.fan_in(layer) - arch.encoded_width()) - 3;
  if (pe_col < 0) return 1.0;
  return std::pow(4.0, -(pe_col / 6 + 1));
}

} // namespace detail

/// Fan-in scaled uniform initialization with zero biases. Hidden layers use U(-sqrt(6/fan_in),
/// sqrt(6/fan_in)) (second moment preserved through a rectifier-like unit); the linear head uses
/// U(-sqrt(3/fan_in), sqrt(3/fan_in)). With position encoding the fan-in is the sum of squared
/// column scales, so the shrunken octave columns hand their share to the raw coordinates.
template <class T>
Mlp<T> init_params(const MlpArchitecture &arch, std::uint64_t seed) {
  Mlp<T> m = zero_mlp<T>(arch);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < arch.linear_layers(); ++l) {
    const bool head = l == arch.linear_layers() - 1;
    auto w = m.params.weight(l);
    std::vector<double> scale(static_cast<std::size_t>(w.cols()));
    double fan = 0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      scale[j] = detail::init_column_scale(arch, l, static_cast<int>(j));
      fan += scale[j] * scale[j];
    }
    const double bound = std::sqrt((head ? 3.0 : 6.0) / fan);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<T>(scale[j] * dist(rng));
  }
  return m;
}

/// [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{k-1} x), cos(2^{k-1} x)], componentwise.
inline VectorX<double> positional_encoding(const Vec3 &x, int octaves) {
  VectorX<double> e(3 + 6 * octaves);
  e.head<3>() = x;
  double w = 1.0;
  for (int k = 0; k < octaves; ++k, w *= 2.0)
    for (int c = 0; c < 3; ++c) {
      e(3 + 6 * k + c) = std::sin(w * x[c]);
      e(3 + 6 * k + 3 + c) = std::cos(w * x[c]);
    }
  return e;
}

/// Cached forward pass over a batch of n inputs. Column block c*n..(c+1)*n holds jet channel c.
template <class T>
struct MlpPass {
  int n = 0;
  int order = 0;
  int out_rows = 0;
  MatrixX<T> raw;                  // 3 x n raw positions (Position input)
  std::vector<MatrixX<T>> inputs;  // per linear layer, fan_in x channels*n
  std::vector<MatrixX<T>> pre;     // per hidden layer, width x channels*n
  MatrixX<T> output;               // out_rows x channels*n, after the final activation

  int channels() const { return jet_channels(order); }
  auto channel(int c) const { return output.middleCols(static_cast<Eigen::Index>(c) * n, n); }
};

namespace detail {

template <class T>
void encode_position_channels(const MatrixX<T> &raw, int octaves, int order, MatrixX<T> &dst, int first_channel) {
  const int n = static_cast<int>(raw.cols());
  const int channels = jet_channels(order);
  for (int c = first_channel; c < channels; ++c) {
    auto blk = dst.middleCols(static_cast<Eigen::Index>(c) * n, n);
    blk.setZero();
    if (c == 0) {
      blk.topRows(3) = raw;
    } else if (c <= 3) {
      blk.row(c - 1).setOnes();
    }
  }
  T w = T(1);
  for (int k = 0; k < octaves; ++k, w *= T(2)) {
    for (int a = 0; a < 3; ++a) {
      const int rs = 3 + 6 * k + a, rc = rs + 3;
      auto arg = (w * raw.row(a).array()).eval();
      auto s = arg.sin().eval();
      auto co = arg.cos().eval();
      for (int c = first_channel; c < channels; ++c) {
        auto blk = dst.middleCols(static_cast<Eigen::Index>(c) * n, n);
        if (c == 0) {
          blk.row(rs) = s.matrix();
          blk.row(rc) = co.matrix();
        } else if (c <= 3) {
          if (c - 1 == a) {
            blk.row(rs) = (w * co).matrix();
            blk.row(rc) = (-w * s).matrix();
          }
        } else {
          const auto &pr = kHessianPairs[c - 4];
          if (pr[0] == a && pr[1] == a) {
            blk.row(rs) = (-w * w * s).matrix();
            blk.row(rc) = (-w * w * co).matrix();
          }
        }
      }
    }
  }
}

template <class T>
struct ActDerivs {
  Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic> d1, d2, d3;
};

template <class T, class Z>
ActDerivs<T> activation_derivs(const MlpArchitecture &arch, const Z &z, int order) {
  ActDerivs<T> d;
  if (arch.activation == Activation::Relu) {
    d.d1 = (z.array() > T(0)).template cast<T>();
    if (order >= 1) d.d2 = decltype(d.d2)::Zero(z.rows(), z.cols());
    if (order >= 2) d.d3 = d.d2;
    return d;
  }
  const T beta = static_cast<T>(arch.softplus_beta);
  auto s = (T(1) / (T(1) + (-beta * z.array()).exp())).eval();
  d.d1 = s;
  if (order >= 1) d.d2 = beta * s * (T(1) - s);
  if (order >= 2) d.d3 = beta * beta * s * (T(1) - s) * (T(1) - T(2) * s);
  return d;
}

template <class T, class Z>
Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic> activation_value(const MlpArchitecture &arch, const Z &z) {
  if (arch.activation == Activation::Relu) return z.array().max(T(0));
  const T beta = static_cast<T>(arch.softplus_beta);
  return z.array().max(T(0)) + (-beta * z.array().abs()).exp().log1p() / beta;
}

/// Writes activation jets of pre-activation p (channels first..) into the top rows of dst.
template <class T>
void activation_forward(const MlpArchitecture &arch, const MatrixX<T> &p, int n, int order, int first_channel,
                        MatrixX<T> &dst) {
  const Eigen::Index rows = p.rows();
  auto P = [&](int c) { return p.middleCols(static_cast<Eigen::Index>(c) * n, n).array(); };
  auto D = [&](int c) { return dst.block(0, static_cast<Eigen::Index>(c) * n, rows, n).array(); };
  if (first_channel == 0) D(0) = activation_value<T>(arch, p.leftCols(n));
  if (order == 0) return;
  auto der = activation_derivs<T>(arch, p.leftCols(n), order - 1);
  for (int i = 0; i < 3; ++i) D(1 + i) = der.d1 * P(1 + i);
  if (order < 2) return;
  for (int q = 0; q < 6; ++q) {
    const auto &pr = kHessianPairs[q];
    D(4 + q) = der.d1 * P(4 + q) + der.d2 * P(1 + pr[0]) * P(1 + pr[1]);
  }
}

/// Reverse of activation_forward: adjoint of the activation jets -> adjoint of the pre-activation jets.
template <class T>
MatrixX<T> activation_backward(const MlpArchitecture &arch, const MatrixX<T> &p, int n, int order,
                               const MatrixX<T> &adj_a) {
  MatrixX<T> adj(p.rows(), p.cols());
  auto P = [&](int c) { return p.middleCols(static_cast<Eigen::Index>(c) * n, n).array(); };
  auto A = [&](int c) { return adj_a.middleCols(static_cast<Eigen::Index>(c) * n, n).array(); };
  auto R = [&](int c) { return adj.middleCols(static_cast<Eigen::Index>(c) * n, n).array(); };
  auto der = activation_derivs<T>(arch, p.leftCols(n), order);
  R(0) = der.d1 * A(0);
  if (order >= 1) {
    for (int i = 0; i < 3; ++i) {
      R(1 + i) = der.d1 * A(1 + i);
      R(0) += der.d2 * A(1 + i) * P(1 + i);
    }
  }
  if (order >= 2) {
    for (int q = 0; q < 6; ++q) {
      const int i = kHessianPairs[q][0], j = kHessianPairs[q][1];
      R(4 + q) = der.d1 * A(4 + q);
      R(1 + i) += der.d2 * A(4 + q) * P(1 + j);
      R(1 + j) += der.d2 * A(4 + q) * P(1 + i);
      R(0) += A(4 + q) * (der.d2 * P(4 + q) + der.d3 * P(1 + i) * P(1 + j));
    }
  }
  return adj;
}

template <class T>
void check_finite_output(const MlpPass<T> &pass) {
  if (!pass.output.allFinite()) throw Error(ErrorKind::Numeric, "non-finite network output");
}

} // namespace detail

/// Value-channel forward pass. `encoded` is the encoded input (encoded_width x n); for Position
/// inputs `raw` (3 x n) is kept so the pass can later be extended to derivative channels.
template <class T>
MlpPass<T> forward_encoded(const Mlp<T> &mlp, MatrixX<T> encoded, MatrixX<T> raw, int out_rows) {
  const auto &arch = mlp.arch;
  const int L = arch.linear_layers();
  MlpPass<T> pass;
  pass.n = static_cast<int>(encoded.cols());
  pass.order = 0;
  pass.out_rows = out_rows;
  pass.raw = std::move(raw);
  pass.inputs.resize(L);
  pass.pre.resize(L - 1);
  const int n = pass.n;
  const int enc = arch.encoded_width();
  pass.inputs[0] = std::move(encoded);
  for (int l = 0; l + 1 < L; ++l) {
    pass.pre[l].noalias() = mlp.params.weight_copy(l) * pass.inputs[l];
    pass.pre[l].colwise() += mlp.params.bias(l);
    auto &next = pass.inputs[l + 1];
    next.resize(arch.fan_in(l + 1), n);
    detail::activation_forward<T>(arch, pass.pre[l], n, 0, 0, next);
    if (arch.is_skip(l + 1)) next.bottomRows(enc) = pass.inputs[0].leftCols(n);
  }
  pass.output.noalias() = mlp.params.weight_copy(L - 1).topRows(out_rows) * pass.inputs[L - 1];
  pass.output.colwise() += mlp.params.bias(L - 1).head(out_rows);
  if (arch.final_activation == FinalActivation::Sigmoid)
    pass.output = (T(1) / (T(1) + (-pass.output.array()).exp())).matrix();
  return pass;
}

/// Adds derivative channels (order 1: gradient, order 2: gradient and Hessian with respect to the
/// raw position) to a value pass, reusing its cached pre-activations.
template <class T>
void extend_pass(const Mlp<T> &mlp, MlpPass<T> &pass, int order) {
  const auto &arch = mlp.arch;
  if (order <= pass.order) return;
  require(arch.input == InputKind::Position, ErrorKind::Precondition,
          "input derivatives are only defined for position-input networks");
  require(arch.final_activation == FinalActivation::None, ErrorKind::Precondition,
          "input derivatives require a linear head");
  if (order >= 2 && !arch.twice_differentiable())
    throw Error(ErrorKind::UnsupportedActivation, "second derivatives of a rectifier network vanish almost everywhere");
  const int n = pass.n;
  const int C = jet_channels(order);
  const Eigen::Index cols = static_cast<Eigen::Index>(C) * n;
  const Eigen::Index tcols = cols - n;
  const int L = arch.linear_layers();
  const int enc = arch.encoded_width();
  for (auto &m : pass.inputs) m.conservativeResize(Eigen::NoChange, cols);
  for (auto &m : pass.pre) m.conservativeResize(Eigen::NoChange, cols);
  pass.output.conservativeResize(Eigen::NoChange, cols);
  detail::encode_position_channels<T>(pass.raw, arch.pe_octaves, order, pass.inputs[0], 1);
  for (int l = 0; l + 1 < L; ++l) {
    pass.pre[l].rightCols(tcols).noalias() = mlp.params.weight_copy(l) * pass.inputs[l].rightCols(tcols);
    auto &next = pass.inputs[l + 1];
    detail::activation_forward<T>(arch, pass.pre[l], n, order, 1, next);
    if (arch.is_skip(l + 1)) next.bottomRows(enc).rightCols(tcols) = pass.inputs[0].rightCols(tcols);
  }
  pass.output.rightCols(tcols).noalias() =
      mlp.params.weight_copy(L - 1).topRows(pass.out_rows) * pass.inputs[L - 1].rightCols(tcols);
  pass.order = order;
}

/// Drops derivative channels above `order`. Channels are stored in blocks, so the lower-order pass
/// is the leading columns of every cached matrix.
template <class T>
MlpPass<T> truncate_pass(const MlpPass<T> &pass, int order) {
  if (order >= pass.order) return pass;
  MlpPass<T> out;
  out.n = pass.n;
  out.order = order;
  out.out_rows = pass.out_rows;
  out.raw = pass.raw;
  const Eigen::Index cols = static_cast<Eigen::Index>(jet_channels(order)) * pass.n;
  for (const auto &m : pass.inputs) out.inputs.push_back(m.leftCols(cols));
  for (const auto &m : pass.pre) out.pre.push_back(m.leftCols(cols));
  out.output = pass.output.leftCols(cols);
  return out;
}

template <class T>
MatrixX<T> encode_positions(std::span<const Vec3> xs, int octaves) {
  MatrixX<T> raw(3, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) raw.col(static_cast<Eigen::Index>(i)) = xs[i].cast<T>();
  return raw;
}

/// Batched forward over positions with `order` derivative channels and the first out_rows head rows.
template <class T>
MlpPass<T> forward_points(const Mlp<T> &mlp, std::span<const Vec3> xs, int order, int out_rows) {
  require(mlp.arch.input == InputKind::Position, ErrorKind::Precondition, "position network expected");
  MatrixX<T> raw = encode_positions<T>(xs, mlp.arch.pe_octaves);
  MatrixX<T> enc(mlp.arch.encoded_width(), raw.cols());
  detail::encode_position_channels<T>(raw, mlp.arch.pe_octaves, 0, enc, 0);
  auto pass = forward_encoded(mlp, std::move(enc), std::move(raw), out_rows);
  extend_pass(mlp, pass, order);
  detail::check_finite_output(pass);
  return pass;
}

/// Reverse sweep. adj_out matches pass.output; gradients are added into grad (ParamStore aligned).
/// When adj_encoded is given it receives the adjoint of the value channel of the encoded input.
template <class T>
void backward(const Mlp<T> &mlp, const MlpPass<T> &pass, MatrixX<T> adj, T *grad, MatrixX<T> *adj_encoded = nullptr) {
  const auto &arch = mlp.arch;
  const int L = arch.linear_layers();
  const int n = pass.n;
  const int enc = arch.encoded_width();
  if (arch.final_activation == FinalActivation::Sigmoid)
    adj.array() *= pass.output.array() * (T(1) - pass.output.array());
  MatrixX<T> adj_enc;
  if (adj_encoded) adj_enc = MatrixX<T>::Zero(enc, n);
  const auto &layout = mlp.params.layout;
  for (int l = L - 1; l >= 0; --l) {
    const auto &ws = layout[2 * l];
    const auto &bs = layout[2 * l + 1];
    const Eigen::Index rows = adj.rows();
    Eigen::Map<MatrixX<T>> gw(grad + ws.offset, ws.rows, ws.cols);
    Eigen::Map<VectorX<T>> gb(grad + bs.offset, bs.rows);
    // Products go through aligned temporaries: Eigen's kernels peel differently for unaligned
    // destinations, which would make the summation order depend on the buffer address.
    MatrixX<T> dw = adj * pass.inputs[l].transpose();
    VectorX<T> db = adj.leftCols(n).rowwise().sum();
    gw.topRows(rows) += dw;
    gb.head(rows) += db;
    if (l == 0) {
      if (adj_encoded) adj_enc.noalias() += mlp.params.weight_copy(0).transpose() * adj.leftCols(n);
      break;
    }
    MatrixX<T> adj_in = mlp.params.weight_copy(l).topRows(rows).transpose() * adj;
    if (adj_encoded && arch.is_skip(l)) adj_enc += adj_in.bottomRows(enc).leftCols(n);
    MatrixX<T> adj_a = adj_in.topRows(arch.layer_widths[l - 1]);
    adj = detail::activation_backward<T>(arch, pass.pre[l - 1], n, pass.order, adj_a);
  }
  if (adj_encoded) *adj_encoded = std::move(adj_enc);
}

// ---------------------------------------------------------------------------------------------
// Single-point interface.

template <class T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

/// Forward record for one input: the network it came from plus its cached value pass.
template <class T>
struct EvalRecord {
  const Mlp<T> *mlp = nullptr;
  MlpPass<T> pass;
};

template <class T>
struct SdfValue {
  T distance;
  VectorX<T> descriptor;
  EvalRecord<T> record;
};

template <class T>
SdfValue<T> eval_sdf(const Mlp<T> &mlp, const Vec3 &x) {
  require(mlp.arch.input == InputKind::Position, ErrorKind::Precondition, "eval_sdf needs a position network");
  if (!mlp.params.all_finite()) throw Error(ErrorKind::Numeric, "non-finite parameter");
  std::array<Vec3, 1> xs{x};
  SdfValue<T> out;
  out.record.mlp = &mlp;
  out.record.pass = forward_points(mlp, std::span<const Vec3>(xs), 0, mlp.arch.head_width());
  out.distance = out.record.pass.output(0, 0);
  out.descriptor = out.record.pass.output.col(0).tail(mlp.arch.descriptor_width);
  return out;
}

/// Exact gradient of the scalar head with respect to the raw position.
template <class T>
Vec3T<T> grad_sdf(const EvalRecord<T> &rec) {
  MlpPass<T> pass = rec.pass;
  extend_pass(*rec.mlp, pass, 1);
  Vec3T<T> g(pass.output(0, 1), pass.output(0, 2), pass.output(0, 3));
  if (!g.allFinite()) throw Error(ErrorKind::Numeric, "non-finite gradient");
  return g;
}

template <class T>
Mat3T<T> hessian_from_channels(const MatrixX<T> &out, Eigen::Index row, Eigen::Index col, Eigen::Index n) {
  Mat3T<T> h;
  for (int q = 0; q < 6; ++q) {
    const int i = kHessianPairs[q][0], j = kHessianPairs[q][1];
    h(i, j) = h(j, i) = out(row, (4 + q) * n + col);
  }
  return h;
}

/// Exact Hessian of the scalar head with respect to the raw position.
template <class T>
Mat3T<T> hessian_sdf(const EvalRecord<T> &rec) {
  if (!rec.mlp->arch.twice_differentiable())
    throw Error(ErrorKind::UnsupportedActivation, "hessian of a rectifier network");
  MlpPass<T> pass = rec.pass;
  extend_pass(*rec.mlp, pass, 2);
  Mat3T<T> h = hessian_from_channels<T>(pass.output, 0, 0, 1);
  if (!h.allFinite()) throw Error(ErrorKind::Numeric, "non-finite hessian");
  return h;
}

/// Encoded light-field input [x, n, PE(v), descriptor] for a batch of surface samples.
template <class T>
MatrixX<T> encode_surface(const MlpArchitecture &arch, std::span<const Vec3> x, std::span<const Vec3> n,
                          std::span<const Vec3> v, const MatrixX<T> &descriptor) {
  const Eigen::Index count = static_cast<Eigen::Index>(x.size());
  MatrixX<T> enc(arch.encoded_width(), count);
  MatrixX<T> vraw(3, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    enc.col(i).template head<3>() = x[i].cast<T>();
    enc.col(i).template segment<3>(3) = n[i].cast<T>();
    vraw.col(i) = v[i].cast<T>();
  }
  const int pe = 3 + 6 * arch.pe_octaves;
  MatrixX<T> venc(pe, count);
  detail::encode_position_channels<T>(vraw, arch.pe_octaves, 0, venc, 0);
  enc.middleRows(6, pe) = venc;
  if (arch.descriptor_in > 0) enc.bottomRows(arch.descriptor_in) = descriptor;
  return enc;
}

template <class T>
MlpPass<T> forward_surface(const Mlp<T> &mlp, std::span<const Vec3> x, std::span<const Vec3> n,
                           std::span<const Vec3> v, const MatrixX<T> &descriptor) {
  require(mlp.arch.input == InputKind::SurfaceLight, ErrorKind::Precondition, "light-field network expected");
  auto pass = forward_encoded(mlp, encode_surface<T>(mlp.arch, x, n, v, descriptor), MatrixX<T>(), mlp.arch.output_width);
  detail::check_finite_output(pass);
  return pass;
}

template <class T>
Vec3T<T> eval_slf(const Mlp<T> &mlp, const Vec3 &x, const Vec3 &n, const Vec3 &v, const VectorX<T> &descriptor) {
  require(std::abs(n.norm() - 1.0) <= 1e-6 && std::abs(v.norm() - 1.0) <= 1e-6, ErrorKind::Precondition,
          "normal and view direction must be unit length");
  require(descriptor.size() == mlp.arch.descriptor_in, ErrorKind::Precondition, "descriptor width mismatch");
  if (!mlp.params.all_finite()) throw Error(ErrorKind::Numeric, "non-finite parameter");
  std::array<Vec3, 1> xs{x}, ns{n}, vs{v};
  MatrixX<T> d = descriptor;
  auto pass = forward_surface(mlp, std::span<const Vec3>(xs), std::span<const Vec3>(ns), std::span<const Vec3>(vs), d);
  return pass.output.col(0).template head<3>();
}

/// Adjoint of a loss with respect to the outputs of one signed-distance evaluation.
template <class T>
struct SdfAdjoint {
  T value = T(0);
  Vec3T<T> gradient = Vec3T<T>::Zero();
  Mat3T<T> hessian = Mat3T<T>::Zero();
  VectorX<T> descriptor;  // empty or descriptor_width
};

/// Converts per-point output adjoints into the adjoint matrix expected by backward().
template <class T>
MatrixX<T> pack_adjoint(const MlpPass<T> &pass, std::span<const SdfAdjoint<T>> adj) {
  const int n = pass.n;
  MatrixX<T> out = MatrixX<T>::Zero(pass.out_rows, static_cast<Eigen::Index>(pass.channels()) * n);
  for (int k = 0; k < n; ++k) {
    const auto &a = adj[k];
    out(0, k) = a.value;
    if (a.descriptor.size() > 0) out.col(k).segment(1, a.descriptor.size()) = a.descriptor;
    if (pass.order >= 1)
      for (int i = 0; i < 3; ++i) out(0, (1 + i) * n + k) = a.gradient[i];
    if (pass.order >= 2)
      for (int q = 0; q < 6; ++q) {
        const int i = kHessianPairs[q][0], j = kHessianPairs[q][1];
        out(0, (4 + q) * n + k) = i == j ? a.hessian(i, i) : a.hessian(i, j) + a.hessian(j, i);
      }
  }
  return out;
}

/// dL/dtheta for a loss whose adjoint with respect to the record's outputs is `adj`.
template <class T>
std::vector<T> param_gradient(const EvalRecord<T> &rec, const SdfAdjoint<T> &adj) {
  const int order = adj.hessian.isZero(0) ? (adj.gradient.isZero(0) ? 0 : 1) : 2;
  MlpPass<T> pass = rec.pass;
  extend_pass(*rec.mlp, pass, order);
  std::array<SdfAdjoint<T>, 1> a{adj};
  std::vector<T> grad(rec.mlp->params.size(), T(0));
  backward(*rec.mlp, pass, pack_adjoint<T>(pass, std::span<const SdfAdjoint<T>>(a)), grad.data());
  if (!std::all_of(grad.begin(), grad.end(), [](T g) { return std::isfinite(g); }))
    throw Error(ErrorKind::Numeric, "non-finite parameter gradient");
  return grad;
}

} // namespace sdfforge
