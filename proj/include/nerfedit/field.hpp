#pragma once

#include "nerfedit/common.hpp"
#include "nerfedit/hash_grid.hpp"
#include "nerfedit/spherical_harmonics.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace nerfedit {

/// Hidden width of the editing-probability head. Fixed by the architecture.
inline constexpr int kEditHiddenWidth = 64;
/// Output bias of the density logit at initialization; softplus(-3) ~ 0.049.
inline constexpr double kInitialDensityLogit = -3.0;

struct FieldConfig {
  HashGridConfig grid{};
  /// Hidden width of the density MLP and the color head.
  int hidden_width = 64;
  /// Geometry features emitted next to the density logit.
  int geo_features = 15;
  /// When false the edit head sees geometry features only, m(p) instead of m(p, d).
  bool view_dependent_edit = true;

  void validate() const;

  int density_output_dim() const { return 1 + geo_features; }
  int head_input_dim() const { return geo_features + kShCoefficients; }
  int edit_input_dim() const { return geo_features + (view_dependent_edit ? kShCoefficients : 0); }
  /// Closed-form number of trainable scalars.
  Eigen::Index parameter_count() const;

  bool operator==(const FieldConfig&) const = default;
};

/// Shape of one named tensor in row-major order.
struct TensorDims {
  int rank = 0;
  std::array<std::uint32_t, 3> dims{};
  Eigen::Index size() const {
    Eigen::Index n = 1;
    for (int i = 0; i < rank; ++i) n *= dims[i];
    return n;
  }
};

/// All trainable state of the field. Weight matrices are (out x in); biases
/// are column vectors; embeddings are features_per_entry x (levels * table_size).
template <typename Scalar>
struct FieldParameters {
  using Matrix = MatrixX<Scalar>;

  FieldConfig config;
  Matrix embeddings;
  Matrix density_w1, density_b1, density_w2, density_b2;
  Matrix color_w1, color_b1, color_w2, color_b2;
  Matrix edit_w1, edit_b1, edit_w2, edit_b2;

  /// Calls f(name, tensor, dims) on every tensor in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  /// Zero tensors with this object's shapes.
  FieldParameters zeros_like() const {
    FieldParameters out = *this;
    out.visit([](const char*, Matrix& m, const TensorDims&) { m.setZero(); });
    return out;
  }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    visit([&](const char*, const Matrix& m, const TensorDims&) { n += m.size(); });
    return n;
  }

  bool all_finite() const {
    bool finite = true;
    visit([&](const char*, const Matrix& m, const TensorDims&) { finite = finite && m.allFinite(); });
    return finite;
  }

  template <typename Other>
  FieldParameters<Other> cast() const {
    FieldParameters<Other> out;
    out.config = config;
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<Other>();
    return out;
  }

  FieldParameters& operator+=(const FieldParameters& other) {
    auto dst = tensors();
    auto src = other.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i];
    return *this;
  }
  FieldParameters& operator*=(Scalar s) {
    for (Matrix* m : tensors()) *m *= s;
    return *this;
  }

  bool operator==(const FieldParameters& other) const {
    if (!(config == other.config)) return false;
    auto a = tensors();
    auto b = other.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
    }
    return true;
  }

  std::array<Matrix*, 13> tensors() {
    return {&embeddings, &density_w1, &density_b1, &density_w2, &density_b2, &color_w1, &color_b1,
            &color_w2,   &color_b2,   &edit_w1,    &edit_b1,    &edit_w2,    &edit_b2};
  }
  std::array<const Matrix*, 13> tensors() const {
    return {&embeddings, &density_w1, &density_b1, &density_w2, &density_b2, &color_w1, &color_b1,
            &color_w2,   &color_b2,   &edit_w1,    &edit_b1,    &edit_w2,    &edit_b2};
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    const auto& grid = self.config.grid;
    auto matrix = [](const auto& m) {
      return TensorDims{2, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 0}};
    };
    auto vector = [](const auto& m) { return TensorDims{1, {static_cast<std::uint32_t>(m.rows()), 0, 0}}; };
    f("grid.embeddings", self.embeddings,
      TensorDims{3,
                 {static_cast<std::uint32_t>(grid.levels), grid.table_size,
                  static_cast<std::uint32_t>(grid.features_per_entry)}});
    f("density.w1", self.density_w1, matrix(self.density_w1));
    f("density.b1", self.density_b1, vector(self.density_b1));
    f("density.w2", self.density_w2, matrix(self.density_w2));
    f("density.b2", self.density_b2, vector(self.density_b2));
    f("color.w1", self.color_w1, matrix(self.color_w1));
    f("color.b1", self.color_b1, vector(self.color_b1));
    f("color.w2", self.color_w2, matrix(self.color_w2));
    f("color.b2", self.color_b2, vector(self.color_b2));
    f("edit.w1", self.edit_w1, matrix(self.edit_w1));
    f("edit.b1", self.edit_b1, vector(self.edit_b1));
    f("edit.w2", self.edit_w2, matrix(self.edit_w2));
    f("edit.b2", self.edit_b2, vector(self.edit_b2));
  }
};

/// Allocates zero tensors shaped for `config`.
template <typename Scalar>
FieldParameters<Scalar> zero_parameters(const FieldConfig& config) {
  config.validate();
  using Matrix = MatrixX<Scalar>;
  FieldParameters<Scalar> p;
  p.config = config;
  const int H = config.hidden_width;
  p.embeddings = Matrix::Zero(config.grid.features_per_entry, config.grid.entry_count());
  p.density_w1 = Matrix::Zero(H, config.grid.output_dim());
  p.density_b1 = Matrix::Zero(H, 1);
  p.density_w2 = Matrix::Zero(config.density_output_dim(), H);
  p.density_b2 = Matrix::Zero(config.density_output_dim(), 1);
  p.color_w1 = Matrix::Zero(H, config.head_input_dim());
  p.color_b1 = Matrix::Zero(H, 1);
  p.color_w2 = Matrix::Zero(3, H);
  p.color_b2 = Matrix::Zero(3, 1);
  p.edit_w1 = Matrix::Zero(kEditHiddenWidth, config.edit_input_dim());
  p.edit_b1 = Matrix::Zero(kEditHiddenWidth, 1);
  p.edit_w2 = Matrix::Zero(1, kEditHiddenWidth);
  p.edit_b2 = Matrix::Zero(1, 1);
  return p;
}

/// Deterministic initialization. Values are drawn in double precision and then
/// cast, so float and double parameter sets from one seed agree.
template <typename Scalar>
FieldParameters<Scalar> init_parameters(const FieldConfig& config, std::uint64_t seed) {
  FieldParameters<double> p = zero_parameters<double>(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> table(-1e-4, 1e-4);
  for (Eigen::Index i = 0; i < p.embeddings.size(); ++i) p.embeddings.data()[i] = table(rng);

  auto kaiming = [&rng](MatrixX<double>& w, double gain) {
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(w.cols())));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  };
  kaiming(p.density_w1, 2.0);
  kaiming(p.density_w2, 1.0);
  kaiming(p.color_w1, 2.0);
  kaiming(p.color_w2, 1.0);
  kaiming(p.edit_w1, 2.0);
  kaiming(p.edit_w2, 1.0);
  p.density_b2(0, 0) = kInitialDensityLogit;
  if constexpr (std::is_same_v<Scalar, double>) {
    return p;
  } else {
    return p.template cast<Scalar>();
  }
}

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

/// Field output at one point.
template <typename Scalar>
struct FieldResponse {
  Scalar sigma{};
  Vector3<Scalar> color = Vector3<Scalar>::Zero();
  Scalar edit_prob{};
};

/// Batched field outputs, one column per sample.
template <typename Scalar>
struct FieldSamples {
  ArrayX<Scalar> sigma;
  Eigen::Array<Scalar, 3, Eigen::Dynamic> color;
  ArrayX<Scalar> edit_prob;

  Eigen::Index size() const { return sigma.size(); }
};

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct FieldTape {
  Matrix3X<Scalar> positions;
  MatrixX<Scalar> encoding;
  MatrixX<Scalar> density_hidden;
  MatrixX<Scalar> density_out;
  MatrixX<Scalar> head_input;
  MatrixX<Scalar> color_hidden;
  MatrixX<Scalar> edit_hidden;
};

/// Evaluates the field on columns of `positions` / unit `directions`.
/// Throws DivergenceError if any output is non-finite.
template <typename Scalar>
FieldSamples<Scalar> query_batch(const FieldParameters<Scalar>& params, const Matrix3X<Scalar>& positions,
                                 const Matrix3X<Scalar>& directions, FieldTape<Scalar>* tape = nullptr) {
  const FieldConfig& config = params.config;
  const Eigen::Index n = positions.cols();
  if (directions.cols() != n) throw ShapeError("scene-field", "positions and directions differ in count");

  FieldTape<Scalar> local;
  FieldTape<Scalar>& t = tape ? *tape : local;
  t.positions = positions;
  encode_positions(positions, params.embeddings, config.grid, t.encoding);

  t.density_hidden.noalias() = params.density_w1 * t.encoding;
  t.density_hidden.colwise() += params.density_b1.col(0);
  t.density_hidden = t.density_hidden.cwiseMax(Scalar(0));
  t.density_out.noalias() = params.density_w2 * t.density_hidden;
  t.density_out.colwise() += params.density_b2.col(0);

  const int geo = config.geo_features;
  t.head_input.resize(config.head_input_dim(), n);
  t.head_input.topRows(geo) = t.density_out.bottomRows(geo);
  for (Eigen::Index i = 0; i < n; ++i) {
    spherical_harmonics<Scalar>(directions.col(i), t.head_input.col(i).tail(kShCoefficients));
  }

  t.color_hidden.noalias() = params.color_w1 * t.head_input;
  t.color_hidden.colwise() += params.color_b1.col(0);
  t.color_hidden = t.color_hidden.cwiseMax(Scalar(0));
  MatrixX<Scalar> rgb_raw = params.color_w2 * t.color_hidden;
  rgb_raw.colwise() += params.color_b2.col(0);

  t.edit_hidden.noalias() = params.edit_w1 * t.head_input.topRows(config.edit_input_dim());
  t.edit_hidden.colwise() += params.edit_b1.col(0);
  t.edit_hidden = t.edit_hidden.cwiseMax(Scalar(0));
  MatrixX<Scalar> edit_raw = params.edit_w2 * t.edit_hidden;
  edit_raw.array() += params.edit_b2(0, 0);

  FieldSamples<Scalar> out;
  out.sigma.resize(n);
  out.color.resize(3, n);
  out.edit_prob.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.sigma[i] = detail::softplus(t.density_out(0, i));
    for (int c = 0; c < 3; ++c) out.color(c, i) = detail::sigmoid(rgb_raw(c, i));
    out.edit_prob[i] = detail::sigmoid(edit_raw(0, i));
  }
  if (!out.sigma.allFinite() || !out.color.allFinite() || !out.edit_prob.allFinite()) {
    throw DivergenceError("scene-field", "non-finite field output (parameters diverged)");
  }
  return out;
}

/// Single-point query; `d` must be unit length.
template <typename Scalar>
FieldResponse<Scalar> query(const FieldParameters<Scalar>& params, const Vector3<Scalar>& p,
                            const Vector3<Scalar>& d) {
  const Matrix3X<Scalar> positions = p;
  const Matrix3X<Scalar> directions = d;
  const auto samples = query_batch(params, positions, directions);
  FieldResponse<Scalar> r;
  r.sigma = samples.sigma[0];
  r.color = samples.color.col(0).matrix();
  r.edit_prob = samples.edit_prob[0];
  return r;
}

/// Reverse-mode pass of query_batch. Upstream gradients are taken w.r.t. the
/// activated outputs (sigma, color, edit_prob) and accumulated into `grads`.
template <typename Scalar>
void backward(const FieldParameters<Scalar>& params, const FieldTape<Scalar>& tape,
              const FieldSamples<Scalar>& samples, const ArrayX<Scalar>& d_sigma,
              const Eigen::Array<Scalar, 3, Eigen::Dynamic>& d_color, const ArrayX<Scalar>& d_edit,
              FieldParameters<Scalar>& grads) {
  const FieldConfig& config = params.config;
  const Eigen::Index n = samples.size();
  if (n == 0) throw ShapeError("scene-field", "empty batch in backward");
  if (d_sigma.size() != n || d_color.cols() != n || d_edit.size() != n || tape.positions.cols() != n) {
    throw ShapeError("scene-field", "upstream gradients do not match the batch size");
  }
  if (!d_sigma.allFinite() || !d_color.allFinite() || !d_edit.allFinite()) {
    throw DivergenceError("scene-field", "non-finite upstream gradient");
  }

  MatrixX<Scalar> d_rgb_raw = (d_color * samples.color * (Scalar(1) - samples.color)).matrix();
  grads.color_w2.noalias() += d_rgb_raw * tape.color_hidden.transpose();
  grads.color_b2 += d_rgb_raw.rowwise().sum();
  MatrixX<Scalar> d_color_hidden = params.color_w2.transpose() * d_rgb_raw;
  d_color_hidden = (tape.color_hidden.array() > Scalar(0)).select(d_color_hidden, Scalar(0));
  grads.color_w1.noalias() += d_color_hidden * tape.head_input.transpose();
  grads.color_b1 += d_color_hidden.rowwise().sum();
  MatrixX<Scalar> d_head_input = params.color_w1.transpose() * d_color_hidden;

  const int edit_in = config.edit_input_dim();
  MatrixX<Scalar> d_edit_raw = (d_edit * samples.edit_prob * (Scalar(1) - samples.edit_prob)).matrix().transpose();
  grads.edit_w2.noalias() += d_edit_raw * tape.edit_hidden.transpose();
  grads.edit_b2(0, 0) += d_edit_raw.sum();
  MatrixX<Scalar> d_edit_hidden = params.edit_w2.transpose() * d_edit_raw;
  d_edit_hidden = (tape.edit_hidden.array() > Scalar(0)).select(d_edit_hidden, Scalar(0));
  grads.edit_w1.noalias() += d_edit_hidden * tape.head_input.topRows(edit_in).transpose();
  grads.edit_b1 += d_edit_hidden.rowwise().sum();
  d_head_input.topRows(edit_in).noalias() += params.edit_w1.transpose() * d_edit_hidden;

  const int geo = config.geo_features;
  MatrixX<Scalar> d_density_out(config.density_output_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_density_out(0, i) = d_sigma[i] * detail::sigmoid(tape.density_out(0, i));
  }
  d_density_out.bottomRows(geo) = d_head_input.topRows(geo);
  grads.density_w2.noalias() += d_density_out * tape.density_hidden.transpose();
  grads.density_b2 += d_density_out.rowwise().sum();
  MatrixX<Scalar> d_density_hidden = params.density_w2.transpose() * d_density_out;
  d_density_hidden = (tape.density_hidden.array() > Scalar(0)).select(d_density_hidden, Scalar(0));
  grads.density_w1.noalias() += d_density_hidden * tape.encoding.transpose();
  grads.density_b1 += d_density_hidden.rowwise().sum();
  const MatrixX<Scalar> d_encoding = params.density_w1.transpose() * d_density_hidden;

  encode_positions_backward(tape.positions, d_encoding, config.grid, grads.embeddings);
}

}  // namespace nerfedit
