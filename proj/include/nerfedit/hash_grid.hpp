#pragma once

#include "nerfedit/common.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace nerfedit {

/// Multiresolution hash-grid layout. Every level owns `table_size` entries of
/// `features_per_entry` floats; coarse levels whose vertex count fits in the
/// table are indexed densely, finer levels through a spatial hash.
struct HashGridConfig {
  int levels = 8;
  int base_resolution = 16;
  double growth_factor = 1.5;
  std::uint32_t table_size = 1u << 14;
  int features_per_entry = 2;
  Aabb bbox{};

  void validate() const;

  int level_resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth_factor, level)));
  }
  bool level_is_dense(int level) const {
    const double vertices = std::pow(static_cast<double>(level_resolution(level)) + 1.0, 3.0);
    return vertices <= static_cast<double>(table_size);
  }
  int output_dim() const { return levels * features_per_entry; }
  Eigen::Index entry_count() const { return static_cast<Eigen::Index>(levels) * table_size; }

  bool operator==(const HashGridConfig&) const = default;
};

/// Per-level layout derived from a config.
struct GridLevel {
  int resolution = 0;
  bool dense = false;
  std::uint32_t offset = 0;
};

inline std::vector<GridLevel> grid_levels(const HashGridConfig& config) {
  std::vector<GridLevel> levels(static_cast<std::size_t>(config.levels));
  for (int l = 0; l < config.levels; ++l) {
    levels[l] = {config.level_resolution(l), config.level_is_dense(l), static_cast<std::uint32_t>(l) * config.table_size};
  }
  return levels;
}

namespace detail {

inline constexpr std::uint32_t kHashPrimes[3] = {1u, 2654435761u, 805459861u};

inline std::uint32_t grid_vertex_index(const HashGridConfig& config, const GridLevel& level,
                                       const std::array<std::uint32_t, 3>& vertex) {
  std::uint32_t local;
  if (level.dense) {
    const std::uint32_t stride = static_cast<std::uint32_t>(level.resolution) + 1u;
    local = vertex[0] + vertex[1] * stride + vertex[2] * stride * stride;
  } else {
    local = (vertex[0] * kHashPrimes[0]) ^ (vertex[1] * kHashPrimes[1]) ^ (vertex[2] * kHashPrimes[2]);
    local &= config.table_size - 1u;
  }
  return level.offset + local;
}

}  // namespace detail

/// Corner table entries and trilinear weights touched by one point at one level.
template <typename Scalar>
struct GridCorners {
  std::array<std::uint32_t, 8> entry{};
  std::array<Scalar, 8> weight{};
};

/// Normalizes `p` into the unit cube of the grid box. Returns true when `p`
/// had to be clamped.
template <typename Scalar>
bool normalize_to_grid(const HashGridConfig& config, const Vector3<Scalar>& p, Vector3<Scalar>& unit) {
  bool clamped = false;
  for (int axis = 0; axis < 3; ++axis) {
    const Scalar lo = static_cast<Scalar>(config.bbox.min[axis]);
    const Scalar hi = static_cast<Scalar>(config.bbox.max[axis]);
    Scalar u = (p[axis] - lo) / (hi - lo);
    if (!(u >= Scalar(0))) {
      u = Scalar(0);
      clamped = true;
    } else if (u > Scalar(1)) {
      u = Scalar(1);
      clamped = true;
    }
    unit[axis] = u;
  }
  return clamped;
}

template <typename Scalar>
GridCorners<Scalar> grid_corners(const HashGridConfig& config, const GridLevel& level, const Vector3<Scalar>& unit) {
  const int resolution = level.resolution;
  std::array<std::uint32_t, 3> cell{};
  std::array<Scalar, 3> frac{};
  for (int axis = 0; axis < 3; ++axis) {
    const Scalar scaled = unit[axis] * static_cast<Scalar>(resolution);
    int c = static_cast<int>(std::floor(scaled));
    if (c > resolution - 1) c = resolution - 1;
    if (c < 0) c = 0;
    cell[axis] = static_cast<std::uint32_t>(c);
    frac[axis] = scaled - static_cast<Scalar>(c);
  }
  GridCorners<Scalar> corners;
  for (int corner = 0; corner < 8; ++corner) {
    std::array<std::uint32_t, 3> vertex{};
    Scalar w(1);
    for (int axis = 0; axis < 3; ++axis) {
      const bool upper = (corner >> axis) & 1;
      vertex[axis] = cell[axis] + (upper ? 1u : 0u);
      w *= upper ? frac[axis] : Scalar(1) - frac[axis];
    }
    corners.entry[corner] = detail::grid_vertex_index(config, level, vertex);
    corners.weight[corner] = w;
  }
  return corners;
}

/// Interpolated multiresolution features of one point. `embeddings` is
/// features_per_entry x (levels * table_size).
template <typename Scalar>
VectorX<Scalar> encode_position(const Vector3<Scalar>& p, const MatrixX<Scalar>& embeddings,
                                const HashGridConfig& config, bool* clamped = nullptr) {
  Vector3<Scalar> unit;
  const bool was_clamped = normalize_to_grid(config, p, unit);
  if (clamped) *clamped = was_clamped;
  const int F = config.features_per_entry;
  const auto levels = grid_levels(config);
  VectorX<Scalar> features = VectorX<Scalar>::Zero(config.output_dim());
  for (int level = 0; level < config.levels; ++level) {
    const auto corners = grid_corners(config, levels[level], unit);
    for (int c = 0; c < 8; ++c) {
      features.segment(level * F, F) += corners.weight[c] * embeddings.col(corners.entry[c]);
    }
  }
  return features;
}

/// Batched encoding: column i of `features` receives the encoding of column i
/// of `positions`.
template <typename Scalar>
void encode_positions(const Matrix3X<Scalar>& positions, const MatrixX<Scalar>& embeddings,
                      const HashGridConfig& config, MatrixX<Scalar>& features) {
  const int F = config.features_per_entry;
  const Eigen::Index n = positions.cols();
  const auto levels = grid_levels(config);
  features.setZero(config.output_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector3<Scalar> unit;
    normalize_to_grid<Scalar>(config, positions.col(i), unit);
    for (int level = 0; level < config.levels; ++level) {
      const auto corners = grid_corners(config, levels[level], unit);
      for (int c = 0; c < 8; ++c) {
        const Scalar* entry = embeddings.data() + static_cast<Eigen::Index>(corners.entry[c]) * F;
        Scalar* out = features.data() + i * features.rows() + level * F;
        for (int f = 0; f < F; ++f) out[f] += corners.weight[c] * entry[f];
      }
    }
  }
}

/// Scatters d(loss)/d(features) back onto the embedding tables. Accumulation
/// runs in sample order, so the result is deterministic.
template <typename Scalar>
void encode_positions_backward(const Matrix3X<Scalar>& positions, const MatrixX<Scalar>& feature_grads,
                               const HashGridConfig& config, MatrixX<Scalar>& embedding_grads) {
  const int F = config.features_per_entry;
  const auto levels = grid_levels(config);
  for (Eigen::Index i = 0; i < positions.cols(); ++i) {
    Vector3<Scalar> unit;
    normalize_to_grid<Scalar>(config, positions.col(i), unit);
    const Scalar* upstream = feature_grads.data() + i * feature_grads.rows();
    for (int level = 0; level < config.levels; ++level) {
      const auto corners = grid_corners(config, levels[level], unit);
      for (int c = 0; c < 8; ++c) {
        Scalar* g = embedding_grads.data() + static_cast<Eigen::Index>(corners.entry[c]) * F;
        for (int f = 0; f < F; ++f) g[f] += corners.weight[c] * upstream[level * F + f];
      }
    }
  }
}

}  // namespace nerfedit
