// SPDX-License-Identifier: Apache-2.0
//
// Dense raster and channel-plane containers shared by every module.
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace icefm {

/// Label value that marks pixels excluded from losses and metrics.
inline constexpr std::uint8_t kIgnoreLabel = 255;

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Row-major H×W grid.
template <typename T>
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw std::invalid_argument("Raster: negative dimension");
  }

  [[nodiscard]] std::size_t size() const { return data.size(); }
  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using LabelRaster = Raster<std::uint8_t>;
using FloatRaster = Raster<float>;

/// C×H×W feature planes; one channel per matrix row, pixels row-major along columns.
template <typename S>
struct Planes {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix<S> data;

  Planes() = default;
  Planes(int c, int h, int w) : channels(c), height(h), width(w), data(RowMatrix<S>::Zero(c, static_cast<Eigen::Index>(h) * w)) {}

  [[nodiscard]] Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
  S& at(int c, int r, int col) { return data(c, static_cast<Eigen::Index>(r) * width + col); }
  const S& at(int c, int r, int col) const { return data(c, static_cast<Eigen::Index>(r) * width + col); }

  template <typename T>
  [[nodiscard]] Planes<T> cast() const {
    Planes<T> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data = data.template cast<T>();
    return out;
  }

  friend bool operator==(const Planes& a, const Planes& b) {
    return a.channels == b.channels && a.height == b.height && a.width == b.width && a.data == b.data;
  }
};

}  // namespace icefm
