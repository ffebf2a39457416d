// SPDX-License-Identifier: Apache-2.0
//
// Forward/backward kernels for the toy encoders. Token activations are N×d
// row-major matrices; image activations are C×(H·W) planes. Backward kernels
// accumulate into gradient slots only when the slot is allocated.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "icefm/nn/params.hpp"
#include "icefm/tensor.hpp"

namespace icefm::nn {

// ---------------------------------------------------------------- linear

/// Y = X·Wᵀ + b, with W stored out×in and b as a 1×out row.
template <typename S>
RowMatrix<S> linear(const RowMatrix<S>& x, const RowMatrix<S>& w, const RowMatrix<S>* b) {
  RowMatrix<S> y = x * w.transpose();
  if (b) y.rowwise() += b->row(0);
  return y;
}

/// Returns dX when need_dx; accumulates dW/db into their slots if allocated.
template <typename S>
RowMatrix<S> linear_backward(const RowMatrix<S>& x, const RowMatrix<S>& w, const RowMatrix<S>& dy, RowMatrix<S>* dw, RowMatrix<S>* db,
                             bool need_dx) {
  if (dw && dw->size()) dw->noalias() += dy.transpose() * x;
  if (db && db->size()) *db += dy.colwise().sum();
  if (!need_dx) return {};
  return dy * w;
}

// ------------------------------------------------------------- layernorm

template <typename S>
struct NormCache {
  RowMatrix<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
RowMatrix<S> layer_norm(const RowMatrix<S>& x, const RowMatrix<S>& gamma, const RowMatrix<S>& beta, NormCache<S>* cache) {
  constexpr S eps = S(1e-5);
  const auto d = x.cols();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  RowMatrix<S> centered = x.colwise() - mean;
  Eigen::Matrix<S, Eigen::Dynamic, 1> var = centered.array().square().rowwise().sum() / S(d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd = (var.array() + eps).rsqrt();
  RowMatrix<S> xhat = centered.array().colwise() * rstd.array();
  RowMatrix<S> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
RowMatrix<S> layer_norm_backward(const NormCache<S>& cache, const RowMatrix<S>& gamma, const RowMatrix<S>& dy, RowMatrix<S>* dgamma,
                                 RowMatrix<S>* dbeta) {
  const auto d = static_cast<S>(dy.cols());
  if (dgamma && dgamma->size()) *dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbeta && dbeta->size()) *dbeta += dy.colwise().sum();
  RowMatrix<S> dxhat = dy.array().rowwise() * gamma.row(0).array();
  Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / d;
  Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = (dxhat.array() * cache.xhat.array()).rowwise().sum() / d;
  RowMatrix<S> dx = (dxhat.array().colwise() - m1.array()) - cache.xhat.array().colwise() * m2.array();
  return dx.array().colwise() * cache.rstd.array();
}

// ------------------------------------------------------------ activations

template <typename S>
RowMatrix<S> gelu(const RowMatrix<S>& x) {
  const S inv_sqrt2 = S(0.70710678118654752440);
  return x.unaryExpr([inv_sqrt2](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); });
}

template <typename S>
RowMatrix<S> gelu_backward(const RowMatrix<S>& x, const RowMatrix<S>& dy) {
  const S inv_sqrt2 = S(0.70710678118654752440);
  const S inv_sqrt2pi = S(0.39894228040143267794);
  RowMatrix<S> d = x.unaryExpr([=](S v) { return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(S(-0.5) * v * v); });
  return d.cwiseProduct(dy);
}

template <typename S>
RowMatrix<S> relu(const RowMatrix<S>& x) {
  return x.cwiseMax(S(0));
}

template <typename S>
RowMatrix<S> relu_backward(const RowMatrix<S>& y, const RowMatrix<S>& dy) {
  return (y.array() > S(0)).select(dy, S(0));
}

/// Row-wise softmax, stabilized by the row max.
template <typename S>
RowMatrix<S> softmax_rows(const RowMatrix<S>& z) {
  RowMatrix<S> e = (z.colwise() - z.rowwise().maxCoeff()).array().exp();
  return e.array().colwise() / e.rowwise().sum().array();
}

// -------------------------------------------------------------- attention

template <typename S>
struct AttentionCache {
  std::vector<RowMatrix<S>> probs;  // one N×N matrix per head
};

/// Multi-head scaled dot-product attention over the columns of q/k/v split
/// into `heads` contiguous groups.
template <typename S>
RowMatrix<S> attention(const RowMatrix<S>& q, const RowMatrix<S>& k, const RowMatrix<S>& v, int heads, AttentionCache<S>* cache) {
  const auto n = q.rows();
  const auto dh = q.cols() / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  RowMatrix<S> out(n, q.cols());
  if (cache) cache->probs.resize(heads);
  for (int h = 0; h < heads; ++h) {
    const auto c0 = h * dh;
    RowMatrix<S> scores = (q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose()) * scale;
    RowMatrix<S> p = softmax_rows(scores);
    out.middleCols(c0, dh).noalias() = p * v.middleCols(c0, dh);
    if (cache) cache->probs[h] = std::move(p);
  }
  return out;
}

template <typename S>
void attention_backward(const AttentionCache<S>& cache, const RowMatrix<S>& q, const RowMatrix<S>& k, const RowMatrix<S>& v,
                        const RowMatrix<S>& dout, int heads, RowMatrix<S>& dq, RowMatrix<S>& dk, RowMatrix<S>& dv) {
  const auto dh = q.cols() / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  dq.setZero(q.rows(), q.cols());
  dk.setZero(k.rows(), k.cols());
  dv.setZero(v.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    const auto c0 = h * dh;
    const RowMatrix<S>& p = cache.probs[h];
    RowMatrix<S> dout_h = dout.middleCols(c0, dh);
    RowMatrix<S> dp = dout_h * v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = p.transpose() * dout_h;
    Eigen::Matrix<S, Eigen::Dynamic, 1> inner = (dp.array() * p.array()).rowwise().sum();
    RowMatrix<S> ds = (p.array() * (dp.array().colwise() - inner.array())) * scale;
    dq.middleCols(c0, dh).noalias() = ds * k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() = ds.transpose() * q.middleCols(c0, dh);
  }
}

// ------------------------------------------------------------ convolution

/// Unfolds a C×(H·W) map into (C·9)×(H·W) columns for a 3×3 same-padded conv.
template <typename S>
RowMatrix<S> im2col3(const RowMatrix<S>& x, int h, int w) {
  const auto c_in = x.rows();
  RowMatrix<S> col = RowMatrix<S>::Zero(c_in * 9, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < c_in; ++c) {
    const S* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = col.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = dx < 0 ? 1 : 0;
          const int x1 = dx > 0 ? w - 1 : w;
          for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[sy * w + xx + dx];
        }
      }
  }
  return col;
}

template <typename S>
RowMatrix<S> col2im3(const RowMatrix<S>& col, Eigen::Index c_in, int h, int w) {
  RowMatrix<S> x = RowMatrix<S>::Zero(c_in, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < c_in; ++c) {
    S* dst = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = col.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = dx < 0 ? 1 : 0;
          const int x1 = dx > 0 ? w - 1 : w;
          for (int xx = x0; xx < x1; ++xx) dst[sy * w + xx + dx] += src[y * w + xx];
        }
      }
  }
  return x;
}

/// 3×3 same-padded convolution; w is C_out×(C_in·9), b is C_out×1.
template <typename S>
RowMatrix<S> conv3(const RowMatrix<S>& x, int h, int w, const RowMatrix<S>& weight, const RowMatrix<S>& bias, RowMatrix<S>* col_cache) {
  RowMatrix<S> col = im2col3(x, h, w);
  RowMatrix<S> y = weight * col;
  y.colwise() += bias.col(0);
  if (col_cache) *col_cache = std::move(col);
  return y;
}

template <typename S>
RowMatrix<S> conv3_backward(const RowMatrix<S>& col, Eigen::Index c_in, int h, int w, const RowMatrix<S>& weight, const RowMatrix<S>& dy,
                            RowMatrix<S>* dweight, RowMatrix<S>* dbias, bool need_dx) {
  if (dweight && dweight->size()) dweight->noalias() += dy * col.transpose();
  if (dbias && dbias->size()) *dbias += dy.rowwise().sum();
  if (!need_dx) return {};
  RowMatrix<S> dcol = weight.transpose() * dy;
  return col2im3(dcol, c_in, h, w);
}

// ------------------------------------------------------- resampling helpers

/// 2×2 max pooling; records the flat argmax index of each output pixel.
template <typename S>
RowMatrix<S> max_pool2(const RowMatrix<S>& x, int h, int w, std::vector<std::int32_t>* argmax) {
  const int oh = h / 2, ow = w / 2;
  RowMatrix<S> y(x.rows(), static_cast<Eigen::Index>(oh) * ow);
  if (argmax) argmax->assign(static_cast<std::size_t>(x.rows()) * oh * ow, 0);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::int32_t best = (2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::int32_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (x(c, idx) > x(c, best)) best = idx;
          }
        y(c, oy * ow + ox) = x(c, best);
        if (argmax) (*argmax)[static_cast<std::size_t>(c) * oh * ow + oy * ow + ox] = best;
      }
  return y;
}

template <typename S>
RowMatrix<S> max_pool2_backward(const RowMatrix<S>& dy, const std::vector<std::int32_t>& argmax, int h, int w) {
  RowMatrix<S> dx = RowMatrix<S>::Zero(dy.rows(), static_cast<Eigen::Index>(h) * w);
  const auto out_px = dy.cols();
  for (Eigen::Index c = 0; c < dy.rows(); ++c)
    for (Eigen::Index i = 0; i < out_px; ++i) dx(c, argmax[static_cast<std::size_t>(c * out_px + i)]) += dy(c, i);
  return dx;
}

/// Nearest-neighbour ×2 upsampling of an h×w map.
template <typename S>
RowMatrix<S> upsample2(const RowMatrix<S>& x, int h, int w) {
  const int oh = 2 * h, ow = 2 * w;
  RowMatrix<S> y(x.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) y(c, oy * ow + ox) = x(c, (oy / 2) * w + ox / 2);
  return y;
}

template <typename S>
RowMatrix<S> upsample2_backward(const RowMatrix<S>& dy, int h, int w) {
  const int ow = 2 * w;
  RowMatrix<S> dx = RowMatrix<S>::Zero(dy.rows(), static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < dy.rows(); ++c)
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < ow; ++ox) dx(c, (oy / 2) * w + ox / 2) += dy(c, oy * ow + ox);
  return dx;
}

// --------------------------------------------------------- initialization

template <typename S, typename Rng>
RowMatrix<S> xavier_uniform(Eigen::Index out, Eigen::Index in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  RowMatrix<S> m(out, in);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <typename S, typename Rng>
RowMatrix<S> normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  RowMatrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <typename S, typename Rng>
RowMatrix<S> uniform_init(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  RowMatrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

}  // namespace icefm::nn
