#pragma once

// Dense numerics for the topic model. Every primitive comes as a forward
// function plus a backward function implementing its exact derivative; the
// rest of the library composes these by hand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::diffnet {

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for a " +
                       shape_string(rows_, cols_) + " matrix");
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Flattened gradient of one loss with respect to a declared parameter layout.
struct GradientVector {
  std::vector<double> values;
  std::string layout_id;

  std::size_t size() const { return values.size(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape() + " times " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// y = x·W + b, with b broadcast over rows.
inline Matrix affine(const Matrix& x, const Matrix& W, const Matrix& b) {
  if (x.cols() != W.rows() || b.rows() != 1 || b.cols() != W.cols()) {
    throw ShapeError("affine: x " + x.shape() + ", W " + W.shape() + ", b " + b.shape());
  }
  Matrix y = matmul(x, W);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) r[j] += b(0, j);
  }
  return y;
}

struct AffineGrads {
  Matrix dx, dW, db;
};

// dx = dy·Wᵀ, dW = xᵀ·dy, db = column sums of dy.
inline AffineGrads affine_backward(const Matrix& x, const Matrix& W, const Matrix& dy) {
  if (x.cols() != W.rows() || dy.rows() != x.rows() || dy.cols() != W.cols()) {
    throw ShapeError("affine_backward: x " + x.shape() + ", W " + W.shape() + ", dy " +
                     dy.shape());
  }
  AffineGrads g{Matrix(x.rows(), x.cols()), Matrix(W.rows(), W.cols()), Matrix(1, W.cols())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dyr = dy.row(i);
    auto xr = x.row(i);
    auto dxr = g.dx.row(i);
    for (std::size_t k = 0; k < W.rows(); ++k) {
      auto wr = W.row(k);
      auto dwr = g.dW.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < W.cols(); ++j) {
        acc += dyr[j] * wr[j];
        dwr[j] += xr[k] * dyr[j];
      }
      dxr[k] = acc;
    }
    for (std::size_t j = 0; j < W.cols(); ++j) g.db(0, j) += dyr[j];
  }
  return g;
}

// Accumulating form used inside the model: adds to dW and db, and writes dx
// when requested.
inline void affine_backward_into(const Matrix& x, const Matrix& W, const Matrix& dy, Matrix* dx,
                                 Matrix& dW, Matrix& db) {
  if (x.cols() != W.rows() || dy.rows() != x.rows() || dy.cols() != W.cols() ||
      dW.rows() != W.rows() || dW.cols() != W.cols() || db.cols() != W.cols()) {
    throw ShapeError("affine_backward_into: x " + x.shape() + ", W " + W.shape() + ", dy " +
                     dy.shape());
  }
  if (dx) *dx = Matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dyr = dy.row(i);
    auto xr = x.row(i);
    for (std::size_t k = 0; k < W.rows(); ++k) {
      auto dwr = dW.row(k);
      const double xik = xr[k];
      for (std::size_t j = 0; j < W.cols(); ++j) dwr[j] += xik * dyr[j];
      if (dx) {
        auto wr = W.row(k);
        double acc = 0.0;
        for (std::size_t j = 0; j < W.cols(); ++j) acc += dyr[j] * wr[j];
        (*dx)(i, k) = acc;
      }
    }
    for (std::size_t j = 0; j < W.cols(); ++j) db(0, j) += dyr[j];
  }
}

// Batch of sparse input rows; entries sorted by column.
struct SparseBatch {
  std::size_t cols = 0;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;

  std::size_t size() const { return rows.size(); }
};

inline Matrix affine_sparse(const SparseBatch& x, const Matrix& W, const Matrix& b) {
  if (x.cols != W.rows() || b.rows() != 1 || b.cols() != W.cols()) {
    throw ShapeError("affine_sparse: x " + Matrix::shape_string(x.size(), x.cols) + ", W " +
                     W.shape() + ", b " + b.shape());
  }
  Matrix y(x.size(), W.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto yr = y.row(i);
    for (std::size_t j = 0; j < W.cols(); ++j) yr[j] = b(0, j);
    for (const auto& [k, v] : x.rows[i]) {
      auto wr = W.row(k);
      for (std::size_t j = 0; j < W.cols(); ++j) yr[j] += v * wr[j];
    }
  }
  return y;
}

inline void affine_sparse_backward_into(const SparseBatch& x, const Matrix& dy, Matrix& dW,
                                        Matrix& db) {
  if (dy.rows() != x.size() || dW.rows() != x.cols || dW.cols() != dy.cols()) {
    throw ShapeError("affine_sparse_backward: dy " + dy.shape() + ", dW " + dW.shape());
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto dyr = dy.row(i);
    for (const auto& [k, v] : x.rows[i]) {
      auto dwr = dW.row(k);
      for (std::size_t j = 0; j < dy.cols(); ++j) dwr[j] += v * dyr[j];
    }
    for (std::size_t j = 0; j < dy.cols(); ++j) db(0, j) += dyr[j];
  }
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Matrix softplus(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = softplus(x.data()[i]);
  return y;
}

// d softplus(x) / dx = sigmoid(x).
inline Matrix softplus_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx.data()[i] = dy.data()[i] * sigmoid(x.data()[i]);
  return dx;
}

inline void softmax_row(std::span<const double> in, std::span<double> out) {
  const double m = *std::max_element(in.begin(), in.end());
  double s = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - m);
    s += out[j];
  }
  for (auto& v : out) v /= s;
}

inline void log_softmax_row(std::span<const double> in, std::span<double> out) {
  const double m = *std::max_element(in.begin(), in.end());
  double s = 0.0;
  for (const double v : in) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - lse;
}

inline Matrix softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) softmax_row(x.row(i), y.row(i));
  return y;
}

inline Matrix log_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) log_softmax_row(x.row(i), y.row(i));
  return y;
}

// Given y = softmax(x): dx = y ⊙ (dy − ⟨dy, y⟩) per row.
inline Matrix softmax_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double inner = dot(dy.row(i), y.row(i));
    for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (dy(i, j) - inner);
  }
  return dx;
}

// Given l = log_softmax(x): dx = dy − softmax(x)·Σdy per row.
inline Matrix log_softmax_backward(const Matrix& l, const Matrix& dy) {
  Matrix dx(l.rows(), l.cols());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < l.cols(); ++j) s += dy(i, j);
    for (std::size_t j = 0; j < l.cols(); ++j) dx(i, j) = dy(i, j) - std::exp(l(i, j)) * s;
  }
  return dx;
}

enum class PoolMode { min, max, mean, sum };

inline std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::min: return "min";
    case PoolMode::max: return "max";
    case PoolMode::mean: return "mean";
    case PoolMode::sum: return "sum";
  }
  return "?";
}

inline PoolMode parse_pool_mode(const std::string& s) {
  if (s == "min") return PoolMode::min;
  if (s == "max") return PoolMode::max;
  if (s == "mean") return PoolMode::mean;
  if (s == "sum") return PoolMode::sum;
  throw ConfigError("unknown pooling mode '" + s + "' (expected min|max|mean|sum)");
}

struct Pooled {
  std::vector<double> value;
  // For min/max: position within the member list of the row that attains the
  // extremum in each column (first one on ties).
  std::vector<std::size_t> source;
};

// Elementwise reduction over the rows of `rows` listed in `members`.
inline Pooled pool(const Matrix& rows, std::span<const std::size_t> members, PoolMode mode) {
  if (members.empty()) throw ShapeError("pool: empty set");
  for (const auto m : members)
    if (m >= rows.rows()) throw ShapeError("pool: member index out of range");
  const std::size_t dim = rows.cols();
  Pooled p;
  p.value.assign(rows.row(members[0]).begin(), rows.row(members[0]).end());
  if (mode == PoolMode::min || mode == PoolMode::max) p.source.assign(dim, 0);
  for (std::size_t k = 1; k < members.size(); ++k) {
    auto r = rows.row(members[k]);
    for (std::size_t t = 0; t < dim; ++t) {
      switch (mode) {
        case PoolMode::max:
          if (r[t] > p.value[t]) {
            p.value[t] = r[t];
            p.source[t] = k;
          }
          break;
        case PoolMode::min:
          if (r[t] < p.value[t]) {
            p.value[t] = r[t];
            p.source[t] = k;
          }
          break;
        case PoolMode::mean:
        case PoolMode::sum:
          p.value[t] += r[t];
          break;
      }
    }
  }
  if (mode == PoolMode::mean) {
    for (auto& v : p.value) v /= static_cast<double>(members.size());
  }
  return p;
}

inline Pooled pool(const Matrix& set, PoolMode mode) {
  std::vector<std::size_t> all(set.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return pool(set, all, mode);
}

// Adds the (sub)gradient of the pooled vector into the member rows of
// grad_rows. Min/max route each column to the attaining row only.
inline void pool_backward(const Pooled& p, std::span<const std::size_t> members, PoolMode mode,
                          std::span<const double> upstream, Matrix& grad_rows) {
  const std::size_t dim = upstream.size();
  switch (mode) {
    case PoolMode::min:
    case PoolMode::max:
      for (std::size_t t = 0; t < dim; ++t) grad_rows(members[p.source[t]], t) += upstream[t];
      break;
    case PoolMode::mean: {
      const double scale = 1.0 / static_cast<double>(members.size());
      for (const auto m : members)
        for (std::size_t t = 0; t < dim; ++t) grad_rows(m, t) += scale * upstream[t];
      break;
    }
    case PoolMode::sum:
      for (const auto m : members)
        for (std::size_t t = 0; t < dim; ++t) grad_rows(m, t) += upstream[t];
      break;
  }
}

inline double cosine_sim_tau(std::span<const double> u, std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw NumericError("cosine_sim_tau: temperature must be positive");
  const double nu = norm(u);
  const double nv = norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) throw NumericError("cosine_sim_tau: zero-norm vector");
  return dot(u, v) / (nu * nv * tau);
}

struct CosineGrad {
  double value = 0.0;
  std::vector<double> du, dv;
};

// f = uᵀv / (‖u‖‖v‖τ);  ∂f/∂u = (v/(‖u‖‖v‖) − (uᵀv)·u/(‖u‖³‖v‖)) / τ.
inline CosineGrad cosine_sim_tau_grad(std::span<const double> u, std::span<const double> v,
                                      double tau) {
  CosineGrad g;
  g.value = cosine_sim_tau(u, v, tau);
  const double nu = norm(u);
  const double nv = norm(v);
  const double uv = dot(u, v);
  g.du.resize(u.size());
  g.dv.resize(v.size());
  const double inv = 1.0 / (nu * nv * tau);
  for (std::size_t i = 0; i < u.size(); ++i) {
    g.du[i] = inv * (v[i] - uv * u[i] / (nu * nu));
    g.dv[i] = inv * (u[i] - uv * v[i] / (nv * nv));
  }
  return g;
}

// û = u/‖u‖, the building block of cosine similarity.
struct Normalized {
  std::vector<double> unit;
  double norm = 0.0;
};

inline Normalized normalize(std::span<const double> u) {
  Normalized n;
  n.norm = norm(u);
  if (!(n.norm > 0.0)) throw NumericError("normalize: zero-norm vector");
  n.unit.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) n.unit[i] = u[i] / n.norm;
  return n;
}

// ∂L/∂u = (g − (gᵀû)û)/‖u‖ for upstream g = ∂L/∂û; added into du.
inline void normalize_backward(const Normalized& n, std::span<const double> upstream,
                               std::span<double> du) {
  const double proj = dot(upstream, n.unit);
  for (std::size_t i = 0; i < du.size(); ++i) {
    du[i] += (upstream[i] - proj * n.unit[i]) / n.norm;
  }
}

// Scalar loss of a flat parameter vector. When `grad` is non-null the callee
// also writes the analytic gradient there.
using LossWithGrad =
    std::function<double(std::span<const double> params, std::vector<double>* grad)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Compares the analytic gradient with central differences on n_probes
// distinct random coordinates and returns the largest relative error.
inline double grad_check(const LossWithGrad& loss, std::vector<double> params, double h,
                         std::size_t n_probes, std::uint64_t seed) {
  std::vector<double> analytic;
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss at base point");
  if (analytic.size() != params.size()) {
    throw ShapeError("grad_check: gradient has " + std::to_string(analytic.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  }
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(coords.begin(), coords.end());
  coords.resize(std::min(n_probes, coords.size()));

  double worst = 0.0;
  for (const auto c : coords) {
    const double saved = params[c];
    params[c] = saved + h;
    const double up = loss(params, nullptr);
    params[c] = saved - h;
    const double down = loss(params, nullptr);
    params[c] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite loss while probing coordinate " +
                         std::to_string(c));
    }
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[c], numeric));
  }
  return worst;
}

}  // namespace paretopic::diffnet
