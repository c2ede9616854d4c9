#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foepnr/errors.hpp"

namespace foepnr {

// Grayscale image, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    require(width >= 0 && height >= 0, "image dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Image(int width, int height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    require(width >= 0 && height >= 0, "image dimensions must be non-negative");
    require(data_.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
            "image data length must equal width * height");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x) { return data_[index(y, x)]; }
  double at(int y, int x) const { return data_[index(y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(int y) {
    return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<const double> row(int y) const {
    return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
                       std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                       std::to_string(b.height()) + ")");
  }
}

inline double dot(const Image& a, const Image& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(const Image& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double norm(const Image& a) { return std::sqrt(squared_norm(a)); }

inline double max_value(const Image& a) {
  require(!a.empty(), "max_value of empty image");
  return *std::max_element(a.begin(), a.end());
}

inline double min_value(const Image& a) {
  require(!a.empty(), "min_value of empty image");
  return *std::min_element(a.begin(), a.end());
}

inline bool all_finite(const Image& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// y += alpha * x
inline void axpy(double alpha, const Image& x, Image& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Image operator+(Image a, const Image& b) {
  axpy(1.0, b, a);
  return a;
}

inline Image operator-(Image a, const Image& b) {
  axpy(-1.0, b, a);
  return a;
}

inline Image operator*(double s, Image a) {
  for (double& v : a) v *= s;
  return a;
}

template <typename Fn>
Image map_pixels(const Image& a, Fn&& fn) {
  Image out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

// Square filter with odd side length; taps row-major.
class Kernel {
 public:
  Kernel() = default;
  explicit Kernel(int size) : size_(size) {
    require(size > 0 && size % 2 == 1, "kernel size must be odd and positive");
    taps_.assign(static_cast<std::size_t>(size) * size, 0.0);
  }
  Kernel(int size, std::vector<double> taps) : size_(size), taps_(std::move(taps)) {
    require(size > 0 && size % 2 == 1, "kernel size must be odd and positive");
    require(taps_.size() == static_cast<std::size_t>(size) * size, "kernel needs size^2 taps");
  }

  static Kernel delta(int size) {
    Kernel k(size);
    k.at(size / 2, size / 2) = 1.0;
    return k;
  }

  int size() const { return size_; }
  int radius() const { return size_ / 2; }
  double& at(int a, int b) { return taps_[static_cast<std::size_t>(a) * size_ + b]; }
  double at(int a, int b) const { return taps_[static_cast<std::size_t>(a) * size_ + b]; }
  std::vector<double>& taps() { return taps_; }
  const std::vector<double>& taps() const { return taps_; }

  double sum() const {
    double s = 0.0;
    for (double t : taps_) s += t;
    return s;
  }
  double frobenius_norm() const {
    double s = 0.0;
    for (double t : taps_) s += t * t;
    return std::sqrt(s);
  }

  // 180 degree rotation.
  Kernel rotated() const {
    Kernel r(size_);
    for (int a = 0; a < size_; ++a)
      for (int b = 0; b < size_; ++b) r.at(a, b) = at(size_ - 1 - a, size_ - 1 - b);
    return r;
  }

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  int size_ = 0;
  std::vector<double> taps_;
};

enum class BoundaryRule { symmetric, periodic };

inline std::string_view to_string(BoundaryRule rule) {
  return rule == BoundaryRule::symmetric ? "symmetric" : "periodic";
}

inline BoundaryRule boundary_from_string(std::string_view s) {
  if (s == "symmetric") return BoundaryRule::symmetric;
  if (s == "periodic") return BoundaryRule::periodic;
  throw InvalidInput("unknown boundary rule '" + std::string(s) + "'");
}

namespace detail {

// Maps an out-of-range coordinate back into [0, n). Symmetric is the
// half-sample mirror (edge pixel repeated), valid for |overhang| <= n.
inline int boundary_index(int i, int n, BoundaryRule rule) {
  if (i >= 0 && i < n) return i;
  if (rule == BoundaryRule::periodic) {
    int r = i % n;
    return r < 0 ? r + n : r;
  }
  if (i < 0) return -i - 1;
  return 2 * n - i - 1;
}

}  // namespace detail

// Image extended by `radius` pixels on every side according to a boundary
// rule. Reused across a filter bank so each image is padded once.
class PaddedImage {
 public:
  PaddedImage(const Image& img, int radius, BoundaryRule rule)
      : radius_(radius), inner_w_(img.width()), inner_h_(img.height()) {
    require(radius >= 0, "padding radius must be non-negative");
    require(img.width() >= radius && img.height() >= radius && !img.empty(),
            "image must be at least as large as the kernel radius");
    width_ = inner_w_ + 2 * radius;
    height_ = inner_h_ + 2 * radius;
    data_.resize(static_cast<std::size_t>(width_) * height_);
    std::vector<int> cols(width_);
    for (int X = 0; X < width_; ++X) cols[X] = detail::boundary_index(X - radius, inner_w_, rule);
    for (int Y = 0; Y < height_; ++Y) {
      const int y = detail::boundary_index(Y - radius, inner_h_, rule);
      auto src = img.row(y);
      double* dst = data_.data() + static_cast<std::size_t>(Y) * width_;
      for (int X = 0; X < width_; ++X) dst[X] = src[cols[X]];
    }
  }

  int radius() const { return radius_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int inner_width() const { return inner_w_; }
  int inner_height() const { return inner_h_; }
  const double* row(int Y) const { return data_.data() + static_cast<std::size_t>(Y) * width_; }

 private:
  int radius_;
  int inner_w_;
  int inner_h_;
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// out(y,x) = sum_{a,b} k(a,b) * in(y + r - a, x + r - b), the extension of
// `in` outside its support given by the padding rule. Accumulates into out.
inline void convolve_padded_accumulate(const PaddedImage& padded, const Kernel& k, Image& out) {
  const int r = k.radius();
  require(r <= padded.radius(), "kernel larger than padding");
  require(out.width() == padded.inner_width() && out.height() == padded.inner_height(),
          "convolve: output dimension mismatch");
  const int off = padded.radius() - r;  // extra padding beyond what k needs
  const int m = k.size();
  const int w = out.width();
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      const double c = k.at(a, b);
      if (c == 0.0) continue;
      for (int y = 0; y < out.height(); ++y) {
        const double* src = padded.row(y + 2 * r - a + off) + (2 * r - b + off);
        double* dst = out.row(y).data();
        for (int x = 0; x < w; ++x) dst[x] += c * src[x];
      }
    }
  }
}

inline Image convolve_same(const Image& img, const Kernel& k, BoundaryRule boundary = BoundaryRule::symmetric) {
  require(img.width() >= k.size() && img.height() >= k.size(),
          "convolve_same: image must be at least as large as the kernel");
  PaddedImage padded(img, k.radius(), boundary);
  Image out(img.width(), img.height());
  convolve_padded_accumulate(padded, k, out);
  return out;
}

// Adjoint of convolve_same under the same boundary rule: scatter through the
// valid convolution, then fold the padding ring back onto the pixels it
// was copied from.
inline void convolve_adjoint_accumulate(const Image& img, const Kernel& k, BoundaryRule boundary, Image& out) {
  require(img.width() >= k.size() && img.height() >= k.size(),
          "convolve_adjoint: image must be at least as large as the kernel");
  require_same_shape(img, out, "convolve_adjoint");
  const int r = k.radius();
  const int m = k.size();
  const int w = img.width();
  const int h = img.height();
  const int pw = w + 2 * r;
  const int ph = h + 2 * r;
  std::vector<double> q(static_cast<std::size_t>(pw) * ph, 0.0);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      const double c = k.at(a, b);
      if (c == 0.0) continue;
      for (int y = 0; y < h; ++y) {
        double* dst = q.data() + static_cast<std::size_t>(y + 2 * r - a) * pw + (2 * r - b);
        const double* src = img.row(y).data();
        for (int x = 0; x < w; ++x) dst[x] += c * src[x];
      }
    }
  }
  // interior block maps to itself
  for (int y = 0; y < h; ++y) {
    const double* src = q.data() + static_cast<std::size_t>(y + r) * pw + r;
    double* dst = out.row(y).data();
    for (int x = 0; x < w; ++x) dst[x] += src[x];
  }
  if (r == 0) return;
  for (int Y = 0; Y < ph; ++Y) {
    const bool row_inside = Y >= r && Y < h + r;
    const int y = detail::boundary_index(Y - r, h, boundary);
    for (int X = 0; X < pw; ++X) {
      if (row_inside && X >= r && X < w + r) {
        X = w + r - 1;
        continue;
      }
      const int x = detail::boundary_index(X - r, w, boundary);
      out.at(y, x) += q[static_cast<std::size_t>(Y) * pw + X];
    }
  }
}

inline Image convolve_adjoint(const Image& img, const Kernel& k, BoundaryRule boundary = BoundaryRule::symmetric) {
  Image out(img.width(), img.height());
  convolve_adjoint_accumulate(img, k, boundary, out);
  return out;
}

// Gradient of <g, convolve_same(x, k)> with respect to the taps of k:
// G(a,b) = sum_{y,x} g(y,x) * xpad(y + r - a, x + r - b).
inline Kernel kernel_gradient(const Image& g, const PaddedImage& x_padded, int size) {
  Kernel out(size);
  const int r = out.radius();
  require(r <= x_padded.radius(), "kernel_gradient: padding too small");
  require(g.width() == x_padded.inner_width() && g.height() == x_padded.inner_height(),
          "kernel_gradient: dimension mismatch");
  const int off = x_padded.radius() - r;
  for (int a = 0; a < size; ++a) {
    for (int b = 0; b < size; ++b) {
      double s = 0.0;
      for (int y = 0; y < g.height(); ++y) {
        const double* src = x_padded.row(y + 2 * r - a + off) + (2 * r - b + off);
        const double* gr = g.row(y).data();
        for (int x = 0; x < g.width(); ++x) s += gr[x] * src[x];
      }
      out.at(a, b) = s;
    }
  }
  return out;
}

struct FilterBasis {
  int atom_size = 0;
  std::vector<Kernel> atoms;

  std::size_t size() const { return atoms.size(); }
};

// Separable orthonormal 2-D DCT-II atoms on an m x m grid, constant atom
// dropped, ordered by (vertical frequency, horizontal frequency).
inline FilterBasis dct_basis_zero_mean(int m) {
  require(m >= 3, "dct basis needs m >= 3");
  require(m % 2 == 1, "dct basis size must be odd");
  std::vector<std::vector<double>> c(m, std::vector<double>(m));
  for (int k = 0; k < m; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
    for (int n = 0; n < m; ++n) c[k][n] = s * std::cos(std::numbers::pi * (2 * n + 1) * k / (2.0 * m));
  }
  FilterBasis basis;
  basis.atom_size = m;
  for (int k = 0; k < m; ++k) {
    for (int l = 0; l < m; ++l) {
      if (k == 0 && l == 0) continue;
      Kernel atom(m);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) atom.at(a, b) = c[k][a] * c[l][b];
      basis.atoms.push_back(std::move(atom));
    }
  }
  return basis;
}

inline Kernel compose_filter(const FilterBasis& basis, std::span<const double> beta) {
  require(beta.size() == basis.atoms.size(), "compose_filter: coefficient count must match basis size");
  Kernel k(basis.atom_size);
  for (std::size_t j = 0; j < beta.size(); ++j) {
    const auto& taps = basis.atoms[j].taps();
    for (std::size_t t = 0; t < taps.size(); ++t) k.taps()[t] += beta[j] * taps[t];
  }
  return k;
}

// Coefficients of `k` in the basis (orthonormal projection).
inline std::vector<double> project_onto_basis(const FilterBasis& basis, const Kernel& k) {
  require(k.size() == basis.atom_size, "project_onto_basis: size mismatch");
  std::vector<double> beta(basis.size());
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const auto& taps = basis.atoms[j].taps();
    double s = 0.0;
    for (std::size_t t = 0; t < taps.size(); ++t) s += taps[t] * k.taps()[t];
    beta[j] = s;
  }
  return beta;
}

}  // namespace foepnr
