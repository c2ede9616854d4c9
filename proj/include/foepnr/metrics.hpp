#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/image.hpp"

namespace foepnr {

// 10 log10(range^2 / MSE). Identical images give +infinity.
inline double psnr(const Image& x_hat, const Image& g, double data_range) {
  require_same_shape(x_hat, g, "psnr");
  require(data_range > 0.0, "psnr: data range must be positive");
  require(!g.empty(), "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = x_hat[i] - g[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(g.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const int r = size / 2;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable weighted sums over every fully contained window position.
inline Image filter_valid(const Image& a, const std::vector<double>& w) {
  const int m = static_cast<int>(w.size());
  const int ow = a.width() - m + 1;
  const int oh = a.height() - m + 1;
  Image tmp(ow, a.height());
  for (int y = 0; y < a.height(); ++y) {
    auto src = a.row(y);
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < m; ++t) s += w[t] * src[x + t];
      tmp.at(y, x) = s;
    }
  }
  Image out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < m; ++t) s += w[t] * tmp.at(y + t, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

}  // namespace detail

// Mean SSIM over all window positions lying entirely inside the image
// (Gaussian window, population statistics).
inline double mssim(const Image& x_hat, const Image& g, double data_range, const SsimParams& p = {}) {
  require_same_shape(x_hat, g, "mssim");
  require(data_range > 0.0, "mssim: data range must be positive");
  require(g.width() >= p.window && g.height() >= p.window, "mssim: image smaller than the SSIM window");
  const auto w = detail::gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * data_range) * (p.k1 * data_range);
  const double c2 = (p.k2 * data_range) * (p.k2 * data_range);

  Image xx(g.width(), g.height()), yy(g.width(), g.height()), xy(g.width(), g.height());
  for (std::size_t i = 0; i < g.size(); ++i) {
    xx[i] = x_hat[i] * x_hat[i];
    yy[i] = g[i] * g[i];
    xy[i] = x_hat[i] * g[i];
  }
  const Image mx = detail::filter_valid(x_hat, w);
  const Image my = detail::filter_valid(g, w);
  const Image exx = detail::filter_valid(xx, w);
  const Image eyy = detail::filter_valid(yy, w);
  const Image exy = detail::filter_valid(xy, w);

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

struct ScoreReport {
  std::string image_id;
  std::string method_id;
  double peak = 0.0;
  double psnr_db = 0.0;
  double mssim = 0.0;

  bool identical() const { return std::isinf(psnr_db); }
};

// Scores a peak-scaled estimate against the peak-scaled clean image after
// mapping both to [0, 255].
inline ScoreReport score_peak_scaled(const Image& x_hat, const Image& clean, double peak, std::string image_id = {},
                                     std::string method_id = {}) {
  require(peak > 0.0, "score: peak must be positive");
  const double s = 255.0 / peak;
  const Image a = s * x_hat;
  const Image b = s * clean;
  ScoreReport r;
  r.image_id = std::move(image_id);
  r.method_id = std::move(method_id);
  r.peak = peak;
  r.psnr_db = psnr(a, b, 255.0);
  r.mssim = mssim(a, b, 255.0);
  return r;
}

}  // namespace foepnr
