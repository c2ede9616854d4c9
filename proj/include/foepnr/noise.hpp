#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/image.hpp"

namespace foepnr {

struct NoiseSpec {
  double peak = 40.0;
  std::uint64_t seed = 0;
  double zero_offset_c = 0.0;
  int bin_factor = 1;

  void validate() const {
    require(peak > 0.0 && std::isfinite(peak), "peak must be positive");
    require(zero_offset_c >= 0.0, "zero offset c must be non-negative");
    require(bin_factor == 1 || bin_factor == 3, "bin factor must be 1 or 3");
  }
};

inline Image scale_to_peak(const Image& img, double peak) {
  require(peak > 0.0 && std::isfinite(peak), "scale_to_peak: peak must be positive");
  require(!img.empty(), "scale_to_peak: empty image");
  const double mx = max_value(img);
  require(mx > 0.0, "scale_to_peak: image has no positive pixel");
  const double s = peak / mx;
  Image out = map_pixels(img, [s](double v) { return v * s; });
  // exact peak at the maximum pixel(s)
  for (std::size_t i = 0; i < img.size(); ++i)
    if (img[i] == mx) out[i] = peak;
  return out;
}

// Counter-based random stream: every pixel gets its own generator derived
// from (seed, pixel index), so the noisy image does not depend on the order
// pixels are visited in.
class PixelStream {
 public:
  PixelStream(std::uint64_t seed, std::uint64_t index)
      : state_(mix(seed ^ mix(index + 0x632BE59BD9B4E019ULL))) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Poisson deviate. Inversion by sequential search below mean 10, Hormann's
// transformed rejection with squeeze (PTRS) above.
inline std::int64_t poisson_deviate(double mean, PixelStream& rng) {
  if (mean <= 0.0) return 0;
  if (mean < 10.0) {
    double p = std::exp(-mean);
    double cdf = p;
    const double u = rng.uniform();
    std::int64_t k = 0;
    while (u > cdf) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
      if (p <= 0.0 && cdf < u) break;  // tail underflow; u sits in rounding slack
    }
    return k;
  }
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double U = rng.uniform() - 0.5;
    const double V = rng.uniform();
    const double us = 0.5 - std::fabs(U);
    const double kd = std::floor((2.0 * a / us + b) * U + mean + 0.43);
    if (us >= 0.07 && V <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && V > us)) continue;
    if (std::log(V) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -mean + kd * loglam - std::lgamma(kd + 1.0))
      return static_cast<std::int64_t>(kd);
  }
}

inline Image sample_poisson(const Image& img, std::uint64_t seed) {
  Image out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double x = img[i];
    require(std::isfinite(x) && x >= 0.0, "sample_poisson: intensities must be non-negative");
    if (x == 0.0) continue;
    PixelStream rng(seed, i);
    out[i] = static_cast<double>(poisson_deviate(x, rng));
  }
  return out;
}

inline int bin3_extent(int n) { return (n + 2) / 3; }

// 3x3 block sums. Dimensions that are not multiples of 3 are replicate-padded
// at the bottom/right edge first.
inline Image bin3(const Image& img) {
  require(!img.empty(), "bin3: empty image");
  const int bw = bin3_extent(img.width());
  const int bh = bin3_extent(img.height());
  Image out(bw, bh);
  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      double s = 0.0;
      for (int dy = 0; dy < 3; ++dy) {
        const int y = std::min(3 * by + dy, img.height() - 1);
        for (int dx = 0; dx < 3; ++dx) s += img.at(y, std::min(3 * bx + dx, img.width() - 1));
      }
      out.at(by, bx) = s;
    }
  }
  return out;
}

// Inverse of bin3 for a denoised binned image: divide by 9, then bilinear
// interpolation with low-res pixel j centred on high-res pixel 3j+1, cropped
// to the target dimensions. Positions outside the outermost centres take
// the nearest edge value.
inline Image unbin_bilinear(const Image& img, int target_w, int target_h) {
  require(!img.empty(), "unbin_bilinear: empty image");
  require(target_w >= img.width() && target_h >= img.height(),
          "unbin_bilinear: target must not be smaller than the source");
  struct Tap {
    int i0;
    int i1;
    double w1;
  };
  auto taps = [](int target, int source) {
    std::vector<Tap> t(target);
    for (int i = 0; i < target; ++i) {
      double s = (i - 1) / 3.0;
      s = std::clamp(s, 0.0, static_cast<double>(source - 1));
      const int i0 = std::min(static_cast<int>(std::floor(s)), source - 1);
      const int i1 = std::min(i0 + 1, source - 1);
      t[i] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto tx = taps(target_w, img.width());
  const auto ty = taps(target_h, img.height());
  Image out(target_w, target_h);
  for (int y = 0; y < target_h; ++y) {
    const auto& vy = ty[y];
    for (int x = 0; x < target_w; ++x) {
      const auto& vx = tx[x];
      const double top = (1.0 - vx.w1) * img.at(vy.i0, vx.i0) + vx.w1 * img.at(vy.i0, vx.i1);
      const double bot = (1.0 - vx.w1) * img.at(vy.i1, vx.i0) + vx.w1 * img.at(vy.i1, vx.i1);
      out.at(y, x) = ((1.0 - vy.w1) * top + vy.w1 * bot) / 9.0;
    }
  }
  return out;
}

// Peak estimate for an observed count image: maximum of the 3x3 median
// filtered image (replicate borders). An estimate only.
inline double estimate_peak(const Image& noisy) {
  require(!noisy.empty(), "estimate_peak: empty image");
  double best = 0.0;
  double win[9];
  for (int y = 0; y < noisy.height(); ++y) {
    for (int x = 0; x < noisy.width(); ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          win[n++] = noisy.at(std::clamp(y + dy, 0, noisy.height() - 1), std::clamp(x + dx, 0, noisy.width() - 1));
      std::nth_element(win, win + 4, win + 9);
      best = std::max(best, win[4]);
    }
  }
  return best;
}

}  // namespace foepnr
