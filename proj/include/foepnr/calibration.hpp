#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/metrics.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/parallel.hpp"
#include "foepnr/pipeline.hpp"

namespace foepnr {

struct CalibrationTarget {
  std::string key;  // "direct", "quadratic" or "idiv"
  double peak = 1.0;
};

struct CalibrationSpec {
  std::vector<Image> images;  // clean validation images, any intensity scale
  std::vector<CalibrationTarget> targets;
  double lambda0 = 1.0;
  int min_exponent = -4;  // grid lambda0 * 2^k, k in [min_exponent, max_exponent]
  int max_exponent = 4;
  bool refine = true;     // also try best * 2^(+-1/2)
  std::uint64_t seed = 7;
  int threads = 1;
  double zero_offset_c = 0.1;
  std::optional<int> max_iters;

  void validate() const {
    require(!images.empty(), "calibrate: no validation images");
    require(!targets.empty(), "calibrate: no targets");
    require(lambda0 > 0.0, "calibrate: lambda0 must be positive");
    require(min_exponent <= max_exponent, "calibrate: empty exponent range");
    for (const auto& t : targets) {
      require(t.peak > 0.0, "calibrate: target peaks must be positive");
      require(t.key == "direct" || t.key == "quadratic" || t.key == "idiv", "calibrate: unknown key '" + t.key + "'");
    }
  }
};

// Peaks at which the transform pipeline is evaluated, plain and binned (9x).
inline std::vector<CalibrationTarget> default_calibration_targets(Domain domain) {
  std::vector<CalibrationTarget> out;
  if (domain == Domain::original) {
    for (double p : {0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 40.0}) out.push_back({"direct", p});
    return out;
  }
  for (double p : {0.1, 0.2, 0.5, 0.9, 1.0, 1.8, 2.0, 4.0, 4.5, 7.0}) out.push_back({"idiv", p});
  for (double p : {2.0, 5.0, 7.0, 9.0, 18.0, 36.0, 40.0}) out.push_back({"quadratic", p});
  return out;
}

// Mean PSNR (peak-scaled, range 255) of one (key, peak, lambda) setting over
// the validation images; noise seeds depend only on (seed, image index).
inline double calibration_score(const FoEModel& model, const CalibrationSpec& spec, const CalibrationTarget& target,
                                double lambda) {
  double total = 0.0;
  for (std::size_t i = 0; i < spec.images.size(); ++i) {
    const Image clean = scale_to_peak(spec.images[i], target.peak);
    const Image noisy = sample_poisson(clean, spec.seed * 7919ULL + i);
    DenoiseRequest req;
    req.noisy = noisy;
    req.peak = target.peak;
    req.lambda = lambda;
    req.max_iters = spec.max_iters;
    req.zero_offset_c = spec.zero_offset_c;
    if (target.key == "direct") {
      req.variant = Variant::direct;
    } else {
      req.variant = Variant::transform;
      req.force_data_term = data_term_from_string(target.key);
    }
    const auto res = denoise(model, req);
    total += score_peak_scaled(res.estimate, clean, target.peak).psnr_db;
  }
  return total / static_cast<double>(spec.images.size());
}

struct CalibrationEntry {
  CalibrationTarget target;
  double lambda = 1.0;
  double psnr_db = 0.0;
  std::vector<std::pair<double, double>> tried;  // (lambda, mean PSNR)
};

// Grid search of lambda per target, maximising mean validation PSNR.
inline std::vector<CalibrationEntry> calibrate_lambdas(const FoEModel& model, const CalibrationSpec& spec,
                                                       const std::function<void(const std::string&)>& log = {}) {
  spec.validate();
  const int ngrid = spec.max_exponent - spec.min_exponent + 1;
  const std::size_t nt = spec.targets.size();
  std::vector<double> coarse(nt * ngrid);
  parallel_for(coarse.size(), spec.threads, [&](std::size_t j) {
    const auto& t = spec.targets[j / ngrid];
    const double lambda = spec.lambda0 * std::ldexp(1.0, spec.min_exponent + static_cast<int>(j % ngrid));
    coarse[j] = calibration_score(model, spec, t, lambda);
  });

  std::vector<CalibrationEntry> out(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    out[t].target = spec.targets[t];
    int best = 0;
    for (int k = 0; k < ngrid; ++k) {
      const double lambda = spec.lambda0 * std::ldexp(1.0, spec.min_exponent + k);
      out[t].tried.emplace_back(lambda, coarse[t * ngrid + k]);
      if (coarse[t * ngrid + k] > coarse[t * ngrid + best]) best = k;
    }
    out[t].lambda = out[t].tried[best].first;
    out[t].psnr_db = out[t].tried[best].second;
  }

  if (spec.refine) {
    std::vector<double> fine(nt * 2);
    parallel_for(fine.size(), spec.threads, [&](std::size_t j) {
      const double factor = j % 2 == 0 ? std::sqrt(0.5) : std::sqrt(2.0);
      fine[j] = calibration_score(model, spec, spec.targets[j / 2], out[j / 2].lambda * factor);
    });
    for (std::size_t t = 0; t < nt; ++t) {
      const double base = out[t].lambda;
      for (int s = 0; s < 2; ++s) {
        const double lambda = base * (s == 0 ? std::sqrt(0.5) : std::sqrt(2.0));
        out[t].tried.emplace_back(lambda, fine[2 * t + s]);
        if (fine[2 * t + s] > out[t].psnr_db) {
          out[t].psnr_db = fine[2 * t + s];
          out[t].lambda = lambda;
        }
      }
    }
  }
  if (log) {
    for (const auto& e : out) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "calibrated %s peak %g: lambda %.6g (mean PSNR %.3f dB)", e.target.key.c_str(),
                    e.target.peak, e.lambda, e.psnr_db);
      log(buf);
    }
  }
  return out;
}

inline LambdaTable to_lambda_table(const std::vector<CalibrationEntry>& entries, std::string provenance) {
  LambdaTable t;
  t.provenance = std::move(provenance);
  for (const auto& e : entries) t.set(e.target.key, e.target.peak, e.lambda);
  return t;
}

}  // namespace foepnr
