#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/image.hpp"
#include "foepnr/ipiano.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/vst.hpp"

namespace foepnr {

enum class Variant { direct, transform, transform_binned };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::direct:
      return "direct";
    case Variant::transform:
      return "transform";
    case Variant::transform_binned:
      return "transform_binned";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  if (s == "direct") return Variant::direct;
  if (s == "transform") return Variant::transform;
  if (s == "transform_binned" || s == "binned") return Variant::transform_binned;
  throw InvalidInput("unknown variant '" + std::string(s) + "'");
}

// Data term used in the Anscombe domain.
enum class DataTerm { quadratic, idiv };

inline std::string_view to_string(DataTerm t) { return t == DataTerm::quadratic ? "quadratic" : "idiv"; }

inline DataTerm data_term_from_string(std::string_view s) {
  if (s == "quadratic") return DataTerm::quadratic;
  if (s == "idiv") return DataTerm::idiv;
  throw InvalidInput("unknown data term '" + std::string(s) + "'");
}

inline constexpr double kBranchThreshold = 5.0;

// Quadratic data term iff peak >= 5.
inline DataTerm branch_for_peak(double peak) {
  return peak >= kBranchThreshold ? DataTerm::quadratic : DataTerm::idiv;
}

inline int default_iteration_budget(double peak) { return peak < kBranchThreshold ? 150 : 60; }

// Trade-off parameter lookup keyed by data-term family ("direct",
// "quadratic", "idiv") and peak. Between stored peaks log(lambda) is
// interpolated linearly in log(peak); outside the stored range the nearest
// entry is used. Missing keys yield 1, the scale the prior was trained at.
class LambdaTable {
 public:
  std::string provenance;

  void set(const std::string& key, double peak, double lambda) {
    require(peak > 0.0 && lambda > 0.0, "lambda table entries must be positive");
    auto& rows = entries_[key];
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == peak; });
    if (it != rows.end()) {
      it->second = lambda;
    } else {
      rows.emplace_back(peak, lambda);
      std::sort(rows.begin(), rows.end());
    }
  }

  double lookup(const std::string& key, double peak) const {
    require(peak > 0.0, "lambda lookup: peak must be positive");
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.empty()) return 1.0;
    const auto& rows = it->second;
    if (peak <= rows.front().first) return rows.front().second;
    if (peak >= rows.back().first) return rows.back().second;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (peak <= rows[i].first) {
        const auto& [p0, l0] = rows[i - 1];
        const auto& [p1, l1] = rows[i];
        if (peak == p1) return l1;
        const double t = (std::log(peak) - std::log(p0)) / (std::log(p1) - std::log(p0));
        return std::exp((1.0 - t) * std::log(l0) + t * std::log(l1));
      }
    }
    return rows.back().second;
  }

  const std::map<std::string, std::vector<std::pair<double, double>>>& entries() const { return entries_; }

  void write(std::ostream& os) const {
    os << "LAMBDA 1\n";
    std::istringstream prov(provenance);
    for (std::string line; std::getline(prov, line);) os << "# " << line << '\n';
    char buf[64];
    for (const auto& [key, rows] : entries_) {
      for (const auto& [p, l] : rows) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g", p, l);
        os << key << ' ' << buf << '\n';
      }
    }
  }

  static LambdaTable read(std::istream& is) {
    LambdaTable t;
    std::string line;
    if (!std::getline(is, line) || line.rfind("LAMBDA 1", 0) != 0) throw DataError("lambda table: missing 'LAMBDA 1' header");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        t.provenance += line.size() > 2 ? line.substr(2) : std::string{};
        t.provenance += '\n';
        continue;
      }
      std::istringstream ls(line);
      std::string key;
      double p = 0.0, l = 0.0;
      if (!(ls >> key >> p >> l) || p <= 0.0 || l <= 0.0) throw DataError("lambda table: malformed line '" + line + "'");
      t.set(key, p, l);
    }
    return t;
  }

 private:
  std::map<std::string, std::vector<std::pair<double, double>>> entries_;
};

inline std::string lambda_key(Variant variant, double peak) {
  if (variant == Variant::direct) return "direct";
  return std::string(to_string(branch_for_peak(peak)));
}

inline double select_lambda(double peak, const std::string& key, const LambdaTable& table) {
  return table.lookup(key, peak);
}

struct DenoiseRequest {
  Image noisy;                          // photon counts
  std::optional<double> peak;           // estimated from the data when absent
  std::optional<double> lambda;         // table lookup when absent
  Variant variant = Variant::transform;
  double zero_offset_c = 0.1;           // direct variant only
  int bin_factor = 3;                   // transform_binned only; 1 disables binning
  std::optional<DataTerm> force_data_term;  // overrides the peak rule (experiments)
  std::optional<int> max_iters;
  SolverConfig solver;
};

struct DenoiseResult {
  Image estimate;     // x_hat, photon-count domain, >= 0
  Image transformed;  // v (or the offset counts for the direct model)
  Image solution;     // u_hat before inversion
  Variant variant = Variant::transform;
  DataTerm data_term = DataTerm::quadratic;  // meaningful for transform variants
  double peak = 0.0;                         // peak that drove branch and lambda choice
  double lambda = 0.0;
  SolverTrace trace;
  bool converged = false;
  std::size_t clamped = 0;  // pixels clamped by the unbiased inverse
};

namespace detail {

inline void validate_counts(const Image& y) {
  require(!y.empty(), "denoise: empty input");
  for (double v : y) {
    require(std::isfinite(v) && v >= 0.0, "denoise: noisy input must be non-negative");
    require(v == std::floor(v), "denoise: noisy input must be integer-valued counts");
  }
}

inline double resolve_peak(const DenoiseRequest& req, const Image& counts) {
  if (req.peak) {
    require(*req.peak > 0.0 && std::isfinite(*req.peak), "denoise: peak must be positive");
    return *req.peak;
  }
  const double est = estimate_peak(counts);
  return est > 0.0 ? est : 1.0;
}

inline SolverConfig solver_for(const DenoiseRequest& req, double peak) {
  SolverConfig cfg = req.solver;
  cfg.max_iters = req.max_iters ? *req.max_iters : default_iteration_budget(peak);
  return cfg;
}

}  // namespace detail

// FoE prior plus lambda * I-divergence on the raw counts, model trained in
// the original domain. Zero counts are replaced by c when c > 0.
inline DenoiseResult denoise_direct(const FoEModel& model, const DenoiseRequest& req,
                                    const LambdaTable& table = LambdaTable{}) {
  require(req.variant == Variant::direct, "denoise_direct: request variant must be 'direct'");
  require(model.domain == Domain::original,
          "denoise_direct: the direct model needs a prior trained in the original domain (got an Anscombe-domain model)");
  require(req.zero_offset_c >= 0.0, "denoise_direct: c must be non-negative");
  detail::validate_counts(req.noisy);

  DenoiseResult res;
  res.variant = Variant::direct;
  res.peak = detail::resolve_peak(req, req.noisy);
  res.lambda = req.lambda ? *req.lambda : select_lambda(res.peak, "direct", table);
  require(res.lambda > 0.0, "denoise: lambda must be positive");

  Image obs = req.noisy;
  if (req.zero_offset_c > 0.0)
    for (double& v : obs)
      if (v == 0.0) v = req.zero_offset_c;

  const FoEPrior prior(model);
  const double lambda = res.lambda;
  auto solved = ipiano_minimize([&](const Image& u) { return prior.gradient(u); },
                                [&](const Image& u) { return prior.energy(u); },
                                [&](const Image& ut, double tau) { return prox_idiv(ut, tau * lambda, obs); },
                                [&](const Image& u) { return lambda * idiv_energy(u, obs); }, obs,
                                detail::solver_for(req, res.peak));
  res.transformed = std::move(obs);
  res.solution = solved.solution;
  res.estimate = map_pixels(solved.solution, [](double v) { return std::max(v, 0.0); });
  res.trace = std::move(solved.trace);
  res.converged = solved.converged;
  return res;
}

// Anscombe transform, FoE-regularised denoising in the transform domain with
// a quadratic (peak >= 5) or I-divergence (peak < 5) data term, unbiased
// inverse.
inline DenoiseResult denoise_transform(const FoEModel& model, const DenoiseRequest& req,
                                       const LambdaTable& table = LambdaTable{}) {
  require(req.variant == Variant::transform || req.variant == Variant::transform_binned,
          "denoise_transform: request variant must be a transform variant");
  require(model.domain == Domain::anscombe,
          "denoise_transform: the transform model needs a prior trained in the Anscombe domain (got an original-domain model)");
  detail::validate_counts(req.noisy);

  DenoiseResult res;
  res.variant = req.variant;
  res.peak = detail::resolve_peak(req, req.noisy);
  res.data_term = req.force_data_term ? *req.force_data_term : branch_for_peak(res.peak);
  res.lambda = req.lambda ? *req.lambda : select_lambda(res.peak, std::string(to_string(res.data_term)), table);
  require(res.lambda > 0.0, "denoise: lambda must be positive");

  const Image v = anscombe_forward(req.noisy);
  const FoEPrior prior(model);
  const double lambda = res.lambda;
  auto grad = [&](const Image& u) { return prior.gradient(u); };
  auto energy = [&](const Image& u) { return prior.energy(u); };
  const SolverConfig cfg = detail::solver_for(req, res.peak);

  SolverResult solved;
  if (res.data_term == DataTerm::quadratic) {
    solved = ipiano_minimize(
        grad, energy, [&](const Image& ut, double tau) { return prox_quadratic(ut, tau * lambda, v); },
        [&](const Image& u) { return lambda * quadratic_energy(u, v); }, v, cfg);
  } else {
    solved = ipiano_minimize(
        grad, energy, [&](const Image& ut, double tau) { return prox_idiv(ut, tau * lambda, v); },
        [&](const Image& u) { return lambda * idiv_energy(u, v); }, v, cfg);
  }
  InverseDiagnostics diag;
  res.estimate = anscombe_inverse_exact_unbiased(solved.solution, &diag);
  res.clamped = diag.clamped;
  res.transformed = v;
  res.solution = std::move(solved.solution);
  res.trace = std::move(solved.trace);
  res.converged = solved.converged;
  return res;
}

// 3x3 binning, transform-domain denoising of the binned counts with the
// branch chosen from the binned peak (9x the nominal one), bilinear
// upscaling back to the input size.
inline DenoiseResult denoise_binned(const FoEModel& model, const DenoiseRequest& req,
                                    const LambdaTable& table = LambdaTable{}) {
  require(req.variant == Variant::transform_binned, "denoise_binned: request variant must be 'transform_binned'");
  require(req.bin_factor == 1 || req.bin_factor == 3, "denoise_binned: bin factor must be 1 or 3");
  if (req.bin_factor == 1) return denoise_transform(model, req, table);
  detail::validate_counts(req.noisy);

  DenoiseRequest sub = req;
  sub.noisy = bin3(req.noisy);
  sub.peak = req.peak ? std::optional<double>(9.0 * *req.peak) : std::optional<double>(estimate_peak(sub.noisy));
  if (*sub.peak <= 0.0) sub.peak = 1.0;
  require(sub.noisy.width() >= model.filter_size() && sub.noisy.height() >= model.filter_size(),
          "denoise_binned: binned image smaller than the filters");
  DenoiseResult res = denoise_transform(model, sub, table);
  res.estimate = unbin_bilinear(res.estimate, req.noisy.width(), req.noisy.height());
  res.variant = Variant::transform_binned;
  return res;
}

inline DenoiseResult denoise(const FoEModel& model, const DenoiseRequest& req, const LambdaTable& table = LambdaTable{}) {
  switch (req.variant) {
    case Variant::direct:
      return denoise_direct(model, req, table);
    case Variant::transform:
      return denoise_transform(model, req, table);
    case Variant::transform_binned:
      return denoise_binned(model, req, table);
  }
  throw InvalidInput("denoise: unknown variant");
}

}  // namespace foepnr
