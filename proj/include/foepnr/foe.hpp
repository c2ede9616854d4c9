#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/image.hpp"

namespace foepnr {

// rho(z) = log(1 + z^2) and its first two derivatives.
inline double potential(double z, int order = 0) {
  const double z2 = z * z;
  switch (order) {
    case 0:
      return std::log1p(z2);
    case 1:
      return 2.0 * z / (1.0 + z2);
    case 2: {
      const double d = 1.0 + z2;
      return 2.0 * (1.0 - z2) / (d * d);
    }
    default:
      throw InvalidInput("potential: order must be 0, 1 or 2");
  }
}

// Which domain a model was trained in: the photon-count domain with the
// I-divergence data term, or the Anscombe domain with a quadratic one.
enum class Domain { original, anscombe };

inline std::string_view to_string(Domain d) { return d == Domain::original ? "original" : "anscombe"; }

inline Domain domain_from_string(std::string_view s) {
  if (s == "original") return Domain::original;
  if (s == "anscombe") return Domain::anscombe;
  throw InvalidInput("unknown domain tag '" + std::string(s) + "'");
}

struct FoEModel {
  Domain domain = Domain::anscombe;
  BoundaryRule boundary = BoundaryRule::symmetric;
  std::string basis_id = "dct";
  FilterBasis basis;
  std::vector<std::vector<double>> betas;  // one coefficient vector per filter
  std::vector<double> weights;             // alpha_i > 0

  std::size_t num_filters() const { return betas.size(); }
  int filter_size() const { return basis.atom_size; }

  std::vector<Kernel> filters() const {
    std::vector<Kernel> out;
    out.reserve(betas.size());
    for (const auto& b : betas) out.push_back(compose_filter(basis, b));
    return out;
  }

  void validate() const {
    require(!basis.atoms.empty(), "model has an empty basis");
    require(betas.size() == weights.size(), "model needs one weight per filter");
    for (const auto& b : betas) require(b.size() == basis.size(), "coefficient vector length must match basis size");
    for (double w : weights) require(std::isfinite(w) && w > 0.0, "filter weights must be positive");
  }

  friend bool operator==(const FoEModel&, const FoEModel&) = default;
};

inline FilterBasis make_basis(std::string_view basis_id, int size) {
  if (basis_id == "dct") return dct_basis_zero_mean(size);
  throw InvalidInput("unknown basis id '" + std::string(basis_id) + "'");
}

// Filters initialised to the first `num_filters` basis atoms, each scaled to
// Frobenius norm `filter_norm`, all with weight `weight`.
inline FoEModel make_initial_model(int filter_size, int num_filters, Domain domain, double filter_norm = 0.1,
                                   double weight = 1.0, BoundaryRule boundary = BoundaryRule::symmetric) {
  FoEModel model;
  model.domain = domain;
  model.boundary = boundary;
  model.basis_id = "dct";
  model.basis = dct_basis_zero_mean(filter_size);
  require(num_filters >= 1 && static_cast<std::size_t>(num_filters) <= model.basis.size(),
          "number of filters must be between 1 and the basis size");
  require(filter_norm > 0.0 && weight > 0.0, "initial norm and weight must be positive");
  for (int i = 0; i < num_filters; ++i) {
    std::vector<double> beta(model.basis.size(), 0.0);
    beta[static_cast<std::size_t>(i)] = filter_norm;
    model.betas.push_back(std::move(beta));
    model.weights.push_back(weight);
  }
  return model;
}

// Precomposed filter bank for repeated energy/gradient evaluation.
class FoEPrior {
 public:
  FoEPrior(std::vector<Kernel> filters, std::vector<double> weights, BoundaryRule boundary)
      : filters_(std::move(filters)), weights_(std::move(weights)), boundary_(boundary) {
    require(filters_.size() == weights_.size(), "FoEPrior: one weight per filter");
    for (const auto& k : filters_) radius_ = std::max(radius_, k.radius());
  }

  explicit FoEPrior(const FoEModel& model) : FoEPrior(model.filters(), model.weights, model.boundary) {}

  const std::vector<Kernel>& filters() const { return filters_; }
  const std::vector<double>& weights() const { return weights_; }
  BoundaryRule boundary() const { return boundary_; }
  int radius() const { return radius_; }

  // Filter responses K_i u for every filter.
  std::vector<Image> responses(const Image& u) const {
    check(u);
    PaddedImage padded(u, radius_, boundary_);
    std::vector<Image> out;
    out.reserve(filters_.size());
    for (const auto& k : filters_) {
      Image r(u.width(), u.height());
      convolve_padded_accumulate(padded, k, r);
      out.push_back(std::move(r));
    }
    return out;
  }

  double energy(const Image& u) const {
    check(u);
    PaddedImage padded(u, radius_, boundary_);
    Image r(u.width(), u.height());
    double total = 0.0;
    for (std::size_t i = 0; i < filters_.size(); ++i) {
      std::fill(r.begin(), r.end(), 0.0);
      convolve_padded_accumulate(padded, filters_[i], r);
      double s = 0.0;
      for (double v : r) s += std::log1p(v * v);
      total += weights_[i] * s;
    }
    return total;
  }

  Image gradient(const Image& u) const {
    check(u);
    PaddedImage padded(u, radius_, boundary_);
    Image grad(u.width(), u.height());
    Image r(u.width(), u.height());
    for (std::size_t i = 0; i < filters_.size(); ++i) {
      std::fill(r.begin(), r.end(), 0.0);
      convolve_padded_accumulate(padded, filters_[i], r);
      const double w = weights_[i];
      for (double& v : r) v = w * 2.0 * v / (1.0 + v * v);
      convolve_adjoint_accumulate(r, filters_[i], boundary_, grad);
    }
    return grad;
  }

  // Upper bound on the Lipschitz constant of the gradient:
  // 2 * sum_i w_i ||K_i||^2 with ||K_i|| <= ||k_i||_1.
  double lipschitz_bound() const {
    double s = 0.0;
    for (std::size_t i = 0; i < filters_.size(); ++i) {
      double l1 = 0.0;
      for (double t : filters_[i].taps()) l1 += std::fabs(t);
      s += weights_[i] * l1 * l1;
    }
    return 2.0 * s;
  }

 private:
  void check(const Image& u) const {
    const int m = 2 * radius_ + 1;
    require(u.width() >= m && u.height() >= m, "FoE: image must be at least as large as the filters");
  }

  std::vector<Kernel> filters_;
  std::vector<double> weights_;
  BoundaryRule boundary_;
  int radius_ = 0;
};

inline double foe_energy(const Image& u, const FoEModel& model) { return FoEPrior(model).energy(u); }

inline Image foe_gradient(const Image& u, const FoEModel& model) { return FoEPrior(model).gradient(u); }

}  // namespace foepnr
