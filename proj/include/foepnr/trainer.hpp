#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/image.hpp"
#include "foepnr/ipiano.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/parallel.hpp"
#include "foepnr/vst.hpp"

namespace foepnr {

// Lower-level data term and upper-level loss:
//   original_domain: D = lambda <w - f log w, 1>,  loss 1/2 ||w - g||^2
//   anscombe_domain: D = 1/2 ||w - v||^2,          loss 1/2 ||I_C(w) - g||^2
enum class Objective { original_domain, anscombe_domain };

inline std::string_view to_string(Objective o) {
  return o == Objective::original_domain ? "original_domain" : "anscombe_domain";
}

inline Objective objective_from_string(std::string_view s) {
  if (s == "original_domain" || s == "original") return Objective::original_domain;
  if (s == "anscombe_domain" || s == "anscombe") return Objective::anscombe_domain;
  throw InvalidInput("unknown objective '" + std::string(s) + "'");
}

inline Domain domain_for(Objective o) { return o == Objective::original_domain ? Domain::original : Domain::anscombe; }

struct TrainingSample {
  Image clean;        // g, peak-scaled
  Image noisy;        // f, Poisson counts
  Image transformed;  // v = anscombe(f)
};

inline TrainingSample make_training_sample(Image clean, std::uint64_t seed) {
  TrainingSample s;
  s.noisy = sample_poisson(clean, seed);
  s.transformed = anscombe_forward(s.noisy);
  s.clean = std::move(clean);
  return s;
}

struct CgConfig {
  double tol = 1e-8;
  int max_iters = 1000;
};

struct TrainConfig {
  Objective objective = Objective::anscombe_domain;
  int lbfgs_memory = 10;
  int max_outer_iters = 500;
  double rel_loss_tol = 1e-5;
  SolverConfig lower_solver = [] {
    SolverConfig c;
    c.max_iters = 5000;
    c.rel_tol = 1e-8;
    return c;
  }();
  CgConfig hessian_cg;
  double data_lambda = 1.0;       // lambda of the original-domain data term
  double zero_offset_c = 0.0;     // original domain: zero counts replaced by c
  double stationarity_tol = 1e-4; // sup-norm of grad E accepted at w*
  double initial_step = 0.02;     // max |parameter change| of the first L-BFGS step
  double armijo_c1 = 1e-4;
  int max_line_search = 20;
  bool warm_start = true;
  int threads = 1;
  int checkpoint_every = 0;       // 0 disables checkpoints
  std::string checkpoint_path;

  void validate() const {
    require(lbfgs_memory >= 1, "train: L-BFGS memory must be >= 1");
    require(max_outer_iters >= 0, "train: max_outer_iters must be >= 0");
    require(rel_loss_tol > 0.0, "train: rel_loss_tol must be positive");
    require(hessian_cg.tol > 0.0 && hessian_cg.max_iters > 0, "train: CG settings must be positive");
    require(data_lambda > 0.0, "train: data lambda must be positive");
    require(stationarity_tol > 0.0, "train: stationarity tolerance must be positive");
    require(initial_step > 0.0, "train: initial step must be positive");
    lower_solver.validate();
  }
};

// Lower-level energy E(w) = sum_i e^{alpha_i} sum_p rho((k_i * w)_p) + D(w)
// for one sample and one parameter setting.
class LowerProblem {
 public:
  LowerProblem(const FoEModel& model, const TrainingSample& sample, Objective objective, double data_lambda = 1.0,
               double zero_offset_c = 0.0)
      : prior_(model), objective_(objective), lambda_(data_lambda) {
    require(model.domain == domain_for(objective), "lower problem: model domain does not match the training objective");
    require_same_shape(sample.clean, sample.noisy, "lower problem");
    if (objective == Objective::anscombe_domain) {
      obs_ = sample.transformed.empty() ? anscombe_forward(sample.noisy) : sample.transformed;
      lambda_ = 1.0;
    } else {
      obs_ = sample.noisy;
      if (zero_offset_c > 0.0)
        for (double& v : obs_)
          if (v == 0.0) v = zero_offset_c;
    }
  }

  const FoEPrior& prior() const { return prior_; }
  Objective objective() const { return objective_; }
  const Image& observation() const { return obs_; }
  double data_lambda() const { return lambda_; }

  double data_energy(const Image& w) const {
    return objective_ == Objective::anscombe_domain ? quadratic_energy(w, obs_) : lambda_ * idiv_energy(w, obs_);
  }

  double energy(const Image& w) const { return prior_.energy(w) + data_energy(w); }

  // Pixels held at the w = 0 boundary: zero counts whose solution is 0.
  std::vector<char> active_set(const Image& w) const {
    std::vector<char> active(w.size(), 0);
    if (objective_ == Objective::original_domain)
      for (std::size_t i = 0; i < w.size(); ++i) active[i] = obs_[i] == 0.0 && w[i] <= 0.0;
    return active;
  }

  // grad E(w), zeroed on the active set.
  Image gradient(const Image& w) const {
    Image g = prior_.gradient(w);
    if (objective_ == Objective::anscombe_domain) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] - obs_[i];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (obs_[i] == 0.0 && w[i] <= 0.0) {
          g[i] = 0.0;
        } else {
          g[i] += lambda_ * (1.0 - obs_[i] / w[i]);
        }
      }
    }
    return g;
  }

  // Diagonal of the data-term Hessian: 1, or lambda f / w^2.
  double data_curvature(std::size_t i, const Image& w) const {
    if (objective_ == Objective::anscombe_domain) return 1.0;
    return obs_[i] > 0.0 ? lambda_ * obs_[i] / (w[i] * w[i]) : 0.0;
  }

  Image prox(const Image& u_tilde, double tau) const {
    return objective_ == Objective::anscombe_domain ? prox_quadratic(u_tilde, tau, obs_)
                                                    : prox_idiv(u_tilde, tau * lambda_, obs_);
  }

 private:
  FoEPrior prior_;
  Objective objective_;
  double lambda_;
  Image obs_;
};

inline double sup_norm(const Image& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::fabs(v));
  return m;
}

// Minimises the lower-level energy with iPiano. The start point is the
// observation unless a warm start is given. If the relative-change rule fires
// while |grad E|_inf is still above stationarity_target, iPiano is restarted
// from the current point with a 100x tighter rel_tol, within the same
// max_iters budget.
inline Image lower_solve(const LowerProblem& problem, const SolverConfig& cfg, const Image* warm_start = nullptr,
                         double stationarity_target = 1e-6) {
  Image u = warm_start && !warm_start->empty() ? *warm_start : problem.observation();
  SolverConfig round = cfg;
  int used = 0;
  while (true) {
    round.max_iters = cfg.max_iters - used;
    auto res = ipiano_minimize([&](const Image& v) { return problem.prior().gradient(v); },
                               [&](const Image& v) { return problem.prior().energy(v); },
                               [&](const Image& vt, double tau) { return problem.prox(vt, tau); },
                               [&](const Image& v) { return problem.data_energy(v); }, u, round);
    u = std::move(res.solution);
    used += static_cast<int>(res.trace.size());
    if (!res.converged || res.trace.empty() || used >= cfg.max_iters) break;
    if (sup_norm(problem.gradient(u)) < stationarity_target) break;
    round.rel_tol *= 0.01;
  }
  return u;
}

inline Image lower_solve(const TrainingSample& sample, const FoEModel& model, Objective objective,
                         const TrainConfig& cfg = {}) {
  LowerProblem problem(model, sample, objective, cfg.data_lambda, cfg.zero_offset_c);
  return lower_solve(problem, cfg.lower_solver);
}

// Hessian of the lower-level energy at w applied to p, without forming it:
//   H p = sum_i e^{alpha_i} K_i^T diag(rho''(K_i w)) K_i p + D'' p.
class HessianOperator {
 public:
  HessianOperator(const LowerProblem& problem, const Image& w) : problem_(problem), w_(w) {
    const auto& prior = problem.prior();
    PaddedImage padded(w, prior.radius(), prior.boundary());
    curvature_.reserve(prior.filters().size());
    for (std::size_t i = 0; i < prior.filters().size(); ++i) {
      Image r(w.width(), w.height());
      convolve_padded_accumulate(padded, prior.filters()[i], r);
      for (double& v : r) v = prior.weights()[i] * potential(v, 2);
      curvature_.push_back(std::move(r));
    }
    data_diag_.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) data_diag_[i] = problem.data_curvature(i, w);
  }

  Image apply(const Image& p) const {
    require_same_shape(p, w_, "hessian_apply");
    const auto& prior = problem_.prior();
    PaddedImage padded(p, prior.radius(), prior.boundary());
    Image out(p.width(), p.height());
    Image r(p.width(), p.height());
    for (std::size_t i = 0; i < prior.filters().size(); ++i) {
      std::fill(r.begin(), r.end(), 0.0);
      convolve_padded_accumulate(padded, prior.filters()[i], r);
      const Image& c = curvature_[i];
      for (std::size_t k = 0; k < r.size(); ++k) r[k] *= c[k];
      convolve_adjoint_accumulate(r, prior.filters()[i], prior.boundary(), out);
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += data_diag_[k] * p[k];
    return out;
  }

  // trace(H) with ||K_i||-weighted curvature sums (exact for periodic boundaries).
  double trace_estimate() const {
    const auto& prior = problem_.prior();
    double t = 0.0;
    for (std::size_t i = 0; i < prior.filters().size(); ++i) {
      double k2 = 0.0;
      for (double v : prior.filters()[i].taps()) k2 += v * v;
      double s = 0.0;
      for (double v : curvature_[i]) s += v;
      t += k2 * s;
    }
    for (double d : data_diag_) t += d;
    return t;
  }

 private:
  const LowerProblem& problem_;
  const Image& w_;
  std::vector<Image> curvature_;
  std::vector<double> data_diag_;
};

inline Image hessian_apply(const LowerProblem& problem, const Image& w, const Image& p) {
  return HessianOperator(problem, w).apply(p);
}

struct CgResult {
  Image solution;
  int iterations = 0;
  double relative_residual = 0.0;
  bool regularized = false;  // non-positive curvature met; solved H + eps I instead
  double shift = 0.0;
  std::vector<double> residual_history;  // ||r_k|| / ||rhs||, k = 0, 1, ...
};

// Conjugate gradients on the Hessian restricted to the free pixels (mask
// value 0). Active pixels get q = 0.
template <typename Apply>
CgResult conjugate_gradient(Apply&& apply, const Image& rhs, const CgConfig& cfg, const std::vector<char>& active,
                            double shift) {
  CgResult res;
  res.shift = shift;
  auto masked = [&](Image v) {
    if (!active.empty())
      for (std::size_t i = 0; i < v.size(); ++i)
        if (active[i]) v[i] = 0.0;
    return v;
  };
  auto op = [&](const Image& p) {
    Image hp = masked(apply(p));
    if (shift != 0.0) axpy(shift, p, hp);
    return hp;
  };
  Image b = masked(rhs);
  Image x(rhs.width(), rhs.height());
  const double b_norm = norm(b);
  res.residual_history.push_back(b_norm > 0.0 ? 1.0 : 0.0);
  if (b_norm == 0.0) {
    res.solution = std::move(x);
    return res;
  }
  Image r = b;
  Image p = r;
  double rr = squared_norm(r);
  for (int k = 0; k < cfg.max_iters; ++k) {
    const Image hp = op(p);
    const double php = dot(p, hp);
    if (!(php > 0.0)) {
      res.regularized = true;
      res.solution = std::move(x);
      res.iterations = k;
      return res;
    }
    const double alpha = rr / php;
    axpy(alpha, p, x);
    axpy(-alpha, hp, r);
    const double rr_new = squared_norm(r);
    res.iterations = k + 1;
    res.relative_residual = std::sqrt(rr_new) / b_norm;
    res.residual_history.push_back(res.relative_residual);
    if (res.relative_residual <= cfg.tol) break;
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  res.solution = std::move(x);
  return res;
}

// q = H^{-1} rhs by matrix-free CG. On non-positive curvature the system is
// re-solved with H + eps I, eps = 1e-6 trace(H) / N.
inline CgResult solve_hessian_system(const LowerProblem& problem, const Image& w, const Image& rhs,
                                     const CgConfig& cfg = {}) {
  require_same_shape(w, rhs, "solve_hessian_system");
  const HessianOperator hess(problem, w);
  const auto active = problem.active_set(w);
  auto apply = [&](const Image& p) { return hess.apply(p); };
  CgResult res = conjugate_gradient(apply, rhs, cfg, active, 0.0);
  if (!res.regularized) return res;
  double eps = 1e-6 * hess.trace_estimate() / static_cast<double>(w.size());
  if (!(eps > 0.0)) eps = 1e-6;
  for (int attempt = 0; attempt < 8; ++attempt, eps *= 100.0) {
    res = conjugate_gradient(apply, rhs, cfg, active, eps);
    if (!res.regularized) {
      res.regularized = true;
      return res;
    }
  }
  throw NumericalError("solve_hessian_system: Hessian is not positive definite even after regularisation");
}

struct ParamGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> d_beta;  // [filter][atom]
  std::vector<double> d_log_weight;         // [filter]
  CgResult cg;
};

inline double sample_loss(const Image& w, const TrainingSample& sample, Objective objective) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = objective == Objective::anscombe_domain ? vst::inverse_unbiased(w[i]) : w[i];
    const double d = x - sample.clean[i];
    s += d * d;
  }
  return 0.5 * s;
}

// Implicit-differentiation gradients of the sample loss at a lower-level
// stationary point w*:
//   dL/dbeta_ij  = -e^{a_i} (B_j^T rho'(K_i w) + K_i^T Gamma_i B_j w)^T H^{-1} dl/dw
//   dL/dalpha_i  = -e^{a_i} (K_i^T rho'(K_i w))^T H^{-1} dl/dw
inline ParamGradient param_gradients(const Image& w_star, const FoEModel& model, const TrainingSample& sample,
                                     const TrainConfig& cfg) {
  const LowerProblem problem(model, sample, cfg.objective, cfg.data_lambda, cfg.zero_offset_c);
  const double stationarity = sup_norm(problem.gradient(w_star));
  if (!(stationarity <= cfg.stationarity_tol)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "param_gradients: w* is not stationary (|grad E|_inf = %.3g)", stationarity);
    throw NumericalError(buf);
  }

  ParamGradient out;
  Image dl_dw(w_star.width(), w_star.height());
  for (std::size_t i = 0; i < w_star.size(); ++i) {
    if (cfg.objective == Objective::anscombe_domain) {
      const double z = w_star[i];
      dl_dw[i] = vst::inverse_unbiased_clamped_derivative(z) * (vst::inverse_unbiased(z) - sample.clean[i]);
    } else {
      dl_dw[i] = w_star[i] - sample.clean[i];
    }
  }
  out.loss = sample_loss(w_star, sample, cfg.objective);
  out.cg = solve_hessian_system(problem, w_star, dl_dw, cfg.hessian_cg);
  const Image& q = out.cg.solution;

  const auto& prior = problem.prior();
  const int radius = prior.radius();
  const PaddedImage w_pad(w_star, radius, prior.boundary());
  const PaddedImage q_pad(q, radius, prior.boundary());
  const std::size_t nf = model.num_filters();
  out.d_beta.assign(nf, std::vector<double>(model.basis.size(), 0.0));
  out.d_log_weight.assign(nf, 0.0);
  Image resp(w_star.width(), w_star.height());
  Image kq(w_star.width(), w_star.height());
  for (std::size_t i = 0; i < nf; ++i) {
    const Kernel& k = prior.filters()[i];
    const double weight = prior.weights()[i];
    std::fill(resp.begin(), resp.end(), 0.0);
    std::fill(kq.begin(), kq.end(), 0.0);
    convolve_padded_accumulate(w_pad, k, resp);
    convolve_padded_accumulate(q_pad, k, kq);
    Image d1(resp.width(), resp.height());
    Image gkq(resp.width(), resp.height());
    double a = 0.0;
    for (std::size_t p = 0; p < resp.size(); ++p) {
      d1[p] = potential(resp[p], 1);
      gkq[p] = potential(resp[p], 2) * kq[p];
      a += d1[p] * kq[p];
    }
    out.d_log_weight[i] = -weight * a;
    Kernel dk = kernel_gradient(d1, q_pad, k.size());
    const Kernel dk2 = kernel_gradient(gkq, w_pad, k.size());
    for (std::size_t t = 0; t < dk.taps().size(); ++t) dk.taps()[t] = -weight * (dk.taps()[t] + dk2.taps()[t]);
    out.d_beta[i] = project_onto_basis(model.basis, dk);
  }
  return out;
}

// Flattened parameter vector: log-weights first, then betas filter by filter.
inline std::vector<double> pack_parameters(const FoEModel& model) {
  std::vector<double> theta;
  theta.reserve(model.num_filters() * (1 + model.basis.size()));
  for (double w : model.weights) theta.push_back(std::log(w));
  for (const auto& b : model.betas) theta.insert(theta.end(), b.begin(), b.end());
  return theta;
}

inline FoEModel unpack_parameters(const FoEModel& like, const std::vector<double>& theta) {
  FoEModel m = like;
  const std::size_t nf = like.num_filters();
  const std::size_t nb = like.basis.size();
  require(theta.size() == nf * (1 + nb), "unpack_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < nf; ++i) m.weights[i] = std::exp(theta[i]);
  for (std::size_t i = 0; i < nf; ++i)
    std::copy(theta.begin() + nf + i * nb, theta.begin() + nf + (i + 1) * nb, m.betas[i].begin());
  return m;
}

inline std::vector<double> pack_gradient(const ParamGradient& g) {
  std::vector<double> out(g.d_log_weight);
  for (const auto& b : g.d_beta) out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct TrainState {
  int iteration = 0;
  std::vector<double> theta;
  double loss = 0.0;
  std::vector<double> gradient;
  std::vector<std::vector<double>> s_history;
  std::vector<std::vector<double>> y_history;
  std::vector<double> loss_history;
  std::vector<Image> warm;  // lower-level solutions at theta
};

struct TrainResult {
  FoEModel model;
  std::vector<double> loss_history;  // loss at the initial and every accepted iterate
  int iterations = 0;
  std::string stop_reason;
  std::vector<std::string> diagnostics;
};

namespace detail {

inline void write_vector(std::ostream& os, std::string_view tag, const std::vector<double>& v) {
  char buf[32];
  os << tag << ' ' << v.size();
  for (double x : v) {
    std::snprintf(buf, sizeof buf, " %.17g", x);
    os << buf;
  }
  os << '\n';
}

inline std::vector<double> read_vector(std::istream& is, std::string_view tag) {
  std::string t;
  std::size_t n = 0;
  if (!(is >> t >> n) || t != tag) throw DataError("checkpoint: expected '" + std::string(tag) + "'");
  std::vector<double> v(n);
  for (auto& x : v)
    if (!(is >> x)) throw DataError("checkpoint: truncated '" + std::string(tag) + "'");
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const TrainState& st) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint '" + path + "'");
  char buf[64];
  os << "FOECKPT 1\n";
  os << "iteration " << st.iteration << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", st.loss);
  os << "loss " << buf << '\n';
  detail::write_vector(os, "theta", st.theta);
  detail::write_vector(os, "gradient", st.gradient);
  detail::write_vector(os, "loss_history", st.loss_history);
  os << "memory " << st.s_history.size() << '\n';
  for (std::size_t k = 0; k < st.s_history.size(); ++k) {
    detail::write_vector(os, "s", st.s_history[k]);
    detail::write_vector(os, "y", st.y_history[k]);
  }
  os << "warm " << st.warm.size() << '\n';
  for (const auto& w : st.warm) {
    os << "image " << w.width() << ' ' << w.height() << '\n';
    detail::write_vector(os, "values", w.values());
  }
  if (!os) throw DataError("failed writing checkpoint '" + path + "'");
}

inline TrainState read_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read checkpoint '" + path + "'");
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "FOECKPT" || version != 1) throw DataError("checkpoint: bad header");
  TrainState st;
  if (!(is >> tag >> st.iteration) || tag != "iteration") throw DataError("checkpoint: expected iteration");
  if (!(is >> tag >> st.loss) || tag != "loss") throw DataError("checkpoint: expected loss");
  st.theta = detail::read_vector(is, "theta");
  st.gradient = detail::read_vector(is, "gradient");
  st.loss_history = detail::read_vector(is, "loss_history");
  std::size_t mem = 0;
  if (!(is >> tag >> mem) || tag != "memory") throw DataError("checkpoint: expected memory");
  for (std::size_t k = 0; k < mem; ++k) {
    st.s_history.push_back(detail::read_vector(is, "s"));
    st.y_history.push_back(detail::read_vector(is, "y"));
  }
  std::size_t nw = 0;
  if (!(is >> tag >> nw) || tag != "warm") throw DataError("checkpoint: expected warm");
  for (std::size_t k = 0; k < nw; ++k) {
    int w = 0, h = 0;
    if (!(is >> tag >> w >> h) || tag != "image") throw DataError("checkpoint: expected image");
    st.warm.emplace_back(w, h, detail::read_vector(is, "values"));
  }
  return st;
}

// Loss-specific training with L-BFGS (two-loop recursion, Armijo
// backtracking). Each evaluation solves every lower-level problem and sums
// the implicit gradients in sample order.
class Trainer {
 public:
  using Logger = std::function<void(const std::string&)>;

  Trainer(std::vector<TrainingSample> samples, FoEModel init_model, TrainConfig cfg, Logger log = {})
      : samples_(std::move(samples)), init_(std::move(init_model)), cfg_(std::move(cfg)), log_(std::move(log)) {
    cfg_.validate();
    init_.validate();
    require(!samples_.empty(), "train: need at least one sample");
    require(init_.domain == domain_for(cfg_.objective), "train: initial model domain does not match the objective");
    for (const auto& s : samples_) {
      require_same_shape(s.clean, s.noisy, "train sample");
      require(s.clean.width() >= init_.filter_size() && s.clean.height() >= init_.filter_size(),
              "train: samples must be at least as large as the filters");
    }
  }

  struct Evaluation {
    double loss = 0.0;
    std::vector<double> gradient;
    std::vector<Image> solutions;
    std::size_t used = 0;
  };

  Evaluation evaluate(const std::vector<double>& theta, const std::vector<Image>& warm) {
    const FoEModel model = unpack_parameters(init_, theta);
    const std::size_t n = samples_.size();
    std::vector<std::optional<ParamGradient>> grads(n);
    std::vector<Image> sols(n);
    std::vector<double> losses(n, 0.0);
    std::vector<std::string> errors(n);
    parallel_for(n, cfg_.threads, [&](std::size_t s) {
      const bool has_warm = cfg_.warm_start && s < warm.size() && !warm[s].empty();
      try {
        LowerProblem problem(model, samples_[s], cfg_.objective, cfg_.data_lambda, cfg_.zero_offset_c);
        sols[s] = lower_solve(problem, cfg_.lower_solver, has_warm ? &warm[s] : nullptr);
        losses[s] = sample_loss(sols[s], samples_[s], cfg_.objective);
        grads[s] = param_gradients(sols[s], model, samples_[s], cfg_);
      } catch (const NumericalError& e) {
        errors[s] = e.what();
        if (sols[s].empty()) {
          // the solver itself failed: score the previous solution
          const auto& sample = samples_[s];
          sols[s] = has_warm                                       ? warm[s]
                    : cfg_.objective == Objective::original_domain ? sample.noisy
                                                                   : anscombe_forward(sample.noisy);
          losses[s] = sample_loss(sols[s], samples_[s], cfg_.objective);
        }
      }
    });
    // A skipped sample still counts in the loss, so losses of different
    // iterates stay comparable; it only drops out of the gradient.
    Evaluation ev;
    ev.gradient.assign(theta.size(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      ev.loss += losses[s];
      if (!grads[s]) {
        diagnostics_.push_back("sample " + std::to_string(s) + " skipped: " + errors[s]);
        log("sample " + std::to_string(s) + " skipped: " + errors[s]);
        continue;
      }
      ++ev.used;
      const auto g = pack_gradient(*grads[s]);
      for (std::size_t k = 0; k < g.size(); ++k) ev.gradient[k] += g[k];
    }
    if (ev.used == 0) throw NumericalError("train: every sample was skipped");
    ev.solutions = std::move(sols);
    return ev;
  }

  TrainState initial_state() {
    TrainState st;
    st.theta = pack_parameters(init_);
    auto ev = evaluate(st.theta, {});
    st.loss = ev.loss;
    st.gradient = std::move(ev.gradient);
    st.warm = std::move(ev.solutions);
    st.loss_history.push_back(st.loss);
    return st;
  }

  TrainResult run() {
    if (cfg_.max_outer_iters == 0) return finish_unchanged("max_outer_iters = 0");
    TrainState st = initial_state();
    log_iteration(st);
    return run_from(std::move(st));
  }

  TrainResult resume(TrainState st) { return run_from(std::move(st)); }

  // One L-BFGS iteration. Returns false (with a reason) when no step can be taken.
  bool step(TrainState& st, std::string& reason) {
    const std::size_t dim = st.theta.size();
    std::vector<double> d = lbfgs_direction(st);
    double gd = inner(st.gradient, d);
    if (!(gd < 0.0)) {
      st.s_history.clear();
      st.y_history.clear();
      d = lbfgs_direction(st);
      gd = inner(st.gradient, d);
      if (!(gd < 0.0)) {
        reason = "zero gradient";
        return false;
      }
    }
    double t = 1.0;
    std::vector<double> trial(dim);
    for (int ls = 0; ls < cfg_.max_line_search; ++ls, t *= 0.5) {
      for (std::size_t k = 0; k < dim; ++k) trial[k] = st.theta[k] + t * d[k];
      Evaluation ev;
      try {
        ev = evaluate(trial, st.warm);
      } catch (const NumericalError& e) {
        log(std::string("line search trial failed: ") + e.what());
        continue;
      }
      if (ev.loss <= st.loss + cfg_.armijo_c1 * t * gd) {
        std::vector<double> s(dim), y(dim);
        for (std::size_t k = 0; k < dim; ++k) {
          s[k] = trial[k] - st.theta[k];
          y[k] = ev.gradient[k] - st.gradient[k];
        }
        if (inner(s, y) > 1e-12 * std::sqrt(inner(s, s) * inner(y, y))) {
          st.s_history.push_back(std::move(s));
          st.y_history.push_back(std::move(y));
          if (st.s_history.size() > static_cast<std::size_t>(cfg_.lbfgs_memory)) {
            st.s_history.erase(st.s_history.begin());
            st.y_history.erase(st.y_history.begin());
          }
        }
        st.theta = trial;
        st.loss = ev.loss;
        st.gradient = std::move(ev.gradient);
        st.warm = std::move(ev.solutions);
        st.loss_history.push_back(st.loss);
        ++st.iteration;
        return true;
      }
    }
    reason = "line search failed to find a decreasing step";
    return false;
  }

  const std::vector<std::string>& diagnostics() const { return diagnostics_; }
  const TrainConfig& config() const { return cfg_; }
  const FoEModel& initial_model() const { return init_; }

 private:
  TrainResult run_from(TrainState st) {
    std::string reason = "max_outer_iters reached";
    while (st.iteration < cfg_.max_outer_iters) {
      const double prev = st.loss;
      std::string why;
      if (!step(st, why)) {
        reason = why;
        break;
      }
      log_iteration(st);
      if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() && st.iteration % cfg_.checkpoint_every == 0)
        write_checkpoint(cfg_.checkpoint_path, st);
      if (std::fabs(prev - st.loss) < cfg_.rel_loss_tol * std::max(std::fabs(prev), 1e-300)) {
        reason = "relative loss change below tolerance";
        break;
      }
    }
    TrainResult res;
    res.iterations = st.iteration;
    res.loss_history = st.loss_history;
    res.stop_reason = reason;
    res.diagnostics = diagnostics_;
    res.model = st.iteration == 0 ? init_ : unpack_parameters(init_, st.theta);
    last_state_ = std::move(st);
    return res;
  }

  TrainResult finish_unchanged(std::string reason) {
    TrainResult res;
    res.model = init_;
    res.stop_reason = std::move(reason);
    return res;
  }

  std::vector<double> lbfgs_direction(const TrainState& st) const {
    std::vector<double> q = st.gradient;
    const std::size_t m = st.s_history.size();
    if (m == 0) {
      double gmax = 0.0;
      for (double v : q) gmax = std::max(gmax, std::fabs(v));
      const double scale = gmax > 0.0 ? cfg_.initial_step / gmax : 0.0;
      for (double& v : q) v *= -scale;
      return q;
    }
    std::vector<double> alpha(m), rho(m);
    for (std::size_t k = m; k-- > 0;) {
      rho[k] = 1.0 / inner(st.y_history[k], st.s_history[k]);
      alpha[k] = rho[k] * inner(st.s_history[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[k] * st.y_history[k][j];
    }
    const double h0 = inner(st.s_history.back(), st.y_history.back()) / inner(st.y_history.back(), st.y_history.back());
    for (double& v : q) v *= h0;
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho[k] * inner(st.y_history[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alpha[k] - beta) * st.s_history[k][j];
    }
    for (double& v : q) v = -v;
    return q;
  }

  static double inner(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  void log_iteration(const TrainState& st) const {
    if (!log_) return;
    char buf[128];
    std::snprintf(buf, sizeof buf, "iter %d loss %.10g", st.iteration, st.loss);
    log_(buf);
  }

 public:
  const TrainState& last_state() const { return last_state_; }

 private:
  std::vector<TrainingSample> samples_;
  FoEModel init_;
  TrainConfig cfg_;
  Logger log_;
  std::vector<std::string> diagnostics_;
  TrainState last_state_;
};

inline TrainResult train(std::vector<TrainingSample> samples, const FoEModel& init_model, const TrainConfig& cfg,
                         Trainer::Logger log = {}) {
  Trainer trainer(std::move(samples), init_model, cfg, std::move(log));
  return trainer.run();
}

}  // namespace foepnr
