#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/image.hpp"

namespace foepnr {

struct SolverConfig {
  double gamma = 0.8;             // inertial weight, [0, 1)
  double lipschitz_init = 1.0;    // L_{-1}
  double backtrack_factor = 1.2;  // eta
  double lipschitz_relax = 1.05;  // L_n /= relax after an accepted step
  double step_scale = 1.99;       // tau_n = step_scale * (1 - gamma) / L_n
  int max_iters = 150;
  double rel_tol = 1e-6;          // stop when ||u+ - u|| / ||u|| < rel_tol
  int max_backtracks = 80;

  void validate() const {
    require(gamma >= 0.0 && gamma < 1.0, "solver: gamma must lie in [0, 1)");
    require(lipschitz_init > 0.0, "solver: initial Lipschitz estimate must be positive");
    require(backtrack_factor > 1.0, "solver: backtracking factor must exceed 1");
    require(lipschitz_relax >= 1.0, "solver: Lipschitz relaxation must be >= 1");
    require(step_scale > 0.0 && step_scale < 2.0, "solver: step scale must lie in (0, 2)");
    require(max_iters >= 0, "solver: max_iters must be non-negative");
    require(rel_tol >= 0.0, "solver: rel_tol must be non-negative");
  }

  double step(double lipschitz) const { return step_scale * (1.0 - gamma) / lipschitz; }
};

struct SolverTraceEntry {
  int iteration = 0;
  double smooth_energy = 0.0;     // F(u^{n+1})
  double nonsmooth_energy = 0.0;  // G(u^{n+1})
  double lipschitz = 0.0;         // L_n accepted for this step
  double step_norm = 0.0;         // ||u^{n+1} - u^n||
  double prev_smooth_energy = 0.0;
  double linear_term = 0.0;       // <grad F(u^n), u^{n+1} - u^n>
  int backtracks = 0;

  double total_energy() const { return smooth_energy + nonsmooth_energy; }

  // Slack of the sufficient-decrease condition; >= 0 for an accepted step.
  double descent_slack() const {
    return prev_smooth_energy + linear_term + 0.5 * lipschitz * step_norm * step_norm - smooth_energy;
  }
};

using SolverTrace = std::vector<SolverTraceEntry>;

struct SolverResult {
  Image solution;
  SolverTrace trace;
  bool converged = false;  // relative change met before max_iters, or stalled at rounding level
};

class SolverFailure : public NumericalError {
 public:
  SolverFailure(const std::string& what, SolverTrace trace) : NumericalError(what), trace_(std::move(trace)) {}
  const SolverTrace& trace() const { return trace_; }

 private:
  SolverTrace trace_;
};

inline void write_trace_csv(std::ostream& os, const SolverTrace& trace) {
  os << "iteration,F,G,L_n,step_norm\n";
  os.precision(17);
  for (const auto& e : trace)
    os << e.iteration << ',' << e.smooth_energy << ',' << e.nonsmooth_energy << ',' << e.lipschitz << ','
       << e.step_norm << '\n';
}

// argmin_u 1/2 ||u - u_tilde||^2 + t/2 ||u - v||^2
inline Image prox_quadratic(const Image& u_tilde, double t, const Image& v) {
  require(t >= 0.0, "prox_quadratic: t must be non-negative");
  require_same_shape(u_tilde, v, "prox_quadratic");
  Image out(u_tilde.width(), u_tilde.height());
  const double s = 1.0 / (1.0 + t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (u_tilde[i] + t * v[i]) * s;
  return out;
}

// argmin_{u > 0} 1/2 (u - u_tilde)^2 + t (u - obs log u), pointwise.
inline double prox_idiv_scalar(double u_tilde, double t, double obs) {
  const double d = u_tilde - t;
  const double disc = std::sqrt(d * d + 4.0 * t * obs);
  // the two forms are algebraically equal; pick the one without cancellation
  if (d >= 0.0) return 0.5 * (d + disc);
  return obs > 0.0 ? 2.0 * t * obs / (disc - d) : 0.0;
}

inline Image prox_idiv(const Image& u_tilde, double t, const Image& obs) {
  require(t >= 0.0, "prox_idiv: t must be non-negative");
  require_same_shape(u_tilde, obs, "prox_idiv");
  Image out(u_tilde.width(), u_tilde.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(obs[i] >= 0.0, "prox_idiv: observation must be non-negative");
    out[i] = prox_idiv_scalar(u_tilde[i], t, obs[i]);
  }
  return out;
}

// <u - obs log u, 1> with 0 log 0 = 0; +inf if some u <= 0 meets obs > 0.
inline double idiv_energy(const Image& u, const Image& obs) {
  require_same_shape(u, obs, "idiv_energy");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (obs[i] == 0.0) {
      s += u[i];
    } else if (u[i] <= 0.0) {
      return INFINITY;
    } else {
      s += u[i] - obs[i] * std::log(u[i]);
    }
  }
  return s;
}

inline double quadratic_energy(const Image& u, const Image& v) {
  require_same_shape(u, v, "quadratic_energy");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return 0.5 * s;
}

// Inertial forward-backward iteration
//   u+ = prox_{tau G}(u - tau grad F(u) + gamma (u - u_prev))
// with backtracking on the Lipschitz estimate L_n until
//   F(u+) <= F(u) + <grad F(u), u+ - u> + L_n/2 ||u+ - u||^2.
// prox_G(u_tilde, tau) must return argmin 1/2||x - u_tilde||^2 + tau G(x).
template <typename GradF, typename EnergyF, typename ProxG, typename EnergyG>
SolverResult ipiano_minimize(GradF&& grad_F, EnergyF&& energy_F, ProxG&& prox_G, EnergyG&& energy_G, const Image& u0,
                             const SolverConfig& cfg) {
  cfg.validate();
  SolverResult result;
  Image u = u0;
  Image u_prev = u0;
  double lipschitz = cfg.lipschitz_init;
  double f_u = energy_F(u);
  if (!std::isfinite(f_u)) throw SolverFailure("ipiano: non-finite smooth energy at the initial point", {});

  Image u_tilde(u.width(), u.height());
  for (int n = 0; n < cfg.max_iters; ++n) {
    const Image g = grad_F(u);
    int backtracks = 0;
    Image u_next;
    double f_next = 0.0;
    double lin = 0.0;
    double step_sq = 0.0;
    bool stalled = false;
    for (;;) {
      const double tau = cfg.step(lipschitz);
      for (std::size_t i = 0; i < u.size(); ++i) u_tilde[i] = u[i] - tau * g[i] + cfg.gamma * (u[i] - u_prev[i]);
      u_next = prox_G(u_tilde, tau);
      lin = 0.0;
      step_sq = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u_next[i] - u[i];
        lin += g[i] * d;
        step_sq += d * d;
      }
      f_next = energy_F(u_next);
      const double bound = f_u + lin + 0.5 * lipschitz * step_sq;
      if (std::isfinite(f_next) && f_next <= bound) break;
      if (++backtracks > cfg.max_backtracks || !std::isfinite(lipschitz)) {
        // Near a stationary point both sides agree to rounding level and no
        // step passes the test: stop at u without taking a step.
        if (std::isfinite(f_next) && f_next - bound <= 1e-12 * (1.0 + std::fabs(f_u))) {
          stalled = true;
          break;
        }
        throw SolverFailure("ipiano: backtracking failed at iteration " + std::to_string(n) +
                                (std::isfinite(f_next) ? "" : " (non-finite energy)"),
                            std::move(result.trace));
      }
      lipschitz *= cfg.backtrack_factor;
    }
    if (stalled) {
      result.converged = true;
      break;
    }
    const double g_next = energy_G(u_next);
    if (std::isnan(g_next)) throw SolverFailure("ipiano: non-finite data energy", std::move(result.trace));

    SolverTraceEntry e;
    e.iteration = n;
    e.smooth_energy = f_next;
    e.nonsmooth_energy = g_next;
    e.lipschitz = lipschitz;
    e.step_norm = std::sqrt(step_sq);
    e.prev_smooth_energy = f_u;
    e.linear_term = lin;
    e.backtracks = backtracks;
    result.trace.push_back(e);

    const double u_norm = norm(u);
    u_prev = std::move(u);
    u = std::move(u_next);
    f_u = f_next;
    lipschitz /= cfg.lipschitz_relax;
    if (e.step_norm <= cfg.rel_tol * u_norm) {
      result.converged = true;
      break;
    }
  }
  result.solution = std::move(u);
  return result;
}

}  // namespace foepnr
