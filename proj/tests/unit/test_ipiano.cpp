#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "foepnr/foe.hpp"
#include "foepnr/ipiano.hpp"
#include "test_support.hpp"

using namespace foepnr;
using foepnr::testing::random_image;

namespace {

// Golden-section minimisation of 1/2 (u - ut)^2 + t (u - obs log u) on a
// bracket containing the minimiser.
double golden_idiv(double ut, double t, double obs) {
  auto f = [&](double u) { return 0.5 * (u - ut) * (u - ut) + t * (u - (obs > 0 ? obs * std::log(u) : 0.0)); };
  double a = 1e-300, b = std::max({std::fabs(ut), obs, t, 1.0}) * 4.0;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < 400 && (b - a) > 1e-15 * std::max(1.0, std::fabs(b)); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// The scalar objective is strictly convex on u > 0, so its minimiser is the
// sign change of the derivative u - ut + t - t obs / u; bisection keeps full
// double precision where a function-value search cannot.
double bisect_idiv(double ut, double t, double obs) {
  if (obs == 0.0) return std::max(ut - t, 0.0);
  auto df = [&](double u) { return u - ut + t - t * obs / u; };
  double lo = 1e-300, hi = std::max({std::fabs(ut), obs, t, 1.0}) * 4.0;
  for (int i = 0; i < 2000 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (df(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(ProxQuadratic, ZeroStepIsIdentity) {
  std::mt19937_64 rng(1);
  const Image ut = random_image(6, 5, rng), v = random_image(6, 5, rng);
  EXPECT_EQ(prox_quadratic(ut, 0.0, v), ut);
  EXPECT_THROW(prox_quadratic(ut, -1.0, v), InvalidInput);
}

TEST(ProxQuadratic, LargeStepPinsToData) {
  std::mt19937_64 rng(2);
  const Image ut = random_image(6, 5, rng), v = random_image(6, 5, rng);
  const Image out = prox_quadratic(ut, 1e6, v);
  double dev = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    dev = std::max(dev, std::fabs(out[i] - v[i]));
    spread = std::max(spread, std::fabs(ut[i] - v[i]));
  }
  EXPECT_LT(dev, 1e-4 * spread);
}

TEST(ProxQuadratic, OptimalityCondition) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> tdist(0.0, 10.0);
  for (int k = 0; k < 100; ++k) {
    const Image ut = random_image(4, 4, rng, -5, 5), v = random_image(4, 4, rng, -5, 5);
    const double t = tdist(rng);
    const Image u = prox_quadratic(ut, t, v);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR((u[i] - ut[i]) + t * (u[i] - v[i]), 0.0, 1e-12);
  }
}

TEST(ProxIdiv, FixedPointWhenInputEqualsObservation) {
  for (double o : {0.0, 0.3, 1.0, 7.0, 250.0})
    for (double t : {0.0, 0.1, 1.0, 30.0}) EXPECT_NEAR(prox_idiv_scalar(o, t, o), o, 1e-12 * (1 + o)) << o << ' ' << t;
}

TEST(ProxIdiv, ZeroStepIsIdentityForPositiveInput) {
  std::mt19937_64 rng(4);
  const Image ut = random_image(5, 5, rng, 0.1, 9.0), obs = random_image(5, 5, rng, 0.0, 9.0);
  const Image out = prox_idiv(ut, 0.0, obs);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ut[i], 1e-15);
}

TEST(ProxIdiv, MatchesGoldenSectionOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-10.0, 20.0), td(0.0, 5.0), od(0.0, 30.0);
  for (int k = 0; k < 1000; ++k) {
    const double ut = ud(rng), t = td(rng), obs = k % 10 == 0 ? 0.0 : od(rng);
    const double u = prox_idiv_scalar(ut, t, obs);
    EXPECT_NEAR(u, bisect_idiv(ut, t, obs), 1e-8) << ut << ' ' << t << ' ' << obs;
    EXPECT_NEAR(u, golden_idiv(ut, t, obs), 1e-6 * (1 + u)) << ut << ' ' << t << ' ' << obs;
  }
}

TEST(ProxIdiv, PositiveWhereObservationPositive) {
  std::mt19937_64 rng(6);
  const Image ut = random_image(20, 20, rng, -50.0, 5.0);
  Image obs = random_image(20, 20, rng, 0.0, 3.0);
  obs[0] = 0.0;
  const Image out = prox_idiv(ut, 2.0, obs);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_GE(out[i], 0.0);
    if (obs[i] > 0.0) {
      EXPECT_GT(out[i], 0.0);
    }
  }
  EXPECT_THROW(prox_idiv(ut, -0.1, obs), InvalidInput);
}

TEST(Ipiano, DataTermOnlyConvergesImmediately) {
  std::mt19937_64 rng(7);
  const Image v = random_image(8, 8, rng, 0.0, 5.0);
  const Image u0(8, 8, 0.0);
  SolverConfig cfg;
  cfg.lipschitz_init = 1e-12;  // F = 0 has Lipschitz constant 0
  const auto res = ipiano_minimize([](const Image& u) { return Image(u.width(), u.height()); },
                                   [](const Image&) { return 0.0; },
                                   [&](const Image& ut, double tau) { return prox_quadratic(ut, tau, v); },
                                   [&](const Image& u) { return quadratic_energy(u, v); }, u0, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.trace.size(), 3u);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(res.solution[i], v[i], 1e-9);
}

TEST(Ipiano, OneDimensionalQuadratic) {
  const double a = 3.0;
  SolverConfig cfg;
  cfg.gamma = 0.5;
  cfg.rel_tol = 0.0;
  cfg.max_iters = 100;
  const auto res = ipiano_minimize(
      [&](const Image& u) { return Image(1, 1, u[0] - a); }, [&](const Image& u) { return 0.5 * (u[0] - a) * (u[0] - a); },
      [](const Image& ut, double) { return ut; }, [](const Image&) { return 0.0; }, Image(1, 1, 0.0), cfg);
  EXPECT_NEAR(res.solution[0], a, 1e-8);
}

TEST(Ipiano, ReducesToGradientDescentWithoutInertia) {
  std::mt19937_64 rng(8);
  const FoEModel m = foepnr::testing::random_model(3, 3, Domain::anscombe, rng, 0.5);
  const FoEPrior prior(m);
  const Image u0 = random_image(10, 10, rng, 0.0, 3.0);
  SolverConfig cfg;
  cfg.gamma = 0.0;
  cfg.lipschitz_init = prior.lipschitz_bound();
  cfg.lipschitz_relax = 1.0;
  cfg.max_iters = 5;
  cfg.rel_tol = 0.0;
  const auto res = ipiano_minimize([&](const Image& u) { return prior.gradient(u); },
                                   [&](const Image& u) { return prior.energy(u); },
                                   [](const Image& ut, double) { return ut; }, [](const Image&) { return 0.0; }, u0, cfg);
  Image u = u0;
  const double tau = cfg.step(cfg.lipschitz_init);
  for (int n = 0; n < 5; ++n) axpy(-tau, prior.gradient(u), u);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(res.solution[i], u[i], 1e-12);
}

TEST(Ipiano, TraceRespectsDescentInequalityAndBudget) {
  std::mt19937_64 rng(9);
  const FoEModel m = foepnr::testing::random_model(4, 5, Domain::anscombe, rng, 0.3);
  const FoEPrior prior(m);
  const Image v = random_image(20, 20, rng, 2.0, 12.0);
  SolverConfig cfg;
  cfg.max_iters = 40;
  const auto res = ipiano_minimize([&](const Image& u) { return prior.gradient(u); },
                                   [&](const Image& u) { return prior.energy(u); },
                                   [&](const Image& ut, double tau) { return prox_quadratic(ut, tau, v); },
                                   [&](const Image& u) { return quadratic_energy(u, v); }, v, cfg);
  EXPECT_LE(res.trace.size(), 40u);
  for (const auto& e : res.trace) EXPECT_GE(e.descent_slack(), -1e-9 * (1 + std::fabs(e.prev_smooth_energy)));
  EXPECT_LE(res.trace.back().total_energy(), prior.energy(v));
}

TEST(Ipiano, RejectsInvalidConfig) {
  SolverConfig cfg;
  cfg.gamma = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.backtrack_factor = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
}

TEST(Ipiano, NonFiniteEnergyAborts) {
  SolverConfig cfg;
  EXPECT_THROW(ipiano_minimize([](const Image& u) { return u; }, [](const Image&) { return NAN; },
                               [](const Image& ut, double) { return ut; }, [](const Image&) { return 0.0; },
                               Image(2, 2, 1.0), cfg),
               SolverFailure);
}

// Every move raises F by `bump`: a rounding-sized bump stops the solver at
// u0 without a step, a large one is a genuine failure.
TEST(Ipiano, StallAtRoundingLevelStopsWithoutStepping) {
  const double a = 2.0, start = a + 1e-12;
  auto run = [&](double bump) {
    SolverConfig cfg;
    cfg.max_backtracks = 10;
    return ipiano_minimize([&](const Image& u) { return Image(1, 1, u[0] - a); },
                           [&](const Image& u) { return 0.5 * (u[0] - a) * (u[0] - a) + (u[0] != start ? bump : 0.0); },
                           [](const Image& ut, double) { return ut; }, [](const Image&) { return 0.0; },
                           Image(1, 1, start), cfg);
  };
  const auto res = run(1e-14);
  EXPECT_TRUE(res.converged);
  EXPECT_TRUE(res.trace.empty());
  EXPECT_EQ(res.solution[0], start);
  EXPECT_THROW(run(1.0), SolverFailure);
}

TEST(Ipiano, TraceCsvHeader) {
  std::ostringstream os;
  write_trace_csv(os, {SolverTraceEntry{}});
  EXPECT_EQ(os.str().substr(0, 29), "iteration,F,G,L_n,step_norm\n0");
}
