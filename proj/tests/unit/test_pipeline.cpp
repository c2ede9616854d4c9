#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "foepnr/noise.hpp"
#include "foepnr/pipeline.hpp"
#include "test_support.hpp"

using namespace foepnr;

namespace {

Image smooth_scene(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = 1.0 + std::sin(x / 5.0) * std::cos(y / 7.0) + (x > w / 2 ? 1.0 : 0.0);
  return img;
}

FoEModel small_model(Domain d) {
  std::mt19937_64 rng(42);
  FoEModel m = foepnr::testing::random_model(4, 3, d, rng, 0.3);
  for (auto& w : m.weights) w *= 0.5;
  return m;
}

DenoiseRequest request(const Image& noisy, double peak, Variant v) {
  DenoiseRequest r;
  r.noisy = noisy;
  r.peak = peak;
  r.variant = v;
  return r;
}

}  // namespace

TEST(Branch, ThresholdAtFive) {
  EXPECT_EQ(branch_for_peak(5.0), DataTerm::quadratic);
  EXPECT_EQ(branch_for_peak(4.99), DataTerm::idiv);
  EXPECT_EQ(branch_for_peak(40.0), DataTerm::quadratic);
  EXPECT_EQ(branch_for_peak(0.1), DataTerm::idiv);
  EXPECT_EQ(default_iteration_budget(4.99), 150);
  EXPECT_EQ(default_iteration_budget(5.0), 60);
}

TEST(Branch, TransformPipelineUsesPeakRule) {
  const FoEModel m = small_model(Domain::anscombe);
  const Image noisy = sample_poisson(scale_to_peak(smooth_scene(24, 24), 5.0), 1);
  EXPECT_EQ(denoise(m, request(noisy, 5.0, Variant::transform)).data_term, DataTerm::quadratic);
  EXPECT_EQ(denoise(m, request(noisy, 4.99, Variant::transform)).data_term, DataTerm::idiv);
}

TEST(Binned, NineTimesRuleSelectsBranch) {
  const FoEModel m = small_model(Domain::anscombe);
  const Image clean = smooth_scene(36, 36);
  const auto r05 = denoise(m, request(sample_poisson(scale_to_peak(clean, 0.5), 2), 0.5, Variant::transform_binned));
  EXPECT_DOUBLE_EQ(r05.peak, 4.5);
  EXPECT_EQ(r05.data_term, DataTerm::idiv);
  const auto r1 = denoise(m, request(sample_poisson(scale_to_peak(clean, 1.0), 3), 1.0, Variant::transform_binned));
  EXPECT_DOUBLE_EQ(r1.peak, 9.0);
  EXPECT_EQ(r1.data_term, DataTerm::quadratic);
  EXPECT_EQ(r1.estimate.width(), 36);
  EXPECT_EQ(r1.estimate.height(), 36);
}

TEST(Binned, FactorOneIsTransform) {
  const FoEModel m = small_model(Domain::anscombe);
  const Image noisy = sample_poisson(scale_to_peak(smooth_scene(20, 20), 3.0), 4);
  DenoiseRequest rb = request(noisy, 3.0, Variant::transform_binned);
  rb.bin_factor = 1;
  const auto a = denoise(m, rb);
  const auto b = denoise(m, request(noisy, 3.0, Variant::transform));
  EXPECT_EQ(a.estimate, b.estimate);
}

TEST(Transform, HugeLambdaReturnsInverseOfData) {
  const FoEModel m = small_model(Domain::anscombe);
  const Image noisy = sample_poisson(scale_to_peak(smooth_scene(20, 20), 40.0), 5);
  DenoiseRequest r = request(noisy, 40.0, Variant::transform);
  r.lambda = 1e12;
  const auto res = denoise(m, r);
  const Image expected = anscombe_inverse_exact_unbiased(anscombe_forward(noisy));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(res.estimate[i], expected[i], 1e-6);
}

TEST(Transform, RejectsOriginalDomainModel) {
  const FoEModel m = small_model(Domain::original);
  EXPECT_THROW(denoise(m, request(Image(10, 10, 1.0), 40.0, Variant::transform)), InvalidInput);
}

TEST(Direct, RejectsAnscombeModelAndBadCounts) {
  EXPECT_THROW(denoise(small_model(Domain::anscombe), request(Image(10, 10, 1.0), 40.0, Variant::direct)), InvalidInput);
  const FoEModel m = small_model(Domain::original);
  EXPECT_THROW(denoise(m, request(Image(10, 10, 1.5), 40.0, Variant::direct)), InvalidInput);
  EXPECT_THROW(denoise(m, request(Image(10, 10, -1.0), 40.0, Variant::direct)), InvalidInput);
}

TEST(Direct, HugeLambdaReturnsData) {
  const FoEModel m = small_model(Domain::original);
  const Image y(12, 12, 6.0);
  DenoiseRequest r = request(y, 6.0, Variant::direct);
  r.lambda = 1e9;
  const auto res = denoise(m, r);
  for (double v : res.estimate) EXPECT_NEAR(v, 6.0, 1e-6);
}

// Zero counts with c = 0: prox_idiv with obs = 0 maps 0 to max(0 - t, 0) = 0
// and the prior gradient vanishes on flat zero regions, so they stay at 0.
TEST(Direct, ZeroRegionStaysZeroWithoutOffset) {
  const FoEModel m = small_model(Domain::original);
  Image y(24, 24, 0.0);
  for (int r = 0; r < 24; ++r)
    for (int c = 16; c < 24; ++c) y.at(r, c) = 5.0 + (r + c) % 3;
  DenoiseRequest req = request(y, 7.0, Variant::direct);
  req.zero_offset_c = 0.0;
  const auto res = denoise(m, req);
  for (int r = 0; r < 24; ++r)
    for (int c = 0; c < 10; ++c) EXPECT_EQ(res.estimate.at(r, c), 0.0);
}

TEST(Direct, EnergyDoesNotIncrease) {
  const FoEModel m = small_model(Domain::original);
  const Image y = sample_poisson(scale_to_peak(smooth_scene(32, 32), 40.0), 6);
  DenoiseRequest req = request(y, 40.0, Variant::direct);
  req.lambda = 1.0;
  const auto res = denoise(m, req);
  const FoEPrior prior(m);
  Image obs = y;
  for (double& v : obs)
    if (v == 0.0) v = req.zero_offset_c;
  const double e0 = prior.energy(obs) + idiv_energy(obs, obs);
  const double e1 = prior.energy(res.solution) + idiv_energy(res.solution, obs);
  EXPECT_LE(e1, e0);
}

TEST(Pipeline, OutputsNonNegativeForEveryVariant) {
  const Image clean = smooth_scene(30, 30);
  for (double peak : {0.2, 2.0, 40.0}) {
    const Image y = sample_poisson(scale_to_peak(clean, peak), 7);
    for (Variant v : {Variant::transform, Variant::transform_binned}) {
      for (double x : denoise(small_model(Domain::anscombe), request(y, peak, v)).estimate) EXPECT_GE(x, 0.0);
    }
    for (double x : denoise(small_model(Domain::original), request(y, peak, Variant::direct)).estimate) EXPECT_GE(x, 0.0);
  }
}

TEST(Pipeline, PeakEstimatedWhenAbsent) {
  const Image y = sample_poisson(scale_to_peak(smooth_scene(30, 30), 20.0), 8);
  DenoiseRequest r = request(y, 1.0, Variant::transform);
  r.peak.reset();
  const auto res = denoise(small_model(Domain::anscombe), r);
  EXPECT_EQ(res.peak, estimate_peak(y));
}

TEST(LambdaTable, LookupInterpolatesLogLinearly) {
  LambdaTable t;
  t.set("quadratic", 10.0, 1.0);
  t.set("quadratic", 40.0, 4.0);
  EXPECT_DOUBLE_EQ(t.lookup("quadratic", 10.0), 1.0);
  EXPECT_NEAR(t.lookup("quadratic", 20.0), 2.0, 1e-12);  // log-linear: lambda ~ peak here
  EXPECT_DOUBLE_EQ(t.lookup("quadratic", 5.0), 1.0);      // nearest entry outside the range
  EXPECT_DOUBLE_EQ(t.lookup("quadratic", 400.0), 4.0);
  EXPECT_DOUBLE_EQ(t.lookup("idiv", 1.0), 1.0);           // missing key
}

TEST(LambdaTable, TextRoundTrip) {
  LambdaTable t;
  t.provenance = "unit test\nsecond line";
  t.set("idiv", 0.1, 0.123456789012345678);
  t.set("idiv", 2.0, 3.5);
  t.set("quadratic", 40.0, 1.0 / 3.0);
  std::stringstream ss;
  t.write(ss);
  const LambdaTable back = LambdaTable::read(ss);
  EXPECT_EQ(back.entries(), t.entries());
  EXPECT_EQ(back.provenance, "unit test\nsecond line\n");
}

TEST(LambdaTable, ExplicitLambdaOverridesTable) {
  LambdaTable t;
  t.set("quadratic", 40.0, 8.0);
  const Image y = sample_poisson(scale_to_peak(smooth_scene(20, 20), 40.0), 9);
  EXPECT_EQ(denoise(small_model(Domain::anscombe), request(y, 40.0, Variant::transform), t).lambda, 8.0);
  DenoiseRequest r = request(y, 40.0, Variant::transform);
  r.lambda = 0.25;
  EXPECT_EQ(denoise(small_model(Domain::anscombe), r, t).lambda, 0.25);
}
