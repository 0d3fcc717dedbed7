// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "hygropc/kunzel.hpp"

using namespace hygropc::kunzel;
using Catch::Approx;

namespace {

MaterialParams means() { return {100.0, 50.0, 0.3, 10.0, 12.0, 0.6, 900.0, 1650.0}; }

// parameters within +-4 prior standard deviations of the masonry means,
// drawn in log space like the random-field model does
MaterialParams random_valid_params(std::mt19937_64& rng) {
  auto draw = [&](double mu_q, double sigma_q) {
    const double sg2 = std::log1p((sigma_q / mu_q) * (sigma_q / mu_q));
    const double sg = std::sqrt(sg2);
    const double mg = std::log(mu_q) - 0.5 * sg2;
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    return std::exp(mg + sg * u(rng));
  };
  return {draw(100, 20), draw(50, 10), draw(0.3, 0.1), draw(10, 2),
          draw(12, 5),   draw(0.6, 0.2), draw(900, 100), draw(1650, 50)};
}

}  // namespace

TEST_CASE("approximation factor", "[kunzel]") {
  CHECK(approximation_factor(means()) == Approx(8.0 / 7.0).epsilon(1e-14));

  // b > 1 exactly when dwf exceeds w80/4 (denominator turns negative);
  // at the masonry means this always holds
  MaterialParams p = means();
  p.dwf = 10.0;  // below w80/4 = 12.5
  CHECK(approximation_factor(p) < 1.0);
  p.dwf = 13.0;
  CHECK(approximation_factor(p) > 1.0);

  // degenerate denominator w80 - 0.8 wf = 0
  p.dwf = 12.5;
  CHECK_THROWS_AS(approximation_factor(p), CoefficientError);
}

TEST_CASE("water content identities", "[kunzel]") {
  std::mt19937_64 rng(20240811);
  for (int i = 0; i < 1000; ++i) {
    const MaterialParams p = random_valid_params(rng);
    CHECK(water_content(p, 0.8) == Approx(p.w80).epsilon(1e-12));
    CHECK(water_content(p, 1.0) == Approx(p.wf()).epsilon(1e-12));
  }
}

TEST_CASE("degenerate sorption curve is rejected", "[kunzel]") {
  // dwf -> 0 collapses b to zero and the water capacity with it
  MaterialParams p = means();
  p.dwf = 0.0;
  CHECK(approximation_factor(p) == Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(water_capacity(p, 0.5), CoefficientError);
}

TEST_CASE("thermal conductivity", "[kunzel]") {
  const MaterialParams p = means();
  CHECK(thermal_conductivity(p, 0.0) == Approx(p.lambda0).epsilon(1e-14));
  CHECK(thermal_conductivity(p, 0.5) == Approx(0.330303030303030303).epsilon(1e-12));

  // monotone increasing in phi on [0, 0.99] (finite-difference sign check)
  double prev = thermal_conductivity(p, 0.0);
  for (int k = 1; k <= 99; ++k) {
    const double cur = thermal_conductivity(p, 0.01 * k);
    CHECK(cur > prev);
    prev = cur;
  }

  // singularity guard at phi -> b
  const double b = approximation_factor(p);
  CHECK_THROWS_AS(thermal_conductivity(p, b - 1e-10), CoefficientError);
}

TEST_CASE("evaporation enthalpy", "[kunzel]") {
  CHECK(evaporation_enthalpy(0.0) == Approx(2.5008e6).epsilon(1e-14));
  CHECK(evaporation_enthalpy(20.0) == Approx(2452786.9363979041).epsilon(1e-12));

  for (double t = 0.0; t < 50.0; t += 1.0)
    CHECK(evaporation_enthalpy(t + 1.0) < evaporation_enthalpy(t));

  CHECK_THROWS_AS(evaporation_enthalpy(-280.0), CoefficientError);
}

TEST_CASE("vapour permeability", "[kunzel]") {
  CHECK(vapour_permeability(0.0, 1.0) == Approx(1.8294277284021565e-10).epsilon(1e-12));
  CHECK(vapour_permeability(20.0, 12.0) == Approx(1.6143282737311016e-11).epsilon(1e-12));
  CHECK(vapour_permeability(20.0, 24.0) ==
        Approx(vapour_permeability(20.0, 12.0) / 2.0).epsilon(1e-15));
  CHECK_THROWS_AS(vapour_permeability(20.0, 0.0), CoefficientError);
  CHECK_THROWS_AS(vapour_permeability(20.0, -3.0), CoefficientError);
}

TEST_CASE("saturation pressure", "[kunzel]") {
  CHECK(saturation_pressure(0.0) == 611.0);  // exponent vanishes exactly
  CHECK(saturation_pressure(20.0) == Approx(2342.6228529152289).epsilon(1e-12));

  for (double t = -20.0; t < 50.0; t += 0.5)
    CHECK(saturation_pressure(t + 0.5) > saturation_pressure(t));
}

TEST_CASE("liquid conduction", "[kunzel]") {
  const MaterialParams p = means();
  // phi = 0: the exponential term is exactly one
  const double b = approximation_factor(p);
  const double expect0 = 3.8 * (p.a * p.a / p.wf()) * b * (b - 1.0) / (b * b);
  CHECK(liquid_conduction(p, 0.0) == Approx(expect0).epsilon(1e-14));
  CHECK(liquid_conduction(p, 0.5) == Approx(0.0078024369440243407).epsilon(1e-12));

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> uphi(0.05, 0.95);
  for (int i = 0; i < 200; ++i) {
    MaterialParams q = random_valid_params(rng);
    if (approximation_factor(q) <= 1.0) continue;
    CHECK(liquid_conduction(q, uphi(rng)) > 0.0);
  }
}

TEST_CASE("enthalpy capacity", "[kunzel]") {
  MaterialParams p = means();
  CHECK(enthalpy_capacity(p) == Approx(1.485e6).epsilon(1e-15));
  p.rhos *= 3.0;
  CHECK(enthalpy_capacity(p) == Approx(3.0 * 1.485e6).epsilon(1e-15));
  CHECK(enthalpy_capacity(means()) * 0.0 == 0.0);  // H is linear through the origin
}

TEST_CASE("water capacity matches finite differences", "[kunzel]") {
  const MaterialParams p = means();
  CHECK(water_capacity(p, 0.5) == Approx(1600.0 / 27.0).epsilon(1e-13));

  const double h = 1e-6;
  const double fd = (water_content(p, 0.5 + h) - water_content(p, 0.5 - h)) / (2.0 * h);
  CHECK(water_capacity(p, 0.5) == Approx(fd).epsilon(1e-6));

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uphi(0.05, 0.95);
  for (int i = 0; i < 200; ++i) {
    const MaterialParams q = random_valid_params(rng);
    CHECK(water_capacity(q, uphi(rng)) > 0.0);
  }
}

TEST_CASE("analytic slopes match finite differences", "[kunzel]") {
  const MaterialParams p = means();
  const double h = 1e-6;
  auto fd = [&](auto f, double x) { return (f(x + h) - f(x - h)) / (2.0 * h); };

  CHECK(thermal_conductivity_slope(p, 0.5) ==
        Approx(fd([&](double x) { return thermal_conductivity(p, x); }, 0.5)).epsilon(1e-6));
  CHECK(evaporation_enthalpy_slope(20.0) ==
        Approx(fd([](double x) { return evaporation_enthalpy(x); }, 20.0)).epsilon(1e-6));
  CHECK(vapour_permeability_slope(20.0, 12.0) ==
        Approx(fd([](double x) { return vapour_permeability(x, 12.0); }, 20.0)).epsilon(1e-6));
  CHECK(saturation_pressure_slope(20.0) ==
        Approx(fd([](double x) { return saturation_pressure(x); }, 20.0)).epsilon(1e-7));
  CHECK(saturation_pressure_curvature(20.0) ==
        Approx(fd([](double x) { return saturation_pressure_slope(x); }, 20.0)).epsilon(1e-6));
  CHECK(liquid_conduction_slope(p, 0.5) ==
        Approx(fd([&](double x) { return liquid_conduction(p, x); }, 0.5)).epsilon(1e-6));
  CHECK(water_capacity_slope(p, 0.5) ==
        Approx(fd([&](double x) { return water_capacity(p, x); }, 0.5)).epsilon(1e-6));
}

TEST_CASE("all coefficients finite and positive over the working range", "[kunzel]") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> utheta(0.0, 40.0), uphi(0.05, 0.95);
  for (int i = 0; i < 500; ++i) {
    const MaterialParams p = random_valid_params(rng);
    const double theta = utheta(rng), phi = uphi(rng);
    const CoefficientSet c = evaluate(p, theta, phi);
    for (double v : {c.lambda, c.hv, c.delta_p, c.psat, c.dpsat, c.dphi_liq, c.dh_cap, c.dw_cap}) {
      CHECK(std::isfinite(v));
      CHECK(v > 0.0);
    }
  }
}

TEST_CASE("parameter validation", "[kunzel]") {
  MaterialParams p = means();
  CHECK_NOTHROW(p.validate());
  p.mu = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = means();
  p.lambda0 = -0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("phi clamp", "[kunzel]") {
  CHECK(clamp_phi(0.5) == 0.5);
  CHECK(clamp_phi(-2.0) == kMinPhi);
  CHECK(clamp_phi(1.7) == kMaxPhi);
}
