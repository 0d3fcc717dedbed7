// SPDX-License-Identifier: Apache-2.0
//
// Constitutive coefficients of Kunzel's coupled heat and moisture
// transport model. Pure functions of the material parameters and the
// local state (theta [degC], phi [-]); shared by the deterministic FE
// assembly and the stochastic Galerkin assembly.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace hygropc::kunzel {

/// Thrown when a coefficient is evaluated inside one of its guarded
/// singularities (phi -> b, degenerate sorption denominator, ...).
class CoefficientError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Guard tolerances. Proposals far out in the prior tail must fail loudly
// instead of producing NaNs inside a Newton loop.
inline constexpr double kSingularityTol = 1e-9;   // |b - phi|, |w_f - 1|
inline constexpr double kDenominatorTol = 1e-12;  // |w80 - 0.8 w_f|
inline constexpr double kZeroKelvin = -273.15;

// Clamp range applied to intermediate humidities before coefficient
// evaluation inside nonlinear iterations.
inline constexpr double kMinPhi = 1e-4;
inline constexpr double kMaxPhi = 1.0 - 1e-4;

/// The eight identified material parameters (lognormal priors in the
/// heterogeneous setting). Free water saturation is parameterised as
/// w_f = w80 + dwf so that w_f > w80 holds by construction.
struct MaterialParams {
  double dwf;      // water content increment [kg m^-3]
  double w80;      // water content at phi = 0.8 [kg m^-3]
  double lambda0;  // dry thermal conductivity [W m^-1 K^-1]
  double btcs;     // thermal conductivity supplement [-]
  double mu;       // vapour diffusion resistance factor [-]
  double a;        // water absorption coefficient [kg m^-2 s^-0.5]
  double cs;       // specific heat capacity [J kg^-1 K^-1]
  double rhos;     // bulk density [kg m^-3]

  double wf() const { return w80 + dwf; }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("MaterialParams: ") + name +
                                    " must be strictly positive and finite");
    };
    positive(dwf, "dwf");
    positive(w80, "w80");
    positive(lambda0, "lambda0");
    positive(btcs, "btcs");
    positive(mu, "mu");
    positive(a, "a");
    positive(cs, "cs");
    positive(rhos, "rhos");
  }
};

/// One evaluation point of the coupled state.
struct StatePoint {
  double theta;  // temperature [degC]
  double phi;    // relative humidity [-]
};

inline double clamp_phi(double phi) {
  return phi < kMinPhi ? kMinPhi : (phi > kMaxPhi ? kMaxPhi : phi);
}

/// Sorption-isotherm approximation factor b = 0.8 (w80 - w_f) / (w80 - 0.8 w_f).
inline double approximation_factor(const MaterialParams& p) {
  const double wf = p.wf();
  const double den = p.w80 - 0.8 * wf;
  if (std::abs(den) < kDenominatorTol)
    throw CoefficientError("approximation factor: degenerate denominator w80 - 0.8 w_f");
  return 0.8 * (p.w80 - wf) / den;
}

inline void check_phi_singularity(double b, double phi) {
  if (std::abs(b - phi) < kSingularityTol)
    throw CoefficientError("coefficient singularity: phi too close to approximation factor b");
}

/// lambda(phi) = lambda0 (1 + btcs w_f (b-1) phi / (rhos (b - phi))).
inline double thermal_conductivity(const MaterialParams& p, double phi) {
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  return p.lambda0 * (1.0 + p.btcs * p.wf() * (b - 1.0) * phi / (p.rhos * (b - phi)));
}

/// h_v(theta) = 2.5008e6 (273.15/(theta+273.15))^(0.267 + 3.67e-4 theta).
inline double evaporation_enthalpy(double theta) {
  if (!(theta > kZeroKelvin))
    throw CoefficientError("evaporation enthalpy: temperature at or below absolute zero");
  return 2.5008e6 * std::pow(273.15 / (theta + 273.15), 0.267 + 3.67e-4 * theta);
}

/// delta_p(theta) = (1.9446e-12 / mu) (theta + 273.15)^0.81.
inline double vapour_permeability(double theta, double mu) {
  if (!(mu > 0.0)) throw CoefficientError("vapour permeability: mu must be positive");
  if (!(theta > kZeroKelvin))
    throw CoefficientError("vapour permeability: temperature at or below absolute zero");
  return 1.9446e-12 / mu * std::pow(theta + 273.15, 0.81);
}

/// p_sat(theta) = 611 exp(17.08 theta / (234.18 + theta)) [Pa].
inline double saturation_pressure(double theta) {
  if (std::abs(234.18 + theta) < kSingularityTol)
    throw CoefficientError("saturation pressure: pole at theta = -234.18");
  return 611.0 * std::exp(17.08 * theta / (234.18 + theta));
}

/// d p_sat / d theta, analytic.
inline double saturation_pressure_slope(double theta) {
  const double d = 234.18 + theta;
  if (std::abs(d) < kSingularityTol)
    throw CoefficientError("saturation pressure slope: pole at theta = -234.18");
  return saturation_pressure(theta) * 17.08 * 234.18 / (d * d);
}

/// D_phi = 3.8 (a^2/w_f) 10^(3 w_f (b-1) phi / ((b-phi)(w_f-1))) b(b-1)/(b-phi)^2.
inline double liquid_conduction(const MaterialParams& p, double phi) {
  const double wf = p.wf();
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  if (std::abs(wf - 1.0) < kSingularityTol)
    throw CoefficientError("liquid conduction: degenerate exponent denominator w_f - 1");
  const double expo = 3.0 * wf * (b - 1.0) * phi / ((b - phi) * (wf - 1.0));
  const double bphi = b - phi;
  return 3.8 * (p.a * p.a / wf) * std::pow(10.0, expo) * b * (b - 1.0) / (bphi * bphi);
}

/// dH/dtheta = rhos cs (total enthalpy H = rhos cs theta is linear).
inline double enthalpy_capacity(const MaterialParams& p) { return p.rhos * p.cs; }

/// w(phi) = w_f (b-1) phi / (b - phi); satisfies w(0.8) = w80 and w(1) = w_f.
inline double water_content(const MaterialParams& p, double phi) {
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  return p.wf() * (b - 1.0) * phi / (b - phi);
}

/// dw/dphi = w_f (b-1) b / (b - phi)^2, analytic; rejects a degenerate
/// (non-increasing) sorption curve.
inline double water_capacity(const MaterialParams& p, double phi) {
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  const double bphi = b - phi;
  const double dw = p.wf() * (b - 1.0) * b / (bphi * bphi);
  if (!(dw > 0.0))
    throw CoefficientError("water capacity: sorption isotherm not strictly increasing");
  return dw;
}

/// d lambda / d phi, analytic.
inline double thermal_conductivity_slope(const MaterialParams& p, double phi) {
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  const double bphi = b - phi;
  return p.lambda0 * p.btcs * p.wf() * (b - 1.0) * b / (p.rhos * bphi * bphi);
}

/// d h_v / d theta, analytic (logarithmic differentiation).
inline double evaporation_enthalpy_slope(double theta) {
  const double hv = evaporation_enthalpy(theta);
  const double tk = theta + 273.15;
  const double g = 0.267 + 3.67e-4 * theta;
  return hv * (3.67e-4 * std::log(273.15 / tk) - g / tk);
}

/// d delta_p / d theta, analytic.
inline double vapour_permeability_slope(double theta, double mu) {
  if (!(mu > 0.0)) throw CoefficientError("vapour permeability slope: mu must be positive");
  return 1.9446e-12 / mu * 0.81 * std::pow(theta + 273.15, -0.19);
}

/// d^2 p_sat / d theta^2, analytic.
inline double saturation_pressure_curvature(double theta) {
  const double d = 234.18 + theta;
  const double k = 17.08 * 234.18 / (d * d);
  return saturation_pressure(theta) * (k * k - 2.0 * 17.08 * 234.18 / (d * d * d));
}

/// d D_phi / d phi, analytic.
inline double liquid_conduction_slope(const MaterialParams& p, double phi) {
  const double wf = p.wf();
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  const double bphi = b - phi;
  const double dexpo = 3.0 * wf * (b - 1.0) / (wf - 1.0) * b / (bphi * bphi);
  return liquid_conduction(p, phi) * (std::log(10.0) * dexpo + 2.0 / bphi);
}

/// d^2 w / d phi^2, analytic.
inline double water_capacity_slope(const MaterialParams& p, double phi) {
  const double b = approximation_factor(p);
  check_phi_singularity(b, phi);
  const double bphi = b - phi;
  return 2.0 * p.wf() * (b - 1.0) * b / (bphi * bphi * bphi);
}

/// Every coefficient entering the FE conductivity and capacity matrices,
/// evaluated at one state point.
struct CoefficientSet {
  double lambda;    // thermal conductivity
  double hv;        // evaporation enthalpy
  double delta_p;   // vapour permeability
  double psat;      // saturation pressure
  double dpsat;     // d p_sat / d theta
  double dphi_liq;  // liquid conduction coefficient
  double dh_cap;    // dH/dtheta
  double dw_cap;    // dw/dphi
};

/// State derivatives of the coefficient set, for the Newton Jacobian.
struct CoefficientSlopes {
  double dlambda_dphi;
  double dhv_dtheta;
  double ddelta_p_dtheta;
  double d2psat_dtheta2;
  double ddphi_liq_dphi;
  double d2w_dphi2;
};

inline CoefficientSlopes evaluate_slopes(const MaterialParams& p, double theta, double phi) {
  CoefficientSlopes s;
  s.dlambda_dphi = thermal_conductivity_slope(p, phi);
  s.dhv_dtheta = evaporation_enthalpy_slope(theta);
  s.ddelta_p_dtheta = vapour_permeability_slope(theta, p.mu);
  s.d2psat_dtheta2 = saturation_pressure_curvature(theta);
  s.ddphi_liq_dphi = liquid_conduction_slope(p, phi);
  s.d2w_dphi2 = water_capacity_slope(p, phi);
  return s;
}

inline CoefficientSet evaluate(const MaterialParams& p, double theta, double phi) {
  CoefficientSet c;
  c.lambda = thermal_conductivity(p, phi);
  c.hv = evaporation_enthalpy(theta);
  c.delta_p = vapour_permeability(theta, p.mu);
  c.psat = saturation_pressure(theta);
  c.dpsat = saturation_pressure_slope(theta);
  c.dphi_liq = liquid_conduction(p, phi);
  c.dh_cap = enthalpy_capacity(p);
  c.dw_cap = water_capacity(p, phi);
  return c;
}

}  // namespace hygropc::kunzel
