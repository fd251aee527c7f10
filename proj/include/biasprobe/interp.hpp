#pragma once

// Interpolation schedules away from the partial-exposure condition
// (pi0 = 0.5, pi1 = 0). All three lines are parameterised by one value,
// pi_fe in (0, 0.5]:
//   FE  (0.5, pi_fe)          -- toward full exposure
//   ZS  (pi_zs, 0)            -- toward zero shot, same rho as FE
//   EQ  (pi_eq, pi_fe)        -- same rho as partial exposure

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "biasprobe/errors.hpp"
#include "biasprobe/protocol.hpp"

namespace biasprobe {

enum class InterpKind { PeAnchor, ZsInterp, FeInterp, EqInterp };

inline std::string_view to_string(InterpKind k) {
  switch (k) {
    case InterpKind::PeAnchor: return "PE_ANCHOR";
    case InterpKind::ZsInterp: return "ZS_INTERP";
    case InterpKind::FeInterp: return "FE_INTERP";
    case InterpKind::EqInterp: return "EQ_INTERP";
  }
  return "?";
}

struct InterpolationPoint {
  double pi0 = 0.0;
  double pi1 = 0.0;
  double rho = 0.0;
  InterpKind kind = InterpKind::PeAnchor;
  double pi_fe = 0.0;  // generating value; 0 for the anchor
};

inline constexpr double kPartialExposurePi0 = 0.5;
inline constexpr double kRhoTolerance = 1e-9;
inline constexpr int kMaxBisectionSteps = 60;

inline double partial_exposure_rho() { return spurious_correlation(kPartialExposurePi0, 0.0); }

namespace detail {
inline void check_pi_fe(double pi_fe) {
  if (!(pi_fe > 0.0 && pi_fe <= 0.5)) {
    throw OutOfRange("interpolant pi_fe must lie in (0, 0.5], got " + std::to_string(pi_fe));
  }
}
}  // namespace detail

inline InterpolationPoint fe_interpolant(double pi_fe) {
  detail::check_pi_fe(pi_fe);
  return {kPartialExposurePi0, pi_fe, spurious_correlation(kPartialExposurePi0, pi_fe), InterpKind::FeInterp,
          pi_fe};
}

// rho(p, 0) = sqrt(b / (1 - b)) with b = p / 2, hence p = 2 r^2 / (1 + r^2).
inline InterpolationPoint zs_interpolant(double pi_fe) {
  const InterpolationPoint fe = fe_interpolant(pi_fe);
  const double r = fe.rho;
  const double pi0 = 2.0 * r * r / (1.0 + r * r);
  if (pi0 > 0.0) {
    const double check = spurious_correlation(pi0, 0.0);
    if (std::abs(check - r) > kRhoTolerance) {
      throw Error("zero-shot interpolant failed rho check: " + std::to_string(check) + " vs " + std::to_string(r));
    }
  }
  return {pi0, 0.0, r, InterpKind::ZsInterp, pi_fe};
}

// Bisection on pi0 over (pi_fe, 1]; rho(., pi1) is strictly increasing there.
inline InterpolationPoint eq_interpolant(double pi_fe, int* steps_taken = nullptr) {
  detail::check_pi_fe(pi_fe);
  const double target = partial_exposure_rho();
  double lo = pi_fe;
  double hi = 1.0;
  if (spurious_correlation(hi, pi_fe) < target - kRhoTolerance) {
    throw Error("equi-correlation target unreachable for pi_fe=" + std::to_string(pi_fe));
  }
  double mid = hi;
  double rho = spurious_correlation(hi, pi_fe);
  int steps = 0;
  if (std::abs(rho - target) > kRhoTolerance) {
    while (steps < kMaxBisectionSteps) {
      ++steps;
      mid = 0.5 * (lo + hi);
      rho = spurious_correlation(mid, pi_fe);
      if (std::abs(rho - target) <= kRhoTolerance) break;
      (rho < target ? lo : hi) = mid;
    }
  }
  if (steps_taken) *steps_taken = steps;
  if (std::abs(rho - target) > kRhoTolerance) {
    throw Error("equi-correlation bisection did not converge for pi_fe=" + std::to_string(pi_fe));
  }
  return {mid, pi_fe, rho, InterpKind::EqInterp, pi_fe};
}

inline std::vector<InterpolationPoint> schedule(std::vector<double> pi_fe_values) {
  std::sort(pi_fe_values.begin(), pi_fe_values.end());
  std::vector<InterpolationPoint> out;
  out.push_back({kPartialExposurePi0, 0.0, partial_exposure_rho(), InterpKind::PeAnchor, 0.0});
  for (double v : pi_fe_values) {
    out.push_back(fe_interpolant(v));
    out.push_back(zs_interpolant(v));
    out.push_back(eq_interpolant(v));
  }
  return out;
}

}  // namespace biasprobe
