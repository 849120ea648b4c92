#pragma once

// Randomised finite-difference check of the analytic gradient.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "compfit/autodiff.hpp"

namespace compfit {

struct GradCheckOptions {
  std::uint64_t seed = 7;
  std::size_t samples = 1000;
  int draws = 50;
  double step = 1e-6;
  double tolerance = 1e-6;
  int sample_rate = 44100;
  bool preemphasis = true;
};

struct GradCheckDraw {
  ThetaRaw theta;
  Gradient analytic = Gradient::Zero();
  Gradient numeric = Gradient::Zero();
  double max_rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckDraw> draws;
  int rejected_nonsmooth = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// |a - b| / max(|a|, |b|), 0 when both are 0.
double relative_error(double a, double b);

/// Single-chunk problem on `samples` seeded noise samples; x carries a level
/// envelope so both ballistics branches and the threshold are exercised.
/// Central differences use an independent extended-precision evaluation of
/// the loss. Draws whose attack/release pattern or threshold activity changes inside
/// theta +- step (a non-smooth point for central differences) are redrawn.
GradCheckResult gradient_check(const GradCheckOptions& options);

}  // namespace compfit
