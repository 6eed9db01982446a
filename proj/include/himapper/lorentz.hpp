// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// The Lorentz (hyperboloid) model of hyperbolic space with curvature -c:
// points x = [space, time] in R^{n+1} with -time^2 + |space|^2 = -1/c and
// time > 0. Exponential and logarithm maps are anchored at the origin
// O = [0, sqrt(1/c)]. Distances use arccosh(-c <x, y>_L), so the geodesic
// distance from O to expm(v) is sqrt(c) |v|.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "himapper/tensor.hpp"

namespace himapper {

inline constexpr double kDefaultCurvature = 1.0;
// Hyperboloid constraint tolerance for explicitly constructed points.
inline constexpr double kConstraintTolerance = 1e-9;
// -c<x,y>_L may dip below 1 by this much (rounding) before being rejected.
inline constexpr double kDistanceDomainSlack = 1e-6;
// Below this tangent norm sinh(x)/x uses its Taylor expansion.
inline constexpr double kTaylorThreshold = 1e-8;

// Tangent vector at the origin; the time component is implicitly zero.
struct TangentVector {
  std::vector<double> space;
};

class LorentzPoint {
 public:
  // Lifts a space component onto the hyperboloid: time = sqrt(1/c + |space|^2).
  static LorentzPoint lift(std::vector<double> space, double curvature = kDefaultCurvature);
  // Explicit components; throws NumericDomainError if the point is off the
  // upper sheet by more than kConstraintTolerance (relative to time^2).
  static LorentzPoint checked(std::vector<double> space, double time, double curvature = kDefaultCurvature);
  static LorentzPoint origin(std::size_t dim, double curvature = kDefaultCurvature);

  const std::vector<double>& space() const { return space_; }
  double time() const { return time_; }
  double curvature() const { return curvature_; }
  std::size_t dim() const { return space_.size(); }
  // [space..., time]
  std::vector<double> coordinates() const;

 private:
  LorentzPoint(std::vector<double> space, double time, double curvature)
      : space_(std::move(space)), time_(time), curvature_(curvature) {}
  std::vector<double> space_;
  double time_;
  double curvature_;
};

// -x_time*y_time + <x_space, y_space>. Throws ArgumentError on dimension or
// curvature mismatch.
double lorentz_inner(const LorentzPoint& x, const LorentzPoint& y);
// Raw (n+1)-vectors with the time component last; no constraint check.
double lorentz_inner(std::span<const double> x, std::span<const double> y);

LorentzPoint lift_time(std::span<const double> space, double curvature = kDefaultCurvature);

// -time^2 + |space|^2 + 1/c; zero on the hyperboloid.
double constraint_residual(const LorentzPoint& x);

// arccosh(max(-c<x,y>_L, 1)). Throws NumericDomainError when -c<x,y>_L is
// below 1 - kDistanceDomainSlack.
double lorentz_distance(const LorentzPoint& x, const LorentzPoint& y);

LorentzPoint expm_origin(const TangentVector& v, double curvature = kDefaultCurvature);
// Throws NumericDomainError for points off the hyperboloid.
TangentVector logm_origin(const LorentzPoint& x);

// sinh(x)/x with its Taylor limit near zero, and (x cosh x - sinh x)/x^3,
// i.e. d/dx[sinh(x)/x] / x.
double sinhc(double x);
double sinhc_slope_over_x(double x);

// ---------------------------------------------------------------------------
// Differentiable batch forms. Rows are space components; `curvature` is a
// single-element tensor so it can be trained (via a log-parameterization
// upstream) or held fixed.

// (n x d) tangent rows -> (n x d) space components of expm_origin.
Tensor expm_origin_rows(const Tensor& tangent, const Tensor& curvature);
// (n x d) space rows -> (n x 1) lifted time components.
Tensor lift_time_rows(const Tensor& space, const Tensor& curvature);
// Distances between every row of x (n x d) and every row of y (m x d), both
// given by space components: (n x m).
Tensor lorentz_distance_matrix(const Tensor& x, const Tensor& y, const Tensor& curvature);
// Row-wise distances between x[i] and y[i]: (n x 1).
Tensor lorentz_distance_paired(const Tensor& x, const Tensor& y, const Tensor& curvature);

}  // namespace himapper
