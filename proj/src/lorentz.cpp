// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/lorentz.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "autograd.hpp"
#include "himapper/errors.hpp"

namespace himapper {

using detail::make_result;
using detail::Node;

namespace {

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void require_positive_curvature(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    std::ostringstream os;
    os << "curvature must be positive and finite, got " << c;
    throw ArgumentError(os.str());
  }
}

void require_same_space(const LorentzPoint& x, const LorentzPoint& y) {
  if (x.dim() != y.dim()) throw ArgumentError("Lorentz points of different dimension");
  if (x.curvature() != y.curvature()) throw ArgumentError("Lorentz points on hyperboloids of different curvature");
}

// Distances are evaluated as arccosh(1 + z) with z = -c<x,y>_L - 1 obtained
// from coordinate differences, so nearby points keep their digits instead of
// cancelling inside t_x t_y - <x_s, y_s>.
double distance_from_excess(double z) {
  if (std::isnan(z)) throw NonFiniteError("lorentz_distance");
  if (!(z >= -kDistanceDomainSlack)) {
    std::ostringstream os;
    os << "lorentz_distance: -c<x,y>_L = " << 1.0 + z << " < 1 (inputs are off the hyperboloid)";
    throw NumericDomainError(os.str());
  }
  z = std::max(z, 0.0);
  return std::log1p(z + std::sqrt(z * (2.0 + z)));
}

// d arccosh(1 + z) / dz, taken as zero at the kink z = 0.
double distance_slope(double z) { return z > 0.0 ? 1.0 / std::sqrt(z * (2.0 + z)) : 0.0; }

// z for two lifted points given their space rows and times.
double lifted_excess(const double* x, const double* y, std::size_t d, double tx, double ty, double c) {
  double diff_sq = 0.0, norm_gap = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double a = x[j], b = y[j];
    diff_sq += (a - b) * (a - b);
    norm_gap += (a - b) * (a + b);
  }
  const double dt = norm_gap / (tx + ty);
  return 0.5 * c * (diff_sq - dt * dt);
}

double curvature_value(const Tensor& curvature) {
  if (curvature.numel() != 1) throw ArgumentError("curvature must be a single-element tensor");
  const double c = curvature.values()[0];
  require_positive_curvature(c);
  return c;
}

void require_space_rows(const char* op, const Tensor& x) {
  if (x.rank() != 2) throw ArgumentError(std::string(op) + ": expected (n x d) space rows");
}

}  // namespace

double sinhc(double x) {
  if (std::abs(x) < kTaylorThreshold) return 1.0 + x * x / 6.0;
  return std::sinh(x) / x;
}

double sinhc_slope_over_x(double x) {
  const double x2 = x * x;
  if (std::abs(x) < 1e-2) return 1.0 / 3.0 + x2 / 30.0 + x2 * x2 / 840.0 + x2 * x2 * x2 / 45360.0;
  return (x * std::cosh(x) - std::sinh(x)) / (x2 * x);
}

LorentzPoint LorentzPoint::lift(std::vector<double> space, double curvature) {
  require_positive_curvature(curvature);
  const double time = std::sqrt(1.0 / curvature + squared_norm(space));
  return LorentzPoint(std::move(space), time, curvature);
}

LorentzPoint LorentzPoint::checked(std::vector<double> space, double time, double curvature) {
  require_positive_curvature(curvature);
  const double residual = -time * time + squared_norm(space) + 1.0 / curvature;
  if (!(time > 0.0) || std::abs(residual) > kConstraintTolerance * std::max(1.0, time * time)) {
    std::ostringstream os;
    os << "point is not on the upper hyperboloid sheet (residual " << residual << ", time " << time << ")";
    throw NumericDomainError(os.str());
  }
  return LorentzPoint(std::move(space), time, curvature);
}

LorentzPoint LorentzPoint::origin(std::size_t dim, double curvature) {
  require_positive_curvature(curvature);
  return LorentzPoint(std::vector<double>(dim, 0.0), std::sqrt(1.0 / curvature), curvature);
}

std::vector<double> LorentzPoint::coordinates() const {
  std::vector<double> out(space_);
  out.push_back(time_);
  return out;
}

double lorentz_inner(const LorentzPoint& x, const LorentzPoint& y) {
  require_same_space(x, y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.dim(); ++i) s += x.space()[i] * y.space()[i];
  return -x.time() * y.time() + s;
}

double lorentz_inner(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw ArgumentError("lorentz_inner: dimension mismatch");
  const std::size_t n = x.size() - 1;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return -x[n] * y[n] + s;
}

LorentzPoint lift_time(std::span<const double> space, double curvature) {
  return LorentzPoint::lift(std::vector<double>(space.begin(), space.end()), curvature);
}

double constraint_residual(const LorentzPoint& x) {
  return -x.time() * x.time() + squared_norm(x.space()) + 1.0 / x.curvature();
}

double lorentz_distance(const LorentzPoint& x, const LorentzPoint& y) {
  require_same_space(x, y);
  const double c = x.curvature();
  // The raw inner product only gates the domain; the value comes from
  // coordinate differences, which is exact (zero) for identical points.
  distance_from_excess(-c * lorentz_inner(x, y) - 1.0);
  double diff_sq = 0.0;
  for (std::size_t i = 0; i < x.dim(); ++i) diff_sq += (x.space()[i] - y.space()[i]) * (x.space()[i] - y.space()[i]);
  const double dt = x.time() - y.time();
  return distance_from_excess(0.5 * c * (diff_sq - dt * dt));
}

LorentzPoint expm_origin(const TangentVector& v, double curvature) {
  require_positive_curvature(curvature);
  const double r = std::sqrt(squared_norm(v.space));
  const double factor = r < kTaylorThreshold ? 1.0 + curvature * r * r / 6.0 : sinhc(std::sqrt(curvature) * r);
  std::vector<double> space(v.space.size());
  for (std::size_t i = 0; i < space.size(); ++i) space[i] = factor * v.space[i];
  return LorentzPoint::lift(std::move(space), curvature);
}

TangentVector logm_origin(const LorentzPoint& x) {
  const double c = x.curvature();
  const double residual = constraint_residual(x);
  if (!(x.time() > 0.0) || std::abs(residual) > 1e-6 * std::max(1.0, x.time() * x.time())) {
    std::ostringstream os;
    os << "logm_origin: point is off the hyperboloid (residual " << residual << ")";
    throw NumericDomainError(os.str());
  }
  // |space| = sinh(sqrt(c) r) / sqrt(c) for a point at tangent norm r, so
  // r = asinh(sqrt(c) |space|) / sqrt(c); asinh stays accurate near the origin
  // where arccosh(sqrt(c) time) would lose half the digits.
  const double norm = std::sqrt(squared_norm(x.space()));
  const double z = std::sqrt(c) * norm;
  const double factor = z < 1e-8 ? 1.0 - z * z / 6.0 : std::asinh(z) / z;
  TangentVector v{std::vector<double>(x.dim())};
  for (std::size_t i = 0; i < x.dim(); ++i) v.space[i] = factor * x.space()[i];
  return v;
}

Tensor expm_origin_rows(const Tensor& tangent, const Tensor& curvature) {
  require_space_rows("expm_origin_rows", tangent);
  const double c = curvature_value(curvature);
  const double sqrt_c = std::sqrt(c);
  const std::size_t n = tangent.rows(), d = tangent.cols();
  auto tv = tangent.values();
  std::vector<double> out(n * d), factor(n), slope(n), radius_sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r2 = squared_norm(tv.subspan(i * d, d));
    const double r = std::sqrt(r2);
    const double x = sqrt_c * r;
    factor[i] = r < kTaylorThreshold ? 1.0 + c * r2 / 6.0 : sinhc(x);
    slope[i] = sinhc_slope_over_x(x);
    radius_sq[i] = r2;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = factor[i] * tv[i * d + j];
  }
  return make_result(
      "expm_origin", {n, d}, std::move(out), {tangent, curvature},
      [n, d, c, factor = std::move(factor), slope = std::move(slope), radius_sq = std::move(radius_sq)](Node& self) {
        const double* v = self.parent_value(0);
        double* gv = self.parent_grad(0);
        double* gc = self.parent_grad(1);
        for (std::size_t i = 0; i < n; ++i) {
          double dy_dot_v = 0.0;
          for (std::size_t j = 0; j < d; ++j) dy_dot_v += self.grad[i * d + j] * v[i * d + j];
          if (gv) {
            const double radial = c * slope[i] * dy_dot_v;
            for (std::size_t j = 0; j < d; ++j) {
              gv[i * d + j] += factor[i] * self.grad[i * d + j] + radial * v[i * d + j];
            }
          }
          if (gc) gc[0] += dy_dot_v * slope[i] * radius_sq[i] / 2.0;
        }
      });
}

Tensor lift_time_rows(const Tensor& space, const Tensor& curvature) {
  require_space_rows("lift_time_rows", space);
  const double c = curvature_value(curvature);
  const std::size_t n = space.rows(), d = space.cols();
  auto sv = space.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(1.0 / c + squared_norm(sv.subspan(i * d, d)));
  return make_result("lift_time", {n, 1}, std::move(out), {space, curvature}, [n, d, c](Node& self) {
    const double* s = self.parent_value(0);
    double* gs = self.parent_grad(0);
    double* gc = self.parent_grad(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = self.value[i];
      if (gs) {
        for (std::size_t j = 0; j < d; ++j) gs[i * d + j] += self.grad[i] * s[i * d + j] / t;
      }
      if (gc) gc[0] += self.grad[i] * (-1.0 / (2.0 * c * c * t));
    }
  });
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

std::vector<double> lifted_times(std::span<const double> rows, std::size_t n, std::size_t d, double c) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = std::sqrt(1.0 / c + squared_norm(rows.subspan(i * d, d)));
  return t;
}

}  // namespace

Tensor lorentz_distance_matrix(const Tensor& x, const Tensor& y, const Tensor& curvature) {
  require_space_rows("lorentz_distance_matrix", x);
  require_space_rows("lorentz_distance_matrix", y);
  if (x.cols() != y.cols()) throw ArgumentError("lorentz_distance_matrix: dimension mismatch");
  const double c = curvature_value(curvature);
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  auto xt = lifted_times(x.values(), n, d, c);
  auto yt = lifted_times(y.values(), m, d, c);
  const double* xs = x.values().data();
  const double* ys = y.values().data();
  std::vector<double> out(n * m), excess(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      excess[i * m + j] = lifted_excess(xs + i * d, ys + j * d, d, xt[i], yt[j], c);
      out[i * m + j] = distance_from_excess(excess[i * m + j]);
    }
  }
  return make_result(
      "lorentz_distance", {n, m}, std::move(out), {x, y, curvature},
      [n, m, d, c, xt = std::move(xt), yt = std::move(yt), excess = std::move(excess)](Node& self) {
        RowMatrix w(n, m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) w(i, j) = self.grad[i * m + j] * distance_slope(excess[i * m + j]);
        ConstMatMap xv(self.parent_value(0), n, d);
        ConstMatMap yv(self.parent_value(1), m, d);
        if (double* gx = self.parent_grad(0)) {
          MatMap gxm(gx, n, d);
          RowMatrix wy = w * yv;
          for (std::size_t i = 0; i < n; ++i) {
            double weighted_time = 0.0;
            for (std::size_t j = 0; j < m; ++j) weighted_time += w(i, j) * yt[j];
            gxm.row(i) += c * (weighted_time / xt[i] * xv.row(i) - wy.row(i));
          }
        }
        if (double* gy = self.parent_grad(1)) {
          MatMap gym(gy, m, d);
          RowMatrix wx = w.transpose() * xv;
          for (std::size_t j = 0; j < m; ++j) {
            double weighted_time = 0.0;
            for (std::size_t i = 0; i < n; ++i) weighted_time += w(i, j) * xt[i];
            gym.row(j) += c * (weighted_time / yt[j] * yv.row(j) - wx.row(j));
          }
        }
        if (double* gc = self.parent_grad(2)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
              gc[0] += w(i, j) * ((1.0 + excess[i * m + j]) / c - (yt[j] / xt[i] + xt[i] / yt[j]) / (2.0 * c));
        }
      });
}

Tensor lorentz_distance_paired(const Tensor& x, const Tensor& y, const Tensor& curvature) {
  require_space_rows("lorentz_distance_paired", x);
  require_space_rows("lorentz_distance_paired", y);
  if (x.shape() != y.shape()) throw ArgumentError("lorentz_distance_paired: shape mismatch");
  const double c = curvature_value(curvature);
  const std::size_t n = x.rows(), d = x.cols();
  auto xv = x.values(), yv = y.values();
  auto xt = lifted_times(xv, n, d, c);
  auto yt = lifted_times(yv, n, d, c);
  std::vector<double> out(n), excess(n);
  for (std::size_t i = 0; i < n; ++i) {
    excess[i] = lifted_excess(xv.data() + i * d, yv.data() + i * d, d, xt[i], yt[i], c);
    out[i] = distance_from_excess(excess[i]);
  }
  return make_result("lorentz_distance_paired", {n, 1}, std::move(out), {x, y, curvature},
                     [n, d, c, xt = std::move(xt), yt = std::move(yt), excess = std::move(excess)](Node& self) {
                       const double* xs = self.parent_value(0);
                       const double* ys = self.parent_value(1);
                       double* gx = self.parent_grad(0);
                       double* gy = self.parent_grad(1);
                       double* gc = self.parent_grad(2);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double w = self.grad[i] * distance_slope(excess[i]);
                         if (w == 0.0) continue;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double xj = xs[i * d + j], yj = ys[i * d + j];
                           if (gx) gx[i * d + j] += w * c * (yt[i] / xt[i] * xj - yj);
                           if (gy) gy[i * d + j] += w * c * (xt[i] / yt[i] * yj - xj);
                         }
                         if (gc) gc[0] += w * ((1.0 + excess[i]) / c - (yt[i] / xt[i] + xt[i] / yt[i]) / (2.0 * c));
                       }
                     });
}

}  // namespace himapper
