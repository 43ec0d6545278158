#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sbthermo/detail/csv.hpp"
#include "sbthermo/error.hpp"
#include "sbthermo/evaluation.hpp"

namespace sbthermo::eval {
namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

// Parameters in scaled frequency u = (f - mid) / half_span:
// (amplitude, center, width, baseline).
struct Problem {
  Eigen::VectorXd u;
  Eigen::VectorXd y;
  Eigen::VectorXd sqrt_w;

  double cost(const Vec4& p, Eigen::VectorXd& r) const {
    const Eigen::ArrayXd d = u.array() - p[1];
    const Eigen::ArrayXd e = (-d.square() / (2.0 * p[2] * p[2])).exp();
    r = sqrt_w.array() * (y.array() - (p[0] * e + p[3]));
    return r.squaredNorm();
  }

  Eigen::MatrixXd jacobian(const Vec4& p) const {
    const Eigen::ArrayXd d = u.array() - p[1];
    const double w2 = p[2] * p[2];
    const Eigen::ArrayXd e = (-d.square() / (2.0 * w2)).exp();
    Eigen::MatrixXd j(u.size(), 4);
    j.col(0) = e;
    j.col(1) = p[0] * e * d / w2;
    j.col(2) = p[0] * e * d.square() / (w2 * p[2]);
    j.col(3).setOnes();
    return sqrt_w.asDiagonal() * j;
  }
};

}  // namespace

void ScanTrace::validate() const {
  if (points.size() < 5)
    fail(ErrorCode::kInvalidInput,
         "scan trace needs at least 5 points, got " + std::to_string(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.frequency_hz))
      fail(ErrorCode::kInvalidInput, "point " + std::to_string(i) + ": frequency not finite");
    if (i > 0 && !(p.frequency_hz > points[i - 1].frequency_hz))
      fail(ErrorCode::kInvalidInput,
           "point " + std::to_string(i) + ": frequencies must be strictly increasing");
    if (!(p.population >= 0.0 && p.population <= 1.0))
      fail(ErrorCode::kInvalidInput, "point " + std::to_string(i) + ": population outside [0, 1]");
    if (p.measurements < 1)
      fail(ErrorCode::kInvalidInput, "point " + std::to_string(i) + ": n_measurements must be >= 1");
  }
}

ScanTrace read_scan_trace(const std::filesystem::path& path) {
  const auto rows =
      detail::read_numeric_csv(path, {"frequency_hz", "population", "n_measurements"});
  ScanTrace trace;
  for (const auto& r : rows) {
    if (!(r[2] >= 1.0 && r[2] <= 4294967295.0) || std::floor(r[2]) != r[2])
      fail(ErrorCode::kFormat, path.string() + ": n_measurements must be a positive integer");
    trace.points.push_back({r[0], r[1], static_cast<std::uint32_t>(r[2])});
  }
  trace.validate();
  return trace;
}

double PeakFit::population() const { return std::clamp(amplitude + baseline, 0.0, 1.0); }

PeakFit gaussian_peak_fit(const ScanTrace& trace, const PeakFitOptions& options) {
  trace.validate();
  const auto& pts = trace.points;
  const Eigen::Index m = static_cast<Eigen::Index>(pts.size());
  const double mid = 0.5 * (pts.front().frequency_hz + pts.back().frequency_hz);
  const double half = 0.5 * (pts.back().frequency_hz - pts.front().frequency_hz);

  Problem pr;
  pr.u.resize(m);
  pr.y.resize(m);
  pr.sqrt_w.resize(m);
  double mean_n = 0.0;
  for (const auto& p : pts) mean_n += p.measurements;
  mean_n /= static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& p = pts[static_cast<std::size_t>(i)];
    pr.u[i] = (p.frequency_hz - mid) / half;
    pr.y[i] = p.population;
    pr.sqrt_w[i] = std::sqrt(p.measurements / mean_n);
  }

  Eigen::Index top = 0;
  pr.y.maxCoeff(&top);
  const double lo = pr.y.minCoeff();
  Vec4 p(pr.y[top] - lo, pr.u[top], 1.0 / 3.0, lo);

  Eigen::VectorXd r, r_trial;
  double cost = pr.cost(p, r);
  double lambda = 1e-3;
  PeakFit fit;
  bool converged = false;
  Eigen::MatrixXd j;
  for (int it = 0; it <= options.max_iterations; ++it) {
    j = pr.jacobian(p);
    const Vec4 g = j.transpose() * r;
    if (g.cwiseAbs().maxCoeff() <= options.gradient_tolerance) {
      converged = true;
      fit.iterations = it;
      break;
    }
    if (it == options.max_iterations) break;
    const Mat4 jtj = j.transpose() * j;
    const double floor = 1e-12 * std::max(1.0, jtj.diagonal().maxCoeff());
    bool accepted = false;
    while (lambda < 1e30) {
      Mat4 a = jtj;
      for (int k = 0; k < 4; ++k) a(k, k) += lambda * std::max(jtj(k, k), floor);
      const Vec4 step = a.ldlt().solve(g);
      const Vec4 trial = p + step;
      const double c = step.allFinite() ? pr.cost(trial, r_trial) :
                                          std::numeric_limits<double>::infinity();
      if (c < cost) {
        p = trial;
        cost = c;
        r.swap(r_trial);
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No representable step lowers the cost: a minimum to machine precision.
      converged = true;
      fit.iterations = it;
      break;
    }
  }
  fit.residual_norm = std::sqrt(cost);
  if (!converged)
    fail(ErrorCode::kFitFailure, "Gaussian fit did not converge within " +
                                     std::to_string(options.max_iterations) +
                                     " iterations; last residual norm " +
                                     detail::format_double(fit.residual_norm));

  fit.amplitude = p[0];
  fit.center_hz = mid + half * p[1];
  fit.width_hz = half * std::abs(p[2]);
  fit.baseline = p[3];

  const double dof = static_cast<double>(m - 4);
  const double s2 = dof > 0 ? cost / dof : 0.0;
  const Mat4 jtj = j.transpose() * j;
  Eigen::FullPivLU<Mat4> lu(jtj);
  Vec4 se = Vec4::Constant(std::numeric_limits<double>::infinity());
  if (lu.isInvertible()) {
    const Mat4 cov = s2 * lu.inverse();
    for (int k = 0; k < 4; ++k)
      se[k] = cov(k, k) >= 0 ? std::sqrt(cov(k, k)) : std::numeric_limits<double>::infinity();
  }
  fit.amplitude_se = se[0];
  fit.center_se = half * se[1];
  fit.width_se = half * se[2];
  fit.baseline_se = se[3];
  return fit;
}

}  // namespace sbthermo::eval
