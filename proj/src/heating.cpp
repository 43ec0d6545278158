#include <cmath>
#include <set>

#include "sbthermo/detail/csv.hpp"
#include "sbthermo/error.hpp"
#include "sbthermo/evaluation.hpp"

namespace sbthermo::eval {

void HeatingLine::validate() const {
  if (!std::isfinite(rate) || !std::isfinite(intercept))
    fail(ErrorCode::kInvalidInput, "heating line must be finite");
  if (!(rate_se >= 0.0) || !(intercept_se >= 0.0))
    fail(ErrorCode::kInvalidInput, "heating line standard errors must be >= 0");
}

HeatingLine fit_heating_rate(const std::vector<HeatingPoint>& points) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!std::isfinite(p.duration_ms) || !std::isfinite(p.nbar))
      fail(ErrorCode::kInvalidInput, "heating points must be finite");
    distinct.insert(p.duration_ms);
  }
  if (distinct.size() < 2)
    fail(ErrorCode::kInvalidInput, "heating fit needs at least 2 distinct durations");

  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += p.duration_ms;
    my += p.nbar;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : points) {
    sxx += (p.duration_ms - mx) * (p.duration_ms - mx);
    sxy += (p.duration_ms - mx) * (p.nbar - my);
  }
  HeatingLine line;
  line.rate = sxy / sxx;
  line.intercept = my - line.rate * mx;
  if (points.size() > 2) {
    double rss = 0.0;
    for (const auto& p : points) {
      const double e = p.nbar - line.at(p.duration_ms);
      rss += e * e;
    }
    const double s2 = rss / (n - 2.0);
    line.rate_se = std::sqrt(s2 / sxx);
    line.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return line;
}

std::vector<HeatingPoint> read_heating_points(const std::filesystem::path& path) {
  std::vector<HeatingPoint> out;
  for (const auto& r : detail::read_numeric_csv(path, {"duration_ms", "nbar"}))
    out.push_back({r[0], r[1]});
  return out;
}

}  // namespace sbthermo::eval
