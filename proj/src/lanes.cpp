#include "tmmoe/lanes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tmmoe {

double Polyline::y_at(double x) const {
  if (points.empty()) throw std::logic_error("empty polyline");
  if (points.size() == 1) return points[0].y;
  auto seg = std::upper_bound(points.begin(), points.end(), x,
                              [](double v, const Point& p) { return v < p.x; });
  std::size_t i = static_cast<std::size_t>(seg - points.begin());
  i = std::clamp<std::size_t>(i, 1, points.size() - 1);
  const Point& a = points[i - 1];
  const Point& b = points[i];
  if (b.x == a.x) return 0.5 * (a.y + b.y);
  return a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x);
}

std::optional<std::size_t> LaneGeometry::lane_of(Point p) const {
  for (std::size_t k = 0; k + 1 < lines.size(); ++k) {
    if (p.y >= line_y(k, p.x) && p.y < line_y(k + 1, p.x)) return k;
  }
  return std::nullopt;
}

LaneReconstruction reconstruct_lanes(const std::vector<std::vector<Point>>& markings, double width,
                                     std::size_t window, std::optional<std::size_t> line_count) {
  if (markings.empty()) throw std::invalid_argument("reconstruct_lanes: no markings");
  if (!(width > 0.0)) throw std::invalid_argument("reconstruct_lanes: width must be positive");
  if (window == 0) throw std::invalid_argument("reconstruct_lanes: window must be >= 1");
  std::vector<double> mean_y;
  for (const auto& m : markings) {
    if (m.size() < 2) throw std::invalid_argument("reconstruct_lanes: a marking has < 2 points");
    double s = 0.0;
    for (const auto& p : m) s += p.y;
    mean_y.push_back(s / static_cast<double>(m.size()));
  }
  std::vector<std::size_t> order(markings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_y[a] < mean_y[b]; });

  LaneReconstruction result;
  const double ref = mean_y[order[0]];
  std::vector<Point> merged;
  long max_offset = 0;
  for (std::size_t idx : order) {
    const double lanes = (mean_y[idx] - ref) / width;
    const long offset = std::lround(lanes);
    if (std::abs(lanes - static_cast<double>(offset)) * width > 0.5) ++result.snapped;
    max_offset = std::max(max_offset, offset);
    for (const auto& p : markings[idx]) {
      merged.push_back({p.x, p.y - static_cast<double>(offset) * width});
    }
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const Point& a, const Point& b) { return a.x < b.x; });

  const std::size_t n = merged.size();
  const std::size_t w = std::min(window, n);
  Polyline base;
  base.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Least-squares line over a fixed-size window centred on i (shifted
    // inward near the ends), evaluated at x_i.
    std::size_t lo = i >= w / 2 ? i - w / 2 : 0;
    if (lo + w > n) lo = n - w;
    double mx = 0.0, my = 0.0;
    for (std::size_t j = lo; j < lo + w; ++j) {
      mx += merged[j].x;
      my += merged[j].y;
    }
    mx /= static_cast<double>(w);
    my /= static_cast<double>(w);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t j = lo; j < lo + w; ++j) {
      sxx += (merged[j].x - mx) * (merged[j].x - mx);
      sxy += (merged[j].x - mx) * (merged[j].y - my);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    base.points.push_back({merged[i].x, my + slope * (merged[i].x - mx)});
  }
  // Points sharing an x are merged into their mean so y_at is single valued.
  std::vector<Point> unique;
  for (std::size_t i = 0; i < base.points.size();) {
    std::size_t j = i;
    double sy = 0.0;
    while (j < base.points.size() && base.points[j].x == base.points[i].x) sy += base.points[j++].y;
    unique.push_back({base.points[i].x, sy / static_cast<double>(j - i)});
    i = j;
  }
  base.points = std::move(unique);

  const std::size_t lines = line_count.value_or(static_cast<std::size_t>(max_offset) + 1);
  if (lines < 2) throw std::invalid_argument("reconstruct_lanes: need at least two lane lines");
  result.geometry.width = width;
  for (std::size_t k = 0; k < lines; ++k) {
    Polyline line = base;
    for (auto& p : line.points) p.y += static_cast<double>(k) * width;
    result.geometry.lines.push_back(std::move(line));
  }
  return result;
}

}  // namespace tmmoe
