#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "tmmoe/trajectory.hpp"

namespace tmmoe {

inline constexpr double kLaneWidth = 3.75;

/// Lane line as y(x), linear between vertices and extrapolated from the end
/// segments. Vertices are sorted by x.
struct Polyline {
  std::vector<Point> points;

  double y_at(double x) const;
};

/// Lane lines ordered left to right (ascending y); lane k lies between lines
/// k and k + 1.
struct LaneGeometry {
  double width = kLaneWidth;
  std::vector<Polyline> lines;

  std::size_t lane_count() const { return lines.empty() ? 0 : lines.size() - 1; }
  double line_y(std::size_t line, double x) const { return lines.at(line).y_at(x); }
  double centre_y(std::size_t lane, double x) const {
    return 0.5 * (line_y(lane, x) + line_y(lane + 1, x));
  }
  /// Lane containing the point, if it lies between the outer lines.
  std::optional<std::size_t> lane_of(Point p) const;
};

struct LaneReconstruction {
  LaneGeometry geometry;
  /// Markings whose offset from the reference was more than 0.5 m away from a
  /// multiple of the lane width (snapped to the nearest multiple).
  std::size_t snapped = 0;
};

/// Projects every marking onto the leftmost one by whole lane widths, smooths
/// the merged points with a moving least-squares line over `window` neighbouring points
/// (shifted inward at the ends), and regenerates each line as a translate.
/// `line_count` fixes the number of lines produced (default: enough to span
/// the markings). Each marking needs at least two points.
LaneReconstruction reconstruct_lanes(const std::vector<std::vector<Point>>& markings,
                                     double width = kLaneWidth, std::size_t window = 9,
                                     std::optional<std::size_t> line_count = std::nullopt);

}  // namespace tmmoe
