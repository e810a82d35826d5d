#include "tmmoe/labeling.hpp"

#include <algorithm>

namespace tmmoe {
namespace {

// Signed distance past the boundary of `lane` on the side of `direction`;
// positive once the point is beyond it.
double beyond(const LaneGeometry& lanes, std::size_t lane, Intention direction, Point p) {
  if (direction == Intention::kRight) return p.y - lanes.line_y(lane + 1, p.x);
  return lanes.line_y(lane, p.x) - p.y;
}

bool inside(const LaneGeometry& lanes, std::size_t lane, Point p) {
  return p.y >= lanes.line_y(lane, p.x) && p.y < lanes.line_y(lane + 1, p.x);
}

}  // namespace

LceDetection detect_lce(std::span<const VehicleState> states, const LaneGeometry& lanes) {
  LceDetection out;
  if (states.empty()) return out;
  auto home = lanes.lane_of(states[0].center);
  if (!home) return out;
  std::size_t lane = *home;

  std::optional<std::size_t> start;
  Intention dir = Intention::kLeft;
  std::size_t target = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const VehicleState& s = states[i];
    if (!start) {
      for (Intention d : {Intention::kLeft, Intention::kRight}) {
        if (d == Intention::kLeft && lane == 0) continue;
        if (d == Intention::kRight && lane + 1 >= lanes.lane_count()) continue;
        if (beyond(lanes, lane, d, s.box[0]) > 0.0 || beyond(lanes, lane, d, s.box[1]) > 0.0) {
          start = i;
          dir = d;
          target = d == Intention::kRight ? lane + 1 : lane - 1;
          break;
        }
      }
      continue;
    }
    if (inside(lanes, target, s.box[2]) && inside(lanes, target, s.box[3])) {
      out.intervals.push_back({*start, i, dir, lane, target});
      lane = target;
      start.reset();
      continue;
    }
    const bool front_back_home =
        beyond(lanes, lane, dir, s.box[0]) <= 0.0 && beyond(lanes, lane, dir, s.box[1]) <= 0.0;
    if (front_back_home) start.reset();  // abandoned crossing
  }
  if (start) {
    out.incomplete_start = start;
    out.incomplete_direction = dir;
  }
  return out;
}

LcdResult detect_lcd(std::span<const double> vy, std::size_t lce_start, Intention direction,
                     const LcdThresholds& thresholds, std::size_t floor) {
  const double sign = direction == Intention::kRight ? 1.0 : -1.0;
  const double threshold = thresholds.for_direction(direction);
  std::size_t k = std::min(lce_start, vy.size());
  while (k > floor && sign * vy[k - 1] >= threshold) --k;
  return {k, k == lce_start};
}

TrackLabels label_track(std::span<const VehicleState> states, const LaneGeometry& lanes,
                        const LcdThresholds& thresholds) {
  TrackLabels out;
  out.per_state.assign(states.size(), Intention::kLaneKeep);
  const LceDetection lce = detect_lce(states, lanes);
  std::vector<double> vy(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) vy[i] = states[i].vy;
  std::size_t floor = 0;
  for (const auto& iv : lce.intervals) {
    const LcdResult lcd = detect_lcd(vy, iv.start, iv.direction, thresholds, floor);
    for (std::size_t i = lcd.start; i < iv.start; ++i) out.per_state[i] = iv.direction;
    for (std::size_t i = iv.start; i <= iv.end; ++i) out.per_state[i].reset();
    out.lcd.push_back(lcd);
    if (lcd.degenerate) ++out.degenerate;
    floor = iv.end + 1;
  }
  if (lce.incomplete_start) {
    // The decision phase before an unfinished crossing is unlabeled as well.
    out.incomplete = true;
    const std::size_t from =
        detect_lcd(vy, *lce.incomplete_start, lce.incomplete_direction, thresholds, floor).start;
    for (std::size_t i = from; i < states.size(); ++i) out.per_state[i].reset();
  }
  out.lce = lce.intervals;
  return out;
}

}  // namespace tmmoe
