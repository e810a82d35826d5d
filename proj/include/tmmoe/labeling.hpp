#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/lanes.hpp"
#include "tmmoe/smoothing.hpp"

namespace tmmoe {

/// Lane-change execution over state indices [start, end]: start is the first
/// state with a front corner beyond the boundary toward the target lane, end
/// the first state with both rear corners inside the target lane.
struct LceInterval {
  std::size_t start = 0;
  std::size_t end = 0;
  Intention direction = Intention::kLeft;
  std::size_t from_lane = 0;
  std::size_t to_lane = 0;
};

struct LceDetection {
  std::vector<LceInterval> intervals;  // completed crossings, in time order
  /// A crossing was still in progress at the end of the recording; states
  /// from `incomplete_start` on belong to no label.
  std::optional<std::size_t> incomplete_start;
  Intention incomplete_direction = Intention::kLeft;
};

/// Scans box corners against the lane lines. A crossing whose front corners
/// return to the original lane before completing is abandoned. Returns no
/// intervals if the first state is off the road.
LceDetection detect_lce(std::span<const VehicleState> states, const LaneGeometry& lanes);

struct LcdThresholds {
  double right = 0.3;  // m/s, lateral speed toward the right
  double left = 0.3;   // m/s, lateral speed toward the left
  /// Paper-literal leftward rule: a left decision whenever v_y < 0.
  bool literal_left_rule = false;

  double for_direction(Intention d) const {
    if (d == Intention::kRight) return right;
    return literal_left_rule ? 0.0 : left;
  }
};

struct LcdResult {
  std::size_t start = 0;  // first index of the decision phase
  bool degenerate = false;  // threshold not reached before the LCE start
};

/// Walks back from `lce_start` while the lateral speed toward `direction`
/// stays at or above its threshold. Never goes below `floor` (the end of a
/// previous lane change).
LcdResult detect_lcd(std::span<const double> vy, std::size_t lce_start, Intention direction,
                     const LcdThresholds& thresholds = {}, std::size_t floor = 0);

/// Per-state label: LCL/LCR inside a decision phase, LK otherwise, and empty
/// inside an execution phase or after an incomplete crossing.
struct TrackLabels {
  std::vector<std::optional<Intention>> per_state;
  std::vector<LceInterval> lce;
  std::vector<LcdResult> lcd;
  std::size_t degenerate = 0;
  bool incomplete = false;
};

TrackLabels label_track(std::span<const VehicleState> states, const LaneGeometry& lanes,
                        const LcdThresholds& thresholds = {});

}  // namespace tmmoe
