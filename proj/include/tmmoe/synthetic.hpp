#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/trajectory.hpp"

namespace tmmoe {

/// Straight three-lane road, one scene per target vehicle. Each target starts
/// at the centre of the middle lane; lane changers follow
///   y(t) = y0 + s * w * sigmoid((t - t_c) / tau)
/// with s = -1 for LCL and +1 for LCR. Every scene has its own frame range.
struct SyntheticOptions {
  std::array<std::size_t, 3> counts{10, 10, 10};  // LK, LCL, LCR targets
  double frame_rate_hz = 30.0;
  double scene_seconds = 24.0;
  double change_time_min = 12.0;  // t_c range within the scene [s]
  double change_time_max = 17.0;
  double tau_min = 1.2;  // steepness of the lateral profile [s]
  double tau_max = 1.2;
  double speed_min = 22.0;  // m/s
  double speed_max = 30.0;
  double position_noise = 0.03;  // m, per raw frame
  double neighbour_probability = 0.7;  // per slot
  double lcd_threshold = 0.3;  // m/s, used for the ground-truth decision onset
};

/// Ground truth of one target, in frames (fractional, from analytic motion).
struct SyntheticTruth {
  std::int64_t vehicle_id = 0;
  Intention label = Intention::kLaneKeep;
  std::int64_t first_frame = 0;
  std::int64_t last_frame = 0;
  double change_frame = 0.0;  // t_c
  double tau = 0.0;
  double lcd_start = 0.0;  // |v_y| reaches the threshold
  double lce_start = 0.0;  // first front corner over the boundary
  double lce_end = 0.0;    // both rear corners in the target lane

  /// Label at `frame`: the direction inside [lcd_start, lce_start), nothing
  /// inside the execution, LK elsewhere.
  std::optional<Intention> label_at(double frame) const;
};

struct SyntheticCorpus {
  std::vector<TrajectoryRecord> records;
  std::vector<std::vector<Point>> markings;
  std::vector<SyntheticTruth> targets;

  const SyntheticTruth* truth_for(std::int64_t vehicle_id) const;
};

/// Throws std::invalid_argument on a non-positive tau or inconsistent ranges.
SyntheticCorpus generate_synthetic(std::uint64_t seed, const SyntheticOptions& options = {});

/// Windows whose label is carried only by the conflict columns: LK has no
/// conflicts, LCL a front conflict and LCR a side-rear conflict over the
/// last `tail` steps. All other features are noise unrelated to the label.
WindowSet conflict_corpus(std::size_t per_label, std::size_t steps, std::size_t horizon,
                          std::uint64_t seed, std::size_t tail = 5);

}  // namespace tmmoe
