#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/labeling.hpp"
#include "tmmoe/lanes.hpp"
#include "tmmoe/safety.hpp"
#include "tmmoe/smoothing.hpp"

namespace tmmoe {

/// Vehicles present in each reduced-rate frame, built once and read-only.
class SceneIndex {
 public:
  struct Entry {
    std::size_t track = 0;
    std::size_t state = 0;
    std::optional<std::size_t> lane;
  };

  SceneIndex(const std::vector<SmoothedTrack>& tracks, const LaneGeometry& lanes);

  const std::vector<Entry>& at(std::int64_t frame) const;

 private:
  std::map<std::int64_t, std::vector<Entry>> frames_;
};

/// Neighbour slots in feature order.
enum class Slot : std::size_t {
  kFront = 0,
  kRear = 1,
  kLeftFront = 2,
  kLeftRear = 3,
  kRightFront = 4,
  kRightRear = 5
};

struct WindowOptions {
  double duration_s = 6.0;
  double horizon_s = 3.0;
  std::size_t stride = 1;
  LcdThresholds lcd;
  SafetyThresholds safety;
  /// Vehicles to cut windows from; every vehicle when empty. All vehicles
  /// still act as neighbours.
  std::set<std::int64_t> targets;
};

struct PrepStats {
  std::size_t tracks = 0;
  std::size_t short_tracks = 0;  // too short to smooth, dropped
  std::size_t lane_changes = 0;
  std::size_t degenerate_lcd = 0;
  std::size_t incomplete_lce = 0;
  std::size_t clamped_speeds = 0;
  std::size_t snapped_markings = 0;
  double mean_lcd_seconds = 0.0;
  /// Target vehicles by their first completed manoeuvre (LK when none).
  std::array<std::size_t, 3> vehicles{};
};

/// Feature rows [n_states][F] of one track; the longitudinal column holds
/// the absolute x (made relative per window). Rows are empty for states off
/// the road.
std::vector<std::vector<double>> track_features(const std::vector<SmoothedTrack>& tracks,
                                                std::size_t track, const SceneIndex& index,
                                                const LaneGeometry& lanes,
                                                const WindowOptions& options,
                                                std::size_t* clamped = nullptr);

/// Sliding windows over every target track. A window ending at state e has
/// inputs over states e-T+1..e, the label of state e, and displacement
/// targets over e+1..e+P. Windows reaching past the track, touching an
/// off-road state, or ending inside a lane-change execution are skipped.
WindowSet extract_windows(const std::vector<SmoothedTrack>& tracks, const LaneGeometry& lanes,
                          const WindowOptions& options, PrepStats* stats = nullptr);

/// Records and raw lane markings to windows: lane reconstruction, grouping,
/// smoothing, labelling and extraction.
WindowSet prepare_windows(const std::vector<TrajectoryRecord>& records,
                          const std::vector<std::vector<Point>>& markings,
                          const WindowOptions& options, PrepStats* stats = nullptr);

/// Seeded sample of exactly `per_label[k]` windows of each label. Throws
/// std::invalid_argument if a label has too few windows.
WindowSet balance_windows(const WindowSet& set, std::array<std::size_t, 3> per_label,
                          std::uint64_t seed);

/// JSON summary of a window set (label counts, D, horizon, layout hash).
std::string summarize(const WindowSet& set, const PrepStats* stats = nullptr);

}  // namespace tmmoe
