#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tmmoe/tensor.hpp"

namespace tmmoe {

/// Intention classes in one-hot order: LK (1,0,0), LCL (0,1,0), LCR (0,0,1).
enum class Intention : int { kLaneKeep = 0, kLeft = 1, kRight = 2 };

std::string_view intention_name(Intention label);
Intention intention_from_index(std::size_t index);

/// Per-frame input vector. Neighbour slots are the nearest preceding and
/// following vehicles in the current, left and right lanes; absent
/// neighbours have all four slot values zero, presence included.
namespace feature {
inline constexpr std::size_t kLongitudinal = 0;  // x - x at window end [m]
inline constexpr std::size_t kLateral = 1;       // offset from start-lane centre [m]
inline constexpr std::size_t kSpeedX = 2;        // [m/s]
inline constexpr std::size_t kSpeedY = 3;        // [m/s], + is rightward
inline constexpr std::size_t kAccelX = 4;        // [m/s^2]
inline constexpr std::size_t kNeighbourBase = 5;
inline constexpr std::size_t kNeighbourSlots = 6;
inline constexpr std::size_t kNeighbourWidth = 4;  // presence, dx, dy, dv
inline constexpr std::size_t kCoupling = kNeighbourBase + kNeighbourSlots * kNeighbourWidth;  // 29
inline constexpr std::size_t kConflictBase = kCoupling + 1;  // 30..33
inline constexpr std::size_t kConflictCount = 4;
inline constexpr std::size_t kCount = kConflictBase + kConflictCount;  // 34

/// Column names in order, for documentation and summaries.
const std::array<std::string, kCount>& names();

/// Columns belonging to an ablatable group: "coupling_degree" or
/// "conflict_indicator". Throws std::invalid_argument for other names.
std::vector<std::size_t> group_columns(std::string_view group);
}  // namespace feature

/// One training sample.
struct FeatureWindow {
  Tensor inputs;        // [T, F]
  Intention label = Intention::kLaneKeep;
  Tensor longitudinal;  // [P] displacement from the last observed position
  Tensor lateral;       // [P]
  double last_x = 0.0;  // last observed position, for absolute reconstruction
  double last_y = 0.0;
  std::int64_t vehicle_id = 0;
  std::int64_t end_frame = 0;
};

struct WindowSet {
  std::size_t steps = 0;
  std::size_t features = feature::kCount;
  std::size_t horizon = 0;
  double sample_rate_hz = 10.0;
  std::vector<FeatureWindow> windows;

  std::size_t size() const { return windows.size(); }
  std::array<std::size_t, 3> label_counts() const;
  /// Throws std::invalid_argument on shape mismatch, NaN, or a bad label.
  void validate() const;
  WindowSet subset(std::span<const std::size_t> indices) const;
  /// Hash of the layout fields (steps, features, horizon, rate), shared by an
  /// archive and every checkpoint trained on it.
  std::uint64_t config_hash() const;
};

std::string hash_hex(std::uint64_t hash);

/// Zeroes the given feature columns in every window.
void zero_features(WindowSet& set, std::span<const std::size_t> columns);

/// A time-major mini-batch.
struct Batch {
  Tensor inputs;        // [T, B, F]
  Tensor onehot;        // [B, 3]
  Tensor longitudinal;  // [B, P]
  Tensor lateral;       // [B, P]
  std::vector<Intention> labels;

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const WindowSet& set, std::span<const std::size_t> indices);

/// Archive: a TMMOE1 container with tensors
///   meta [4] = (steps, features, horizon, sample_rate_hz)
///   inputs [N, T, F], labels [N], longitudinal [N, P], lateral [N, P],
///   last_position [N, 2], provenance [N, 2] = (vehicle_id, end_frame)
void save_windows(const std::filesystem::path& path, const WindowSet& set);
WindowSet load_windows(const std::filesystem::path& path);

}  // namespace tmmoe
