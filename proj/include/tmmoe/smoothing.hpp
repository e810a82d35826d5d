#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tmmoe/trajectory.hpp"

namespace tmmoe {

inline constexpr std::size_t kSmoothingWindow = 15;  // frames at 30 Hz
inline constexpr std::size_t kDownsampling = 3;      // 30 Hz -> 10 Hz

/// Centred moving average. The window shrinks symmetrically near the ends,
/// so affine series pass through unchanged. `window` must be odd.
std::vector<double> moving_average(std::span<const double> xs, std::size_t window);

/// moving_average, then every `sampling`-th value starting at index 0.
/// Throws std::invalid_argument if xs is shorter than the window.
std::vector<double> smooth_trajectory(std::span<const double> xs,
                                      std::size_t window = kSmoothingWindow,
                                      std::size_t sampling = kDownsampling);

/// Smoothed kinematic state at the reduced rate.
struct VehicleState {
  std::int64_t frame = 0;
  Point center;
  std::array<Point, 4> box;  // front corners first
  double vx = 0.0;
  double vy = 0.0;  // + is rightward
  double ax = 0.0;
  double speed() const;
};

struct SmoothedTrack {
  std::int64_t vehicle_id = 0;
  double dt = 0.1;
  std::vector<VehicleState> states;
};

/// Smooths centre and box coordinates of one track and keeps frames whose
/// number is a multiple of `sampling`, so tracks stay aligned in time.
/// Velocities are central differences of the smoothed centre (one-sided at
/// the ends); acceleration likewise from vx. Frames must be consecutive.
SmoothedTrack smooth_track(const Track& track, double frame_rate_hz = 30.0,
                           std::size_t window = kSmoothingWindow,
                           std::size_t sampling = kDownsampling);

/// Central-difference derivative with one-sided ends.
std::vector<double> differentiate(std::span<const double> xs, double dt);

}  // namespace tmmoe
