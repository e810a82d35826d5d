#include "tmmoe/smoothing.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tmmoe {

std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("moving_average: window must be odd, got " + std::to_string(window));
  }
  const std::size_t n = xs.size(), half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = std::min({half, i, n - 1 - i});
    double s = 0.0;
    for (std::size_t j = i - r; j <= i + r; ++j) s += xs[j];
    out[i] = s / static_cast<double>(2 * r + 1);
  }
  return out;
}

std::vector<double> smooth_trajectory(std::span<const double> xs, std::size_t window,
                                      std::size_t sampling) {
  if (xs.size() < window) {
    throw std::invalid_argument("smooth_trajectory: series of " + std::to_string(xs.size()) +
                                " values is shorter than the window " + std::to_string(window));
  }
  if (sampling == 0) throw std::invalid_argument("smooth_trajectory: sampling must be >= 1");
  const std::vector<double> avg = moving_average(xs, window);
  std::vector<double> out;
  for (std::size_t i = 0; i < avg.size(); i += sampling) out.push_back(avg[i]);
  return out;
}

double VehicleState::speed() const { return std::hypot(vx, vy); }

std::vector<double> differentiate(std::span<const double> xs, double dt) {
  const std::size_t n = xs.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d[0] = (xs[1] - xs[0]) / dt;
  d[n - 1] = (xs[n - 1] - xs[n - 2]) / dt;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (xs[i + 1] - xs[i - 1]) / (2.0 * dt);
  return d;
}

SmoothedTrack smooth_track(const Track& track, double frame_rate_hz, std::size_t window,
                           std::size_t sampling) {
  const auto& recs = track.records;
  const std::size_t n = recs.size();
  if (n < window) {
    throw std::invalid_argument("track " + std::to_string(track.vehicle_id) + " has " +
                                std::to_string(n) + " frames, fewer than the smoothing window");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (recs[i].frame != recs[i - 1].frame + 1) {
      throw std::invalid_argument("track " + std::to_string(track.vehicle_id) +
                                  " has a gap before frame " + std::to_string(recs[i].frame));
    }
  }
  auto smoothed = [&](auto get) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get(recs[i]);
    return moving_average(v, window);
  };
  const auto cx = smoothed([](const auto& r) { return r.center.x; });
  const auto cy = smoothed([](const auto& r) { return r.center.y; });
  std::array<std::vector<double>, 8> box;
  for (std::size_t v = 0; v < 4; ++v) {
    box[2 * v] = smoothed([v](const auto& r) { return r.box[v].x; });
    box[2 * v + 1] = smoothed([v](const auto& r) { return r.box[v].y; });
  }

  SmoothedTrack out;
  out.vehicle_id = track.vehicle_id;
  out.dt = static_cast<double>(sampling) / frame_rate_hz;
  const auto step = static_cast<std::int64_t>(sampling);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < n; ++i) {
    if (recs[i].frame % step != 0) continue;
    VehicleState s;
    s.frame = recs[i].frame;
    s.center = {cx[i], cy[i]};
    for (std::size_t v = 0; v < 4; ++v) s.box[v] = {box[2 * v][i], box[2 * v + 1][i]};
    out.states.push_back(s);
    xs.push_back(cx[i]);
    ys.push_back(cy[i]);
  }
  const auto vx = differentiate(xs, out.dt);
  const auto vy = differentiate(ys, out.dt);
  const auto ax = differentiate(vx, out.dt);
  for (std::size_t k = 0; k < out.states.size(); ++k) {
    out.states[k].vx = vx[k];
    out.states[k].vy = vy[k];
    out.states[k].ax = ax[k];
  }
  return out;
}

}  // namespace tmmoe
