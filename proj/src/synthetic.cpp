#include "tmmoe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "tmmoe/lanes.hpp"
#include "tmmoe/random.hpp"

namespace tmmoe {
namespace {

constexpr std::size_t kLanes = 3;
constexpr std::int64_t kSceneGapFrames = 300;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Motion {
  double x0 = 0.0, vx = 0.0, y0 = 0.0;
  double side = 0.0;  // -1 left, +1 right, 0 lane keeping
  double tc = 0.0, tau = 1.0;
  double length = 4.8, width = 1.9;

  Point centre(double t) const {
    const double lat = side == 0.0 ? 0.0 : side * kLaneWidth * sigmoid((t - tc) / tau);
    return {x0 + vx * t, y0 + lat};
  }
  double vy(double t) const {
    if (side == 0.0) return 0.0;
    const double s = sigmoid((t - tc) / tau);
    return side * kLaneWidth / tau * s * (1.0 - s);
  }
  // Front corners first.
  std::array<Point, 4> box(double t) const {
    const Point c = centre(t);
    const double h = std::atan2(vy(t), vx);
    const double fx = std::cos(h), fy = std::sin(h);
    auto corner = [&](double a, double b) {
      return Point{c.x + a * fx - b * fy, c.y + a * fy + b * fx};
    };
    const double a = 0.5 * length, b = 0.5 * width;
    return {corner(a, -b), corner(a, b), corner(-a, -b), corner(-a, b)};
  }
};

// Root of an increasing-or-decreasing f on [lo, hi], with f(lo), f(hi) of
// opposite sign.
double bisect(const std::function<double(double)>& f, double lo, double hi) {
  const double flo = f(lo);
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    if ((f(mid) > 0.0) == (flo > 0.0)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void emit(std::vector<TrajectoryRecord>& out, const Motion& m, std::int64_t id,
          std::int64_t first_frame, std::size_t frames, double rate, double noise, Rng& rng) {
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) / rate;
    const double nx = rng.normal(0.0, noise), ny = rng.normal(0.0, noise);
    TrajectoryRecord r;
    r.frame = first_frame + static_cast<std::int64_t>(k);
    r.vehicle_id = id;
    r.center = m.centre(t);
    r.center.x += nx;
    r.center.y += ny;
    r.box = m.box(t);
    for (auto& p : r.box) {
      p.x += nx;
      p.y += ny;
    }
    r.lane_id = static_cast<int>(std::floor(r.center.y / kLaneWidth)) + 1;
    r.speed = std::hypot(m.vx, m.vy(t));
    r.heading_deg = std::atan2(m.vy(t), m.vx) * 180.0 / M_PI;
    out.push_back(r);
  }
}

}  // namespace

std::optional<Intention> SyntheticTruth::label_at(double frame) const {
  if (label == Intention::kLaneKeep || frame < lcd_start || frame > lce_end) {
    return Intention::kLaneKeep;
  }
  if (frame < lce_start) return label;
  return std::nullopt;
}

const SyntheticTruth* SyntheticCorpus::truth_for(std::int64_t vehicle_id) const {
  for (const auto& t : targets) {
    if (t.vehicle_id == vehicle_id) return &t;
  }
  return nullptr;
}

SyntheticCorpus generate_synthetic(std::uint64_t seed, const SyntheticOptions& o) {
  if (!(o.tau_min > 0.0) || o.tau_max < o.tau_min) {
    throw std::invalid_argument("lane-change steepness tau must be positive with min <= max");
  }
  if (!(o.frame_rate_hz > 0.0) || !(o.scene_seconds > 0.0) || o.speed_max < o.speed_min ||
      o.change_time_max < o.change_time_min || o.change_time_min < 0.0 ||
      o.change_time_max > o.scene_seconds) {
    throw std::invalid_argument("inconsistent synthetic options");
  }
  Rng rng(seed);
  SyntheticCorpus corpus;

  const double road_end = o.speed_max * o.scene_seconds + 200.0;
  for (std::size_t line = 0; line <= kLanes; ++line) {
    std::vector<Point> marking;
    for (double x = -200.0; x <= road_end; x += 10.0) {
      marking.push_back({x, static_cast<double>(line) * kLaneWidth + rng.normal(0.0, 0.02)});
    }
    corpus.markings.push_back(std::move(marking));
  }

  std::vector<Intention> plan;
  for (std::size_t k = 0; k < 3; ++k) plan.insert(plan.end(), o.counts[k], intention_from_index(k));

  const auto frames = static_cast<std::size_t>(std::llround(o.scene_seconds * o.frame_rate_hz));
  const auto stride = static_cast<std::int64_t>((frames + kSceneGapFrames + 2) / 3 * 3);
  std::int64_t next_id = 1;
  for (std::size_t scene = 0; scene < plan.size(); ++scene) {
    const std::int64_t first = static_cast<std::int64_t>(scene) * stride;
    Motion target;
    target.vx = rng.uniform(o.speed_min, o.speed_max);
    target.y0 = 1.5 * kLaneWidth;
    target.length = 4.8 + rng.uniform(-0.3, 0.3);
    target.width = 1.9 + rng.uniform(-0.1, 0.1);
    target.tc = rng.uniform(o.change_time_min, o.change_time_max);
    target.tau = rng.uniform(o.tau_min, o.tau_max);
    target.side = plan[scene] == Intention::kLeft ? -1.0 : plan[scene] == Intention::kRight ? 1.0 : 0.0;

    SyntheticTruth truth;
    truth.vehicle_id = next_id++;
    truth.label = plan[scene];
    truth.first_frame = first;
    truth.last_frame = first + static_cast<std::int64_t>(frames) - 1;
    truth.tau = target.tau;
    const auto to_frame = [&](double t) { return static_cast<double>(first) + t * o.frame_rate_hz; };
    truth.change_frame = to_frame(target.tc);
    if (target.side != 0.0) {
      const double s = target.side;
      const double boundary = s < 0 ? kLaneWidth : 2.0 * kLaneWidth;
      const double lo = target.tc - 12.0 * target.tau, hi = target.tc + 12.0 * target.tau;
      const double t_lce = bisect(
          [&](double t) {
            const auto b = target.box(t);
            return std::max(s * (b[0].y - boundary), s * (b[1].y - boundary));
          },
          lo, hi);
      const double t_end = bisect(
          [&](double t) {
            const auto b = target.box(t);
            return std::min(s * (b[2].y - boundary), s * (b[3].y - boundary));
          },
          lo, hi);
      const double q = o.lcd_threshold * target.tau / kLaneWidth;
      double t_lcd = t_lce;
      if (q <= 0.25) {
        const double sig = 0.5 * (1.0 - std::sqrt(1.0 - 4.0 * q));
        t_lcd = std::min(t_lce, target.tc + target.tau * std::log(sig / (1.0 - sig)));
      }
      truth.lcd_start = to_frame(t_lcd);
      truth.lce_start = to_frame(t_lce);
      truth.lce_end = to_frame(t_end);
    }
    emit(corpus.records, target, truth.vehicle_id, first, frames, o.frame_rate_hz,
         o.position_noise, rng);
    corpus.targets.push_back(truth);

    for (std::size_t lane = 0; lane < kLanes; ++lane) {
      for (double ahead : {1.0, -1.0}) {
        if (rng.uniform() >= o.neighbour_probability) continue;
        Motion n;
        n.x0 = ahead * rng.uniform(25.0, 60.0);
        n.vx = target.vx + rng.uniform(-0.5, 0.5);
        n.y0 = (static_cast<double>(lane) + 0.5) * kLaneWidth;
        n.length = 4.8 + rng.uniform(-0.3, 0.3);
        n.width = 1.9 + rng.uniform(-0.1, 0.1);
        emit(corpus.records, n, next_id++, first, frames, o.frame_rate_hz, o.position_noise, rng);
      }
    }
  }
  return corpus;
}

WindowSet conflict_corpus(std::size_t per_label, std::size_t steps, std::size_t horizon,
                          std::uint64_t seed, std::size_t tail) {
  if (steps == 0 || horizon == 0 || tail == 0 || tail > steps) {
    throw std::invalid_argument("conflict_corpus: need 0 < tail <= steps and horizon > 0");
  }
  namespace f = feature;
  Rng rng(seed);
  WindowSet set;
  set.steps = steps;
  set.horizon = horizon;
  for (std::size_t i = 0; i < 3 * per_label; ++i) {
    FeatureWindow w;
    w.label = intention_from_index(i % 3);
    w.inputs = Tensor(Shape{steps, f::kCount});
    const double vx = rng.uniform(20.0, 30.0);
    for (std::size_t t = 0; t < steps; ++t) {
      double* row = w.inputs.raw() + t * f::kCount;
      for (std::size_t c = 0; c < f::kCoupling; ++c) row[c] = rng.normal();
      row[f::kSpeedX] = vx + rng.normal(0.0, 0.1);
      row[f::kCoupling] = rng.uniform(0.5, 1.0);
      const bool in_tail = t + tail >= steps;
      for (std::size_t c = 0; c < f::kConflictCount; ++c) {
        row[f::kConflictBase + c] = !in_tail && rng.uniform() < 0.1 ? 1.0 : 0.0;
      }
      if (in_tail && w.label == Intention::kLeft) row[f::kConflictBase] = 1.0;
      if (in_tail && w.label == Intention::kRight) row[f::kConflictBase + 3] = 1.0;
    }
    w.longitudinal = Tensor(Shape{horizon});
    w.lateral = Tensor(Shape{horizon});
    for (std::size_t p = 0; p < horizon; ++p) {
      w.longitudinal[p] = vx * static_cast<double>(p + 1) / set.sample_rate_hz;
    }
    w.vehicle_id = static_cast<std::int64_t>(i);
    set.windows.push_back(std::move(w));
  }
  return set;
}

}  // namespace tmmoe
