#include "tmmoe/windows.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "tmmoe/random.hpp"

namespace tmmoe {
namespace {

struct Neighbour {
  const VehicleState* state = nullptr;
};

double front_x(const VehicleState& s) {
  double m = s.box[0].x;
  for (const auto& p : s.box) m = std::max(m, p.x);
  return m;
}

double rear_x(const VehicleState& s) {
  double m = s.box[0].x;
  for (const auto& p : s.box) m = std::min(m, p.x);
  return m;
}

// Conflict indicator for `follower` closing on `leader`.
double conflict(const VehicleState& follower, const VehicleState& leader,
                const SafetyThresholds& t) {
  const double gap = rear_x(leader) - front_x(follower);
  return conflict_indicator(gap, follower.vx, leader.vx, follower.ax, leader.ax, t);
}

}  // namespace

SceneIndex::SceneIndex(const std::vector<SmoothedTrack>& tracks, const LaneGeometry& lanes) {
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    for (std::size_t i = 0; i < tracks[t].states.size(); ++i) {
      const VehicleState& s = tracks[t].states[i];
      frames_[s.frame].push_back({t, i, lanes.lane_of(s.center)});
    }
  }
}

const std::vector<SceneIndex::Entry>& SceneIndex::at(std::int64_t frame) const {
  static const std::vector<Entry> kEmpty;
  auto it = frames_.find(frame);
  return it == frames_.end() ? kEmpty : it->second;
}

std::vector<std::vector<double>> track_features(const std::vector<SmoothedTrack>& tracks,
                                                std::size_t track, const SceneIndex& index,
                                                const LaneGeometry& lanes,
                                                const WindowOptions& options,
                                                std::size_t* clamped) {
  namespace f = feature;
  const auto& states = tracks.at(track).states;
  std::vector<std::vector<double>> rows(states.size());
  if (states.empty()) return rows;
  const auto start_lane = lanes.lane_of(states[0].center);
  if (!start_lane) return rows;

  for (std::size_t i = 0; i < states.size(); ++i) {
    const VehicleState& s = states[i];
    const auto lane = lanes.lane_of(s.center);
    if (!lane) continue;
    std::vector<double> row(f::kCount, 0.0);
    row[f::kLongitudinal] = s.center.x;
    row[f::kLateral] = s.center.y - lanes.centre_y(*start_lane, s.center.x);
    row[f::kSpeedX] = s.vx;
    row[f::kSpeedY] = s.vy;
    row[f::kAccelX] = s.ax;

    std::array<const VehicleState*, f::kNeighbourSlots> slots{};
    std::array<double, f::kNeighbourSlots> best{};
    for (const auto& e : index.at(s.frame)) {
      if (e.track == track || !e.lane) continue;
      const VehicleState& o = tracks[e.track].states[e.state];
      std::size_t base;
      if (*e.lane == *lane) {
        base = static_cast<std::size_t>(Slot::kFront);
      } else if (*e.lane + 1 == *lane) {
        base = static_cast<std::size_t>(Slot::kLeftFront);
      } else if (*e.lane == *lane + 1) {
        base = static_cast<std::size_t>(Slot::kRightFront);
      } else {
        continue;
      }
      const double dx = o.center.x - s.center.x;
      const std::size_t slot = dx >= 0.0 ? base : base + 1;
      if (!slots[slot] || std::abs(dx) < best[slot]) {
        slots[slot] = &o;
        best[slot] = std::abs(dx);
      }
    }
    std::vector<double> speeds{s.speed()};
    for (std::size_t k = 0; k < f::kNeighbourSlots; ++k) {
      if (!slots[k]) continue;
      const VehicleState& o = *slots[k];
      const std::size_t c = f::kNeighbourBase + k * f::kNeighbourWidth;
      row[c] = 1.0;
      row[c + 1] = o.center.x - s.center.x;
      row[c + 2] = o.center.y - s.center.y;
      row[c + 3] = o.vx - s.vx;
      speeds.push_back(o.speed());
    }
    row[f::kCoupling] = coupling_degree(speeds, clamped);

    auto slot = [&](Slot k) { return slots[static_cast<std::size_t>(k)]; };
    if (auto* lead = slot(Slot::kFront)) row[f::kConflictBase] = conflict(s, *lead, options.safety);
    if (auto* back = slot(Slot::kRear)) row[f::kConflictBase + 1] = conflict(*back, s, options.safety);
    // Target side from the lateral speed; both sides while it is below the
    // decision thresholds.
    const bool right = s.vy >= options.lcd.right;
    const bool left = -s.vy >= options.lcd.left;
    const bool both = !right && !left;
    double side_front = 0.0, side_rear = 0.0;
    if (left || both) {
      if (auto* o = slot(Slot::kLeftFront)) side_front = std::max(side_front, conflict(s, *o, options.safety));
      if (auto* o = slot(Slot::kLeftRear)) side_rear = std::max(side_rear, conflict(*o, s, options.safety));
    }
    if (right || both) {
      if (auto* o = slot(Slot::kRightFront)) side_front = std::max(side_front, conflict(s, *o, options.safety));
      if (auto* o = slot(Slot::kRightRear)) side_rear = std::max(side_rear, conflict(*o, s, options.safety));
    }
    row[f::kConflictBase + 2] = side_front;
    row[f::kConflictBase + 3] = side_rear;
    rows[i] = std::move(row);
  }
  return rows;
}

WindowSet extract_windows(const std::vector<SmoothedTrack>& tracks, const LaneGeometry& lanes,
                          const WindowOptions& options, PrepStats* stats) {
  if (options.stride == 0) throw std::invalid_argument("window stride must be >= 1");
  if (!(options.duration_s > 0.0) || !(options.horizon_s > 0.0)) {
    throw std::invalid_argument("window duration and horizon must be positive");
  }
  const double dt = tracks.empty() ? 0.1 : tracks.front().dt;
  const auto T = static_cast<std::size_t>(std::llround(options.duration_s / dt));
  const auto P = static_cast<std::size_t>(std::llround(options.horizon_s / dt));
  WindowSet set;
  set.steps = T;
  set.features = feature::kCount;
  set.horizon = P;
  set.sample_rate_hz = 1.0 / dt;

  PrepStats local;
  PrepStats& st = stats ? *stats : local;
  const SceneIndex index(tracks, lanes);
  double lcd_total = 0.0;
  std::size_t lcd_count = 0;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    const SmoothedTrack& track = tracks[t];
    if (!options.targets.empty() && !options.targets.contains(track.vehicle_id)) continue;
    ++st.tracks;
    const TrackLabels labels = label_track(track.states, lanes, options.lcd);
    st.lane_changes += labels.lce.size();
    st.degenerate_lcd += labels.degenerate;
    st.incomplete_lce += labels.incomplete ? 1 : 0;
    const Intention manoeuvre = labels.lce.empty() ? Intention::kLaneKeep : labels.lce.front().direction;
    ++st.vehicles[static_cast<std::size_t>(manoeuvre)];
    for (std::size_t k = 0; k < labels.lce.size(); ++k) {
      lcd_total += static_cast<double>(labels.lce[k].start - labels.lcd[k].start) * dt;
      ++lcd_count;
    }
    const std::size_t n = track.states.size();
    if (n < T + P) continue;
    const auto rows = track_features(tracks, t, index, lanes, options, &st.clamped_speeds);
    // valid_run[i]: number of consecutive usable rows ending at i.
    std::vector<std::size_t> run(n, 0);
    for (std::size_t i = 0; i < n; ++i) run[i] = rows[i].empty() ? 0 : (i ? run[i - 1] : 0) + 1;
    for (std::size_t e = T - 1; e + P < n; e += options.stride) {
      if (!labels.per_state[e] || run[e + P] < T + P) continue;
      FeatureWindow w;
      w.inputs = Tensor(Shape{T, feature::kCount});
      const double x_end = track.states[e].center.x;
      for (std::size_t k = 0; k < T; ++k) {
        const auto& row = rows[e + 1 - T + k];
        std::copy(row.begin(), row.end(), w.inputs.raw() + k * feature::kCount);
        w.inputs[k * feature::kCount + feature::kLongitudinal] -= x_end;
      }
      w.label = *labels.per_state[e];
      w.longitudinal = Tensor(Shape{P});
      w.lateral = Tensor(Shape{P});
      const double y_end = rows[e][feature::kLateral];
      for (std::size_t p = 0; p < P; ++p) {
        w.longitudinal[p] = track.states[e + 1 + p].center.x - x_end;
        w.lateral[p] = rows[e + 1 + p][feature::kLateral] - y_end;
      }
      w.last_x = x_end;
      w.last_y = y_end;
      w.vehicle_id = track.vehicle_id;
      w.end_frame = track.states[e].frame;
      set.windows.push_back(std::move(w));
    }
  }
  st.mean_lcd_seconds = lcd_count ? lcd_total / static_cast<double>(lcd_count) : 0.0;
  set.validate();
  return set;
}

WindowSet prepare_windows(const std::vector<TrajectoryRecord>& records,
                          const std::vector<std::vector<Point>>& markings,
                          const WindowOptions& options, PrepStats* stats) {
  PrepStats local;
  PrepStats& st = stats ? *stats : local;
  const LaneReconstruction lanes = reconstruct_lanes(markings);
  st.snapped_markings = lanes.snapped;
  std::vector<SmoothedTrack> tracks;
  for (const Track& t : group_tracks(records)) {
    if (t.records.size() < kSmoothingWindow) {
      ++st.short_tracks;
      continue;
    }
    // Split at frame gaps so smoothing sees consecutive frames only.
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= t.records.size(); ++i) {
      if (i < t.records.size() && t.records[i].frame == t.records[i - 1].frame + 1) continue;
      Track piece{t.vehicle_id, {t.records.begin() + static_cast<std::ptrdiff_t>(begin),
                                 t.records.begin() + static_cast<std::ptrdiff_t>(i)}};
      if (piece.records.size() >= kSmoothingWindow) {
        tracks.push_back(smooth_track(piece));
      } else {
        ++st.short_tracks;
      }
      begin = i;
    }
  }
  return extract_windows(tracks, lanes.geometry, options, &st);
}

WindowSet balance_windows(const WindowSet& set, std::array<std::size_t, 3> per_label,
                          std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 3> by_label;
  for (std::size_t i = 0; i < set.size(); ++i) {
    by_label[static_cast<std::size_t>(set.windows[i].label)].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < 3; ++k) {
    if (by_label[k].size() < per_label[k]) {
      throw std::invalid_argument("balance_windows: " + std::to_string(by_label[k].size()) + " " +
                                  std::string(intention_name(intention_from_index(k))) +
                                  " windows, " + std::to_string(per_label[k]) + " requested");
    }
    rng.shuffle(std::span(by_label[k]));
    chosen.insert(chosen.end(), by_label[k].begin(),
                  by_label[k].begin() + static_cast<std::ptrdiff_t>(per_label[k]));
  }
  std::sort(chosen.begin(), chosen.end());
  return set.subset(chosen);
}

std::string summarize(const WindowSet& set, const PrepStats* stats) {
  nlohmann::ordered_json j;
  const auto counts = set.label_counts();
  j["windows"] = set.size();
  j["labels"] = {{"LK", counts[0]}, {"LCL", counts[1]}, {"LCR", counts[2]}};
  j["duration_s"] = static_cast<double>(set.steps) / set.sample_rate_hz;
  j["horizon_s"] = static_cast<double>(set.horizon) / set.sample_rate_hz;
  j["steps"] = set.steps;
  j["horizon_steps"] = set.horizon;
  j["features"] = set.features;
  j["sample_rate_hz"] = set.sample_rate_hz;
  j["config_hash"] = hash_hex(set.config_hash());
  if (stats) {
    j["tracks"] = stats->tracks;
    j["short_tracks"] = stats->short_tracks;
    j["lane_changes"] = stats->lane_changes;
    j["degenerate_lcd"] = stats->degenerate_lcd;
    j["incomplete_lce"] = stats->incomplete_lce;
    j["clamped_speeds"] = stats->clamped_speeds;
    j["snapped_markings"] = stats->snapped_markings;
    j["mean_lcd_s"] = stats->mean_lcd_seconds;
    j["vehicles"] = {{"LK", stats->vehicles[0]}, {"LCL", stats->vehicles[1]}, {"LCR", stats->vehicles[2]}};
  }
  return j.dump(2);
}

}  // namespace tmmoe
