#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace tmmoe {

/// Speeds at or below zero are replaced by this value (and counted).
inline constexpr double kMinCouplingSpeed = 0.1;

/// n * (v_1 ... v_n)^(1/n) / (v_1 + ... + v_n) over the target and its
/// present neighbours (1 <= n <= 7), computed in log space. Adds the number
/// of clamped speeds to *clamped when given.
double coupling_degree(std::span<const double> speeds, std::size_t* clamped = nullptr);

struct SafetyThresholds {
  double ttc = 2.5;    // s
  double mttc = 2.5;   // s
  double drac = 3.35;  // m/s^2
};

/// Surrogate safety measures for a follower behind a leader. Empty optionals
/// mean "no conflict course". `overlap` is set when gap <= 0.
struct SafetyMeasures {
  std::optional<double> ttc;
  std::optional<double> mttc;
  std::optional<double> drac;
  bool overlap = false;
};

/// gap: bumper-to-bumper distance [m]; speeds [m/s]; accelerations [m/s^2].
///   TTC  = gap / dv                          when dv = v_f - v_l > 0
///   MTTC = smallest t > 0 with gap = dv t + da t^2 / 2   (da = a_f - a_l)
///   DRAC = dv^2 / (2 gap)                    when dv > 0
SafetyMeasures safety_measures(double gap, double v_follow, double v_lead, double a_follow,
                               double a_lead);

struct ConflictFlags {
  bool ttc = false;
  bool mttc = false;
  bool drac = false;

  bool any() const { return ttc || mttc || drac; }
};

/// TTC <= 2.5 s, MTTC <= 2.5 s, DRAC >= 3.35 m/s^2 (all inclusive); every
/// flag is set on overlap.
ConflictFlags conflict_flags(const SafetyMeasures& m, const SafetyThresholds& t = {});

/// Composite indicator: 1 if any flag is set.
inline double conflict_indicator(double gap, double v_follow, double v_lead, double a_follow,
                                 double a_lead, const SafetyThresholds& t = {}) {
  return conflict_flags(safety_measures(gap, v_follow, v_lead, a_follow, a_lead), t).any() ? 1.0
                                                                                           : 0.0;
}

}  // namespace tmmoe
