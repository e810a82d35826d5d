#include "tmmoe/safety.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tmmoe {

double coupling_degree(std::span<const double> speeds, std::size_t* clamped) {
  const std::size_t n = speeds.size();
  if (n < 1 || n > 7) {
    throw std::invalid_argument("coupling_degree: expected 1..7 speeds, got " + std::to_string(n));
  }
  double log_sum = 0.0, sum = 0.0;
  bool all_equal = true;
  double first = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = speeds[i];
    if (!std::isfinite(v)) throw std::invalid_argument("coupling_degree: non-finite speed");
    if (v <= 0.0) {
      v = kMinCouplingSpeed;
      if (clamped) ++*clamped;
    }
    if (i == 0) first = v;
    all_equal = all_equal && v == first;
    log_sum += std::log(v);
    sum += v;
  }
  if (all_equal) return 1.0;
  const double nd = static_cast<double>(n);
  const double c = nd * std::exp(log_sum / nd) / sum;
  return std::min(c, std::nextafter(1.0, 0.0));
}

SafetyMeasures safety_measures(double gap, double v_follow, double v_lead, double a_follow,
                               double a_lead) {
  SafetyMeasures m;
  if (gap <= 0.0) {
    m.overlap = true;
    return m;
  }
  const double dv = v_follow - v_lead;
  const double da = a_follow - a_lead;
  if (dv > 0.0) {
    m.ttc = gap / dv;
    m.drac = dv * dv / (2.0 * gap);
  }
  // Roots of (da/2) t^2 + dv t - gap = 0.
  if (da == 0.0) {
    if (dv > 0.0) m.mttc = gap / dv;
  } else {
    const double disc = dv * dv + 2.0 * da * gap;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      // Numerically stable pair of roots.
      const double q = -0.5 * (dv + std::copysign(sq, dv));
      double best = INFINITY;
      const double r1 = q != 0.0 ? -gap / q : INFINITY;  // = c / q with c = -gap
      const double r2 = q / (0.5 * da);
      for (double r : {r1, r2})
        if (r > 0.0 && r < best) best = r;
      if (std::isfinite(best)) m.mttc = best;
    }
  }
  return m;
}

ConflictFlags conflict_flags(const SafetyMeasures& m, const SafetyThresholds& t) {
  if (m.overlap) return {true, true, true};
  ConflictFlags f;
  f.ttc = m.ttc && *m.ttc <= t.ttc;
  f.mttc = m.mttc && *m.mttc <= t.mttc;
  f.drac = m.drac && *m.drac >= t.drac;
  return f;
}

}  // namespace tmmoe
