// Acceptance harness: one PASS/FAIL line per criterion.
//
//   tmmoe_acceptance [--only N ...] [--expect-fail N ...]
//
// Exits 0 when the set of failing criteria equals the --expect-fail set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "tmmoe/diagnostics.hpp"
#include "tmmoe/loss.hpp"
#include "tmmoe/metrics.hpp"
#include "tmmoe/mmoe.hpp"
#include "tmmoe/optim.hpp"
#include "tmmoe/random.hpp"
#include "tmmoe/safety.hpp"
#include "tmmoe/synthetic.hpp"
#include "tmmoe/tcn.hpp"
#include "tmmoe/trainer.hpp"
#include "tmmoe/windows.hpp"

using namespace tmmoe;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename... Args>
std::string fmt(const Args&... args) {
  std::ostringstream s;
  s << std::setprecision(6);
  (s << ... << args);
  return s.str();
}

Tensor normal_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradient_correctness() {
  ModelConfig c;
  c.window_steps = 20;
  c.horizon_steps = 5;
  c.tcn_filters = 4;
  c.num_experts = 3;
  c.expert_hidden = 4;
  c.gate_hidden = 3;
  c.tower_hidden = 4;
  const auto t0 = Clock::now();
  const auto r = check_model_gradient(c, 2, 11);
  const double elapsed = seconds_since(t0);
  return {r.max_relative_error <= 1e-4 && elapsed <= 60.0,
          fmt("max error ", r.max_relative_error, " over ", r.entries_checked, " entries (worst ",
              r.worst_parameter, "), ", elapsed, " s")};
}

// ---- 2 ---------------------------------------------------------------------

Verdict causality() {
  TcnConfig cfg;
  cfg.input_channels = 6;
  cfg.filters = 8;
  cfg.window_length = 24;
  const TcnStack stack("tcn", cfg);
  Rng rng(21);
  NamedTensors params, buffers;
  stack.init(params, buffers, rng);
  // Non-trivial running statistics so eval mode is not an identity.
  for (auto& [name, t] : buffers) {
    for (double& v : t.data()) v = name.ends_with("var") ? rng.uniform(0.5, 2.0) : rng.normal(0.0, 0.3);
  }
  const std::size_t T = cfg.window_length;
  std::size_t violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = normal_tensor(rng, {T, cfg.input_channels});
    Tensor y = x;
    const std::size_t t0 = rng.below(T - 1);
    for (std::size_t t = t0 + 1; t < T; ++t) {
      for (std::size_t f = 0; f < cfg.input_channels; ++f) y.at(t, f) += rng.normal(0.0, 5.0);
    }
    Tape tape;
    NamedTensors b1 = buffers, b2 = buffers;
    const Tensor out_x = stack.forward(tape, params, b1, tape.constant(x), Mode::kEval).value();
    const Tensor out_y = stack.forward(tape, params, b2, tape.constant(y), Mode::kEval).value();
    const std::size_t width = out_x.size() / T;
    if (std::memcmp(out_x.data().data(), out_y.data().data(), (t0 + 1) * width * sizeof(double)) != 0) {
      ++violations;
    }
  }

  // Three dilated convolutions (k = 2, d = 1, 2, 4): exact dependency set.
  const std::size_t L = 16;
  std::vector<ConvSpec> specs;
  NamedTensors conv;
  for (std::size_t d : {1, 2, 4}) {
    ConvSpec s;
    s.dilation = d;
    specs.push_back(s);
    Tensor w({2, 1, 1});
    for (double& v : w.data()) v = rng.uniform(0.5, 1.5);
    conv.set("c" + std::to_string(d) + ".weight", w);
    conv.set("c" + std::to_string(d) + ".bias", Tensor::vector({rng.normal()}));
  }
  auto run = [&](const Tensor& in) {
    Tape tape;
    Var h = tape.constant(in);
    for (const auto& s : specs) h = dilated_causal_conv(tape, conv, "c" + std::to_string(s.dilation), s, h);
    return h.value();
  };
  const Tensor base_in = normal_tensor(rng, {L, 1});
  const Tensor base = run(base_in);
  std::size_t mismatches = 0;
  for (std::size_t s = 0; s < L; ++s) {
    Tensor in = base_in;
    in.at(s, 0) += 1.0;
    const Tensor out = run(in);
    for (std::size_t t = 0; t < L; ++t) {
      const bool expected = s <= t && t - s <= 7;
      if ((out.at(t, 0) != base.at(t, 0)) != expected) ++mismatches;
    }
  }
  return {violations == 0 && mismatches == 0,
          fmt(violations, "/50 causality violations; dependency set t-7..t mismatches ", mismatches,
              "; residual stack receptive field ", receptive_field(2, 3))};
}

// ---- 3 ---------------------------------------------------------------------

Verdict gate_contract() {
  const std::size_t F = 6, T = 6, B = 4, n = 5, tasks = 3;
  const ExpertBank experts("expert", F, n, 3);
  const GateBank gates("gate", F, tasks, n, 4);
  double worst_sum = 0.0, worst_min = 1.0, worst_excess = -1.0;
  bool ok = true;
  for (std::uint64_t draw = 0; draw < 1000; ++draw) {
    Rng rng(1000 + draw);
    NamedTensors params;
    experts.init(params, rng);
    gates.init(params, rng);
    const double scale = std::exp(rng.uniform(-2.0, 2.5));
    for (auto& [name, t] : params) {
      for (double& v : t.data()) v *= scale;
    }
    Tape tape;
    const Var shared = tape.constant(normal_tensor(rng, {T, B, F}, rng.uniform(0.1, 5.0)));
    const Var outs = expert_forward(tape, experts, params, shared);
    const Tensor& e = outs.value();
    const std::size_t H = e.size() / (n * B);
    for (std::size_t k = 0; k < tasks; ++k) {
      const Var w = gate_forward(tape, gates, k, params, shared);
      const Tensor& wv = w.value();
      for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          s += wv.at(b, i);
          worst_min = std::min(worst_min, wv.at(b, i));
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
      const Tensor mixed = mmoe_mix(outs, w).value();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          double lo = e.data()[(0 * B + b) * H + h], hi = lo;
          for (std::size_t i = 1; i < n; ++i) {
            const double v = e.data()[(i * B + b) * H + h];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          const double m = mixed.at(b, h);
          const double slack = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
          worst_excess = std::max({worst_excess, lo - m, m - hi});
          if (m < lo - slack || m > hi + slack) ok = false;
        }
      }
    }
  }
  ok = ok && worst_min >= 0.0 && worst_sum <= 1e-12;
  return {ok, fmt("min weight ", worst_min, ", max |sum-1| ", worst_sum, ", max bound excess ",
                  worst_excess)};
}

// ---- 4 ---------------------------------------------------------------------

Verdict loss_balancing() {
  NamedTensors params;
  init_uncertainty(params);
  AdamState state;
  AdamOptions adam;
  adam.learning_rate = 1e-2;
  for (int step = 0; step < 2000; ++step) {
    Tape tape;
    const Var two = tape.constant(Tensor::scalar(2.0));
    const auto u = UncertaintyParams::bind(tape, params);
    const GradientMap g = tape.backward(joint_loss(two, two, two, u), params);
    adam_step(params, g, state, adam);
  }
  const double target = std::numbers::ln2;
  const double s_c = params.get(kLogVarClassification)[0];
  const double s_r1 = params.get(kLogVarLongitudinal)[0];
  const double s_r2 = params.get(kLogVarLateral)[0];
  const bool ok = std::abs(s_c - target) <= 1e-3 && std::abs(s_r1 - target) <= 1e-3 &&
                  std::abs(s_r2 - target) <= 1e-3;
  return {ok, fmt(std::setprecision(9), "s_c ", s_c, " s_r1 ", s_r1, " s_r2 ", s_r2, " vs ln 2 = ",
                  target, "; stationary points: s_c = ln(2 L_c) = ", std::log(4.0),
                  ", s_r = ln(L_r) = ", target)};
}

// ---- 5 ---------------------------------------------------------------------

Verdict learning_capability() {
  SyntheticOptions so;
  so.counts = {30, 30, 30};
  const auto corpus = generate_synthetic(2024, so);
  WindowOptions wo;
  wo.duration_s = 3.0;
  for (const auto& t : corpus.targets) wo.targets.insert(t.vehicle_id);
  const WindowSet all = prepare_windows(corpus.records, corpus.markings, wo);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& w = all.windows[i];
    if (w.label != Intention::kLaneKeep ||
        corpus.truth_for(w.vehicle_id)->label == Intention::kLaneKeep) {
      keep.push_back(i);
    }
  }
  const WindowSet set = balance_windows(all.subset(keep), {200, 200, 200}, 1);
  const Fold split = holdout_split(set.size(), 0.2, 1);
  const WindowSet train = set.subset(split.train), test = set.subset(split.validation);

  ModelConfig mc;
  mc.input_features = set.features;
  mc.window_steps = set.steps;
  mc.horizon_steps = set.horizon;
  TmmoeModel model(mc);
  model.initialize(1);
  const TrainConfig tc;  // batch 256, up to 200 epochs, 12 experts x 64 units

  const double budget = 600.0;
  const auto t0 = Clock::now();
  bool reached = false;
  double acc = 0.0, lat = 0.0, at = 0.0;
  std::size_t epoch = 0;
  const auto r = train_loop(train, &test, model, tc, {}, [&](const EpochRecord& e, const TmmoeModel& m) {
    const auto ev = evaluate(m, test).report;
    acc = ev.accuracy;
    lat = ev.lateral.rmse;
    epoch = e.epoch;
    at = seconds_since(t0);
    reached = acc >= 0.95 && lat <= 0.15 && at <= budget;
    return reached || at > budget;
  });
  return {reached, fmt(set.size(), " windows ", set.label_counts()[0], "/", set.label_counts()[1],
                       "/", set.label_counts()[2], "; epoch ", epoch, ": accuracy ", acc,
                       ", lateral RMSE ", lat, " m after ", at, " s")};
}

// ---- 6 ---------------------------------------------------------------------

Verdict ablation_direction() {
  const WindowSet set = conflict_corpus(40, 10, 4, 6, 3);
  ModelConfig mc;
  mc.input_features = set.features;
  mc.window_steps = set.steps;
  mc.horizon_steps = set.horizon;
  mc.tcn_filters = 8;
  mc.num_experts = 3;
  mc.expert_hidden = 8;
  mc.gate_hidden = 4;
  mc.tower_hidden = 8;
  TrainConfig tc;
  tc.max_epochs = 40;
  tc.batch_size = 32;
  tc.adam.learning_rate = 5e-3;
  tc.seed = 3;
  const auto r = ablation_run(set, {"conflict_indicator"}, mc, tc, 0.25, 2);
  return {r.dropped.accuracy < r.full.accuracy,
          fmt("held-out accuracy full ", r.full.accuracy, ", without conflict_indicator ",
              r.dropped.accuracy)};
}

// ---- 7 ---------------------------------------------------------------------

// Flags from stepping the two vehicles forward in time.
struct Simulated {
  bool ttc = false, mttc = false, drac = false;
};

// First time in [0, horizon] with gap(t) <= 0, by dense sampling and
// bisection on the first sign change.
std::optional<double> first_contact(const std::function<double(double)>& gap, double horizon) {
  const int steps = 25000;
  double prev_t = 0.0;
  if (gap(0.0) <= 0.0) return 0.0;
  for (int i = 1; i <= steps; ++i) {
    const double t = horizon * i / steps;
    if (gap(t) <= 0.0) {
      double lo = prev_t, hi = t;
      for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (lo + hi);
        (gap(mid) <= 0.0 ? hi : lo) = mid;
      }
      return hi;
    }
    prev_t = t;
  }
  return std::nullopt;
}

Simulated simulate(double gap0, double vf, double vl, double af, double al, const SafetyThresholds& th) {
  Simulated s;
  const double dv = vf - vl, da = af - al;
  // Constant speeds.
  s.ttc = first_contact([&](double t) { return gap0 - dv * t; }, th.ttc).has_value();
  // Constant accelerations.
  s.mttc = first_contact([&](double t) { return gap0 - dv * t - 0.5 * da * t * t; }, th.mttc).has_value();
  // Follower brakes at the threshold rate until it matches the leader's speed.
  if (gap0 <= 0.0) {
    s.drac = true;
  } else if (dv > 0.0) {
    const double t_match = dv / th.drac;
    s.drac = first_contact([&](double t) { return gap0 - dv * t + 0.5 * th.drac * t * t; }, t_match)
                 .has_value();
  }
  return s;
}

Verdict feature_oracles() {
  Rng rng(77);
  std::size_t coupling_bad = 0;
  double coupling_err = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(7);
    std::vector<double> v(n);
    const bool equal = rng.uniform() < 0.1;
    const double common = rng.uniform(0.5, 40.0);
    for (double& x : v) x = equal ? common : rng.uniform(0.5, 40.0);
    double prod = 1.0, total = 0.0;
    for (double x : v) prod *= x, total += x;
    const double expected = static_cast<double>(n) * std::pow(prod, 1.0 / static_cast<double>(n)) / total;
    const double got = coupling_degree(v);
    coupling_err = std::max(coupling_err, std::abs(got - expected));
    const bool all_equal = std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    if (std::abs(got - expected) > 1e-12 || (all_equal != (std::abs(got - 1.0) <= 1e-12))) ++coupling_bad;
  }
  const std::array<double, 2> pair{10.0, 40.0};
  const double pair_c = coupling_degree(pair);
  if (std::abs(pair_c - 0.8) > 1e-12) ++coupling_bad;

  const SafetyThresholds th;
  std::size_t flag_bad = 0, near_threshold = 0;
  std::array<std::size_t, 3> flagged{};
  for (int trial = 0; trial < 1000; ++trial) {
    const double gap = rng.uniform() < 0.02 ? rng.uniform(-2.0, 0.0) : rng.uniform(0.5, 60.0);
    const double vf = rng.uniform(0.0, 35.0), vl = rng.uniform(0.0, 35.0);
    const double af = rng.uniform(-4.0, 4.0), al = rng.uniform(-4.0, 4.0);
    const SafetyMeasures m = safety_measures(gap, vf, vl, af, al);
    const ConflictFlags f = conflict_flags(m, th);
    const Simulated s = simulate(gap, vf, vl, af, al, th);
    flagged[0] += s.ttc, flagged[1] += s.mttc, flagged[2] += s.drac;
    auto near = [](const std::optional<double>& v, double t) { return v && std::abs(*v - t) <= 1e-9; };
    const std::array<bool, 3> differs{f.ttc != s.ttc, f.mttc != s.mttc, f.drac != s.drac};
    const std::array<bool, 3> excused{near(m.ttc, th.ttc), near(m.mttc, th.mttc), near(m.drac, th.drac)};
    for (int k = 0; k < 3; ++k) {
      if (differs[k]) (excused[k] ? near_threshold : flag_bad)++;
    }
  }
  return {coupling_bad == 0 && flag_bad == 0,
          fmt("coupling mismatches ", coupling_bad, "/10000 (max error ", coupling_err,
              ", C(10, 40) = ", pair_c, "); flag mismatches ", flag_bad, "/3000, ", near_threshold,
              " at thresholds (simulated conflicts TTC ", flagged[0], ", MTTC ", flagged[1],
              ", DRAC ", flagged[2], ")")};
}

// ---- 8 ---------------------------------------------------------------------

Verdict labeling_round_trip() {
  std::size_t total = 0, agree = 0;
  for (std::uint64_t seed : {2024u, 7u, 99u}) {
    SyntheticOptions so;
    so.counts = {10, 10, 10};
    const auto corpus = generate_synthetic(seed, so);
    for (double d : {3.0, 6.0}) {
      WindowOptions wo;
      wo.duration_s = d;
      for (const auto& t : corpus.targets) wo.targets.insert(t.vehicle_id);
      const WindowSet set = prepare_windows(corpus.records, corpus.markings, wo);
      for (const auto& w : set.windows) {
        agree += corpus.truth_for(w.vehicle_id)->label_at(static_cast<double>(w.end_frame)) == w.label;
      }
      total += set.size();
    }
  }
  const double rate = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  return {total > 0 && rate >= 0.95, fmt(agree, "/", total, " windows (", 100.0 * rate, "%)")};
}

// ---- 9 ---------------------------------------------------------------------

Verdict determinism() {
  const WindowSet set = conflict_corpus(10, 8, 4, 9, 3);
  ModelConfig mc;
  mc.input_features = set.features;
  mc.window_steps = set.steps;
  mc.horizon_steps = set.horizon;
  mc.tcn_filters = 8;
  mc.num_experts = 3;
  mc.expert_hidden = 8;
  mc.gate_hidden = 4;
  mc.tower_hidden = 8;
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.batch_size = 8;
  tc.seed = 13;
  const Fold split = holdout_split(set.size(), 0.2, 4);
  const WindowSet train = set.subset(split.train), test = set.subset(split.validation);
  auto once = [&] {
    TmmoeModel m(mc);
    m.initialize(5);
    return train_loop(train, &test, m, tc);
  };
  const auto a = once(), b = once();
  auto summary_bits = [](const LossSummary& s) {
    return std::array<double, 4>{s.joint, s.classification, s.longitudinal, s.lateral};
  };
  bool same = a.history.size() == b.history.size();
  for (std::size_t i = 0; same && i < a.history.size(); ++i) {
    const auto x = summary_bits(a.history[i].train), y = summary_bits(b.history[i].train);
    const auto xt = summary_bits(*a.history[i].test), yt = summary_bits(*b.history[i].test);
    same = std::memcmp(x.data(), y.data(), sizeof x) == 0 && std::memcmp(xt.data(), yt.data(), sizeof xt) == 0;
  }

  const auto dir = std::filesystem::temp_directory_path() / ("tmmoe_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, a.model, {{"purpose", "acceptance"}});
  const Checkpoint loaded = load_checkpoint(dir);
  std::filesystem::remove_all(dir);
  std::vector<std::size_t> all(set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch batch = make_batch(set, all);
  const Predictions p = a.model.predict(batch), q = loaded.model.predict(batch);
  const bool restored = bit_equal(p.probabilities, q.probabilities) &&
                        bit_equal(p.longitudinal, q.longitudinal) && bit_equal(p.lateral, q.lateral);
  return {same && restored, fmt("histories over ", a.history.size(), " epochs ",
                                same ? "bit-identical" : "differ", "; checkpoint outputs ",
                                restored ? "bit-identical" : "differ")};
}

// ---- 10 --------------------------------------------------------------------

Verdict auc_oracle() {
  Rng rng(10);
  std::size_t bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    const bool ties = trial % 2 == 0;
    std::vector<double> scores(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    const double p = rng.uniform(0.05, 0.95);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = ties ? static_cast<double>(rng.below(6)) : rng.normal();
      pos[i] = rng.uniform() < p;
    }
    double wins = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < n; ++i) (pos[i] ? np : nn)++;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!pos[i] || pos[j]) continue;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    const auto got = auc(scores, std::span<const bool>(pos.get(), n));
    if (np == 0 || nn == 0) {
      if (got) ++bad;
      continue;
    }
    const double expected = wins / (static_cast<double>(np) * static_cast<double>(nn));
    if (!got) {
      ++bad;
      continue;
    }
    worst = std::max(worst, std::abs(*got - expected));
    if (*got != expected) ++bad;
  }
  return {bad == 0, fmt(bad, "/100 trials differ (max difference ", worst, ")")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TMMOE acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"causality", causality},
      {"gate contract", gate_contract},
      {"loss balancing", loss_balancing},
      {"learning capability", learning_capability},
      {"ablation direction", ablation_direction},
      {"feature oracles", feature_oracles},
      {"labeling round trip", labeling_round_trip},
      {"determinism and persistence", determinism},
      {"AUC oracle", auc_oracle},
  };
  const std::set<int> selected(only.begin(), only.end());
  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) failed.insert(id);
    std::cout << "Criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << v.detail << " [" << std::fixed << std::setprecision(1) << seconds_since(t0)
              << " s]" << std::defaultfloat << std::endl;
  }
  std::set<int> expected;
  for (int id : expect_fail) {
    if (selected.empty() || selected.contains(id)) expected.insert(id);
  }
  std::cout << failed.size() << " failed";
  if (!expected.empty()) std::cout << " (" << expected.size() << " expected)";
  std::cout << "\n";
  return failed == expected ? 0 : 1;
}
