#include "tmmoe/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tmmoe/diagnostics.hpp"
#include "tmmoe/metrics.hpp"
#include "tmmoe/synthetic.hpp"
#include "tmmoe/trajectory.hpp"

namespace tmmoe::cli {
namespace fs = std::filesystem;

namespace {

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

[[noreturn]] void fail(int code, const std::string& what) { throw Failure(code, what); }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) fail(kData, what + " not found: " + p.string());
}

void require_output_parent(const fs::path& p) {
  const fs::path parent = fs::absolute(p).parent_path();
  if (!fs::is_directory(parent)) fail(kUsage, "output directory does not exist: " + parent.string());
}

// Writes through a sibling temporary and renames on success, so a failed
// command leaves nothing at `target`.
template <typename F>
void write_atomically(const fs::path& target, F&& write) {
  fs::path tmp = target;
  tmp += ".partial";
  fs::remove_all(tmp);
  try {
    write(tmp);
    fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

std::array<std::size_t, 3> parse_triple(const std::string& text, const std::string& what) {
  std::array<std::size_t, 3> v{};
  std::istringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) break;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v[i]);
    if (ec != std::errc() || ptr != part.data() + part.size()) break;
    ++i;
  }
  if (i != 3 || ss.rdbuf()->in_avail() > 0) {
    fail(kUsage, what + " must be three comma-separated counts (LK,LCL,LCR), got '" + text + "'");
  }
  return v;
}

std::set<std::int64_t> read_targets(const fs::path& path) {
  require_file(path, "target list");
  std::ifstream in(path);
  std::set<std::int64_t> ids;
  std::string line;
  while (std::getline(in, line)) {
    const std::string field = line.substr(0, line.find(','));
    std::int64_t id = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), id);
    if (ec == std::errc()) ids.insert(id);
  }
  if (ids.empty()) fail(kData, "no vehicle ids in " + path.string());
  return ids;
}

WindowSet load_archive(const fs::path& path) {
  require_file(path, "feature archive");
  WindowSet set = load_windows(path);
  set.validate();
  return set;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ",") + p;
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

void apply_drops(WindowSet& set, const std::vector<std::string>& groups) {
  for (const auto& g : groups) zero_features(set, feature::group_columns(g));
}

struct Options {
  std::string config;
  std::vector<std::string> overrides;
};

RunConfig make_config(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) {
    if (!fs::is_regular_file(o.config)) fail(kUsage, "config file not found: " + o.config);
    c.load(o.config);
  }
  for (const auto& kv : o.overrides) c.set(kv);
  c.validate();
  return c;
}

void add_config_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key=value settings file");
  cmd->add_option("--set", o.overrides, "override one setting, key=value (repeatable)");
}

// ---- commands --------------------------------------------------------------

struct PrepArgs {
  Options opts;
  std::string csv, lanes, out, targets;
  std::optional<double> window, horizon;
  bool reverse = false;
};

int cmd_prep(const PrepArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c = make_config(a.opts);
  auto text = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  if (a.window) c.set("window", text(*a.window));
  if (a.horizon) c.set("horizon", text(*a.horizon));
  if (a.reverse) c.set("reverse", "on");
  c.validate();
  require_file(a.csv, "trajectory CSV");
  require_file(a.lanes, "lane file");
  require_output_parent(a.out);
  WindowOptions wo = c.window_options();
  if (!a.targets.empty()) wo.targets = read_targets(a.targets);

  CsvOptions csv;
  csv.reverse = c.enabled("reverse");
  csv.max_malformed_fraction = c.number("max_malformed");
  CsvReport report;
  auto records = read_trajectory_csv(fs::path(a.csv), csv, report);
  if (report.malformed > 0) {
    err << report.malformed << " of " << report.rows << " rows malformed, skipped\n";
    for (const auto& m : report.messages) err << "  " << m << '\n';
  }
  const auto markings = read_lane_markings(fs::path(a.lanes), csv.reverse);
  PrepStats stats;
  WindowSet set = prepare_windows(records, markings, wo, &stats);
  const auto balance = parse_triple(c.get("balance"), "balance");
  if (balance != std::array<std::size_t, 3>{0, 0, 0}) set = balance_windows(set, balance, c.count("seed"));
  if (set.size() == 0) fail(kData, "no windows could be cut from " + a.csv);
  const std::string summary = summarize(set, &stats);
  write_atomically(a.out, [&](const fs::path& tmp) { save_windows(tmp, set); });
  fs::path summary_path = a.out;
  summary_path += ".json";
  std::ofstream(summary_path) << summary << '\n';
  out << summary << '\n';
  return kOk;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string counts = "10,10,10";
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  require_output_parent(a.out);
  SyntheticOptions o;
  o.counts = parse_triple(a.counts, "--counts");
  const SyntheticCorpus corpus = generate_synthetic(a.seed, o);
  write_atomically(a.out, [&](const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream csv(dir / "trajectories.csv");
    write_trajectory_csv(csv, corpus.records);
    std::ofstream lanes(dir / "lanes.txt");
    write_lane_markings(lanes, corpus.markings);
    std::ofstream truth(dir / "truth.csv");
    truth << "carId,label,change_frame,lcd_start,lce_start,lce_end\n" << std::setprecision(10);
    for (const auto& t : corpus.targets) {
      truth << t.vehicle_id << ',' << intention_name(t.label) << ',' << t.change_frame << ','
            << t.lcd_start << ',' << t.lce_start << ',' << t.lce_end << '\n';
    }
    if (!csv || !lanes || !truth) fail(kData, "cannot write corpus to " + dir.string());
  });
  out << "wrote " << corpus.records.size() << " rows, " << corpus.targets.size() << " targets to "
      << a.out << '\n';
  return kOk;
}

struct TrainArgs {
  Options opts;
  std::string data, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig c = make_config(a.opts);
  if (a.epochs) c.set("epochs", std::to_string(*a.epochs));
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  c.validate();
  require_output_parent(a.out);
  WindowSet data = load_archive(a.data);
  apply_drops(data, c.dropped_groups());

  const TrainConfig tc = c.train_config();
  const double test_fraction = c.number("test_fraction");
  WindowSet train = data, heldout;
  if (test_fraction > 0.0) {
    const Fold split = holdout_split(data.size(), test_fraction, c.count("split_seed"));
    train = data.subset(split.train);
    heldout = data.subset(split.validation);
  }
  TmmoeModel model(c.model_config(data));
  model.initialize(tc.seed);
  out << std::setprecision(6);
  const TrainResult r = train_loop(train, heldout.size() ? &heldout : nullptr, model, tc,
                                   [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " joint " << e.train.joint << " L_c " << e.train.classification
        << " L_r1 " << e.train.longitudinal << " L_r2 " << e.train.lateral;
    if (e.test) out << " test_joint " << e.test->joint;
    out << '\n';
  });

  std::map<std::string, std::string> manifest;
  for (const auto& [k, v] : tc.to_map()) manifest["train." + k] = v;
  manifest["data_hash"] = hash_hex(data.config_hash());
  manifest["drop"] = join(c.dropped_groups());
  manifest["test_fraction"] = c.get("test_fraction");
  manifest["split_seed"] = c.get("split_seed");
  manifest["best_epoch"] = std::to_string(r.best_epoch);
  write_atomically(a.out, [&](const fs::path& dir) {
    save_checkpoint(dir, r.model, manifest);
    std::ofstream history(dir / "history.csv");
    write_history_csv(history, r.history);
    if (!history) fail(kData, "cannot write history in " + dir.string());
  });
  out << "best epoch " << r.best_epoch << ", checkpoint in " << a.out << '\n';
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, out, split = "all";
  bool endpoint_only = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.ckpt)) fail(kData, "checkpoint directory not found: " + a.ckpt);
  if (!a.out.empty()) require_output_parent(a.out);
  WindowSet data = load_archive(a.data);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto it = ck.manifest.find("data_hash");
  const std::string archive_hash = hash_hex(data.config_hash());
  if (it == ck.manifest.end() || it->second != archive_hash) {
    fail(kData, "checkpoint was trained on data with hash " +
                    (it == ck.manifest.end() ? std::string("<none>") : it->second) +
                    " but the archive has hash " + archive_hash);
  }
  apply_drops(data, split_list(ck.manifest.at("drop")));
  if (a.split != "all") {
    RunConfig c;
    c.set("test_fraction", ck.manifest.at("test_fraction"));
    c.set("split_seed", ck.manifest.at("split_seed"));
    if (c.number("test_fraction") <= 0.0) fail(kUsage, "checkpoint was trained without a held-out split");
    const Fold split = holdout_split(data.size(), c.number("test_fraction"), c.count("split_seed"));
    data = data.subset(a.split == "train" ? split.train : split.validation);
  }
  const Evaluation ev = evaluate(ck.model, data, 256, a.endpoint_only);
  const std::string json = ev.report.to_json();
  if (!a.out.empty()) {
    write_atomically(a.out, [&](const fs::path& dir) {
      fs::create_directories(dir);
      std::ofstream(dir / "metrics.json") << json << '\n';
      std::ofstream roc(dir / "roc.csv");
      write_roc_csv(roc, ev.roc);
    });
  }
  out << json << '\n';
  return kOk;
}

struct AblateArgs {
  Options opts;
  std::string data, out;
  std::vector<std::string> drop;
};

nlohmann::ordered_json report_json(const MetricReport& r) {
  return nlohmann::ordered_json::parse(r.to_json());
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const RunConfig c = make_config(a.opts);
  for (const auto& g : a.drop) feature::group_columns(g);
  if (!a.out.empty()) require_output_parent(a.out);
  const WindowSet data = load_archive(a.data);
  const AblationResult r = ablation_run(data, a.drop, c.model_config(data), c.train_config(),
                                        c.number("test_fraction"), c.count("split_seed"));
  nlohmann::ordered_json j;
  j["drop"] = r.drop;
  j["full"] = report_json(r.full);
  j["dropped"] = report_json(r.dropped);
  j["accuracy_change"] = r.dropped.accuracy - r.full.accuracy;
  const std::string text = j.dump(2);
  if (!a.out.empty()) {
    write_atomically(a.out, [&](const fs::path& tmp) { std::ofstream(tmp) << text << '\n'; });
  }
  out << text << '\n';
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  constexpr double kLimit = 1e-4;
  bool ok = true;
  out << std::scientific << std::setprecision(3);
  auto line = [&](const std::string& name, const GradCheckResult& r) {
    const bool pass = r.max_relative_error <= kLimit;
    ok = ok && pass;
    out << std::left << std::setw(16) << name << ' ' << r.max_relative_error << ' '
        << (pass ? "ok" : "FAIL") << '\n';
  };
  for (const auto& c : check_primitive_gradients(seed)) line(c.op, c.result);
  ModelConfig m;
  m.input_features = 5;
  m.window_steps = 8;
  m.horizon_steps = 3;
  m.tcn_filters = 4;
  m.num_experts = 3;
  m.expert_hidden = 4;
  m.gate_hidden = 3;
  m.tower_hidden = 4;
  line("model", check_model_gradient(m, 2, seed));
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? kOk : kNumeric;
}

}  // namespace

// ---- RunConfig ---------------------------------------------------------------

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = [] {
    std::map<std::string, std::string> m = {
        {"window", "6"},
        {"horizon", "3"},
        {"stride", "1"},
        {"reverse", "off"},
        {"max_malformed", "0.1"},
        {"balance", "0,0,0"},
        {"test_fraction", "0.2"},
        {"split_seed", "0"},
        {"coupling_degree", "on"},
        {"conflict_indicator", "on"},
    };
    for (const auto& [k, v] : TrainConfig{}.to_map()) m[k] = v;
    const ModelConfig model;
    for (const auto& [k, v] : model.to_map()) {
      if (k != "input_features" && k != "window_steps" && k != "horizon_steps") m[k] = v;
    }
    return m;
  }();
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path.string());
  for (const auto& [k, v] : read_key_values(in)) set(k, v);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown setting '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown setting '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument(key + " must be a number, got '" + s + "'");
  }
  return v;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument(key + " must be a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool RunConfig::enabled(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw std::invalid_argument(key + " must be on or off, got '" + s + "'");
}

WindowOptions RunConfig::window_options() const {
  WindowOptions o;
  o.duration_s = number("window");
  o.horizon_s = number("horizon");
  o.stride = count("stride");
  return o;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.max_epochs = count("epochs");
  t.batch_size = count("batch_size");
  t.adam.learning_rate = number("learning_rate");
  t.adam.beta1 = number("beta1");
  t.adam.beta2 = number("beta2");
  t.adam.epsilon = number("adam_epsilon");
  t.clip_norm = number("clip_norm");
  t.seed = count("seed");
  return t;
}

ModelConfig RunConfig::model_config(const WindowSet& data) const {
  ModelConfig c = ModelConfig::from_map(values_);
  c.input_features = data.features;
  c.window_steps = data.steps;
  c.horizon_steps = data.horizon;
  c.validate();
  return c;
}

std::vector<std::string> RunConfig::dropped_groups() const {
  std::vector<std::string> out;
  for (const char* g : {"coupling_degree", "conflict_indicator"}) {
    if (!enabled(g)) out.emplace_back(g);
  }
  return out;
}

void RunConfig::validate() const {
  const double w = number("window");
  if (w != 3.0 && w != 6.0 && w != 9.0) {
    throw std::invalid_argument("window must be 3, 6 or 9 seconds, got " + get("window"));
  }
  if (number("horizon") <= 0.0) throw std::invalid_argument("horizon must be positive");
  if (count("stride") < 1) throw std::invalid_argument("stride must be >= 1");
  const double f = number("test_fraction");
  if (!(f >= 0.0 && f < 1.0)) throw std::invalid_argument("test_fraction must lie in [0, 1)");
  const double m = number("max_malformed");
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("max_malformed must lie in [0, 1]");
  parse_triple(get("balance"), "balance");
  enabled("reverse");
  dropped_groups();
  train_config().validate();
  for (const auto& [k, v] : ModelConfig{}.to_map()) {
    if (values_.contains(k)) count(k);
  }
  ModelConfig::from_map(values_).validate();
}

// ---- entry point -------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Lane-change intention and trajectory prediction (TCN + MMoE)", "tmmoe");
  app.require_subcommand(1);

  PrepArgs prep;
  auto* p = app.add_subcommand("prep", "cut feature windows from a trajectory CSV");
  p->add_option("--csv", prep.csv, "trajectory CSV")->required();
  p->add_option("--lanes", prep.lanes, "lane marking file")->required();
  p->add_option("--window", prep.window, "input duration in seconds (3, 6 or 9)");
  p->add_option("--horizon", prep.horizon, "prediction horizon in seconds");
  p->add_option("--targets", prep.targets, "file of vehicle ids to cut windows from");
  p->add_option("--out", prep.out, "feature archive to write")->required();
  p->add_flag("--reverse", prep.reverse, "traffic moves toward -x");
  add_config_options(p, prep.opts);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic trajectory corpus");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--counts", synth.counts, "vehicles per class, LK,LCL,LCR");
  s->add_option("--out", synth.out, "directory to write")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model on a feature archive");
  t->add_option("--data", train.data, "feature archive")->required();
  t->add_option("--out", train.out, "checkpoint directory")->required();
  t->add_option("--epochs", train.epochs, "maximum epochs");
  t->add_option("--seed", train.seed, "initialisation and shuffling seed");
  add_config_options(t, train.opts);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a feature archive");
  e->add_option("--ckpt", eval.ckpt, "checkpoint directory")->required();
  e->add_option("--data", eval.data, "feature archive")->required();
  e->add_option("--out", eval.out, "directory for metrics.json and roc.csv");
  e->add_option("--split", eval.split, "all, train or test (the checkpoint's holdout split)")
      ->check(CLI::IsMember({"all", "train", "test"}));
  e->add_flag("--endpoint-only", eval.endpoint_only, "score the final horizon step only");

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "train with and without feature groups");
  ab->add_option("--data", ablate.data, "feature archive")->required();
  ab->add_option("--drop", ablate.drop, "coupling_degree or conflict_indicator (repeatable)")
      ->required();
  ab->add_option("--out", ablate.out, "JSON file to write");
  add_config_options(ab, ablate.opts);

  std::uint64_t gc_seed = 1;
  auto* g = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  g->add_option("--seed", gc_seed, "seed for operands and model");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << ex.what() << '\n';
    return kUsage;
  }

  try {
    if (*p) return cmd_prep(prep, out, err);
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_eval(eval, out);
    if (*ab) return cmd_ablate(ablate, out);
    return cmd_gradcheck(gc_seed, out);
  } catch (const Failure& ex) {
    err << "error: " << ex.what() << '\n';
    return ex.code();
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << '\n';
    return kNumeric;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const FormatError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kData;
  }
}

}  // namespace tmmoe::cli
