#include "tmmoe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tmmoe/random.hpp"

namespace tmmoe {
namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void accumulate(LossSummary& into, const LossTerms& terms, double weight) {
  into.joint += weight * terms.joint.value().item();
  into.classification += weight * terms.classification.value().item();
  into.longitudinal += weight * terms.longitudinal.value().item();
  into.lateral += weight * terms.lateral.value().item();
}

void divide(LossSummary& s, double n) {
  s.joint /= n;
  s.classification /= n;
  s.longitudinal /= n;
  s.lateral /= n;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"epochs", std::to_string(max_epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"learning_rate", format_double(adam.learning_rate)},
          {"beta1", format_double(adam.beta1)},
          {"beta2", format_double(adam.beta2)},
          {"adam_epsilon", format_double(adam.epsilon)},
          {"clip_norm", format_double(clip_norm)},
          {"seed", std::to_string(seed)}};
}

LossSummary evaluate_losses(TmmoeModel& model, const WindowSet& set, std::size_t batch_size) {
  LossSummary total;
  if (set.size() == 0) return total;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    const Batch batch = model.normalize(make_batch(set, std::span(order).subspan(start, count)));
    Tape tape;
    const ModelOutputs out = model.forward(tape, tape.constant(batch.inputs), Mode::kEval);
    accumulate(total, TmmoeModel::losses(tape, model.params(), out, batch),
               static_cast<double>(count));
  }
  divide(total, static_cast<double>(set.size()));
  return total;
}

TrainResult train_loop(const WindowSet& train, const WindowSet* heldout, TmmoeModel model,
                       const TrainConfig& config, const EpochCallback& on_epoch,
                       const StopPredicate& stop) {
  config.validate();
  if (train.size() == 0) throw std::invalid_argument("train_loop: empty training set");
  train.validate();
  const bool has_heldout = heldout && heldout->size() > 0;
  if (has_heldout && (heldout->steps != train.steps || heldout->features != train.features ||
                      heldout->horizon != train.horizon)) {
    throw std::invalid_argument("train_loop: held-out layout differs from training layout");
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  model.fit_normalizer(train, order);

  Rng shuffle_rng(config.seed ^ 0x5eed5eed5eed5eedull);
  AdamState adam;
  TrainResult result{model, {}, 0, 0};
  double best = std::numeric_limits<double>::infinity();
  NamedTensors best_state;
  const std::size_t epochs = std::max<std::size_t>(config.max_epochs, 1);

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const Batch batch = model.normalize(make_batch(train, std::span(order).subspan(start, count)));
      Tape tape;
      const ModelOutputs out = model.forward(tape, tape.constant(batch.inputs), Mode::kTrain);
      const LossTerms terms = TmmoeModel::losses(tape, model.params(), out, batch);
      accumulate(record.train, terms, static_cast<double>(count));
      GradientMap grads = tape.backward(terms.joint, model.params());
      clip_global_norm(grads, config.clip_norm);
      adam_step(model.params(), grads, adam, config.adam);
    }
    divide(record.train, static_cast<double>(order.size()));

    double score = record.train.joint;
    if (has_heldout) {
      record.test = evaluate_losses(model, *heldout, config.batch_size);
      score = record.test->joint;
    }
    if (!has_heldout || score < best) {
      best = score;
      best_state = model.state();
      result.best_epoch = epoch;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stop && stop(record, model)) break;
  }
  model.load_state(best_state);
  result.optimizer_steps = adam.step;
  result.model = std::move(model);
  return result;
}

std::vector<Fold> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("kfold: k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kfold: " + std::to_string(n) + " items cannot fill " +
                                std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  std::vector<Fold> folds(k);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds[f].validation.assign(order.begin() + begin, order.begin() + begin + len);
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    begin += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) {
        folds[f].train.insert(folds[f].train.end(), folds[g].validation.begin(),
                              folds[g].validation.end());
      }
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

Fold holdout_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  Fold fold;
  fold.validation.assign(order.begin(), order.begin() + n_test);
  fold.train.assign(order.begin() + n_test, order.end());
  std::sort(fold.validation.begin(), fold.validation.end());
  std::sort(fold.train.begin(), fold.train.end());
  return fold;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,joint,L_c,L_r1,L_r2,test_joint,test_L_c,test_L_r1,test_L_r2\n";
  out << std::setprecision(10);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train.joint << ',' << r.train.classification << ','
        << r.train.longitudinal << ',' << r.train.lateral;
    if (r.test) {
      out << ',' << r.test->joint << ',' << r.test->classification << ',' << r.test->longitudinal
          << ',' << r.test->lateral << '\n';
    } else {
      out << ",,,,\n";
    }
  }
}

std::uint64_t manifest_hash(const std::map<std::string, std::string>& manifest) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [key, value] : manifest) {
    if (key == "timestamp" || key == "config_hash") continue;
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value");
    }
    values[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return values;
}

void save_checkpoint(const std::filesystem::path& dir, const TmmoeModel& model,
                     std::map<std::string, std::string> manifest) {
  std::filesystem::create_directories(dir);
  save_tensors(dir / "model.tmmoe", model.state());
  for (const auto& [k, v] : model.config().to_map()) manifest["model." + k] = v;
  manifest["format"] = "tmmoe-checkpoint-1";
  manifest["config_hash"] = hash_hex(manifest_hash(manifest));
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  manifest["timestamp"] = ts.str();
  std::ofstream out(dir / "model.manifest");
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
  for (const auto& [k, v] : manifest) out << k << '=' << v << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.manifest");
  if (!in) throw FormatError("no model.manifest in " + dir.string());
  auto manifest = read_key_values(in);
  if (manifest["format"] != "tmmoe-checkpoint-1") throw FormatError("unrecognised checkpoint format");
  std::map<std::string, std::string> model_keys;
  for (const auto& [k, v] : manifest) {
    if (k.starts_with("model.")) model_keys[k.substr(6)] = v;
  }
  TmmoeModel model(ModelConfig::from_map(model_keys));
  model.load_state(load_tensors(dir / "model.tmmoe"));
  return {std::move(model), std::move(manifest)};
}

}  // namespace tmmoe
