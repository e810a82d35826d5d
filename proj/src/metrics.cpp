#include "tmmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace tmmoe {
namespace {

void check_pair(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " scores for " +
                                std::to_string(b) + " labels");
  }
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  check_pair(predictions.size(), labels.size(), "accuracy");
  if (labels.empty()) throw std::invalid_argument("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::optional<double> auc(std::span<const double> scores, std::span<const bool> positive) {
  check_pair(scores.size(), positive.size(), "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += mean_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n_neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const bool> positive) {
  check_pair(scores.size(), positive.size(), "roc_curve");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(n) - n_pos;
  RocCurve c{{0.0}, {0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    c.fpr.push_back(n_neg > 0 ? fp / n_neg : 0.0);
    c.tpr.push_back(n_pos > 0 ? tp / n_pos : 0.0);
    i = j;
  }
  return c;
}

RocResult roc_auc(const Tensor& scores, std::span<const Intention> labels) {
  if (scores.rank() != 2 || scores.dim(1) != 3) {
    throw std::invalid_argument("roc_auc: scores must be [N, 3], got " + shape_str(scores.shape()));
  }
  const std::size_t n = scores.dim(0);
  check_pair(n, labels.size(), "roc_auc");
  for (std::size_t i = 0; i < n; ++i) {
    const double s = scores[3 * i] + scores[3 * i + 1] + scores[3 * i + 2];
    if (!(std::abs(s - 1.0) <= 1e-6)) {
      throw std::invalid_argument("roc_auc: score row " + std::to_string(i) + " sums to " +
                                  std::to_string(s));
    }
  }
  RocResult r;
  double total = 0.0;
  std::size_t present = 0;
  std::vector<double> column(n);
  const auto flags = std::make_unique<bool[]>(n);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[3 * i + k];
      flags[i] = static_cast<std::size_t>(labels[i]) == k;
    }
    const std::span<const bool> positive(flags.get(), n);
    r.auc[k] = auc(column, positive);
    r.curves[k] = roc_curve(column, positive);
    if (r.auc[k]) {
      total += *r.auc[k];
      ++present;
    }
  }
  if (present) r.macro_auc = total / static_cast<double>(present);
  return r;
}

ErrorStats rmse_mae(const Tensor& predicted, const Tensor& truth) {
  if (predicted.shape() != truth.shape()) {
    throw std::invalid_argument("rmse_mae: shapes " + shape_str(predicted.shape()) + " and " +
                                shape_str(truth.shape()) + " differ");
  }
  if (truth.size() == 0) throw std::invalid_argument("rmse_mae: no values");
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = predicted[i] - truth[i];
    sq += e * e;
    ab += std::abs(e);
  }
  const double n = static_cast<double>(truth.size());
  return {std::sqrt(sq / n), ab / n};
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  j["accuracy"] = accuracy;
  j["auc"] = {{"LK", optional_number(auc[0])},
              {"LCL", optional_number(auc[1])},
              {"LCR", optional_number(auc[2])}};
  j["macro_auc"] = optional_number(macro_auc);
  j["error_scope"] = endpoint_only ? "endpoint" : "all_steps";
  j["longitudinal"] = {{"rmse", longitudinal.rmse}, {"mae", longitudinal.mae}};
  j["lateral"] = {{"rmse", lateral.rmse}, {"mae", lateral.mae}};
  return j.dump(2);
}

Evaluation evaluate(const TmmoeModel& model, const WindowSet& set, std::size_t batch_size,
                    bool endpoint_only) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty window set");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  const std::size_t n = set.size(), P = set.horizon, cols = endpoint_only ? 1 : P;
  Evaluation ev;
  ev.probabilities = Tensor(Shape{n, 3});
  Tensor lon_pred(Shape{n, cols}), lon_true(Shape{n, cols});
  Tensor lat_pred(Shape{n, cols}), lat_true(Shape{n, cols});
  std::vector<std::size_t> predicted(n), truth(n);
  std::vector<Intention> labels(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    const auto idx = std::span<const std::size_t>(order).subspan(start, count);
    const Predictions p = model.predict(make_batch(set, idx));
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t i = start + j;
      const FeatureWindow& w = set.windows[i];
      const double* row = p.probabilities.raw() + 3 * j;
      std::copy_n(row, 3, ev.probabilities.raw() + 3 * i);
      predicted[i] = static_cast<std::size_t>(std::max_element(row, row + 3) - row);
      truth[i] = static_cast<std::size_t>(w.label);
      labels[i] = w.label;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t s = endpoint_only ? P - 1 : c;
        lon_pred[i * cols + c] = w.last_x + p.longitudinal[j * P + s];
        lon_true[i * cols + c] = w.last_x + w.longitudinal[s];
        lat_pred[i * cols + c] = w.last_y + p.lateral[j * P + s];
        lat_true[i * cols + c] = w.last_y + w.lateral[s];
      }
    }
  }
  ev.roc = roc_auc(ev.probabilities, labels);
  ev.report.samples = n;
  ev.report.accuracy = accuracy(predicted, truth);
  ev.report.auc = ev.roc.auc;
  ev.report.macro_auc = ev.roc.macro_auc;
  ev.report.longitudinal = rmse_mae(lon_pred, lon_true);
  ev.report.lateral = rmse_mae(lat_pred, lat_true);
  ev.report.endpoint_only = endpoint_only;
  return ev;
}

void write_roc_csv(std::ostream& out, const RocResult& roc) {
  out << "class,fpr,tpr\n";
  for (std::size_t k = 0; k < 3; ++k) {
    const auto name = intention_name(intention_from_index(k));
    for (std::size_t i = 0; i < roc.curves[k].fpr.size(); ++i) {
      out << name << ',' << roc.curves[k].fpr[i] << ',' << roc.curves[k].tpr[i] << '\n';
    }
  }
}

AblationResult ablation_run(const WindowSet& data, const std::vector<std::string>& drop,
                            const ModelConfig& model, const TrainConfig& train,
                            double test_fraction, std::uint64_t split_seed) {
  std::vector<std::size_t> columns;
  for (const auto& name : drop) {
    const auto cols = feature::group_columns(name);
    columns.insert(columns.end(), cols.begin(), cols.end());
  }
  const Fold split = holdout_split(data.size(), test_fraction, split_seed);
  if (split.validation.empty() || split.train.empty()) {
    throw std::invalid_argument("ablation_run: split leaves an empty train or test set");
  }
  auto run = [&](const WindowSet& set) {
    const WindowSet tr = set.subset(split.train), te = set.subset(split.validation);
    TmmoeModel m(model);
    m.initialize(train.seed);
    TrainResult result = train_loop(tr, &te, std::move(m), train);
    return evaluate(result.model, te, train.batch_size).report;
  };
  AblationResult r;
  r.drop = drop;
  r.full = run(data);
  if (columns.empty()) {
    r.dropped = r.full;
  } else {
    WindowSet reduced = data;
    zero_features(reduced, columns);
    r.dropped = run(reduced);
  }
  return r;
}

}  // namespace tmmoe
