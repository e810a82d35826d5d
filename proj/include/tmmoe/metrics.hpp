#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/model.hpp"
#include "tmmoe/trainer.hpp"

namespace tmmoe {

/// Fraction of exact matches. Throws std::invalid_argument on empty or
/// unequal inputs.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// One-vs-rest AUC by the rank statistic with tied scores sharing their mean
/// rank. Empty when either class is absent.
std::optional<double> auc(std::span<const double> scores, std::span<const bool> positive);

struct RocCurve {
  std::vector<double> fpr;  // from (0,0) to (1,1), one vertex per distinct score
  std::vector<double> tpr;
};

RocCurve roc_curve(std::span<const double> scores, std::span<const bool> positive);

/// Per-class results in label order (LK, LCL, LCR).
struct RocResult {
  std::array<std::optional<double>, 3> auc;
  std::array<RocCurve, 3> curves;
  /// Mean over the classes that have an AUC.
  std::optional<double> macro_auc;
};

/// `scores` is [N, 3] with rows summing to 1 within 1e-6.
RocResult roc_auc(const Tensor& scores, std::span<const Intention> labels);

struct ErrorStats {
  double rmse = 0.0;
  double mae = 0.0;
};

/// Over every element of two equal-shape tensors.
ErrorStats rmse_mae(const Tensor& predicted, const Tensor& truth);

struct MetricReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  std::array<std::optional<double>, 3> auc;
  std::optional<double> macro_auc;
  ErrorStats longitudinal;
  ErrorStats lateral;
  bool endpoint_only = false;

  std::string to_json() const;
};

struct Evaluation {
  MetricReport report;
  RocResult roc;
  Tensor probabilities;  // [N, 3]
};

/// Positions are rebuilt as last observed position + displacement before the
/// errors are taken. `endpoint_only` scores the final horizon step alone.
Evaluation evaluate(const TmmoeModel& model, const WindowSet& set, std::size_t batch_size = 256,
                    bool endpoint_only = false);

/// Columns: class, fpr, tpr.
void write_roc_csv(std::ostream& out, const RocResult& roc);

struct AblationResult {
  MetricReport full;
  MetricReport dropped;
  std::vector<std::string> drop;
};

/// Trains twice from the same seeds on a seeded holdout split, once on the
/// data as given and once with the named feature groups zeroed in every
/// window, and evaluates both on the held-out part.
AblationResult ablation_run(const WindowSet& data, const std::vector<std::string>& drop,
                            const ModelConfig& model, const TrainConfig& train,
                            double test_fraction = 0.2, std::uint64_t split_seed = 0);

}  // namespace tmmoe
