#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/model.hpp"
#include "tmmoe/optim.hpp"

namespace tmmoe {

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t batch_size = 256;
  AdamOptions adam;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
};

struct LossSummary {
  double joint = 0.0;
  double classification = 0.0;
  double longitudinal = 0.0;
  double lateral = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossSummary train;
  std::optional<LossSummary> test;
};

struct TrainResult {
  TmmoeModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::uint64_t optimizer_steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;
/// Called after each epoch with the current (not best) model; true ends training.
using StopPredicate = std::function<bool(const EpochRecord&, const TmmoeModel&)>;

/// Mini-batch Adam over (theta, s_c, s_r1, s_r2) with global-norm clipping.
///
/// The normaliser is fitted on `train`, batches are drawn in an order
/// shuffled per epoch from `config.seed`, and train/held-out losses are
/// recorded every epoch. The returned model is the epoch with the lowest
/// held-out joint loss (the last epoch when `heldout` is null or empty).
/// `model` must be initialised. A max_epochs of 0 is treated as 1.
TrainResult train_loop(const WindowSet& train, const WindowSet* heldout, TmmoeModel model,
                       const TrainConfig& config, const EpochCallback& on_epoch = {},
                       const StopPredicate& stop = {});

/// Eval-mode losses over a whole set, batch-size weighted.
LossSummary evaluate_losses(TmmoeModel& model, const WindowSet& set, std::size_t batch_size);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// k disjoint validation folds covering 0..n-1 after a seeded shuffle; fold
/// sizes differ by at most one. Throws std::invalid_argument if n < k.
std::vector<Fold> kfold(std::size_t n, std::size_t k, std::uint64_t seed);

/// Seeded split with round(n * test_fraction) validation indices.
Fold holdout_split(std::size_t n, double test_fraction, std::uint64_t seed);

/// Columns: epoch, joint, L_c, L_r1, L_r2, test_joint, test_L_c, test_L_r1,
/// test_L_r2 (test columns empty when there is no held-out set).
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

/// Checkpoint = "<dir>/model.tmmoe" (TMMOE1 container of TmmoeModel::state())
/// plus "<dir>/model.manifest" (key=value lines). The manifest's
/// "timestamp" entry is informational and excluded from config_hash.
struct Checkpoint {
  TmmoeModel model;
  std::map<std::string, std::string> manifest;
};

std::uint64_t manifest_hash(const std::map<std::string, std::string>& manifest);
void save_checkpoint(const std::filesystem::path& dir, const TmmoeModel& model,
                     std::map<std::string, std::string> manifest);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::map<std::string, std::string> read_key_values(std::istream& in);

}  // namespace tmmoe
