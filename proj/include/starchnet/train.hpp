#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starchnet/checkpoint.hpp"
#include "starchnet/dataset.hpp"
#include "starchnet/model.hpp"

namespace starchnet {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool freeze_backbone = false;
  std::array<double, 2> adam_betas{0.9, 0.999};
  double adam_eps = 1e-8;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Accepts exactly the TrainConfig keys; missing keys keep their defaults and
/// unknown keys raise ArgumentError.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

struct AdamState {
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  std::uint64_t step = 0;
};

/// One Adam update with bias correction:
///   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// Parameters with requires_grad off are left untouched; a trainable
/// parameter without a gradient is treated as having a zero gradient. State
/// is created on first use and must keep the same parameter order.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, const TrainConfig& config);

enum class StopDecision { Continue, Stop };

/// Patience counter over validation losses. Improvement means strictly lower
/// than the best seen so far; ties count against patience.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  struct Update {
    StopDecision decision;
    bool improved;
  };
  Update update(double val_loss);

  double best() const { return best_; }
  std::size_t streak() const { return streak_; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t streak_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  bool early_stopped = false;
};

/// epoch,train_loss,val_loss,val_accuracy with one row per epoch.
std::string history_csv(const TrainHistory& history);

struct TrainResult {
  Checkpoint best;
  TrainHistory history;
};

struct TrainOptions {
  /// Written each time validation loss improves.
  std::optional<std::filesystem::path> checkpoint_path;
  /// Extra metadata stored in every checkpoint (e.g. class names).
  nlohmann::json metadata = nlohmann::json::object();
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Epoch loop: a train-mode pass with Adam over every train batch, then an
/// eval-mode validation pass. Stops at max_epochs or when early stopping
/// fires. On return the model holds the best checkpoint's weights and the
/// result carries that checkpoint (not the last epoch's). A non-finite loss
/// raises TrainError naming the epoch and batch.
TrainResult train(Model& model, const BatchSource& train_batches, const BatchSource& val_batches,
                  const TrainConfig& config, const TrainOptions& options = {});

struct EvalResult {
  double mean_loss = 0.0;
  std::vector<std::size_t> actual;
  std::vector<std::size_t> predicted;
};

/// Eval-mode pass; loss is the sample-weighted mean over batches.
EvalResult evaluate(Model& model, const BatchSource& batches, std::size_t epoch = 0);

/// Row-wise argmax (first index on ties).
std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace starchnet
