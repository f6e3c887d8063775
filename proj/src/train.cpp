#include "starchnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "starchnet/error.hpp"
#include "starchnet/ops.hpp"

namespace starchnet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (max_epochs == 0) throw ArgumentError("max_epochs must be at least 1");
  if (patience == 0) throw ArgumentError("patience must be at least 1");
  for (double b : adam_betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ArgumentError("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ArgumentError("adam_eps must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},
          {"seed", c.seed},                   {"freeze_backbone", c.freeze_backbone},
          {"adam_betas", c.adam_betas},       {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("train config must be a JSON object");
  static const std::set<std::string> known{"learning_rate", "batch_size", "max_epochs", "patience",
                                           "seed",          "freeze_backbone", "adam_betas", "adam_eps"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ArgumentError("unknown train config key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("freeze_backbone")) c.freeze_backbone = j.at("freeze_backbone").get<bool>();
    if (j.contains("adam_betas")) c.adam_betas = j.at("adam_betas").get<std::array<double, 2>>();
    if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("bad train config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config " + path.string());
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

namespace {

template <class T>
void adam_update(std::span<T> p, std::span<const T> g, std::vector<T>& m, std::vector<T>& v, double lr, double b1,
                 double b2, double eps, double correction1, double correction2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
    const double mi = b1 * m[i] + (1.0 - b1) * gi;
    const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / correction1;
    const double v_hat = vi / correction2;
    p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(v_hat) + eps));
  }
}

}  // namespace

void adam_step(std::vector<NamedTensor>& params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(make_buffer(p.tensor.dtype(), p.tensor.numel()));
      state.v.push_back(make_buffer(p.tensor.dtype(), p.tensor.numel()));
    }
  }
  if (state.m.size() != params.size()) {
    throw OptimizerError("optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Buffer* g = params[i].tensor.grad_buffer();
    if (buffer_size(state.m[i]) != params[i].tensor.numel() ||
        (g && (buffer_size(*g) != params[i].tensor.numel() || buffer_dtype(*g) != params[i].tensor.dtype()))) {
      throw OptimizerError("gradient/state shape mismatch for parameter " + params[i].name);
    }
  }

  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double b1 = config.adam_betas[0], b2 = config.adam_betas[1];
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (!p.requires_grad()) continue;
    const Buffer* g = p.grad_buffer();
    if (p.dtype() == DType::F32) {
      std::span<const float> gv;
      if (g) gv = std::get<std::vector<float>>(*g);
      adam_update<float>(p.mutable_data<float>(), gv, std::get<std::vector<float>>(state.m[i]),
                         std::get<std::vector<float>>(state.v[i]), config.learning_rate, b1, b2, config.adam_eps,
                         correction1, correction2);
    } else {
      std::span<const double> gv;
      if (g) gv = std::get<std::vector<double>>(*g);
      adam_update<double>(p.mutable_data<double>(), gv, std::get<std::vector<double>>(state.m[i]),
                          std::get<std::vector<double>>(state.v[i]), config.learning_rate, b1, b2,
                          config.adam_eps, correction1, correction2);
    }
  }
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ArgumentError("patience must be at least 1");
}

EarlyStopping::Update EarlyStopping::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    streak_ = 0;
    return {StopDecision::Continue, true};
  }
  ++streak_;
  return {streak_ >= patience_ ? StopDecision::Stop : StopDecision::Continue, false};
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_accuracy\n";
  char line[160];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.9f,%.9f,%.6f\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    os << line;
  }
  return os.str();
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (scores.at(r * k + j) > scores.at(r * k + best)) best = j;
    }
    out[r] = best;
  }
  return out;
}

EvalResult evaluate(Model& model, const BatchSource& batches, std::size_t epoch) {
  NoGradGuard no_grad;
  EvalResult result;
  double loss_sum = 0.0;
  std::size_t seen = 0;
  for (std::size_t b = 0; b < batches.num_batches(epoch); ++b) {
    Batch batch = batches.batch(epoch, b);
    if (batch.size() == 0) continue;
    Tensor logp = model.forward(batch.images, Mode::Eval);
    loss_sum += ops::nll_loss(logp, batch.labels).item() * static_cast<double>(batch.size());
    seen += batch.size();
    auto pred = argmax_rows(logp);
    result.actual.insert(result.actual.end(), batch.labels.begin(), batch.labels.end());
    result.predicted.insert(result.predicted.end(), pred.begin(), pred.end());
  }
  if (seen == 0) throw TrainError("evaluation split produced no samples");
  result.mean_loss = loss_sum / static_cast<double>(seen);
  return result;
}

TrainResult train(Model& model, const BatchSource& train_batches, const BatchSource& val_batches,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_batches.num_batches(0) == 0) throw TrainError("train split is empty");
  if (val_batches.num_batches(0) == 0) throw TrainError("validation split is empty");
  if (config.freeze_backbone) model.set_freeze_backbone(true);

  std::vector<NamedTensor> params = model.parameters();
  AdamState adam;
  EarlyStopping stopper(config.patience);
  TrainResult result;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t b = 0; b < train_batches.num_batches(epoch); ++b) {
      Batch batch = train_batches.batch(epoch, b);
      if (batch.size() == 0) continue;
      model.zero_grad();
      double loss_value = 0.0;
      try {
        Tensor logp = model.forward(batch.images, Mode::Train);
        Tensor loss = ops::nll_loss(logp, batch.labels);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) throw NumericError("loss is " + std::to_string(loss_value));
        loss.backward();
        auto pred = argmax_rows(logp);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
      } catch (const NumericError& e) {
        throw TrainError("training aborted at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                         ": " + e.what());
      }
      adam_step(params, adam, config);
      loss_sum += loss_value * static_cast<double>(batch.size());
      seen += batch.size();
    }
    if (seen == 0) throw TrainError("epoch " + std::to_string(epoch) + " had no decodable training samples");
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);

    EvalResult val;
    try {
      val = evaluate(model, val_batches, epoch);
    } catch (const NumericError& e) {
      throw TrainError("validation aborted at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    record.val_loss = val.mean_loss;
    std::size_t val_correct = 0;
    for (std::size_t i = 0; i < val.actual.size(); ++i) val_correct += val.actual[i] == val.predicted[i];
    record.val_accuracy = static_cast<double>(val_correct) / static_cast<double>(val.actual.size());
    result.history.epochs.push_back(record);
    result.history.stopped_epoch = epoch;
    if (options.on_epoch) options.on_epoch(record);

    const auto update = stopper.update(record.val_loss);
    if (update.improved) {
      nlohmann::json meta = options.metadata;
      meta["epoch"] = epoch;
      meta["val_loss"] = record.val_loss;
      meta["config"] = train_config_to_json(config);
      result.best = snapshot(model, std::move(meta));
      result.history.best_epoch = epoch;
      have_best = true;
      if (options.checkpoint_path) save_checkpoint(result.best, *options.checkpoint_path);
    }
    if (update.decision == StopDecision::Stop) {
      result.history.early_stopped = true;
      break;
    }
  }
  if (have_best) load_backbone(model, result.best, LoadPolicy::Full);
  return result;
}

}  // namespace starchnet
