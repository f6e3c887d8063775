#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starchnet/checkpoint.hpp"
#include "starchnet/ops.hpp"
#include "starchnet/rng.hpp"
#include "starchnet/tensor.hpp"

namespace starchnet {

/// Backbone depth/width. "resnet18" is the canonical network; "resnet18-lite"
/// keeps the same topology with one block per stage and narrow stages for
/// quick CPU runs.
struct BackboneSpec {
  std::string name = "resnet18";
  std::size_t stem_width = 64;
  std::array<std::size_t, 4> widths{64, 128, 256, 512};
  std::array<std::size_t, 4> blocks{2, 2, 2, 2};

  static BackboneSpec resnet18();
  static BackboneSpec resnet18_lite();
  /// Looks up a named preset; throws ArgumentError for unknown names.
  static BackboneSpec named(const std::string& name);
};

struct ModelSpec {
  std::size_t num_classes = 9;
  std::vector<std::size_t> head_hidden{500, 100};
  double dropout_p = 0.5;
  bool freeze_backbone = false;
  std::size_t input_size = 224;
  BackboneSpec backbone;

  void validate() const;
};

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor tensor;
  /// False for buffers such as batch-norm running statistics.
  bool parameter = true;
};

struct ForwardContext {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, ForwardContext& ctx) = 0;
  /// Appends this layer's parameters and buffers under `prefix`.
  virtual void collect(const std::string& prefix, std::vector<NamedTensor>& out) = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng, DType dtype = DType::F32);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) override;

  Tensor weight;

 private:
  std::size_t stride_;
  std::size_t padding_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, DType dtype = DType::F32);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) override;

  Tensor gamma;
  Tensor beta;
  ops::BatchNormState state;
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng, DType dtype = DType::F32);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) override;

  Tensor weight;
  Tensor bias;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string&, std::vector<NamedTensor>&) override {}
};

class Dropout final : public Layer {
 public:
  explicit Dropout(double p);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string&, std::vector<NamedTensor>&) override {}

 private:
  double p_;
};

class LogSoftmax final : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string&, std::vector<NamedTensor>&) override {}
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding)
      : kernel_(kernel), stride_(stride), padding_(padding) {}
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string&, std::vector<NamedTensor>&) override {}

 private:
  std::size_t kernel_, stride_, padding_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string&, std::vector<NamedTensor>&) override {}
};

/// conv3x3-BN-ReLU-conv3x3-BN plus shortcut, then ReLU. The shortcut is a
/// 1x1 projection with BN when the stride or width changes, identity otherwise.
class BasicBlock final : public Layer {
 public:
  BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng,
             DType dtype = DType::F32);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) override;

  bool has_projection() const { return projection_conv_ != nullptr; }
  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }

 private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  std::unique_ptr<Conv2d> projection_conv_;
  std::unique_ptr<BatchNorm2d> projection_bn_;
};

/// Ordered layers; each child is named by its key within the parent prefix.
class Sequential final : public Layer {
 public:
  void add(std::string name, std::unique_ptr<Layer> layer);
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) override;
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i).second; }
  const std::string& name_at(std::size_t i) const { return layers_.at(i).first; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

/// Replacement classifier: Linear -> ReLU -> Dropout for each hidden width,
/// then Linear to num_classes and LogSoftmax. Child names are fc1..fcN for the
/// linear layers.
Sequential build_head(std::size_t in_features, const ModelSpec& spec, Rng& rng,
                      DType dtype = DType::F32);

/// ResNet backbone plus classification head.
///
/// The state table lists every parameter and buffer with a stable name
/// (e.g. "conv1.weight", "layer2.0.downsample.1.running_var",
/// "head.fc3.bias"). Entries share storage with the layers, so in-place
/// updates through the table are seen by forward().
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, std::unique_ptr<Sequential> backbone, std::unique_ptr<Sequential> head,
        std::uint64_t dropout_seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  bool empty() const { return backbone_ == nullptr; }
  const ModelSpec& spec() const { return spec_; }

  /// NxCxHxW batch -> Nxnum_classes log-probabilities. Train mode updates
  /// batch-norm statistics and samples dropout masks from dropout_rng().
  Tensor forward(const Tensor& batch, Mode mode);
  /// Pooled backbone features (N x final stage width).
  Tensor features(const Tensor& batch, Mode mode);

  const std::vector<NamedTensor>& state() const { return state_; }
  /// Named parameters (buffers excluded), frozen or not.
  std::vector<NamedTensor> parameters() const;
  const Tensor* find(const std::string& name) const;

  /// Toggles requires_grad on every parameter outside head.*.
  void set_freeze_backbone(bool freeze);
  bool backbone_frozen() const { return spec_.freeze_backbone; }

  Rng& dropout_rng() { return dropout_rng_; }
  void zero_grad();

  /// Independent model with identical spec and state values.
  Model clone() const;

 private:
  void check_input(const Tensor& batch) const;

  ModelSpec spec_;
  std::unique_ptr<Sequential> backbone_;
  std::unique_ptr<Sequential> head_;
  std::vector<NamedTensor> state_;
  Rng dropout_rng_;
};

/// Builds backbone and head with fan-in-scaled normal weights
/// (std = sqrt(2 / fan_in)), zero biases, unit BN scale and zero BN shift.
Model build_resnet18(const ModelSpec& spec, Rng& rng);

bool is_head_tensor(const std::string& name);

struct ParamCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
  /// Layer prefix (name without the trailing ".weight"/".bias") -> count.
  std::map<std::string, std::size_t> per_layer;
};

ParamCount count_params(const Model& model);

enum class LoadPolicy { BackboneOnly, Full, Strict };

LoadPolicy parse_load_policy(const std::string& text);

struct LoadReport {
  std::vector<std::string> loaded;
  /// Model tensors deliberately left untouched (head.* under BackboneOnly).
  std::vector<std::string> skipped;
  /// Targeted model tensors absent from the checkpoint.
  std::vector<std::string> missing;
  /// Checkpoint tensors with no counterpart in the model.
  std::vector<std::string> unexpected;
};

/// Copies checkpoint tensors into the model. Every targeted tensor is
/// validated before anything is written, so a failed load leaves the model
/// untouched. Shape or dtype conflicts raise LoadError naming the tensor;
/// Strict also rejects missing or unexpected names.
LoadReport load_backbone(Model& model, const Checkpoint& checkpoint, LoadPolicy policy);

/// Deep copy of the model state into a checkpoint. The model spec is stored
/// under metadata["model"] and the architecture id under
/// metadata["architecture"].
Checkpoint snapshot(const Model& model, nlohmann::json metadata = nlohmann::json::object());

/// Rebuilds a model from a checkpoint written by snapshot() and loads it
/// under the Strict policy.
Model model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace starchnet
