#include "starchnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "starchnet/error.hpp"

namespace starchnet {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng, DType dtype) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor::randn(std::move(shape), rng, stddev, dtype).set_requires_grad(true);
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

BackboneSpec BackboneSpec::resnet18() { return {}; }

BackboneSpec BackboneSpec::resnet18_lite() {
  BackboneSpec b;
  b.name = "resnet18-lite";
  b.stem_width = 8;
  b.widths = {8, 16, 32, 64};
  b.blocks = {1, 1, 1, 1};
  return b;
}

BackboneSpec BackboneSpec::named(const std::string& name) {
  if (name == "resnet18") return resnet18();
  if (name == "resnet18-lite") return resnet18_lite();
  throw ArgumentError("unknown backbone '" + name + "' (expected resnet18 or resnet18-lite)");
}

void ModelSpec::validate() const {
  if (num_classes == 0) throw ArgumentError("num_classes must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ArgumentError("dropout_p must be in [0, 1), got " + std::to_string(dropout_p));
  }
  for (auto h : head_hidden) {
    if (h == 0) throw ArgumentError("head hidden widths must be positive");
  }
  if (input_size == 0) throw ArgumentError("input_size must be positive");
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  return {
      {"num_classes", spec.num_classes},
      {"head_hidden", spec.head_hidden},
      {"dropout_p", spec.dropout_p},
      {"freeze_backbone", spec.freeze_backbone},
      {"input_size", spec.input_size},
      {"backbone",
       {{"name", spec.backbone.name},
        {"stem_width", spec.backbone.stem_width},
        {"widths", spec.backbone.widths},
        {"blocks", spec.backbone.blocks}}},
  };
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    spec.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
    spec.dropout_p = j.at("dropout_p").get<double>();
    spec.freeze_backbone = j.at("freeze_backbone").get<bool>();
    spec.input_size = j.at("input_size").get<std::size_t>();
    const auto& b = j.at("backbone");
    spec.backbone.name = b.at("name").get<std::string>();
    spec.backbone.stem_width = b.at("stem_width").get<std::size_t>();
    spec.backbone.widths = b.at("widths").get<std::array<std::size_t, 4>>();
    spec.backbone.blocks = b.at("blocks").get<std::array<std::size_t, 4>>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed model spec: ") + e.what());
  }
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding, Rng& rng, DType dtype)
    : weight(he_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng, dtype)),
      stride_(stride),
      padding_(padding) {}

Tensor Conv2d::forward(const Tensor& x, ForwardContext&) {
  return ops::conv2d(x, weight, std::nullopt, stride_, padding_);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({join(prefix, "weight"), weight, true});
}

BatchNorm2d::BatchNorm2d(std::size_t channels, DType dtype)
    : gamma(Tensor::ones({channels}, dtype).set_requires_grad(true)),
      beta(Tensor::zeros({channels}, dtype).set_requires_grad(true)),
      state{Tensor::zeros({channels}, dtype), Tensor::ones({channels}, dtype)} {}

Tensor BatchNorm2d::forward(const Tensor& x, ForwardContext& ctx) {
  return ops::batchnorm2d(x, gamma, beta, state, ctx.mode);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({join(prefix, "weight"), gamma, true});
  out.push_back({join(prefix, "bias"), beta, true});
  out.push_back({join(prefix, "running_mean"), state.running_mean, false});
  out.push_back({join(prefix, "running_var"), state.running_var, false});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng, DType dtype)
    : weight(he_normal({out_features, in_features}, in_features, rng, dtype)),
      bias(Tensor::zeros({out_features}, dtype).set_requires_grad(true)) {}

Tensor Linear::forward(const Tensor& x, ForwardContext&) { return ops::linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({join(prefix, "weight"), weight, true});
  out.push_back({join(prefix, "bias"), bias, true});
}

Tensor ReLU::forward(const Tensor& x, ForwardContext&) { return ops::relu(x); }

Dropout::Dropout(double p) : p_(p) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout probability must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, ForwardContext& ctx) {
  if (ctx.mode == Mode::Eval) return x;
  if (!ctx.rng) throw ArgumentError("train-mode dropout needs a random generator");
  return ops::dropout(x, p_, ctx.mode, *ctx.rng);
}

Tensor LogSoftmax::forward(const Tensor& x, ForwardContext&) { return ops::log_softmax(x); }

Tensor MaxPool2d::forward(const Tensor& x, ForwardContext&) {
  return ops::maxpool2d(x, kernel_, stride_, padding_);
}

Tensor GlobalAvgPool::forward(const Tensor& x, ForwardContext&) { return ops::global_avgpool(x); }

BasicBlock::BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng,
                       DType dtype)
    : conv1_(in_channels, out_channels, 3, stride, 1, rng, dtype),
      bn1_(out_channels, dtype),
      conv2_(out_channels, out_channels, 3, 1, 1, rng, dtype),
      bn2_(out_channels, dtype) {
  if (stride != 1 || in_channels != out_channels) {
    projection_conv_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0, rng, dtype);
    projection_bn_ = std::make_unique<BatchNorm2d>(out_channels, dtype);
  }
}

Tensor BasicBlock::forward(const Tensor& x, ForwardContext& ctx) {
  Tensor out = ops::relu(bn1_.forward(conv1_.forward(x, ctx), ctx));
  out = bn2_.forward(conv2_.forward(out, ctx), ctx);
  Tensor shortcut = x;
  if (projection_conv_) shortcut = projection_bn_->forward(projection_conv_->forward(x, ctx), ctx);
  return ops::relu(ops::add(out, shortcut));
}

void BasicBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  conv1_.collect(join(prefix, "conv1"), out);
  bn1_.collect(join(prefix, "bn1"), out);
  conv2_.collect(join(prefix, "conv2"), out);
  bn2_.collect(join(prefix, "bn2"), out);
  if (projection_conv_) {
    projection_conv_->collect(join(prefix, "downsample.0"), out);
    projection_bn_->collect(join(prefix, "downsample.1"), out);
  }
}

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& x, ForwardContext& ctx) {
  Tensor out = x;
  for (auto& [name, layer] : layers_) out = layer->forward(out, ctx);
  return out;
}

void Sequential::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  for (auto& [name, layer] : layers_) layer->collect(join(prefix, name), out);
}

Sequential build_head(std::size_t in_features, const ModelSpec& spec, Rng& rng, DType dtype) {
  if (in_features == 0) throw ArgumentError("head input width must be positive");
  spec.validate();
  Sequential head;
  std::size_t width = in_features;
  std::size_t index = 1;
  for (auto hidden : spec.head_hidden) {
    const std::string suffix = std::to_string(index++);
    head.add("fc" + suffix, std::make_unique<Linear>(width, hidden, rng, dtype));
    head.add("relu" + suffix, std::make_unique<ReLU>());
    head.add("dropout" + suffix, std::make_unique<Dropout>(spec.dropout_p));
    width = hidden;
  }
  head.add("fc" + std::to_string(index), std::make_unique<Linear>(width, spec.num_classes, rng, dtype));
  head.add("log_softmax", std::make_unique<LogSoftmax>());
  return head;
}

Model::Model(ModelSpec spec, std::unique_ptr<Sequential> backbone, std::unique_ptr<Sequential> head,
             std::uint64_t dropout_seed)
    : spec_(std::move(spec)), backbone_(std::move(backbone)), head_(std::move(head)), dropout_rng_(dropout_seed) {
  backbone_->collect("", state_);
  head_->collect("head", state_);
  std::set<std::string> seen;
  for (const auto& entry : state_) {
    if (!seen.insert(entry.name).second) throw ArgumentError("duplicate tensor name " + entry.name);
  }
  set_freeze_backbone(spec_.freeze_backbone);
}

void Model::check_input(const Tensor& batch) const {
  if (empty()) throw ArgumentError("forward on an empty model");
  const Shape expected{batch.rank() == 4 ? batch.dim(0) : 0, 3, spec_.input_size, spec_.input_size};
  if (batch.rank() != 4 || batch.shape() != expected) {
    throw ShapeError("model input must be Nx3x" + std::to_string(spec_.input_size) + "x" +
                     std::to_string(spec_.input_size) + ", got " + shape_str(batch.shape()));
  }
}

Tensor Model::features(const Tensor& batch, Mode mode) {
  check_input(batch);
  ForwardContext ctx{mode, &dropout_rng_};
  return backbone_->forward(batch, ctx);
}

Tensor Model::forward(const Tensor& batch, Mode mode) {
  check_input(batch);
  ForwardContext ctx{mode, &dropout_rng_};
  return head_->forward(backbone_->forward(batch, ctx), ctx);
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (const auto& e : state_) {
    if (e.parameter) out.push_back(e);
  }
  return out;
}

const Tensor* Model::find(const std::string& name) const {
  for (const auto& e : state_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

void Model::set_freeze_backbone(bool freeze) {
  spec_.freeze_backbone = freeze;
  for (auto& e : state_) {
    if (!e.parameter) continue;
    e.tensor.set_requires_grad(is_head_tensor(e.name) || !freeze);
    if (freeze && !is_head_tensor(e.name)) e.tensor.zero_grad();
  }
}

void Model::zero_grad() {
  for (auto& e : state_) e.tensor.zero_grad();
}

Model Model::clone() const {
  Rng rng(0);
  Model copy = build_resnet18(spec_, rng);
  load_backbone(copy, snapshot(*this), LoadPolicy::Strict);
  copy.dropout_rng_ = dropout_rng_;
  return copy;
}

bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }

Model build_resnet18(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  const auto& bb = spec.backbone;
  auto backbone = std::make_unique<Sequential>();
  backbone->add("conv1", std::make_unique<Conv2d>(3, bb.stem_width, 7, 2, 3, rng));
  backbone->add("bn1", std::make_unique<BatchNorm2d>(bb.stem_width));
  backbone->add("relu", std::make_unique<ReLU>());
  backbone->add("maxpool", std::make_unique<MaxPool2d>(3, 2, 1));
  std::size_t in = bb.stem_width;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    auto layer = std::make_unique<Sequential>();
    for (std::size_t b = 0; b < bb.blocks[stage]; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      layer->add(std::to_string(b), std::make_unique<BasicBlock>(in, bb.widths[stage], stride, rng));
      in = bb.widths[stage];
    }
    backbone->add("layer" + std::to_string(stage + 1), std::move(layer));
  }
  backbone->add("avgpool", std::make_unique<GlobalAvgPool>());
  auto head = std::make_unique<Sequential>(build_head(in, spec, rng));
  return Model(spec, std::move(backbone), std::move(head), rng.next_u64());
}

ParamCount count_params(const Model& model) {
  ParamCount count;
  for (const auto& e : model.state()) {
    if (!e.parameter) continue;
    const std::size_t n = e.tensor.numel();
    count.total += n;
    if (e.tensor.requires_grad()) count.trainable += n;
    const auto dot = e.name.rfind('.');
    count.per_layer[dot == std::string::npos ? e.name : e.name.substr(0, dot)] += n;
  }
  return count;
}

LoadPolicy parse_load_policy(const std::string& text) {
  if (text == "backbone-only") return LoadPolicy::BackboneOnly;
  if (text == "full") return LoadPolicy::Full;
  if (text == "strict") return LoadPolicy::Strict;
  throw ArgumentError("unknown load policy '" + text + "' (expected backbone-only, full or strict)");
}

LoadReport load_backbone(Model& model, const Checkpoint& checkpoint, LoadPolicy policy) {
  LoadReport report;
  std::vector<std::pair<Tensor, const Tensor*>> plan;
  std::set<std::string> model_names;
  for (const auto& e : model.state()) {
    model_names.insert(e.name);
    if (policy == LoadPolicy::BackboneOnly && is_head_tensor(e.name)) {
      report.skipped.push_back(e.name);
      continue;
    }
    const Tensor* source = checkpoint.find(e.name);
    if (!source) {
      report.missing.push_back(e.name);
      continue;
    }
    if (source->shape() != e.tensor.shape() || source->dtype() != e.tensor.dtype()) {
      throw LoadError("checkpoint tensor " + e.name + " has shape " + shape_str(source->shape()) + " " +
                      dtype_name(source->dtype()) + " but the model expects " + shape_str(e.tensor.shape()) +
                      " " + dtype_name(e.tensor.dtype()));
    }
    plan.emplace_back(e.tensor, source);
    report.loaded.push_back(e.name);
  }
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (!model_names.contains(name)) report.unexpected.push_back(name);
  }
  if (policy == LoadPolicy::Strict && (!report.missing.empty() || !report.unexpected.empty())) {
    std::string msg = "strict load failed:";
    for (const auto& n : report.missing) msg += " missing " + n + ";";
    for (const auto& n : report.unexpected) msg += " unexpected " + n + ";";
    throw LoadError(msg);
  }
  for (auto& [target, source] : plan) {
    if (target.dtype() == DType::F32) {
      std::ranges::copy(source->data<float>(), target.mutable_data<float>().begin());
    } else {
      std::ranges::copy(source->data<double>(), target.mutable_data<double>().begin());
    }
  }
  return report;
}

Checkpoint snapshot(const Model& model, nlohmann::json metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  ck.metadata["architecture"] = model.spec().backbone.name;
  ck.metadata["model"] = model_spec_to_json(model.spec());
  for (const auto& e : model.state()) ck.tensors.emplace_back(e.name, e.tensor.clone());
  return ck;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("model")) {
    throw LoadError("checkpoint metadata has no model spec");
  }
  ModelSpec spec = model_spec_from_json(checkpoint.metadata.at("model"));
  Rng rng(0);
  Model model = build_resnet18(spec, rng);
  load_backbone(model, checkpoint, LoadPolicy::Strict);
  return model;
}

}  // namespace starchnet
