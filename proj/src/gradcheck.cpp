#include "starchnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "starchnet/error.hpp"
#include "starchnet/model.hpp"
#include "starchnet/ops.hpp"
#include "starchnet/rng.hpp"

namespace starchnet {

double grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps) {
  for (auto& t : inputs) {
    if (t.dtype() != DType::F64) throw ArgumentError("grad_check needs f64 inputs");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = fn(inputs);
  if (out.numel() != 1) {
    throw ArgumentError("grad_check closure must return a scalar, got shape " + shape_str(out.shape()));
  }
  out.backward();
  // Rounding in f(x +/- eps) limits the central difference to roughly
  // 1e-16 * |f| / eps, so gradients far below |f| * 1e-6 are not resolvable;
  // the denominator floor scales with |f| accordingly.
  const double floor = std::max(1e-8, 1e-6 * (1.0 + std::abs(out.item())));

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (const Buffer* g = t.grad_buffer()) analytic = std::get<std::vector<double>>(*g);
    auto values = t.mutable_data<double>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = fn(inputs).item();
      values[i] = saved - eps;
      const double minus = fn(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

Tensor corrupt_backward(const Tensor& x, double factor) {
  return Tensor::make_result(x.shape(), x.buffer(), "corrupt_backward", {x}, [factor](const Buffer& g) {
    Buffer scaled = g;
    std::visit([&](auto& v) {
      for (auto& e : v) e = static_cast<std::decay_t<decltype(e)>>(e * factor);
    }, scaled);
    return GradList{std::move(scaled)};
  });
}

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> ops{"conv2d",    "batchnorm2d", "relu",        "maxpool2d",
                                            "global_avgpool", "linear", "log_softmax", "nll_loss",
                                            "head"};
  return ops;
}

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Tensor randn64(Shape shape, Rng& rng) { return Tensor::randn(std::move(shape), rng, 1.0, DType::F64); }

// Scalar probe: sum(out * weights) with fixed random weights, so every output
// element contributes with a distinct coefficient.
Tensor project(const Tensor& out, const Tensor& weights) { return ops::sum(ops::mul(out, weights)); }

struct Case {
  std::vector<Tensor> inputs;
  ScalarFn fn;
};

Case make_case(const std::string& op, Rng& rng, bool mutate) {
  auto maybe_corrupt = [mutate](const Tensor& t) { return mutate ? corrupt_backward(t, 1.5) : t; };

  if (op == "conv2d") {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
    const bool with_bias = rng.bernoulli(0.5);
    std::vector<Tensor> in{randn64({n, c, h, w}, rng), randn64({o, c, k, k}, rng)};
    if (with_bias) in.push_back(randn64({o}, rng));
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
    Tensor proj = randn64({n, o, ho, wo}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              std::optional<Tensor> bias;
              if (with_bias) bias = v[2];
              return project(maybe_corrupt(ops::conv2d(v[0], v[1], bias, stride, pad)), proj);
            }};
  }
  if (op == "batchnorm2d") {
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 2, 4);
    std::vector<Tensor> in{randn64({n, c, h, w}, rng), Tensor::uniform({c}, rng, 0.5, 1.5, DType::F64),
                           randn64({c}, rng)};
    Tensor proj = randn64({n, c, h, w}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              ops::BatchNormState state{Tensor::zeros({c}, DType::F64), Tensor::ones({c}, DType::F64)};
              return project(maybe_corrupt(ops::batchnorm2d(v[0], v[1], v[2], state, Mode::Train)), proj);
            }};
  }
  if (op == "relu") {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 8);
    std::vector<Tensor> in{randn64({n, k}, rng)};
    Tensor proj = randn64({n, k}, rng);
    return {in, [=](const std::vector<Tensor>& v) { return project(maybe_corrupt(ops::relu(v[0])), proj); }};
  }
  if (op == "maxpool2d") {
    const std::size_t kernel = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, kernel / 2);
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 2);
    const std::size_t h = pick(rng, kernel, 6), w = pick(rng, kernel, 6);
    std::vector<Tensor> in{randn64({n, c, h, w}, rng)};
    const std::size_t ho = (h + 2 * pad - kernel) / stride + 1, wo = (w + 2 * pad - kernel) / stride + 1;
    Tensor proj = randn64({n, c, ho, wo}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              return project(maybe_corrupt(ops::maxpool2d(v[0], kernel, stride, pad)), proj);
            }};
  }
  if (op == "global_avgpool") {
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 1, 5), w = pick(rng, 1, 5);
    std::vector<Tensor> in{randn64({n, c, h, w}, rng)};
    Tensor proj = randn64({n, c}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              return project(maybe_corrupt(ops::global_avgpool(v[0])), proj);
            }};
  }
  if (op == "linear") {
    const std::size_t n = pick(rng, 1, 4), f = pick(rng, 1, 6), g = pick(rng, 1, 6);
    std::vector<Tensor> in{randn64({n, f}, rng), randn64({g, f}, rng), randn64({g}, rng)};
    Tensor proj = randn64({n, g}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              return project(maybe_corrupt(ops::linear(v[0], v[1], v[2])), proj);
            }};
  }
  if (op == "log_softmax") {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 7);
    std::vector<Tensor> in{randn64({n, k}, rng)};
    Tensor proj = randn64({n, k}, rng);
    return {in, [=](const std::vector<Tensor>& v) {
              return project(maybe_corrupt(ops::log_softmax(v[0])), proj);
            }};
  }
  if (op == "nll_loss") {
    const std::size_t n = pick(rng, 1, 5), k = pick(rng, 1, 6);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.below(k);
    std::vector<Tensor> in{randn64({n, k}, rng)};
    return {in, [=](const std::vector<Tensor>& v) {
              return ops::nll_loss(maybe_corrupt(v[0]), targets);
            }};
  }
  if (op == "head") {
    // The classification head end to end (linear/relu/dropout stack, log_softmax)
    // feeding the NLL loss, at reduced widths.
    ModelSpec spec;
    spec.num_classes = pick(rng, 2, 5);
    spec.head_hidden = {pick(rng, 2, 6), pick(rng, 2, 5)};
    spec.dropout_p = 0.5;
    const std::size_t n = pick(rng, 1, 4), f = pick(rng, 2, 6);
    const std::uint64_t head_seed = rng.next_u64();
    const std::uint64_t mask_seed = rng.next_u64();
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.below(spec.num_classes);

    Rng init(head_seed);
    auto head = std::make_shared<Sequential>(build_head(f, spec, init, DType::F64));
    std::vector<NamedTensor> params;
    head->collect("head", params);
    std::vector<Tensor> in{randn64({n, f}, rng)};
    // Zero biases put ReLU inputs exactly on the kink whenever a row's inputs
    // are all dropped, so the biases get random values.
    for (auto& p : params) {
      if (p.name.ends_with(".bias")) {
        for (auto& value : p.tensor.mutable_data<double>()) value = 0.5 * rng.normal();
      }
      in.push_back(p.tensor);
    }
    return {in, [=](const std::vector<Tensor>& v) {
              // Same dropout mask on every evaluation.
              Rng masks(mask_seed);
              ForwardContext ctx{Mode::Train, &masks};
              return ops::nll_loss(maybe_corrupt(head->forward(v[0], ctx)), targets);
            }};
  }
  throw ArgumentError("no gradient check defined for op '" + op + "'");
}

}  // namespace

std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, std::size_t cases_per_op, std::string_view mutate) {
  if (!mutate.empty() &&
      std::find(gradcheck_ops().begin(), gradcheck_ops().end(), mutate) == gradcheck_ops().end()) {
    throw ArgumentError("cannot mutate unknown op '" + std::string(mutate) + "'");
  }
  std::vector<OpCheck> results;
  for (std::size_t index = 0; index < gradcheck_ops().size(); ++index) {
    const std::string& op = gradcheck_ops()[index];
    Rng rng(derive_seed(seed, "gradcheck", index));
    OpCheck check{op, cases_per_op, 0.0};
    for (std::size_t i = 0; i < cases_per_op; ++i) {
      Case c = make_case(op, rng, op == mutate);
      check.max_rel_error = std::max(check.max_rel_error, grad_check(c.fn, c.inputs));
    }
    results.push_back(check);
  }
  return results;
}

}  // namespace starchnet
