#include "starchnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "starchnet/error.hpp"
#include "starchnet/rng.hpp"

namespace starchnet {

namespace detail {

struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  bool requires_grad = false;
  std::optional<Buffer> grad;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

const std::string kLeafName = "leaf";

void accumulate(Buffer& into, const Buffer& from) {
  std::visit(
      [&](auto& dst) {
        using V = std::decay_t<decltype(dst)>;
        const auto& src = std::get<V>(from);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      },
      into);
}

bool all_finite(const Buffer& buffer) {
  return std::visit(
      [](const auto& v) {
        return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); });
      },
      buffer);
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DType buffer_dtype(const Buffer& buffer) {
  return std::holds_alternative<std::vector<float>>(buffer) ? DType::F32 : DType::F64;
}

std::size_t buffer_size(const Buffer& buffer) {
  return std::visit([](const auto& v) { return v.size(); }, buffer);
}

Buffer make_buffer(DType dtype, std::size_t size, double fill) {
  if (dtype == DType::F32) return std::vector<float>(size, static_cast<float>(fill));
  return std::vector<double>(size, fill);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::size_t n = shape_numel(shape);
  return from_buffer(std::move(shape), make_buffer(dtype, n, value));
}

Tensor Tensor::from_buffer(Shape shape, Buffer values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != buffer_size(values)) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(buffer_size(values)));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
  return from_buffer(std::move(shape), Buffer(std::move(values)));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  return from_buffer(std::move(shape), Buffer(std::move(values)));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, DType dtype) {
  Buffer values = make_buffer(dtype, shape_numel(shape));
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
      },
      values);
  return from_buffer(std::move(shape), std::move(values));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype) {
  Buffer values = make_buffer(dtype, shape_numel(shape));
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
      },
      values);
  return from_buffer(std::move(shape), std::move(values));
}

Tensor Tensor::make_result(Shape shape, Buffer values, std::string op, std::vector<Tensor> inputs,
                           BackwardFn backward) {
  if (!all_finite(values)) {
    throw NumericError("non-finite value produced by " + op + " (output shape " +
                       shape_str(shape) + ")");
  }
  Tensor out = from_buffer(std::move(shape), std::move(values));
  bool needs_grad = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                      return t.defined() && t.requires_grad();
                    });
  if (needs_grad) {
    auto node = std::make_shared<detail::Node>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
    out.impl_->requires_grad = true;
  }
  return out;
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ArgumentError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) {
    throw ShapeError("dimension " + std::to_string(i) + " out of range for shape " + shape_str(s));
  }
  return s[i];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const { return buffer_dtype(impl().data); }

const Buffer& Tensor::buffer() const { return impl().data; }

template <Scalar T>
std::span<const T> Tensor::data() const {
  const auto* v = std::get_if<std::vector<T>>(&impl().data);
  if (!v) {
    throw ArgumentError(std::string("tensor holds ") + dtype_name(dtype()) + ", requested " +
                        dtype_name(dtype_of<T>()));
  }
  return {v->data(), v->size()};
}

template <Scalar T>
std::span<T> Tensor::mutable_data() {
  auto* v = std::get_if<std::vector<T>>(&impl().data);
  if (!v) {
    throw ArgumentError(std::string("tensor holds ") + dtype_name(dtype()) + ", requested " +
                        dtype_name(dtype_of<T>()));
  }
  return {v->data(), v->size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::at(std::size_t flat_index) const {
  return std::visit(
      [&](const auto& v) -> double {
        if (flat_index >= v.size()) throw ArgumentError("flat index out of range");
        return static_cast<double>(v[flat_index]);
      },
      impl().data);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ArgumentError("item() needs a one-element tensor, got shape " + shape_str(shape()));
  }
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    impl().data);
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  auto& im = impl();
  if (im.grad_fn && !value) {
    throw ArgumentError("cannot clear requires_grad on a non-leaf tensor");
  }
  im.requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }

const std::string& Tensor::op_name() const {
  const auto& im = impl();
  return im.grad_fn ? im.grad_fn->op : kLeafName;
}

bool Tensor::has_grad() const { return impl().grad.has_value(); }

const Buffer* Tensor::grad_buffer() const {
  const auto& g = impl().grad;
  return g ? &*g : nullptr;
}

Tensor Tensor::grad() const {
  const auto& g = impl().grad;
  if (!g) return {};
  return from_buffer(shape(), *g);
}

void Tensor::zero_grad() { impl().grad.reset(); }

void Tensor::backward() const {
  const auto& root = impl();
  if (numel() != 1) {
    throw ArgumentError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw ArgumentError("backward() on a tensor that does not require grad");
  }

  // Post-order DFS gives a topological order (inputs before consumers).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next_input < fn->inputs.size()) {
      auto* child = fn->inputs[next_input++].impl_.get();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<detail::TensorImpl*, Buffer> pending;
  pending.emplace(impl_.get(), make_buffer(dtype(), 1, 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    Buffer grad_out = std::move(found->second);
    pending.erase(found);

    if (!node->grad_fn) {
      if (node->grad) {
        accumulate(*node->grad, grad_out);
      } else {
        node->grad = std::move(grad_out);
      }
      continue;
    }

    const auto& fn = *node->grad_fn;
    GradList input_grads = fn.backward(grad_out);
    if (input_grads.size() != fn.inputs.size()) {
      throw ArgumentError("backward rule of " + fn.op + " returned the wrong number of gradients");
    }
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      auto* child = fn.inputs[i].impl_.get();
      if (!child || !child->requires_grad || !input_grads[i]) continue;
      if (buffer_size(*input_grads[i]) != buffer_size(child->data) ||
          buffer_dtype(*input_grads[i]) != buffer_dtype(child->data)) {
        throw ShapeError("backward rule of " + fn.op + " produced a gradient of the wrong size for input " +
                         std::to_string(i));
      }
      auto slot = pending.find(child);
      if (slot == pending.end()) {
        pending.emplace(child, std::move(*input_grads[i]));
      } else {
        accumulate(slot->second, *input_grads[i]);
      }
    }
  }
}

Tensor Tensor::clone() const {
  const auto& im = impl();
  return from_buffer(im.shape, im.data);
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  return std::visit(
      [&](const auto& v) -> Tensor {
        if (target == DType::F32) return from_vector(shape(), std::vector<float>(v.begin(), v.end()));
        return from_vector(shape(), std::vector<double>(v.begin(), v.end()));
      },
      impl().data);
}

Tensor Tensor::reshaped(Shape new_shape) const { return from_buffer(std::move(new_shape), impl().data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return std::visit(
      [&](const auto& va) {
        using V = std::decay_t<decltype(va)>;
        const auto& vb = std::get<V>(b.buffer());
        return std::memcmp(va.data(), vb.data(), va.size() * sizeof(typename V::value_type)) == 0;
      },
      a.buffer());
}

}  // namespace starchnet
