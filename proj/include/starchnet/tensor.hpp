#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace starchnet {

class Rng;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

template <Scalar T>
constexpr DType dtype_of() {
  if constexpr (std::same_as<T, float>) {
    return DType::F32;
  } else {
    return DType::F64;
  }
}

/// Flat row-major value storage. The active alternative is the dtype.
using Buffer = std::variant<std::vector<float>, std::vector<double>>;

DType buffer_dtype(const Buffer& buffer);
std::size_t buffer_size(const Buffer& buffer);
Buffer make_buffer(DType dtype, std::size_t size, double fill = 0.0);

/// Gradient of the loss w.r.t. each op input, in input order. nullopt for
/// inputs that do not require a gradient.
using GradList = std::vector<std::optional<Buffer>>;
using BackwardFn = std::function<GradList(const Buffer& grad_output)>;

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Reference-counted handle to an N-dimensional array with optional autograd
/// history.
///
/// Copies of a Tensor share the same storage. Values are treated as immutable
/// once an op has produced them; the only sanctioned in-place writers are the
/// optimizer, batch-norm running statistics and checkpoint loading, all via
/// mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor ones(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor from_buffer(Shape shape, Buffer values);
  static Tensor from_vector(Shape shape, std::vector<float> values);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  /// Zero-mean normal entries with the given standard deviation.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, DType dtype = DType::F32);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype = DType::F32);

  /// Builds an op result and, when grad mode is on and any input requires a
  /// gradient, records the op in the autograd graph. Rejects non-finite
  /// values with NumericError naming the op.
  static Tensor make_result(Shape shape, Buffer values, std::string op,
                            std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  DType dtype() const;

  const Buffer& buffer() const;
  template <Scalar T>
  std::span<const T> data() const;
  template <Scalar T>
  std::span<T> mutable_data();

  /// Element at a flat index, widened to double.
  double at(std::size_t flat_index) const;
  /// Value of a one-element tensor.
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;
  const std::string& op_name() const;

  bool has_grad() const;
  const Buffer* grad_buffer() const;
  /// Gradient as a standalone tensor; undefined when absent.
  Tensor grad() const;
  void zero_grad();

  /// Reverse-mode pass from this one-element tensor. Leaf gradients
  /// accumulate across calls until zero_grad().
  void backward() const;

  /// Deep copy without autograd history.
  Tensor clone() const;
  Tensor to(DType dtype) const;
  /// Same values viewed with another shape (copy, no history).
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Elementwise bit equality of values, shape and dtype.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace starchnet
