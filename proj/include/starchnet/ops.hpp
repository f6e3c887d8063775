#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "starchnet/tensor.hpp"

namespace starchnet {

class Rng;

enum class Mode { Train, Eval };

namespace ops {

// Elementwise, same shape and dtype.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Full reductions to a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// 2-D cross-correlation over NCHW input with an OIHW weight and zero padding.
/// Output extent per spatial axis is floor((H + 2*padding - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel batch normalization.
///
/// Train mode normalizes with the batch mean and biased batch variance and
/// folds them into the running statistics with the given momentum (the
/// running variance uses the unbiased estimate). Eval mode uses the running
/// statistics only. Train mode needs at least two values per channel.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode, double eps = 1e-5, double momentum = 0.1);

/// max(0, x); the gradient at exactly 0 is 0.
Tensor relu(const Tensor& x);

/// Window maximum with -inf padding. Ties route the gradient to the first
/// window cell in row-major order.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Mean over H and W: NCHW -> NC.
Tensor global_avgpool(const Tensor& x);

/// x * weight^T + bias for x: NxF, weight: GxF, bias: G.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Inverted dropout. Eval mode returns the input unchanged.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

/// Row-wise x - logsumexp(x) for an NxK input.
Tensor log_softmax(const Tensor& x);

/// Mean negative log-likelihood of the target entries of NxK log-probabilities.
Tensor nll_loss(const Tensor& log_probs, std::span<const std::size_t> targets);

}  // namespace ops
}  // namespace starchnet
