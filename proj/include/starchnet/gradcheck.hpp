#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "starchnet/tensor.hpp"

namespace starchnet {

/// Maps f64 inputs to a one-element tensor.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>& inputs)>;

/// Largest relative disagreement between the autograd gradient and a central
/// difference, over every element of every input:
///   |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// where floor = max(1e-8, 1e-6 * (1 + |f(x)|)) is the resolution limit of a
/// central difference in f64.
/// Inputs must be f64; they are marked requires_grad and their gradients are
/// overwritten.
double grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps = 1e-5);

/// Identity in the forward pass whose backward rule scales the gradient by
/// `factor`. Exists to prove the checker catches a broken backward rule.
Tensor corrupt_backward(const Tensor& x, double factor);

struct OpCheck {
  std::string op;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
};

/// Ops covered by the gradient suite, in report order.
const std::vector<std::string>& gradcheck_ops();

/// Runs `cases_per_op` random small shapes through every op in
/// gradcheck_ops(). When `mutate` names an op, that op's cases are routed
/// through corrupt_backward so its check must fail.
std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, std::size_t cases_per_op = 20,
                                         std::string_view mutate = {});

}  // namespace starchnet
