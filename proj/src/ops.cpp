#include "starchnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "blas.hpp"
#include "starchnet/error.hpp"
#include "starchnet/rng.hpp"

namespace starchnet::ops {

namespace {

template <class Fn>
decltype(auto) with_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::F32) return fn(float{});
  return fn(double{});
}

void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw ArgumentError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

template <class T>
const std::vector<T>& as(const Buffer& b) {
  return std::get<std::vector<T>>(b);
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Column layout: row (c*kh + i)*kw + j, column oh*wo + ow.
template <class T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* col) {
  const auto ih_max = static_cast<std::ptrdiff_t>(h);
  const auto iw_max = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* dst = col + ((c * kh + i) * kw + j) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          auto ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(pad);
          T* row = dst + oh * wo;
          if (ih < 0 || ih >= ih_max) {
            std::fill(row, row + wo, T{0});
            continue;
          }
          const T* src = plane + ih * iw_max;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            auto iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(pad);
            row[ow] = (iw < 0 || iw >= iw_max) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* img) {
  const auto ih_max = static_cast<std::ptrdiff_t>(h);
  const auto iw_max = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* src = col + ((c * kh + i) * kw + j) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          auto ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= ih_max) continue;
          T* dst = plane + ih * iw_max;
          const T* row = src + oh * wo;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            auto iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < iw_max) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

template <class T>
Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  auto x = a.data<T>();
  auto y = b.data<T>();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [](const Buffer& g) {
    return GradList{g, g};
  });
}

template <class T>
Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  auto x = a.data<T>();
  auto y = b.data<T>();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [a, b](const Buffer& g) {
    const auto& dy = as<T>(g);
    GradList grads(2);
    if (wants_grad(a)) {
      auto y = b.data<T>();
      std::vector<T> da(dy.size());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] = dy[i] * y[i];
      grads[0] = std::move(da);
    }
    if (wants_grad(b)) {
      auto x = a.data<T>();
      std::vector<T> db(dy.size());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] = dy[i] * x[i];
      grads[1] = std::move(db);
    }
    return grads;
  });
}

template <class T>
Tensor reduce_sum(const Tensor& x, bool average) {
  auto v = x.data<T>();
  double acc = 0.0;
  for (T e : v) acc += e;
  const double scale = average ? 1.0 / static_cast<double>(v.size()) : 1.0;
  std::vector<T> out{static_cast<T>(acc * scale)};
  const std::size_t n = v.size();
  return Tensor::make_result({}, std::move(out), average ? "mean" : "sum", {x},
                             [n, scale](const Buffer& g) {
                               T upstream = as<T>(g)[0];
                               return GradList{std::vector<T>(n, static_cast<T>(upstream * scale))};
                             });
}

template <class T>
Tensor conv2d_typed(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                    std::size_t stride, std::size_t pad) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::size_t k = c * kh * kw;
  const std::size_t p = ho * wo;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  auto x = input.data<T>();
  auto wt = weight.data<T>();
  std::vector<T> out(n * o * p);
  std::vector<T> col(direct ? 0 : k * p);
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = x.data() + b * c * h * w;
    const T* cols = src;
    if (!direct) {
      im2col(src, c, h, w, kh, kw, stride, pad, ho, wo, col.data());
      cols = col.data();
    }
    T* dst = out.data() + b * o * p;
    detail::gemm(false, false, static_cast<int>(o), static_cast<int>(p), static_cast<int>(k), T{1},
                 wt.data(), static_cast<int>(k), cols, static_cast<int>(p), T{0}, dst,
                 static_cast<int>(p));
    if (bias) {
      auto bv = bias->data<T>();
      for (std::size_t oc = 0; oc < o; ++oc) {
        T* plane = dst + oc * p;
        for (std::size_t i = 0; i < p; ++i) plane[i] += bv[oc];
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  Tensor bias_t = bias ? *bias : Tensor{};
  auto backward = [=](const Buffer& g) {
    const auto& dy = as<T>(g);
    GradList grads(has_bias ? 3 : 2);
    const bool need_dx = wants_grad(input);
    const bool need_dw = wants_grad(weight);
    auto xv = input.data<T>();
    auto wv = weight.data<T>();
    std::vector<T> dx(need_dx ? n * c * h * w : 0, T{0});
    std::vector<T> dw(need_dw ? o * k : 0, T{0});
    std::vector<T> cols(direct ? 0 : k * p);
    std::vector<T> dcol(direct || !need_dx ? 0 : k * p);
    for (std::size_t b = 0; b < n; ++b) {
      const T* dyb = dy.data() + b * o * p;
      const T* src = xv.data() + b * c * h * w;
      if (need_dw) {
        const T* cptr = src;
        if (!direct) {
          im2col(src, c, h, w, kh, kw, stride, pad, ho, wo, cols.data());
          cptr = cols.data();
        }
        detail::gemm(false, true, static_cast<int>(o), static_cast<int>(k), static_cast<int>(p), T{1},
                     dyb, static_cast<int>(p), cptr, static_cast<int>(p), T{1}, dw.data(),
                     static_cast<int>(k));
      }
      if (need_dx) {
        T* dxb = dx.data() + b * c * h * w;
        T* target = direct ? dxb : dcol.data();
        detail::gemm(true, false, static_cast<int>(k), static_cast<int>(p), static_cast<int>(o), T{1},
                     wv.data(), static_cast<int>(k), dyb, static_cast<int>(p), T{0}, target,
                     static_cast<int>(p));
        if (!direct) col2im(dcol.data(), c, h, w, kh, kw, stride, pad, ho, wo, dxb);
      }
    }
    if (need_dx) grads[0] = std::move(dx);
    if (need_dw) grads[1] = std::move(dw);
    if (has_bias && wants_grad(bias_t)) {
      std::vector<T> db(o, T{0});
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < o; ++oc) {
          const T* plane = dy.data() + (b * o + oc) * p;
          double acc = 0.0;
          for (std::size_t i = 0; i < p; ++i) acc += plane[i];
          db[oc] += static_cast<T>(acc);
        }
      }
      grads[2] = std::move(db);
    }
    return grads;
  };
  return Tensor::make_result({n, o, ho, wo}, std::move(out), "conv2d", std::move(inputs), backward);
}

template <class T>
Tensor batchnorm_typed(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       BatchNormState& state, Mode mode, double eps, double momentum) {
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  const std::size_t m = n * hw;
  auto x = input.data<T>();
  auto g = gamma.data<T>();
  auto bt = beta.data<T>();
  std::vector<T> out(x.size());
  // Normalized input, kept for the backward rule.
  std::vector<T> xhat(x.size());
  std::vector<double> inv_std(c);

  if (mode == Mode::Train) {
    auto rm = state.running_mean.mutable_data<T>();
    auto rv = state.running_var.mutable_data<T>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* plane = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += plane[i];
      }
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* plane = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          double d = plane[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double xh = (x[off + i] - mu) * inv_std[ch];
          xhat[off + i] = static_cast<T>(xh);
          out[off + i] = static_cast<T>(g[ch] * xh + bt[ch]);
        }
      }
      const double unbiased = sq / static_cast<double>(m - 1);
      rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mu);
      rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
    }
  } else {
    auto rm = state.running_mean.data<T>();
    auto rv = state.running_var.data<T>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double xh = (x[off + i] - static_cast<double>(rm[ch])) * inv_std[ch];
          xhat[off + i] = static_cast<T>(xh);
          out[off + i] = static_cast<T>(g[ch] * xh + bt[ch]);
        }
      }
    }
  }

  const bool train = mode == Mode::Train;
  auto backward = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Buffer& grad) {
    const auto& dy = as<T>(grad);
    auto gv = gamma.data<T>();
    GradList grads(3);
    std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          dgamma[ch] += static_cast<double>(dy[off + i]) * xhat[off + i];
          dbeta[ch] += dy[off + i];
        }
      }
    }
    if (wants_grad(input)) {
      std::vector<T> dx(dy.size());
      const double md = static_cast<double>(m);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t off = (b * c + ch) * hw;
          const double scale = gv[ch] * inv_std[ch];
          for (std::size_t i = 0; i < hw; ++i) {
            if (train) {
              dx[off + i] = static_cast<T>(
                  scale / md * (md * dy[off + i] - dbeta[ch] - xhat[off + i] * dgamma[ch]));
            } else {
              dx[off + i] = static_cast<T>(scale * dy[off + i]);
            }
          }
        }
      }
      grads[0] = std::move(dx);
    }
    if (wants_grad(gamma)) grads[1] = std::vector<T>(dgamma.begin(), dgamma.end());
    if (wants_grad(beta)) grads[2] = std::vector<T>(dbeta.begin(), dbeta.end());
    return grads;
  };
  return Tensor::make_result(input.shape(), std::move(out), "batchnorm2d", {input, gamma, beta},
                             std::move(backward));
}

template <class T>
Tensor relu_typed(const Tensor& x) {
  auto v = x.data<T>();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T{0} ? v[i] : T{0};
  return Tensor::make_result(x.shape(), std::move(out), "relu", {x}, [x](const Buffer& g) {
    const auto& dy = as<T>(g);
    auto in = x.data<T>();
    std::vector<T> dx(dy.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = in[i] > T{0} ? dy[i] : T{0};
    return GradList{std::move(dx)};
  });
}

template <class T>
Tensor maxpool_typed(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  auto v = x.data<T>();
  std::vector<T> out(n * c * ho * wo);
  // Flat input index of each window's winner.
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = v.data() + plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t i = 0; i < kernel; ++i) {
          auto ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < kernel; ++j) {
            auto iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * ho + oh) * wo + ow;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  const std::size_t in_size = v.size();
  return Tensor::make_result({n, c, ho, wo}, std::move(out), "maxpool2d", {x},
                             [argmax = std::move(argmax), in_size](const Buffer& g) {
                               const auto& dy = as<T>(g);
                               std::vector<T> dx(in_size, T{0});
                               for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
                               return GradList{std::move(dx)};
                             });
}

template <class T>
Tensor avgpool_typed(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  auto v = x.data<T>();
  std::vector<T> out(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += v[plane * hw + i];
    out[plane] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return Tensor::make_result({n, c}, std::move(out), "global_avgpool", {x}, [n, c, hw](const Buffer& g) {
    const auto& dy = as<T>(g);
    std::vector<T> dx(n * c * hw);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const T share = static_cast<T>(dy[plane] * inv);
      std::fill_n(dx.begin() + static_cast<std::ptrdiff_t>(plane * hw), hw, share);
    }
    return GradList{std::move(dx)};
  });
}

template <class T>
Tensor linear_typed(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t n = x.dim(0), f = x.dim(1), g = weight.dim(0);
  auto xv = x.data<T>();
  auto wv = weight.data<T>();
  auto bv = bias.data<T>();
  std::vector<T> out(n * g);
  for (std::size_t r = 0; r < n; ++r) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * g));
  detail::gemm(false, true, static_cast<int>(n), static_cast<int>(g), static_cast<int>(f), T{1},
               xv.data(), static_cast<int>(f), wv.data(), static_cast<int>(f), T{1}, out.data(),
               static_cast<int>(g));
  return Tensor::make_result({n, g}, std::move(out), "linear", {x, weight, bias},
                             [=](const Buffer& grad) {
                               const auto& dy = as<T>(grad);
                               GradList grads(3);
                               if (wants_grad(x)) {
                                 std::vector<T> dx(n * f);
                                 detail::gemm(false, false, static_cast<int>(n), static_cast<int>(f),
                                              static_cast<int>(g), T{1}, dy.data(), static_cast<int>(g),
                                              weight.data<T>().data(), static_cast<int>(f), T{0},
                                              dx.data(), static_cast<int>(f));
                                 grads[0] = std::move(dx);
                               }
                               if (wants_grad(weight)) {
                                 std::vector<T> dw(g * f);
                                 detail::gemm(true, false, static_cast<int>(g), static_cast<int>(f),
                                              static_cast<int>(n), T{1}, dy.data(), static_cast<int>(g),
                                              x.data<T>().data(), static_cast<int>(f), T{0}, dw.data(),
                                              static_cast<int>(f));
                                 grads[1] = std::move(dw);
                               }
                               if (wants_grad(bias)) {
                                 std::vector<T> db(g, T{0});
                                 for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t j = 0; j < g; ++j) db[j] += dy[r * g + j];
                                 grads[2] = std::move(db);
                               }
                               return grads;
                             });
}

template <class T>
Tensor dropout_typed(const Tensor& x, double p, Rng& rng) {
  auto v = x.data<T>();
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(v.size());
  for (auto& m : mask) m = rng.uniform() < p ? T{0} : scale;
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * mask[i];
  return Tensor::make_result(x.shape(), std::move(out), "dropout", {x},
                             [mask = std::move(mask)](const Buffer& g) {
                               const auto& dy = as<T>(g);
                               std::vector<T> dx(dy.size());
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * mask[i];
                               return GradList{std::move(dx)};
                             });
}

template <class T>
Tensor log_softmax_typed(const Tensor& x) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  auto v = x.data<T>();
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = v.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<T>(row[j] - lse);
  }
  // Probabilities are recomputed from the saved log-probabilities.
  std::vector<T> saved = out;
  return Tensor::make_result(x.shape(), std::move(out), "log_softmax", {x},
                             [saved = std::move(saved), n, k](const Buffer& g) {
                               const auto& dy = as<T>(g);
                               std::vector<T> dx(dy.size());
                               for (std::size_t r = 0; r < n; ++r) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < k; ++j) s += dy[r * k + j];
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const std::size_t i = r * k + j;
                                   dx[i] = static_cast<T>(dy[i] - std::exp(static_cast<double>(saved[i])) * s);
                                 }
                               }
                               return GradList{std::move(dx)};
                             });
}

template <class T>
Tensor nll_typed(const Tensor& log_probs, std::vector<std::size_t> targets) {
  const std::size_t n = log_probs.dim(0), k = log_probs.dim(1);
  auto v = log_probs.data<T>();
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) acc -= v[r * k + targets[r]];
  std::vector<T> out{static_cast<T>(acc / static_cast<double>(n))};
  return Tensor::make_result({}, std::move(out), "nll_loss", {log_probs},
                             [targets = std::move(targets), n, k](const Buffer& g) {
                               const double upstream = as<T>(g)[0];
                               std::vector<T> dx(n * k, T{0});
                               const T share = static_cast<T>(-upstream / static_cast<double>(n));
                               for (std::size_t r = 0; r < n; ++r) dx[r * k + targets[r]] = share;
                               return GradList{std::move(dx)};
                             });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dtype("add", a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return with_dtype(a.dtype(), [&](auto tag) { return elementwise_add<decltype(tag)>(a, b); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dtype("mul", a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return with_dtype(a.dtype(), [&](auto tag) { return elementwise_mul<decltype(tag)>(a, b); });
}

Tensor sum(const Tensor& x) {
  return with_dtype(x.dtype(), [&](auto tag) { return reduce_sum<decltype(tag)>(x, false); });
}

Tensor mean(const Tensor& x) {
  return with_dtype(x.dtype(), [&](auto tag) { return reduce_sum<decltype(tag)>(x, true); });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  require_rank("conv2d", input, 4, "input");
  require_rank("conv2d", weight, 4, "weight");
  require_same_dtype("conv2d", input, weight);
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(input.dim(1)) +
                     " channels but weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (input.dim(2) + 2 * padding < weight.dim(2) || input.dim(3) + 2 * padding < weight.dim(3)) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " does not fit padded input " +
                     shape_str(input.shape()) + " with padding " + std::to_string(padding));
  }
  if (bias) {
    require_same_dtype("conv2d", input, *bias);
    if (bias->rank() != 1 || bias->dim(0) != weight.dim(0)) {
      throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " does not match weight " +
                       shape_str(weight.shape()));
    }
  }
  return with_dtype(input.dtype(), [&](auto tag) {
    return conv2d_typed<decltype(tag)>(input, weight, bias, stride, padding);
  });
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   Mode mode, double eps, double momentum) {
  require_rank("batchnorm2d", input, 4, "input");
  require_same_dtype("batchnorm2d", input, gamma);
  require_same_dtype("batchnorm2d", input, beta);
  const std::size_t c = input.dim(1);
  if (!state.running_mean.defined()) state.running_mean = Tensor::zeros({c}, input.dtype());
  if (!state.running_var.defined()) state.running_var = Tensor::ones({c}, input.dtype());
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->shape() != Shape{c}) {
      throw ShapeError("batchnorm2d: input " + shape_str(input.shape()) + " has " + std::to_string(c) +
                       " channels but a per-channel tensor has shape " + shape_str(t->shape()));
    }
  }
  require_same_dtype("batchnorm2d", input, state.running_mean);
  require_same_dtype("batchnorm2d", input, state.running_var);
  if (mode == Mode::Train && input.dim(0) * input.dim(2) * input.dim(3) < 2) {
    throw ArgumentError("batchnorm2d: train mode needs at least 2 values per channel, input shape " +
                        shape_str(input.shape()));
  }
  return with_dtype(input.dtype(), [&](auto tag) {
    return batchnorm_typed<decltype(tag)>(input, gamma, beta, state, mode, eps, momentum);
  });
}

Tensor relu(const Tensor& x) {
  return with_dtype(x.dtype(), [&](auto tag) { return relu_typed<decltype(tag)>(x); });
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require_rank("maxpool2d", x, 4, "input");
  if (kernel == 0 || stride == 0) throw ArgumentError("maxpool2d: kernel and stride must be positive");
  if (2 * padding > kernel) {
    throw ArgumentError("maxpool2d: padding " + std::to_string(padding) + " exceeds half the kernel " +
                        std::to_string(kernel));
  }
  if (x.dim(2) + 2 * padding < kernel || x.dim(3) + 2 * padding < kernel) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  return with_dtype(x.dtype(), [&](auto tag) { return maxpool_typed<decltype(tag)>(x, kernel, stride, padding); });
}

Tensor global_avgpool(const Tensor& x) {
  require_rank("global_avgpool", x, 4, "input");
  return with_dtype(x.dtype(), [&](auto tag) { return avgpool_typed<decltype(tag)>(x); });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", weight, 2, "weight");
  require_same_dtype("linear", x, weight);
  require_same_dtype("linear", x, bias);
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  if (bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  return with_dtype(x.dtype(), [&](auto tag) { return linear_typed<decltype(tag)>(x, weight, bias); });
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ArgumentError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::Eval) return x;
  return with_dtype(x.dtype(), [&](auto tag) { return dropout_typed<decltype(tag)>(x, p, rng); });
}

Tensor log_softmax(const Tensor& x) {
  require_rank("log_softmax", x, 2, "input");
  return with_dtype(x.dtype(), [&](auto tag) { return log_softmax_typed<decltype(tag)>(x); });
}

Tensor nll_loss(const Tensor& log_probs, std::span<const std::size_t> targets) {
  require_rank("nll_loss", log_probs, 2, "log-probabilities");
  const std::size_t n = log_probs.dim(0), k = log_probs.dim(1);
  if (targets.size() != n) {
    throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for log-probabilities " +
                     shape_str(log_probs.shape()));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) {
      throw ArgumentError("nll_loss: target " + std::to_string(targets[r]) + " at row " +
                          std::to_string(r) + " is outside [0, " + std::to_string(k) + ")");
    }
  }
  std::vector<std::size_t> owned(targets.begin(), targets.end());
  return with_dtype(log_probs.dtype(),
                    [&](auto tag) { return nll_typed<decltype(tag)>(log_probs, std::move(owned)); });
}

}  // namespace starchnet::ops
