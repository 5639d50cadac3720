#include "stemvq/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>

#include "stemvq/errors.hpp"

namespace stemvq {

namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <class S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <class S>
using Node = detail::Node<S>;
template <class S>
using NodePtr = std::shared_ptr<Node<S>>;
template <class S>
using Buffer = detail::Buffer<S>;

template <class S>
BasicTensor<S> make_result(Shape shape, Buffer<S> data, std::vector<NodePtr<S>> inputs,
                           std::function<void(Node<S>&)> backward_fn) {
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<S>::wrap(std::move(node));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

template <class S>
void require_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

// grad(target) += factor * src, or = on the first contribution.
template <class S>
void accumulate_scaled(Node<S>& target, const S* src, S factor) {
  bool fresh;
  S* g = target.grad_target(fresh);
  const std::size_t n = target.data.size();
  if (fresh) {
    for (std::size_t i = 0; i < n; ++i) g[i] = factor * src[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) g[i] += factor * src[i];
  }
}

template <class Dst, class Expr>
void assign_or_add(Dst&& dst, const Expr& expr, bool fresh) {
  if (fresh) {
    dst.noalias() = expr;
  } else {
    dst.noalias() += expr;
  }
}

// Columns j whose tap t = j*stride + offset lands inside [0, length).
void valid_range(std::ptrdiff_t offset, std::ptrdiff_t stride, std::size_t length, std::size_t out_len,
                 std::size_t& lo, std::size_t& hi) {
  const auto len = static_cast<std::ptrdiff_t>(length);
  std::ptrdiff_t first = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t last = offset >= len ? 0 : (len - 1 - offset) / stride + 1;
  first = std::min<std::ptrdiff_t>(first, static_cast<std::ptrdiff_t>(out_len));
  last = std::clamp<std::ptrdiff_t>(last, first, static_cast<std::ptrdiff_t>(out_len));
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
}

std::ptrdiff_t tap_offset(std::size_t k, const ConvOptions& opt) {
  return static_cast<std::ptrdiff_t>(k * opt.dilation) - static_cast<std::ptrdiff_t>(opt.padding);
}

// cols[(i*K + k), j] = x[i, j*stride + k*dilation - padding], zero outside.
template <class S>
void im2col(const S* x, std::size_t channels, std::size_t length, std::size_t kernel_size, std::size_t out_len,
            const ConvOptions& opt, S* cols) {
  const auto stride = static_cast<std::ptrdiff_t>(opt.stride);
  for (std::size_t k = 0; k < kernel_size; ++k) {
    const std::ptrdiff_t offset = tap_offset(k, opt);
    std::size_t lo, hi;
    valid_range(offset, stride, length, out_len, lo, hi);
    for (std::size_t i = 0; i < channels; ++i) {
      S* row = cols + (i * kernel_size + k) * out_len;
      std::fill(row, row + lo, S(0));
      if (lo < hi) {
        const S* src = x + i * length + (static_cast<std::ptrdiff_t>(lo) * stride + offset);
        if (stride == 1) {
          std::copy(src, src + (hi - lo), row + lo);
        } else {
          for (std::size_t j = 0; j < hi - lo; ++j) row[lo + j] = src[static_cast<std::ptrdiff_t>(j) * stride];
        }
      }
      std::fill(row + hi, row + out_len, S(0));
    }
  }
}

// Adjoint of im2col: accumulate cols back into x.
template <class S>
void col2im_add(const S* cols, std::size_t channels, std::size_t length, std::size_t kernel_size,
                std::size_t out_len, const ConvOptions& opt, S* x) {
  const auto stride = static_cast<std::ptrdiff_t>(opt.stride);
  for (std::size_t k = 0; k < kernel_size; ++k) {
    const std::ptrdiff_t offset = tap_offset(k, opt);
    std::size_t lo, hi;
    valid_range(offset, stride, length, out_len, lo, hi);
    if (lo >= hi) continue;
    for (std::size_t i = 0; i < channels; ++i) {
      S* dst = x + i * length + (static_cast<std::ptrdiff_t>(lo) * stride + offset);
      const S* row = cols + (i * kernel_size + k) * out_len + lo;
      if (stride == 1) {
        for (std::size_t j = 0; j < hi - lo; ++j) dst[j] += row[j];
      } else {
        for (std::size_t j = 0; j < hi - lo; ++j) dst[static_cast<std::ptrdiff_t>(j) * stride] += row[j];
      }
    }
  }
}

bool is_pointwise(std::size_t kernel_size, const ConvOptions& opt) {
  return kernel_size == 1 && opt.stride == 1 && opt.padding == 0;
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel_size, const ConvOptions& opt) {
  if (kernel_size < 1 || opt.stride < 1 || opt.dilation < 1) {
    throw GeometryError("conv1d: kernel size, stride and dilation must be positive");
  }
  const std::size_t padded = length + 2 * opt.padding;
  const std::size_t span = opt.dilation * (kernel_size - 1) + 1;
  if (padded < span) {
    throw GeometryError("conv1d: padded length " + std::to_string(padded) + " shorter than receptive field " +
                        std::to_string(span));
  }
  return (padded - span) / opt.stride + 1;
}

std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel_size, std::size_t stride,
                                           std::size_t padding) {
  if (kernel_size < 1 || stride < 1 || length < 1) {
    throw GeometryError("conv1d_transpose: kernel size, stride and length must be positive");
  }
  const auto full = static_cast<std::ptrdiff_t>((length - 1) * stride + kernel_size);
  const auto out = full - 2 * static_cast<std::ptrdiff_t>(padding);
  if (out < 1) throw GeometryError("conv1d_transpose: output length " + std::to_string(out) + " < 1");
  return static_cast<std::size_t>(out);
}

template <class S>
BasicTensor<S> conv1d(const BasicTensor<S>& input, const BasicTensor<S>& kernel, const BasicTensor<S>& bias,
                      const ConvOptions& opt) {
  require(input.ndim() == 2, "conv1d: input must be [C_in x T], got " + shape_string(input.shape()));
  require(kernel.ndim() == 3, "conv1d: kernel must be [C_out x C_in x K], got " + shape_string(kernel.shape()));
  const std::size_t cin = input.dim(0), len = input.dim(1);
  const std::size_t cout = kernel.dim(0), ksize = kernel.dim(2);
  require(kernel.dim(1) == cin, "conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(cin));
  require(bias.ndim() == 1 && bias.dim(0) == cout, "conv1d: bias must be [C_out]");
  const std::size_t out_len = conv1d_output_length(len, ksize, opt);
  const std::size_t rows = cin * ksize;
  const bool direct = is_pointwise(ksize, opt);

  // 1x1 convolutions multiply the input directly.
  Buffer<S> cols;
  if (!direct) {
    cols.resize(rows * out_len);
    im2col(input.data().data(), cin, len, ksize, out_len, opt, cols.data());
  }
  const S* col_data = direct ? input.data().data() : cols.data();

  Buffer<S> out(cout * out_len);
  {
    const S* b = bias.data().data();
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * out_len, out_len, b[o]);
    MatMap<S> y(out.data(), cout, out_len);
    y.noalias() += ConstMatMap<S>(kernel.data().data(), cout, rows) * ConstMatMap<S>(col_data, rows, out_len);
  }

  auto backward_fn = [cols = std::move(cols), direct, cin, len, cout, ksize, out_len, rows,
                      opt](Node<S>& self) {
    auto& in = *self.inputs[0];
    auto& ker = *self.inputs[1];
    auto& b = *self.inputs[2];
    ConstMatMap<S> g(self.grad.data(), cout, out_len);
    bool fresh;
    if (ker.requires_grad) {
      const S* col_data = direct ? in.data.data() : cols.data();
      MatMap<S> gw(ker.grad_target(fresh), cout, rows);
      assign_or_add(gw, g * ConstMatMap<S>(col_data, rows, out_len).transpose(), fresh);
    }
    if (b.requires_grad) {
      VecMap<S> gb(b.grad_target(fresh), cout);
      if (fresh) {
        gb = g.rowwise().sum();
      } else {
        gb += g.rowwise().sum();
      }
    }
    if (in.requires_grad) {
      ConstMatMap<S> w(ker.data.data(), cout, rows);
      if (direct) {
        MatMap<S> gx(in.grad_target(fresh), cin, len);
        assign_or_add(gx, w.transpose() * g, fresh);
      } else {
        Buffer<S> gcols(rows * out_len);
        MatMap<S>(gcols.data(), rows, out_len).noalias() = w.transpose() * g;
        col2im_add(gcols.data(), cin, len, ksize, out_len, opt, in.ensure_grad().data());
      }
    }
  };
  return make_result<S>({cout, out_len}, std::move(out), {input.node(), kernel.node(), bias.node()},
                        std::move(backward_fn));
}

template <class S>
BasicTensor<S> conv1d_transpose(const BasicTensor<S>& input, const BasicTensor<S>& kernel,
                                const BasicTensor<S>& bias, std::size_t stride, std::size_t padding) {
  require(input.ndim() == 2, "conv1d_transpose: input must be [C_in x T], got " + shape_string(input.shape()));
  require(kernel.ndim() == 3,
          "conv1d_transpose: kernel must be [C_in x C_out x K], got " + shape_string(kernel.shape()));
  const std::size_t cin = input.dim(0), len = input.dim(1);
  const std::size_t cout = kernel.dim(1), ksize = kernel.dim(2);
  require(kernel.dim(0) == cin, "conv1d_transpose: kernel expects " + std::to_string(kernel.dim(0)) +
                                    " input channels, input has " + std::to_string(cin));
  require(bias.ndim() == 1 && bias.dim(0) == cout, "conv1d_transpose: bias must be [C_out]");
  require(stride >= 1, "conv1d_transpose: stride must be positive");
  if (ksize < stride) {
    throw GeometryError("conv1d_transpose: kernel size " + std::to_string(ksize) + " < stride " +
                        std::to_string(stride) + " leaves output gaps");
  }
  const std::size_t out_len = conv1d_transpose_output_length(len, ksize, stride, padding);

  // The scatter pattern is that of a conv1d over the output with the same
  // stride and padding, whose im2col has `len` columns.
  const ConvOptions scatter{stride, 1, padding};
  const std::size_t rows = cout * ksize;
  Buffer<S> cols(rows * len);
  MatMap<S>(cols.data(), rows, len).noalias() =
      ConstMatMap<S>(kernel.data().data(), cin, rows).transpose() * ConstMatMap<S>(input.data().data(), cin, len);
  Buffer<S> out(cout * out_len);
  for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * out_len, out_len, bias.data()[o]);
  col2im_add(cols.data(), cout, out_len, ksize, len, scatter, out.data());

  auto backward_fn = [cin, len, cout, ksize, out_len, rows, scatter](Node<S>& self) {
    auto& in = *self.inputs[0];
    auto& ker = *self.inputs[1];
    auto& b = *self.inputs[2];
    bool fresh;
    if (b.requires_grad) {
      VecMap<S> gb(b.grad_target(fresh), cout);
      ConstMatMap<S> g(self.grad.data(), cout, out_len);
      if (fresh) {
        gb = g.rowwise().sum();
      } else {
        gb += g.rowwise().sum();
      }
    }
    if (!in.requires_grad && !ker.requires_grad) return;
    Buffer<S> gcols(rows * len);
    im2col(self.grad.data(), cout, out_len, ksize, len, scatter, gcols.data());
    ConstMatMap<S> gc(gcols.data(), rows, len);
    if (ker.requires_grad) {
      MatMap<S> gw(ker.grad_target(fresh), cin, rows);
      assign_or_add(gw, ConstMatMap<S>(in.data.data(), cin, len) * gc.transpose(), fresh);
    }
    if (in.requires_grad) {
      MatMap<S> gx(in.grad_target(fresh), cin, len);
      assign_or_add(gx, ConstMatMap<S>(ker.data.data(), cin, rows) * gc, fresh);
    }
  };
  return make_result<S>({cout, out_len}, std::move(out), {input.node(), kernel.node(), bias.node()},
                        std::move(backward_fn));
}

template <class S>
BasicTensor<S> relu(const BasicTensor<S>& x) {
  const S* src = x.data().data();
  const std::size_t n = x.numel();
  Buffer<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = src[i] > S(0) ? src[i] : S(0);
  return make_result<S>(x.shape(), std::move(out), {x.node()}, [](Node<S>& self) {
    auto& in = *self.inputs[0];
    const S* v = in.data.data();
    const S* up = self.grad.data();
    const std::size_t n = in.data.size();
    bool fresh;
    S* g = in.grad_target(fresh);
    // Gradient is zero at exactly 0.
    if (fresh) {
      for (std::size_t i = 0; i < n; ++i) g[i] = v[i] > S(0) ? up[i] : S(0);
    } else {
      for (std::size_t i = 0; i < n; ++i) g[i] += v[i] > S(0) ? up[i] : S(0);
    }
  });
}

template <class S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "add");
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  const std::size_t n = a.numel();
  Buffer<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  return make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<S>& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) accumulate_scaled(*in, self.grad.data(), S(1));
    }
  });
}

template <class S>
BasicTensor<S> subtract(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "subtract");
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  const std::size_t n = a.numel();
  Buffer<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
  return make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<S>& self) {
    if (self.inputs[0]->requires_grad) accumulate_scaled(*self.inputs[0], self.grad.data(), S(1));
    if (self.inputs[1]->requires_grad) accumulate_scaled(*self.inputs[1], self.grad.data(), S(-1));
  });
}

template <class S>
BasicTensor<S> scale(const BasicTensor<S>& x, S factor) {
  const S* src = x.data().data();
  const std::size_t n = x.numel();
  Buffer<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = src[i] * factor;
  return make_result<S>(x.shape(), std::move(out), {x.node()}, [factor](Node<S>& self) {
    accumulate_scaled(*self.inputs[0], self.grad.data(), factor);
  });
}

template <class S>
BasicTensor<S> multiply(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "multiply");
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  const std::size_t n = a.numel();
  Buffer<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  return make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<S>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const S* up = self.grad.data();
    const std::size_t n = self.grad.size();
    if (lhs.requires_grad) {
      S* g = lhs.ensure_grad().data();
      const S* r = rhs.data.data();
      for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * r[i];
    }
    if (rhs.requires_grad) {
      S* g = rhs.ensure_grad().data();
      const S* l = lhs.data.data();
      for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * l[i];
    }
  });
}

template <class S>
BasicTensor<S> pointwise(PointwiseKind kind, std::span<const BasicTensor<S>> operands, S constant) {
  const std::size_t arity = (kind == PointwiseKind::relu || kind == PointwiseKind::scale_by_constant) ? 1 : 2;
  require(operands.size() == arity, "pointwise: expected " + std::to_string(arity) + " operand(s), got " +
                                        std::to_string(operands.size()));
  switch (kind) {
    case PointwiseKind::relu:
      return relu(operands[0]);
    case PointwiseKind::add:
      return add(operands[0], operands[1]);
    case PointwiseKind::subtract:
      return subtract(operands[0], operands[1]);
    case PointwiseKind::scale_by_constant:
      return scale(operands[0], constant);
    case PointwiseKind::multiply_elementwise:
      return multiply(operands[0], operands[1]);
  }
  throw PreconditionError("pointwise: unknown kind");
}

template <class S>
BasicTensor<S> mse(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "mse");
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  Buffer<S> value(1);
  value[0] = static_cast<S>(acc / static_cast<double>(n));
  return make_result<S>({1}, std::move(value), {a.node(), b.node()}, [n](Node<S>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const S coeff = S(2) * self.grad[0] / static_cast<S>(n);
    const S* l = lhs.data.data();
    const S* r = rhs.data.data();
    bool fresh;
    if (lhs.requires_grad) {
      S* g = lhs.grad_target(fresh);
      if (fresh) {
        for (std::size_t i = 0; i < n; ++i) g[i] = coeff * (l[i] - r[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) g[i] += coeff * (l[i] - r[i]);
      }
    }
    if (rhs.requires_grad) {
      S* g = rhs.grad_target(fresh);
      if (fresh) {
        for (std::size_t i = 0; i < n; ++i) g[i] = -coeff * (l[i] - r[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) g[i] -= coeff * (l[i] - r[i]);
      }
    }
  });
}

template <class S>
BasicTensor<S> detach(const BasicTensor<S>& x) {
  auto node = std::make_shared<Node<S>>();
  node->shape = x.shape();
  node->data.assign(x.data().begin(), x.data().end());
  return BasicTensor<S>::wrap(std::move(node));
}

template <class S>
BasicTensor<S> transpose(const BasicTensor<S>& x) {
  require(x.ndim() == 2, "transpose: expected a 2-D tensor, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Buffer<S> out(r * c);
  MatMap<S>(out.data(), c, r) = ConstMatMap<S>(x.data().data(), r, c).transpose();
  return make_result<S>({c, r}, std::move(out), {x.node()}, [r, c](Node<S>& self) {
    bool fresh;
    MatMap<S> g(self.inputs[0]->grad_target(fresh), r, c);
    if (fresh) {
      g = ConstMatMap<S>(self.grad.data(), c, r).transpose();
    } else {
      g += ConstMatMap<S>(self.grad.data(), c, r).transpose();
    }
  });
}

template <class S>
BasicTensor<S> gather_rows(const BasicTensor<S>& table, std::span<const std::int32_t> rows) {
  require(table.ndim() == 2, "gather_rows: table must be 2-D, got " + shape_string(table.shape()));
  require(!rows.empty(), "gather_rows: no rows requested");
  const std::size_t n = table.dim(0), d = table.dim(1);
  Buffer<S> out(rows.size() * d);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    require(rows[t] >= 0 && static_cast<std::size_t>(rows[t]) < n,
            "gather_rows: row index " + std::to_string(rows[t]) + " out of range");
    std::copy_n(table.data().data() + static_cast<std::size_t>(rows[t]) * d, d, out.data() + t * d);
  }
  std::vector<std::int32_t> index(rows.begin(), rows.end());
  return make_result<S>({rows.size(), d}, std::move(out), {table.node()},
                        [index = std::move(index), d](Node<S>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t t = 0; t < index.size(); ++t) {
                            S* dst = g.data() + static_cast<std::size_t>(index[t]) * d;
                            const S* src = self.grad.data() + t * d;
                            for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
                          }
                        });
}

#define STEMVQ_INSTANTIATE_OPS(S)                                                                               \
  template BasicTensor<S> conv1d(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&,          \
                                 const ConvOptions&);                                                          \
  template BasicTensor<S> conv1d_transpose(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&, \
                                           std::size_t, std::size_t);                                          \
  template BasicTensor<S> relu(const BasicTensor<S>&);                                                          \
  template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);                                    \
  template BasicTensor<S> subtract(const BasicTensor<S>&, const BasicTensor<S>&);                               \
  template BasicTensor<S> scale(const BasicTensor<S>&, S);                                                      \
  template BasicTensor<S> multiply(const BasicTensor<S>&, const BasicTensor<S>&);                               \
  template BasicTensor<S> pointwise(PointwiseKind, std::span<const BasicTensor<S>>, S);                         \
  template BasicTensor<S> mse(const BasicTensor<S>&, const BasicTensor<S>&);                                    \
  template BasicTensor<S> detach(const BasicTensor<S>&);                                                        \
  template BasicTensor<S> transpose(const BasicTensor<S>&);                                                     \
  template BasicTensor<S> gather_rows(const BasicTensor<S>&, std::span<const std::int32_t>);

STEMVQ_INSTANTIATE_OPS(float)
STEMVQ_INSTANTIATE_OPS(double)

#undef STEMVQ_INSTANTIATE_OPS

}  // namespace stemvq
