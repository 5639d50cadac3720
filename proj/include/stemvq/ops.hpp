#pragma once

#include <cstdint>
#include <span>

#include "stemvq/tensor.hpp"

namespace stemvq {

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

// Output length of a zero-padded strided/dilated convolution; throws
// GeometryError when the padded input is shorter than the receptive field.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel_size, const ConvOptions& opt);
std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel_size,
                                           std::size_t stride, std::size_t padding);

// input [C_in x T], kernel [C_out x C_in x K], bias [C_out] -> [C_out x T_out]
template <class S>
BasicTensor<S> conv1d(const BasicTensor<S>& input, const BasicTensor<S>& kernel,
                      const BasicTensor<S>& bias, const ConvOptions& opt = {});

// input [C_in x T], kernel [C_in x C_out x K], bias [C_out] -> [C_out x T_out]
// with T_out = (T - 1) * stride - 2 * padding + K. Adjoint of conv1d.
template <class S>
BasicTensor<S> conv1d_transpose(const BasicTensor<S>& input, const BasicTensor<S>& kernel,
                                const BasicTensor<S>& bias, std::size_t stride, std::size_t padding);

enum class PointwiseKind { relu, add, subtract, scale_by_constant, multiply_elementwise };

template <class S>
BasicTensor<S> relu(const BasicTensor<S>& x);
template <class S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b);
template <class S>
BasicTensor<S> subtract(const BasicTensor<S>& a, const BasicTensor<S>& b);
template <class S>
BasicTensor<S> scale(const BasicTensor<S>& x, S factor);
template <class S>
BasicTensor<S> multiply(const BasicTensor<S>& a, const BasicTensor<S>& b);

// Dispatching form; `constant` is only read by scale_by_constant.
template <class S>
BasicTensor<S> pointwise(PointwiseKind kind, std::span<const BasicTensor<S>> operands, S constant = S(1));

// Mean of squared differences over all elements, as a [1] tensor.
template <class S>
BasicTensor<S> mse(const BasicTensor<S>& a, const BasicTensor<S>& b);

// Same values, no gradient path back to the producers of x.
template <class S>
BasicTensor<S> detach(const BasicTensor<S>& x);

// [R x C] -> [C x R]
template <class S>
BasicTensor<S> transpose(const BasicTensor<S>& x);

// Row lookup: table [N x D], rows -> [rows.size() x D]. Gradient scatters
// back into the selected table rows.
template <class S>
BasicTensor<S> gather_rows(const BasicTensor<S>& table, std::span<const std::int32_t> rows);

}  // namespace stemvq
