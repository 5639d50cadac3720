#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "stemvq/adam.hpp"
#include "stemvq/errors.hpp"
#include "stemvq/gradcheck.hpp"
#include "stemvq/ops.hpp"
#include "stemvq/random.hpp"
#include "stemvq/tensor.hpp"

using namespace stemvq;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Direct sliding-window definition with zero padding on both ends.
std::vector<double> naive_conv1d(const std::vector<double>& x, std::size_t cin, std::size_t len,
                                 const std::vector<double>& w, std::size_t cout, std::size_t k,
                                 const std::vector<double>& b, const ConvOptions& opt, std::size_t& out_len) {
  std::vector<double> out;
  out_len = 0;
  for (std::size_t t = 0;; ++t) {
    const long start = static_cast<long>(t * opt.stride) - static_cast<long>(opt.padding);
    const long last = start + static_cast<long>(opt.dilation * (k - 1));
    if (last >= static_cast<long>(len + opt.padding)) break;
    ++out_len;
  }
  out.assign(cout * out_len, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = b[o];
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const long pos = static_cast<long>(t * opt.stride + j * opt.dilation) - static_cast<long>(opt.padding);
          if (pos < 0 || pos >= static_cast<long>(len)) continue;
          acc += w[(o * cin + c) * k + j] * x[c * len + static_cast<std::size_t>(pos)];
        }
      }
      out[o * out_len + t] = acc;
    }
  }
  return out;
}

// Scatter-accumulate definition of the transposed convolution.
std::vector<double> naive_conv1d_transpose(const std::vector<double>& x, std::size_t cin, std::size_t len,
                                           const std::vector<double>& w, std::size_t cout, std::size_t k,
                                           const std::vector<double>& b, std::size_t stride, std::size_t padding,
                                           std::size_t& out_len) {
  const std::size_t full = (len - 1) * stride + k;
  std::vector<double> wide(cout * full, 0.0);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t j = 0; j < k; ++j) wide[o * full + t * stride + j] += x[c * len + t] * w[(c * cout + o) * k + j];
  out_len = full - 2 * padding;
  std::vector<double> out(cout * out_len);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < out_len; ++t) out[o * out_len + t] = wide[o * full + t + padding] + b[o];
  return out;
}

template <class S>
BasicTensor<S> make(Shape shape, const std::vector<double>& v, bool grad = false) {
  return BasicTensor<S>::from_data(std::move(shape), std::vector<S>(v.begin(), v.end()), grad);
}

}  // namespace

TEST(Conv1d, LengthFormulaExample) {
  EXPECT_EQ(conv1d_output_length(10, 3, {2, 1, 0}), 4u);
}

TEST(Conv1d, DifferenceKernelExample) {
  auto x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  auto w = Tensor::from_data({1, 1, 3}, {1, 0, -1});
  auto y = conv1d(x, w, Tensor::zeros({1}));
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y.data()[0], -2.0f);
  EXPECT_EQ(y.data()[1], -2.0f);
}

TEST(Conv1d, IdentityKernelIsIdentity) {
  Rng rng(3);
  for (std::size_t len : {1u, 7u, 64u}) {
    auto xv = random_values(rng, len);
    auto x = make<float>({1, len}, xv);
    auto y = conv1d(x, Tensor::from_data({1, 1, 1}, {1.0f}), Tensor::zeros({1}));
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < len; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  }
}

TEST(Conv1d, ExhaustiveSweepMatchesNaiveReference) {
  Rng rng(11);
  std::size_t checked = 0;
  for (std::size_t len = 1; len <= 32; ++len)
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t s = 1; s <= 3; ++s)
        for (std::size_t d = 1; d <= 3; ++d)
          for (std::size_t p = 0; p <= 2; ++p) {
            const ConvOptions opt{s, d, p};
            const std::size_t cin = 2, cout = 3;
            auto xv = random_values(rng, cin * len);
            auto wv = random_values(rng, cout * cin * k);
            auto bv = random_values(rng, cout);
            std::size_t expected_len = 0;
            auto expected = naive_conv1d(xv, cin, len, wv, cout, k, bv, opt, expected_len);
            if (expected_len == 0) {
              EXPECT_THROW(conv1d_output_length(len, k, opt), GeometryError);
              continue;
            }
            ASSERT_EQ(conv1d_output_length(len, k, opt), expected_len);
            auto y = conv1d(make<double>({cin, len}, xv), make<double>({cout, cin, k}, wv), make<double>({cout}, bv), opt);
            ASSERT_EQ(y.shape(), (Shape{cout, expected_len}));
            for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(y.data()[i], expected[i], 1e-12);
            ++checked;
          }
  EXPECT_GT(checked, 3900u);
}

TEST(Conv1d, ChannelMismatchIsPreconditionError) {
  EXPECT_THROW(conv1d(Tensor::zeros({2, 8}), Tensor::zeros({1, 3, 3}), Tensor::zeros({1})), PreconditionError);
}

TEST(Conv1d, TooShortInputIsGeometryError) {
  EXPECT_THROW(conv1d(Tensor::zeros({1, 2}), Tensor::zeros({1, 1, 3}), Tensor::zeros({1})), GeometryError);
}

TEST(Conv1dTranspose, LengthFormulaExample) {
  EXPECT_EQ(conv1d_transpose_output_length(4, 3, 2, 0), 9u);
}

TEST(Conv1dTranspose, ScatterExample) {
  auto y = conv1d_transpose(Tensor::from_data({1, 2}, {1, 0}), Tensor::from_data({1, 1, 3}, {1, 2, 3}),
                            Tensor::zeros({1}), 2, 0);
  std::vector<float> got(y.data().begin(), y.data().end());
  EXPECT_EQ(got, (std::vector<float>{1, 2, 3, 0, 0}));
}

TEST(Conv1dTranspose, SweepMatchesScatterReference) {
  Rng rng(5);
  for (std::size_t len = 1; len <= 12; ++len)
    for (std::size_t s = 1; s <= 3; ++s)
      for (std::size_t k = s; k <= 5; ++k)
        for (std::size_t p = 0; p <= 2; ++p) {
          const std::size_t cin = 2, cout = 2;
          if ((len - 1) * s + k <= 2 * p) {
            EXPECT_THROW(conv1d_transpose_output_length(len, k, s, p), GeometryError);
            continue;
          }
          auto xv = random_values(rng, cin * len);
          auto wv = random_values(rng, cin * cout * k);
          auto bv = random_values(rng, cout);
          std::size_t out_len = 0;
          auto expected = naive_conv1d_transpose(xv, cin, len, wv, cout, k, bv, s, p, out_len);
          auto y = conv1d_transpose(make<double>({cin, len}, xv), make<double>({cin, cout, k}, wv),
                                    make<double>({cout}, bv), s, p);
          ASSERT_EQ(y.shape(), (Shape{cout, out_len}));
          for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(y.data()[i], expected[i], 1e-12);
        }
}

TEST(Pointwise, Examples) {
  auto r = relu(Tensor::from_data({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{0, 0, 2}));
  auto a = add(Tensor::from_data({2}, {1, 2}), Tensor::from_data({2}, {3, 4}));
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()), (std::vector<float>{4, 6}));
  auto s = scale(Tensor::from_data({2}, {2, -2}), 0.5f);
  EXPECT_EQ(std::vector<float>(s.data().begin(), s.data().end()), (std::vector<float>{1, -1}));
}

TEST(Pointwise, ShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), PreconditionError);
  EXPECT_THROW(multiply(Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), PreconditionError);
}

TEST(Pointwise, ReluGradientAtZeroIsZero) {
  auto x = Tensor::from_data({3}, {-1, 0, 2}, true);
  backward(mse(relu(x), Tensor::zeros({3})));
  EXPECT_EQ(x.grad()[0], 0.0f);
  EXPECT_EQ(x.grad()[1], 0.0f);
  EXPECT_NE(x.grad()[2], 0.0f);
}

TEST(Mse, Examples) {
  auto a = Tensor::from_data({2}, {1, 1}, true);
  auto b = Tensor::from_data({2}, {0, 3});
  EXPECT_EQ(mse(a, a).item(), 0.0f);
  auto loss = mse(a, b);
  EXPECT_FLOAT_EQ(loss.item(), 2.5f);
  backward(loss);
  EXPECT_FLOAT_EQ(a.grad()[0], 1.0f);
  EXPECT_FLOAT_EQ(a.grad()[1], -2.0f);
  EXPECT_THROW(mse(Tensor::zeros({2}), Tensor::zeros({3})), PreconditionError);
}

TEST(Mse, GradientMatchesFiniteDifference) {
  auto a = Tensor64::from_data({2}, {1, 1}, true);
  auto b = Tensor64::from_data({2}, {0, 3});
  backward(mse(a, b));
  auto numeric = numeric_gradient<double>([&] { return mse(a, b).item(); }, {a});
  EXPECT_NEAR(numeric[0][0], 1.0, 1e-9);
  EXPECT_NEAR(numeric[0][1], -2.0, 1e-9);
  EXPECT_NEAR(a.grad()[0], numeric[0][0], 1e-9);
  EXPECT_NEAR(a.grad()[1], numeric[0][1], 1e-9);
}

TEST(Backward, SingleElementSquare) {
  auto x = Tensor::from_data({1}, {3}, true);
  backward(mse(x, Tensor::zeros({1})));
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(backward(relu(x)), PreconditionError);
}

TEST(Backward, FanOutSumsPathGradients) {
  Rng rng(9);
  auto xv = random_values(rng, 6);
  auto w1 = random_values(rng, 6), w2 = random_values(rng, 6), w3 = random_values(rng, 6);
  auto path = [&](const Tensor64& x, const std::vector<double>& w) {
    return mse(multiply(x, make<double>({6}, w)), Tensor64::zeros({6}));
  };

  auto x = make<double>({6}, xv, true);
  backward(add(add(path(x, w1), path(x, w2)), path(x, w3)));

  std::vector<double> sum(6, 0.0);
  for (const auto* w : {&w1, &w2, &w3}) {
    auto xi = make<double>({6}, xv, true);
    backward(path(xi, *w));
    for (std::size_t i = 0; i < 6; ++i) sum[i] += xi.grad()[i];
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x.grad()[i], sum[i], 1e-14);
}

TEST(Backward, DetachStopsGradient) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto d = detach(x);
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(std::vector<float>(d.data().begin(), d.data().end()), (std::vector<float>{1, 2}));
  auto y = Tensor::from_data({2}, {0, 0}, true);
  backward(mse(add(d, y), Tensor::zeros({2})));
  EXPECT_FALSE(x.has_grad());
  EXPECT_TRUE(y.has_grad());
}

TEST(Backward, NoGradGuardBuildsNoGraph) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = relu(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Backward, TopologicalOrderPutsInputsFirst) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto h = relu(x);
  auto loss = mse(h, Tensor::zeros({2}));
  auto order = topological_order(loss);
  ASSERT_FALSE(order.empty());
  EXPECT_TRUE(order.back().same_node(loss));
  std::size_t ix = order.size(), ih = order.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i].same_node(x)) ix = i;
    if (order[i].same_node(h)) ih = i;
  }
  EXPECT_LT(ix, ih);
}

TEST(Determinism, OpsAreBitwiseRepeatable) {
  Rng rng(21);
  auto xv = random_values(rng, 3 * 40), wv = random_values(rng, 4 * 3 * 5), bv = random_values(rng, 4);
  auto run = [&] {
    auto y = conv1d(make<float>({3, 40}, xv), make<float>({4, 3, 5}, wv), make<float>({4}, bv), {2, 2, 1});
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

// Finite-difference checks for each op in both precisions.
template <class S>
class OpGradient : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(OpGradient, Precisions);

template <class S>
void expect_fd_match(const std::function<BasicTensor<S>()>& loss_fn, std::vector<BasicTensor<S>> leaves) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
  auto numeric = numeric_gradient<S>([&] { return static_cast<double>(loss_fn().item()); }, leaves);
  EXPECT_LT(relative_error(analytic, numeric), gradcheck_tolerance<S>());
}

TYPED_TEST(OpGradient, Conv1d) {
  using S = TypeParam;
  Rng rng(31);
  auto x = make<S>({2, 11}, random_values(rng, 22), true);
  auto w = make<S>({3, 2, 3}, random_values(rng, 18), true);
  auto b = make<S>({3}, random_values(rng, 3), true);
  auto target = make<S>({3, 6}, random_values(rng, 18));
  expect_fd_match<S>([&] { return mse(conv1d(x, w, b, {2, 1, 1}), target); }, {x, w, b});
}

TYPED_TEST(OpGradient, Conv1dTranspose) {
  using S = TypeParam;
  Rng rng(32);
  auto x = make<S>({2, 5}, random_values(rng, 10), true);
  auto w = make<S>({2, 3, 4}, random_values(rng, 24), true);
  auto b = make<S>({3}, random_values(rng, 3), true);
  auto target = make<S>({3, 10}, random_values(rng, 30));
  expect_fd_match<S>([&] { return mse(conv1d_transpose(x, w, b, 2, 1), target); }, {x, w, b});
}

TYPED_TEST(OpGradient, PointwiseOps) {
  using S = TypeParam;
  Rng rng(33);
  std::vector<double> av = random_values(rng, 8);
  for (auto& v : av) v += v >= 0 ? 0.1 : -0.1;  // keep clear of the relu kink
  auto a = make<S>({8}, av, true);
  auto b = make<S>({8}, random_values(rng, 8), true);
  auto target = make<S>({8}, random_values(rng, 8));
  expect_fd_match<S>(
      [&] {
        // The product is kept small so the quartic loss stays within central-difference accuracy.
        auto h = add(multiply(scale(add(relu(a), b), S(0.1)), subtract(a, b)), scale(a, S(0.7)));
        return mse(h, target);
      },
      {a, b});
}

TYPED_TEST(OpGradient, TransposeAndGather) {
  using S = TypeParam;
  Rng rng(34);
  auto table = make<S>({4, 3}, random_values(rng, 12), true);
  const std::vector<std::int32_t> rows{2, 0, 2, 3, 1};
  auto target = make<S>({3, 5}, random_values(rng, 15));
  expect_fd_match<S>([&] { return mse(transpose(gather_rows(table, rows)), target); }, {table});
}

TEST(GradcheckSuite, TenRandomGraphsPass) {
  auto report = run_gradcheck_suite(1, 10);
  EXPECT_EQ(report.cases.size(), 20u);
  for (const auto& c : report.cases) EXPECT_TRUE(c.passed) << c.name << " " << c.precision << " " << c.relative_error;
  EXPECT_TRUE(report.passed());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = Tensor::from_data({1}, {0.5f}, true);
  p.mutable_grad()[0] = 1.0f;
  AdamState<float> adam(AdamOptions{0.1});
  std::vector<Tensor> params{p};
  adam.step(params);
  EXPECT_NEAR(p.data()[0] - 0.5f, -0.1f, 1e-6);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = Tensor::from_data({3}, {0.5f, -1.0f, 2.0f}, true);
  AdamState<float> adam;
  std::vector<Tensor> params{p};
  for (int i = 0; i < 5; ++i) {
    p.zero_grad();
    std::fill(p.mutable_grad().begin(), p.mutable_grad().end(), 0.0f);
    adam.step(params);
    EXPECT_EQ(adam.step_count(), i + 1);
  }
  EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), (std::vector<float>{0.5f, -1.0f, 2.0f}));
}

TEST(Adam, MissingGradientThrows) {
  auto p = Tensor::from_data({1}, {0.5f}, true);
  AdamState<float> adam;
  std::vector<Tensor> params{p};
  EXPECT_THROW(adam.step(params), PreconditionError);
}

TEST(Adam, ClipScalesToMaxNorm) {
  auto p = Tensor::from_data({2}, {0, 0}, true);
  p.mutable_grad()[0] = 3.0f;
  p.mutable_grad()[1] = 4.0f;
  std::vector<Tensor> params{p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(params), 1.0, 1e-6);
  EXPECT_NEAR(p.grad()[0], 0.6f, 1e-6);
}
