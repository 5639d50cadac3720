#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stemvq/tensor.hpp"

namespace stemvq {

inline constexpr double kGradcheckStep = 1e-3;

template <class S>
constexpr double gradcheck_tolerance() {
  return sizeof(S) == sizeof(float) ? 1e-3 : 1e-6;
}

// Central differences (f(x+h) - f(x-h)) / 2h of a scalar function with
// respect to every element of `leaves`, which are perturbed in place and
// restored.
template <class S>
std::vector<std::vector<double>> numeric_gradient(const std::function<double()>& f,
                                                  std::vector<BasicTensor<S>> leaves, double h = kGradcheckStep);

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the
// concatenation of all leaves; 0 when both vanish.
double relative_error(const std::vector<std::vector<double>>& analytic,
                      const std::vector<std::vector<double>>& numeric);

struct GradcheckCase {
  std::string name;
  std::string precision;  // "float32" or "float64"
  double relative_error = 0;
  double tolerance = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  bool passed() const;
};

// Random small graphs chaining conv1d, a pointwise op, conv1d_transpose and
// the straight-through quantizer composite into mse losses, each checked in
// float32 and float64.
GradcheckReport run_gradcheck_suite(std::uint64_t seed = 1, std::size_t graphs = 10);

}  // namespace stemvq
