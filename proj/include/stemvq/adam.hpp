#pragma once

#include <cstdint>
#include <vector>

#include "stemvq/tensor.hpp"

namespace stemvq {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers for one parameter list. Parameters are bound
// by position: the i-th step() argument must always be the same tensor.
template <class S>
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  // One bias-corrected Adam update over `params`, reading their grads.
  // Throws PreconditionError if a parameter has no gradient.
  void step(std::vector<BasicTensor<S>>& params);

  std::int64_t step_count() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<std::vector<S>>& first_moments() const { return m_; }
  const std::vector<std::vector<S>>& second_moments() const { return v_; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::vector<std::vector<S>> m_;
  std::vector<std::vector<S>> v_;
};

// Global L2 norm over all parameter grads (missing grads count as zero).
template <class S>
double global_grad_norm(const std::vector<BasicTensor<S>>& params);

// Rescales grads so their global norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
template <class S>
double clip_grad_norm(std::vector<BasicTensor<S>>& params, double max_norm);

}  // namespace stemvq
