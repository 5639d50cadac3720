#include "stemvq/adam.hpp"

#include <cmath>
#include <string>

#include "stemvq/errors.hpp"

namespace stemvq {

template <class S>
void AdamState<S>::step(std::vector<BasicTensor<S>>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }
  if (params.size() != m_.size()) {
    throw PreconditionError("adam: parameter count changed from " + std::to_string(m_.size()) + " to " +
                            std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].numel() != m_[i].size()) {
      throw PreconditionError("adam: parameter " + std::to_string(i) + " changed shape");
    }
    if (!params[i].has_grad()) {
      throw PreconditionError("adam: parameter " + std::to_string(i) + " has no gradient");
    }
  }

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step_size = options_.lr / corr1;
  const double sqrt_corr2 = std::sqrt(corr2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<S>(mk);
      v[k] = static_cast<S>(vk);
      const double denom = std::sqrt(vk) / sqrt_corr2 + options_.eps;
      w[k] = static_cast<S>(w[k] - step_size * mk / denom);
    }
  }
}

template <class S>
double global_grad_norm(const std::vector<BasicTensor<S>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (auto g : p.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

template <class S>
double clip_grad_norm(std::vector<BasicTensor<S>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template class AdamState<float>;
template class AdamState<double>;
template double global_grad_norm(const std::vector<Tensor>&);
template double global_grad_norm(const std::vector<Tensor64>&);
template double clip_grad_norm(std::vector<Tensor>&, double);
template double clip_grad_norm(std::vector<Tensor64>&, double);

}  // namespace stemvq
