#include "stemvq/tensor.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "stemvq/errors.hpp"

namespace stemvq {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

namespace detail {

template <class S>
Buffer<S>& Node<S>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), S(0));
  return grad;
}

template <class S>
S* Node<S>::grad_target(bool& fresh) {
  fresh = grad.empty();
  if (fresh) grad.resize(data.size());
  return grad.data();
}

}  // namespace detail

template <class S>
BasicTensor<S> BasicTensor<S>::wrap(NodePtr node) {
  return BasicTensor(std::move(node));
}

template <class S>
BasicTensor<S> BasicTensor<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw PreconditionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw PreconditionError("data length " + std::to_string(data.size()) + " does not match shape " +
                            shape_string(shape));
  }
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->data.assign(data.begin(), data.end());
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class S>
BasicTensor<S> BasicTensor<S>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <class S>
BasicTensor<S> BasicTensor<S>::full(Shape shape, S value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<S>(n, value), requires_grad);
}

template <class S>
BasicTensor<S> BasicTensor<S>::scalar(S value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <class S>
const Shape& BasicTensor<S>::shape() const {
  if (!node_) throw PreconditionError("use of undefined tensor");
  return node_->shape;
}

template <class S>
std::size_t BasicTensor<S>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw PreconditionError("axis out of range for " + shape_string(s));
  return s[axis];
}

template <class S>
std::span<const S> BasicTensor<S>::data() const {
  if (!node_) throw PreconditionError("use of undefined tensor");
  return node_->data;
}

template <class S>
std::span<S> BasicTensor<S>::mutable_data() {
  if (!node_) throw PreconditionError("use of undefined tensor");
  if (!node_->is_leaf()) throw PreconditionError("only leaf tensors can be modified in place");
  return node_->data;
}

template <class S>
S BasicTensor<S>::item() const {
  if (numel() != 1) throw PreconditionError("item() needs a single-element tensor, got " + shape_string(shape()));
  return node_->data[0];
}

template <class S>
bool BasicTensor<S>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <class S>
void BasicTensor<S>::set_requires_grad(bool on) {
  if (!node_) throw PreconditionError("use of undefined tensor");
  if (!node_->is_leaf()) throw PreconditionError("requires_grad can only be changed on leaves");
  node_->requires_grad = on;
}

template <class S>
bool BasicTensor<S>::is_leaf() const {
  return node_ && node_->is_leaf();
}

template <class S>
bool BasicTensor<S>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <class S>
std::span<const S> BasicTensor<S>::grad() const {
  if (!node_) throw PreconditionError("use of undefined tensor");
  return node_->grad;
}

template <class S>
std::span<S> BasicTensor<S>::mutable_grad() {
  if (!node_) throw PreconditionError("use of undefined tensor");
  return node_->ensure_grad();
}

template <class S>
void BasicTensor<S>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <class S>
std::vector<BasicTensor<S>> BasicTensor<S>::inputs() const {
  std::vector<BasicTensor> out;
  if (!node_) return out;
  for (const auto& in : node_->inputs) out.push_back(BasicTensor(in));
  return out;
}

template <class S>
std::vector<BasicTensor<S>> topological_order(const BasicTensor<S>& root) {
  using NodeT = detail::Node<S>;
  std::vector<BasicTensor<S>> order;
  if (!root.requires_grad()) return order;

  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<const NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  std::vector<NodeT*> post;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    post.push_back(node);
    stack.pop_back();
  }

  // Re-wrap with shared ownership by walking the owning edges.
  std::unordered_map<const NodeT*, std::shared_ptr<NodeT>> owners;
  owners[root.node().get()] = root.node();
  for (auto* n : post) {
    for (const auto& in : n->inputs) owners.emplace(in.get(), in);
  }
  order.reserve(post.size());
  for (auto* n : post) order.push_back(BasicTensor<S>::wrap(owners.at(n)));
  return order;
}

template <class S>
void backward(const BasicTensor<S>& loss) {
  if (!loss.defined()) throw PreconditionError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw PreconditionError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  auto order = topological_order(loss);
  loss.node()->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = *it->node();
    if (node.is_leaf() || node.grad.empty()) continue;
    node.backward_fn(node);
  }
  // Interior grads are scratch space; leaves keep theirs.
  for (auto& t : order) {
    if (!t.is_leaf()) t.node()->grad.clear();
  }
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<Tensor> topological_order(const Tensor&);
template std::vector<Tensor64> topological_order(const Tensor64&);
template void backward(const Tensor&);
template void backward(const Tensor64&);

}  // namespace stemvq
