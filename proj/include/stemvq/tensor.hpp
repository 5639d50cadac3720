#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace stemvq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// Allocator whose value-less construct() leaves scalars uninitialized, so
// buffers that are about to be overwritten skip a memset.
// Storage is aligned to the widest vector register so vectorized reductions
// split the same way wherever the buffer lands; the default allocator's
// 16-byte guarantee makes float sums depend on the address.
inline constexpr std::size_t kBufferAlignment = 64;

template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <class S>
using Buffer = std::vector<S, DefaultInitAllocator<S>>;

template <class S>
struct Node {
  Shape shape;
  Buffer<S> data;
  Buffer<S> grad;  // empty until a gradient is written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Zero-filled gradient storage.
  Buffer<S>& ensure_grad();
  // Gradient storage for a dense write; `fresh` says the caller must assign
  // rather than accumulate because the contents are uninitialized.
  S* grad_target(bool& fresh);
};

}  // namespace detail

// Thread-local switch that stops ops from recording backward closures.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

// RAII guard disabling graph recording for inference and frozen encoders.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Handle to a dense row-major array that may take part in a define-by-run
// graph. Copies share the underlying node; values are immutable once an op
// has produced them. Leaves (parameters) may be updated in place.
template <class S>
class BasicTensor {
 public:
  using Scalar = S;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, S value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
  static BasicTensor scalar(S value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }

  std::span<const S> data() const;
  // Only leaves may be written; throws otherwise.
  std::span<S> mutable_data();
  S item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const S> grad() const;
  std::span<S> mutable_grad();
  void zero_grad();

  // Tensors this one was computed from (empty for leaves).
  std::vector<BasicTensor> inputs() const;
  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

  const NodePtr& node() const { return node_; }
  static BasicTensor wrap(NodePtr node);

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Nodes reachable from `root` that require grad, inputs before consumers.
template <class S>
std::vector<BasicTensor<S>> topological_order(const BasicTensor<S>& root);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
// every requires_grad tensor on the graph, including existing leaf grads.
template <class S>
void backward(const BasicTensor<S>& loss);

}  // namespace stemvq
