#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  // Empty until a gradient is first accumulated; then data.size() long.
  std::vector<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

// Reference-semantics handle to a dense row-major array. Copies of a Tensor
// share storage; use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Value of a single-element tensor.
  T item() const;
  Tensor clone() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Ordered record of differentiable operations executed while the tape is
// active on the current thread.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  struct Entry {
    std::string_view op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    // Reads output->grad and accumulates into the inputs that require grad.
    std::function<void()> backward;
  };

  void record(std::string_view op, std::vector<NodePtr> inputs, NodePtr output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(const Tensor<T>& loss);

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// Tape currently recording on this thread, or nullptr.
template <typename T>
Tape<T>* active_tape();

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Convenience: backward through the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace dlm
