#include "dlm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dlm {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " does not match data length " +
                     std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor copy(node_->shape, node_->data, node_->requires_grad);
  copy.node_->grad = node_->grad;
  return copy;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<NodePtr> inputs, NodePtr output,
                     std::function<void()> backward) {
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (entries_.empty()) throw std::logic_error("backward called on an empty tape");
  if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any tensor requiring grad");

  auto& seed = loss.node()->grad;
  seed.assign(1, T{1});
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->backward();
  }
}

namespace {
template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename T>
Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) throw std::logic_error("backward called with no active tape");
  tape->backward(loss);
}

#define DLM_INSTANTIATE(T)                  \
  template class Tensor<T>;                 \
  template class Tape<T>;                   \
  template class TapeScope<T>;              \
  template Tape<T>* active_tape<T>();       \
  template void backward<T>(const Tensor<T>&);

DLM_INSTANTIATE(float)
DLM_INSTANTIATE(double)

#undef DLM_INSTANTIATE

}  // namespace dlm
