#include "cecg/tensor.hpp"

#include "cecg/error.hpp"

#include <sstream>

namespace cecg {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[' << shape.batch << ',' << shape.channels << ',' << shape.length << ']';
  return out.str();
}

Tensor::Tensor(Shape shape) : shape_(shape), values_(Eigen::ArrayXd::Zero(shape.size())) {
  if (shape.batch < 0 || shape.channels < 0 || shape.length < 0)
    throw ValidationError("tensor_core.Tensor", "negative extent in shape " + to_string(shape));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size())
    throw ValidationError("tensor_core.Tensor", "shape " + to_string(shape) + " needs " +
                                                    std::to_string(shape.size()) + " values, got " +
                                                    std::to_string(values_.size()));
}

Tensor Tensor::constant(Shape shape, double value) {
  return Tensor(shape, Eigen::ArrayXd::Constant(shape.size(), value));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{"variable", std::move(value), {}, true, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this)
      throw ValidationError("tensor_core.record", "input of '" + node.op + "' lives on another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Eigen::ArrayXd& Tape::grad_buffer(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size()) node.grad = Eigen::ArrayXd::Zero(node.value.size());
  return node.grad;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad.resize(0);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this)
    throw ValidationError("tensor_core.backward", "loss lives on another tape");
  if (loss.value().size() != 1)
    throw ValidationError("tensor_core.backward",
                          "loss must be scalar, got shape " + to_string(loss.shape()));
  grad_buffer(loss.id()).setOnes();
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad) continue;
    if (node.backward && node.grad.size() != 0) node.backward(*this, id);
  }
  // Leaves unreachable from the loss still get a (zero) gradient.
  for (int id = 0; id <= loss.id(); ++id)
    if (nodes_[id].requires_grad && nodes_[id].inputs.empty()) grad_buffer(id);
}

}  // namespace cecg
