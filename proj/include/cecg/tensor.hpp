#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace cecg {

using Index = Eigen::Index;

/// Extents of a batched 1D signal grid, stored batch -> channel -> sample.
struct Shape {
  Index batch = 0;
  Index channels = 0;
  Index length = 0;

  Index size() const { return batch * channels * length; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense double-precision [batch, channels, length] value grid.
///
/// Convolution weights reuse the same layout as [out, in, kernel] and
/// per-channel vectors (bias, gamma, beta) are stored as [1, channels, 1].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::ArrayXd values);

  static Tensor constant(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  Index batch() const { return shape_.batch; }
  Index channels() const { return shape_.channels; }
  Index length() const { return shape_.length; }
  Index size() const { return shape_.size(); }

  const Eigen::ArrayXd& values() const { return values_; }
  Eigen::ArrayXd& values() { return values_; }

  double operator()(Index b, Index c, Index t) const { return values_[offset(b, c, t)]; }
  double& operator()(Index b, Index c, Index t) { return values_[offset(b, c, t)]; }

  /// Contiguous samples of one (batch, channel) row.
  Eigen::Map<Eigen::ArrayXd> row(Index b, Index c) {
    return {values_.data() + offset(b, c, 0), shape_.length};
  }
  Eigen::Map<const Eigen::ArrayXd> row(Index b, Index c) const {
    return {values_.data() + offset(b, c, 0), shape_.length};
  }

  bool all_finite() const { return values_.allFinite(); }

 private:
  Index offset(Index b, Index c, Index t) const {
    return (b * shape_.channels + c) * shape_.length + t;
  }

  Shape shape_;
  Eigen::ArrayXd values_;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Accumulated gradient; empty until backward() has reached this node.
  const Eigen::ArrayXd& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Mode { train, eval };

/// Linear record of forward operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// backward() walks the nodes in exactly the reverse order of recording.
/// A tape owns its values; Vars point into it, so a tape is neither copyable
/// nor movable.
class Tape {
 public:
  /// Reads grad(self) and pushes contributions into the inputs' buffers.
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an operation node. The node requires grad iff any input does;
  /// otherwise `backward` is dropped.
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. The loss must hold exactly one value.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Eigen::ArrayXd& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::string_view op(int id) const { return nodes_[id].op; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of `id`, zero-allocated on first use. Backward functions
  /// accumulate into it so fan-out sums additively.
  Eigen::ArrayXd& grad_buffer(int id);

  void zero_grad();

 private:
  struct Node {
    std::string op;
    Tensor value;
    Eigen::ArrayXd grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline const Eigen::ArrayXd& Var::grad() const { return tape_->grad(id_); }

}  // namespace cecg
