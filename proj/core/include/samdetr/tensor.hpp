#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samdetr {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t node_id = 0;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Shared handle to a dense row-major float64 array that can take part in a
/// differentiation graph. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access; reserved for initialisation and optimizer updates.
  std::span<double> mutable_data() { return impl_->data; }
  /// Gradient buffer; reads as zeros when nothing has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf; }
  std::uint64_t node_id() const { return impl_->node_id; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Value copy with no graph history.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Tape of recorded operations. Backward replays it in reverse recording
/// order, which is a valid reverse topological order.
class Graph {
 public:
  using Rule = std::function<void(TensorImpl& out)>;

  void record(std::vector<std::shared_ptr<TensorImpl>> inputs, const Tensor& output, Rule rule);
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    Rule rule;
  };
  std::vector<Node> nodes_;
  std::uint64_t next_id_ = 1;
};

Graph* active_graph();

/// Makes `graph` the recording target on this thread for the scope lifetime.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

/// Back-propagates from a scalar through the active graph. Leaf gradients
/// accumulate across calls until zeroed.
void backward(const Tensor& loss);

namespace detail {

/// True when an op over `inputs` must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Records `rule` for `out` in the active graph and marks `out` as a
/// differentiable interior node.
void record(std::initializer_list<const Tensor*> inputs, Tensor& out, Graph::Rule rule);
void record(const std::vector<Tensor>& inputs, Tensor& out, Graph::Rule rule);

}  // namespace detail

}  // namespace samdetr
