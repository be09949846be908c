#pragma once

// Dense double tensors with a dynamic reverse-mode tape.
//
// Every op records a Node whose backward function is itself written in terms
// of recorded ops. Differentiating with create_graph=true therefore yields
// gradients that can be differentiated again, which is what the meta student
// update and the Hessian-vector products rely on.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;
struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  const double* data() const { return impl_->data.data(); }
  double item() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  // In-place writes are only legal on leaves (parameters, buffers, inputs).
  std::span<double> mutable_values();

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_ && impl_->grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

  // Fresh leaf holding a copy of the values; never tracks history.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad, const std::vector<bool>& needs)>;

struct Node {
  std::string name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result and, when grad mode is on and some input requires
// grad, attaches the backward node.
Tensor make_result(Shape shape, std::vector<double> values, const char* name,
                   std::vector<Tensor> inputs, BackwardFn backward);

struct GradOptions {
  // Record the backward pass so the returned gradients are differentiable.
  bool create_graph = false;
  // Unreached inputs get zero gradients instead of an error.
  bool allow_unused = true;
};

// Gradients of `output` (numel 1 unless `grad_output` is given) with respect
// to each tensor in `inputs`.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         const GradOptions& options = {}, const Tensor& grad_output = {});

}  // namespace dfkd
