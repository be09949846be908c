#include "dfkd/tensor.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dfkd/ops.hpp"

namespace dfkd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::values() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw std::logic_error("in-place write to a non-leaf tensor");
  return impl_->data;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, const char* name,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         const GradOptions& options, const Tensor& grad_output) {
  if (!output.defined()) throw std::invalid_argument("grad: undefined output");
  if (!grad_output.defined() && output.numel() != 1) {
    throw ShapeError("grad: implicit seed requires a single-element output, got " +
                     shape_str(output.shape()));
  }
  if (grad_output.defined() && grad_output.shape() != output.shape()) {
    throw ShapeError("grad: seed shape " + shape_str(grad_output.shape()) + " != output shape " +
                     shape_str(output.shape()));
  }

  std::unordered_set<TensorImpl*> targets;
  for (const auto& t : inputs) targets.insert(t.impl());

  // Iterative post-order DFS; `reaches` marks tensors with a path to a target.
  std::unordered_map<TensorImpl*, bool> reaches;
  std::vector<TensorImpl*> post_order;
  struct Frame {
    TensorImpl* impl;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  if (output.requires_grad()) stack.push_back({output.impl(), 0});
  reaches[output.impl()] = false;
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& node = top.impl->grad_fn;
    if (node && top.next_child < node->inputs.size()) {
      TensorImpl* child = node->inputs[top.next_child++].impl();
      if (child->requires_grad && !reaches.contains(child)) {
        reaches[child] = false;
        stack.push_back({child, 0});
      }
      continue;
    }
    bool r = targets.contains(top.impl);
    if (node) {
      for (const auto& in : node->inputs) {
        if (auto it = reaches.find(in.impl()); it != reaches.end() && it->second) r = true;
      }
    }
    reaches[top.impl] = r;
    post_order.push_back(top.impl);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, Tensor> grads;
  {
    std::unique_ptr<NoGradGuard> no_grad;
    std::unique_ptr<EnableGradGuard> with_grad;
    if (options.create_graph) {
      with_grad = std::make_unique<EnableGradGuard>();
    } else {
      no_grad = std::make_unique<NoGradGuard>();
    }

    if (output.requires_grad()) {
      grads[output.impl()] = grad_output.defined() ? grad_output : Tensor::ones(output.shape());
    }
    for (auto it = post_order.rbegin(); it != post_order.rend(); ++it) {
      TensorImpl* impl = *it;
      if (!reaches[impl] || !impl->grad_fn) continue;
      auto found = grads.find(impl);
      if (found == grads.end()) continue;
      const Node& node = *impl->grad_fn;
      std::vector<bool> needs(node.inputs.size());
      bool any = false;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const auto& in = node.inputs[i];
        auto r = reaches.find(in.impl());
        needs[i] = in.requires_grad() && r != reaches.end() && r->second;
        any = any || needs[i];
      }
      if (!any) continue;
      const Tensor g = found->second;
      if (!targets.contains(impl)) grads.erase(found);
      auto input_grads = node.backward(g, needs);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (!needs[i] || !input_grads[i].defined()) continue;
        TensorImpl* key = node.inputs[i].impl();
        if (input_grads[i].shape() != key->shape) {
          throw std::logic_error(std::string("grad: backward of ") + node.name + " produced shape " +
                                 shape_str(input_grads[i].shape()) + " for input " +
                                 shape_str(key->shape));
        }
        auto acc = grads.find(key);
        if (acc == grads.end()) {
          grads.emplace(key, input_grads[i]);
        } else {
          acc->second = add(acc->second, input_grads[i]);
        }
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto it = grads.find(t.impl());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else if (options.allow_unused) {
      out.push_back(Tensor::zeros(t.shape()));
    } else {
      throw std::invalid_argument("grad: an input is not reachable from the output");
    }
  }
  return out;
}

}  // namespace dfkd
