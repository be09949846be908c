#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfkd/tensor.hpp"

namespace dfkd {

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Shape map of a flat parameter vector: ordered named sub-ranges.
class ParamLayout {
 public:
  void add(std::string name, Shape shape);
  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }
  const ParamSlot* find(std::string_view name) const;
  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

// A network's trainable parameters, one tensor per slot of the layout.
//
// Arithmetic here is recorded on the tape, so a vector produced by
// minus_scaled() from tracked gradients still depends on the original
// parameters and can be differentiated through.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<Tensor> tensors);

  static ParamVector from_flat(std::shared_ptr<const ParamLayout> layout, std::span<const double> flat,
                               bool requires_grad = false);
  static ParamVector zeros(std::shared_ptr<const ParamLayout> layout);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t numel() const { return layout_ ? layout_->total() : 0; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const Tensor& at(std::string_view name) const;

  std::vector<double> flatten() const;
  // Overwrites the leaf tensors in place.
  void assign(std::span<const double> flat);
  ParamVector detached(bool requires_grad = false) const;
  bool same_layout(const ParamVector& other) const;

  // this - alpha * v
  ParamVector minus_scaled(const ParamVector& v, double alpha) const;
  ParamVector plus(const ParamVector& v) const;
  ParamVector scaled(double factor) const;
  // <this, other> as a rank-0 tensor.
  Tensor dot(const ParamVector& other) const;
  double dot_value(const ParamVector& other) const;
  double norm() const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<Tensor> tensors_;
};

// d loss / d params, packaged with the same layout.
ParamVector param_grad(const Tensor& loss, const ParamVector& params, const GradOptions& options = {});

}  // namespace dfkd
