#include "dfkd/param_vector.hpp"

#include <algorithm>
#include <cmath>

#include "dfkd/ops.hpp"

namespace dfkd {

void ParamLayout::add(std::string name, Shape shape) {
  ParamSlot slot;
  slot.name = std::move(name);
  slot.size = shape_numel(shape);
  slot.shape = std::move(shape);
  slot.offset = total_;
  total_ += slot.size;
  slots_.push_back(std::move(slot));
}

const ParamSlot* ParamLayout::find(std::string_view name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (slots_.size() != other.slots_.size()) return false;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].name != other.slots_[i].name || slots_[i].shape != other.slots_[i].shape) return false;
  }
  return true;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<Tensor> tensors)
    : layout_(std::move(layout)), tensors_(std::move(tensors)) {
  if (layout_->slots().size() != tensors_.size()) throw ShapeError("ParamVector: tensor count != slot count");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != layout_->slots()[i].shape) {
      throw ShapeError("ParamVector: slot " + layout_->slots()[i].name + " expects " +
                       shape_str(layout_->slots()[i].shape) + ", got " + shape_str(tensors_[i].shape()));
    }
  }
}

ParamVector ParamVector::from_flat(std::shared_ptr<const ParamLayout> layout, std::span<const double> flat,
                                   bool requires_grad) {
  if (flat.size() != layout->total()) {
    throw ShapeError("ParamVector::from_flat: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(layout->total()) + " parameters");
  }
  std::vector<Tensor> tensors;
  tensors.reserve(layout->slots().size());
  for (const auto& slot : layout->slots()) {
    auto first = flat.begin() + static_cast<std::ptrdiff_t>(slot.offset);
    tensors.push_back(Tensor::from(slot.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(slot.size)),
                                   requires_grad));
  }
  return ParamVector(std::move(layout), std::move(tensors));
}

ParamVector ParamVector::zeros(std::shared_ptr<const ParamLayout> layout) {
  std::vector<double> flat(layout->total(), 0.0);
  return from_flat(std::move(layout), flat);
}

const Tensor& ParamVector::at(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (layout_->slots()[i].name == name) return tensors_[i];
  }
  throw std::out_of_range("ParamVector: no slot named " + std::string(name));
}

std::vector<double> ParamVector::flatten() const {
  std::vector<double> flat;
  flat.reserve(numel());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void ParamVector::assign(std::span<const double> flat) {
  if (flat.size() != numel()) throw ShapeError("ParamVector::assign: size mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& slot = layout_->slots()[i];
    auto dst = tensors_[i].mutable_values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size, dst.begin());
  }
}

ParamVector ParamVector::detached(bool requires_grad) const {
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(t.detach().set_requires_grad(requires_grad));
  return ParamVector(layout_, std::move(out));
}

bool ParamVector::same_layout(const ParamVector& other) const {
  return layout_ == other.layout_ || (layout_ && other.layout_ && *layout_ == *other.layout_);
}

ParamVector ParamVector::minus_scaled(const ParamVector& v, double alpha) const {
  if (!same_layout(v)) throw ShapeError("ParamVector::minus_scaled: layout mismatch");
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.push_back(sub(tensors_[i], scale(v[i], alpha)));
  return ParamVector(layout_, std::move(out));
}

ParamVector ParamVector::plus(const ParamVector& v) const {
  if (!same_layout(v)) throw ShapeError("ParamVector::plus: layout mismatch");
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.push_back(add(tensors_[i], v[i]));
  return ParamVector(layout_, std::move(out));
}

ParamVector ParamVector::scaled(double factor) const {
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(scale(t, factor));
  return ParamVector(layout_, std::move(out));
}

Tensor ParamVector::dot(const ParamVector& other) const {
  if (!same_layout(other)) throw ShapeError("ParamVector::dot: layout mismatch");
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < tensors_.size(); ++i) acc = add(acc, sum(mul(tensors_[i], other[i])));
  return acc;
}

double ParamVector::dot_value(const ParamVector& other) const {
  if (!same_layout(other)) throw ShapeError("ParamVector::dot_value: layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < tensors_.size(); ++i) s += dot_values(tensors_[i], other[i]);
  return s;
}

double ParamVector::norm() const { return std::sqrt(dot_value(*this)); }

ParamVector param_grad(const Tensor& loss, const ParamVector& params, const GradOptions& options) {
  return ParamVector(params.layout_ptr(), grad(loss, params.tensors(), options));
}

}  // namespace dfkd
