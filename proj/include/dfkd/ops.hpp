#pragma once

// Differentiable tensor operations. Backward rules are expressed with these
// same ops, so every op is differentiable to any order.
//
// Broadcasting: operands of a binary op must have equal rank with each pair
// of extents equal or one of them 1; rank-0 tensors broadcast against
// anything.

#include <cstdint>
#include <memory>

#include "dfkd/tensor.hpp"

namespace dfkd {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);
// max(x, floor); gradient passes where x >= floor.
Tensor clamp_min(const Tensor& x, double floor);

// Row-major 2-D product op(a) * op(b).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Sum of all elements, rank-0 result.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduce broadcast axes so the result has `target` shape.
Tensor sum_to(const Tensor& x, const Shape& target);
Tensor expand(const Tensor& x, const Shape& target);

Tensor reshape(const Tensor& x, Shape shape);
// Views x as [a, b, rest] and returns [b, a, rest] (as rank-3 unless rest = 1
// and the input was rank 2, in which case a rank-2 tensor).
Tensor swap_leading(const Tensor& x, std::size_t a, std::size_t b);

// Linear index maps: gather reads out[i] = in[source[i]] (0 when source is
// -1); scatter_add is its adjoint.
struct IndexMap {
  Shape in_shape;
  Shape out_shape;
  std::vector<std::int64_t> source;
};
Tensor gather(const Tensor& x, std::shared_ptr<const IndexMap> map);
Tensor scatter_add(const Tensor& x, std::shared_ptr<const IndexMap> map);

// Row ops treat dim 0 as the row axis.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor pad_rows(const Tensor& x, std::size_t begin, std::size_t total_rows);
Tensor concat_rows(const Tensor& a, const Tensor& b);

// Constant (non-differentiable) per-row maximum of a 2-D tensor, shape [N, 1].
Tensor row_max(const Tensor& x);
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

double dot_values(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }

}  // namespace dfkd
