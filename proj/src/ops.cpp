#include "dfkd/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dfkd/simd/kernels.hpp"

namespace dfkd {
namespace {

const simd::KernelTable& K() { return simd::active(); }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  return out;
}

// Strides of `in` laid over the index space of `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  if (in.empty()) return strides;
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i] = (in[i] == 1 && out[i] != 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void broadcast_for_each(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = shape_numel(out);
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * sa[r - 1], ob + j * sb[r - 1]);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class Op>
std::vector<double> broadcast_values(const Tensor& a, const Tensor& b, const Shape& out, Op op) {
  std::vector<double> v(shape_numel(out));
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  const double* pa = a.data();
  const double* pb = b.data();
  broadcast_for_each(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { v[o] = op(pa[i], pb[j]); });
  return v;
}

template <class Op>
std::vector<double> map_values(const Tensor& x, Op op) {
  std::vector<double> v(x.numel());
  const double* p = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = op(p[i]);
  return v;
}

// Non-differentiable elementwise mask built from x.
template <class Op>
Tensor constant_map(const Tensor& x, Op op) {
  return Tensor::from(x.shape(), map_values(x, op));
}

std::size_t row_count(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1");
  return x.dim(0);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "add");
  std::vector<double> v;
  if (a.shape() == b.shape()) {
    v.resize(a.numel());
    K().add(a.data(), b.data(), v.data(), v.size());
  } else {
    v = broadcast_values(a, b, out, [](double x, double y) { return x + y; });
  }
  return make_result(std::move(out), std::move(v), "add", {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{needs[0] ? sum_to(g, a.shape()) : Tensor{},
                                                  needs[1] ? sum_to(g, b.shape()) : Tensor{}};
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "sub");
  std::vector<double> v;
  if (a.shape() == b.shape()) {
    v.resize(a.numel());
    K().sub(a.data(), b.data(), v.data(), v.size());
  } else {
    v = broadcast_values(a, b, out, [](double x, double y) { return x - y; });
  }
  return make_result(std::move(out), std::move(v), "sub", {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{needs[0] ? sum_to(g, a.shape()) : Tensor{},
                                                  needs[1] ? neg(sum_to(g, b.shape())) : Tensor{}};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "mul");
  std::vector<double> v;
  if (a.shape() == b.shape()) {
    v.resize(a.numel());
    K().mul(a.data(), b.data(), v.data(), v.size());
  } else {
    v = broadcast_values(a, b, out, [](double x, double y) { return x * y; });
  }
  return make_result(std::move(out), std::move(v), "mul", {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{needs[0] ? sum_to(mul(g, b), a.shape()) : Tensor{},
                                                  needs[1] ? sum_to(mul(g, a), b.shape()) : Tensor{}};
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "div");
  auto v = broadcast_values(a, b, out, [](double x, double y) { return x / y; });
  return make_result(std::move(out), std::move(v), "div", {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       Tensor ga, gb;
                       if (needs[0]) ga = sum_to(div(g, b), a.shape());
                       if (needs[1]) gb = neg(sum_to(div(mul(g, a), mul(b, b)), b.shape()));
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> v(x.numel());
  K().scale(factor, x.data(), v.data(), v.size());
  return make_result(x.shape(), std::move(v), "scale", {x},
                     [factor](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{scale(g, factor)};
                     });
}

Tensor add_scalar(const Tensor& x, double value) {
  return make_result(x.shape(), map_values(x, [value](double t) { return t + value; }), "add_scalar", {x},
                     [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor exp(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return std::exp(t); }), "exp", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul(g, exp(x))};
                     });
}

Tensor log(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return std::log(t); }), "log", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{div(g, x)};
                     });
}

Tensor tanh(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return std::tanh(t); }), "tanh", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       const Tensor y = tanh(x);
                       return std::vector<Tensor>{sub(g, mul(g, mul(y, y)))};
                     });
}

Tensor sqrt(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return std::sqrt(t); }), "sqrt", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{div(g, scale(sqrt(x), 2.0))};
                     });
}

Tensor abs(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return std::fabs(t); }), "abs", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       Tensor sign = constant_map(x, [](double t) { return t > 0 ? 1.0 : (t < 0 ? -1.0 : 0.0); });
                       return std::vector<Tensor>{mul(g, sign)};
                     });
}

Tensor relu(const Tensor& x) {
  return make_result(x.shape(), map_values(x, [](double t) { return t > 0 ? t : 0.0; }), "relu", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       Tensor mask = constant_map(x, [](double t) { return t > 0 ? 1.0 : 0.0; });
                       return std::vector<Tensor>{mul(g, mask)};
                     });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return make_result(x.shape(),
                     map_values(x, [negative_slope](double t) { return t > 0 ? t : negative_slope * t; }),
                     "leaky_relu", {x}, [x, negative_slope](const Tensor& g, const std::vector<bool>&) {
                       Tensor slope =
                           constant_map(x, [negative_slope](double t) { return t > 0 ? 1.0 : negative_slope; });
                       return std::vector<Tensor>{mul(g, slope)};
                     });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return make_result(x.shape(), map_values(x, [floor](double t) { return t >= floor ? t : floor; }),
                     "clamp_min", {x}, [x, floor](const Tensor& g, const std::vector<bool>&) {
                       Tensor mask = constant_map(x, [floor](double t) { return t >= floor ? 1.0 : 0.0; });
                       return std::vector<Tensor>{mul(g, mask)};
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: rank-2 operands required, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + (trans_a ? "^T" : "") +
                     " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  std::vector<double> v(m * n);
  if (m * n > 0) {
    if (k == 0) {
      std::fill(v.begin(), v.end(), 0.0);
    } else {
      K().gemm(m, n, k, a.data(), trans_a, b.data(), trans_b, v.data());
    }
  }
  return make_result({m, n}, std::move(v), "matmul", {a, b},
                     [a, b, trans_a, trans_b](const Tensor& g, const std::vector<bool>& needs) {
                       Tensor ga, gb;
                       if (needs[0]) ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
                       if (needs[1]) gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor sum(const Tensor& x) {
  const double s = K().sum(x.data(), x.numel());
  return make_result({}, {s}, "sum", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{expand(g, x.shape())};
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (target.empty()) return sum(x);
  if (target.size() != x.rank()) {
    throw ShapeError("sum_to: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != x.dim(i) && target[i] != 1) {
      throw ShapeError("sum_to: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(target));
    }
  }
  std::vector<double> v(shape_numel(target), 0.0);
  const auto st = broadcast_strides(target, x.shape());
  const std::vector<std::size_t> unused(x.rank(), 0);
  const double* px = x.data();
  broadcast_for_each(x.shape(), st, unused, [&](std::size_t o, std::size_t t, std::size_t) { v[t] += px[o]; });
  return make_result(target, std::move(v), "sum_to", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{expand(g, x.shape())};
  });
}

Tensor expand(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  const Shape checked = broadcast_shape(x.shape(), target, "expand");
  if (checked != target) {
    throw ShapeError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  std::vector<double> v(shape_numel(target));
  const auto sx = broadcast_strides(x.shape(), target);
  const std::vector<std::size_t> unused(target.size(), 0);
  const double* px = x.data();
  broadcast_for_each(target, sx, unused, [&](std::size_t o, std::size_t i, std::size_t) { v[o] = px[i]; });
  return make_result(target, std::move(v), "expand", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum_to(g, x.shape())};
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  return make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), "reshape", {x},
                     [x](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(g, x.shape())};
                     });
}

Tensor swap_leading(const Tensor& x, std::size_t a, std::size_t b) {
  if (a == 0 || b == 0 || x.numel() % (a * b) != 0) {
    throw ShapeError("swap_leading: " + shape_str(x.shape()) + " is not divisible into [" +
                     std::to_string(a) + "," + std::to_string(b) + ",*]");
  }
  const std::size_t rest = x.numel() / (a * b);
  std::vector<double> v(x.numel());
  const double* p = x.data();
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(p + (i * b + j) * rest, rest, v.data() + (j * a + i) * rest);
    }
  }
  Shape out = rest == 1 && x.rank() == 2 ? Shape{b, a} : Shape{b, a, rest};
  return make_result(std::move(out), std::move(v), "swap_leading", {x},
                     [x, a, b](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(swap_leading(g, b, a), x.shape())};
                     });
}

Tensor gather(const Tensor& x, std::shared_ptr<const IndexMap> map) {
  if (x.numel() != shape_numel(map->in_shape)) {
    throw ShapeError("gather: input " + shape_str(x.shape()) + " does not match map input " +
                     shape_str(map->in_shape));
  }
  std::vector<double> v(map->source.size());
  const double* p = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto s = map->source[i];
    v[i] = s >= 0 ? p[s] : 0.0;
  }
  return make_result(map->out_shape, std::move(v), "gather", {x},
                     [x, map](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(scatter_add(g, map), x.shape())};
                     });
}

Tensor scatter_add(const Tensor& x, std::shared_ptr<const IndexMap> map) {
  if (x.numel() != map->source.size()) {
    throw ShapeError("scatter_add: input " + shape_str(x.shape()) + " does not match map output " +
                     shape_str(map->out_shape));
  }
  std::vector<double> v(shape_numel(map->in_shape), 0.0);
  const double* p = x.data();
  for (std::size_t i = 0; i < map->source.size(); ++i) {
    const auto s = map->source[i];
    if (s >= 0) v[s] += p[i];
  }
  return make_result(map->in_shape, std::move(v), "scatter_add", {x},
                     [x, map](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(gather(g, map), x.shape())};
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t rows = row_count(x, "slice_rows");
  if (begin > end || end > rows) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(x.shape()));
  }
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  Shape out = x.shape();
  out[0] = end - begin;
  std::vector<double> v(x.data() + begin * width, x.data() + end * width);
  return make_result(std::move(out), std::move(v), "slice_rows", {x},
                     [rows, begin](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{pad_rows(g, begin, rows)};
                     });
}

Tensor pad_rows(const Tensor& x, std::size_t begin, std::size_t total_rows) {
  const std::size_t rows = row_count(x, "pad_rows");
  if (begin + rows > total_rows) throw ShapeError("pad_rows: rows overflow the padded extent");
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  Shape out = x.shape();
  out[0] = total_rows;
  std::vector<double> v(total_rows * width, 0.0);
  std::copy(x.values().begin(), x.values().end(), v.begin() + static_cast<std::ptrdiff_t>(begin * width));
  return make_result(std::move(out), std::move(v), "pad_rows", {x},
                     [begin, rows](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{slice_rows(g, begin, begin + rows)};
                     });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const std::size_t ra = row_count(a, "concat_rows");
  const std::size_t rb = row_count(b, "concat_rows");
  Shape sa = a.shape(), sb = b.shape();
  sa[0] = sb[0] = 0;
  if (sa != sb) throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape out = a.shape();
  out[0] = ra + rb;
  std::vector<double> v;
  v.reserve(a.numel() + b.numel());
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return make_result(std::move(out), std::move(v), "concat_rows", {a, b},
                     [ra, rb](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{needs[0] ? slice_rows(g, 0, ra) : Tensor{},
                                                  needs[1] ? slice_rows(g, ra, ra + rb) : Tensor{}};
                     });
}

Tensor row_max(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("row_max: rank-2 input required, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * c;
    v[i] = *std::max_element(row, row + c);
  }
  return Tensor::from({n, 1}, std::move(v));
}

Tensor softmax_rows(const Tensor& logits) {
  const Tensor shifted = sub(logits, row_max(logits));
  const Tensor e = exp(shifted);
  return div(e, sum_to(e, {logits.dim(0), 1}));
}

Tensor log_softmax_rows(const Tensor& logits) {
  const Tensor shifted = sub(logits, row_max(logits));
  return sub(shifted, log(sum_to(exp(shifted), {logits.dim(0), 1})));
}

double dot_values(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("dot_values: size mismatch");
  return K().dot(a.data(), b.data(), a.numel());
}

}  // namespace dfkd
