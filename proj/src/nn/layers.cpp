#include "layers.hpp"

#include <cmath>

#include "dfkd/simd/kernels.hpp"

namespace dfkd::nn {
namespace {

void uniform_fill(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_values()) v = dist(rng);
}

void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) n = 1e-12;
  for (double& x : v) x /= n;
}

void require_maps(const Tensor& x, const char* layer) {
  if (x.rank() != 4) throw ShapeError(std::string(layer) + ": expected [C,N,H,W] maps, got " + shape_str(x.shape()));
}

}  // namespace

Tensor maps_to_rows(const Tensor& maps) {
  const std::size_t c = maps.dim(0), n = maps.dim(1);
  return reshape(swap_leading(maps, c, n), {n, maps.numel() / n});
}

// ---------------------------------------------------------------- Linear

std::string Linear::name() const { return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")"; }

std::vector<std::pair<std::string, Shape>> Linear::param_shapes() const {
  return {{"weight", {out_, in_}}, {"bias", {1, out_}}};
}

void Linear::init_params(std::span<Tensor> params, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_fill(params[0], bound, rng);
  uniform_fill(params[1], bound, rng);
}

Tensor Linear::forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions&) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ShapeError("linear: expected [N," + std::to_string(in_) + "], got " + shape_str(x.shape()));
  }
  return add(matmul(x, params[0], false, true), params[1]);
}

// ---------------------------------------------------------------- Conv3x3

Conv3x3::Conv3x3(std::size_t in_channels, std::size_t out_channels, bool spectral)
    : in_(in_channels), out_(out_channels), spectral_(spectral) {}

std::string Conv3x3::name() const {
  return std::string(spectral_ ? "sn_" : "") + "conv3x3(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

std::vector<std::pair<std::string, Shape>> Conv3x3::param_shapes() const {
  return {{"weight", {out_, in_ * 9}}, {"bias", {out_, 1}}};
}

void Conv3x3::init_params(std::span<Tensor> params, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * 9));
  uniform_fill(params[0], bound, rng);
  uniform_fill(params[1], bound, rng);
  if (spectral_) {
    std::normal_distribution<double> normal;
    u_.resize(out_);
    v_.resize(in_ * 9);
    for (auto& x : u_) x = normal(rng);
    for (auto& x : v_) x = normal(rng);
    normalize_in_place(u_);
    normalize_in_place(v_);
  }
}

void Conv3x3::power_iteration(const Tensor& weight) {
  const auto& k = simd::active();
  const std::size_t rows = out_, cols = in_ * 9;
  // v <- W^T u / |W^T u|, u <- W v / |W v|
  k.gemm(cols, 1, rows, weight.data(), true, u_.data(), false, v_.data());
  normalize_in_place(v_);
  k.gemm(rows, 1, cols, weight.data(), false, v_.data(), false, u_.data());
  normalize_in_place(u_);
}

void Conv3x3::prepare(std::span<const Tensor> params) {
  if (!spectral_) return;
  // Converge the power iterates on the initial weight so the first
  // normalization already uses an accurate top singular value.
  const auto& w = params[0];
  double previous = 0.0;
  for (int it = 0; it < 2000; ++it) {
    power_iteration(w);
    std::vector<double> wv(out_);
    simd::active().gemm(out_, 1, in_ * 9, w.data(), false, v_.data(), false, wv.data());
    const double sigma = simd::active().dot(u_.data(), wv.data(), out_);
    if (it > 10 && std::fabs(sigma - previous) <= 1e-12 * std::fabs(sigma)) break;
    previous = sigma;
  }
}

Tensor Conv3x3::normalize(const Tensor& weight) const {
  const Tensor u = Tensor::from({out_, 1}, u_);
  const Tensor v = Tensor::from({in_ * 9, 1}, v_);
  const Tensor sigma = sum(mul(u, matmul(weight, v)));
  return div(weight, sigma);
}

std::optional<Tensor> Conv3x3::normalized_weight(std::span<const Tensor> params) const {
  if (!spectral_) return std::nullopt;
  NoGradGuard no_grad;
  return normalize(params[0]);
}

Tensor Conv3x3::forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) {
  require_maps(x, "conv3x3");
  if (x.dim(0) != in_) {
    throw ShapeError("conv3x3: expected " + std::to_string(in_) + " channels, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto& map = im2col_cache_[x.shape()];
  if (!map) {
    auto m = std::make_shared<IndexMap>();
    m->in_shape = x.shape();
    m->out_shape = {in_ * 9, n * h * w};
    m->source.resize(in_ * 9 * n * h * w);
    std::size_t o = 0;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t y = 0; y < h; ++y) {
              for (std::size_t xx = 0; xx < w; ++xx, ++o) {
                const auto sy = static_cast<std::int64_t>(y + ky) - 1;
                const auto sx = static_cast<std::int64_t>(xx + kx) - 1;
                const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::int64_t>(h) &&
                                    sx < static_cast<std::int64_t>(w);
                m->source[o] = inside ? static_cast<std::int64_t>(((c * n + b) * h + sy) * w + sx) : -1;
              }
            }
          }
        }
      }
    }
    map = std::move(m);
  }
  Tensor weight = params[0];
  if (spectral_) {
    if (options.training && options.update_buffers) power_iteration(weight);
    weight = normalize(weight);
  }
  const Tensor cols = gather(x, map);
  const Tensor out = add(matmul(weight, cols), params[1]);
  return reshape(out, {out_, n, h, w});
}

std::vector<std::pair<std::string, std::vector<double>*>> Conv3x3::buffers() {
  if (!spectral_) return {};
  return {{"sn_u", &u_}, {"sn_v", &v_}};
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t features, Axis axis)
    : features_(features), axis_(axis), running_mean_(features, 0.0), running_var_(features, 1.0) {}

std::string BatchNorm::name() const {
  return std::string(axis_ == Axis::rows ? "batchnorm1d(" : "batchnorm2d(") + std::to_string(features_) + ")";
}

std::vector<std::pair<std::string, Shape>> BatchNorm::param_shapes() const {
  const Shape s = axis_ == Axis::rows ? Shape{1, features_} : Shape{features_, 1};
  return {{"gamma", s}, {"beta", s}};
}

void BatchNorm::init_params(std::span<Tensor> params, Rng&) {
  for (auto& v : params[0].mutable_values()) v = 1.0;
  for (auto& v : params[1].mutable_values()) v = 0.0;
}

Tensor BatchNorm::forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) {
  Tensor view;
  Shape stat_shape;
  std::size_t count = 0;
  if (axis_ == Axis::rows) {
    if (x.rank() != 2 || x.dim(1) != features_) {
      throw ShapeError("batchnorm1d: expected [N," + std::to_string(features_) + "], got " + shape_str(x.shape()));
    }
    view = x;
    stat_shape = {1, features_};
    count = x.dim(0);
  } else {
    require_maps(x, "batchnorm2d");
    if (x.dim(0) != features_) {
      throw ShapeError("batchnorm2d: expected " + std::to_string(features_) + " channels, got " + shape_str(x.shape()));
    }
    count = x.numel() / features_;
    view = reshape(x, {features_, count});
    stat_shape = {features_, 1};
  }

  Tensor normalized;
  if (options.training) {
    const double inv = 1.0 / static_cast<double>(count);
    const Tensor mu = scale(sum_to(view, stat_shape), inv);
    const Tensor centered = sub(view, mu);
    const Tensor var = scale(sum_to(square(centered), stat_shape), inv);
    normalized = div(centered, sqrt(add_scalar(var, kEps)));
    if (options.update_buffers) {
      const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      for (std::size_t f = 0; f < features_; ++f) {
        running_mean_[f] = (1.0 - kMomentum) * running_mean_[f] + kMomentum * mu.at(f);
        running_var_[f] = (1.0 - kMomentum) * running_var_[f] + kMomentum * var.at(f) * unbias;
      }
    }
  } else {
    std::vector<double> shift(features_), inv_std(features_);
    for (std::size_t f = 0; f < features_; ++f) {
      shift[f] = running_mean_[f];
      inv_std[f] = 1.0 / std::sqrt(running_var_[f] + kEps);
    }
    normalized = mul(sub(view, Tensor::from(stat_shape, shift)), Tensor::from(stat_shape, inv_std));
  }
  const Tensor y = add(mul(normalized, params[0]), params[1]);
  return axis_ == Axis::rows ? y : reshape(y, x.shape());
}

std::vector<std::pair<std::string, std::vector<double>*>> BatchNorm::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

// ---------------------------------------------------------------- shape & activation layers

Tensor Act::forward(const Tensor& x, std::span<const Tensor>, const ForwardOptions&) {
  switch (kind_) {
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
    case Activation::leaky_relu:
      return leaky_relu(x, kLeakySlope);
  }
  throw std::logic_error("unknown activation");
}

Tensor ToMaps::forward(const Tensor& x, std::span<const Tensor>, const ForwardOptions&) {
  if (x.rank() != 2 || x.dim(1) != c_ * h_ * w_) {
    throw ShapeError("to_maps: expected [N," + std::to_string(c_ * h_ * w_) + "], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  return reshape(swap_leading(x, n, c_), {c_, n, h_, w_});
}

Tensor Flatten::forward(const Tensor& x, std::span<const Tensor>, const ForwardOptions&) {
  require_maps(x, "flatten");
  return maps_to_rows(x);
}

Tensor Upsample2x::forward(const Tensor& x, std::span<const Tensor>, const ForwardOptions&) {
  require_maps(x, "upsample2x");
  auto& map = cache_[x.shape()];
  if (!map) {
    const std::size_t c = x.dim(0), n = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto m = std::make_shared<IndexMap>();
    m->in_shape = x.shape();
    m->out_shape = {c, n, 2 * h, 2 * w};
    m->source.resize(shape_numel(m->out_shape));
    std::size_t o = 0;
    for (std::size_t p = 0; p < c * n; ++p) {
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx, ++o) {
          m->source[o] = static_cast<std::int64_t>((p * h + y / 2) * w + xx / 2);
        }
      }
    }
    map = std::move(m);
  }
  return gather(x, map);
}

Tensor AvgPool2x::forward(const Tensor& x, std::span<const Tensor>, const ForwardOptions&) {
  require_maps(x, "avgpool2x");
  const std::size_t c = x.dim(0), n = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avgpool2x: odd spatial size " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  auto& map = cache_[x.shape()];
  if (!map) {
    // Four strided copies of the pooled grid, one per window position.
    auto m = std::make_shared<IndexMap>();
    m->in_shape = x.shape();
    m->out_shape = {4, c * n * ho * wo};
    m->source.resize(4 * c * n * ho * wo);
    std::size_t o = 0;
    for (std::size_t dy = 0; dy < 2; ++dy) {
      for (std::size_t dx = 0; dx < 2; ++dx) {
        for (std::size_t p = 0; p < c * n; ++p) {
          for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xx = 0; xx < wo; ++xx, ++o) {
              m->source[o] = static_cast<std::int64_t>((p * h + 2 * y + dy) * w + 2 * xx + dx);
            }
          }
        }
      }
    }
    map = std::move(m);
  }
  const Tensor windows = gather(x, map);
  return reshape(scale(sum_to(windows, {1, c * n * ho * wo}), 0.25), {c, n, ho, wo});
}

}  // namespace dfkd::nn
