#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/nn.hpp"
#include "dfkd/ops.hpp"

namespace dfkd::nn {

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string name() const = 0;

  virtual std::vector<std::pair<std::string, Shape>> param_shapes() const { return {}; }
  virtual void init_params(std::span<Tensor> /*params*/, Rng& /*rng*/) {}
  // Called once the initial parameter values exist.
  virtual void prepare(std::span<const Tensor> /*params*/) {}

  virtual Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) = 0;

  // Output belongs to the activation trace.
  virtual bool is_feature() const { return false; }
  virtual bool is_batch_norm() const { return false; }
  virtual std::vector<std::pair<std::string, std::vector<double>*>> buffers() { return {}; }
  virtual std::optional<Tensor> normalized_weight(std::span<const Tensor> /*params*/) const { return std::nullopt; }
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  std::string name() const override;
  std::vector<std::pair<std::string, Shape>> param_shapes() const override;
  void init_params(std::span<Tensor> params, Rng& rng) override;
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;

 private:
  std::size_t in_, out_;
};

// 3x3 convolution, stride 1, zero padding 1, on channel-major maps.
class Conv3x3 final : public Layer {
 public:
  Conv3x3(std::size_t in_channels, std::size_t out_channels, bool spectral);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv3x3>(*this); }
  std::string name() const override;
  std::vector<std::pair<std::string, Shape>> param_shapes() const override;
  void init_params(std::span<Tensor> params, Rng& rng) override;
  void prepare(std::span<const Tensor> params) override;
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;
  std::vector<std::pair<std::string, std::vector<double>*>> buffers() override;
  std::optional<Tensor> normalized_weight(std::span<const Tensor> params) const override;

 private:
  void power_iteration(const Tensor& weight);
  Tensor normalize(const Tensor& weight) const;

  std::size_t in_, out_;
  bool spectral_;
  std::vector<double> u_, v_;  // left / right singular vector estimates
  std::map<Shape, std::shared_ptr<const IndexMap>> im2col_cache_;
};

class BatchNorm final : public Layer {
 public:
  // rows: [N, F] normalized per feature. channels: [C, N, H, W] per channel.
  enum class Axis { rows, channels };
  BatchNorm(std::size_t features, Axis axis);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
  std::string name() const override;
  std::vector<std::pair<std::string, Shape>> param_shapes() const override;
  void init_params(std::span<Tensor> params, Rng& rng) override;
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;
  bool is_batch_norm() const override { return true; }
  std::vector<std::pair<std::string, std::vector<double>*>> buffers() override;

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  std::size_t features_;
  Axis axis_;
  std::vector<double> running_mean_, running_var_;
};

class Act final : public Layer {
 public:
  Act(Activation kind, bool feature) : kind_(kind), feature_(feature) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Act>(*this); }
  std::string name() const override { return to_string(kind_); }
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;
  bool is_feature() const override { return feature_; }

 private:
  Activation kind_;
  bool feature_;
};

// [N, C*H*W] rows -> [C, N, H, W] maps.
class ToMaps final : public Layer {
 public:
  ToMaps(std::size_t c, std::size_t h, std::size_t w) : c_(c), h_(h), w_(w) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ToMaps>(*this); }
  std::string name() const override { return "to_maps"; }
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;

 private:
  std::size_t c_, h_, w_;
};

// [C, N, H, W] maps -> [N, C*H*W] rows.
class Flatten final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  std::string name() const override { return "flatten"; }
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;
};

// Nearest-neighbour 2x upsampling of maps.
class Upsample2x final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2x>(*this); }
  std::string name() const override { return "upsample2x"; }
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;

 private:
  std::map<Shape, std::shared_ptr<const IndexMap>> cache_;
};

// 2x2 average pooling (0.5x downsampling) of maps.
class AvgPool2x final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2x>(*this); }
  std::string name() const override { return "avgpool2x"; }
  Tensor forward(const Tensor& x, std::span<const Tensor> params, const ForwardOptions& options) override;

 private:
  std::map<Shape, std::shared_ptr<const IndexMap>> cache_;
};

// Maps to rows, for recording traces of conv features.
Tensor maps_to_rows(const Tensor& maps);

}  // namespace dfkd::nn
