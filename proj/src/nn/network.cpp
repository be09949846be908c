#include <algorithm>
#include <stdexcept>

#include "dfkd/nn.hpp"
#include "layers.hpp"

namespace dfkd::nn {

std::string to_string(NetKind kind) {
  switch (kind) {
    case NetKind::generator:
      return "generator";
    case NetKind::vae_encoder:
      return "vae_encoder";
    case NetKind::classifier_mlp:
      return "classifier_mlp";
    case NetKind::classifier_smallconv:
      return "classifier_smallconv";
  }
  return "unknown";
}

NetKind parse_net_kind(const std::string& text) {
  for (auto k : {NetKind::generator, NetKind::vae_encoder, NetKind::classifier_mlp, NetKind::classifier_smallconv}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown network kind '" + text +
                              "' (expected generator, vae_encoder, classifier_mlp, classifier_smallconv)");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::leaky_relu:
      return "leaky_relu";
  }
  return "unknown";
}

Activation parse_activation(const std::string& text) {
  for (auto a : {Activation::relu, Activation::tanh, Activation::leaky_relu}) {
    if (to_string(a) == text) return a;
  }
  throw std::invalid_argument("unknown activation '" + text + "' (expected relu, tanh, leaky_relu)");
}

void NetSpec::validate() const {
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw ShapeError("NetSpec: input_shape must be {D} or {C,H,W}, got " + shape_str(input_shape));
  }
  for (auto d : input_shape) {
    if (d == 0) throw ShapeError("NetSpec: zero extent in input_shape " + shape_str(input_shape));
  }
  if (width == 0 || depth == 0) throw std::invalid_argument("NetSpec: width and depth must be positive");
  const bool image = is_image();
  const auto require_quarter = [&](const char* what) {
    if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) {
      throw ShapeError(std::string(what) + ": h and w must be divisible by 4, got " + shape_str(input_shape));
    }
  };
  switch (kind) {
    case NetKind::classifier_mlp:
      if (output_dim < 2) throw std::invalid_argument("NetSpec: classifiers need output_dim >= 2");
      break;
    case NetKind::classifier_smallconv:
      if (output_dim < 2) throw std::invalid_argument("NetSpec: classifiers need output_dim >= 2");
      if (!image) throw ShapeError("NetSpec: classifier_smallconv needs an image input_shape {C,H,W}");
      require_quarter("classifier_smallconv");
      break;
    case NetKind::generator:
      if (noise_dim < 1) throw std::invalid_argument("NetSpec: generators need noise_dim >= 1");
      if (image) {
        require_quarter("generator");
        if (width < 2) throw std::invalid_argument("NetSpec: conv generator needs width >= 2");
      }
      break;
    case NetKind::vae_encoder:
      if (output_dim < 1) throw std::invalid_argument("NetSpec: vae_encoder needs a latent output_dim >= 1");
      if (image) {
        require_quarter("vae_encoder");
        if (width < 2) throw std::invalid_argument("NetSpec: conv encoder needs width >= 2");
      }
      break;
  }
}

Network::Network(NetSpec spec, std::vector<std::unique_ptr<Layer>> layers, std::uint64_t seed)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
  auto layout = std::make_shared<ParamLayout>();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    param_offsets_.push_back(layout->slots().size());
    for (auto& [name, shape] : layers_[i]->param_shapes()) layout->add(std::to_string(i) + "." + name, shape);
  }
  param_offsets_.push_back(layout->slots().size());

  std::vector<Tensor> tensors;
  for (const auto& slot : layout->slots()) tensors.push_back(Tensor::zeros(slot.shape).set_requires_grad(true));
  Rng rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::span<Tensor> slice(tensors.data() + param_offsets_[i], param_offsets_[i + 1] - param_offsets_[i]);
    layers_[i]->init_params(slice, rng);
  }
  params_ = ParamVector(std::move(layout), std::move(tensors));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::span<const Tensor> slice(params_.tensors().data() + param_offsets_[i],
                                  param_offsets_[i + 1] - param_offsets_[i]);
    layers_[i]->prepare(slice);
  }
}

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Network Network::clone() const {
  Network copy;
  copy.spec_ = spec_;
  for (const auto& l : layers_) copy.layers_.push_back(l->clone());
  copy.param_offsets_ = param_offsets_;
  copy.params_ = params_.detached(true);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].requires_grad()) copy.params_[i].set_requires_grad(false);
  }
  return copy;
}

void Network::set_requires_grad(bool flag) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flag);
}

std::vector<std::string> Network::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) names.push_back(l->name());
  return names;
}

std::size_t Network::feature_layer_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers_.begin(), layers_.end(), [](const auto& l) { return l->is_feature(); }));
}

std::size_t Network::input_features() const {
  return spec_.kind == NetKind::generator ? spec_.noise_dim : spec_.sample_size();
}

ForwardResult Network::run(const ParamVector& params, const Tensor& x, const ForwardOptions& options,
                           std::size_t layer_limit, bool record) {
  if (!params.same_layout(params_)) throw ShapeError("Network: parameter layout does not match this network");
  if (x.rank() != 2 || x.dim(1) != input_features()) {
    throw ShapeError(to_string(spec_.kind) + ": expected input [N," + std::to_string(input_features()) + "], got " +
                     shape_str(x.shape()));
  }
  if (x.dim(0) == 0) throw ShapeError(to_string(spec_.kind) + ": empty batch");
  ForwardResult result;
  Tensor h = x;
  for (std::size_t i = 0; i < layer_limit; ++i) {
    std::span<const Tensor> slice(params.tensors().data() + param_offsets_[i],
                                  param_offsets_[i + 1] - param_offsets_[i]);
    h = layers_[i]->forward(h, slice, options);
    if (record && layers_[i]->is_feature()) result.trace.push_back(h.rank() == 4 ? maps_to_rows(h) : h);
  }
  result.output = h;
  return result;
}

Tensor Network::forward(const Tensor& x, const ForwardOptions& options) { return forward(params_, x, options); }

Tensor Network::forward(const ParamVector& params, const Tensor& x, const ForwardOptions& options) {
  return run(params, x, options, layers_.size(), false).output;
}

ForwardResult Network::forward_with_activations(const ParamVector& params, const Tensor& x,
                                                const ForwardOptions& options) {
  return run(params, x, options, layers_.size(), true);
}

ForwardResult Network::forward_with_activations(const Tensor& x, const ForwardOptions& options) {
  return forward_with_activations(params_, x, options);
}

Tensor Network::forward_before_final_norm(const Tensor& x, const ForwardOptions& options) {
  std::size_t last = layers_.size();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i]->is_batch_norm()) {
      last = i;
      break;
    }
  }
  Tensor out = run(params_, x, options, last, false).output;
  return out.rank() == 4 ? maps_to_rows(out) : out;
}

std::vector<NamedBuffer> Network::buffers() const {
  std::vector<NamedBuffer> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, values] : layers_[i]->buffers()) out.push_back({std::to_string(i) + "." + name, *values});
  }
  return out;
}

void Network::load_buffers(const std::vector<NamedBuffer>& buffers) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, values] : layers_[i]->buffers()) {
      if (k >= buffers.size() || buffers[k].name != std::to_string(i) + "." + name ||
          buffers[k].values.size() != values->size()) {
        throw ShapeError("Network::load_buffers: buffer set does not match the network");
      }
      *values = buffers[k++].values;
    }
  }
  if (k != buffers.size()) throw ShapeError("Network::load_buffers: extra buffers");
}

std::vector<Tensor> spectral_normalized_weights(const Network& net) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    std::span<const Tensor> slice(net.params_.tensors().data() + net.param_offsets_[i],
                                  net.param_offsets_[i + 1] - net.param_offsets_[i]);
    if (auto w = net.layers_[i]->normalized_weight(slice)) out.push_back(*w);
  }
  return out;
}

namespace {

using Layers = std::vector<std::unique_ptr<Layer>>;

template <class T, class... Args>
void push(Layers& layers, Args&&... args) {
  layers.push_back(std::make_unique<T>(std::forward<Args>(args)...));
}

Layers classifier_mlp(const NetSpec& s) {
  Layers l;
  std::size_t in = s.sample_size();
  for (std::size_t d = 0; d < s.depth; ++d) {
    push<Linear>(l, in, s.width);
    push<Act>(l, s.activation, true);
    in = s.width;
  }
  push<Linear>(l, in, s.output_dim);
  return l;
}

Layers classifier_smallconv(const NetSpec& s) {
  const std::size_t c = s.input_shape[0], h = s.input_shape[1], w = s.input_shape[2];
  Layers l;
  push<ToMaps>(l, c, h, w);
  push<Conv3x3>(l, c, s.width, false);
  push<BatchNorm>(l, s.width, BatchNorm::Axis::channels);
  push<Act>(l, s.activation, true);
  push<AvgPool2x>(l);
  push<Conv3x3>(l, s.width, 2 * s.width, false);
  push<BatchNorm>(l, 2 * s.width, BatchNorm::Axis::channels);
  push<Act>(l, s.activation, true);
  push<AvgPool2x>(l);
  push<Flatten>(l);
  push<Linear>(l, 2 * s.width * (h / 4) * (w / 4), s.output_dim);
  return l;
}

Layers generator(const NetSpec& s) {
  Layers l;
  if (s.is_image()) {
    const std::size_t c = s.input_shape[0], h = s.input_shape[1], w = s.input_shape[2];
    const std::size_t base = s.width, half = s.width / 2;
    const std::size_t seed_features = base * (h / 4) * (w / 4);
    push<Linear>(l, s.noise_dim, seed_features);
    push<BatchNorm>(l, seed_features, BatchNorm::Axis::rows);
    push<ToMaps>(l, base, h / 4, w / 4);
    push<Conv3x3>(l, base, base, true);
    push<BatchNorm>(l, base, BatchNorm::Axis::channels);
    push<Act>(l, Activation::leaky_relu, true);
    push<Upsample2x>(l);
    push<Conv3x3>(l, base, half, true);
    push<BatchNorm>(l, half, BatchNorm::Axis::channels);
    push<Act>(l, Activation::leaky_relu, true);
    push<Upsample2x>(l);
    push<Conv3x3>(l, half, c, true);
    push<Act>(l, Activation::tanh, false);
    push<BatchNorm>(l, c, BatchNorm::Axis::channels);
    push<Flatten>(l);
    return l;
  }
  // Dense analogue for vector samples: same layer order with linear blocks.
  std::size_t in = s.noise_dim;
  for (std::size_t d = 0; d < s.depth; ++d) {
    push<Linear>(l, in, s.width);
    push<BatchNorm>(l, s.width, BatchNorm::Axis::rows);
    push<Act>(l, Activation::leaky_relu, true);
    in = s.width;
  }
  push<Linear>(l, in, s.sample_size());
  push<Act>(l, Activation::tanh, false);
  push<BatchNorm>(l, s.sample_size(), BatchNorm::Axis::rows);
  return l;
}

Layers vae_encoder(const NetSpec& s) {
  Layers l;
  if (s.is_image()) {
    const std::size_t c = s.input_shape[0], h = s.input_shape[1], w = s.input_shape[2];
    const std::size_t base = s.width, half = s.width / 2;
    push<ToMaps>(l, c, h, w);
    push<Conv3x3>(l, c, half, true);
    push<BatchNorm>(l, half, BatchNorm::Axis::channels);
    push<Act>(l, Activation::leaky_relu, true);
    push<Conv3x3>(l, half, base, true);
    push<BatchNorm>(l, base, BatchNorm::Axis::channels);
    push<Act>(l, Activation::leaky_relu, true);
    push<AvgPool2x>(l);
    push<Conv3x3>(l, base, base, true);
    push<BatchNorm>(l, base, BatchNorm::Axis::channels);
    push<AvgPool2x>(l);
    push<Flatten>(l);
    push<Linear>(l, base * (h / 4) * (w / 4), 2 * s.output_dim);
    return l;
  }
  std::size_t in = s.sample_size();
  for (std::size_t d = 0; d < s.depth; ++d) {
    push<Linear>(l, in, s.width);
    push<BatchNorm>(l, s.width, BatchNorm::Axis::rows);
    push<Act>(l, Activation::leaky_relu, true);
    in = s.width;
  }
  push<Linear>(l, in, 2 * s.output_dim);
  return l;
}

}  // namespace

Network build_network(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case NetKind::classifier_mlp:
      return Network(spec, classifier_mlp(spec), seed);
    case NetKind::classifier_smallconv:
      return Network(spec, classifier_smallconv(spec), seed);
    case NetKind::generator:
      return Network(spec, generator(spec), seed);
    case NetKind::vae_encoder:
      return Network(spec, vae_encoder(spec), seed);
  }
  throw std::logic_error("unknown network kind");
}

Tensor sample_noise(std::size_t n, std::size_t dim, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_noise: n must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n * dim);
  for (auto& x : v) x = normal(rng);
  return Tensor::from({n, dim}, std::move(v));
}

}  // namespace dfkd::nn
