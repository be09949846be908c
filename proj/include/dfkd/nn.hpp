#pragma once

// Model zoo: generators, VAE encoders and desk-scale classifiers.
//
// Dense activations are row-major [N, F]. Convolutional feature maps are kept
// channel-major, [C, N, H, W], so that a 3x3 convolution is a single GEMM over
// an im2col matrix and 2-D batch norm reduces along one axis. Sample batches
// crossing the network boundary are always flat rows [N, prod(input_shape)].

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dfkd/param_vector.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd::nn {

using Rng = std::mt19937_64;

enum class NetKind { generator, vae_encoder, classifier_mlp, classifier_smallconv };
enum class Activation { relu, tanh, leaky_relu };

std::string to_string(NetKind kind);
NetKind parse_net_kind(const std::string& text);
std::string to_string(Activation act);
Activation parse_activation(const std::string& text);

inline constexpr double kLeakySlope = 0.2;

struct NetSpec {
  NetKind kind = NetKind::classifier_mlp;
  // Per-sample shape: {D} for vectors or {C, H, W} for images. For a
  // generator this is the shape of the samples it produces.
  Shape input_shape;
  // Class count for classifiers, latent size for the VAE encoder.
  std::size_t output_dim = 0;
  // Hidden units (dense nets) or base channel count (conv nets, 128 for the
  // reference generator).
  std::size_t width = 64;
  // Hidden layers in dense nets.
  std::size_t depth = 2;
  // Generator input size.
  std::size_t noise_dim = 1000;
  // Classifier nonlinearity; generators and encoders use leaky ReLU.
  Activation activation = Activation::relu;

  void validate() const;
  std::size_t sample_size() const { return shape_numel(input_shape); }
  bool is_image() const { return input_shape.size() == 3; }
  bool operator==(const NetSpec&) const = default;
};

struct ForwardOptions {
  // Batch norm uses batch statistics when true, running statistics otherwise.
  bool training = true;
  // Whether training-mode passes may update running statistics and
  // spectral-norm power iterates.
  bool update_buffers = true;
};

// Outputs of the designated feature layers, each reshaped to [N, features].
using ActivationTrace = std::vector<Tensor>;

struct ForwardResult {
  Tensor output;
  ActivationTrace trace;
};

struct NamedBuffer {
  std::string name;
  std::vector<double> values;
};

class Layer;
class Network;
std::vector<Tensor> spectral_normalized_weights(const Network& net);

class Network {
 public:
  Network(NetSpec spec, std::vector<std::unique_ptr<Layer>> layers, std::uint64_t seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  // Deep copy: fresh parameter leaves, copied buffers.
  Network clone() const;

  const NetSpec& spec() const { return spec_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  void set_requires_grad(bool flag);

  std::size_t layer_count() const { return layers_.size(); }
  std::vector<std::string> layer_names() const;
  std::size_t feature_layer_count() const;

  Tensor forward(const Tensor& x, const ForwardOptions& options = {});
  Tensor forward(const ParamVector& params, const Tensor& x, const ForwardOptions& options = {});
  ForwardResult forward_with_activations(const ParamVector& params, const Tensor& x,
                                         const ForwardOptions& options = {});
  ForwardResult forward_with_activations(const Tensor& x, const ForwardOptions& options = {});

  // Output of the network up to (excluding) its last batch-norm layer, as
  // flat rows. For generators that is the tanh output.
  Tensor forward_before_final_norm(const Tensor& x, const ForwardOptions& options = {});

  std::vector<NamedBuffer> buffers() const;
  void load_buffers(const std::vector<NamedBuffer>& buffers);

  // Number of input features the first layer expects.
  std::size_t input_features() const;

 private:
  Network() = default;
  ForwardResult run(const ParamVector& params, const Tensor& x, const ForwardOptions& options,
                    std::size_t layer_limit, bool record);

  friend std::vector<Tensor> spectral_normalized_weights(const Network& net);

  NetSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::size_t> param_offsets_;  // first param tensor index of each layer
  ParamVector params_;
};

// Deterministic for a fixed seed.
Network build_network(const NetSpec& spec, std::uint64_t seed);

// n x dim standard-normal draws.
Tensor sample_noise(std::size_t n, std::size_t dim, Rng& rng);

// Spectral-normalized conv weights of a network, normalized with the current
// power-iteration state. Exposed for verification.
std::vector<Tensor> spectral_normalized_weights(const Network& net);

}  // namespace dfkd::nn
