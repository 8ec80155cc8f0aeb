#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "alcn/kernels.hpp"
#include "alcn/tensor.hpp"

namespace alcn {

enum class NetworkKind { kDenoiser, kNoiseGenerator };

std::string to_string(NetworkKind kind);
NetworkKind parse_network_kind(std::string_view s);

/// Architecture of either network.
///
/// The denoiser is `stages` stride-2 3x3 convolutions, a dense bottleneck of
/// `latent_dim`, a dense expansion and mirrored stride-2 transposed
/// convolutions. The noise generator is the decoder half fed from a
/// `noise_latent_dim` Gaussian vector. Hidden activations are leaky ReLU;
/// outputs go through a sigmoid.
///
/// Spatial extents shrink as ceil(e / 2) per stage, so 28 -> 14 -> 7 -> 4.
/// The resolution must be divisible by 2^(stages - 1).
struct ArchSpec {
  NetworkKind kind = NetworkKind::kDenoiser;
  int in_channels = 1;
  int resolution = 28;
  int latent_dim = 128;
  int noise_latent_dim = 256;
  std::vector<int> channel_widths{32, 64, 128};
  double leaky_slope = 0.2;

  static ArchSpec denoiser(int channels, int resolution, std::vector<int> widths = {32, 64, 128},
                           int latent_dim = 128);
  static ArchSpec noise_generator(int channels, int resolution,
                                  std::vector<int> widths = {32, 64, 128},
                                  int noise_latent_dim = 256);

  int stages() const { return static_cast<int>(channel_widths.size()); }
  /// resolution, then the extent after each downsampling stage.
  std::vector<int> spatial_extents() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
  bool trainable = true;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <typename T>
struct ModelParams {
  ArchSpec arch;
  std::vector<NamedTensor<T>> tensors;

  std::size_t index_of(std::string_view name) const;
  const Tensor<T>& at(std::string_view name) const { return tensors[index_of(name)].value; }
  Tensor<T>& at(std::string_view name) { return tensors[index_of(name)].value; }
  void set_trainable(bool trainable) {
    for (auto& t : tensors) t.trainable = trainable;
  }
  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out{arch, {}};
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<U>(), t.trainable});
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Per-tensor gradients, index-aligned with ModelParams::tensors.
template <typename T>
using ParamGrads = std::vector<Tensor<T>>;

/// Activations retained by a forward pass for the backward pass.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> inputs;  // input of each layer
  Tensor<T> output;
};

struct Layer {
  enum class Op { kConv, kConvTranspose, kDense, kLeakyRelu, kSigmoid };
  Op op = Op::kDense;
  int weight = -1;  // index into ModelParams::tensors
  int bias = -1;
  kernels::ConvGeometry geom;  // batch filled per call
  int in_features = 0;
  int out_features = 0;
  Shape out_sample;  // output shape without the batch dimension
};

/// The layer program for one ArchSpec. Cheap to build; holds no parameters.
class Network {
 public:
  explicit Network(ArchSpec arch);

  const ArchSpec& arch() const { return arch_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Shape& input_sample() const { return input_sample_; }
  const Shape& output_sample() const { return layers_.back().out_sample; }
  /// Names and shapes of the parameters in the order ModelParams stores them.
  const std::vector<std::pair<std::string, Shape>>& parameter_layout() const { return layout_; }

  template <typename T>
  Tensor<T> forward(const ModelParams<T>& params, const Tensor<T>& input,
                    ForwardTrace<T>* trace = nullptr) const;

  /// Backpropagates grad_out through the traced pass. Weight gradients are
  /// written to *grads (when non-null) for trainable tensors only; frozen
  /// tensors get zero gradients. Returns the input gradient, or an empty
  /// tensor when need_input_grad is false.
  template <typename T>
  Tensor<T> backward(const ModelParams<T>& params, const ForwardTrace<T>& trace,
                     Tensor<T> grad_out, ParamGrads<T>* grads, bool need_input_grad) const;

 private:
  template <typename T>
  void check_params(const ModelParams<T>& params) const;

  ArchSpec arch_;
  Shape input_sample_;
  std::vector<Layer> layers_;
  std::vector<std::pair<std::string, Shape>> layout_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and zero biases.
template <typename T = float>
ModelParams<T> init_params(const ArchSpec& arch, std::uint64_t seed);

template <typename T>
Tensor<T> forward_denoiser(const ModelParams<T>& params, const Tensor<T>& x);

template <typename T>
Tensor<T> forward_noise_generator(const ModelParams<T>& params, const Tensor<T>& z);

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params) {
  std::size_t n = 0;
  for (const auto& t : params.tensors) n += t.value.size();
  return n;
}

template <typename T>
ParamGrads<T> zero_grads(const ModelParams<T>& params) {
  ParamGrads<T> g;
  g.reserve(params.tensors.size());
  for (const auto& t : params.tensors) g.emplace_back(t.value.shape());
  return g;
}

}  // namespace alcn
