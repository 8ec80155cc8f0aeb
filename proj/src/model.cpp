#include "alcn/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace alcn {

std::string to_string(NetworkKind kind) {
  return kind == NetworkKind::kDenoiser ? "denoiser" : "noise_generator";
}

NetworkKind parse_network_kind(std::string_view s) {
  if (s == "denoiser") return NetworkKind::kDenoiser;
  if (s == "noise_generator") return NetworkKind::kNoiseGenerator;
  throw std::invalid_argument("unknown network kind '" + std::string(s) + "'");
}

ArchSpec ArchSpec::denoiser(int channels, int resolution, std::vector<int> widths,
                            int latent_dim) {
  ArchSpec a;
  a.kind = NetworkKind::kDenoiser;
  a.in_channels = channels;
  a.resolution = resolution;
  a.channel_widths = std::move(widths);
  a.latent_dim = latent_dim;
  return a;
}

ArchSpec ArchSpec::noise_generator(int channels, int resolution, std::vector<int> widths,
                                   int noise_latent_dim) {
  ArchSpec a;
  a.kind = NetworkKind::kNoiseGenerator;
  a.in_channels = channels;
  a.resolution = resolution;
  a.channel_widths = std::move(widths);
  a.noise_latent_dim = noise_latent_dim;
  return a;
}

std::vector<int> ArchSpec::spatial_extents() const {
  std::vector<int> e{resolution};
  for (int i = 0; i < stages(); ++i)
    e.push_back(kernels::conv_out_extent(e.back(), 3, 2, 1));
  return e;
}

void ArchSpec::validate() const {
  if (in_channels < 1) throw std::invalid_argument("arch: in_channels must be >= 1");
  if (stages() < 1) throw std::invalid_argument("arch: at least one channel width is required");
  for (int w : channel_widths)
    if (w < 1) throw std::invalid_argument("arch: channel widths must be >= 1");
  if (resolution < 2) throw std::invalid_argument("arch: resolution must be >= 2");
  const int div = 1 << (stages() - 1);
  if (resolution % div != 0)
    throw std::invalid_argument("arch: resolution " + std::to_string(resolution) +
                                " is not divisible by " + std::to_string(div) + " (" +
                                std::to_string(stages()) + " stages)");
  if (kind == NetworkKind::kDenoiser && latent_dim < 1)
    throw std::invalid_argument("arch: latent_dim must be >= 1");
  if (kind == NetworkKind::kNoiseGenerator && noise_latent_dim < 1)
    throw std::invalid_argument("arch: noise_latent_dim must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("arch: leaky_slope must be in [0, 1)");
}

template <typename T>
std::size_t ModelParams<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return i;
  throw std::out_of_range("no parameter tensor named '" + std::string(name) + "'");
}

template struct ModelParams<float>;
template struct ModelParams<double>;

Network::Network(ArchSpec arch) : arch_(std::move(arch)) {
  arch_.validate();
  const auto ext = arch_.spatial_extents();
  const int S = arch_.stages();
  const auto& widths = arch_.channel_widths;
  const auto sq = [](int e) { return static_cast<std::size_t>(e); };

  auto add_param = [&](std::string name, Shape shape) {
    layout_.emplace_back(std::move(name), std::move(shape));
    return static_cast<int>(layout_.size() - 1);
  };
  auto add_act = [&](Layer::Op op) {
    Layer l;
    l.op = op;
    l.out_sample = layers_.back().out_sample;
    layers_.push_back(l);
  };
  auto add_dense = [&](const std::string& name, int in, int out, Shape out_sample) {
    Layer l;
    l.op = Layer::Op::kDense;
    l.weight = add_param(name + ".weight", {sq(out), sq(in)});
    l.bias = add_param(name + ".bias", {sq(out)});
    l.in_features = in;
    l.out_features = out;
    l.out_sample = std::move(out_sample);
    layers_.push_back(l);
  };
  // Decoder stack from the bottleneck grid back to full resolution.
  auto add_decoder = [&](const std::string& prefix) {
    for (int i = S; i >= 1; --i) {
      const int cin = widths[i - 1];
      const int cout = i == 1 ? arch_.in_channels : widths[i - 2];
      Layer l;
    l.op = Layer::Op::kConvTranspose;
      const std::string name = prefix + ".tconv" + std::to_string(i);
      l.weight = add_param(name + ".weight", {sq(cin), sq(cout), 3, 3});
      l.bias = add_param(name + ".bias", {sq(cout)});
      l.geom = {1, cin, cout, ext[i], ext[i], ext[i - 1], ext[i - 1], 3, 2, 1};
      l.out_sample = {sq(cout), sq(ext[i - 1]), sq(ext[i - 1])};
      layers_.push_back(l);
      add_act(i == 1 ? Layer::Op::kSigmoid : Layer::Op::kLeakyRelu);
    }
  };

  const int flat = widths[S - 1] * ext[S] * ext[S];
  const Shape grid{sq(widths[S - 1]), sq(ext[S]), sq(ext[S])};
  if (arch_.kind == NetworkKind::kDenoiser) {
    input_sample_ = {sq(arch_.in_channels), sq(ext[0]), sq(ext[0])};
    for (int i = 1; i <= S; ++i) {
      const int cin = i == 1 ? arch_.in_channels : widths[i - 2];
      const int cout = widths[i - 1];
      Layer l;
    l.op = Layer::Op::kConv;
      const std::string name = "enc.conv" + std::to_string(i);
      l.weight = add_param(name + ".weight", {sq(cout), sq(cin), 3, 3});
      l.bias = add_param(name + ".bias", {sq(cout)});
      l.geom = {1, cin, cout, ext[i - 1], ext[i - 1], ext[i], ext[i], 3, 2, 1};
      l.out_sample = {sq(cout), sq(ext[i]), sq(ext[i])};
      layers_.push_back(l);
      add_act(Layer::Op::kLeakyRelu);
    }
    add_dense("enc.fc", flat, arch_.latent_dim, {sq(arch_.latent_dim)});
    add_dense("dec.fc", arch_.latent_dim, flat, grid);
    add_act(Layer::Op::kLeakyRelu);
    add_decoder("dec");
  } else {
    input_sample_ = {sq(arch_.noise_latent_dim)};
    add_dense("gen.fc", arch_.noise_latent_dim, flat, grid);
    add_act(Layer::Op::kLeakyRelu);
    add_decoder("gen");
  }
}

template <typename T>
void Network::check_params(const ModelParams<T>& params) const {
  if (params.tensors.size() != layout_.size())
    throw std::invalid_argument("parameter count does not match architecture");
  for (std::size_t i = 0; i < layout_.size(); ++i)
    if (params.tensors[i].name != layout_[i].first ||
        params.tensors[i].value.shape() != layout_[i].second)
      throw std::invalid_argument("parameter '" + params.tensors[i].name +
                                  "' does not match architecture layout");
}

template <typename T>
Tensor<T> Network::forward(const ModelParams<T>& params, const Tensor<T>& input,
                           ForwardTrace<T>* trace) const {
  check_params(params);
  if (input.rank() != input_sample_.size() + 1 ||
      !std::equal(input_sample_.begin(), input_sample_.end(), input.shape().begin() + 1))
    throw std::invalid_argument("input shape " + to_string(input.shape()) +
                                " does not match network input (B," +
                                to_string(input_sample_).substr(1));
  const std::size_t B = input.dim(0);
  const T slope = static_cast<T>(arch_.leaky_slope);
  if (trace) {
    trace->inputs.clear();
    trace->inputs.reserve(layers_.size());
  }

  Tensor<T> cur = input;
  for (const Layer& l : layers_) {
    Shape out_shape{B};
    out_shape.insert(out_shape.end(), l.out_sample.begin(), l.out_sample.end());
    switch (l.op) {
      case Layer::Op::kConv:
      case Layer::Op::kConvTranspose:
      case Layer::Op::kDense: {
        Tensor<T> out(out_shape);
        std::span<const T> w = params.tensors[l.weight].value.span();
        std::span<const T> b = params.tensors[l.bias].value.span();
        if (l.op == Layer::Op::kDense) {
          kernels::dense_forward<T>(static_cast<int>(B), l.in_features, l.out_features, cur.span(),
                                    w, b, out.span());
        } else {
          auto g = l.geom;
          g.batch = static_cast<int>(B);
          if (l.op == Layer::Op::kConv)
            kernels::conv2d_forward<T>(g, cur.span(), w, b, out.span());
          else
            kernels::conv_transpose2d_forward<T>(g, cur.span(), w, b, out.span());
        }
        if (trace) trace->inputs.push_back(std::move(cur));
        cur = std::move(out);
        break;
      }
      case Layer::Op::kLeakyRelu:
        if (trace) trace->inputs.push_back(cur);
        kernels::leaky_relu_forward<T>(cur.span(), slope);
        break;
      case Layer::Op::kSigmoid:
        if (trace) trace->inputs.push_back(cur);
        kernels::sigmoid_forward<T>(cur.span());
        break;
    }
  }
  if (trace) trace->output = cur;
  return cur;
}

template <typename T>
Tensor<T> Network::backward(const ModelParams<T>& params, const ForwardTrace<T>& trace,
                            Tensor<T> grad_out, ParamGrads<T>* grads,
                            bool need_input_grad) const {
  check_params(params);
  if (trace.inputs.size() != layers_.size())
    throw std::invalid_argument("backward: trace does not belong to this network");
  require_same_shape(grad_out, trace.output, "backward");
  if (grads) *grads = zero_grads(params);
  const T slope = static_cast<T>(arch_.leaky_slope);
  const std::size_t B = grad_out.dim(0);

  Tensor<T> grad = std::move(grad_out);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const Tensor<T>& in = trace.inputs[li];
    switch (l.op) {
      case Layer::Op::kLeakyRelu:
        kernels::leaky_relu_backward<T>(in.span(), grad.span(), slope);
        break;
      case Layer::Op::kSigmoid: {
        const Tensor<T>& out = li + 1 < layers_.size() ? trace.inputs[li + 1] : trace.output;
        kernels::sigmoid_backward<T>(out.span(), grad.span());
        break;
      }
      default: {
        const bool want_dx = li > 0 || need_input_grad;
        const auto& wt = params.tensors[l.weight];
        const auto& bt = params.tensors[l.bias];
        std::span<T> dw, db;
        if (grads && wt.trainable) dw = (*grads)[l.weight].span();
        if (grads && bt.trainable) db = (*grads)[l.bias].span();
        if (!want_dx && dw.empty() && db.empty()) return {};
        Tensor<T> dx;
        if (want_dx) dx = Tensor<T>(in.shape());
        if (l.op == Layer::Op::kDense) {
          kernels::dense_backward<T>(static_cast<int>(B), l.in_features, l.out_features, in.span(),
                                     wt.value.span(), grad.span(), dx.span(), dw, db);
        } else {
          auto g = l.geom;
          g.batch = static_cast<int>(B);
          if (l.op == Layer::Op::kConv)
            kernels::conv2d_backward<T>(g, in.span(), wt.value.span(), grad.span(), dx.span(), dw,
                                        db);
          else
            kernels::conv_transpose2d_backward<T>(g, in.span(), wt.value.span(), grad.span(),
                                                  dx.span(), dw, db);
        }
        grad = std::move(dx);
        break;
      }
    }
  }
  if (!need_input_grad) return {};
  return grad;
}

template <typename T>
ModelParams<T> init_params(const ArchSpec& arch, std::uint64_t seed) {
  const Network net(arch);
  std::mt19937_64 rng(seed);
  ModelParams<T> params{arch, {}};
  for (const auto& [name, shape] : net.parameter_layout()) {
    Tensor<T> t(shape);
    if (shape.size() > 1) {
      // conv (Cout, Cin, k, k) and tconv (Cin, Cout, k, k) both use dims[1]*k*k;
      // dense (out, in) uses in.
      std::size_t fan_in = shape[1];
      for (std::size_t d = 2; d < shape.size(); ++d) fan_in *= shape[d];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    }
    params.tensors.push_back({name, std::move(t), true});
  }
  return params;
}

template <typename T>
Tensor<T> forward_denoiser(const ModelParams<T>& params, const Tensor<T>& x) {
  if (params.arch.kind != NetworkKind::kDenoiser)
    throw std::invalid_argument("forward_denoiser: parameters are not a denoiser");
  return Network(params.arch).forward(params, x);
}

template <typename T>
Tensor<T> forward_noise_generator(const ModelParams<T>& params, const Tensor<T>& z) {
  if (params.arch.kind != NetworkKind::kNoiseGenerator)
    throw std::invalid_argument("forward_noise_generator: parameters are not a noise generator");
  if (z.rank() != 2 || z.dim(1) != static_cast<std::size_t>(params.arch.noise_latent_dim))
    throw std::invalid_argument("forward_noise_generator: latent batch " + to_string(z.shape()) +
                                " does not have width " +
                                std::to_string(params.arch.noise_latent_dim));
  return Network(params.arch).forward(params, z);
}

#define ALCN_INSTANTIATE(T)                                                                   \
  template Tensor<T> Network::forward<T>(const ModelParams<T>&, const Tensor<T>&,             \
                                         ForwardTrace<T>*) const;                             \
  template Tensor<T> Network::backward<T>(const ModelParams<T>&, const ForwardTrace<T>&,      \
                                          Tensor<T>, ParamGrads<T>*, bool) const;             \
  template ModelParams<T> init_params<T>(const ArchSpec&, std::uint64_t);                     \
  template Tensor<T> forward_denoiser<T>(const ModelParams<T>&, const Tensor<T>&);            \
  template Tensor<T> forward_noise_generator<T>(const ModelParams<T>&, const Tensor<T>&);

ALCN_INSTANTIATE(float)
ALCN_INSTANTIATE(double)
#undef ALCN_INSTANTIATE

}  // namespace alcn
