#include "rlsal/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "rlsal/errors.hpp"

namespace rlsal {

const char* method_name(Method method) {
  switch (method) {
    case Method::Gradient: return "gradient";
    case Method::Guided: return "guided";
    case Method::GradCam: return "gradcam";
    case Method::GuidedGradCam: return "guided-gradcam";
    case Method::G1GradCam: return "g1";
    case Method::G2GradCam: return "g2";
    case Method::Perturbation: return "perturb";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  for (Method m : {Method::Gradient, Method::Guided, Method::GradCam, Method::GuidedGradCam, Method::G1GradCam,
                   Method::G2GradCam, Method::Perturbation})
    if (name == method_name(m)) return m;
  return std::nullopt;
}

bool uses_frame_offset(Method m) {
  return m == Method::Gradient || m == Method::Guided || m == Method::GuidedGradCam || m == Method::G2GradCam;
}

bool uses_conv_layer(Method m) {
  return m == Method::GradCam || m == Method::GuidedGradCam || m == Method::G1GradCam || m == Method::G2GradCam;
}

bool produces_signed_map(Method m) { return !(m == Method::GradCam || m == Method::G1GradCam || m == Method::Perturbation); }

namespace {

std::size_t frame_channel(const NetworkSpec& spec, std::size_t frame_offset) {
  const std::size_t depth = spec.input_shape.at(0);
  if (frame_offset >= depth)
    throw IndexError("frame offset " + std::to_string(frame_offset) + " outside a stack of " + std::to_string(depth));
  return depth - 1 - frame_offset;
}

SaliencyMap gradient_map(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                         const TargetSelector& target, std::size_t frame_offset, ReluRule rule, Method method) {
  const std::size_t channel = frame_channel(spec, frame_offset);
  const Tensor grad = input_gradient(spec, weights, stack, target, rule);
  SaliencyMap m;
  m.values = grad.channel(channel);
  m.is_signed = true;
  m.meta = {method, std::nullopt, target, frame_offset, {}};
  return m;
}

SaliencyMap cam_map(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                    const TargetSelector& target, std::size_t conv_layer, ReluRule rule, Method method) {
  const CamResult cam = class_activation_map(spec, weights, stack, target, conv_layer, rule);
  SaliencyMap m;
  m.values = upsample_bilinear(cam.coarse, spec.input_shape[1], spec.input_shape[2]);
  m.is_signed = false;
  m.meta = {method, conv_layer, target, std::nullopt, {}};
  return m;
}

SaliencyMap product_map(const SaliencyMap& cam, const SaliencyMap& guided, Method method) {
  SaliencyMap m;
  m.values = hadamard(cam.values, guided.values);
  m.is_signed = true;
  m.meta = {method, cam.meta.layer, cam.meta.target, guided.meta.frame_offset, {}};
  return m;
}

// scipy-style "reflect": (d c b a | a b c d | d c b a)
std::size_t reflect_index(long i, std::size_t n) {
  const long len = static_cast<long>(n);
  const long period = 2 * len;
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < len ? r : period - 1 - r);
}

}  // namespace

SaliencyMap vanilla_gradient(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                             const TargetSelector& target, std::size_t frame_offset) {
  return gradient_map(spec, weights, stack, target, frame_offset, ReluRule::Vanilla, Method::Gradient);
}

SaliencyMap guided_backprop(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                            const TargetSelector& target, std::size_t frame_offset) {
  return gradient_map(spec, weights, stack, target, frame_offset, ReluRule::Guided, Method::Guided);
}

CamResult cam_from_gradients(const Tensor& activations, const Tensor& gradients) {
  require_same_shape(activations, gradients, "cam_from_gradients");
  if (activations.rank() != 3) throw DimensionError("CAM needs K×h×w activations");
  const std::size_t k = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
  const double z = static_cast<double>(h * w);
  CamResult r;
  r.weights.alpha = Tensor({k});
  r.linear = Tensor({h, w});
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) s += gradients.at(c, y, x);
    r.weights.alpha[c] = s / z;
  }
  for (std::size_t c = 0; c < k; ++c) {
    const double a = r.weights.alpha[c];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) r.linear.at(y, x) += a * activations.at(c, y, x);
  }
  r.coarse = relu_forward(r.linear);
  return r;
}

std::size_t cam_activation_layer(const NetworkSpec& spec, std::size_t conv_layer) {
  if (conv_layer >= spec.trunk.size()) throw IndexError("conv layer index out of range");
  if (!is_conv(spec, conv_layer))
    throw LayerKindError("trunk layer " + std::to_string(conv_layer) + " is not convolutional");
  if (conv_layer + 1 < spec.trunk.size() && std::holds_alternative<ReluLayer>(spec.trunk[conv_layer + 1]))
    return conv_layer + 1;
  return conv_layer;
}

CamResult class_activation_map(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                               const TargetSelector& target, std::size_t conv_layer, ReluRule rule) {
  const std::size_t act_layer = cam_activation_layer(spec, conv_layer);
  const ForwardResult fr = forward(spec, weights, stack);
  BackwardOptions options;
  options.rule = rule;
  options.stop_at_layer = act_layer;
  const NetworkBackward nb = backward(spec, fr, seed_gradient(spec, target, fr), options);
  return cam_from_gradients(fr.tape.trunk[act_layer].output, nb.trunk.gradient);
}

SaliencyMap grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                     const TargetSelector& target, std::size_t conv_layer) {
  return cam_map(spec, weights, stack, target, conv_layer, ReluRule::Vanilla, Method::GradCam);
}

SaliencyMap g1_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                        const TargetSelector& target, std::size_t conv_layer) {
  return cam_map(spec, weights, stack, target, conv_layer, ReluRule::Guided, Method::G1GradCam);
}

SaliencyMap guided_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                            const TargetSelector& target, std::size_t conv_layer, std::size_t frame_offset) {
  return product_map(grad_cam(spec, weights, stack, target, conv_layer),
                     guided_backprop(spec, weights, stack, target, frame_offset), Method::GuidedGradCam);
}

SaliencyMap g2_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                        const TargetSelector& target, std::size_t conv_layer, std::size_t frame_offset) {
  return product_map(g1_grad_cam(spec, weights, stack, target, conv_layer),
                     guided_backprop(spec, weights, stack, target, frame_offset), Method::G2GradCam);
}

Tensor gaussian_blur(const Tensor& frame, double sigma) {
  if (frame.rank() != 2) throw DimensionError("gaussian_blur needs an H×W frame");
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be positive");
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const std::size_t h = frame.dim(0), w = frame.dim(1);
  Tensor rows({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i)
        s += kernel[static_cast<std::size_t>(i + radius)] * frame.at(y, reflect_index(static_cast<long>(x) + i, w));
      rows.at(y, x) = s;
    }
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i)
        s += kernel[static_cast<std::size_t>(i + radius)] * rows.at(reflect_index(static_cast<long>(y) + i, h), x);
      out.at(y, x) = s;
    }
  return out;
}

Tensor gaussian_mask(std::size_t height, std::size_t width, double cy, double cx, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("mask radius must be positive");
  Tensor m({height, width});
  const double denom = 2.0 * radius * radius;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      m.at(y, x) = std::exp(-(dy * dy + dx * dx) / denom);
    }
  return m;
}

Tensor blend_with_mask(const Tensor& frame, const Tensor& blurred, const Tensor& mask) {
  require_same_shape(frame, blurred, "blend_with_mask");
  require_same_shape(frame, mask, "blend_with_mask");
  Tensor out(frame.shape());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] * (1.0 - mask[i]) + blurred[i] * mask[i];
  return out;
}

Tensor upsample_bilinear(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw DimensionError("upsample_bilinear needs an h×w map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto axis = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& t) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    t = src - static_cast<double>(i0);
  };
  Tensor out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double ty;
    axis(y, h, height, y0, y1, ty);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double tx;
      axis(x, w, width, x0, x1, tx);
      const double top = map.at(y0, x0) * (1.0 - tx) + map.at(y0, x1) * tx;
      const double bottom = map.at(y1, x0) * (1.0 - tx) + map.at(y1, x1) * tx;
      out.at(y, x) = top * (1.0 - ty) + bottom * ty;
    }
  }
  return out;
}

namespace {

// The vector whose change the perturbation map measures.
Tensor policy_vector(const NetworkSpec& spec, const TargetSelector& target, const ForwardResult& fr) {
  using K = TargetSelector::Kind;
  (void)target_scalar(spec, target, fr);  // validates the selector
  switch (target.kind) {
    case K::ActionQ:
    case K::MaxQ: return fr.q;
    case K::Value: return Tensor::vector({*fr.value});
    case K::AdvantageOf:
    case K::AdvantageMax: return *fr.advantages;
  }
  return fr.q;
}

}  // namespace

SaliencyMap perturbation_saliency(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                                  const TargetSelector& target, const PerturbationOptions& options) {
  if (options.stride == 0) throw std::invalid_argument("perturbation stride must be positive");
  if (!(options.mask_sigma > 0.0) || !(options.mask_radius > 0.0))
    throw std::invalid_argument("perturbation mask parameters must be positive");
  if (stack.shape() != spec.input_shape) throw DimensionError("perturbation input does not match the network");
  const std::size_t depth = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  const std::size_t newest = depth - 1;

  const Tensor base = policy_vector(spec, target, forward(spec, weights, stack));
  const Tensor frame = stack.channel(newest);
  const Tensor blurred = gaussian_blur(frame, options.mask_sigma);

  const std::size_t ny = (h - 1) / options.stride + 1, nx = (w - 1) / options.stride + 1;
  Tensor grid({ny, nx});
  Tensor perturbed = stack;
  const std::size_t plane = h * w;
  for (std::size_t gy = 0; gy < ny; ++gy) {
    for (std::size_t gx = 0; gx < nx; ++gx) {
      const Tensor mask = gaussian_mask(h, w, static_cast<double>(gy * options.stride),
                                        static_cast<double>(gx * options.stride), options.mask_radius);
      const Tensor blended = blend_with_mask(frame, blurred, mask);
      std::copy(blended.data().begin(), blended.data().end(),
                perturbed.data().begin() + static_cast<std::ptrdiff_t>(newest * plane));
      const Tensor out = policy_vector(spec, target, forward(spec, weights, perturbed));
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = base[i] - out[i];
        s += d * d;
      }
      grid.at(gy, gx) = 0.5 * s;
    }
  }

  // Bilinear fill between grid samples; past the last sample the value is held.
  auto locate = [&](std::size_t p, std::size_t n, std::size_t& g0, std::size_t& g1, double& t) {
    g0 = p / options.stride;
    g1 = std::min(g0 + 1, n - 1);
    t = g1 == g0 ? 0.0 : static_cast<double>(p - g0 * options.stride) / static_cast<double>(options.stride);
  };
  SaliencyMap m;
  m.values = Tensor({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t y0, y1;
    double ty;
    locate(y, ny, y0, y1, ty);
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t x0, x1;
      double tx;
      locate(x, nx, x0, x1, tx);
      if (ty == 0.0 && tx == 0.0) {
        m.values.at(y, x) = grid.at(y0, x0);
        continue;
      }
      const double top = grid.at(y0, x0) * (1.0 - tx) + grid.at(y0, x1) * tx;
      const double bottom = grid.at(y1, x0) * (1.0 - tx) + grid.at(y1, x1) * tx;
      m.values.at(y, x) = top * (1.0 - ty) + bottom * ty;
    }
  }
  m.is_signed = false;
  m.meta = {Method::Perturbation, std::nullopt, target, std::nullopt, {}};
  return m;
}

SaliencyMap compute_saliency(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                             const SaliencyRequest& req) {
  std::size_t layer = 0;
  if (uses_conv_layer(req.method)) {
    if (req.conv_layer) {
      layer = *req.conv_layer;
    } else if (auto first = first_conv_layer(spec)) {
      layer = *first;
    } else {
      throw LayerKindError("network has no convolutional layer for " + std::string(method_name(req.method)));
    }
  }
  switch (req.method) {
    case Method::Gradient: return vanilla_gradient(spec, weights, stack, req.target, req.frame_offset);
    case Method::Guided: return guided_backprop(spec, weights, stack, req.target, req.frame_offset);
    case Method::GradCam: return grad_cam(spec, weights, stack, req.target, layer);
    case Method::GuidedGradCam: return guided_grad_cam(spec, weights, stack, req.target, layer, req.frame_offset);
    case Method::G1GradCam: return g1_grad_cam(spec, weights, stack, req.target, layer);
    case Method::G2GradCam: return g2_grad_cam(spec, weights, stack, req.target, layer, req.frame_offset);
    case Method::Perturbation: return perturbation_saliency(spec, weights, stack, req.target, req.perturbation);
  }
  throw std::invalid_argument("unknown saliency method");
}

}  // namespace rlsal
