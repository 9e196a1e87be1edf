#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "rlsal/network.hpp"
#include "rlsal/tensor.hpp"

namespace rlsal {

enum class Method { Gradient, Guided, GradCam, GuidedGradCam, G1GradCam, G2GradCam, Perturbation };

// CLI names: gradient, guided, gradcam, guided-gradcam, g1, g2, perturb.
const char* method_name(Method method);
std::optional<Method> parse_method(const std::string& name);

// The six gradient-based methods (everything except Perturbation).
inline constexpr Method kGradientMethods[] = {Method::Gradient,      Method::Guided,    Method::GradCam,
                                              Method::GuidedGradCam, Method::G1GradCam, Method::G2GradCam};

// Gradient-family maps pick one stacked frame; CAM maps aggregate all frames
// and perturbation always blurs the newest one.
bool uses_frame_offset(Method method);
bool uses_conv_layer(Method method);
bool produces_signed_map(Method method);

struct SaliencyMeta {
  Method method = Method::Gradient;
  std::optional<std::size_t> layer;
  TargetSelector target;
  std::optional<std::size_t> frame_offset;
  std::string checkpoint;
};

// H×W attribution at input resolution. Unsigned maps are non-negative.
struct SaliencyMap {
  Tensor values;
  bool is_signed = true;
  SaliencyMeta meta;
};

// Input gradient for the frame `frame_offset` steps back from the newest
// (0 = newest).
SaliencyMap vanilla_gradient(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                             const TargetSelector& target, std::size_t frame_offset = 0);
SaliencyMap guided_backprop(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                            const TargetSelector& target, std::size_t frame_offset = 0);

// Per-channel importance: mean of the gradient over each feature map.
struct CamWeights {
  Tensor alpha;
};

struct CamResult {
  CamWeights weights;
  Tensor linear;  // sum_k alpha_k A^k, h×w
  Tensor coarse;  // ReLU(linear)
};

// activations and gradients are K×h×w.
CamResult cam_from_gradients(const Tensor& activations, const Tensor& gradients);

// Trunk index whose output is used as A for a conv layer: the ReLU right
// after it when there is one. Throws LayerKindError for non-conv layers.
std::size_t cam_activation_layer(const NetworkSpec& spec, std::size_t conv_layer);

// CAM at feature resolution with the gradient pass run under `rule`.
CamResult class_activation_map(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                               const TargetSelector& target, std::size_t conv_layer, ReluRule rule);

SaliencyMap grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                     const TargetSelector& target, std::size_t conv_layer);
SaliencyMap guided_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                            const TargetSelector& target, std::size_t conv_layer, std::size_t frame_offset = 0);
SaliencyMap g1_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                        const TargetSelector& target, std::size_t conv_layer);
SaliencyMap g2_grad_cam(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                        const TargetSelector& target, std::size_t conv_layer, std::size_t frame_offset = 0);

struct PerturbationOptions {
  double mask_sigma = 3.0;   // blur width
  double mask_radius = 5.0;  // width of the Gaussian blending mask
  std::size_t stride = 1;
};

// S(i,j) = 0.5 * |f(I) - f(I')|^2, where I' blends the newest frame with its
// blurred copy under a Gaussian mask centred at (i,j) and f is the q-vector
// (or the selected stream). Sampled on a stride grid, bilinear in between.
SaliencyMap perturbation_saliency(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                                  const TargetSelector& target, const PerturbationOptions& options = {});

// Separable Gaussian blur, kernel truncated at 4 sigma, mirror-reflected edges.
Tensor gaussian_blur(const Tensor& frame, double sigma);

// exp(-d^2 / (2 radius^2)) around (cy, cx).
Tensor gaussian_mask(std::size_t height, std::size_t width, double cy, double cx, double radius);

// frame * (1 - mask) + blurred * mask
Tensor blend_with_mask(const Tensor& frame, const Tensor& blurred, const Tensor& mask);

// Half-pixel-centre bilinear resize with edge clamping.
Tensor upsample_bilinear(const Tensor& map, std::size_t height, std::size_t width);

struct SaliencyRequest {
  Method method = Method::Guided;
  TargetSelector target;
  std::optional<std::size_t> conv_layer;  // defaults to the first conv layer
  std::size_t frame_offset = 0;
  PerturbationOptions perturbation;
};

SaliencyMap compute_saliency(const NetworkSpec& spec, const Weights& weights, const Tensor& stack,
                             const SaliencyRequest& request);

}  // namespace rlsal
