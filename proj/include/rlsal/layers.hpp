#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "rlsal/tensor.hpp"

namespace rlsal {

// How a ReLU passes gradient backwards.
//   Vanilla: g' = g * 1[x > 0]
//   Guided:  g' = g * 1[x > 0] * 1[g > 0]
enum class ReluRule { Vanilla, Guided };

enum class LayerKind { Conv, Dense, Relu, Flatten };

const char* to_string(LayerKind kind);

// Cross-correlation with zero padding. input C×H×W, kernels O×C×Kh×Kw, bias O.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      std::size_t stride, std::size_t padding);

// input N, weights M×N, bias M.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu_forward(const Tensor& input);

// One executed layer. Parameter tensors are borrowed from the Weights the
// forward pass ran against, so a tape must not outlive them.
struct LayerRecord {
  LayerKind kind = LayerKind::Relu;
  Tensor input;
  Tensor output;  // pre-activation for conv/dense; rectified for relu
  const Tensor* weights = nullptr;
  const Tensor* bias = nullptr;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ParamGrads {
  Tensor weights;
  Tensor bias;
};

struct LayerGrads {
  Tensor input;  // empty when not requested
  ParamGrads params;
};

LayerGrads conv2d_backward(const LayerRecord& record, const Tensor& upstream,
                           bool want_input = true, bool want_params = true);
LayerGrads dense_backward(const LayerRecord& record, const Tensor& upstream,
                          bool want_input = true, bool want_params = true);
Tensor relu_backward(const LayerRecord& record, const Tensor& upstream, ReluRule rule);

// Forward execution log, in execution order.
class ExecutionTape {
 public:
  Tensor conv(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding);
  Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
  // Parameters are borrowed; temporaries would dangle.
  Tensor conv(const Tensor&, Tensor&&, const Tensor&, std::size_t, std::size_t) = delete;
  Tensor conv(const Tensor&, const Tensor&, Tensor&&, std::size_t, std::size_t) = delete;
  Tensor dense(const Tensor&, Tensor&&, const Tensor&) = delete;
  Tensor dense(const Tensor&, const Tensor&, Tensor&&) = delete;
  Tensor relu(const Tensor& input);
  Tensor flatten(const Tensor& input);

  const std::vector<LayerRecord>& records() const { return records_; }
  const LayerRecord& operator[](std::size_t i) const { return records_.at(i); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<LayerRecord> records_;
};

struct BackwardOptions {
  ReluRule rule = ReluRule::Vanilla;
  // Stop once the gradient reaches this layer's output.
  std::optional<std::size_t> stop_at_layer;
  bool param_grads = false;
  // When false the first layer's input gradient is skipped (training only
  // needs parameter gradients).
  bool input_grad = true;
};

struct BackwardResult {
  // Gradient at the tape input, or at the stop layer's output.
  Tensor gradient;
  // grad_at_output[i] / grad_at_input[i]: gradient entering / leaving layer i
  // on the way down. Layers that were not visited stay empty.
  std::vector<Tensor> grad_at_output;
  std::vector<Tensor> grad_at_input;
  // Filled for conv/dense layers when BackwardOptions::param_grads is set.
  std::vector<std::optional<ParamGrads>> params;
};

BackwardResult backward_to_input(const ExecutionTape& tape, const Tensor& seed,
                                 const BackwardOptions& options = {});

inline BackwardResult backward_to_input(const ExecutionTape& tape, const Tensor& seed,
                                        ReluRule rule,
                                        std::optional<std::size_t> stop_at_layer = std::nullopt) {
  BackwardOptions options;
  options.rule = rule;
  options.stop_at_layer = stop_at_layer;
  return backward_to_input(tape, seed, options);
}

}  // namespace rlsal
