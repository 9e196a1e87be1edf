#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rlsal/layers.hpp"
#include "rlsal/tensor.hpp"

namespace rlsal {

struct ConvLayer {
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool operator==(const ConvLayer&) const = default;
};
struct DenseLayer {
  std::size_t out_size = 1;
  bool operator==(const DenseLayer&) const = default;
};
struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};
struct FlattenLayer {
  bool operator==(const FlattenLayer&) const = default;
};

using LayerSpec = std::variant<ConvLayer, ReluLayer, FlattenLayer, DenseLayer>;

enum class HeadKind { SingleQ, Dueling };

// Output stacks hanging off the trunk. Each stack is dense(h)+relu for every
// hidden size, followed by an output dense layer.
enum class Head { Q, Value, Advantage };

const char* head_name(Head head);

struct NetworkSpec {
  Shape input_shape;  // frames × H × W
  std::vector<LayerSpec> trunk;
  HeadKind head_kind = HeadKind::Dueling;
  std::size_t num_actions = 3;
  std::vector<std::size_t> q_hidden;          // SingleQ only
  std::vector<std::size_t> value_hidden;      // Dueling only
  std::vector<std::size_t> advantage_hidden;  // Dueling only

  bool operator==(const NetworkSpec&) const = default;
};

// Throws DimensionError when consecutive layers do not fit or the trunk does
// not end in a flat feature vector.
void validate(const NetworkSpec& spec);

// Shape produced by each trunk layer (validates as a side effect).
std::vector<Shape> trunk_output_shapes(const NetworkSpec& spec);

bool is_conv(const NetworkSpec& spec, std::size_t trunk_index);
std::optional<std::size_t> first_conv_layer(const NetworkSpec& spec);

std::vector<Head> heads(const NetworkSpec& spec);
const std::vector<std::size_t>& head_hidden(const NetworkSpec& spec, Head head);
std::size_t head_output_size(const NetworkSpec& spec, Head head);

std::string trunk_path(std::size_t index);
std::string head_path(Head head, std::size_t dense_index);

struct ParamShape {
  Shape weights;
  Shape bias;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

// Every parameterized layer, input to output: trunk first, then heads.
std::vector<std::pair<std::string, ParamShape>> parameter_layout(const NetworkSpec& spec);

struct LayerParams {
  Tensor weights;
  Tensor bias;
  bool operator==(const LayerParams&) const = default;
};

// Parameters keyed by layer path ("trunk.3", "value.0", "advantage.1", "q.0").
struct Weights {
  std::map<std::string, LayerParams> layers;

  const LayerParams& at(const std::string& path) const;
  LayerParams& at(const std::string& path);
  bool operator==(const Weights&) const = default;
};

bool bitwise_equal(const Weights& a, const Weights& b);

// Throws DimensionError unless every parameterized layer has exactly one
// entry of the right shape.
void check_weights(const NetworkSpec& spec, const Weights& weights);

// Weights uniform in ±sqrt(6/(fan_in+fan_out)); biases uniform in ±1/sqrt(fan_in).
LayerParams initialize_layer(const ParamShape& shape, std::uint64_t seed);
Weights initialize_weights(const NetworkSpec& spec, std::uint64_t seed);
Weights zero_weights(const NetworkSpec& spec);

// Parameterized layers grouped by distance from the output. Level 0 holds the
// output layer of every head, the following levels walk down the heads and
// then down the trunk one layer at a time.
std::vector<std::vector<std::string>> cascade_levels(const NetworkSpec& spec);
std::size_t cascade_depth(const NetworkSpec& spec);

// Re-initialize the k outermost cascade levels; everything else is copied.
Weights randomize_top_layers(const NetworkSpec& spec, const Weights& weights, std::size_t k,
                             std::uint64_t seed);

struct NetworkTape {
  ExecutionTape trunk;
  std::map<Head, ExecutionTape> heads;
};

struct ForwardResult {
  Tensor q;
  std::optional<double> value;
  std::optional<Tensor> advantages;
  NetworkTape tape;
};

// For Dueling heads q = V + A - mean(A).
ForwardResult forward(const NetworkSpec& spec, const Weights& weights, const Tensor& input);

// Which output scalar a saliency method explains.
struct TargetSelector {
  enum class Kind { ActionQ, MaxQ, Value, AdvantageOf, AdvantageMax };
  Kind kind = Kind::MaxQ;
  std::size_t action = 0;

  static TargetSelector action_q(std::size_t a) { return {Kind::ActionQ, a}; }
  static TargetSelector max_q() { return {Kind::MaxQ, 0}; }
  static TargetSelector value() { return {Kind::Value, 0}; }
  static TargetSelector advantage_of(std::size_t a) { return {Kind::AdvantageOf, a}; }
  static TargetSelector advantage_max() { return {Kind::AdvantageMax, 0}; }

  bool operator==(const TargetSelector&) const = default;
};

// "action:<i>", "maxq", "value", "adv:<i>", "advmax".
std::string to_string(const TargetSelector& target);
std::optional<TargetSelector> parse_target(const std::string& text);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Seed gradients per output. Unused outputs get zero seeds; tensors for
// outputs the network does not have stay empty.
struct OutputSeeds {
  Tensor q;
  Tensor value;  // shape {1}
  Tensor advantages;
};

OutputSeeds seed_gradient(const NetworkSpec& spec, const TargetSelector& target,
                          const ForwardResult& outputs);

// The scalar that seed_gradient differentiates.
double target_scalar(const NetworkSpec& spec, const TargetSelector& target,
                     const ForwardResult& outputs);

struct NetworkBackward {
  BackwardResult trunk;
  std::map<Head, BackwardResult> heads;
};

// Push seeds through the heads and down the trunk. stop_at_layer in the
// options refers to a trunk layer.
NetworkBackward backward(const NetworkSpec& spec, const ForwardResult& outputs,
                         const OutputSeeds& seeds, const BackwardOptions& options = {});

// Parameter gradients from a backward run with options.param_grads set.
Weights collect_param_grads(const NetworkSpec& spec, const NetworkBackward& grads);

// Gradient of the target scalar with respect to the network input.
Tensor input_gradient(const NetworkSpec& spec, const Weights& weights, const Tensor& input,
                      const TargetSelector& target, ReluRule rule);

// The reference Catch architecture: three strided conv layers, two-layer
// value and advantage heads.
NetworkSpec reference_network_spec(std::size_t frames = 4, std::size_t height = 24,
                                   std::size_t width = 24, std::size_t num_actions = 3);

}  // namespace rlsal
