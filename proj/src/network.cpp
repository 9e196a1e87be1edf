#include "rlsal/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlsal/errors.hpp"
#include "rlsal/random.hpp"

namespace rlsal {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

const char* head_name(Head head) {
  switch (head) {
    case Head::Q: return "q";
    case Head::Value: return "value";
    case Head::Advantage: return "advantage";
  }
  return "?";
}

std::vector<Shape> trunk_output_shapes(const NetworkSpec& spec) {
  if (spec.input_shape.size() != 3)
    throw DimensionError("network input must be frames×H×W, got " + to_string(spec.input_shape));
  for (auto d : spec.input_shape)
    if (d == 0) throw DimensionError("network input dimensions must be positive");
  if (spec.num_actions == 0) throw DimensionError("network needs at least one action");

  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    const std::string where = "trunk layer " + std::to_string(i);
    cur = std::visit(
        overloaded{
            [&](const ConvLayer& c) -> Shape {
              if (cur.size() != 3) throw DimensionError(where + ": conv needs a C×H×W input");
              if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0)
                throw DimensionError(where + ": conv sizes must be positive");
              if (cur[1] + 2 * c.padding < c.kernel || cur[2] + 2 * c.padding < c.kernel)
                throw DimensionError(where + ": kernel larger than padded input");
              return {c.out_channels, (cur[1] + 2 * c.padding - c.kernel) / c.stride + 1,
                      (cur[2] + 2 * c.padding - c.kernel) / c.stride + 1};
            },
            [&](const ReluLayer&) -> Shape { return cur; },
            [&](const FlattenLayer&) -> Shape { return {element_count(cur)}; },
            [&](const DenseLayer& d) -> Shape {
              if (cur.size() != 1) throw DimensionError(where + ": dense needs a flat input");
              if (d.out_size == 0) throw DimensionError(where + ": dense size must be positive");
              return {d.out_size};
            },
        },
        spec.trunk[i]);
    shapes.push_back(cur);
  }
  if (cur.size() != 1) throw DimensionError("trunk must end in a flat feature vector");
  for (Head h : heads(spec))
    for (auto hs : head_hidden(spec, h))
      if (hs == 0) throw DimensionError(std::string(head_name(h)) + " head: hidden size must be positive");
  return shapes;
}

void validate(const NetworkSpec& spec) { (void)trunk_output_shapes(spec); }

bool is_conv(const NetworkSpec& spec, std::size_t trunk_index) {
  return trunk_index < spec.trunk.size() && std::holds_alternative<ConvLayer>(spec.trunk[trunk_index]);
}

std::optional<std::size_t> first_conv_layer(const NetworkSpec& spec) {
  for (std::size_t i = 0; i < spec.trunk.size(); ++i)
    if (is_conv(spec, i)) return i;
  return std::nullopt;
}

std::vector<Head> heads(const NetworkSpec& spec) {
  if (spec.head_kind == HeadKind::SingleQ) return {Head::Q};
  return {Head::Value, Head::Advantage};
}

const std::vector<std::size_t>& head_hidden(const NetworkSpec& spec, Head head) {
  switch (head) {
    case Head::Q: return spec.q_hidden;
    case Head::Value: return spec.value_hidden;
    case Head::Advantage: return spec.advantage_hidden;
  }
  return spec.q_hidden;
}

std::size_t head_output_size(const NetworkSpec& spec, Head head) {
  return head == Head::Value ? 1 : spec.num_actions;
}

std::string trunk_path(std::size_t index) { return "trunk." + std::to_string(index); }

std::string head_path(Head head, std::size_t dense_index) {
  return std::string(head_name(head)) + "." + std::to_string(dense_index);
}

std::vector<std::pair<std::string, ParamShape>> parameter_layout(const NetworkSpec& spec) {
  const auto shapes = trunk_output_shapes(spec);
  std::vector<std::pair<std::string, ParamShape>> out;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    if (const auto* c = std::get_if<ConvLayer>(&spec.trunk[i])) {
      const std::size_t area = c->kernel * c->kernel;
      out.push_back({trunk_path(i),
                     {{c->out_channels, cur[0], c->kernel, c->kernel},
                      {c->out_channels},
                      cur[0] * area,
                      c->out_channels * area}});
    } else if (const auto* d = std::get_if<DenseLayer>(&spec.trunk[i])) {
      out.push_back({trunk_path(i), {{d->out_size, cur[0]}, {d->out_size}, cur[0], d->out_size}});
    }
    cur = shapes[i];
  }
  const std::size_t features = cur[0];
  for (Head h : heads(spec)) {
    std::size_t in = features;
    const auto& hidden = head_hidden(spec, h);
    for (std::size_t j = 0; j <= hidden.size(); ++j) {
      const std::size_t o = j < hidden.size() ? hidden[j] : head_output_size(spec, h);
      out.push_back({head_path(h, j), {{o, in}, {o}, in, o}});
      in = o;
    }
  }
  return out;
}

const LayerParams& Weights::at(const std::string& path) const {
  auto it = layers.find(path);
  if (it == layers.end()) throw IndexError("no parameters for layer " + path);
  return it->second;
}

LayerParams& Weights::at(const std::string& path) {
  auto it = layers.find(path);
  if (it == layers.end()) throw IndexError("no parameters for layer " + path);
  return it->second;
}

bool bitwise_equal(const Weights& a, const Weights& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (const auto& [path, p] : a.layers) {
    auto it = b.layers.find(path);
    if (it == b.layers.end()) return false;
    if (!bitwise_equal(p.weights, it->second.weights) || !bitwise_equal(p.bias, it->second.bias))
      return false;
  }
  return true;
}

void check_weights(const NetworkSpec& spec, const Weights& weights) {
  const auto layout = parameter_layout(spec);
  if (layout.size() != weights.layers.size())
    throw DimensionError("expected " + std::to_string(layout.size()) + " parameterized layers, got " +
                         std::to_string(weights.layers.size()));
  for (const auto& [path, shape] : layout) {
    auto it = weights.layers.find(path);
    if (it == weights.layers.end()) throw DimensionError("missing parameters for " + path);
    if (it->second.weights.shape() != shape.weights || it->second.bias.shape() != shape.bias)
      throw DimensionError("parameter shape mismatch for " + path);
  }
}

LayerParams initialize_layer(const ParamShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  LayerParams p{Tensor(shape.weights), Tensor(shape.bias)};
  const double w_bound = std::sqrt(6.0 / static_cast<double>(shape.fan_in + shape.fan_out));
  for (double& v : p.weights.data()) v = rng.uniform(-w_bound, w_bound);
  const double b_bound = 1.0 / std::sqrt(static_cast<double>(shape.fan_in));
  for (double& v : p.bias.data()) v = rng.uniform(-b_bound, b_bound);
  return p;
}

Weights initialize_weights(const NetworkSpec& spec, std::uint64_t seed) {
  Weights w;
  std::uint64_t stream = 0;
  for (const auto& [path, shape] : parameter_layout(spec))
    w.layers.emplace(path, initialize_layer(shape, mix_seed(seed, stream++)));
  return w;
}

Weights zero_weights(const NetworkSpec& spec) {
  Weights w;
  for (const auto& [path, shape] : parameter_layout(spec))
    w.layers.emplace(path, LayerParams{Tensor(shape.weights), Tensor(shape.bias)});
  return w;
}

std::vector<std::vector<std::string>> cascade_levels(const NetworkSpec& spec) {
  std::vector<std::vector<std::string>> levels;
  std::size_t head_depth = 0;
  for (Head h : heads(spec)) head_depth = std::max(head_depth, head_hidden(spec, h).size() + 1);
  for (std::size_t level = 0; level < head_depth; ++level) {
    std::vector<std::string> paths;
    for (Head h : heads(spec)) {
      const std::size_t depth = head_hidden(spec, h).size() + 1;
      if (level < depth) paths.push_back(head_path(h, depth - 1 - level));
    }
    levels.push_back(std::move(paths));
  }
  for (std::size_t i = spec.trunk.size(); i-- > 0;) {
    if (std::holds_alternative<ConvLayer>(spec.trunk[i]) || std::holds_alternative<DenseLayer>(spec.trunk[i]))
      levels.push_back({trunk_path(i)});
  }
  return levels;
}

std::size_t cascade_depth(const NetworkSpec& spec) { return cascade_levels(spec).size(); }

Weights randomize_top_layers(const NetworkSpec& spec, const Weights& weights, std::size_t k,
                             std::uint64_t seed) {
  check_weights(spec, weights);
  const auto levels = cascade_levels(spec);
  if (k > levels.size())
    throw IndexError("randomization depth " + std::to_string(k) + " exceeds " +
                     std::to_string(levels.size()) + " layers");
  std::map<std::string, ParamShape> shapes;
  for (auto& [path, shape] : parameter_layout(spec)) shapes.emplace(path, shape);

  Weights out = weights;
  std::uint64_t stream = 0;
  for (std::size_t level = 0; level < k; ++level)
    for (const auto& path : levels[level])
      out.layers.at(path) = initialize_layer(shapes.at(path), mix_seed(seed, stream++));
  return out;
}

ForwardResult forward(const NetworkSpec& spec, const Weights& weights, const Tensor& input) {
  if (input.shape() != spec.input_shape)
    throw DimensionError("network input shape " + to_string(input.shape()) + " != expected " +
                         to_string(spec.input_shape));
  ForwardResult r;
  Tensor x = input;
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    x = std::visit(
        overloaded{
            [&](const ConvLayer& c) {
              const auto& p = weights.at(trunk_path(i));
              return r.tape.trunk.conv(x, p.weights, p.bias, c.stride, c.padding);
            },
            [&](const ReluLayer&) { return r.tape.trunk.relu(x); },
            [&](const FlattenLayer&) { return r.tape.trunk.flatten(x); },
            [&](const DenseLayer&) {
              const auto& p = weights.at(trunk_path(i));
              return r.tape.trunk.dense(x, p.weights, p.bias);
            },
        },
        spec.trunk[i]);
  }
  if (x.rank() != 1) throw DimensionError("trunk must end in a flat feature vector");

  std::map<Head, Tensor> outputs;
  for (Head h : heads(spec)) {
    ExecutionTape& tape = r.tape.heads[h];
    Tensor y = x;
    const auto& hidden = head_hidden(spec, h);
    for (std::size_t j = 0; j <= hidden.size(); ++j) {
      const auto& p = weights.at(head_path(h, j));
      y = tape.dense(y, p.weights, p.bias);
      if (j < hidden.size()) y = tape.relu(y);
    }
    outputs[h] = std::move(y);
  }

  if (spec.head_kind == HeadKind::SingleQ) {
    r.q = std::move(outputs[Head::Q]);
  } else {
    const Tensor& a = outputs[Head::Advantage];
    const double v = outputs[Head::Value][0];
    double mean = 0.0;
    for (double ai : a.data()) mean += ai;
    mean /= static_cast<double>(a.size());
    r.q = Tensor(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) r.q[i] = v + (a[i] - mean);
    r.value = v;
    r.advantages = a;
  }
  return r;
}

std::string to_string(const TargetSelector& target) {
  using K = TargetSelector::Kind;
  switch (target.kind) {
    case K::ActionQ: return "action:" + std::to_string(target.action);
    case K::MaxQ: return "maxq";
    case K::Value: return "value";
    case K::AdvantageOf: return "adv:" + std::to_string(target.action);
    case K::AdvantageMax: return "advmax";
  }
  return "?";
}

std::optional<TargetSelector> parse_target(const std::string& text) {
  auto parse_index = [](const std::string& s) -> std::optional<std::size_t> {
    if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), ::isdigit)) return std::nullopt;
    return static_cast<std::size_t>(std::stoul(s));
  };
  if (text == "maxq") return TargetSelector::max_q();
  if (text == "value") return TargetSelector::value();
  if (text == "advmax") return TargetSelector::advantage_max();
  if (text.rfind("action:", 0) == 0)
    if (auto a = parse_index(text.substr(7))) return TargetSelector::action_q(*a);
  if (text.rfind("adv:", 0) == 0)
    if (auto a = parse_index(text.substr(4))) return TargetSelector::advantage_of(*a);
  return std::nullopt;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {
Tensor one_hot(std::size_t n, std::size_t i) {
  Tensor t({n});
  t[i] = 1.0;
  return t;
}

void check_target(const NetworkSpec& spec, const TargetSelector& target) {
  using K = TargetSelector::Kind;
  const bool stream = target.kind == K::Value || target.kind == K::AdvantageOf || target.kind == K::AdvantageMax;
  if (stream && spec.head_kind != HeadKind::Dueling)
    throw UnsupportedTargetError("target " + to_string(target) + " needs a dueling network");
  if ((target.kind == K::ActionQ || target.kind == K::AdvantageOf) && target.action >= spec.num_actions)
    throw UnsupportedTargetError("target action " + std::to_string(target.action) + " out of range");
}
}  // namespace

OutputSeeds seed_gradient(const NetworkSpec& spec, const TargetSelector& target,
                          const ForwardResult& outputs) {
  using K = TargetSelector::Kind;
  check_target(spec, target);
  const std::size_t n = spec.num_actions;
  if (outputs.q.shape() != Shape{n}) throw DimensionError("q output does not match network spec");
  const bool dueling = spec.head_kind == HeadKind::Dueling;
  if (dueling && (!outputs.value || !outputs.advantages))
    throw DimensionError("dueling network outputs are missing the value/advantage streams");

  OutputSeeds s;
  s.q = Tensor({n});
  if (dueling) {
    s.value = Tensor({1});
    s.advantages = Tensor({n});
  }
  switch (target.kind) {
    case K::ActionQ: s.q = one_hot(n, target.action); break;
    case K::MaxQ: s.q = one_hot(n, argmax(outputs.q.data())); break;
    case K::Value: s.value[0] = 1.0; break;
    case K::AdvantageOf: s.advantages = one_hot(n, target.action); break;
    case K::AdvantageMax: s.advantages = one_hot(n, argmax(outputs.advantages->data())); break;
  }
  return s;
}

double target_scalar(const NetworkSpec& spec, const TargetSelector& target, const ForwardResult& outputs) {
  using K = TargetSelector::Kind;
  check_target(spec, target);
  switch (target.kind) {
    case K::ActionQ: return outputs.q[target.action];
    case K::MaxQ: return outputs.q[argmax(outputs.q.data())];
    case K::Value: return *outputs.value;
    case K::AdvantageOf: return (*outputs.advantages)[target.action];
    case K::AdvantageMax: return (*outputs.advantages)[argmax(outputs.advantages->data())];
  }
  return 0.0;
}

NetworkBackward backward(const NetworkSpec& spec, const ForwardResult& outputs, const OutputSeeds& seeds,
                         const BackwardOptions& options) {
  // Per-head output gradients, with the dueling aggregation folded in:
  // dq/dV = 1, dq_i/dA_j = [i == j] - 1/n.
  std::map<Head, Tensor> head_seeds;
  if (spec.head_kind == HeadKind::SingleQ) {
    head_seeds[Head::Q] = seeds.q;
  } else {
    const std::size_t n = spec.num_actions;
    double q_sum = 0.0;
    for (double g : seeds.q.data()) q_sum += g;
    Tensor v = seeds.value;
    v[0] += q_sum;
    Tensor a = seeds.advantages;
    const double mean = q_sum / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) a[i] += seeds.q[i] - mean;
    head_seeds[Head::Value] = std::move(v);
    head_seeds[Head::Advantage] = std::move(a);
  }

  NetworkBackward nb;
  BackwardOptions head_options = options;
  head_options.stop_at_layer.reset();
  head_options.input_grad = true;

  Tensor feature_grad;
  for (Head h : heads(spec)) {
    auto res = backward_to_input(outputs.tape.heads.at(h), head_seeds.at(h), head_options);
    if (feature_grad.empty()) {
      feature_grad = res.gradient;
    } else {
      for (std::size_t i = 0; i < feature_grad.size(); ++i) feature_grad[i] += res.gradient[i];
    }
    nb.heads.emplace(h, std::move(res));
  }

  if (outputs.tape.trunk.empty()) {
    if (options.stop_at_layer) throw IndexError("network has no trunk layers");
    nb.trunk.gradient = std::move(feature_grad);
    return nb;
  }
  nb.trunk = backward_to_input(outputs.tape.trunk, feature_grad, options);
  return nb;
}

Weights collect_param_grads(const NetworkSpec& spec, const NetworkBackward& grads) {
  Weights w;
  auto take = [&](const std::string& path, const BackwardResult& res, std::size_t index) {
    if (index >= res.params.size() || !res.params[index])
      throw IndexError("missing parameter gradient for " + path);
    w.layers.emplace(path, LayerParams{res.params[index]->weights, res.params[index]->bias});
  };
  for (std::size_t i = 0; i < spec.trunk.size(); ++i)
    if (std::holds_alternative<ConvLayer>(spec.trunk[i]) || std::holds_alternative<DenseLayer>(spec.trunk[i]))
      take(trunk_path(i), grads.trunk, i);
  for (Head h : heads(spec)) {
    const auto& res = grads.heads.at(h);
    const std::size_t hidden = head_hidden(spec, h).size();
    // Head tapes alternate dense, relu; dense j sits at record 2j.
    for (std::size_t j = 0; j <= hidden; ++j) take(head_path(h, j), res, 2 * j);
  }
  return w;
}

Tensor input_gradient(const NetworkSpec& spec, const Weights& weights, const Tensor& input,
                      const TargetSelector& target, ReluRule rule) {
  const ForwardResult fr = forward(spec, weights, input);
  BackwardOptions options;
  options.rule = rule;
  return backward(spec, fr, seed_gradient(spec, target, fr), options).trunk.gradient;
}

NetworkSpec reference_network_spec(std::size_t frames, std::size_t height, std::size_t width,
                                   std::size_t num_actions) {
  NetworkSpec spec;
  spec.input_shape = {frames, height, width};
  spec.trunk = {ConvLayer{8, 4, 2, 1}, ReluLayer{},  ConvLayer{16, 3, 2, 1}, ReluLayer{},
                ConvLayer{8, 3, 1, 1}, ReluLayer{},  FlattenLayer{}};
  spec.head_kind = HeadKind::Dueling;
  spec.num_actions = num_actions;
  spec.value_hidden = {32};
  spec.advantage_hidden = {32};
  validate(spec);
  return spec;
}

}  // namespace rlsal
