#include "rlsal/layers.hpp"

#include <string>

#include "rlsal/errors.hpp"

namespace rlsal {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

namespace {

struct ConvDims {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t out_h, out_w;
  std::size_t stride, padding;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                   std::size_t stride, std::size_t padding) {
  if (input.rank() != 3) throw DimensionError("conv2d input must be C×H×W, got " + to_string(input.shape()));
  if (kernels.rank() != 4)
    throw DimensionError("conv2d kernels must be O×C×Kh×Kw, got " + to_string(kernels.shape()));
  if (kernels.dim(1) != input.dim(0))
    throw DimensionError("conv2d kernel channels " + std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(input.dim(0)));
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0))
    throw DimensionError("conv2d bias must have one entry per output channel");
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(2),
             kernels.dim(3), 0, 0, stride, padding};
  if (d.in_h + 2 * padding < d.k_h || d.in_w + 2 * padding < d.k_w)
    throw DimensionError("conv2d kernel larger than padded input");
  d.out_h = (d.in_h + 2 * padding - d.k_h) / stride + 1;
  d.out_w = (d.in_w + 2 * padding - d.k_w) / stride + 1;
  return d;
}

// Unrolled receptive fields: row r = (c, ky, kx), column p = output pixel.
std::vector<double> im2col(const Tensor& input, const ConvDims& d) {
  const std::size_t cols = d.out_h * d.out_w;
  std::vector<double> col(d.in_c * d.k_h * d.k_w * cols, 0.0);
  std::size_t r = 0;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    for (std::size_t ky = 0; ky < d.k_h; ++ky) {
      for (std::size_t kx = 0; kx < d.k_w; ++kx, ++r) {
        double* row = col.data() + r * cols;
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.padding);
          if (iy < 0 || iy >= static_cast<long>(d.in_h)) continue;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.padding);
            if (ix < 0 || ix >= static_cast<long>(d.in_w)) continue;
            row[oy * d.out_w + ox] = input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, Tensor& input_grad) {
  const std::size_t cols = d.out_h * d.out_w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    for (std::size_t ky = 0; ky < d.k_h; ++ky) {
      for (std::size_t kx = 0; kx < d.k_w; ++kx, ++r) {
        const double* row = col.data() + r * cols;
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.padding);
          if (iy < 0 || iy >= static_cast<long>(d.in_h)) continue;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.padding);
            if (ix < 0 || ix >= static_cast<long>(d.in_w)) continue;
            input_grad.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += row[oy * d.out_w + ox];
          }
        }
      }
    }
  }
}

// Output coordinate reached from input coordinate `in` through kernel tap
// `k`, or -1 when it falls between strides or outside the output.
inline long out_index(std::size_t in, std::size_t k, const ConvDims& d, std::size_t out_extent) {
  const long shifted = static_cast<long>(in + d.padding) - static_cast<long>(k);
  if (shifted < 0 || shifted % static_cast<long>(d.stride) != 0) return -1;
  const long o = shifted / static_cast<long>(d.stride);
  return o < static_cast<long>(out_extent) ? o : -1;
}

// Inputs with at most this fraction of nonzeros take the scatter path
// (game frames are almost entirely background).
constexpr double kSparseDensity = 0.1;

bool is_sparse(const Tensor& t) {
  std::size_t nnz = 0;
  for (double v : t.data()) nnz += v != 0.0;
  return static_cast<double>(nnz) <= kSparseDensity * static_cast<double>(t.size());
}

// Visit every (input pixel, kernel tap, output pixel) triple whose input
// value is nonzero.
template <class F>
void for_each_nonzero_tap(const Tensor& input, const ConvDims& d, F&& f) {
  for (std::size_t c = 0; c < d.in_c; ++c)
    for (std::size_t iy = 0; iy < d.in_h; ++iy)
      for (std::size_t ix = 0; ix < d.in_w; ++ix) {
        const double v = input.at(c, iy, ix);
        if (v == 0.0) continue;
        for (std::size_t ky = 0; ky < d.k_h; ++ky) {
          const long oy = out_index(iy, ky, d, d.out_h);
          if (oy < 0) continue;
          for (std::size_t kx = 0; kx < d.k_w; ++kx) {
            const long ox = out_index(ix, kx, d, d.out_w);
            if (ox < 0) continue;
            f(v, (c * d.k_h + ky) * d.k_w + kx, static_cast<std::size_t>(oy) * d.out_w + static_cast<std::size_t>(ox));
          }
        }
      }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      std::size_t stride, std::size_t padding) {
  const ConvDims d = conv_dims(input, kernels, bias, stride, padding);
  const std::size_t cols = d.out_h * d.out_w;
  const std::size_t rows = d.in_c * d.k_h * d.k_w;
  Tensor out({d.out_c, d.out_h, d.out_w});
  auto o_data = out.data();
  const auto k_data = kernels.data();
  if (is_sparse(input)) {
    for (std::size_t o = 0; o < d.out_c; ++o)
      for (std::size_t p = 0; p < cols; ++p) o_data[o * cols + p] = bias[o];
    for_each_nonzero_tap(input, d, [&](double v, std::size_t r, std::size_t p) {
      for (std::size_t o = 0; o < d.out_c; ++o) o_data[o * cols + p] += k_data[o * rows + r] * v;
    });
    return out;
  }
  const std::vector<double> col = im2col(input, d);
  for (std::size_t o = 0; o < d.out_c; ++o) {
    double* dst = o_data.data() + o * cols;
    for (std::size_t p = 0; p < cols; ++p) dst[p] = bias[o];
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = k_data[o * rows + r];
      const double* src = col.data() + r * cols;
      for (std::size_t p = 0; p < cols; ++p) dst[p] += w * src[p];
    }
  }
  return out;
}

LayerGrads conv2d_backward(const LayerRecord& record, const Tensor& upstream, bool want_input,
                           bool want_params) {
  if (record.kind != LayerKind::Conv || !record.weights || !record.bias)
    throw LayerKindError("conv2d_backward on a non-conv record");
  const Tensor& input = record.input;
  const Tensor& kernels = *record.weights;
  const ConvDims d = conv_dims(input, kernels, *record.bias, record.stride, record.padding);
  if (upstream.shape() != Shape{d.out_c, d.out_h, d.out_w})
    throw DimensionError("conv2d_backward upstream shape " + to_string(upstream.shape()) +
                         " != output shape " + to_string(Shape{d.out_c, d.out_h, d.out_w}));

  const std::size_t cols = d.out_h * d.out_w;
  const std::size_t rows = d.in_c * d.k_h * d.k_w;
  const auto up = upstream.data();
  const auto k_data = kernels.data();
  LayerGrads g;

  if (want_params) {
    g.params.weights = Tensor(kernels.shape());
    g.params.bias = Tensor(record.bias->shape());
    auto gw = g.params.weights.data();
    for (std::size_t o = 0; o < d.out_c; ++o) {
      double sb = 0.0;
      for (std::size_t p = 0; p < cols; ++p) sb += up[o * cols + p];
      g.params.bias[o] = sb;
    }
  }
  if (want_params && is_sparse(input)) {
    auto gw = g.params.weights.data();
    for_each_nonzero_tap(input, d, [&](double v, std::size_t r, std::size_t p) {
      for (std::size_t o = 0; o < d.out_c; ++o) gw[o * rows + r] += up[o * cols + p] * v;
    });
  } else if (want_params) {
    const std::vector<double> col = im2col(input, d);
    auto gw = g.params.weights.data();
    for (std::size_t o = 0; o < d.out_c; ++o) {
      const double* go = up.data() + o * cols;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = col.data() + r * cols;
        double s = 0.0;
        for (std::size_t p = 0; p < cols; ++p) s += go[p] * src[p];
        gw[o * rows + r] = s;
      }
    }
  }

  if (want_input) {
    std::vector<double> grad_col(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double* dst = grad_col.data() + r * cols;
      for (std::size_t o = 0; o < d.out_c; ++o) {
        const double w = k_data[o * rows + r];
        const double* go = up.data() + o * cols;
        for (std::size_t p = 0; p < cols; ++p) dst[p] += w * go[p];
      }
    }
    g.input = Tensor(input.shape());
    col2im_add(grad_col, d, g.input);
  }
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 1) throw DimensionError("dense input must be 1-D, got " + to_string(input.shape()));
  if (weights.rank() != 2 || weights.dim(1) != input.dim(0))
    throw DimensionError("dense weights " + to_string(weights.shape()) + " do not accept input of length " +
                         std::to_string(input.dim(0)));
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
    throw DimensionError("dense bias must have one entry per output");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  Tensor out({m});
  const auto w = weights.data();
  const auto x = input.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
    out[i] = s + bias[i];
  }
  return out;
}

LayerGrads dense_backward(const LayerRecord& record, const Tensor& upstream, bool want_input,
                          bool want_params) {
  if (record.kind != LayerKind::Dense || !record.weights || !record.bias)
    throw LayerKindError("dense_backward on a non-dense record");
  const Tensor& weights = *record.weights;
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (upstream.shape() != Shape{m})
    throw DimensionError("dense_backward upstream shape " + to_string(upstream.shape()) +
                         " != output shape " + std::to_string(m));
  if (record.input.shape() != Shape{n}) throw DimensionError("dense_backward record input shape mismatch");
  const auto w = weights.data();
  const auto x = record.input.data();
  LayerGrads g;
  if (want_input) {
    g.input = Tensor({n});
    auto gi = g.input.data();
    for (std::size_t i = 0; i < m; ++i) {
      const double u = upstream[i];
      if (u == 0.0) continue;
      const double* row = w.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) gi[j] += row[j] * u;
    }
  }
  if (want_params) {
    g.params.weights = Tensor({m, n});
    g.params.bias = upstream;
    auto gw = g.params.weights.data();
    for (std::size_t i = 0; i < m; ++i) {
      const double u = upstream[i];
      if (u == 0.0) continue;
      double* row = gw.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] = u * x[j];
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const LayerRecord& record, const Tensor& upstream, ReluRule rule) {
  require_same_shape(record.input, upstream, "relu_backward");
  Tensor out(upstream.shape());
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const double g = upstream[i];
    const bool open = record.input[i] > 0.0 && (rule == ReluRule::Vanilla || g > 0.0);
    out[i] = open ? g : 0.0;
  }
  return out;
}

Tensor ExecutionTape::conv(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                           std::size_t stride, std::size_t padding) {
  LayerRecord r;
  r.kind = LayerKind::Conv;
  r.output = conv2d_forward(input, kernels, bias, stride, padding);
  r.input = input;
  r.weights = &kernels;
  r.bias = &bias;
  r.stride = stride;
  r.padding = padding;
  records_.push_back(std::move(r));
  return records_.back().output;
}

Tensor ExecutionTape::dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  LayerRecord r;
  r.kind = LayerKind::Dense;
  r.output = dense_forward(input, weights, bias);
  r.input = input;
  r.weights = &weights;
  r.bias = &bias;
  records_.push_back(std::move(r));
  return records_.back().output;
}

Tensor ExecutionTape::relu(const Tensor& input) {
  LayerRecord r;
  r.kind = LayerKind::Relu;
  r.output = relu_forward(input);
  r.input = input;
  records_.push_back(std::move(r));
  return records_.back().output;
}

Tensor ExecutionTape::flatten(const Tensor& input) {
  LayerRecord r;
  r.kind = LayerKind::Flatten;
  r.output = input.reshaped({input.size()});
  r.input = input;
  records_.push_back(std::move(r));
  return records_.back().output;
}

BackwardResult backward_to_input(const ExecutionTape& tape, const Tensor& seed,
                                 const BackwardOptions& options) {
  const std::size_t n = tape.size();
  if (n == 0) throw IndexError("backward over an empty tape");
  if (options.stop_at_layer && *options.stop_at_layer >= n)
    throw IndexError("stop_at_layer " + std::to_string(*options.stop_at_layer) +
                     " out of range for tape of " + std::to_string(n) + " layers");
  require_same_shape(tape[n - 1].output, seed, "backward seed");

  BackwardResult result;
  result.grad_at_output.resize(n);
  result.grad_at_input.resize(n);
  if (options.param_grads) result.params.resize(n);

  const std::size_t lowest = options.stop_at_layer ? *options.stop_at_layer + 1 : 0;
  Tensor grad = seed;
  for (std::size_t i = n; i-- > lowest;) {
    const LayerRecord& rec = tape[i];
    result.grad_at_output[i] = grad;
    const bool want_input = options.input_grad || i > 0;
    switch (rec.kind) {
      case LayerKind::Conv: {
        LayerGrads g = conv2d_backward(rec, grad, want_input, options.param_grads);
        if (options.param_grads) result.params[i] = std::move(g.params);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::Dense: {
        LayerGrads g = dense_backward(rec, grad, want_input, options.param_grads);
        if (options.param_grads) result.params[i] = std::move(g.params);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::Relu:
        grad = relu_backward(rec, grad, options.rule);
        break;
      case LayerKind::Flatten:
        grad = std::move(grad).reshaped(rec.input.shape());
        break;
    }
    result.grad_at_input[i] = grad;
  }
  if (options.stop_at_layer) result.grad_at_output[*options.stop_at_layer] = grad;
  result.gradient = std::move(grad);
  return result;
}

}  // namespace rlsal
