#include "rlsal/sanity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlsal/errors.hpp"
#include "rlsal/random.hpp"
#include "rlsal/weights_io.hpp"

namespace rlsal {

namespace {
constexpr Mask3 kL1{{{0, -1, 0}, {-1, 4, -1}, {0, -1, 0}}};
constexpr Mask3 kL2{{{0, -1, -1}, {-1, 8, -1}, {-1, -1, 0}}};
constexpr Mask3 kL3{{{1, -2, 1}, {-2, 4, -2}, {1, -2, 1}}};
constexpr Mask3 kL4{{{-1, -2, -1}, {-2, 12, -2}, {-1, -2, -1}}};
}  // namespace

const Mask3& mask_entries(LaplacianMask mask) {
  switch (mask) {
    case LaplacianMask::L1: return kL1;
    case LaplacianMask::L2: return kL2;
    case LaplacianMask::L3: return kL3;
    case LaplacianMask::L4: return kL4;
  }
  return kL1;
}

const char* mask_name(LaplacianMask mask) {
  switch (mask) {
    case LaplacianMask::L1: return "L1";
    case LaplacianMask::L2: return "L2";
    case LaplacianMask::L3: return "L3";
    case LaplacianMask::L4: return "L4";
  }
  return "?";
}

Tensor laplacian_edge(const Tensor& frame, LaplacianMask mask) {
  if (frame.rank() != 2) throw DimensionError("laplacian_edge needs an H×W frame");
  const Mask3& m = mask_entries(mask);
  const long h = static_cast<long>(frame.dim(0)), w = static_cast<long>(frame.dim(1));
  double mask_sum = 0.0;
  for (const auto& row : m)
    for (double v : row) mask_sum += v;
  Tensor out(frame.shape());
  // Accumulated relative to the centre pixel so flat regions cancel exactly
  // for zero-sum masks.
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const double c = frame.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      double s = 0.0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const auto sy = static_cast<std::size_t>(std::clamp(y + dy, 0L, h - 1));
          const auto sx = static_cast<std::size_t>(std::clamp(x + dx, 0L, w - 1));
          s += m[static_cast<std::size_t>(dy + 1)][static_cast<std::size_t>(dx + 1)] * (frame.at(sy, sx) - c);
        }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s + mask_sum * c;
    }
  return out;
}

namespace {

Similarity pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {std::nan(""), false};
  // sqrt of the product (not a product of sqrts) so identical inputs give exactly 1.
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), true};
}

std::vector<double> absolute(const Tensor& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = std::fabs(t[i]);
  return v;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

void check_pair(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "similarity");
  if (a.empty()) throw DimensionError("similarity of empty maps");
}

}  // namespace

Similarity pearson_abs(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  return pearson(absolute(a), absolute(b));
}

Similarity spearman_abs(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  return pearson(ranks(absolute(a)), ranks(absolute(b)));
}

std::vector<SimilarityReport> cascading_randomization_suite(const NetworkSpec& spec, const Weights& weights,
                                                            const Tensor& stack, const SaliencyRequest& request,
                                                            std::uint64_t rng_seed) {
  if (request.method == Method::Perturbation)
    throw std::invalid_argument("cascading randomization runs on the gradient-based methods only");
  const Tensor reference = compute_saliency(spec, weights, stack, request).values;
  std::vector<SimilarityReport> out;
  const std::size_t depth = cascade_depth(spec);
  for (std::size_t k = 0; k <= depth; ++k) {
    const Tensor map = k == 0 ? reference
                              : compute_saliency(spec, randomize_top_layers(spec, weights, k, rng_seed), stack,
                                                 request)
                                    .values;
    out.push_back({method_name(request.method), k, pearson_abs(reference, map), spearman_abs(reference, map)});
  }
  return out;
}

void write_similarity_tsv(std::ostream& os, const std::vector<SimilarityReport>& reports) {
  auto cell = [](const Similarity& s) { return s.defined ? format_double(s.value) : std::string("nan"); };
  os << "method\tk\tpearson_abs\tspearman\tflags\n";
  for (const auto& r : reports) {
    const bool ok = r.pearson_abs.defined && r.spearman.defined;
    os << r.method << '\t' << r.k << '\t' << cell(r.pearson_abs) << '\t' << cell(r.spearman) << '\t'
       << (ok ? "ok" : "undefined") << '\n';
  }
}

std::vector<EdgeSimilarity> edge_detector_similarity(const Tensor& map, const Tensor& frame) {
  require_same_shape(map, frame, "edge_detector_similarity");
  std::vector<EdgeSimilarity> out;
  for (LaplacianMask m : kAllMasks) out.push_back({m, pearson_abs(map, laplacian_edge(frame, m))});
  return out;
}

RingProfile ring_profile(const Tensor& map, std::size_t cy, std::size_t cx, std::size_t radius) {
  if (map.rank() != 2) throw DimensionError("ring_profile needs an H×W map");
  if (cy >= map.dim(0) || cx >= map.dim(1)) throw IndexError("ring centre outside the map");
  RingProfile p;
  p.mean.assign(radius + 1, 0.0);
  p.count.assign(radius + 1, 0);
  for (std::size_t y = 0; y < map.dim(0); ++y)
    for (std::size_t x = 0; x < map.dim(1); ++x) {
      const std::size_t d = std::max(y > cy ? y - cy : cy - y, x > cx ? x - cx : cx - x);
      if (d > radius) continue;
      p.mean[d] += map.at(y, x);
      ++p.count[d];
    }
  for (std::size_t d = 0; d <= radius; ++d)
    if (p.count[d] > 0) p.mean[d] /= static_cast<double>(p.count[d]);
  return p;
}

double feature_mass_fraction(const Tensor& map, const catch_env::State& state, std::size_t half) {
  const catch_env::Config& c = state.config;
  if (map.shape() != Shape{c.grid_h, c.grid_w}) throw DimensionError("feature map does not match the grid");
  auto inside = [half](std::size_t p, std::size_t centre) { return (p > centre ? p - centre : centre - p) <= half; };
  const std::size_t paddle_y = c.grid_h - 1, paddle_x = state.paddle_center();
  double total = 0.0, in = 0.0;
  for (std::size_t y = 0; y < c.grid_h; ++y)
    for (std::size_t x = 0; x < c.grid_w; ++x) {
      const double v = std::fabs(map.at(y, x));
      total += v;
      if ((inside(y, state.ball_y) && inside(x, state.ball_x)) || (inside(y, paddle_y) && inside(x, paddle_x)))
        in += v;
    }
  return total > 0.0 ? in / total : 0.0;
}

std::vector<Observation> rollout_observations(std::size_t count, std::uint64_t seed, const catch_env::Config& env) {
  std::vector<Observation> out;
  out.reserve(count);
  Rng rng(seed);
  while (out.size() < count) {
    auto ep = catch_env::reset(rng.next(), env);
    while (out.size() < count) {
      out.push_back({ep.state, ep.frames.stacked()});
      auto sr = catch_env::step(ep.state, catch_env::optimal_action(ep.state));
      if (sr.done) break;
      ep = {sr.state, ep.frames.pushed(std::move(sr.frame))};
    }
  }
  return out;
}

double feature_concentration(const NetworkSpec& spec, const Weights& weights,
                             const std::vector<Observation>& observations, const SaliencyRequest& request) {
  if (observations.empty()) throw std::invalid_argument("feature_concentration needs observations");
  double sum = 0.0;
  for (const auto& o : observations)
    sum += feature_mass_fraction(compute_saliency(spec, weights, o.stack, request).values, o.state);
  return sum / static_cast<double>(observations.size());
}

}  // namespace rlsal
