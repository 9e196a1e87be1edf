#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "rlsal/catch_env.hpp"
#include "rlsal/network.hpp"
#include "rlsal/saliency.hpp"
#include "rlsal/tensor.hpp"

namespace rlsal {

// Discrete Laplace-operator masks. L2 keeps its asymmetric corners and so
// sums to 2; the other three sum to 0.
enum class LaplacianMask { L1, L2, L3, L4 };
using Mask3 = std::array<std::array<int, 3>, 3>;

inline constexpr LaplacianMask kAllMasks[] = {LaplacianMask::L1, LaplacianMask::L2, LaplacianMask::L3,
                                              LaplacianMask::L4};

const Mask3& mask_entries(LaplacianMask mask);
const char* mask_name(LaplacianMask mask);

// 3×3 correlation, same-size output. Border pixels repeat the nearest edge
// pixel, so any zero-sum mask maps a constant frame to exactly zero.
Tensor laplacian_edge(const Tensor& frame, LaplacianMask mask);

// A correlation is undefined when either input is constant.
struct Similarity {
  double value = 0.0;
  bool defined = false;
};

// Statistics over absolute values; symmetric in their arguments.
Similarity pearson_abs(const Tensor& a, const Tensor& b);
Similarity spearman_abs(const Tensor& a, const Tensor& b);  // ties get average ranks

struct SimilarityReport {
  std::string method;
  std::size_t k = 0;  // number of randomized cascade levels
  Similarity pearson_abs;
  Similarity spearman;
};

// One entry per cascade depth k = 0..cascade_depth(spec), each comparing the
// map under randomize_top_layers(k) with the k = 0 map.
std::vector<SimilarityReport> cascading_randomization_suite(const NetworkSpec& spec, const Weights& weights,
                                                            const Tensor& stack, const SaliencyRequest& request,
                                                            std::uint64_t rng_seed);

// Columns: method, k, pearson_abs, spearman, flags.
void write_similarity_tsv(std::ostream& os, const std::vector<SimilarityReport>& reports);

struct EdgeSimilarity {
  LaplacianMask mask = LaplacianMask::L1;
  Similarity pearson_abs;
};

std::vector<EdgeSimilarity> edge_detector_similarity(const Tensor& map, const Tensor& frame);

// Mean signed value on each Chebyshev ring around (cy, cx), d = 0..radius.
// Rings with no in-frame pixels report 0 with count 0.
struct RingProfile {
  std::vector<double> mean;
  std::vector<std::size_t> count;
};

RingProfile ring_profile(const Tensor& map, std::size_t cy, std::size_t cx, std::size_t radius);

// Fraction of |map| mass inside the (2·half+1)² windows centred on the ball
// and on the paddle centre (union of both). A zero map scores 0.
double feature_mass_fraction(const Tensor& map, const catch_env::State& state, std::size_t half = 2);

struct Observation {
  catch_env::State state;
  Tensor stack;
};

// Non-terminal states visited by the optimal policy over consecutive
// episodes seeded from `seed`.
std::vector<Observation> rollout_observations(std::size_t count, std::uint64_t seed,
                                              const catch_env::Config& env = {});

// Mean feature_mass_fraction of the requested map over the observations.
double feature_concentration(const NetworkSpec& spec, const Weights& weights,
                             const std::vector<Observation>& observations, const SaliencyRequest& request);

}  // namespace rlsal
