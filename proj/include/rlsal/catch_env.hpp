#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>

#include "rlsal/tensor.hpp"

namespace rlsal {

// Catch: a ball drops one row per step from a random column on row 0; a
// paddle on the bottom row moves left, stays or moves right. The episode
// ends when the ball reaches the bottom row.
namespace catch_env {

inline constexpr std::size_t kNumActions = 3;
inline constexpr std::size_t kLeft = 0;
inline constexpr std::size_t kStay = 1;
inline constexpr std::size_t kRight = 2;

inline constexpr double kBallIntensity = 1.0;
inline constexpr double kPaddleIntensity = 0.6;

struct Config {
  std::size_t grid_w = 24;
  std::size_t grid_h = 24;
  std::size_t paddle_w = 3;
  bool operator==(const Config&) const = default;
};

struct State {
  Config config;
  std::size_t ball_x = 0;
  std::size_t ball_y = 0;
  std::size_t paddle_x = 0;  // leftmost paddle column
  std::size_t step_count = 0;
  std::uint64_t seed = 0;

  std::size_t paddle_center() const { return paddle_x + config.paddle_w / 2; }
  bool done() const { return ball_y + 1 == config.grid_h; }
  bool operator==(const State&) const = default;
};

// Last four frames, oldest first. Frames are shared between consecutive
// stacks so a replay buffer stores each frame once.
class FrameStack {
 public:
  static constexpr std::size_t kDepth = 4;

  FrameStack() = default;
  explicit FrameStack(const Tensor& initial);

  FrameStack pushed(Tensor frame) const;

  const Tensor& frame(std::size_t i) const { return *frames_[i]; }
  const Tensor& newest() const { return *frames_[kDepth - 1]; }

  // kDepth×H×W network input, oldest frame in channel 0.
  Tensor stacked() const;

  bool operator==(const FrameStack& other) const;

 private:
  std::array<std::shared_ptr<const Tensor>, kDepth> frames_;
};

struct Transition {
  FrameStack state;
  std::size_t action = kStay;
  double reward = 0.0;
  FrameStack next_state;
  bool done = false;
};

struct ResetResult {
  State state;
  FrameStack frames;
};

ResetResult reset(std::uint64_t seed, const Config& config = {});

struct StepResult {
  State state;
  Tensor frame;
  double reward = 0.0;
  bool done = false;
};

// Throws EpisodeFinishedError after the terminal step and IndexError for an
// action outside {0,1,2}.
StepResult step(const State& state, std::size_t action);

// H×W frame: background 0, paddle 0.6, ball 1.0 (the ball is drawn last).
Tensor render_frame(const State& state);

// Moves the paddle centre toward the ball column; catches every ball.
std::size_t optimal_action(const State& state);

}  // namespace catch_env
}  // namespace rlsal
