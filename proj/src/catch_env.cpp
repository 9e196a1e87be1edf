#include "rlsal/catch_env.hpp"

#include <string>

#include "rlsal/errors.hpp"
#include "rlsal/random.hpp"

namespace rlsal::catch_env {

FrameStack::FrameStack(const Tensor& initial) {
  auto shared = std::make_shared<const Tensor>(initial);
  frames_.fill(shared);
}

FrameStack FrameStack::pushed(Tensor frame) const {
  if (!frames_[0]) throw DimensionError("push onto an uninitialized frame stack");
  if (frame.shape() != frames_[0]->shape()) throw DimensionError("frame shape changed within a stack");
  FrameStack next;
  for (std::size_t i = 0; i + 1 < kDepth; ++i) next.frames_[i] = frames_[i + 1];
  next.frames_[kDepth - 1] = std::make_shared<const Tensor>(std::move(frame));
  return next;
}

Tensor FrameStack::stacked() const {
  if (!frames_[0]) throw DimensionError("empty frame stack");
  const Shape& fs = frames_[0]->shape();
  Tensor out({kDepth, fs[0], fs[1]});
  const std::size_t plane = fs[0] * fs[1];
  auto dst = out.data();
  for (std::size_t i = 0; i < kDepth; ++i) {
    auto src = frames_[i]->data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

bool FrameStack::operator==(const FrameStack& other) const {
  for (std::size_t i = 0; i < kDepth; ++i) {
    if (!frames_[i] || !other.frames_[i]) {
      if (frames_[i] != other.frames_[i]) return false;
      continue;
    }
    if (!(*frames_[i] == *other.frames_[i])) return false;
  }
  return true;
}

ResetResult reset(std::uint64_t seed, const Config& config) {
  if (config.grid_w < config.paddle_w || config.grid_h < 2 || config.paddle_w == 0)
    throw DimensionError("catch grid too small for the paddle");
  Rng rng(seed);
  State s;
  s.config = config;
  s.seed = seed;
  s.ball_x = static_cast<std::size_t>(rng.below(config.grid_w));
  s.ball_y = 0;
  s.paddle_x = (config.grid_w - config.paddle_w) / 2;
  s.step_count = 0;
  return {s, FrameStack(render_frame(s))};
}

StepResult step(const State& state, std::size_t action) {
  if (state.done()) throw EpisodeFinishedError("step() called on a finished catch episode");
  if (action >= kNumActions) throw IndexError("catch action " + std::to_string(action) + " out of range");
  State next = state;
  const std::size_t max_x = state.config.grid_w - state.config.paddle_w;
  if (action == kLeft && next.paddle_x > 0) --next.paddle_x;
  if (action == kRight && next.paddle_x < max_x) ++next.paddle_x;
  ++next.ball_y;
  ++next.step_count;

  StepResult r;
  r.done = next.done();
  if (r.done) {
    const std::size_t c = next.paddle_center();
    const std::size_t dist = next.ball_x > c ? next.ball_x - c : c - next.ball_x;
    r.reward = dist <= state.config.paddle_w / 2 ? 1.0 : -1.0;
  }
  r.frame = render_frame(next);
  r.state = next;
  return r;
}

Tensor render_frame(const State& state) {
  const Config& c = state.config;
  Tensor f({c.grid_h, c.grid_w});
  for (std::size_t x = state.paddle_x; x < state.paddle_x + c.paddle_w; ++x) f.at(c.grid_h - 1, x) = kPaddleIntensity;
  f.at(state.ball_y, state.ball_x) = kBallIntensity;
  return f;
}

std::size_t optimal_action(const State& state) {
  const std::size_t c = state.paddle_center();
  if (state.ball_x < c) return kLeft;
  if (state.ball_x > c) return kRight;
  return kStay;
}

}  // namespace rlsal::catch_env
