#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rlsal/catch_env.hpp"
#include "rlsal/network.hpp"
#include "rlsal/random.hpp"

namespace rlsal {

// Defaults are the reference Catch run (about five minutes on one core).
struct TrainConfig {
  double gamma = 0.99;
  double lr = 0.03;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay = 20000;  // steps of linear decay
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 16;
  std::size_t target_sync = 500;  // steps between target-network copies
  std::size_t total_steps = 150000;
  std::uint64_t seed = 1;
  // Steps at which weights are saved. Empty means {0, 2% of total, total}.
  std::vector<std::size_t> checkpoints;

  std::size_t train_every = 4;       // environment steps per SGD update
  std::size_t learning_starts = 1000;  // no updates before this many steps
  double grad_clip = 10.0;           // global gradient-norm limit
  catch_env::Config env;
};

// Throws std::invalid_argument when a field is out of range.
void validate(const TrainConfig& config);

// Checkpoint steps after defaulting, sorted and deduplicated.
std::vector<std::size_t> checkpoint_schedule(const TrainConfig& config);

// Step of the "early" checkpoint: 2% of the total.
std::size_t early_checkpoint_step(std::size_t total_steps);

// Flat key=value text; '#' starts a comment. Keys: gamma, lr, epsilon_start,
// epsilon_end, epsilon_decay, capacity, batch, sync, steps, seed,
// checkpoints (comma separated), train_every, learning_starts, grad_clip.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

double epsilon_at(const TrainConfig& config, std::size_t step);

// Bounded ring of transitions with seeded uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(catch_env::Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const catch_env::Transition& operator[](std::size_t i) const { return items_.at(i); }

  // Indices drawn uniformly with replacement. Throws std::logic_error when
  // fewer than batch transitions are stored.
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<catch_env::Transition> items_;
};

// Double-DQN target from precomputed next-state q-values:
// r if done, else r + gamma * q_target[argmax q_online].
double td_target(double reward, bool done, std::span<const double> q_online_next,
                 std::span<const double> q_target_next, double gamma);

double td_target(const catch_env::Transition& t, const NetworkSpec& spec, const Weights& online,
                 const Weights& target, double gamma);

struct QNetworks {
  NetworkSpec spec;
  Weights online;
  Weights target;
};

// One SGD update on the mean squared TD error of a uniform batch. Gradient
// flows only through the chosen action's q-value and is clipped to
// config.grad_clip in global norm. After the update, the target network is
// copied from the online one when `step` is a multiple of target_sync.
// Returns the batch loss before the update.
double train_step(QNetworks& nets, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng,
                  std::size_t step);

// Loss and clipped gradient without applying it.
struct BatchGradient {
  double loss = 0.0;
  Weights gradient;
};
BatchGradient batch_gradient(const QNetworks& nets, const ReplayBuffer& buffer,
                             std::span<const std::size_t> indices, double gamma, double grad_clip);

struct EpisodeLog {
  std::size_t index = 0;
  double total_reward = 0.0;
  double epsilon = 0.0;
};

struct TrainingResult {
  NetworkSpec spec;
  std::map<std::size_t, Weights> checkpoints;
  std::vector<EpisodeLog> episodes;
};

using CheckpointCallback = std::function<void(std::size_t step, const Weights& weights)>;

TrainingResult train(const TrainConfig& config, const CheckpointCallback& on_checkpoint = {});

// Writes step_<n>.weights per checkpoint and rewards.txt
// ("episode_index total_reward epsilon" per line) into `out_dir`.
TrainingResult run_training(const TrainConfig& config, const std::filesystem::path& out_dir);

std::string checkpoint_filename(std::size_t step);

std::size_t greedy_action(const NetworkSpec& spec, const Weights& weights, const Tensor& stacked);

// Fraction of episodes the greedy policy catches, episodes seeded from `seed`.
double catch_rate(const NetworkSpec& spec, const Weights& weights, std::size_t episodes,
                  std::uint64_t seed, const catch_env::Config& env = {});

}  // namespace rlsal
