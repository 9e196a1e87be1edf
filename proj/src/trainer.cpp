#include "rlsal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rlsal/errors.hpp"
#include "rlsal/weights_io.hpp"

namespace rlsal {

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) fail("gamma must be in [0, 1)");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) fail("lr must be non-negative");
  if (!(c.epsilon_end >= 0.0 && c.epsilon_end <= c.epsilon_start && c.epsilon_start <= 1.0))
    fail("need 0 <= epsilon_end <= epsilon_start <= 1");
  if (c.replay_capacity == 0) fail("capacity must be positive");
  if (c.batch_size == 0) fail("batch must be positive");
  if (c.batch_size > c.replay_capacity) fail("batch larger than replay capacity");
  if (c.target_sync == 0) fail("sync must be positive");
  if (c.train_every == 0) fail("train_every must be positive");
  if (!(c.grad_clip > 0.0)) fail("grad_clip must be positive");
  for (auto s : c.checkpoints)
    if (s > c.total_steps) fail("checkpoint " + std::to_string(s) + " beyond total steps");
}

std::size_t early_checkpoint_step(std::size_t total_steps) { return total_steps / 50; }

std::vector<std::size_t> checkpoint_schedule(const TrainConfig& c) {
  std::vector<std::size_t> s = c.checkpoints;
  if (s.empty()) s = {0, early_checkpoint_step(c.total_steps), c.total_steps};
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-')
    throw std::invalid_argument("train config: " + key + " needs a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument("train config: " + key + " needs a number, got '" + v + "'");
  return x;
}
}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("train config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "gamma") c.gamma = to_double(key, value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "epsilon_start") c.epsilon_start = to_double(key, value);
    else if (key == "epsilon_end") c.epsilon_end = to_double(key, value);
    else if (key == "epsilon_decay") c.epsilon_decay = to_size(key, value);
    else if (key == "capacity") c.replay_capacity = to_size(key, value);
    else if (key == "batch") c.batch_size = to_size(key, value);
    else if (key == "sync") c.target_sync = to_size(key, value);
    else if (key == "steps") c.total_steps = to_size(key, value);
    else if (key == "seed") c.seed = to_size(key, value);
    else if (key == "train_every") c.train_every = to_size(key, value);
    else if (key == "learning_starts") c.learning_starts = to_size(key, value);
    else if (key == "grad_clip") c.grad_clip = to_double(key, value);
    else if (key == "checkpoints") {
      c.checkpoints.clear();
      std::istringstream parts(value);
      for (std::string p; std::getline(parts, p, ',');)
        if (!trim(p).empty()) c.checkpoints.push_back(to_size(key, trim(p)));
    } else {
      throw std::invalid_argument("train config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  validate(c);
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open train config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_train_config(ss.str());
}

double epsilon_at(const TrainConfig& c, std::size_t step) {
  if (c.epsilon_decay == 0 || step >= c.epsilon_decay) return c.epsilon_end;
  const double t = static_cast<double>(step) / static_cast<double>(c.epsilon_decay);
  return c.epsilon_start + t * (c.epsilon_end - c.epsilon_start);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(catch_env::Transition t) {
  if (t.action >= catch_env::kNumActions) throw IndexError("transition action out of range");
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (items_.size() < batch || batch == 0)
    throw std::logic_error("replay buffer holds " + std::to_string(items_.size()) + " transitions, batch needs " +
                           std::to_string(batch));
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(items_.size()));
  return idx;
}

double td_target(double reward, bool done, std::span<const double> q_online_next,
                 std::span<const double> q_target_next, double gamma) {
  if (done) return reward;
  if (q_online_next.size() != q_target_next.size() || q_online_next.empty())
    throw DimensionError("td_target: q-vectors differ in length");
  return reward + gamma * q_target_next[argmax(q_online_next)];
}

double td_target(const catch_env::Transition& t, const NetworkSpec& spec, const Weights& online,
                 const Weights& target, double gamma) {
  if (t.done) return t.reward;
  const Tensor next = t.next_state.stacked();
  const Tensor q_on = forward(spec, online, next).q;
  const Tensor q_tg = forward(spec, target, next).q;
  return td_target(t.reward, false, q_on.data(), q_tg.data(), gamma);
}

namespace {
void add_into(Weights& acc, const Weights& g) {
  for (auto& [path, p] : acc.layers) {
    const auto& q = g.at(path);
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] += q.weights[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] += q.bias[i];
  }
}
}  // namespace

BatchGradient batch_gradient(const QNetworks& nets, const ReplayBuffer& buffer,
                             std::span<const std::size_t> indices, double gamma, double grad_clip) {
  BatchGradient out;
  out.gradient = zero_weights(nets.spec);
  const double inv_batch = 1.0 / static_cast<double>(indices.size());
  for (std::size_t idx : indices) {
    const auto& t = buffer[idx];
    const double y = td_target(t, nets.spec, nets.online, nets.target, gamma);
    const ForwardResult fr = forward(nets.spec, nets.online, t.state.stacked());
    const double diff = fr.q[t.action] - y;
    out.loss += diff * diff * inv_batch;
    if (diff == 0.0) continue;

    OutputSeeds seeds = seed_gradient(nets.spec, TargetSelector::action_q(t.action), fr);
    for (double& v : seeds.q.data()) v *= 2.0 * diff * inv_batch;
    BackwardOptions opt;
    opt.param_grads = true;
    opt.input_grad = false;
    add_into(out.gradient, collect_param_grads(nets.spec, backward(nets.spec, fr, seeds, opt)));
  }

  double sq = 0.0;
  for (const auto& [path, p] : out.gradient.layers) {
    for (double v : p.weights.data()) sq += v * v;
    for (double v : p.bias.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > grad_clip) {
    const double scale = grad_clip / norm;
    for (auto& [path, p] : out.gradient.layers) {
      for (double& v : p.weights.data()) v *= scale;
      for (double& v : p.bias.data()) v *= scale;
    }
  }
  return out;
}

double train_step(QNetworks& nets, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng,
                  std::size_t step) {
  const auto indices = buffer.sample(config.batch_size, rng);
  const BatchGradient g = batch_gradient(nets, buffer, indices, config.gamma, config.grad_clip);
  for (auto& [path, p] : nets.online.layers) {
    const auto& d = g.gradient.at(path);
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= config.lr * d.weights[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= config.lr * d.bias[i];
  }
  if (step % config.target_sync == 0) nets.target = nets.online;
  return g.loss;
}

std::size_t greedy_action(const NetworkSpec& spec, const Weights& weights, const Tensor& stacked) {
  return argmax(forward(spec, weights, stacked).q.data());
}

TrainingResult train(const TrainConfig& config, const CheckpointCallback& on_checkpoint) {
  validate(config);
  const auto schedule = checkpoint_schedule(config);
  TrainingResult result;
  result.spec = reference_network_spec(catch_env::FrameStack::kDepth, config.env.grid_h, config.env.grid_w,
                                       catch_env::kNumActions);
  QNetworks nets{result.spec, initialize_weights(result.spec, mix_seed(config.seed, 0)), {}};
  nets.target = nets.online;

  auto save = [&](std::size_t step) {
    if (!std::binary_search(schedule.begin(), schedule.end(), step)) return;
    result.checkpoints.emplace(step, nets.online);
    if (on_checkpoint) on_checkpoint(step, nets.online);
  };
  save(0);
  if (config.total_steps == 0) return result;

  Rng action_rng(mix_seed(config.seed, 1));
  Rng replay_rng(mix_seed(config.seed, 2));
  Rng episode_rng(mix_seed(config.seed, 3));
  ReplayBuffer buffer(config.replay_capacity);

  auto episode = catch_env::reset(episode_rng.next(), config.env);
  double episode_reward = 0.0;
  const std::size_t first_update = std::max(config.learning_starts, config.batch_size);

  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const double eps = epsilon_at(config, step - 1);
    std::size_t action;
    if (action_rng.uniform() < eps)
      action = static_cast<std::size_t>(action_rng.below(catch_env::kNumActions));
    else
      action = greedy_action(nets.spec, nets.online, episode.frames.stacked());

    auto sr = catch_env::step(episode.state, action);
    catch_env::FrameStack next = episode.frames.pushed(sr.frame);
    buffer.push({episode.frames, action, sr.reward, next, sr.done});
    episode_reward += sr.reward;
    if (sr.done) {
      result.episodes.push_back({result.episodes.size(), episode_reward, eps});
      episode_reward = 0.0;
      episode = catch_env::reset(episode_rng.next(), config.env);
    } else {
      episode = {sr.state, std::move(next)};
    }

    if (step >= first_update && step % config.train_every == 0) {
      const double loss = train_step(nets, buffer, config, replay_rng, step);
      if (!std::isfinite(loss)) throw std::runtime_error("training diverged at step " + std::to_string(step));
    } else if (step % config.target_sync == 0) {
      nets.target = nets.online;
    }
    save(step);
  }
  return result;
}

std::string checkpoint_filename(std::size_t step) { return "step_" + std::to_string(step) + ".weights"; }

TrainingResult run_training(const TrainConfig& config, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  NetworkSpec spec = reference_network_spec(catch_env::FrameStack::kDepth, config.env.grid_h, config.env.grid_w,
                                            catch_env::kNumActions);
  TrainingResult result = train(config, [&](std::size_t step, const Weights& w) {
    save_weights(spec, w, out_dir / checkpoint_filename(step));
  });
  const auto log_path = out_dir / "rewards.txt";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path.string() + " for writing");
  for (const auto& e : result.episodes)
    log << e.index << ' ' << format_double(e.total_reward) << ' ' << format_double(e.epsilon) << '\n';
  if (!log.flush()) throw IoError("failed writing " + log_path.string());
  return result;
}

double catch_rate(const NetworkSpec& spec, const Weights& weights, std::size_t episodes, std::uint64_t seed,
                  const catch_env::Config& env) {
  if (episodes == 0) return 0.0;
  Rng rng(seed);
  std::size_t caught = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto ep = catch_env::reset(rng.next(), env);
    for (;;) {
      auto sr = catch_env::step(ep.state, greedy_action(spec, weights, ep.frames.stacked()));
      if (sr.done) {
        if (sr.reward > 0) ++caught;
        break;
      }
      ep = {sr.state, ep.frames.pushed(std::move(sr.frame))};
    }
  }
  return static_cast<double>(caught) / static_cast<double>(episodes);
}

}  // namespace rlsal
