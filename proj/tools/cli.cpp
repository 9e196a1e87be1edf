#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rlsal/catch_env.hpp"
#include "rlsal/errors.hpp"
#include "rlsal/render.hpp"
#include "rlsal/sanity.hpp"
#include "rlsal/trainer.hpp"
#include "rlsal/weights_io.hpp"

namespace fs = std::filesystem;

namespace rlsal {
namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return stem + "_" + buf + ext;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

// Greedy episode from reset(seed): the observations seen before each action,
// at most max_steps of them.
struct Rollout {
  std::vector<Observation> observations;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  Tensor terminal_frame;
};

Rollout greedy_rollout(const Checkpoint& cp, std::uint64_t seed, std::size_t max_steps) {
  Rollout r;
  auto ep = catch_env::reset(seed);
  while (r.observations.size() < max_steps) {
    Tensor stack = ep.frames.stacked();
    const std::size_t a = greedy_action(cp.spec, cp.weights, stack);
    r.observations.push_back({ep.state, std::move(stack)});
    auto sr = catch_env::step(ep.state, a);
    r.actions.push_back(a);
    r.rewards.push_back(sr.reward);
    if (sr.done) {
      r.terminal_frame = std::move(sr.frame);
      break;
    }
    ep = {sr.state, ep.frames.pushed(std::move(sr.frame))};
  }
  return r;
}

Tensor newest_frame(const Tensor& stack) { return stack.channel(stack.dim(0) - 1); }

Method require_method(const std::string& name) {
  auto m = parse_method(name);
  if (!m) throw UsageError("unknown method '" + name + "'");
  return *m;
}

TargetSelector require_target(const std::string& text) {
  auto t = parse_target(text);
  if (!t) throw UsageError("unknown target '" + text + "'");
  return *t;
}

int cmd_train(const std::string& config_path, const fs::path& out_dir, std::ostream& out) {
  const TrainConfig config = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  const TrainingResult r = run_training(config, out_dir);
  out << "trained " << config.total_steps << " steps, " << r.episodes.size() << " episodes, "
      << r.checkpoints.size() << " checkpoints in " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_rollout(const fs::path& weights, std::uint64_t seed, std::size_t steps, const fs::path& out_dir,
                std::ostream& out) {
  const Checkpoint cp = load_weights(weights);
  const Rollout r = greedy_rollout(cp, seed, steps);
  make_dir(out_dir);
  auto log = open_out(out_dir / "rollout.tsv");
  log << "step\taction\treward\n";
  for (std::size_t i = 0; i < r.observations.size(); ++i) {
    const Tensor frame = newest_frame(r.observations[i].stack);
    write_ppm(overlay(frame, Image(frame.dim(1), frame.dim(0)), 1.0), out_dir / numbered("frame", i, ".ppm"));
    log << i << '\t' << r.actions[i] << '\t' << format_double(r.rewards[i]) << '\n';
  }
  double total = 0.0;
  for (double v : r.rewards) total += v;
  out << "rollout: " << r.observations.size() << " steps, reward " << format_double(total) << '\n';
  return kExitOk;
}

struct SaliencyArgs {
  std::string weights, method = "guided", target = "maxq", norm = "frame", out;
  std::optional<std::size_t> layer, frame_offset;
  std::uint64_t seed = 1;
  std::size_t steps = 100;
  double gain = 1.0, opacity = 0.5;
  PerturbationOptions perturbation;
};

SaliencyRequest build_request(const std::string& method_name_arg, const std::string& target,
                              std::optional<std::size_t> layer, std::optional<std::size_t> frame_offset) {
  SaliencyRequest req;
  req.method = require_method(method_name_arg);
  req.target = require_target(target);
  if (frame_offset && !uses_frame_offset(req.method))
    throw UsageError("--frame-offset does not apply to method '" + method_name_arg + "'");
  if (layer && !uses_conv_layer(req.method))
    throw UsageError("--layer applies only to the Grad-CAM family, not '" + method_name_arg + "'");
  req.conv_layer = layer;
  req.frame_offset = frame_offset.value_or(0);
  return req;
}

int cmd_saliency(const SaliencyArgs& a, std::ostream& out) {
  SaliencyRequest req = build_request(a.method, a.target, a.layer, a.frame_offset);
  req.perturbation = a.perturbation;
  if (a.norm != "frame" && a.norm != "video") throw UsageError("--norm must be 'frame' or 'video'");
  const Checkpoint cp = load_weights(a.weights);
  const Rollout r = greedy_rollout(cp, a.seed, a.steps);

  std::vector<SaliencyMap> maps;
  for (const auto& o : r.observations) {
    SaliencyMap m = compute_saliency(cp.spec, cp.weights, o.stack, req);
    m.meta.checkpoint = a.weights;
    maps.push_back(apply_gain(std::move(m), a.gain));
  }
  make_dir(a.out);
  for (std::size_t i = 0; i < maps.size(); ++i) write_map(maps[i].values, fs::path(a.out) / numbered("step", i, ".txt"));
  const auto normalized =
      normalize(maps, a.norm == "video" ? NormalizationScope::PerVideo : NormalizationScope::PerFrame);
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const Tensor frame = newest_frame(r.observations[i].stack);
    write_ppm(overlay(frame, colorize(normalized[i]), a.opacity), fs::path(a.out) / numbered("step", i, ".ppm"));
  }
  out << "saliency: " << method_name(req.method) << " target " << to_string(req.target) << ", " << maps.size()
      << " frames in " << a.out << '\n';
  return kExitOk;
}

int cmd_sanity(const std::string& weights, const std::string& method, const std::string& target,
               std::optional<std::size_t> layer, std::uint64_t seed, std::size_t at_step, const fs::path& out_dir,
               std::ostream& out) {
  std::vector<SaliencyRequest> requests;
  if (method == "all") {
    if (layer) {
      for (Method m : kGradientMethods)
        requests.push_back(build_request(method_name(m), target, uses_conv_layer(m) ? layer : std::nullopt, {}));
    } else {
      for (Method m : kGradientMethods) requests.push_back(build_request(method_name(m), target, {}, {}));
    }
  } else {
    requests.push_back(build_request(method, target, layer, {}));
    if (requests.back().method == Method::Perturbation)
      throw UsageError("sanity runs on the six gradient-based methods");
  }
  const Checkpoint cp = load_weights(weights);
  const Rollout r = greedy_rollout(cp, seed, at_step + 1);
  const Tensor& stack = r.observations.back().stack;

  std::vector<SimilarityReport> reports;
  for (const auto& req : requests) {
    auto part = cascading_randomization_suite(cp.spec, cp.weights, stack, req, seed);
    reports.insert(reports.end(), part.begin(), part.end());
  }
  make_dir(out_dir);
  auto os = open_out(out_dir / "cascade.tsv");
  write_similarity_tsv(os, reports);
  if (!os.flush()) throw IoError("failed writing cascade report");
  out << "sanity: " << reports.size() << " rows (state at step " << r.observations.size() - 1 << ") in "
      << (out_dir / "cascade.tsv").string() << '\n';
  return kExitOk;
}

int cmd_compare(const std::string& weights, const std::string& method, const std::string& target,
                std::uint64_t seed, std::size_t steps, std::size_t radius, const fs::path& out_dir,
                std::ostream& out) {
  const SaliencyRequest req = build_request(method, target, {}, {});
  const Checkpoint cp = load_weights(weights);
  const Rollout r = greedy_rollout(cp, seed, steps);
  make_dir(out_dir);
  auto edges = open_out(out_dir / "edges.tsv");
  auto rings = open_out(out_dir / "rings.tsv");
  edges << "step\tmask\tpearson_abs\tflags\n";
  rings << "step\tdistance\tmean\tcount\n";
  for (std::size_t i = 0; i < r.observations.size(); ++i) {
    const auto& o = r.observations[i];
    const Tensor map = compute_saliency(cp.spec, cp.weights, o.stack, req).values;
    for (const auto& e : edge_detector_similarity(map, newest_frame(o.stack)))
      edges << i << '\t' << mask_name(e.mask) << '\t'
            << (e.pearson_abs.defined ? format_double(e.pearson_abs.value) : "nan") << '\t'
            << (e.pearson_abs.defined ? "ok" : "undefined") << '\n';
    const RingProfile p = ring_profile(map, o.state.ball_y, o.state.ball_x, radius);
    for (std::size_t d = 0; d < p.mean.size(); ++d)
      rings << i << '\t' << d << '\t' << format_double(p.mean[d]) << '\t' << p.count[d] << '\n';
  }
  if (!edges.flush() || !rings.flush()) throw IoError("failed writing compare reports");
  out << "compare: " << r.observations.size() << " frames, reports in " << out_dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Saliency toolkit for a dueling Q-network on Catch"};
  app.require_subcommand(1);

  std::string config_path, train_out;
  auto* train = app.add_subcommand("train", "train the reference agent, writing checkpoints and a reward log");
  train->add_option("--config", config_path, "key=value training config (defaults when omitted)");
  train->add_option("--out", train_out, "output directory")->required();

  std::string rollout_weights, rollout_out;
  std::uint64_t rollout_seed = 1;
  std::size_t rollout_steps = 100;
  auto* rollout = app.add_subcommand("rollout", "run one greedy episode and save its frames");
  rollout->add_option("--weights", rollout_weights)->required();
  rollout->add_option("--seed", rollout_seed);
  rollout->add_option("--steps", rollout_steps);
  rollout->add_option("--out", rollout_out)->required();

  SaliencyArgs sa;
  auto* saliency = app.add_subcommand("saliency", "saliency overlays and raw maps along a greedy episode");
  saliency->add_option("--weights", sa.weights)->required();
  saliency->add_option("--method", sa.method, "gradient|guided|gradcam|guided-gradcam|g1|g2|perturb");
  saliency->add_option("--target", sa.target, "action:<i>|maxq|value|adv:<i>|advmax");
  saliency->add_option("--layer", sa.layer, "trunk index of the conv layer (CAM methods)");
  saliency->add_option("--frame-offset", sa.frame_offset, "stacked frame, 0 = newest (gradient methods)");
  saliency->add_option("--norm", sa.norm, "frame|video");
  saliency->add_option("--seed", sa.seed);
  saliency->add_option("--steps", sa.steps);
  saliency->add_option("--gain", sa.gain, "multiplier applied before normalization");
  saliency->add_option("--opacity", sa.opacity, "frame weight in the overlay");
  saliency->add_option("--mask-sigma", sa.perturbation.mask_sigma, "perturbation blur width");
  saliency->add_option("--mask-radius", sa.perturbation.mask_radius, "perturbation mask width");
  saliency->add_option("--stride", sa.perturbation.stride, "perturbation sampling stride");
  saliency->add_option("--out", sa.out)->required();

  std::string sanity_weights, sanity_method = "all", sanity_target = "maxq", sanity_out;
  std::optional<std::size_t> sanity_layer;
  std::uint64_t sanity_seed = 1;
  std::size_t sanity_at = 8;
  auto* sanity = app.add_subcommand("sanity", "cascading weight-randomization report");
  sanity->add_option("--weights", sanity_weights)->required();
  sanity->add_option("--method", sanity_method, "a gradient-based method or 'all'");
  sanity->add_option("--target", sanity_target);
  sanity->add_option("--layer", sanity_layer);
  sanity->add_option("--seed", sanity_seed, "episode and randomization seed");
  sanity->add_option("--at-step", sanity_at, "episode step whose state is analysed");
  sanity->add_option("--out", sanity_out)->required();

  std::string compare_weights, compare_method = "guided", compare_target = "maxq", compare_out;
  std::uint64_t compare_seed = 1;
  std::size_t compare_steps = 100, compare_radius = 6;
  auto* compare = app.add_subcommand("compare", "edge-detector similarity and ring profiles on one episode");
  compare->add_option("--weights", compare_weights)->required();
  compare->add_option("--method", compare_method);
  compare->add_option("--target", compare_target);
  compare->add_option("--seed", compare_seed);
  compare->add_option("--steps", compare_steps);
  compare->add_option("--radius", compare_radius);
  compare->add_option("--out", compare_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, train_out, out);
    if (rollout->parsed()) return cmd_rollout(rollout_weights, rollout_seed, rollout_steps, rollout_out, out);
    if (saliency->parsed()) return cmd_saliency(sa, out);
    if (sanity->parsed())
      return cmd_sanity(sanity_weights, sanity_method, sanity_target, sanity_layer, sanity_seed, sanity_at,
                        sanity_out, out);
    if (compare->parsed())
      return cmd_compare(compare_weights, compare_method, compare_target, compare_seed, compare_steps,
                         compare_radius, compare_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rlsal
