// Command-line front end: demo generation, policy training, evaluation, and
// one-shot grasp planning over the synthetic task suite.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "hgm/train.hpp"

namespace {

using hgm::TaskConfig;
namespace pipeline = hgm::pipeline;

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw hgm::Error("io-error", "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw hgm::Error("io-error", "cannot write " + path);
  f << text;
}

struct Overrides {
  int epochs = -1;
  std::string variant;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

TaskConfig resolve_config(const std::string& task, const std::string& config_path,
                          const Overrides& ov) {
  TaskConfig cfg =
      config_path.empty() ? hgm::default_task_config(task) : hgm::task_config_from_json(slurp(config_path));
  if (!task.empty()) cfg.task = task;
  if (ov.epochs >= 0) cfg.epochs = ov.epochs;
  if (!ov.variant.empty()) cfg.variant = ov.variant;
  if (ov.seed_set) cfg.seed = ov.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage manipulation pipeline over synthetic tasks"};
  app.require_subcommand(1);

  std::string task = "place-synth", split = "train", config_path, data_dir, out_dir,
              checkpoint_dir, loss_log_path, report_path;
  int num = 50, episodes = 50, runs = 3, threads = 0;
  std::uint64_t seed = 1000;
  Overrides ov;

  auto* gen = app.add_subcommand("gen-demos", "Record scripted-expert demonstrations");
  gen->add_option("--task", task, "place-synth | hang-synth | stack-synth");
  gen->add_option("--split", split, "train | test");
  gen->add_option("--num", num, "number of episodes");
  gen->add_option("--seed", seed, "base scene seed");
  gen->add_option("--config", config_path, "task config JSON (defaults per task)");
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train the diffusion policy on a dataset");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "checkpoint directory")->required();
  train->add_option("--config", config_path, "override task config JSON");
  train->add_option("--epochs", ov.epochs, "override epoch count");
  train->add_option("--variant", ov.variant, "full | no-cg | no-pe | no-mfm");
  auto* seed_opt = train->add_option("--seed", ov.seed, "override training seed");
  train->add_option("--threads", threads, "worker threads (0 = auto)");
  train->add_option("--loss-log", loss_log_path, "CSV loss log path");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint in the simulator");
  eval->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
  eval->add_option("--task", task, "expected task (checked against the checkpoint)");
  eval->add_option("--split", split, "train | test");
  eval->add_option("--episodes", episodes, "episodes per run");
  eval->add_option("--runs", runs, "independent runs");
  eval->add_option("--seed", seed, "base evaluation seed");
  eval->add_option("--variant", ov.variant, "evaluation-time ablation variant");
  eval->add_option("--out", report_path, "write the JSON report here too");

  auto* grasp = app.add_subcommand("grasp", "Plan a stage-1 grasp for one scene");
  grasp->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
  grasp->add_option("--split", split, "train | test");
  grasp->add_option("--seed", seed, "scene seed");
  grasp->add_option("--out", report_path, "write the JSON result here too");

  auto* config_cmd = app.add_subcommand("config", "Print the default config for a task");
  config_cmd->add_option("--task", task, "task name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      TaskConfig cfg = resolve_config(task, config_path, {});
      pipeline::Dataset data = pipeline::generate_demos(cfg, split, num, seed);
      pipeline::save_dataset(out_dir, data);
      std::cout << "episodes " << data.episodes.size() << "/" << num << " -> " << out_dir << "\n";
      if (!data.complete) {
        std::cerr << "warning: some expert rollouts failed; dataset marked incomplete\n";
        return 2;
      }
    } else if (*train) {
      pipeline::Dataset data = pipeline::load_dataset(data_dir);
      ov.seed_set = seed_opt->count() > 0;
      TaskConfig cfg = config_path.empty() ? data.config : hgm::task_config_from_json(slurp(config_path));
      if (ov.epochs >= 0) cfg.epochs = ov.epochs;
      if (!ov.variant.empty()) cfg.variant = ov.variant;
      if (ov.seed_set) cfg.seed = ov.seed;
      if (cfg.task != data.config.task)
        throw hgm::Error("bad-config", "config task does not match the dataset");
      pipeline::TrainOptions opts;
      opts.threads = threads;
      opts.progress = &std::cout;
      std::ofstream loss_log;
      if (!loss_log_path.empty()) {
        loss_log.open(loss_log_path, std::ios::trunc);
        if (!loss_log) throw hgm::Error("io-error", "cannot write " + loss_log_path);
        opts.loss_log = &loss_log;
      }
      pipeline::Bundle bundle = pipeline::train_policy(cfg, data, opts);
      pipeline::save_bundle(out_dir, bundle);
      std::cout << "checkpoint -> " << out_dir << "\n";
    } else if (*eval) {
      pipeline::Bundle bundle = pipeline::load_bundle(checkpoint_dir);
      if (!task.empty() && task != bundle.config.task)
        throw hgm::Error("checkpoint-task-mismatch",
                         "checkpoint is for " + bundle.config.task + ", asked for " + task);
      if (!ov.variant.empty()) pipeline::set_variant(bundle, ov.variant);
      pipeline::EvalReport report = pipeline::evaluate(bundle, split, episodes, runs, seed);
      std::string text = pipeline::report_to_json(report);
      std::cout << text << "\n";
      if (!report_path.empty()) spit(report_path, text + "\n");
    } else if (*grasp) {
      pipeline::Bundle bundle = pipeline::load_bundle(checkpoint_dir);
      hgm::sim::SceneInstance scene = hgm::sim::make_task(bundle.config.task, split, seed);
      hgm::ProviderRegistry registry = hgm::build_registry(bundle.config);
      hgm::ObjectCategory cat = scene.spec.operated_category;
      hgm::PointCloud target = scene.operated;
      target.set_payload("features", hgm::provider_for(cat, registry)->compute(target));
      auto [point, match] = hgm::locate_manipulation_point(bundle.annotation, target);
      hgm::GraspPose pose = hgm::plan_grasp(bundle.annotation, target);
      nlohmann::json j{{"task", bundle.config.task},
                       {"split", split},
                       {"seed", seed},
                       {"matched_index", match.target_index},
                       {"score", match.score},
                       {"position", {pose.position.x, pose.position.y, pose.position.z}},
                       {"orientation",
                        {pose.orientation.w, pose.orientation.x, pose.orientation.y,
                         pose.orientation.z}},
                       {"gripper", pose.gripper}};
      std::string text = j.dump(2);
      std::cout << text << "\n";
      if (!report_path.empty()) spit(report_path, text + "\n");
    } else if (*config_cmd) {
      std::cout << hgm::task_config_to_json(hgm::default_task_config(task)) << "\n";
    }
  } catch (const hgm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
