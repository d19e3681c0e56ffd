#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hgm/config.hpp"
#include "hgm/simenv.hpp"

namespace hgm::pipeline {

// Demonstration corpus plus the config it was generated under.
struct Dataset {
  TaskConfig config;
  std::string split = "train";
  bool complete = true;  // false if some expert rollouts failed
  std::vector<sim::Demonstration> episodes;
};

Dataset generate_demos(const TaskConfig& cfg, const std::string& split, int num,
                       std::uint64_t seed);

// Directory layout: manifest.json + one blob per recorded array.
void save_dataset(const std::string& dir, const Dataset& data);
Dataset load_dataset(const std::string& dir);

// Precomputed semantic descriptors and token subsets for one scene. The
// background descriptor matrix is static; the operated semantic part is
// fixed while its coordinate tail follows the current geometry.
struct PreparedScene {
  std::vector<int> op_tokens, bg_tokens;  // fusion_tokens indices
  Matrix op_sem;                          // fusion_tokens x d_op
  Matrix bg_desc;                         // fusion_tokens x (d_bg + 3)
};

// Trained stage-2 policy plus everything stage 1 and the descriptor
// pipeline need at evaluation time.
struct Bundle {
  TaskConfig config;
  int op_sem_dim = 0;
  int bg_sem_dim = 0;
  std::unique_ptr<Policy> policy;
  std::optional<PcaModel> pca;       // shared across rigid-route objects
  std::optional<Matrix> op_anchors;  // K x D, deformable operated route
  std::optional<Matrix> bg_anchors;  // K x D, deformable background route
  DemoAnnotation annotation;         // stage-1 matching reference
  // Full-architecture parameter values, kept so variant switches that drop
  // parameters (and back) stay lossless. Maintained by set_variant.
  std::map<std::string, diff::Tensor> master_params;

  PreparedScene prepare(const sim::SceneInstance& scene) const;
  Observation make_observation(const sim::SceneInstance& scene, const PreparedScene& prep,
                               const std::vector<Point3>& operated_points,
                               const std::array<double, 4>& gripper, int t) const;
};

struct TrainOptions {
  std::ostream* loss_log = nullptr;  // CSV "step,loss,lr"
  int threads = 0;                   // 0 = worker_threads()
  std::ostream* progress = nullptr;  // per-epoch line
};

Bundle train_policy(const TaskConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

void save_bundle(const std::string& dir, const Bundle& bundle);
Bundle load_bundle(const std::string& dir);

// Switches the evaluation-time ablation variant, rebuilding the policy
// around the existing parameter values where the architecture changes.
void set_variant(Bundle& bundle, const std::string& variant);

sim::EpisodeResult run_policy_episode(const Bundle& bundle, const sim::SceneInstance& scene,
                                      std::uint64_t seed);

struct EvalReport {
  std::string task, split, variant;
  int episodes = 0, runs = 0;
  std::vector<double> run_rates;
  double mean_rate = 0.0;
  double std_rate = 0.0;
  std::map<std::string, int> failure_histogram;  // grasp / move / final
  long coord_attention_calls = 0;
};

EvalReport evaluate(const Bundle& bundle, const std::string& split, int episodes, int runs,
                    std::uint64_t seed);

std::string report_to_json(const EvalReport& report);

}  // namespace hgm::pipeline
