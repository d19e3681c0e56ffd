#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "hgm/correspondence.hpp"
#include "hgm/geometry.hpp"

namespace hgm::sim {

// Semantic label codes attached to generated clouds.
inline constexpr int kLabelBody = 0;
inline constexpr int kLabelGrasp = 1;   // graspable region
inline constexpr int kLabelRef = 2;     // auxiliary reference (rigid objects)
inline constexpr int kLabelGoal = 3;    // background goal site

using Action = std::array<double, 4>;  // dx, dy, dz, gripper command

struct TaskSpec {
  std::string name;  // place-synth | hang-synth | stack-synth
  std::string split; // train | test
  ObjectCategory operated_category = ObjectCategory::Rigid;
  ObjectCategory background_category = ObjectCategory::Rigid;
  double tolerance = 0.03;   // meters
  int max_steps = 60;
  double step_cap = 0.05;    // per-axis translation cap
  double deform_lambda = 0.15;
};

// Static per-episode scene: objects at t = 0, ground-truth annotation
// indices, and the goal geometry.
struct SceneInstance {
  TaskSpec spec;
  std::uint64_t seed = 0;
  PointCloud operated;    // t = 0 pose, payloads: label + canonical/intrinsic
  PointCloud background;  // static
  int manipulation_index = 0;            // grasp point on operated
  std::vector<int> reference_indices;    // rigid operated only
  Rotation3 demo_grasp_orientation;
  int goal_index = -1;                   // goal-labeled background point (place/stack)
  bool is_hang = false;
  Point3 line_a, line_b;                 // hang: clothesline segment
  Point3 gripper_home{0.0, -0.20, 0.20};
};

struct SimState {
  PointCloud operated;  // world frame, point identities stable
  Point3 gripper;
  bool closed = false;
  bool attached = false;
  bool ever_attached = false;
  int attached_index = -1;
  int steps = 0;
};

struct EpisodeResult {
  bool success = false;
  int steps = 0;
  double final_distance = 0.0;
  std::string failure_stage;  // "", "grasp", "move", "final"
};

TaskSpec make_spec(const std::string& name, const std::string& split);

// Deterministic scene for (name, split, seed).
SceneInstance make_task(const std::string& name, const std::string& split, std::uint64_t seed);

SimState initial_state(const SceneInstance& scene);

// Kinematic step: capped translation, close-to-attach, rigid or
// exponential-falloff deformable transport of the attached object.
void step(const SceneInstance& scene, SimState& state, const Action& action);

bool success(const SceneInstance& scene, const SimState& state);
double goal_distance(const SceneInstance& scene, const SimState& state);

// One recorded expert (or policy) trajectory.
struct Demonstration {
  SceneInstance scene;
  std::vector<Action> actions;                  // length T
  std::vector<std::array<double, 4>> gripper;   // pre-action gripper pose + closed
  std::vector<std::vector<Point3>> operated_positions;  // pre-action, T x N
  int grasp_step = -1;  // first step index at which the object was attached
  bool success = false;
};

// Deterministic waypoint controller driven by ground-truth labels.
// Throws Error("expert-failed") if the rollout does not succeed.
// With noise > 0 the executed translation is perturbed by seeded Gaussian
// noise while the recorded action stays the clean corrective one, so the
// demonstration covers off-nominal states with recovery labels.
Demonstration scripted_expert(const SceneInstance& scene, double noise = 0.0,
                              std::uint64_t noise_seed = 0);

// Annotation for stage-1 matching, built from the scene's ground truth.
// Features payload is attached by the caller (provider choice lives there).
DemoAnnotation make_annotation(const SceneInstance& scene);

// Runs an episode under an arbitrary controller. The controller sees the
// pre-action state and the step index.
EpisodeResult run_episode(const SceneInstance& scene,
                          const std::function<Action(const SimState&, int)>& controller);

EpisodeResult classify_result(const SceneInstance& scene, const SimState& state);

}  // namespace hgm::sim
