#include "hgm/simenv.hpp"

#include <algorithm>
#include <cmath>

namespace hgm::sim {

namespace {

struct Range {
  double lo, hi;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

// Disjoint train/test parameter ranges.
Range pick(const std::string& split, Range train, Range test) {
  return split == "train" ? train : test;
}

double sample_signed(Rng& rng, const std::string& split, Range train_abs, Range test_abs) {
  double mag = pick(split, train_abs, test_abs).sample(rng);
  return rng.uniform01() < 0.5 ? -mag : mag;
}

Point3 sample_offset(Rng& rng, const std::string& split) {
  // Pose displacement: small radius in train, disjoint larger in test.
  double r = pick(split, {0.0, 0.05}, {0.06, 0.10}).sample(rng);
  double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  return {r * std::cos(ang), r * std::sin(ang), 0.0};
}

void append_label_column(PointCloud& cloud, const std::vector<int>& labels) {
  Matrix lab(static_cast<int>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) lab(static_cast<int>(i), 0) = float(labels[i]);
  cloud.set_payload("label", std::move(lab));
}

// Rectangular cloth grid in intrinsic (u, v) coordinates, flat at z0.
// The grasp region sits at the middle of the +v edge.
PointCloud make_sheet(double w, double h, double z0, bool with_goal) {
  const int nu = 12, nv = 9;
  PointCloud cloud;
  std::vector<int> labels;
  Matrix intrinsic(nu * nv, 3);
  int idx = 0;
  for (int iv = 0; iv < nv; ++iv)
    for (int iu = 0; iu < nu; ++iu) {
      double u = -w / 2 + w * iu / (nu - 1);
      double v = -h / 2 + h * iv / (nv - 1);
      cloud.points.push_back({u, v, z0});
      intrinsic(idx, 0) = static_cast<float>(u);
      intrinsic(idx, 1) = static_cast<float>(v);
      intrinsic(idx, 2) = 0.0f;
      double d_grasp = std::hypot(u, v - h / 2);
      double d_goal = std::hypot(u, v);
      int label = kLabelBody;
      if (d_grasp < 0.035) label = kLabelGrasp;
      else if (with_goal && d_goal < 0.03) label = kLabelGoal;
      labels.push_back(label);
      ++idx;
    }
  cloud.set_payload("intrinsic", std::move(intrinsic));
  append_label_column(cloud, labels);
  return cloud;
}

// Rigid blob ("bread"): elliptical footprint extruded in three layers,
// with a graspable handle region on top and a reference tip at +x.
PointCloud make_bread(double a) {
  const double b = 0.6 * a;
  PointCloud cloud;
  std::vector<int> labels;
  std::vector<float> canon;
  const int nx = 9, ny = 7, nz = 3;
  for (int iz = 0; iz < nz; ++iz)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        double x = -a + 2 * a * ix / (nx - 1);
        double y = -b + 2 * b * iy / (ny - 1);
        if ((x * x) / (a * a) + (y * y) / (b * b) > 1.0 + 1e-9) continue;
        double z = 0.012 * iz;
        cloud.points.push_back({x, y, z});
        canon.insert(canon.end(), {float(x), float(y), float(z)});
        labels.push_back(kLabelBody);
      }
  // Handle: the five top-layer points closest to the top center.
  std::vector<std::pair<double, int>> top;
  int best_tip = 0;
  double best_x = -1e9;
  for (int i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    if (p.z > 0.02) top.emplace_back(std::hypot(p.x, p.y), i);
    if (p.z < 1e-9 && p.x > best_x) {
      best_x = p.x;
      best_tip = i;
    }
  }
  std::sort(top.begin(), top.end());
  for (std::size_t i = 0; i < top.size() && i < 5; ++i) labels[top[i].second] = kLabelGrasp;
  labels[best_tip] = kLabelRef;
  Matrix cm(cloud.size(), 3);
  cm.data = canon;
  cloud.set_payload("canonical", std::move(cm));
  append_label_column(cloud, labels);
  return cloud;
}

// Open ring with a base; the goal site is the base center.
PointCloud make_basket(double r) {
  PointCloud cloud;
  std::vector<int> labels;
  std::vector<float> canon;
  auto push = [&](double x, double y, double z, int label) {
    cloud.points.push_back({x, y, z});
    canon.insert(canon.end(), {float(x), float(y), float(z)});
    labels.push_back(label);
  };
  for (double z : {0.02, 0.045})
    for (int i = 0; i < 24; ++i) {
      double ang = 2.0 * 3.14159265358979323846 * i / 24;
      push(r * std::cos(ang), r * std::sin(ang), z, kLabelBody);
    }
  for (int i = 0; i < 8; ++i) {
    double ang = 2.0 * 3.14159265358979323846 * i / 8;
    push(0.5 * r * std::cos(ang), 0.5 * r * std::sin(ang), 0.005, kLabelBody);
  }
  push(0.0, 0.0, 0.01, kLabelGoal);
  Matrix cm(cloud.size(), 3);
  cm.data = canon;
  cloud.set_payload("canonical", std::move(cm));
  append_label_column(cloud, labels);
  return cloud;
}

PointCloud make_line(double len, double z) {
  PointCloud cloud;
  std::vector<int> labels;
  std::vector<float> canon;
  const int n = 31;
  for (int i = 0; i < n; ++i) {
    double x = -len / 2 + len * i / (n - 1);
    cloud.points.push_back({x, 0.0, z});
    canon.insert(canon.end(), {float(x), 0.0f, float(z)});
    labels.push_back(i == n / 2 ? kLabelGoal : kLabelBody);
  }
  Matrix cm(cloud.size(), 3);
  cm.data = canon;
  cloud.set_payload("canonical", std::move(cm));
  append_label_column(cloud, labels);
  return cloud;
}

int find_label(const PointCloud& cloud, int label) {
  const Matrix& lab = cloud.payload("label");
  for (int i = 0; i < cloud.size(); ++i)
    if (std::lround(lab(i, 0)) == label) return i;
  throw Error("bad-scene", "label not found");
}

// Index of the grasp-labeled point closest to the region center.
int pick_manipulation_index(const PointCloud& cloud, const Point3& center) {
  const Matrix& lab = cloud.payload("label");
  int best = -1;
  double best_d = 1e9;
  for (int i = 0; i < cloud.size(); ++i) {
    if (std::lround(lab(i, 0)) != kLabelGrasp) continue;
    double d = distance(cloud.points[i], center);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best < 0) throw Error("bad-scene", "no graspable points");
  return best;
}

}  // namespace

TaskSpec make_spec(const std::string& name, const std::string& split) {
  if (split != "train" && split != "test") throw Error("bad-split", split);
  TaskSpec spec;
  spec.name = name;
  spec.split = split;
  if (name == "place-synth") {
    spec.operated_category = ObjectCategory::Rigid;
    spec.background_category = ObjectCategory::Rigid;
  } else if (name == "hang-synth") {
    spec.operated_category = ObjectCategory::Deformable;
    spec.background_category = ObjectCategory::Rigid;
  } else if (name == "stack-synth") {
    spec.operated_category = ObjectCategory::Deformable;
    spec.background_category = ObjectCategory::Deformable;
  } else {
    throw Error("unknown-task", name);
  }
  return spec;
}

SceneInstance make_task(const std::string& name, const std::string& split, std::uint64_t seed) {
  SceneInstance scene;
  scene.spec = make_spec(name, split);
  scene.seed = seed;
  Rng rng(hash_combine(seed, std::hash<std::string>{}(name + "/" + split)));

  if (name == "place-synth") {
    double a = pick(split, {0.050, 0.065}, {0.070, 0.085}).sample(rng);
    double yaw = sample_signed(rng, split, {0.0, 0.30}, {0.40, 0.90});
    Point3 op_center = Point3{-0.12, 0.00, 0.0} + sample_offset(rng, split);
    scene.operated = apply_transform(make_bread(a), Rotation3::from_axis_angle({0, 0, 1}, yaw),
                                     op_center);
    scene.demo_grasp_orientation = Rotation3::from_axis_angle({0, 0, 1}, yaw);
    double r = pick(split, {0.055, 0.070}, {0.075, 0.090}).sample(rng);
    Point3 bg_center = Point3{0.12, 0.06, 0.0} + sample_offset(rng, split);
    scene.background = apply_transform(make_basket(r), Rotation3::identity(), bg_center);
    scene.goal_index = find_label(scene.background, kLabelGoal);
    scene.reference_indices = {find_label(scene.operated, kLabelRef)};
    scene.manipulation_index = pick_manipulation_index(
        scene.operated, scene.operated.points[find_label(scene.operated, kLabelGrasp)]);
  } else if (name == "hang-synth") {
    double w = pick(split, {0.16, 0.20}, {0.22, 0.26}).sample(rng);
    double yaw = sample_signed(rng, split, {0.0, 0.25}, {0.35, 0.70});
    Point3 op_center = Point3{-0.10, -0.05, 0.0} + sample_offset(rng, split);
    scene.operated = apply_transform(make_sheet(w, 0.75 * w, 0.002, false),
                                     Rotation3::from_axis_angle({0, 0, 1}, yaw), op_center);
    double lz = pick(split, {0.20, 0.24}, {0.26, 0.30}).sample(rng);
    Point3 line_center = Point3{0.10, 0.12, 0.0} + sample_offset(rng, split);
    scene.background = apply_transform(make_line(0.30, lz), Rotation3::identity(), line_center);
    scene.goal_index = find_label(scene.background, kLabelGoal);
    scene.is_hang = true;
    scene.line_a = scene.background.points.front();
    scene.line_b = scene.background.points.back();
    scene.manipulation_index = pick_manipulation_index(
        scene.operated, scene.operated.points[find_label(scene.operated, kLabelGrasp)]);
  } else if (name == "stack-synth") {
    double w = pick(split, {0.16, 0.20}, {0.22, 0.26}).sample(rng);
    double yaw = sample_signed(rng, split, {0.0, 0.25}, {0.35, 0.70});
    Point3 op_center = Point3{-0.10, -0.05, 0.0} + sample_offset(rng, split);
    scene.operated = apply_transform(make_sheet(w, 0.75 * w, 0.002, false),
                                     Rotation3::from_axis_angle({0, 0, 1}, yaw), op_center);
    double wb = pick(split, {0.16, 0.20}, {0.22, 0.26}).sample(rng);
    double yaw_b = rng.uniform(-0.15, 0.15);
    Point3 bg_center = Point3{0.12, 0.08, 0.0} + sample_offset(rng, split);
    scene.background = apply_transform(make_sheet(wb, 0.75 * wb, 0.001, true),
                                       Rotation3::from_axis_angle({0, 0, 1}, yaw_b), bg_center);
    scene.goal_index = find_label(scene.background, kLabelGoal);
    scene.manipulation_index = pick_manipulation_index(
        scene.operated, scene.operated.points[find_label(scene.operated, kLabelGrasp)]);
  } else {
    throw Error("unknown-task", name);
  }
  return scene;
}

SimState initial_state(const SceneInstance& scene) {
  SimState state;
  state.operated = scene.operated;
  state.gripper = scene.gripper_home;
  return state;
}

void step(const SceneInstance& scene, SimState& state, const Action& action) {
  for (double a : action)
    if (!std::isfinite(a)) throw Error("non-finite", "sim action");
  const double cap = scene.spec.step_cap;
  Point3 delta{std::clamp(action[0], -cap, cap), std::clamp(action[1], -cap, cap),
               std::clamp(action[2], -cap, cap)};
  bool want_closed = action[3] > 0.5;

  // Opening releases before the translation; closing grasps after it.
  if (!want_closed && state.closed) {
    state.closed = false;
    state.attached = false;
    state.attached_index = -1;
  }

  state.gripper = state.gripper + delta;
  if (state.attached) {
    if (scene.spec.operated_category == ObjectCategory::Deformable) {
      const Matrix& uv = state.operated.payload("intrinsic");
      const float* g = uv.row(state.attached_index);
      for (int i = 0; i < state.operated.size(); ++i) {
        const float* q = uv.row(i);
        double du = q[0] - g[0], dv = q[1] - g[1], dw = q[2] - g[2];
        double d = std::sqrt(du * du + dv * dv + dw * dw);
        double k = std::exp(-d / scene.spec.deform_lambda);
        state.operated.points[i] = state.operated.points[i] + delta * k;
      }
    } else {
      for (auto& p : state.operated.points) p = p + delta;
    }
  }

  if (want_closed && !state.closed) {
    state.closed = true;
    // Attach the nearest graspable point within tolerance, snapping it to
    // the gripper (deformables drag neighbors along the falloff).
    const Matrix& lab = state.operated.payload("label");
    int best = -1;
    double best_d = scene.spec.tolerance;
    for (int i = 0; i < state.operated.size(); ++i) {
      if (std::lround(lab(i, 0)) != kLabelGrasp) continue;
      double d = distance(state.operated.points[i], state.gripper);
      if (d <= best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best >= 0) {
      Point3 snap = state.gripper - state.operated.points[best];
      if (scene.spec.operated_category == ObjectCategory::Deformable) {
        const Matrix& uv = state.operated.payload("intrinsic");
        const float* g = uv.row(best);
        for (int i = 0; i < state.operated.size(); ++i) {
          const float* q = uv.row(i);
          double du = q[0] - g[0], dv = q[1] - g[1], dw = q[2] - g[2];
          double d = std::sqrt(du * du + dv * dv + dw * dw);
          state.operated.points[i] =
              state.operated.points[i] + snap * std::exp(-d / scene.spec.deform_lambda);
        }
      } else {
        for (auto& p : state.operated.points) p = p + snap;
      }
      state.attached = true;
      state.ever_attached = true;
      state.attached_index = best;
    }
  }
  ++state.steps;
}

double goal_distance(const SceneInstance& scene, const SimState& state) {
  Point3 p = state.operated.points[scene.manipulation_index];
  if (scene.is_hang) {
    // Distance to the clothesline segment.
    Point3 ab = scene.line_b - scene.line_a;
    double t = std::clamp((p - scene.line_a).dot(ab) / ab.dot(ab), 0.0, 1.0);
    return distance(p, scene.line_a + ab * t);
  }
  return distance(p, scene.background.points[scene.goal_index]);
}

bool success(const SceneInstance& scene, const SimState& state) {
  if (state.closed) return false;  // release required
  Point3 p = state.operated.points[scene.manipulation_index];
  const double tol = scene.spec.tolerance;
  if (scene.is_hang) {
    double x_lo = std::min(scene.line_a.x, scene.line_b.x);
    double x_hi = std::max(scene.line_a.x, scene.line_b.x);
    return p.x >= x_lo && p.x <= x_hi && std::abs(p.y - scene.line_a.y) <= tol &&
           p.z >= scene.line_a.z - 1e-9 && p.z - scene.line_a.z <= 0.10;
  }
  return goal_distance(scene, state) <= tol;
}

EpisodeResult classify_result(const SceneInstance& scene, const SimState& state) {
  EpisodeResult res;
  res.steps = state.steps;
  res.final_distance = goal_distance(scene, state);
  res.success = success(scene, state);
  if (!res.success)
    res.failure_stage = !state.ever_attached ? "grasp" : state.closed ? "move" : "final";
  return res;
}

EpisodeResult run_episode(const SceneInstance& scene,
                          const std::function<Action(const SimState&, int)>& controller) {
  SimState state = initial_state(scene);
  for (int t = 0; t < scene.spec.max_steps; ++t) {
    step(scene, state, controller(state, t));
    if (success(scene, state)) break;
  }
  return classify_result(scene, state);
}

namespace {

struct ExpertPlan {
  std::vector<std::pair<Point3, bool>> waypoints;  // target, hold-closed
  std::vector<int> grip_pulse;  // steps at which the gripper toggles (close/open)
};

// Waypoint sequence: hover, descend, close, lift, traverse, descend, open.
std::vector<std::pair<Point3, double>> expert_targets(const SceneInstance& scene) {
  Point3 grasp = scene.operated.points[scene.manipulation_index];
  Point3 target;
  if (scene.is_hang) {
    Point3 mid = (scene.line_a + scene.line_b) * 0.5;
    target = {mid.x, mid.y, scene.line_a.z + 0.02};
  } else {
    target = scene.background.points[scene.goal_index] + Point3{0, 0, 0.005};
  }
  double z_clear = std::max(grasp.z + 0.10, target.z + 0.06);
  // The duplicated release waypoints make the expert dwell in place before
  // opening, so release timing in the labels has slack for the policy.
  return {
      {{grasp.x, grasp.y, grasp.z + 0.06}, 0.0},
      {grasp, 0.0},
      {grasp, 1.0},  // close
      {{grasp.x, grasp.y, z_clear}, 1.0},
      {{target.x, target.y, z_clear}, 1.0},
      {target, 1.0},
      {target, 1.0},  // dwell
      {target, 1.0},  // dwell
      {target, 0.0},  // open
  };
}

}  // namespace

Demonstration scripted_expert(const SceneInstance& scene, double noise,
                              std::uint64_t noise_seed) {
  Demonstration demo;
  demo.scene = scene;
  SimState state = initial_state(scene);
  auto targets = expert_targets(scene);
  std::size_t wp = 0;
  const double cap = scene.spec.step_cap;
  const double arrive_tol = noise > 0.0 ? std::max(1e-3, 0.25 * noise) : 1e-9;
  Rng noise_rng(hash_combine(noise_seed, scene.seed));
  for (int t = 0; t < scene.spec.max_steps && wp < targets.size(); ++t) {
    const auto& [target, grip] = targets[wp];
    Point3 d = target - state.gripper;
    Action action{std::clamp(d.x, -cap, cap), std::clamp(d.y, -cap, cap),
                  std::clamp(d.z, -cap, cap), grip};
    demo.gripper.push_back({state.gripper.x, state.gripper.y, state.gripper.z,
                            state.closed ? 1.0 : 0.0});
    std::vector<Point3> pos = state.operated.points;
    demo.operated_positions.push_back(std::move(pos));
    demo.actions.push_back(action);
    Action exec = action;
    if (noise > 0.0) {
      // Perturb transit steps but converge precisely onto waypoints: the
      // noise fades as the gripper closes in, so grip toggles happen at
      // well-placed poses and the recorded labels stay corrective.
      double sigma = noise * std::min(1.0, d.norm() / 0.04);
      for (int k = 0; k < 3; ++k)
        exec[k] = std::clamp(exec[k] + sigma * noise_rng.gaussian(), -cap, cap);
    }
    bool was_attached = state.attached;
    step(scene, state, exec);
    if (!was_attached && state.attached && demo.grasp_step < 0)
      demo.grasp_step = static_cast<int>(demo.actions.size());
    Point3 err = target - state.gripper;
    bool arrived = std::max({std::abs(err.x), std::abs(err.y), std::abs(err.z)}) < arrive_tol;
    bool grip_matches = (grip > 0.5) == state.closed;
    if (arrived && grip_matches) ++wp;
  }
  demo.success = success(scene, state);
  if (!demo.success) throw Error("expert-failed", scene.spec.name);
  return demo;
}

DemoAnnotation make_annotation(const SceneInstance& scene) {
  DemoAnnotation ann;
  ann.demo_cloud = scene.operated;
  ann.manipulation_index = scene.manipulation_index;
  ann.reference_indices = scene.reference_indices;
  ann.category = scene.spec.operated_category;
  ann.grasp_orientation = scene.demo_grasp_orientation;
  if (ann.category == ObjectCategory::Deformable) ann.fixed_orientation = Rotation3::identity();
  return ann;
}

}  // namespace hgm::sim
