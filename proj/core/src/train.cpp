#include "hgm/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hgm/io.hpp"

namespace hgm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kOpTokenSeed = 0x6f70746f6bull;
constexpr std::uint64_t kBgTokenSeed = 0x6267746f6bull;
constexpr std::uint64_t kGlobalSeed = 0x676c6f62ull;
constexpr std::uint64_t kSamplerSeed = 0x73616d70ull;
constexpr std::uint64_t kAnchorOpSeed = 0x616e636f70ull;
constexpr std::uint64_t kAnchorBgSeed = 0x616e636267ull;
constexpr std::uint64_t kShuffleSeed = 0x73687566ull;
constexpr std::uint64_t kNoiseSeed = 0x6e6f6973ull;

// The no-mfm variant swaps providers (build_registry forces the rigid one
// for every category) but keeps the category-based descriptor route, so
// descriptor widths match across variants.
bool uses_pca_route(ObjectCategory c) { return c != ObjectCategory::Deformable; }

int semantic_dim(const TaskConfig& cfg, ObjectCategory eff) {
  return uses_pca_route(eff) ? cfg.pca_dim : cfg.num_anchors;
}

Matrix vstack(const std::vector<Matrix>& parts) {
  int rows = 0, cols = parts.empty() ? 0 : parts.front().cols;
  for (const Matrix& m : parts) {
    if (m.cols != cols) throw Error("dim-mismatch", "vstack");
    rows += m.rows;
  }
  Matrix out(rows, cols);
  int r = 0;
  for (const Matrix& m : parts) {
    std::copy(m.data.begin(), m.data.end(), out.row(r));
    r += m.rows;
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("io-error", "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("io-error", "cannot write " + path);
  f << text;
  if (!f) throw Error("io-error", "write failed " + path);
}

json rotation_to_json(const Rotation3& r) { return json::array({r.w, r.x, r.y, r.z}); }

Rotation3 rotation_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error("bad-checkpoint", "rotation");
  return Rotation3{j[0], j[1], j[2], j[3]};
}

}  // namespace

Dataset generate_demos(const TaskConfig& cfg, const std::string& split, int num,
                       std::uint64_t seed) {
  if (num <= 0) throw Error("bad-arg", "num must be positive");
  Dataset data;
  data.config = cfg;
  data.split = split;
  for (int i = 0; i < num; ++i) {
    sim::SceneInstance scene = sim::make_task(cfg.task, split, seed + std::uint64_t(i));
    try {
      data.episodes.push_back(sim::scripted_expert(scene, cfg.demo_noise, seed + std::uint64_t(i)));
    } catch (const Error& e) {
      if (e.code() != "expert-failed") throw;
      data.complete = false;
    }
  }
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(dir);
  json eps = json::array();
  for (std::size_t i = 0; i < data.episodes.size(); ++i) {
    const sim::Demonstration& d = data.episodes[i];
    int T = static_cast<int>(d.actions.size());
    int N = d.scene.operated.size();
    io::Blob actions, gripper, positions;
    actions.dims = {std::uint32_t(T), 4};
    gripper.dims = {std::uint32_t(T), 4};
    positions.dims = {std::uint32_t(T), std::uint32_t(N), 3};
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < 4; ++k) actions.f32.push_back(float(d.actions[t][k]));
      for (int k = 0; k < 4; ++k) gripper.f32.push_back(float(d.gripper[t][k]));
      for (const Point3& p : d.operated_positions[t]) {
        positions.f32.push_back(float(p.x));
        positions.f32.push_back(float(p.y));
        positions.f32.push_back(float(p.z));
      }
    }
    std::string base = "ep" + std::to_string(i);
    io::write_blob(dir + "/" + base + "_actions.bin", actions);
    io::write_blob(dir + "/" + base + "_gripper.bin", gripper);
    io::write_blob(dir + "/" + base + "_positions.bin", positions);
    eps.push_back(json{{"seed", d.scene.seed},
                       {"length", T},
                       {"points", N},
                       {"grasp_step", d.grasp_step},
                       {"success", d.success},
                       {"actions_file", base + "_actions.bin"},
                       {"gripper_file", base + "_gripper.bin"},
                       {"positions_file", base + "_positions.bin"}});
  }
  json manifest{{"schema", 1},
                {"config", json::parse(task_config_to_json(data.config))},
                {"split", data.split},
                {"complete", data.complete},
                {"episodes", eps}};
  write_text(dir + "/manifest.json", manifest.dump(2));
}

Dataset load_dataset(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw Error("bad-dataset", e.what());
  }
  Dataset data;
  try {
    data.config = task_config_from_json(manifest.at("config").dump());
    data.split = manifest.at("split");
    data.complete = manifest.at("complete");
    for (const json& ej : manifest.at("episodes")) {
      sim::Demonstration d;
      d.scene = sim::make_task(data.config.task, data.split, ej.at("seed").get<std::uint64_t>());
      int T = ej.at("length");
      int N = ej.at("points");
      if (N != d.scene.operated.size()) throw Error("bad-dataset", "point count mismatch");
      d.grasp_step = ej.at("grasp_step");
      d.success = ej.at("success");
      io::Blob actions = io::read_blob(dir + "/" + ej.at("actions_file").get<std::string>());
      io::Blob gripper = io::read_blob(dir + "/" + ej.at("gripper_file").get<std::string>());
      io::Blob positions = io::read_blob(dir + "/" + ej.at("positions_file").get<std::string>());
      if (actions.dims != std::vector<std::uint32_t>{std::uint32_t(T), 4} ||
          gripper.dims != std::vector<std::uint32_t>{std::uint32_t(T), 4} ||
          positions.dims != std::vector<std::uint32_t>{std::uint32_t(T), std::uint32_t(N), 3})
        throw Error("bad-dataset", "array shape mismatch");
      for (int t = 0; t < T; ++t) {
        sim::Action a;
        std::array<double, 4> g;
        for (int k = 0; k < 4; ++k) {
          a[k] = actions.f32[std::size_t(t) * 4 + k];
          g[k] = gripper.f32[std::size_t(t) * 4 + k];
        }
        d.actions.push_back(a);
        d.gripper.push_back(g);
        std::vector<Point3> pts(N);
        for (int n = 0; n < N; ++n) {
          const float* p = positions.f32.data() + (std::size_t(t) * N + n) * 3;
          pts[n] = Point3{p[0], p[1], p[2]};
        }
        d.operated_positions.push_back(std::move(pts));
      }
      data.episodes.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw Error("bad-dataset", e.what());
  }
  return data;
}

PreparedScene Bundle::prepare(const sim::SceneInstance& scene) const {
  ProviderRegistry registry = build_registry(config);
  ObjectCategory op_cat = scene.spec.operated_category;
  ObjectCategory bg_cat = scene.spec.background_category;

  DescriptorContext op_ctx, bg_ctx;
  if (uses_pca_route(op_cat)) op_ctx.pca = pca;
  else op_ctx.anchors = op_anchors;
  if (uses_pca_route(bg_cat)) bg_ctx.pca = pca;
  else bg_ctx.anchors = bg_anchors;

  DescriptorSet op_set =
      build_descriptors(scene.operated, op_cat, *provider_for(op_cat, registry), op_ctx);
  DescriptorSet bg_set =
      build_descriptors(scene.background, bg_cat, *provider_for(bg_cat, registry), bg_ctx);
  if (op_set.descriptors.cols != op_sem_dim + 3 || bg_set.descriptors.cols != bg_sem_dim + 3)
    throw Error("desc-dim", "descriptor width does not match the trained bundle");

  int m = config.policy.fusion_tokens;
  PreparedScene prep;
  prep.op_tokens = fps_indices(scene.operated, m, hash_combine(scene.seed, kOpTokenSeed));
  prep.bg_tokens = fps_indices(scene.background, m, hash_combine(scene.seed, kBgTokenSeed));
  prep.op_sem = Matrix(int(prep.op_tokens.size()), op_sem_dim);
  for (std::size_t i = 0; i < prep.op_tokens.size(); ++i)
    for (int j = 0; j < op_sem_dim; ++j)
      prep.op_sem(int(i), j) = op_set.descriptors(prep.op_tokens[i], j);
  prep.bg_desc = Matrix(int(prep.bg_tokens.size()), bg_sem_dim + 3);
  for (std::size_t i = 0; i < prep.bg_tokens.size(); ++i)
    for (int j = 0; j < bg_sem_dim + 3; ++j)
      prep.bg_desc(int(i), j) = bg_set.descriptors(prep.bg_tokens[i], j);
  return prep;
}

Observation Bundle::make_observation(const sim::SceneInstance& scene, const PreparedScene& prep,
                                     const std::vector<Point3>& operated_points,
                                     const std::array<double, 4>& gripper, int t) const {
  if (int(operated_points.size()) != scene.operated.size())
    throw Error("dim-mismatch", "operated point count");
  Observation obs;
  PointCloud merged;
  merged.points = operated_points;
  merged.points.insert(merged.points.end(), scene.background.points.begin(),
                       scene.background.points.end());
  obs.global_cloud = fps_downsample(
      merged, config.policy.n_points,
      hash_combine(hash_combine(scene.seed, kGlobalSeed), std::uint64_t(t)));
  obs.joints.assign(gripper.begin(), gripper.end());
  obs.operated_desc = Matrix(prep.op_sem.rows, op_sem_dim + 3);
  for (int i = 0; i < prep.op_sem.rows; ++i) {
    for (int j = 0; j < op_sem_dim; ++j) obs.operated_desc(i, j) = prep.op_sem(i, j);
    const Point3& p = operated_points[prep.op_tokens[i]];
    obs.operated_desc(i, op_sem_dim) = float(p.x);
    obs.operated_desc(i, op_sem_dim + 1) = float(p.y);
    obs.operated_desc(i, op_sem_dim + 2) = float(p.z);
  }
  obs.background_desc = prep.bg_desc;
  return obs;
}

Bundle train_policy(const TaskConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  if (data.episodes.empty()) throw Error("bad-dataset", "no episodes");
  const sim::SceneInstance& first = data.episodes.front().scene;
  ProviderRegistry registry = build_registry(cfg);
  ObjectCategory op_cat = first.spec.operated_category;
  ObjectCategory bg_cat = first.spec.background_category;
  auto op_provider = provider_for(op_cat, registry);
  auto bg_provider = provider_for(bg_cat, registry);

  Bundle bundle;
  bundle.config = cfg;
  bundle.op_sem_dim = semantic_dim(cfg, op_cat);
  bundle.bg_sem_dim = semantic_dim(cfg, bg_cat);

  // Fit the shared rigid-route projection on all rigid-route features and
  // freeze deformable-route anchors from the first demonstration.
  std::vector<Matrix> pca_pool;
  for (const sim::Demonstration& d : data.episodes) {
    if (uses_pca_route(op_cat)) pca_pool.push_back(op_provider->compute(d.scene.operated));
    if (uses_pca_route(bg_cat)) pca_pool.push_back(bg_provider->compute(d.scene.background));
  }
  if (!pca_pool.empty()) bundle.pca = fit_pca(vstack(pca_pool), cfg.pca_dim);
  if (!uses_pca_route(op_cat)) {
    Matrix feats = op_provider->compute(first.operated);
    std::vector<int> idx =
        fps_indices(first.operated, cfg.num_anchors, hash_combine(cfg.seed, kAnchorOpSeed));
    Matrix anchors(int(idx.size()), feats.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(feats.row(idx[i]), feats.row(idx[i]) + feats.cols, anchors.row(int(i)));
    bundle.op_anchors = std::move(anchors);
  }
  if (!uses_pca_route(bg_cat)) {
    Matrix feats = bg_provider->compute(first.background);
    std::vector<int> idx =
        fps_indices(first.background, cfg.num_anchors, hash_combine(cfg.seed, kAnchorBgSeed));
    Matrix anchors(int(idx.size()), feats.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(feats.row(idx[i]), feats.row(idx[i]) + feats.cols, anchors.row(int(i)));
    bundle.bg_anchors = std::move(anchors);
  }

  bundle.annotation = sim::make_annotation(first);
  bundle.annotation.demo_cloud.set_payload("features",
                                           op_provider->compute(bundle.annotation.demo_cloud));
  bundle.annotation.validate();

  PolicyConfig pc = effective_policy_config(cfg);
  bundle.policy = std::make_unique<Policy>(pc, bundle.bg_sem_dim + 3, bundle.op_sem_dim + 3,
                                           cfg.seed);

  // Precompute observations and chunked samples for every demo step.
  std::vector<Policy::Sample> samples;
  std::vector<Matrix> all_chunks;
  for (const sim::Demonstration& d : data.episodes) {
    PreparedScene prep = bundle.prepare(d.scene);
    int T = static_cast<int>(d.actions.size());
    std::vector<Observation> obs;
    obs.reserve(T);
    for (int t = 0; t < T; ++t)
      obs.push_back(bundle.make_observation(d.scene, prep, d.operated_positions[t], d.gripper[t], t));
    for (int t0 = 0; t0 < T; ++t0) {
      Policy::Sample s;
      for (int k = pc.n_obs_steps - 1; k >= 0; --k) s.window.push_back(obs[std::max(0, t0 - k)]);
      s.chunk = Matrix(pc.horizon, pc.action_dim);
      for (int h = 0; h < pc.horizon; ++h) {
        const sim::Action& a = d.actions[std::min(t0 + h, T - 1)];
        for (int k = 0; k < pc.action_dim; ++k) s.chunk(h, k) = float(a[k]);
      }
      all_chunks.push_back(s.chunk);
      samples.push_back(std::move(s));
    }
  }
  bundle.policy->norm_stats() = NormStats::fit(all_chunks);

  long n = static_cast<long>(samples.size());
  long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  diff::LrSchedule schedule{cfg.lr, cfg.warmup_steps, long(cfg.epochs) * steps_per_epoch};

  int threads = opts.threads > 0 ? opts.threads : worker_threads();
  Rng shuffle_rng(hash_combine(cfg.seed, kShuffleSeed));
  Rng noise_rng(hash_combine(cfg.seed, kNoiseSeed));
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  if (opts.loss_log) *opts.loss_log << "step,loss,lr\n";

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(std::uint32_t(i))]);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (long b = 0; b < steps_per_epoch; ++b) {
      std::vector<const Policy::Sample*> batch;
      for (long k = b * cfg.batch_size; k < std::min(n, (b + 1) * cfg.batch_size); ++k)
        batch.push_back(&samples[order[k]]);
      double lr = diff::lr_at(schedule, ++step);
      double loss = bundle.policy->train_step(batch, noise_rng, lr, threads);
      epoch_loss += loss;
      ++epoch_batches;
      if (opts.loss_log) *opts.loss_log << step << "," << loss << "," << lr << "\n";
    }
    if (opts.progress)
      *opts.progress << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss "
                     << epoch_loss / double(epoch_batches) << "\n";
  }
  return bundle;
}

void save_bundle(const std::string& dir, const Bundle& bundle) {
  if (!bundle.policy) throw Error("bad-checkpoint", "bundle has no policy");
  fs::create_directories(dir);
  json params = json::object();
  int idx = 0;
  for (const auto& [name, tensor] : bundle.policy->params().snapshot()) {
    std::string file = "param_" + std::to_string(idx++) + ".bin";
    io::write_blob(dir + "/" + file, io::blob_from_tensor(tensor));
    params[name] = file;
  }
  const NormStats& stats = bundle.policy->norm_stats();
  io::Blob norm;
  norm.dims = {2, std::uint32_t(stats.lo.size())};
  norm.f32 = stats.lo;
  norm.f32.insert(norm.f32.end(), stats.hi.begin(), stats.hi.end());
  io::write_blob(dir + "/norm.bin", norm);

  json manifest{{"schema", 1},
                {"config", json::parse(task_config_to_json(bundle.config))},
                {"op_sem_dim", bundle.op_sem_dim},
                {"bg_sem_dim", bundle.bg_sem_dim},
                {"params", params},
                {"norm_file", "norm.bin"}};
  if (bundle.pca) {
    io::Blob mean;
    mean.dims = {std::uint32_t(bundle.pca->mean.size())};
    mean.f32 = bundle.pca->mean;
    io::write_blob(dir + "/pca_mean.bin", mean);
    io::write_blob(dir + "/pca_components.bin", io::blob_from_matrix(bundle.pca->components));
    manifest["pca"] = json{{"mean_file", "pca_mean.bin"}, {"components_file", "pca_components.bin"}};
  }
  if (bundle.op_anchors) {
    io::write_blob(dir + "/op_anchors.bin", io::blob_from_matrix(*bundle.op_anchors));
    manifest["op_anchors_file"] = "op_anchors.bin";
  }
  if (bundle.bg_anchors) {
    io::write_blob(dir + "/bg_anchors.bin", io::blob_from_matrix(*bundle.bg_anchors));
    manifest["bg_anchors_file"] = "bg_anchors.bin";
  }

  const DemoAnnotation& ann = bundle.annotation;
  io::Blob pts;
  pts.dims = {std::uint32_t(ann.demo_cloud.size()), 3};
  for (const Point3& p : ann.demo_cloud.points) {
    pts.f32.push_back(float(p.x));
    pts.f32.push_back(float(p.y));
    pts.f32.push_back(float(p.z));
  }
  io::write_blob(dir + "/demo_points.bin", pts);
  io::write_blob(dir + "/demo_features.bin", io::blob_from_matrix(ann.demo_cloud.payload("features")));
  json aj{{"manipulation_index", ann.manipulation_index},
          {"reference_indices", ann.reference_indices},
          {"category", category_name(ann.category)},
          {"grasp_orientation", rotation_to_json(ann.grasp_orientation)},
          {"points_file", "demo_points.bin"},
          {"features_file", "demo_features.bin"}};
  if (ann.fixed_orientation) aj["fixed_orientation"] = rotation_to_json(*ann.fixed_orientation);
  manifest["annotation"] = aj;
  write_text(dir + "/manifest.json", manifest.dump(2));
}

Bundle load_bundle(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw Error("bad-checkpoint", e.what());
  }
  Bundle bundle;
  try {
    bundle.config = task_config_from_json(manifest.at("config").dump());
    bundle.op_sem_dim = manifest.at("op_sem_dim");
    bundle.bg_sem_dim = manifest.at("bg_sem_dim");
    if (manifest.contains("pca")) {
      PcaModel pca;
      pca.mean = io::read_blob(dir + "/" + manifest["pca"].at("mean_file").get<std::string>()).f32;
      pca.components = io::matrix_from_blob(
          io::read_blob(dir + "/" + manifest["pca"].at("components_file").get<std::string>()));
      bundle.pca = std::move(pca);
    }
    if (manifest.contains("op_anchors_file"))
      bundle.op_anchors = io::matrix_from_blob(
          io::read_blob(dir + "/" + manifest.at("op_anchors_file").get<std::string>()));
    if (manifest.contains("bg_anchors_file"))
      bundle.bg_anchors = io::matrix_from_blob(
          io::read_blob(dir + "/" + manifest.at("bg_anchors_file").get<std::string>()));

    const json& aj = manifest.at("annotation");
    DemoAnnotation& ann = bundle.annotation;
    io::Blob pts = io::read_blob(dir + "/" + aj.at("points_file").get<std::string>());
    if (pts.dims.size() != 2 || pts.dims[1] != 3) throw Error("bad-checkpoint", "demo points");
    for (std::uint32_t i = 0; i < pts.dims[0]; ++i)
      ann.demo_cloud.points.push_back(
          Point3{pts.f32[i * 3], pts.f32[i * 3 + 1], pts.f32[i * 3 + 2]});
    ann.demo_cloud.set_payload(
        "features", io::matrix_from_blob(io::read_blob(dir + "/" + aj.at("features_file").get<std::string>())));
    ann.manipulation_index = aj.at("manipulation_index");
    ann.reference_indices = aj.at("reference_indices").get<std::vector<int>>();
    ann.category = category_from_name(aj.at("category"));
    ann.grasp_orientation = rotation_from_json(aj.at("grasp_orientation"));
    if (aj.contains("fixed_orientation"))
      ann.fixed_orientation = rotation_from_json(aj.at("fixed_orientation"));
    ann.validate();

    PolicyConfig pc = effective_policy_config(bundle.config);
    bundle.policy = std::make_unique<Policy>(pc, bundle.bg_sem_dim + 3, bundle.op_sem_dim + 3,
                                             bundle.config.seed);
    std::map<std::string, diff::Tensor> values;
    for (const auto& [name, file] : manifest.at("params").items())
      values.emplace(name, io::tensor_from_blob(io::read_blob(dir + "/" + file.get<std::string>())));
    bundle.policy->params().load(values);

    io::Blob norm = io::read_blob(dir + "/" + manifest.at("norm_file").get<std::string>());
    if (norm.dims.size() != 2 || norm.dims[0] != 2) throw Error("bad-checkpoint", "norm stats");
    NormStats stats;
    stats.lo.assign(norm.f32.begin(), norm.f32.begin() + norm.dims[1]);
    stats.hi.assign(norm.f32.begin() + norm.dims[1], norm.f32.end());
    bundle.policy->norm_stats() = stats;
  } catch (const json::exception& e) {
    throw Error("bad-checkpoint", e.what());
  }
  return bundle;
}

void set_variant(Bundle& bundle, const std::string& variant) {
  if (variant != "full" && variant != "no-cg" && variant != "no-pe" && variant != "no-mfm")
    throw Error("bad-config", "unknown variant " + variant);
  if (!bundle.policy) throw Error("bad-checkpoint", "bundle has no policy");
  if (variant == bundle.config.variant) return;
  // Architecture variants drop parameters (no-pe has no spatial stream), so
  // the full parameter set is retained across switches and the live values
  // merged over it.
  for (auto& [name, value] : bundle.policy->params().snapshot())
    bundle.master_params[name] = std::move(value);
  NormStats stats = bundle.policy->norm_stats();
  bundle.config.variant = variant;
  bundle.policy = std::make_unique<Policy>(effective_policy_config(bundle.config),
                                           bundle.bg_sem_dim + 3, bundle.op_sem_dim + 3,
                                           bundle.config.seed);
  bundle.policy->params().load(bundle.master_params);
  bundle.policy->norm_stats() = stats;
}

namespace {

// Drives the gripper through capped straight-line steps toward a waypoint,
// recording an observation before each step so the policy window carries the
// approach history into stage 2.
void drive_to(const sim::SceneInstance& scene, sim::SimState& state, const Point3& target,
              double grip, const std::function<void()>& observe) {
  while (state.steps < scene.spec.max_steps) {
    Point3 delta = target - state.gripper;
    if (std::abs(delta.x) < 1e-9 && std::abs(delta.y) < 1e-9 && std::abs(delta.z) < 1e-9) return;
    observe();
    sim::step(scene, state, {delta.x, delta.y, delta.z, grip});
  }
}

}  // namespace

sim::EpisodeResult run_policy_episode(const Bundle& bundle, const sim::SceneInstance& scene,
                                      std::uint64_t seed) {
  if (!bundle.policy) throw Error("bad-checkpoint", "bundle has no policy");
  const PolicyConfig& pc = bundle.policy->config();
  sim::SimState state = sim::initial_state(scene);
  PreparedScene prep = bundle.prepare(scene);
  std::deque<Observation> window;
  auto observe = [&] {
    std::array<double, 4> joints{state.gripper.x, state.gripper.y, state.gripper.z,
                                 state.closed ? 1.0 : 0.0};
    window.push_back(
        bundle.make_observation(scene, prep, state.operated.points, joints, state.steps));
    while (int(window.size()) > pc.n_obs_steps) window.pop_front();
  };

  if (bundle.config.variant != "no-cg") {
    // Stage 1: correspondence grasp. Features for the live target come from
    // the same provider the annotation was built with.
    ProviderRegistry registry = build_registry(bundle.config);
    ObjectCategory op_cat = scene.spec.operated_category;
    PointCloud target = scene.operated;
    target.set_payload("features", provider_for(op_cat, registry)->compute(target));
    GraspPose pose;
    try {
      pose = plan_grasp(bundle.annotation, target);
    } catch (const Error&) {
      return sim::classify_result(scene, state);
    }
    drive_to(scene, state, pose.position + Point3{0.0, 0.0, 0.06}, 0.0, observe);
    drive_to(scene, state, pose.position, 0.0, observe);
    if (state.steps < scene.spec.max_steps) {
      observe();
      sim::step(scene, state, {0.0, 0.0, 0.0, 1.0});
    }
    if (!state.attached) return sim::classify_result(scene, state);
  }

  // Stage 2: receding-horizon diffusion policy.
  std::deque<sim::Action> pending;
  std::uint64_t sampler_base = hash_combine(seed, kSamplerSeed);
  std::uint64_t calls = 0;
  while (state.steps < scene.spec.max_steps) {
    observe();
    if (pending.empty()) {
      std::vector<Observation> padded;
      for (int k = int(window.size()); k < pc.n_obs_steps; ++k) padded.push_back(window.front());
      padded.insert(padded.end(), window.begin(), window.end());
      Matrix chunk = bundle.policy->ddim_sample(padded, hash_combine(sampler_base, calls++));
      for (int h = 0; h < pc.n_action_steps; ++h)
        pending.push_back({chunk(h, 0), chunk(h, 1), chunk(h, 2),
                           std::clamp(double(chunk(h, 3)), 0.0, 1.0)});
    }
    sim::Action a = pending.front();
    pending.pop_front();
    sim::step(scene, state, a);
    if (sim::success(scene, state)) break;
  }
  return sim::classify_result(scene, state);
}

EvalReport evaluate(const Bundle& bundle, const std::string& split, int episodes, int runs,
                    std::uint64_t seed) {
  if (episodes <= 0 || runs <= 0) throw Error("bad-arg", "episodes and runs must be positive");
  EvalReport report;
  report.task = bundle.config.task;
  report.split = split;
  report.variant = bundle.config.variant;
  report.episodes = episodes;
  report.runs = runs;
  long calls_before = coord_attention_calls().load();
  for (int r = 0; r < runs; ++r) {
    int ok = 0;
    for (int i = 0; i < episodes; ++i) {
      std::uint64_t ep_seed = seed + std::uint64_t(r) * 1000 + std::uint64_t(i);
      sim::SceneInstance scene = sim::make_task(bundle.config.task, split, ep_seed);
      sim::EpisodeResult res = run_policy_episode(bundle, scene, ep_seed);
      if (res.success) ++ok;
      else ++report.failure_histogram[res.failure_stage];
    }
    report.run_rates.push_back(double(ok) / double(episodes));
  }
  for (double r : report.run_rates) report.mean_rate += r;
  report.mean_rate /= double(runs);
  for (double r : report.run_rates)
    report.std_rate += (r - report.mean_rate) * (r - report.mean_rate);
  report.std_rate = std::sqrt(report.std_rate / double(runs));
  report.coord_attention_calls = coord_attention_calls().load() - calls_before;
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json j{{"task", report.task},
         {"split", report.split},
         {"variant", report.variant},
         {"episodes", report.episodes},
         {"runs", report.runs},
         {"run_rates", report.run_rates},
         {"mean_rate", report.mean_rate},
         {"std_rate", report.std_rate},
         {"failure_histogram", report.failure_histogram},
         {"coord_attention_calls", report.coord_attention_calls}};
  return j.dump(2);
}

}  // namespace hgm::pipeline
