#include <benchmark/benchmark.h>

#include "hgm/config.hpp"
#include "hgm/correspondence.hpp"
#include "hgm/policy.hpp"
#include "hgm/simenv.hpp"

using namespace hgm;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (float& v : m.data) v = float(rng.gaussian());
  return m;
}

void bm_match_point(benchmark::State& state) {
  Rng rng(1);
  Matrix target = random_matrix(int(state.range(0)), 64, rng);
  std::vector<float> query(64);
  for (float& v : query) v = float(rng.gaussian());
  for (auto _ : state) benchmark::DoNotOptimize(match_point(query, target));
}

void bm_provider_compute(benchmark::State& state) {
  TaskConfig cfg = default_task_config("place-synth");
  ProviderRegistry registry = build_registry(cfg);
  const FeatureProvider* provider = provider_for(ObjectCategory::Rigid, registry).get();
  sim::SceneInstance scene = sim::make_task("place-synth", "train", 7);
  for (auto _ : state) benchmark::DoNotOptimize(provider->compute(scene.operated));
}

void bm_plan_grasp(benchmark::State& state) {
  TaskConfig cfg = default_task_config("place-synth");
  ProviderRegistry registry = build_registry(cfg);
  const FeatureProvider* provider = provider_for(ObjectCategory::Rigid, registry).get();
  sim::SceneInstance scene = sim::make_task("place-synth", "train", 7);
  DemoAnnotation ann = sim::make_annotation(scene);
  ann.demo_cloud.set_payload("features", provider->compute(ann.demo_cloud));
  PointCloud target = scene.operated;
  target.set_payload("features", provider->compute(target));
  for (auto _ : state) benchmark::DoNotOptimize(plan_grasp(ann, target));
}

PolicyConfig bench_policy_config() {
  PolicyConfig cfg;
  cfg.n_points = 32;
  cfg.cloud_feat_dim = 16;
  cfg.joint_feat_dim = 8;
  cfg.cloud_mlp_widths = {16};
  cfg.joint_mlp_widths = {8};
  cfg.denoiser_widths = {128, 128};
  cfg.fusion.model_dim = 16;
  cfg.fusion.heads = 2;
  cfg.fusion.semantic_encoder_widths = {16};
  cfg.fusion.spatial_encoder_widths = {16};
  return cfg;
}

std::vector<Observation> random_window(const PolicyConfig& cfg, Rng& rng) {
  std::vector<Observation> win;
  for (int k = 0; k < cfg.n_obs_steps; ++k) {
    Observation obs;
    for (int i = 0; i < cfg.n_points; ++i)
      obs.global_cloud.points.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    for (int j = 0; j < cfg.joint_dim; ++j) obs.joints.push_back(float(rng.gaussian()));
    obs.operated_desc = random_matrix(8, 6, rng);
    obs.background_desc = random_matrix(8, 7, rng);
    win.push_back(obs);
  }
  return win;
}

void bm_ddim_sample(benchmark::State& state) {
  PolicyConfig cfg = bench_policy_config();
  Policy policy(cfg, 7, 6, 42);
  Rng rng(2);
  std::vector<Observation> win = random_window(cfg, rng);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(policy.ddim_sample(win, seed++));
}

void bm_train_step(benchmark::State& state) {
  PolicyConfig cfg = bench_policy_config();
  Policy policy(cfg, 7, 6, 42);
  Rng rng(3);
  Policy::Sample sample;
  sample.window = random_window(cfg, rng);
  sample.chunk = Matrix(cfg.horizon, cfg.action_dim);
  for (float& v : sample.chunk.data) v = float(rng.uniform(-0.05, 0.05));
  policy.norm_stats() = NormStats::fit({sample.chunk});
  std::vector<const Policy::Sample*> batch(int(state.range(0)), &sample);
  Rng noise(4);
  for (auto _ : state) benchmark::DoNotOptimize(policy.train_step(batch, noise, 1e-4, 1));
}

void bm_sim_episode(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    sim::SceneInstance scene = sim::make_task("place-synth", "train", seed++);
    benchmark::DoNotOptimize(sim::scripted_expert(scene));
  }
}

}  // namespace

BENCHMARK(bm_match_point)->Arg(128)->Arg(1024);
BENCHMARK(bm_provider_compute);
BENCHMARK(bm_plan_grasp);
BENCHMARK(bm_ddim_sample);
BENCHMARK(bm_train_step)->Arg(8)->Arg(32);
BENCHMARK(bm_sim_episode);

BENCHMARK_MAIN();
