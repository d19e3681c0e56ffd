#pragma once

#include <span>
#include <vector>

#include "hgm/fusion.hpp"
#include "hgm/geometry.hpp"

namespace hgm {

struct PolicyConfig {
  int horizon = 8;
  int n_obs_steps = 3;
  int n_action_steps = 4;
  int action_dim = 4;  // dx, dy, dz, gripper
  int joint_dim = 4;   // gripper xyz + open/close
  int n_points = 128;  // global cloud size after FPS
  int cloud_feat_dim = 64;
  int joint_feat_dim = 32;
  std::vector<int> cloud_mlp_widths = {64};
  std::vector<int> joint_mlp_widths = {32};
  std::vector<int> denoiser_widths = {512, 512, 512};
  int timestep_embed_dim = 32;
  int t_train = 100;
  int num_inference_steps = 10;
  int fusion_tokens = 32;  // descriptor tokens per object fed to fusion
  FusionConfig fusion;

  int chunk_size() const { return horizon * action_dim; }
  int condition_dim() const {
    return n_obs_steps * (cloud_feat_dim + joint_feat_dim) + fusion.model_dim;
  }
};

// Squared-cosine alpha-bar schedule; alpha_bar[0] = 1, strictly decreasing.
struct NoiseSchedule {
  int t_train = 100;
  std::vector<double> alpha_bar;  // length t_train + 1

  static NoiseSchedule squared_cosine(int t_train, double s = 0.008);
  void validate() const;
};

// Per-dimension affine map of action values to [-1, 1]. Degenerate
// dimensions (hi == lo) pass through unchanged.
struct NormStats {
  std::vector<float> lo, hi;

  static NormStats fit(const std::vector<Matrix>& chunks);
};

Matrix normalize_actions(const Matrix& chunk, const NormStats& stats);
Matrix denormalize_actions(const Matrix& chunk, const NormStats& stats);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise on [horizon, A].
Matrix add_noise(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& schedule);

struct Observation {
  PointCloud global_cloud;     // n_points rows
  std::vector<float> joints;   // joint_dim
  Matrix operated_desc;        // fusion_tokens x (d_op + 3)
  Matrix background_desc;      // fusion_tokens x (d_bg + 3)
};

// Condition encoders + denoiser over a shared parameter store.
class Policy {
 public:
  Policy(PolicyConfig cfg, int background_desc_dim, int operated_desc_dim, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }
  const FusionModule& fusion() const { return *fusion_; }
  NoiseSchedule& schedule() { return schedule_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  NormStats& norm_stats() { return stats_; }
  const NormStats& norm_stats() const { return stats_; }

  // Holistic condition vector [1, condition_dim] as a graph node.
  diff::NodeRef build_condition(std::span<const Observation> window) const;

  // Epsilon prediction for a noisy normalized chunk at timestep t.
  diff::NodeRef denoise(const diff::NodeRef& x_t, int t, const diff::NodeRef& condition) const;

  struct Sample {
    std::vector<Observation> window;  // length n_obs_steps
    Matrix chunk;                     // horizon x action_dim, unnormalized
  };

  // One AdamW step on the epsilon-prediction MSE over the batch; returns the
  // batch loss. Per-item noise draws come from `rng` in item order.
  double train_step(const std::vector<const Sample*>& batch, Rng& rng, double lr,
                    int num_threads = 1);

  // Deterministic DDIM sampling; returns an unnormalized action chunk.
  Matrix ddim_sample(std::span<const Observation> window, std::uint64_t seed) const;

 private:
  struct Mlp {
    std::vector<diff::NodeRef> weights, biases;
    diff::NodeRef apply(const diff::NodeRef& x) const;
  };
  Mlp make_mlp(Rng& rng, const std::string& prefix, int in_dim, const std::vector<int>& hidden,
               int out_dim);
  std::vector<float> timestep_embedding(int t) const;

  PolicyConfig cfg_;
  diff::ParameterStore store_;
  std::unique_ptr<FusionModule> fusion_;
  Mlp cloud_mlp_, joint_mlp_, denoiser_;
  NoiseSchedule schedule_;
  NormStats stats_;
  long opt_step_ = 0;
};

// Worker-thread count: HGM_THREADS if set, else the hardware concurrency.
int worker_threads();

}  // namespace hgm
