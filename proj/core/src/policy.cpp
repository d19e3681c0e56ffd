#include "hgm/policy.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

namespace hgm {

using diff::NodeRef;
using diff::Tensor;

NoiseSchedule NoiseSchedule::squared_cosine(int t_train, double s) {
  NoiseSchedule sched;
  sched.t_train = t_train;
  sched.alpha_bar.resize(t_train + 1);
  auto f = [&](double t) {
    double x = ((t / t_train + s) / (1.0 + s)) * 3.14159265358979323846 / 2.0;
    return std::cos(x) * std::cos(x);
  };
  double f0 = f(0.0);
  sched.alpha_bar[0] = 1.0;
  // The raw ratio can round to a beta of exactly 1 near t = t_train, so betas
  // are clipped at 0.999 and alpha_bar rebuilt from the clipped chain.
  for (int t = 1; t <= t_train; ++t) {
    double raw = f(double(t)) / f0;
    double beta = std::min(1.0 - raw / (f(double(t - 1)) / f0), 0.999);
    sched.alpha_bar[t] = sched.alpha_bar[t - 1] * (1.0 - beta);
  }
  sched.validate();
  return sched;
}

void NoiseSchedule::validate() const {
  if (static_cast<int>(alpha_bar.size()) != t_train + 1) throw Error("bad-schedule", "length");
  if (alpha_bar[0] != 1.0) throw Error("bad-schedule", "alpha_bar[0] must be 1");
  for (int t = 1; t <= t_train; ++t) {
    if (!(alpha_bar[t] < alpha_bar[t - 1])) throw Error("bad-schedule", "not strictly decreasing");
    double beta = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
    if (!(beta > 0.0 && beta < 1.0)) throw Error("bad-schedule", "beta out of (0,1)");
  }
}

NormStats NormStats::fit(const std::vector<Matrix>& chunks) {
  if (chunks.empty()) throw Error("empty-dataset", "NormStats::fit");
  int dim = chunks[0].cols;
  NormStats st;
  st.lo.assign(dim, std::numeric_limits<float>::max());
  st.hi.assign(dim, std::numeric_limits<float>::lowest());
  for (const Matrix& c : chunks)
    for (int i = 0; i < c.rows; ++i)
      for (int j = 0; j < dim; ++j) {
        st.lo[j] = std::min(st.lo[j], c(i, j));
        st.hi[j] = std::max(st.hi[j], c(i, j));
      }
  return st;
}

Matrix normalize_actions(const Matrix& chunk, const NormStats& stats) {
  Matrix out = chunk;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) {
      float lo = stats.lo[j], hi = stats.hi[j];
      if (hi > lo) out(i, j) = 2.0f * (out(i, j) - lo) / (hi - lo) - 1.0f;
    }
  return out;
}

Matrix denormalize_actions(const Matrix& chunk, const NormStats& stats) {
  Matrix out = chunk;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) {
      float lo = stats.lo[j], hi = stats.hi[j];
      if (hi > lo) out(i, j) = lo + 0.5f * (out(i, j) + 1.0f) * (hi - lo);
    }
  return out;
}

Matrix add_noise(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.t_train) throw Error("bad-step", "add_noise t out of range");
  double a = std::sqrt(schedule.alpha_bar[t]);
  double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  Matrix out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(a * x0.data[i] + b * eps.data[i]);
  return out;
}

int worker_threads() {
  if (const char* env = std::getenv("HGM_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace {

Tensor random_weight(int in_dim, int out_dim, Rng& rng, double gain = 1.0) {
  Tensor w({in_dim, out_dim});
  double sigma = gain * std::sqrt(2.0 / in_dim);
  for (float& v : w.data) v = static_cast<float>(sigma * rng.gaussian());
  return w;
}

}  // namespace

NodeRef Policy::Mlp::apply(const NodeRef& x) const {
  NodeRef h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = diff::affine(h, weights[i], biases[i]);
    if (i + 1 < weights.size()) h = diff::relu(h);
  }
  return h;
}

Policy::Mlp Policy::make_mlp(Rng& rng, const std::string& prefix, int in_dim,
                             const std::vector<int>& hidden, int out_dim) {
  Mlp mlp;
  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    double gain = (i + 2 == dims.size()) ? 0.5 : 1.0;  // calmer final layers
    mlp.weights.push_back(
        store_.create(prefix + ".w" + std::to_string(i), random_weight(dims[i], dims[i + 1], rng, gain)));
    mlp.biases.push_back(store_.create(prefix + ".b" + std::to_string(i), Tensor({1, dims[i + 1]})));
  }
  return mlp;
}

Policy::Policy(PolicyConfig cfg, int background_desc_dim, int operated_desc_dim,
               std::uint64_t seed)
    : cfg_(std::move(cfg)), schedule_(NoiseSchedule::squared_cosine(cfg_.t_train)) {
  Rng rng(seed);
  fusion_ = std::make_unique<FusionModule>(cfg_.fusion, background_desc_dim, operated_desc_dim,
                                           store_, rng, "fusion");
  cloud_mlp_ = make_mlp(rng, "cloud", 3, cfg_.cloud_mlp_widths, cfg_.cloud_feat_dim);
  joint_mlp_ = make_mlp(rng, "joint", cfg_.joint_dim, cfg_.joint_mlp_widths, cfg_.joint_feat_dim);
  int denoiser_in = cfg_.chunk_size() + cfg_.timestep_embed_dim + cfg_.condition_dim();
  denoiser_ = make_mlp(rng, "denoiser", denoiser_in, cfg_.denoiser_widths, cfg_.chunk_size());
  stats_.lo.assign(cfg_.action_dim, 0.0f);
  stats_.hi.assign(cfg_.action_dim, 0.0f);
}

std::vector<float> Policy::timestep_embedding(int t) const {
  const int d = cfg_.timestep_embed_dim;
  std::vector<float> emb(d);
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * double(i) / half);
    emb[i] = static_cast<float>(std::sin(t * freq));
    emb[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return emb;
}

NodeRef Policy::build_condition(std::span<const Observation> window) const {
  if (static_cast<int>(window.size()) != cfg_.n_obs_steps)
    throw Error("bad-window", "observation window length mismatch");
  std::vector<NodeRef> parts;
  for (const Observation& obs : window) {
    if (obs.global_cloud.size() != cfg_.n_points)
      throw Error("bad-window", "global cloud size mismatch");
    if (static_cast<int>(obs.joints.size()) != cfg_.joint_dim)
      throw Error("bad-window", "joint state size mismatch");
    Tensor pts({obs.global_cloud.size(), 3});
    for (int i = 0; i < obs.global_cloud.size(); ++i) {
      pts.at(i, 0) = static_cast<float>(obs.global_cloud.points[i].x);
      pts.at(i, 1) = static_cast<float>(obs.global_cloud.points[i].y);
      pts.at(i, 2) = static_cast<float>(obs.global_cloud.points[i].z);
    }
    parts.push_back(diff::max_rows(cloud_mlp_.apply(diff::constant(std::move(pts)))));
    parts.push_back(joint_mlp_.apply(diff::constant(Tensor::row(obs.joints))));
  }
  const Observation& latest = window.back();
  parts.push_back(fusion_->relational_feature(latest.operated_desc, latest.background_desc));
  return diff::concat_cols(parts);
}

NodeRef Policy::denoise(const NodeRef& x_t, int t, const NodeRef& condition) const {
  NodeRef emb = diff::constant(Tensor::row(timestep_embedding(t)));
  return denoiser_.apply(diff::concat_cols({x_t, emb, condition}));
}

double Policy::train_step(const std::vector<const Sample*>& batch, Rng& rng, double lr,
                          int num_threads) {
  const int b = static_cast<int>(batch.size());
  if (b == 0) throw Error("empty-dataset", "train_step");
  // Noise draws happen up front, in item order, so threading cannot
  // perturb the stream.
  std::vector<int> ts(b);
  std::vector<Matrix> epss(b);
  for (int i = 0; i < b; ++i) {
    ts[i] = 1 + static_cast<int>(rng.uniform_int(cfg_.t_train));
    Matrix eps(cfg_.horizon, cfg_.action_dim);
    for (float& v : eps.data) v = static_cast<float>(rng.gaussian());
    epss[i] = std::move(eps);
  }
  std::vector<double> losses(b, 0.0);
  std::vector<diff::GradTable> tables(b);
  auto work = [&](int begin, int stride) {
    for (int i = begin; i < b; i += stride) {
      const Sample& s = *batch[i];
      Matrix x0 = normalize_actions(s.chunk, stats_);
      Matrix xt = add_noise(x0, ts[i], epss[i], schedule_);
      Tensor xt_flat({1, cfg_.chunk_size()});
      xt_flat.data = xt.data;
      Tensor eps_flat({1, cfg_.chunk_size()});
      eps_flat.data = epss[i].data;
      NodeRef cond = build_condition(std::span<const Observation>(s.window));
      NodeRef pred = denoise(diff::constant(std::move(xt_flat)), ts[i], cond);
      // Per-item loss sums squared error over the chunk (mean is over the
      // batch), so an all-zero prediction scores about chunk_size.
      NodeRef loss = diff::scale(diff::mse(pred, diff::constant(std::move(eps_flat))),
                                 double(cfg_.chunk_size()));
      losses[i] = loss->value.data[0];
      tables[i] = diff::backward(loss);
    }
  };
  num_threads = std::max(1, std::min(num_threads, b));
  if (num_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < num_threads; ++w) pool.emplace_back(work, w, num_threads);
    for (auto& th : pool) th.join();
  }
  store_.zero_grads();
  for (int i = 0; i < b; ++i) store_.accumulate(tables[i], 1.0 / b);
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= b;
  if (!std::isfinite(loss)) throw Error("diverged", "training loss is not finite");
  store_.adamw_step(lr);
  return loss;
}

Matrix Policy::ddim_sample(std::span<const Observation> window, std::uint64_t seed) const {
  NodeRef condition = build_condition(window);
  Rng rng(seed);
  const int n = cfg_.chunk_size();
  std::vector<double> x(n);
  for (double& v : x) v = rng.gaussian();
  const int stride = cfg_.t_train / cfg_.num_inference_steps;
  if (stride < 1 || cfg_.t_train % cfg_.num_inference_steps != 0)
    throw Error("bad-schedule", "t_train must be a multiple of num_inference_steps");
  // Leading timestep spacing: evaluate at t = T - stride + 1, ..., 1 and land
  // on t = 0. Skipping t = T keeps the unclipped update well conditioned,
  // since 1/sqrt(alpha_bar[T]) is enormous under a cosine schedule.
  for (int i = 0; i < cfg_.num_inference_steps; ++i) {
    int t = cfg_.t_train - (i + 1) * stride + 1;
    int t_next = (i + 1 < cfg_.num_inference_steps) ? t - stride : 0;
    Tensor xt({1, n});
    for (int j = 0; j < n; ++j) xt.data[j] = static_cast<float>(x[j]);
    NodeRef eps_hat = denoise(diff::constant(std::move(xt)), t, condition);
    double ab_t = schedule_.alpha_bar[t];
    double ab_n = schedule_.alpha_bar[t_next];
    double sa = std::sqrt(ab_t), sb = std::sqrt(1.0 - ab_t);
    double na = std::sqrt(ab_n), nb = std::sqrt(1.0 - ab_n);
    for (int j = 0; j < n; ++j) {
      double e = eps_hat->value.data[j];
      double x0 = (x[j] - sb * e) / sa;
      x[j] = na * x0 + nb * e;
    }
  }
  Matrix chunk(cfg_.horizon, cfg_.action_dim);
  for (int j = 0; j < n; ++j) chunk.data[j] = static_cast<float>(x[j]);
  return denormalize_actions(chunk, stats_);
}

}  // namespace hgm
