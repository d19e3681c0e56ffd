#pragma once

#include <map>
#include <string>

#include "hgm/diff/graph.hpp"

namespace hgm::diff {

struct AdamWConfig {
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

// Named parameters with accumulated gradients and AdamW moments.
//
// With reparam_scale = c, parameters are stored in a basis scaled down by c
// and every handed-out reference multiplies the stored tensor by c. The
// represented function is unchanged, but Adam's normalized per-parameter
// updates then move the effective weights c times faster at a given lr.
class ParameterStore {
 public:
  explicit ParameterStore(double reparam_scale = 1.0) : scale_(reparam_scale) {}

  NodeRef create(const std::string& name, Tensor init);
  NodeRef get(const std::string& name) const;
  double reparam_scale() const { return scale_; }
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  // Adds `scale` times the table's gradient for each parameter reached.
  void accumulate(const GradTable& table, double scale = 1.0);
  void zero_grads();
  const Tensor& grad(const std::string& name) const;

  // Decoupled weight decay followed by a bias-corrected Adam update.
  void adamw_step(double lr, const AdamWConfig& cfg = {});

  long step_count() const { return step_; }
  std::map<std::string, Tensor> snapshot() const;          // parameter values by name
  void load(const std::map<std::string, Tensor>& values);  // shapes must match

 private:
  struct Entry {
    NodeRef node;  // stored (scaled-down) parameter leaf
    NodeRef ref;   // node times reparam_scale, used in graphs
    Tensor grad, m, v;
  };
  std::map<std::string, Entry> entries_;
  double scale_ = 1.0;
  long step_ = 0;
};

struct LrSchedule {
  double peak_lr = 1e-4;
  long warmup_steps = 500;
  long total_steps = 0;
};

// Linear warmup to peak_lr, then cosine decay to 0 at total_steps.
double lr_at(const LrSchedule& schedule, long step);

}  // namespace hgm::diff
