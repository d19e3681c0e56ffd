#include "hgm/diff/optim.hpp"

#include <cmath>

namespace hgm::diff {

NodeRef ParameterStore::create(const std::string& name, Tensor init) {
  if (entries_.count(name)) throw Error("duplicate-param", name);
  Entry e;
  if (scale_ != 1.0)
    for (float& v : init.data) v = static_cast<float>(v / scale_);
  e.node = leaf(std::move(init));
  e.ref = scale_ == 1.0 ? e.node : scale(e.node, scale_);
  e.grad = Tensor::zeros(e.node->value.shape);
  e.m = Tensor::zeros(e.node->value.shape);
  e.v = Tensor::zeros(e.node->value.shape);
  auto ref = e.ref;
  entries_.emplace(name, std::move(e));
  return ref;
}

NodeRef ParameterStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("no-param", name);
  return it->second.ref;
}

void ParameterStore::accumulate(const GradTable& table, double scale) {
  for (auto& [name, e] : entries_) {
    const Tensor* g = table.find(e.node.get());
    if (!g) continue;
    for (std::size_t i = 0; i < e.grad.data.size(); ++i)
      e.grad.data[i] += static_cast<float>(scale * g->data[i]);
  }
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
}

const Tensor& ParameterStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("no-param", name);
  return it->second.grad;
}

void ParameterStore::adamw_step(double lr, const AdamWConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_));
  for (auto& [name, e] : entries_) {
    Tensor& p = e.node->value;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double pi = p.data[i] * (1.0 - lr * cfg.weight_decay);
      double g = e.grad.data[i];
      double m = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * g * g;
      e.m.data[i] = static_cast<float>(m);
      e.v.data[i] = static_cast<float>(v);
      pi -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p.data[i] = static_cast<float>(pi);
    }
    p.check_finite("adamw_step");
  }
}

std::map<std::string, Tensor> ParameterStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, e] : entries_) out.emplace(name, e.node->value);
  return out;
}

void ParameterStore::load(const std::map<std::string, Tensor>& values) {
  for (auto& [name, e] : entries_) {
    auto it = values.find(name);
    if (it == values.end()) throw Error("no-param", "checkpoint missing " + name);
    if (it->second.shape != e.node->value.shape) throw Error("shape-mismatch", name);
    e.node->value = it->second;
  }
}

double lr_at(const LrSchedule& s, long step) {
  if (step < 0 || step > s.total_steps) throw Error("bad-step", "lr_at out of range");
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.peak_lr * double(step) / double(s.warmup_steps);
  long span = s.total_steps - s.warmup_steps;
  if (span <= 0) return s.peak_lr;
  double x = double(step - s.warmup_steps) / double(span);
  return s.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

}  // namespace hgm::diff
