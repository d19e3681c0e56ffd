#pragma once

#include <map>
#include <string>

#include "hgm/features.hpp"
#include "hgm/policy.hpp"

namespace hgm {

// Task-level configuration: object routing, descriptor parameters, and
// training hyperparameters. Defaults follow the policy training recipe.
struct TaskConfig {
  std::string task = "place-synth";
  std::string variant = "full";  // full | no-cg | no-pe | no-mfm
  int pca_dim = 5;
  int num_anchors = 8;
  double provider_noise = 0.01;
  double demo_noise = 0.008;  // expert execution noise during demo recording
  int embed_dim = 64;
  std::uint64_t seed = 42;
  int epochs = 3000;
  int batch_size = 128;
  double lr = 1e-4;
  long warmup_steps = 500;
  PolicyConfig policy;
  // Category name -> provider id (the rules-based router table).
  std::map<std::string, std::string> providers = {
      {"rigid", "rigid-synth"}, {"articulated", "rigid-synth"}, {"deformable", "deform-synth"}};
};

TaskConfig default_task_config(const std::string& task);

// Applies variant switches (no-pe disables the dual stream) and returns the
// policy configuration to instantiate.
PolicyConfig effective_policy_config(const TaskConfig& cfg);

// Instantiates the provider registry from the router table; the no-mfm
// variant forces the rigid provider for every category.
ProviderRegistry build_registry(const TaskConfig& cfg);

std::string task_config_to_json(const TaskConfig& cfg);
TaskConfig task_config_from_json(const std::string& text);

}  // namespace hgm
