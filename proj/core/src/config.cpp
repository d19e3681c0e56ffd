#include "hgm/config.hpp"

#include <json.hpp>

namespace hgm {

using nlohmann::json;

TaskConfig default_task_config(const std::string& task) {
  if (task != "place-synth" && task != "hang-synth" && task != "stack-synth")
    throw Error("bad-task", task);
  TaskConfig cfg;
  cfg.task = task;
  return cfg;
}

PolicyConfig effective_policy_config(const TaskConfig& cfg) {
  PolicyConfig pc = cfg.policy;
  if (cfg.variant == "no-pe") pc.fusion.enable_dual_stream = false;
  return pc;
}

ProviderRegistry build_registry(const TaskConfig& cfg) {
  auto rigid = std::make_shared<SyntheticRigidProvider>(cfg.embed_dim, cfg.provider_noise);
  auto deform = std::make_shared<SyntheticDeformableProvider>(cfg.embed_dim, cfg.provider_noise);
  auto by_id = [&](const std::string& id) -> std::shared_ptr<FeatureProvider> {
    if (id == "rigid-synth") return rigid;
    if (id == "deform-synth") return deform;
    throw Error("no-provider", id);
  };
  ProviderRegistry reg;
  for (auto cat : {ObjectCategory::Rigid, ObjectCategory::Articulated, ObjectCategory::Deformable}) {
    auto it = cfg.providers.find(category_name(cat));
    if (it == cfg.providers.end()) throw Error("no-provider", category_name(cat));
    reg.providers[cat] = cfg.variant == "no-mfm" ? rigid : by_id(it->second);
  }
  return reg;
}

namespace {

json policy_to_json(const PolicyConfig& pc) {
  return json{{"horizon", pc.horizon},
              {"n_obs_steps", pc.n_obs_steps},
              {"n_action_steps", pc.n_action_steps},
              {"action_dim", pc.action_dim},
              {"joint_dim", pc.joint_dim},
              {"n_points", pc.n_points},
              {"cloud_feat_dim", pc.cloud_feat_dim},
              {"joint_feat_dim", pc.joint_feat_dim},
              {"cloud_mlp_widths", pc.cloud_mlp_widths},
              {"joint_mlp_widths", pc.joint_mlp_widths},
              {"denoiser_widths", pc.denoiser_widths},
              {"timestep_embed_dim", pc.timestep_embed_dim},
              {"t_train", pc.t_train},
              {"num_inference_steps", pc.num_inference_steps},
              {"fusion_tokens", pc.fusion_tokens},
              {"fusion",
               {{"model_dim", pc.fusion.model_dim},
                {"heads", pc.fusion.heads},
                {"semantic_encoder_widths", pc.fusion.semantic_encoder_widths},
                {"spatial_encoder_widths", pc.fusion.spatial_encoder_widths},
                {"enable_dual_stream", pc.fusion.enable_dual_stream}}}};
}

PolicyConfig policy_from_json(const json& j) {
  PolicyConfig pc;
  pc.horizon = j.at("horizon");
  pc.n_obs_steps = j.at("n_obs_steps");
  pc.n_action_steps = j.at("n_action_steps");
  pc.action_dim = j.at("action_dim");
  pc.joint_dim = j.at("joint_dim");
  pc.n_points = j.at("n_points");
  pc.cloud_feat_dim = j.at("cloud_feat_dim");
  pc.joint_feat_dim = j.at("joint_feat_dim");
  pc.cloud_mlp_widths = j.at("cloud_mlp_widths").get<std::vector<int>>();
  pc.joint_mlp_widths = j.at("joint_mlp_widths").get<std::vector<int>>();
  pc.denoiser_widths = j.at("denoiser_widths").get<std::vector<int>>();
  pc.timestep_embed_dim = j.at("timestep_embed_dim");
  pc.t_train = j.at("t_train");
  pc.num_inference_steps = j.at("num_inference_steps");
  pc.fusion_tokens = j.at("fusion_tokens");
  const json& f = j.at("fusion");
  pc.fusion.model_dim = f.at("model_dim");
  pc.fusion.heads = f.at("heads");
  pc.fusion.semantic_encoder_widths = f.at("semantic_encoder_widths").get<std::vector<int>>();
  pc.fusion.spatial_encoder_widths = f.at("spatial_encoder_widths").get<std::vector<int>>();
  pc.fusion.enable_dual_stream = f.at("enable_dual_stream");
  return pc;
}

}  // namespace

std::string task_config_to_json(const TaskConfig& cfg) {
  json j{{"task", cfg.task},
         {"variant", cfg.variant},
         {"pca_dim", cfg.pca_dim},
         {"num_anchors", cfg.num_anchors},
         {"provider_noise", cfg.provider_noise},
         {"demo_noise", cfg.demo_noise},
         {"embed_dim", cfg.embed_dim},
         {"seed", cfg.seed},
         {"epochs", cfg.epochs},
         {"batch_size", cfg.batch_size},
         {"lr", cfg.lr},
         {"warmup_steps", cfg.warmup_steps},
         {"providers", cfg.providers},
         {"policy", policy_to_json(cfg.policy)}};
  return j.dump(2);
}

TaskConfig task_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
  try {
    TaskConfig cfg;
    cfg.task = j.at("task");
    cfg.variant = j.at("variant");
    if (cfg.variant != "full" && cfg.variant != "no-cg" && cfg.variant != "no-pe" &&
        cfg.variant != "no-mfm")
      throw Error("bad-config", "unknown variant " + cfg.variant);
    cfg.pca_dim = j.at("pca_dim");
    cfg.num_anchors = j.at("num_anchors");
    cfg.provider_noise = j.at("provider_noise");
    cfg.demo_noise = j.at("demo_noise");
    cfg.embed_dim = j.at("embed_dim");
    cfg.seed = j.at("seed");
    cfg.epochs = j.at("epochs");
    cfg.batch_size = j.at("batch_size");
    cfg.lr = j.at("lr");
    cfg.warmup_steps = j.at("warmup_steps");
    cfg.providers = j.at("providers").get<std::map<std::string, std::string>>();
    cfg.policy = policy_from_json(j.at("policy"));
    return cfg;
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
}

}  // namespace hgm
