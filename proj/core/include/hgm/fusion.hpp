#pragma once

#include <atomic>
#include <string>
#include <vector>

#include "hgm/diff/optim.hpp"

namespace hgm {

struct FusionConfig {
  int model_dim = 64;
  int heads = 4;
  std::vector<int> semantic_encoder_widths = {64};
  std::vector<int> spatial_encoder_widths = {64};
  bool enable_dual_stream = true;  // false = drop the spatial coordinate stream
};

// Counts spatial-coordinate attention invocations; stays at zero when the
// dual stream is disabled (wiring check for that ablation).
std::atomic<long>& coord_attention_calls();

// Dual-stream background encoder, operated-object encoder, and inter-object
// cross-attention producing the pooled relational feature.
class FusionModule {
 public:
  // Creates (or rebinds, if already present) parameters under `prefix`.
  FusionModule(FusionConfig cfg, int background_desc_dim, int operated_desc_dim,
               diff::ParameterStore& store, Rng& rng, const std::string& prefix = "fusion");

  const FusionConfig& config() const { return cfg_; }

  // descriptors: [N, d+3]; coords: [N, 3] (same rows). Output [N, model_dim].
  diff::NodeRef encode_background(const diff::NodeRef& descriptors,
                                  const diff::NodeRef& coords) const;
  // descriptors: [M, d+3] -> [M, model_dim]; no spatial stream.
  diff::NodeRef encode_operated(const diff::NodeRef& descriptors) const;
  // -> [1, model_dim] pooled relational feature.
  diff::NodeRef inter_object_fuse(const diff::NodeRef& operated_tokens,
                                  const diff::NodeRef& background_tokens) const;

  // Full path from raw descriptor matrices (constants in the graph).
  diff::NodeRef relational_feature(const Matrix& operated_desc,
                                   const Matrix& background_desc) const;

 private:
  struct Mlp {
    std::vector<diff::NodeRef> weights, biases;
    diff::NodeRef apply(const diff::NodeRef& x) const;
  };
  struct AttentionBlock {
    diff::NodeRef ln_q_gamma, ln_q_beta, ln_kv_gamma, ln_kv_beta;
    diff::NodeRef wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 4;
    // Pre-norm attention with a residual connection from the query tokens.
    diff::NodeRef apply(const diff::NodeRef& q_tokens, const diff::NodeRef& kv_tokens) const;
  };

  Mlp make_mlp(diff::ParameterStore& store, Rng& rng, const std::string& prefix, int in_dim,
               const std::vector<int>& hidden, int out_dim);
  AttentionBlock make_attention(diff::ParameterStore& store, Rng& rng, const std::string& prefix);

  FusionConfig cfg_;
  Mlp background_semantic_, background_spatial_, operated_;
  AttentionBlock background_attn_, inter_attn_;
};

}  // namespace hgm
