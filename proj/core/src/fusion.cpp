#include "hgm/fusion.hpp"

#include <cmath>

namespace hgm {

using diff::NodeRef;
using diff::Tensor;

std::atomic<long>& coord_attention_calls() {
  static std::atomic<long> counter{0};
  return counter;
}

namespace {

Tensor random_weight(int in_dim, int out_dim, Rng& rng, double gain = 1.0) {
  Tensor w({in_dim, out_dim});
  double sigma = gain * std::sqrt(2.0 / in_dim);
  for (float& v : w.data) v = static_cast<float>(sigma * rng.gaussian());
  return w;
}

NodeRef get_or_create(diff::ParameterStore& store, const std::string& name, Tensor init) {
  if (store.has(name)) return store.get(name);
  return store.create(name, std::move(init));
}

}  // namespace

NodeRef FusionModule::Mlp::apply(const NodeRef& x) const {
  NodeRef h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = diff::affine(h, weights[i], biases[i]);
    if (i + 1 < weights.size()) h = diff::relu(h);
  }
  return h;
}

NodeRef FusionModule::AttentionBlock::apply(const NodeRef& q_tokens,
                                            const NodeRef& kv_tokens) const {
  NodeRef qn = diff::layer_norm_rows(q_tokens, ln_q_gamma, ln_q_beta);
  NodeRef kvn = diff::layer_norm_rows(kv_tokens, ln_kv_gamma, ln_kv_beta);
  NodeRef q = diff::affine(qn, wq, bq);
  NodeRef k = diff::affine(kvn, wk, bk);
  NodeRef v = diff::affine(kvn, wv, bv);
  return diff::add(q_tokens, diff::cross_attention(q, k, v, heads, wo, bo));
}

FusionModule::Mlp FusionModule::make_mlp(diff::ParameterStore& store, Rng& rng,
                                         const std::string& prefix, int in_dim,
                                         const std::vector<int>& hidden, int out_dim) {
  Mlp mlp;
  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    mlp.weights.push_back(
        get_or_create(store, prefix + ".w" + std::to_string(i), random_weight(dims[i], dims[i + 1], rng)));
    mlp.biases.push_back(
        get_or_create(store, prefix + ".b" + std::to_string(i), Tensor({1, dims[i + 1]})));
  }
  return mlp;
}

FusionModule::AttentionBlock FusionModule::make_attention(diff::ParameterStore& store, Rng& rng,
                                                          const std::string& prefix) {
  AttentionBlock blk;
  const int m = cfg_.model_dim;
  blk.heads = cfg_.heads;
  blk.ln_q_gamma = get_or_create(store, prefix + ".lnq.g", Tensor({1, m}, 1.0f));
  blk.ln_q_beta = get_or_create(store, prefix + ".lnq.b", Tensor({1, m}));
  blk.ln_kv_gamma = get_or_create(store, prefix + ".lnkv.g", Tensor({1, m}, 1.0f));
  blk.ln_kv_beta = get_or_create(store, prefix + ".lnkv.b", Tensor({1, m}));
  blk.wq = get_or_create(store, prefix + ".wq", random_weight(m, m, rng, 0.5));
  blk.bq = get_or_create(store, prefix + ".bq", Tensor({1, m}));
  blk.wk = get_or_create(store, prefix + ".wk", random_weight(m, m, rng, 0.5));
  blk.bk = get_or_create(store, prefix + ".bk", Tensor({1, m}));
  blk.wv = get_or_create(store, prefix + ".wv", random_weight(m, m, rng, 0.5));
  blk.bv = get_or_create(store, prefix + ".bv", Tensor({1, m}));
  blk.wo = get_or_create(store, prefix + ".wo", random_weight(m, m, rng, 0.5));
  blk.bo = get_or_create(store, prefix + ".bo", Tensor({1, m}));
  return blk;
}

FusionModule::FusionModule(FusionConfig cfg, int background_desc_dim, int operated_desc_dim,
                           diff::ParameterStore& store, Rng& rng, const std::string& prefix)
    : cfg_(std::move(cfg)) {
  if (cfg_.model_dim % cfg_.heads != 0) throw Error("head-split", "model_dim % heads != 0");
  background_semantic_ = make_mlp(store, rng, prefix + ".bg_sem", background_desc_dim,
                                  cfg_.semantic_encoder_widths, cfg_.model_dim);
  if (cfg_.enable_dual_stream) {
    background_spatial_ =
        make_mlp(store, rng, prefix + ".bg_spa", 3, cfg_.spatial_encoder_widths, cfg_.model_dim);
    background_attn_ = make_attention(store, rng, prefix + ".bg_attn");
  }
  operated_ = make_mlp(store, rng, prefix + ".op_sem", operated_desc_dim,
                       cfg_.semantic_encoder_widths, cfg_.model_dim);
  inter_attn_ = make_attention(store, rng, prefix + ".inter_attn");
}

NodeRef FusionModule::encode_background(const NodeRef& descriptors, const NodeRef& coords) const {
  if (descriptors->value.rows() != coords->value.rows())
    throw Error("shape-mismatch", "encode_background rows");
  NodeRef semantic = background_semantic_.apply(descriptors);
  if (!cfg_.enable_dual_stream) return semantic;
  coord_attention_calls().fetch_add(1, std::memory_order_relaxed);
  NodeRef spatial = background_spatial_.apply(coords);
  return background_attn_.apply(semantic, spatial);
}

NodeRef FusionModule::encode_operated(const NodeRef& descriptors) const {
  return operated_.apply(descriptors);
}

NodeRef FusionModule::inter_object_fuse(const NodeRef& operated_tokens,
                                        const NodeRef& background_tokens) const {
  return diff::mean_rows(inter_attn_.apply(operated_tokens, background_tokens));
}

NodeRef FusionModule::relational_feature(const Matrix& operated_desc,
                                         const Matrix& background_desc) const {
  NodeRef op_desc = diff::constant(Tensor::from_matrix(operated_desc));
  NodeRef bg_desc = diff::constant(Tensor::from_matrix(background_desc));
  // The coordinate stream reads the descriptor tail columns.
  NodeRef coords = diff::slice_cols(bg_desc, background_desc.cols - 3, 3);
  NodeRef bg_tokens = encode_background(bg_desc, coords);
  NodeRef op_tokens = encode_operated(op_desc);
  return inter_object_fuse(op_tokens, bg_tokens);
}

}  // namespace hgm
