#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "hgm/diff/tensor.hpp"

namespace hgm::diff {

struct Node;
using NodeRef = std::shared_ptr<Node>;

// Gradient storage kept outside the graph so independent backward passes
// over shared parameters can run concurrently.
class GradTable {
 public:
  Tensor& grad_for(const Node* n, const Tensor& like);
  const Tensor* find(const Node* n) const;

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

struct Node {
  Tensor value;
  std::vector<NodeRef> inputs;
  bool requires_grad = false;
  // Accumulates input gradients into the table given this node's gradient.
  std::function<void(const Node&, const Tensor&, GradTable&)> backprop;
};

NodeRef constant(Tensor value);
NodeRef leaf(Tensor value);  // requires_grad = true

// Reverse-mode gradients of a scalar loss; returns the populated table.
GradTable backward(const NodeRef& loss);

// Forward operators -------------------------------------------------------

NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef mul(const NodeRef& a, const NodeRef& b);
NodeRef scale(const NodeRef& a, double s);
NodeRef matmul(const NodeRef& a, const NodeRef& b);
NodeRef transpose(const NodeRef& a);
NodeRef add_bias(const NodeRef& x, const NodeRef& bias);  // bias is [1, d]
NodeRef affine(const NodeRef& x, const NodeRef& w, const NodeRef& bias);
NodeRef relu(const NodeRef& a);
NodeRef softmax_rows(const NodeRef& a);
NodeRef layer_norm_rows(const NodeRef& a, const NodeRef& gamma, const NodeRef& beta,
                        double eps = 1e-5);
NodeRef concat_cols(const std::vector<NodeRef>& parts);
NodeRef slice_cols(const NodeRef& a, int start, int len);
NodeRef max_rows(const NodeRef& a);   // column-wise max over rows -> [1, d]
NodeRef mean_rows(const NodeRef& a);  // -> [1, d]
NodeRef sum_all(const NodeRef& a);    // -> [1, 1]
NodeRef mse(const NodeRef& a, const NodeRef& b);  // mean squared error -> [1, 1]

// Multi-head scaled dot-product attention over already-projected Q, K, V,
// followed by an output affine layer. d must be divisible by heads.
NodeRef cross_attention(const NodeRef& q, const NodeRef& k, const NodeRef& v, int heads,
                        const NodeRef& w_out, const NodeRef& b_out);

}  // namespace hgm::diff
