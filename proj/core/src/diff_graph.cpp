#include "hgm/diff/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hgm::diff {

Tensor& GradTable::grad_for(const Node* n, const Tensor& like) {
  auto it = grads_.find(n);
  if (it == grads_.end()) it = grads_.emplace(n, Tensor::zeros(like.shape)).first;
  return it->second;
}

const Tensor* GradTable::find(const Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

namespace {

NodeRef make_node(Tensor value, std::vector<NodeRef> inputs,
                  std::function<void(const Node&, const Tensor&, GradTable&)> backprop,
                  const char* where) {
  value.check_finite(where);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void require_same_shape(const NodeRef& a, const NodeRef& b, const char* where) {
  if (!a->value.same_shape(b->value)) throw Error("shape-mismatch", where);
}

// Matmul on raw tensors: out[N,M] = opA(a) * opB(b). Single-threaded Eigen
// products, so results stay bitwise reproducible run to run.
Tensor raw_matmul(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  int an = ta ? a.cols() : a.rows();
  int ak = ta ? a.rows() : a.cols();
  int bk = tb ? b.cols() : b.rows();
  int bm = tb ? b.rows() : b.cols();
  if (ak != bk) throw Error("shape-mismatch", "matmul inner dims");
  Tensor out({an, bm});
  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> A(a.data.data(), a.rows(), a.cols());
  Eigen::Map<const RowMat> B(b.data.data(), b.rows(), b.cols());
  Eigen::Map<RowMat> O(out.data.data(), an, bm);
  if (!ta && !tb)
    O.noalias() = A * B;
  else if (ta && !tb)
    O.noalias() = A.transpose() * B;
  else if (!ta && tb)
    O.noalias() = A * B.transpose();
  else
    O.noalias() = A.transpose() * B.transpose();
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

NodeRef constant(Tensor value) {
  auto n = std::make_shared<Node>();
  value.check_finite("constant");
  n->value = std::move(value);
  return n;
}

NodeRef leaf(Tensor value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

GradTable backward(const NodeRef& loss) {
  if (loss->value.size() != 1) throw Error("not-scalar", "backward expects a scalar loss");
  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (loss->requires_grad) stack.emplace_back(loss.get(), 0);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  GradTable table;
  if (order.empty()) return table;
  table.grad_for(loss.get(), loss->value).data[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    const Tensor* g = table.find(node);
    if (!g || !node->backprop) continue;
    node->backprop(*node, *g, table);
  }
  return table;
}

NodeRef add(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  accumulate(out, b->value);
  return make_node(std::move(out), {a, b},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     for (int i = 0; i < 2; ++i)
                       if (n.inputs[i]->requires_grad)
                         accumulate(t.grad_for(n.inputs[i].get(), n.inputs[i]->value), g);
                   },
                   "add");
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
  return make_node(std::move(out), {a, b},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     if (n.inputs[0]->requires_grad)
                       accumulate(t.grad_for(n.inputs[0].get(), n.inputs[0]->value), g);
                     if (n.inputs[1]->requires_grad) {
                       Tensor& gb = t.grad_for(n.inputs[1].get(), n.inputs[1]->value);
                       for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
                     }
                   },
                   "sub");
}

NodeRef mul(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
  return make_node(std::move(out), {a, b},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     const Tensor& av = n.inputs[0]->value;
                     const Tensor& bv = n.inputs[1]->value;
                     if (n.inputs[0]->requires_grad) {
                       Tensor& ga = t.grad_for(n.inputs[0].get(), av);
                       for (std::size_t i = 0; i < g.data.size(); ++i)
                         ga.data[i] += g.data[i] * bv.data[i];
                     }
                     if (n.inputs[1]->requires_grad) {
                       Tensor& gb = t.grad_for(n.inputs[1].get(), bv);
                       for (std::size_t i = 0; i < g.data.size(); ++i)
                         gb.data[i] += g.data[i] * av.data[i];
                     }
                   },
                   "mul");
}

NodeRef scale(const NodeRef& a, double s) {
  Tensor out = a->value;
  for (float& v : out.data) v = static_cast<float>(v * s);
  return make_node(std::move(out), {a},
                   [s](const Node& n, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       ga.data[i] += static_cast<float>(g.data[i] * s);
                   },
                   "scale");
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
  Tensor out = raw_matmul(a->value, false, b->value, false);
  return make_node(std::move(out), {a, b},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     const Tensor& av = n.inputs[0]->value;
                     const Tensor& bv = n.inputs[1]->value;
                     if (n.inputs[0]->requires_grad)
                       accumulate(t.grad_for(n.inputs[0].get(), av), raw_matmul(g, false, bv, true));
                     if (n.inputs[1]->requires_grad)
                       accumulate(t.grad_for(n.inputs[1].get(), bv), raw_matmul(av, true, g, false));
                   },
                   "matmul");
}

NodeRef transpose(const NodeRef& a) {
  const Tensor& v = a->value;
  Tensor out({v.cols(), v.rows()});
  for (int i = 0; i < v.rows(); ++i)
    for (int j = 0; j < v.cols(); ++j) out.at(j, i) = v.at(i, j);
  return make_node(std::move(out), {a},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                     for (int i = 0; i < g.rows(); ++i)
                       for (int j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
                   },
                   "transpose");
}

NodeRef add_bias(const NodeRef& x, const NodeRef& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != x->value.cols())
    throw Error("shape-mismatch", "add_bias");
  Tensor out = x->value;
  int d = out.cols();
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += bias->value.data[j];
  return make_node(std::move(out), {x, bias},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     if (n.inputs[0]->requires_grad)
                       accumulate(t.grad_for(n.inputs[0].get(), n.inputs[0]->value), g);
                     if (n.inputs[1]->requires_grad) {
                       Tensor& gb = t.grad_for(n.inputs[1].get(), n.inputs[1]->value);
                       for (int i = 0; i < g.rows(); ++i)
                         for (int j = 0; j < g.cols(); ++j) gb.data[j] += g.at(i, j);
                     }
                   },
                   "add_bias");
}

NodeRef affine(const NodeRef& x, const NodeRef& w, const NodeRef& bias) {
  if (x->value.cols() != w->value.rows()) throw Error("shape-mismatch", "affine");
  return add_bias(matmul(x, w), bias);
}

NodeRef relu(const NodeRef& a) {
  Tensor out = a->value;
  for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
  return make_node(std::move(out), {a},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     const Tensor& av = n.inputs[0]->value;
                     Tensor& ga = t.grad_for(n.inputs[0].get(), av);
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       if (av.data[i] > 0.0f) ga.data[i] += g.data[i];
                   },
                   "relu");
}

NodeRef softmax_rows(const NodeRef& a) {
  Tensor out = a->value;
  int d = out.cols();
  for (int i = 0; i < out.rows(); ++i) {
    float* row = out.data.data() + std::size_t(i) * d;
    float mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] = static_cast<float>(row[j] / sum);
  }
  auto node = make_node(std::move(out), {a},
                        [](const Node& n, const Tensor& g, GradTable& t) {
                          const Tensor& y = n.value;
                          Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                          int d = y.cols();
                          for (int i = 0; i < y.rows(); ++i) {
                            double dot = 0.0;
                            for (int j = 0; j < d; ++j) dot += double(g.at(i, j)) * y.at(i, j);
                            for (int j = 0; j < d; ++j)
                              ga.at(i, j) += static_cast<float>(y.at(i, j) * (g.at(i, j) - dot));
                          }
                        },
                        "softmax");
  return node;
}

NodeRef layer_norm_rows(const NodeRef& a, const NodeRef& gamma, const NodeRef& beta, double eps) {
  const Tensor& x = a->value;
  int d = x.cols();
  if (gamma->value.cols() != d || beta->value.cols() != d)
    throw Error("shape-mismatch", "layer_norm");
  Tensor out(x.shape);
  Tensor xhat(x.shape);
  std::vector<float> inv_sigma(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = static_cast<float>(is);
    for (int j = 0; j < d; ++j) {
      float xh = static_cast<float>((x.at(i, j) - mean) * is);
      xhat.at(i, j) = xh;
      out.at(i, j) = xh * gamma->value.data[j] + beta->value.data[j];
    }
  }
  return make_node(std::move(out), {a, gamma, beta},
                   [xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                       const Node& n, const Tensor& g, GradTable& t) {
                     const Tensor& gv = n.inputs[1]->value;
                     int d = g.cols();
                     if (n.inputs[1]->requires_grad) {
                       Tensor& gg = t.grad_for(n.inputs[1].get(), gv);
                       for (int i = 0; i < g.rows(); ++i)
                         for (int j = 0; j < d; ++j) gg.data[j] += g.at(i, j) * xhat.at(i, j);
                     }
                     if (n.inputs[2]->requires_grad) {
                       Tensor& gb = t.grad_for(n.inputs[2].get(), n.inputs[2]->value);
                       for (int i = 0; i < g.rows(); ++i)
                         for (int j = 0; j < d; ++j) gb.data[j] += g.at(i, j);
                     }
                     if (n.inputs[0]->requires_grad) {
                       Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                       for (int i = 0; i < g.rows(); ++i) {
                         double m1 = 0.0, m2 = 0.0;
                         for (int j = 0; j < d; ++j) {
                           double gj = double(g.at(i, j)) * gv.data[j];
                           m1 += gj;
                           m2 += gj * xhat.at(i, j);
                         }
                         m1 /= d;
                         m2 /= d;
                         for (int j = 0; j < d; ++j) {
                           double gj = double(g.at(i, j)) * gv.data[j];
                           ga.at(i, j) += static_cast<float>(
                               (gj - m1 - xhat.at(i, j) * m2) * inv_sigma[i]);
                         }
                       }
                     }
                   },
                   "layer_norm");
}

NodeRef concat_cols(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw Error("shape-mismatch", "concat_cols of nothing");
  int rows = parts[0]->value.rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw Error("shape-mismatch", "concat_cols rows");
    total += p->value.cols();
  }
  Tensor out({rows, total});
  int off = 0;
  for (const auto& p : parts) {
    int d = p->value.cols();
    for (int i = 0; i < rows; ++i)
      std::copy(p->value.data.begin() + std::size_t(i) * d,
                p->value.data.begin() + std::size_t(i) * d + d,
                out.data.begin() + std::size_t(i) * total + off);
    off += d;
  }
  return make_node(std::move(out), parts,
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     int total = g.cols();
                     int off = 0;
                     for (const auto& p : n.inputs) {
                       int d = p->value.cols();
                       if (p->requires_grad) {
                         Tensor& gp = t.grad_for(p.get(), p->value);
                         for (int i = 0; i < g.rows(); ++i)
                           for (int j = 0; j < d; ++j)
                             gp.at(i, j) += g.data[std::size_t(i) * total + off + j];
                       }
                       off += d;
                     }
                   },
                   "concat_cols");
}

NodeRef slice_cols(const NodeRef& a, int start, int len) {
  const Tensor& v = a->value;
  if (start < 0 || len < 1 || start + len > v.cols()) throw Error("shape-mismatch", "slice_cols");
  Tensor out({v.rows(), len});
  for (int i = 0; i < v.rows(); ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = v.at(i, start + j);
  return make_node(std::move(out), {a},
                   [start, len](const Node& n, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                     for (int i = 0; i < g.rows(); ++i)
                       for (int j = 0; j < len; ++j) ga.at(i, start + j) += g.at(i, j);
                   },
                   "slice_cols");
}

NodeRef max_rows(const NodeRef& a) {
  const Tensor& v = a->value;
  int d = v.cols();
  Tensor out({1, d});
  std::vector<int> argmax(d, 0);
  for (int j = 0; j < d; ++j) out.data[j] = v.at(0, j);
  for (int i = 1; i < v.rows(); ++i)
    for (int j = 0; j < d; ++j)
      if (v.at(i, j) > out.data[j]) {  // first max wins on ties
        out.data[j] = v.at(i, j);
        argmax[j] = i;
      }
  return make_node(std::move(out), {a},
                   [argmax = std::move(argmax)](const Node& n, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                     for (int j = 0; j < g.cols(); ++j) ga.at(argmax[j], j) += g.data[j];
                   },
                   "max_rows");
}

NodeRef mean_rows(const NodeRef& a) {
  const Tensor& v = a->value;
  int d = v.cols();
  int n = v.rows();
  Tensor out({1, d});
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += v.at(i, j);
    out.data[j] = static_cast<float>(acc / n);
  }
  return make_node(std::move(out), {a},
                   [n](const Node& nd, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(nd.inputs[0].get(), nd.inputs[0]->value);
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < g.cols(); ++j) ga.at(i, j) += g.data[j] / n;
                   },
                   "mean_rows");
}

NodeRef sum_all(const NodeRef& a) {
  double acc = 0.0;
  for (float v : a->value.data) acc += v;
  return make_node(Tensor::scalar(static_cast<float>(acc)), {a},
                   [](const Node& n, const Tensor& g, GradTable& t) {
                     Tensor& ga = t.grad_for(n.inputs[0].get(), n.inputs[0]->value);
                     for (float& v : ga.data) v += g.data[0];
                   },
                   "sum_all");
}

NodeRef mse(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  const std::size_t n = a->value.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    double d = double(a->value.data[i]) - b->value.data[i];
    acc += d * d;
  }
  return make_node(Tensor::scalar(static_cast<float>(acc / n)), {a, b},
                   [](const Node& nd, const Tensor& g, GradTable& t) {
                     const Tensor& av = nd.inputs[0]->value;
                     const Tensor& bv = nd.inputs[1]->value;
                     const double k = 2.0 * g.data[0] / av.data.size();
                     if (nd.inputs[0]->requires_grad) {
                       Tensor& ga = t.grad_for(nd.inputs[0].get(), av);
                       for (std::size_t i = 0; i < av.data.size(); ++i)
                         ga.data[i] += static_cast<float>(k * (av.data[i] - bv.data[i]));
                     }
                     if (nd.inputs[1]->requires_grad) {
                       Tensor& gb = t.grad_for(nd.inputs[1].get(), bv);
                       for (std::size_t i = 0; i < av.data.size(); ++i)
                         gb.data[i] -= static_cast<float>(k * (av.data[i] - bv.data[i]));
                     }
                   },
                   "mse");
}

NodeRef cross_attention(const NodeRef& q, const NodeRef& k, const NodeRef& v, int heads,
                        const NodeRef& w_out, const NodeRef& b_out) {
  int d = q->value.cols();
  if (k->value.cols() != d || v->value.cols() != d) throw Error("shape-mismatch", "cross_attention");
  if (heads < 1 || d % heads != 0) throw Error("head-split", "dim not divisible by heads");
  int dh = d / heads;
  double inv_sqrt = 1.0 / std::sqrt(double(dh));
  std::vector<NodeRef> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    NodeRef qh = slice_cols(q, h * dh, dh);
    NodeRef kh = slice_cols(k, h * dh, dh);
    NodeRef vh = slice_cols(v, h * dh, dh);
    NodeRef weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    head_outs.push_back(matmul(weights, vh));
  }
  return affine(concat_cols(head_outs), w_out, b_out);
}

}  // namespace hgm::diff
