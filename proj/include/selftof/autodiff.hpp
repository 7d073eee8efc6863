// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "selftof/tensor.hpp"

namespace selftof::ad {

// Reverse-mode autodiff over Tensor. Each op builds a Node holding its value
// and a closure that scatters the node's gradient into its inputs. Graphs are
// rebuilt every step (define-by-run); parameters enter as leaves that share
// storage with their persistent tensors.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  int param_id = -1;  // >= 0 for parameter leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backfn;

  void accumulate(const Tensor& g);
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false, int param_id = -1);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var scalar(double v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->val; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.defined(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->val.item(); }
  const std::vector<int>& shape() const { return node_->val.shape(); }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// Runs backpropagation from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

// Builds a graph node for custom ops (used by the warp / zone-statistic ops).
// backfn reads node.grad and scatters into node.inputs[i]->accumulate(...).
NodePtr make_node(Tensor val, std::vector<NodePtr> inputs, std::function<void(Node&)> backfn);

// ---- elementwise (size-1 operands broadcast against any shape) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);  // ties keep a's gradient

Var add(const Var& a, double c);
Var mul(const Var& a, double c);

Var neg(const Var& a);
Var vexp(const Var& a);
Var vlog(const Var& a);
Var vsqrt(const Var& a);  // d/dx guarded by eps at 0
Var vabs(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var elu(const Var& a);
Var vsin(const Var& a);
Var vcos(const Var& a);

// multiply by a constant tensor (no gradient into the mask)
Var mul_mask(const Var& a, const Tensor& mask);
// blend: mask * a + (1 - mask) * b, mask constant
Var select(const Tensor& mask, const Var& a, const Var& b);

// ---- reductions / shaping ----
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_channels(const Var& a);          // [C,H,W] -> [H,W]
Var mean_spatial(const Var& a);           // [C,H,W] -> [C]
Var reshape(const Var& a, std::vector<int> shape);
Var concat_c(const Var& a, const Var& b);             // [Ca,H,W]+[Cb,H,W]
Var slice_vec(const Var& a, int i0, int i1);          // 1-D slice
Var gather_vec(const Var& a, const std::vector<int>& idx);
Var pack(const std::vector<Var>& scalars, std::vector<int> shape);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);   // [m,k]x[k,n]
Var transpose2d(const Var& a);            // [m,n] -> [n,m]
Var add_rows(const Var& a, const Var& b); // [m,n] + [n] per row

// ---- conv / pooling / resize (single image [C,H,W]) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// Masked 8x8 convolution: outputs only at valid positions, gathering only
// from valid positions; invalid outputs are exactly zero. Stride 1.
Var submanifold_conv2d(const Var& x, const Var& w, const Var& b,
                       const std::vector<std::uint8_t>& valid, int pad);
Var maxpool2d(const Var& x, int k, int stride, int pad);
Var avgpool_adaptive(const Var& x, int oh, int ow);
Var mean3x3_reflect(const Var& x);  // stride-1 3x3 box mean, reflect padding
Var resize_nearest(const Var& x, int oh, int ow);

// Row-wise softmax over [n,n] with invalid columns forced to exactly zero.
// Rows are all-zero when no column is valid.
Var softmax_rows_masked(const Var& a, const std::vector<std::uint8_t>& col_valid);

// ---- image sampling / gradients ----
// Bilinear sampling of img [C,H,W] at coordinates u,v [Ho,Wo] (pixel-center
// convention). Out-of-bounds samples are 0; valid_out is 1 where all four
// neighbours exist. Differentiable in img, u and v.
Var bilinear_sample(const Var& img, const Var& u, const Var& v, Tensor& valid_out);

Var dx_forward(const Var& a);  // [H,W] -> [H,W-1]
Var dy_forward(const Var& a);  // [H,W] -> [H-1,W]

// ---- order statistics ----
// Median with even-count averaging; gradient routes to the selected elements.
Var median(const Var& a);

}  // namespace selftof::ad
