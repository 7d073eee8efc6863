// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace selftof::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (!grad.defined()) grad = Tensor::zeros(val.shape());
  const std::size_t n = grad.size();
  if (g.size() != n) throw std::logic_error("gradient shape mismatch");
  double* dst = grad.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

Var Var::leaf(Tensor value, bool requires_grad, int param_id) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  n->param_id = param_id;
  return Var(n);
}

NodePtr make_node(Tensor val, std::vector<NodePtr> inputs, std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backfn = std::move(backfn);
  return n;
}

void backward(const Var& root) {
  if (root.val().size() != 1) throw std::logic_error("backward: root must be scalar");
  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node* child = n->inputs[idx++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor::full(root.val().shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && n->grad.defined()) n->backfn(*n);
  }
}

// ---------------------------------------------------------------- helpers

namespace {

inline double bval(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

const std::vector<int>& broadcast_shape(const Tensor& a, const Tensor& b) {
  if (a.size() == 1) return b.shape();
  if (b.size() == 1) return a.shape();
  if (!a.same_shape(b)) throw std::invalid_argument("binary op: shape mismatch");
  return a.shape();
}

// accumulate g into input, summing if the input was a broadcast scalar
void accum_maybe_reduced(Node& in, const Tensor& g) {
  if (!in.requires_grad) return;
  if (in.val.size() == 1 && g.size() != 1) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
    in.accumulate(Tensor::scalar(s));
  } else {
    in.accumulate(g);
  }
}

Var binary_op(const Var& a, const Var& b, const std::function<double(double, double)>& f,
              std::function<void(Node&)> back) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  Tensor out(broadcast_shape(av, bv));
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(bval(av, i), bval(bv, i));
  return Var(make_node(std::move(out), {a.node(), b.node()}, std::move(back)));
}

Var unary_op(const Var& a, const std::function<double(double)>& f,
             const std::function<double(double, double)>& dfdx_from_x_y) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return Var(make_node(std::move(out), {a.node()}, [dfdx_from_x_y](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = n.grad[i] * dfdx_from_x_y(in.val[i], n.val[i]);
    in.accumulate(g);
  }));
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](Node& n) {
        accum_maybe_reduced(*n.inputs[0], n.grad);
        accum_maybe_reduced(*n.inputs[1], n.grad);
      });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](Node& n) {
        accum_maybe_reduced(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = -n.grad[i];
          accum_maybe_reduced(*n.inputs[1], g);
        }
      });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](Node& n) {
        Node& ia = *n.inputs[0];
        Node& ib = *n.inputs[1];
        if (ia.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bval(ib.val, i);
          accum_maybe_reduced(ia, g);
        }
        if (ib.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bval(ia.val, i);
          accum_maybe_reduced(ib, g);
        }
      });
}

Var divide(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](Node& n) {
        Node& ia = *n.inputs[0];
        Node& ib = *n.inputs[1];
        if (ia.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / bval(ib.val, i);
          accum_maybe_reduced(ia, g);
        }
        if (ib.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = bval(ib.val, i);
            g[i] = -n.grad[i] * bval(ia.val, i) / (y * y);
          }
          accum_maybe_reduced(ib, g);
        }
      });
}

Var minimum(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x <= y ? x : y; },
      [](Node& n) {
        Node& ia = *n.inputs[0];
        Node& ib = *n.inputs[1];
        const std::size_t m = n.grad.size();
        if (ia.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < m; ++i)
            g[i] = bval(ia.val, i) <= bval(ib.val, i) ? n.grad[i] : 0.0;
          accum_maybe_reduced(ia, g);
        }
        if (ib.requires_grad) {
          Tensor g(n.grad.shape());
          for (std::size_t i = 0; i < m; ++i)
            g[i] = bval(ia.val, i) <= bval(ib.val, i) ? 0.0 : n.grad[i];
          accum_maybe_reduced(ib, g);
        }
      });
}

Var add(const Var& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul(const Var& a, double c) {
  return unary_op(
      a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var neg(const Var& a) { return mul(a, -1.0); }

Var vexp(const Var& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var vlog(const Var& a) {
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var vsqrt(const Var& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / std::max(y, 1e-12); });
}

Var vabs(const Var& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var elu(const Var& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var vsin(const Var& a) {
  return unary_op(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var vcos(const Var& a) {
  return unary_op(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var mul_mask(const Var& a, const Tensor& mask) {
  const Tensor& av = a.val();
  if (!av.same_shape(mask)) throw std::invalid_argument("mul_mask: shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  Tensor m = mask;
  return Var(make_node(std::move(out), {a.node()}, [m](Node& n) {
    Tensor g(n.grad.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * m[i];
    n.inputs[0]->accumulate(g);
  }));
}

Var select(const Tensor& mask, const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (!av.same_shape(mask)) throw std::invalid_argument("select: shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] != 0.0 ? av[i] : bval(bv, i);
  Tensor m = mask;
  return Var(make_node(std::move(out), {a.node(), b.node()}, [m](Node& n) {
    Node& ia = *n.inputs[0];
    Node& ib = *n.inputs[1];
    if (ia.requires_grad) {
      Tensor g(n.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = m[i] != 0.0 ? n.grad[i] : 0.0;
      ia.accumulate(g);
    }
    if (ib.requires_grad) {
      Tensor g(n.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = m[i] != 0.0 ? 0.0 : n.grad[i];
      accum_maybe_reduced(ib, g);
    }
  }));
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(pairwise_sum(a.val().data(), a.val().size()));
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(Tensor::full(in.val.shape(), n.grad[0]));
  }));
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.val().size());
  Tensor out = Tensor::scalar(pairwise_sum(a.val().data(), a.val().size()) * inv);
  return Var(make_node(std::move(out), {a.node()}, [inv](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(Tensor::full(in.val.shape(), n.grad[0] * inv));
  }));
}

Var mean_channels(const Var& a) {
  const Tensor& x = a.val();
  if (x.ndim() != 3) throw std::invalid_argument("mean_channels: expects [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out({H, W});
  const double inv = 1.0 / C;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) out.at(i, j) += x.at(c, i, j);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return Var(make_node(std::move(out), {a.node()}, [C, H, W, inv](Node& n) {
    Tensor g({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) g.at(c, i, j) = n.grad.at(i, j) * inv;
    n.inputs[0]->accumulate(g);
  }));
}

Var mean_spatial(const Var& a) {
  const Tensor& x = a.val();
  if (x.ndim() != 3) throw std::invalid_argument("mean_spatial: expects [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) s += x.at(c, i, j);
    out[c] = s * inv;
  }
  return Var(make_node(std::move(out), {a.node()}, [C, H, W, inv](Node& n) {
    Tensor g({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) g.at(c, i, j) = n.grad[c] * inv;
    n.inputs[0]->accumulate(g);
  }));
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a.val().clone().reshaped(std::move(shape));
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    std::memcpy(g.data(), n.grad.data(), sizeof(double) * g.size());
    in.accumulate(g);
  }));
}

Var concat_c(const Var& a, const Var& b) {
  const Tensor& x = a.val();
  const Tensor& y = b.val();
  if (x.ndim() != 3 || y.ndim() != 3 || x.dim(1) != y.dim(1) || x.dim(2) != y.dim(2))
    throw std::invalid_argument("concat_c: shape mismatch");
  const int Ca = x.dim(0), Cb = y.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out({Ca + Cb, H, W});
  std::memcpy(out.data(), x.data(), sizeof(double) * x.size());
  std::memcpy(out.data() + x.size(), y.data(), sizeof(double) * y.size());
  return Var(make_node(std::move(out), {a.node(), b.node()}, [Ca, Cb, H, W](Node& n) {
    const std::size_t na = static_cast<std::size_t>(Ca) * H * W;
    const std::size_t nb = static_cast<std::size_t>(Cb) * H * W;
    if (n.inputs[0]->requires_grad) {
      Tensor g({Ca, H, W});
      std::memcpy(g.data(), n.grad.data(), sizeof(double) * na);
      n.inputs[0]->accumulate(g);
    }
    if (n.inputs[1]->requires_grad) {
      Tensor g({Cb, H, W});
      std::memcpy(g.data(), n.grad.data() + na, sizeof(double) * nb);
      n.inputs[1]->accumulate(g);
    }
  }));
}

Var slice_vec(const Var& a, int i0, int i1) {
  const Tensor& x = a.val();
  if (x.ndim() != 1 || i0 < 0 || i1 > x.dim(0) || i0 >= i1)
    throw std::invalid_argument("slice_vec: bad range");
  Tensor out({i1 - i0});
  for (int i = i0; i < i1; ++i) out[i - i0] = x[i];
  return Var(make_node(std::move(out), {a.node()}, [i0, i1](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (int i = i0; i < i1; ++i) g[i] = n.grad[i - i0];
    in.accumulate(g);
  }));
}

Var gather_vec(const Var& a, const std::vector<int>& idx) {
  const Tensor& x = a.val();
  if (x.ndim() != 1) throw std::invalid_argument("gather_vec: expects 1-D");
  Tensor out({static_cast<int>(idx.size())});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[static_cast<std::size_t>(idx[i])];
  std::vector<int> ix = idx;
  return Var(make_node(std::move(out), {a.node()}, [ix](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (std::size_t i = 0; i < ix.size(); ++i) g[static_cast<std::size_t>(ix[i])] += n.grad[i];
    in.accumulate(g);
  }));
}

Var pack(const std::vector<Var>& scalars, std::vector<int> shape) {
  Tensor out(shape);
  if (out.size() != scalars.size()) throw std::invalid_argument("pack: size mismatch");
  std::vector<NodePtr> ins;
  ins.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    out[i] = scalars[i].item();
    ins.push_back(scalars[i].node());
  }
  return Var(make_node(std::move(out), std::move(ins), [](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i)
      n.inputs[i]->accumulate(Tensor::scalar(n.grad[i]));
  }));
}

// ---------------------------------------------------------------- matmul

Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.val();
  const Tensor& y = b.val();
  if (x.ndim() != 2 || y.ndim() != 2 || x.dim(1) != y.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  const int m = x.dim(0), k = x.dim(1), n2 = y.dim(1);
  Tensor out({m, n2});
  CMapMat A(x.data(), m, k), B(y.data(), k, n2);
  MapMat O(out.data(), m, n2);
  O.noalias() = A * B;
  return Var(make_node(std::move(out), {a.node(), b.node()}, [m, k, n2](Node& n) {
    CMapMat G(n.grad.data(), m, n2);
    Node& ia = *n.inputs[0];
    Node& ib = *n.inputs[1];
    if (ia.requires_grad) {
      Tensor ga({m, k});
      CMapMat B(ib.val.data(), k, n2);
      MapMat GA(ga.data(), m, k);
      GA.noalias() = G * B.transpose();
      ia.accumulate(ga);
    }
    if (ib.requires_grad) {
      Tensor gb({k, n2});
      CMapMat A(ia.val.data(), m, k);
      MapMat GB(gb.data(), k, n2);
      GB.noalias() = A.transpose() * G;
      ib.accumulate(gb);
    }
  }));
}

Var transpose2d(const Var& a) {
  const Tensor& x = a.val();
  if (x.ndim() != 2) throw std::invalid_argument("transpose2d: expects 2-D");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  return Var(make_node(std::move(out), {a.node()}, [m, n](Node& nd) {
    Tensor g({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g.at(i, j) = nd.grad.at(j, i);
    nd.inputs[0]->accumulate(g);
  }));
}

Var add_rows(const Var& a, const Var& b) {
  const Tensor& x = a.val();
  const Tensor& y = b.val();
  if (x.ndim() != 2 || y.ndim() != 1 || y.dim(0) != x.dim(1))
    throw std::invalid_argument("add_rows: shape mismatch");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + y[static_cast<std::size_t>(j)];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [m, n](Node& nd) {
    if (nd.inputs[0]->requires_grad) nd.inputs[0]->accumulate(nd.grad);
    if (nd.inputs[1]->requires_grad) {
      Tensor g({n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] += nd.grad.at(i, j);
      nd.inputs[1]->accumulate(g);
    }
  }));
}

// ---------------------------------------------------------------- conv

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, double* col) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::size_t r = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int xx = ox * stride - pad + kx;
            col[r++] = (y >= 0 && y < H && xx >= 0 && xx < W) ? x.at(c, y, xx) : 0.0;
          }
        }
      }
}

void col2im_accum(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                  int oh, int ow, Tensor& gx) {
  std::size_t r = 0;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox, ++r) {
            const int xx = ox * stride - pad + kx;
            if (y >= 0 && y < H && xx >= 0 && xx < W) gx.at(c, y, xx) += col[r];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  if (xv.ndim() != 3 || wv.ndim() != 4 || wv.dim(1) != xv.dim(0))
    throw std::invalid_argument("conv2d: shape mismatch");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int F = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
  const int K = C * kh * kw, P = oh * ow;
  std::vector<double> col(static_cast<std::size_t>(K) * P);
  im2col(xv, kh, kw, stride, pad, oh, ow, col.data());
  Tensor out({F, oh, ow});
  {
    CMapMat Wm(wv.data(), F, K), Cm(col.data(), K, P);
    MapMat Om(out.data(), F, P);
    Om.noalias() = Wm * Cm;
  }
  const Tensor& bv = b.val();
  if (bv.size() != static_cast<std::size_t>(F)) throw std::invalid_argument("conv2d: bad bias");
  for (int f = 0; f < F; ++f) {
    double* o = out.data() + static_cast<std::size_t>(f) * P;
    const double bb = bv[f];
    for (int p = 0; p < P; ++p) o[p] += bb;
  }
  auto back = [C, H, W, F, kh, kw, stride, pad, oh, ow, K, P](Node& n) {
    Node& ix = *n.inputs[0];
    Node& iw = *n.inputs[1];
    Node& ib = *n.inputs[2];
    CMapMat G(n.grad.data(), F, P);
    if (ib.requires_grad) {
      Tensor gb({F});
      for (int f = 0; f < F; ++f) gb[f] = G.row(f).sum();
      ib.accumulate(gb);
    }
    if (iw.requires_grad) {
      std::vector<double> col(static_cast<std::size_t>(K) * P);
      im2col(ix.val, kh, kw, stride, pad, oh, ow, col.data());
      CMapMat Cm(col.data(), K, P);
      Tensor gw({F, C, kh, kw});
      MapMat GW(gw.data(), F, K);
      GW.noalias() = G * Cm.transpose();
      iw.accumulate(gw);
    }
    if (ix.requires_grad) {
      std::vector<double> gcol(static_cast<std::size_t>(K) * P);
      CMapMat Wm(iw.val.data(), F, K);
      MapMat GC(gcol.data(), K, P);
      GC.noalias() = Wm.transpose() * G;
      Tensor gx({C, H, W});
      col2im_accum(gcol.data(), C, H, W, kh, kw, stride, pad, oh, ow, gx);
      ix.accumulate(gx);
    }
  };
  return Var(make_node(std::move(out), {x.node(), w.node(), b.node()}, back));
}

Var submanifold_conv2d(const Var& x, const Var& w, const Var& b,
                       const std::vector<std::uint8_t>& valid, int pad) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int F = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != C) throw std::invalid_argument("submanifold_conv2d: channel mismatch");
  if (static_cast<int>(valid.size()) != H * W)
    throw std::invalid_argument("submanifold_conv2d: mask size mismatch");
  const int oh = H + 2 * pad - kh + 1, ow = W + 2 * pad - kw + 1;
  if (oh != H || ow != W)
    throw std::invalid_argument("submanifold_conv2d: padding must preserve shape");
  const Tensor& bv = b.val();
  Tensor out({F, H, W});
  for (int oy = 0; oy < H; ++oy)
    for (int ox = 0; ox < W; ++ox) {
      if (!valid[static_cast<std::size_t>(oy) * W + ox]) continue;  // stays exactly zero
      for (int f = 0; f < F; ++f) {
        double s = bv[f];
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy - pad + ky;
          if (y < 0 || y >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int xx = ox - pad + kx;
            if (xx < 0 || xx >= W) continue;
            if (!valid[static_cast<std::size_t>(y) * W + xx]) continue;
            for (int c = 0; c < C; ++c) s += wv.at(f, c, ky, kx) * xv.at(c, y, xx);
          }
        }
        out.at(f, oy, ox) = s;
      }
    }
  std::vector<std::uint8_t> mask = valid;
  auto back = [C, H, W, F, kh, kw, pad, mask](Node& n) {
    Node& ix = *n.inputs[0];
    Node& iw = *n.inputs[1];
    Node& ib = *n.inputs[2];
    Tensor gx, gw, gb;
    if (ix.requires_grad) gx = Tensor::zeros({C, H, W});
    if (iw.requires_grad) gw = Tensor::zeros({F, C, kh, kw});
    if (ib.requires_grad) gb = Tensor::zeros({F});
    for (int oy = 0; oy < H; ++oy)
      for (int ox = 0; ox < W; ++ox) {
        if (!mask[static_cast<std::size_t>(oy) * W + ox]) continue;
        for (int f = 0; f < F; ++f) {
          const double g = n.grad.at(f, oy, ox);
          if (g == 0.0) continue;
          if (gb.defined()) gb[f] += g;
          for (int ky = 0; ky < kh; ++ky) {
            const int y = oy - pad + ky;
            if (y < 0 || y >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int xx = ox - pad + kx;
              if (xx < 0 || xx >= W) continue;
              if (!mask[static_cast<std::size_t>(y) * W + xx]) continue;
              for (int c = 0; c < C; ++c) {
                if (gw.defined()) gw.at(f, c, ky, kx) += g * ix.val.at(c, y, xx);
                if (gx.defined()) gx.at(c, y, xx) += g * iw.val.at(f, c, ky, kx);
              }
            }
          }
        }
      }
    if (gx.defined()) ix.accumulate(gx);
    if (gw.defined()) iw.accumulate(gw);
    if (gb.defined()) ib.accumulate(gb);
  };
  return Var(make_node(std::move(out), {x.node(), w.node(), b.node()}, back));
}

// ---------------------------------------------------------------- pooling

Var maxpool2d(const Var& x, int k, int stride, int pad) {
  const Tensor& xv = x.val();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int oh = (H + 2 * pad - k) / stride + 1;
  const int ow = (W + 2 * pad - k) / stride + 1;
  Tensor out({C, oh, ow});
  std::vector<int> arg(static_cast<std::size_t>(C) * oh * ow);
  std::size_t p = 0;
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++p) {
        double best = -std::numeric_limits<double>::infinity();
        int bi = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int y = oy * stride - pad + ky;
          if (y < 0 || y >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int xx = ox * stride - pad + kx;
            if (xx < 0 || xx >= W) continue;
            const double v = xv.at(c, y, xx);
            if (v > best) {
              best = v;
              bi = (c * H + y) * W + xx;
            }
          }
        }
        out[p] = best;
        arg[p] = bi;
      }
  return Var(make_node(std::move(out), {x.node()}, [arg](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (std::size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0) g[static_cast<std::size_t>(arg[i])] += n.grad[i];
    in.accumulate(g);
  }));
}

Var avgpool_adaptive(const Var& x, int oh, int ow) {
  const Tensor& xv = x.val();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor out({C, oh, ow});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = (oy * H) / oh, y1 = ((oy + 1) * H + oh - 1) / oh;
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = (ox * W) / ow, x1 = ((ox + 1) * W + ow - 1) / ow;
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += xv.at(c, y, xx);
        out.at(c, oy, ox) = s / ((y1 - y0) * (x1 - x0));
      }
    }
  return Var(make_node(std::move(out), {x.node()}, [C, H, W, oh, ow](Node& n) {
    Tensor g({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        const int y0 = (oy * H) / oh, y1 = ((oy + 1) * H + oh - 1) / oh;
        for (int ox = 0; ox < ow; ++ox) {
          const int x0 = (ox * W) / ow, x1 = ((ox + 1) * W + ow - 1) / ow;
          const double gg = n.grad.at(c, oy, ox) / ((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) g.at(c, y, xx) += gg;
        }
      }
    n.inputs[0]->accumulate(g);
  }));
}

namespace {
inline int reflect_idx(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace

Var mean3x3_reflect(const Var& x) {
  const Tensor& xv = x.val();
  const bool chw = xv.ndim() == 3;
  const int C = chw ? xv.dim(0) : 1;
  const int H = chw ? xv.dim(1) : xv.dim(0);
  const int W = chw ? xv.dim(2) : xv.dim(1);
  Tensor out(xv.shape());
  const double k = 1.0 / 9.0;
  for (int c = 0; c < C; ++c) {
    const double* src = xv.data() + static_cast<std::size_t>(c) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        double s = 0.0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            s += src[reflect_idx(i + di, H) * W + reflect_idx(j + dj, W)];
        dst[i * W + j] = s * k;
      }
  }
  return Var(make_node(std::move(out), {x.node()}, [C, H, W, k](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (int c = 0; c < C; ++c) {
      const double* gs = n.grad.data() + static_cast<std::size_t>(c) * H * W;
      double* gd = g.data() + static_cast<std::size_t>(c) * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const double gg = gs[i * W + j] * k;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              gd[reflect_idx(i + di, H) * W + reflect_idx(j + dj, W)] += gg;
        }
    }
    in.accumulate(g);
  }));
}

Var resize_nearest(const Var& x, int oh, int ow) {
  const Tensor& xv = x.val();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor out({C, oh, ow});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < oh; ++oy) {
      const int y = (oy * H) / oh;
      for (int ox = 0; ox < ow; ++ox) out.at(c, oy, ox) = xv.at(c, y, (ox * W) / ow);
    }
  return Var(make_node(std::move(out), {x.node()}, [C, H, W, oh, ow](Node& n) {
    Tensor g({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        const int y = (oy * H) / oh;
        for (int ox = 0; ox < ow; ++ox) g.at(c, y, (ox * W) / ow) += n.grad.at(c, oy, ox);
      }
    n.inputs[0]->accumulate(g);
  }));
}

// ---------------------------------------------------------------- softmax

Var softmax_rows_masked(const Var& a, const std::vector<std::uint8_t>& col_valid) {
  const Tensor& x = a.val();
  if (x.ndim() != 2) throw std::invalid_argument("softmax_rows_masked: expects 2-D");
  const int R = x.dim(0), Cn = x.dim(1);
  if (static_cast<int>(col_valid.size()) != Cn)
    throw std::invalid_argument("softmax_rows_masked: mask size");
  Tensor out({R, Cn});
  bool any = false;
  for (auto v : col_valid) any |= (v != 0);
  if (any) {
    for (int r = 0; r < R; ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < Cn; ++c)
        if (col_valid[c]) m = std::max(m, x.at(r, c));
      double s = 0.0;
      for (int c = 0; c < Cn; ++c)
        if (col_valid[c]) {
          const double e = std::exp(x.at(r, c) - m);
          out.at(r, c) = e;
          s += e;
        }
      for (int c = 0; c < Cn; ++c)
        if (col_valid[c]) out.at(r, c) /= s;
    }
  }
  std::vector<std::uint8_t> mask = col_valid;
  return Var(make_node(std::move(out), {a.node()}, [R, Cn, mask](Node& n) {
    Tensor g({R, Cn});
    for (int r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int c = 0; c < Cn; ++c)
        if (mask[c]) dot += n.grad.at(r, c) * n.val.at(r, c);
      for (int c = 0; c < Cn; ++c)
        if (mask[c]) g.at(r, c) = n.val.at(r, c) * (n.grad.at(r, c) - dot);
    }
    n.inputs[0]->accumulate(g);
  }));
}

// ---------------------------------------------------------------- sampling

Var bilinear_sample(const Var& img, const Var& u, const Var& v, Tensor& valid_out) {
  const Tensor& I = img.val();
  const Tensor& U = u.val();
  const Tensor& V = v.val();
  if (I.ndim() != 3 || !U.same_shape(V)) throw std::invalid_argument("bilinear_sample: shapes");
  const int C = I.dim(0), H = I.dim(1), W = I.dim(2);
  const int Ho = U.dim(0), Wo = U.dim(1);
  Tensor out({C, Ho, Wo});
  valid_out = Tensor::zeros({Ho, Wo});
  const std::size_t n = U.size();
  for (std::size_t p = 0; p < n; ++p) {
    const double uu = U[p], vv = V[p];
    if (!(uu >= 0.0 && uu <= W - 1 && vv >= 0.0 && vv <= H - 1)) continue;
    valid_out[p] = 1.0;
    int x0 = std::min(static_cast<int>(std::floor(uu)), W - 2);
    int y0 = std::min(static_cast<int>(std::floor(vv)), H - 2);
    if (W == 1) x0 = 0;
    if (H == 1) y0 = 0;
    const double wx = uu - x0, wy = vv - y0;
    for (int c = 0; c < C; ++c) {
      const double* ic = I.data() + static_cast<std::size_t>(c) * H * W;
      const double v00 = ic[y0 * W + x0], v01 = ic[y0 * W + x0 + 1];
      const double v10 = ic[(y0 + 1) * W + x0], v11 = ic[(y0 + 1) * W + x0 + 1];
      out[static_cast<std::size_t>(c) * n + p] =
          (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
    }
  }
  Tensor valid = valid_out;
  auto back = [C, H, W, Ho, Wo, valid](Node& nd) {
    Node& ii = *nd.inputs[0];
    Node& iu = *nd.inputs[1];
    Node& iv = *nd.inputs[2];
    const Tensor& I = ii.val;
    const Tensor& U = iu.val;
    const Tensor& V = iv.val;
    Tensor gi, gu, gv;
    if (ii.requires_grad) gi = Tensor::zeros({C, H, W});
    if (iu.requires_grad) gu = Tensor::zeros({Ho, Wo});
    if (iv.requires_grad) gv = Tensor::zeros({Ho, Wo});
    const std::size_t n = U.size();
    for (std::size_t p = 0; p < n; ++p) {
      if (valid[p] == 0.0) continue;
      const double uu = U[p], vv = V[p];
      int x0 = std::min(static_cast<int>(std::floor(uu)), W - 2);
      int y0 = std::min(static_cast<int>(std::floor(vv)), H - 2);
      if (W == 1) x0 = 0;
      if (H == 1) y0 = 0;
      const double wx = uu - x0, wy = vv - y0;
      for (int c = 0; c < C; ++c) {
        const double g = nd.grad[static_cast<std::size_t>(c) * n + p];
        if (g == 0.0) continue;
        const double* ic = I.data() + static_cast<std::size_t>(c) * H * W;
        const double v00 = ic[y0 * W + x0], v01 = ic[y0 * W + x0 + 1];
        const double v10 = ic[(y0 + 1) * W + x0], v11 = ic[(y0 + 1) * W + x0 + 1];
        if (gi.defined()) {
          double* gc = gi.data() + static_cast<std::size_t>(c) * H * W;
          gc[y0 * W + x0] += g * (1.0 - wy) * (1.0 - wx);
          gc[y0 * W + x0 + 1] += g * (1.0 - wy) * wx;
          gc[(y0 + 1) * W + x0] += g * wy * (1.0 - wx);
          gc[(y0 + 1) * W + x0 + 1] += g * wy * wx;
        }
        if (gu.defined()) gu[p] += g * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
        if (gv.defined()) gv[p] += g * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
      }
    }
    if (gi.defined()) ii.accumulate(gi);
    if (gu.defined()) iu.accumulate(gu);
    if (gv.defined()) iv.accumulate(gv);
  };
  return Var(make_node(std::move(out), {img.node(), u.node(), v.node()}, back));
}

Var dx_forward(const Var& a) {
  const Tensor& x = a.val();
  if (x.ndim() != 2) throw std::invalid_argument("dx_forward: expects [H,W]");
  const int H = x.dim(0), W = x.dim(1);
  Tensor out({H, W - 1});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j + 1 < W; ++j) out.at(i, j) = x.at(i, j + 1) - x.at(i, j);
  return Var(make_node(std::move(out), {a.node()}, [H, W](Node& n) {
    Tensor g({H, W});
    for (int i = 0; i < H; ++i)
      for (int j = 0; j + 1 < W; ++j) {
        g.at(i, j + 1) += n.grad.at(i, j);
        g.at(i, j) -= n.grad.at(i, j);
      }
    n.inputs[0]->accumulate(g);
  }));
}

Var dy_forward(const Var& a) {
  const Tensor& x = a.val();
  if (x.ndim() != 2) throw std::invalid_argument("dy_forward: expects [H,W]");
  const int H = x.dim(0), W = x.dim(1);
  Tensor out({H - 1, W});
  for (int i = 0; i + 1 < H; ++i)
    for (int j = 0; j < W; ++j) out.at(i, j) = x.at(i + 1, j) - x.at(i, j);
  return Var(make_node(std::move(out), {a.node()}, [H, W](Node& n) {
    Tensor g({H, W});
    for (int i = 0; i + 1 < H; ++i)
      for (int j = 0; j < W; ++j) {
        g.at(i + 1, j) += n.grad.at(i, j);
        g.at(i, j) -= n.grad.at(i, j);
      }
    n.inputs[0]->accumulate(g);
  }));
}

Var median(const Var& a) {
  const Tensor& x = a.val();
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("median: empty");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return x[i] != x[j] ? x[i] < x[j] : i < j;
  });
  double value;
  std::vector<std::size_t> sel;
  if (n % 2 == 1) {
    sel = {idx[n / 2]};
    value = x[sel[0]];
  } else {
    sel = {idx[n / 2 - 1], idx[n / 2]};
    value = 0.5 * (x[sel[0]] + x[sel[1]]);
  }
  return Var(make_node(Tensor::scalar(value), {a.node()}, [sel](Node& nd) {
    Node& in = *nd.inputs[0];
    Tensor g(in.val.shape());
    const double w = sel.size() == 1 ? 1.0 : 0.5;
    for (std::size_t s : sel) g[s] += nd.grad[0] * w;
    in.accumulate(g);
  }));
}

}  // namespace selftof::ad
