#include "segan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace segan {

namespace {

thread_local int g_no_grad_depth = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using ConstMapRM = Eigen::Map<const RowMat>;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    fail(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
         b.value().shape_str());
  }
}

void require_rank3(const Var& a, const char* op) {
  if (a.value().rank() != 3) {
    fail(std::string(op) + ": expected a [C,H,W] tensor, got " +
         a.value().shape_str());
  }
}

Var make_op(Tensor value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_no_grad_depth == 0) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || (p && p->requires_grad);
    if (rg) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

}  // namespace

void Node::ensure_grad() {
  if (!has_grad()) grad = Tensor(value.shape());
}

void Node::accumulate(const Eigen::ArrayXd& g) {
  ensure_grad();
  grad.array() += g;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

Var Var::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var Var::leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.value().shape(), a.value().array() + b.value().array());
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.array());
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.array());
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.value().shape(), a.value().array() - b.value().array());
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.array());
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad.array());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.value().shape(), a.value().array() * b.value().array());
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& g = self.grad.array();
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(g * self.parents[1]->value.array());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(g * self.parents[0]->value.array());
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.value().shape(), a.value().array() / b.value().array());
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& g = self.grad.array();
    const auto& bv = self.parents[1]->value.array();
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(g / bv);
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(-g * self.value.array() / bv);
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double c) {
  Tensor out(a.value().shape(), a.value().array() + c);
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.array());
  });
}

Var mul_scalar(const Var& a, double c) {
  Tensor out(a.value().shape(), a.value().array() * c);
  return make_op(std::move(out), {a.node()}, [c](Node& self) {
    self.parents[0]->accumulate(self.grad.array() * c);
  });
}

Var square(const Var& a) {
  Tensor out(a.value().shape(), a.value().array().square());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(2.0 * self.grad.array() *
                                self.parents[0]->value.array());
  });
}

Var sqrt(const Var& a) {
  if (!(a.value().array() > 0.0).all()) fail("sqrt: inputs must be strictly positive");
  Tensor out(a.value().shape(), a.value().array().sqrt());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(0.5 * self.grad.array() / self.value.array());
  });
}

Var sqrt_nonneg(const Var& a) {
  if (!(a.value().array() >= 0.0).all()) {
    fail("sqrt_nonneg: inputs must be non-negative");
  }
  Tensor out(a.value().shape(), a.value().array().sqrt());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(0.5 * self.grad.array() /
                                self.value.array().max(1e-150));
  });
}

Var log(const Var& a) {
  if (!(a.value().array() > 0.0).all()) fail("log: inputs must be strictly positive");
  Tensor out(a.value().shape(), a.value().array().log());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.array() / self.parents[0]->value.array());
  });
}

Var exp(const Var& a) {
  Tensor out(a.value().shape(), a.value().array().exp());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.array() * self.value.array());
  });
}

Var powi(const Var& a, int n) {
  if (n < 1) fail("powi: exponent must be >= 1");
  Eigen::ArrayXd v = a.value().array();
  for (int i = 1; i < n; ++i) v *= a.value().array();
  Tensor out(a.value().shape(), std::move(v));
  return make_op(std::move(out), {a.node()}, [n](Node& self) {
    const auto& x = self.parents[0]->value.array();
    Eigen::ArrayXd d = Eigen::ArrayXd::Constant(x.size(), static_cast<double>(n));
    for (int i = 1; i < n; ++i) d *= x;  // n * x^(n-1)
    self.parents[0]->accumulate(self.grad.array() * d);
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.value().shape(), 1.0 / (1.0 + (-a.value().array()).exp()));
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    const auto& s = self.value.array();
    self.parents[0]->accumulate(self.grad.array() * s * (1.0 - s));
  });
}

Var leaky_relu(const Var& a, double slope) {
  const auto& x = a.value().array();
  Tensor out(a.value().shape(), (x >= 0.0).select(x, slope * x));
  return make_op(std::move(out), {a.node()}, [slope](Node& self) {
    const auto& x = self.parents[0]->value.array();
    const auto& g = self.grad.array();
    self.parents[0]->accumulate((x >= 0.0).select(g, slope * g));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo < hi)) fail("clamp: lo must be < hi");
  Tensor out(a.value().shape(), a.value().array().max(lo).min(hi));
  return make_op(std::move(out), {a.node()}, [lo, hi](Node& self) {
    const auto& x = self.parents[0]->value.array();
    const auto& g = self.grad.array();
    Eigen::ArrayXd masked = ((x >= lo) && (x <= hi)).select(g, 0.0);
    self.parents[0]->accumulate(masked);
  });
}

Var mean(const Var& a) {
  Tensor out = Tensor::scalar(a.value().array().mean());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    Node* p = self.parents[0].get();
    p->ensure_grad();
    p->grad.array() += self.grad[0] / static_cast<double>(p->value.numel());
  });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().array().sum());
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    Node* p = self.parents[0].get();
    p->ensure_grad();
    p->grad.array() += self.grad[0];
  });
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  Tensor out = Tensor::scalar((a.value().array() * b.value().array()).sum());
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double g = self.grad[0];
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(g * self.parents[1]->value.array());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(g * self.parents[0]->value.array());
  });
}

Var sub_bscalar(const Var& x, const Var& s) {
  if (s.value().numel() != 1) fail("sub_bscalar: s must be one-element");
  Tensor out(x.value().shape(), x.value().array() - s.value()[0]);
  return make_op(std::move(out), {x.node(), s.node()}, [](Node& self) {
    const auto& g = self.grad.array();
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(g);
    if (self.parents[1]->requires_grad) {
      Node* p = self.parents[1].get();
      p->ensure_grad();
      p->grad.array() += -g.sum();
    }
  });
}

Var stack_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) fail("stack_scalars: empty input");
  Tensor out({static_cast<int>(xs.size())});
  std::vector<NodePtr> parents;
  parents.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().numel() != 1) fail("stack_scalars: inputs must be one-element");
    out[static_cast<Eigen::Index>(i)] = xs[i].value()[0];
    parents.push_back(xs[i].node());
  }
  return make_op(std::move(out), std::move(parents), [](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node* p = self.parents[i].get();
      if (!p->requires_grad) continue;
      p->ensure_grad();
      p->grad.array() += self.grad[static_cast<Eigen::Index>(i)];
    }
  });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

Var reshape(const Var& a, const std::vector<int>& shape) {
  Tensor out(shape, a.value().array());  // validates element count
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.array());
  });
}

// ---- spatial ops ----------------------------------------------------------

Var concat_channels(const Var& a, const Var& b) {
  require_rank3(a, "concat_channels");
  require_rank3(b, "concat_channels");
  if (a.value().dim(1) != b.value().dim(1) || a.value().dim(2) != b.value().dim(2)) {
    fail("concat_channels: spatial sizes differ, " + a.value().shape_str() +
         " vs " + b.value().shape_str());
  }
  const Eigen::Index na = a.value().numel(), nb = b.value().numel();
  Tensor out({a.value().dim(0) + b.value().dim(0), a.value().dim(1), a.value().dim(2)});
  out.array().head(na) = a.value().array();
  out.array().tail(nb) = b.value().array();
  return make_op(std::move(out), {a.node(), b.node()}, [na, nb](Node& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.grad.array().head(na));
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(self.grad.array().tail(nb));
  });
}

Var nearest_upsample2(const Var& a) {
  require_rank3(a, "nearest_upsample2");
  const int C = a.value().dim(0), H = a.value().dim(1), W = a.value().dim(2);
  Tensor out({C, 2 * H, 2 * W});
  const double* src = a.value().data();
  double* dst = out.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double v = src[idx3(c, h, w, H, W)];
        dst[idx3(c, 2 * h, 2 * w, 2 * H, 2 * W)] = v;
        dst[idx3(c, 2 * h, 2 * w + 1, 2 * H, 2 * W)] = v;
        dst[idx3(c, 2 * h + 1, 2 * w, 2 * H, 2 * W)] = v;
        dst[idx3(c, 2 * h + 1, 2 * w + 1, 2 * H, 2 * W)] = v;
      }
  return make_op(std::move(out), {a.node()}, [C, H, W](Node& self) {
    Node* p = self.parents[0].get();
    p->ensure_grad();
    const double* g = self.grad.data();
    double* pg = p->grad.data();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          pg[idx3(c, h, w, H, W)] += g[idx3(c, 2 * h, 2 * w, 2 * H, 2 * W)] +
                                     g[idx3(c, 2 * h, 2 * w + 1, 2 * H, 2 * W)] +
                                     g[idx3(c, 2 * h + 1, 2 * w, 2 * H, 2 * W)] +
                                     g[idx3(c, 2 * h + 1, 2 * w + 1, 2 * H, 2 * W)];
        }
  });
}

Var avg_pool2(const Var& a) {
  require_rank3(a, "avg_pool2");
  const int C = a.value().dim(0), H = a.value().dim(1), W = a.value().dim(2);
  if (H % 2 != 0 || W % 2 != 0) {
    fail("avg_pool2: spatial size must be even, got " + a.value().shape_str());
  }
  const int OH = H / 2, OW = W / 2;
  Tensor out({C, OH, OW});
  const double* src = a.value().data();
  double* dst = out.data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < OH; ++h)
      for (int w = 0; w < OW; ++w) {
        dst[idx3(c, h, w, OH, OW)] =
            0.25 * (src[idx3(c, 2 * h, 2 * w, H, W)] +
                    src[idx3(c, 2 * h, 2 * w + 1, H, W)] +
                    src[idx3(c, 2 * h + 1, 2 * w, H, W)] +
                    src[idx3(c, 2 * h + 1, 2 * w + 1, H, W)]);
      }
  return make_op(std::move(out), {a.node()}, [C, H, W, OH, OW](Node& self) {
    Node* p = self.parents[0].get();
    p->ensure_grad();
    const double* g = self.grad.data();
    double* pg = p->grad.data();
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < OH; ++h)
        for (int w = 0; w < OW; ++w) {
          const double q = 0.25 * g[idx3(c, h, w, OH, OW)];
          pg[idx3(c, 2 * h, 2 * w, H, W)] += q;
          pg[idx3(c, 2 * h, 2 * w + 1, H, W)] += q;
          pg[idx3(c, 2 * h + 1, 2 * w, H, W)] += q;
          pg[idx3(c, 2 * h + 1, 2 * w + 1, H, W)] += q;
        }
  });
}

Var crop_hw(const Var& x, int r0, int c0, int h, int w) {
  require_rank3(x, "crop_hw");
  const int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (r0 < 0 || c0 < 0 || h < 1 || w < 1 || r0 + h > H || c0 + w > W) {
    fail("crop_hw: region out of bounds");
  }
  Tensor out({C, h, w});
  const double* src = x.value().data();
  double* dst = out.data();
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q)
        dst[idx3(c, r, q, h, w)] = src[idx3(c, r0 + r, c0 + q, H, W)];
  return make_op(std::move(out), {x.node()}, [C, H, W, r0, c0, h, w](Node& self) {
    Node* p = self.parents[0].get();
    p->ensure_grad();
    const double* g = self.grad.data();
    double* pg = p->grad.data();
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q)
          pg[idx3(c, r0 + r, c0 + q, H, W)] += g[idx3(c, r, q, h, w)];
  });
}

Pad4 same_padding(int kernel_side) {
  Pad4 p;
  p.top = p.left = (kernel_side - 1) / 2;
  p.bottom = p.right = kernel_side - 1 - p.top;
  return p;
}

namespace {

struct ConvDims {
  int C_in, H, W, C_out, kh, kw, OH, OW, stride;
  Pad4 pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride,
                   const Pad4& pad) {
  if (input.rank() != 3) fail("conv2d: input must be [C_in,H,W], got " + input.shape_str());
  if (kernel.rank() != 4)
    fail("conv2d: kernel must be [C_out,C_in,k,k], got " + kernel.shape_str());
  if (kernel.dim(1) != input.dim(0)) {
    fail("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
         " input channels, input has " + std::to_string(input.dim(0)));
  }
  if (stride < 1) fail("conv2d: stride must be >= 1");
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0)
    fail("conv2d: padding must be >= 0");
  ConvDims d;
  d.C_in = input.dim(0);
  d.H = input.dim(1);
  d.W = input.dim(2);
  d.C_out = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  d.pad = pad;
  const int eff_h = d.H + pad.top + pad.bottom;
  const int eff_w = d.W + pad.left + pad.right;
  if (eff_h < d.kh || eff_w < d.kw) {
    fail("conv2d: kernel larger than padded input (" + std::to_string(eff_h) +
         "x" + std::to_string(eff_w) + " vs " + std::to_string(d.kh) + "x" +
         std::to_string(d.kw) + ")");
  }
  d.OH = (eff_h - d.kh) / stride + 1;
  d.OW = (eff_w - d.kw) / stride + 1;
  if (d.OH < 1 || d.OW < 1) fail("conv2d: zero-sized output");
  return d;
}

// Patch matrix [C_in*kh*kw, OH*OW]; convolution then reduces to one GEMM.
RowMat im2col(const Tensor& input, const ConvDims& d) {
  RowMat col(static_cast<Eigen::Index>(d.C_in) * d.kh * d.kw,
             static_cast<Eigen::Index>(d.OH) * d.OW);
  const double* src = input.data();
  for (int ci = 0; ci < d.C_in; ++ci) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * d.kh + ki) * d.kw + kj;
        double* dst = col.data() + row * col.cols();
        for (int oh = 0; oh < d.OH; ++oh) {
          const int ih = oh * d.stride - d.pad.top + ki;
          double* out_row = dst + static_cast<Eigen::Index>(oh) * d.OW;
          if (ih < 0 || ih >= d.H) {
            std::fill(out_row, out_row + d.OW, 0.0);
            continue;
          }
          const double* in_row = src + idx3(ci, ih, 0, d.H, d.W);
          for (int ow = 0; ow < d.OW; ++ow) {
            const int iw = ow * d.stride - d.pad.left + kj;
            out_row[ow] = (iw >= 0 && iw < d.W) ? in_row[iw] : 0.0;
          }
        }
      }
    }
  }
  return col;
}

// Scatter-add of a patch-matrix gradient back onto the input gradient.
void col2im_add(const RowMat& gcol, const ConvDims& d, double* ginput) {
  for (int ci = 0; ci < d.C_in; ++ci) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * d.kh + ki) * d.kw + kj;
        const double* g = gcol.data() + row * gcol.cols();
        for (int oh = 0; oh < d.OH; ++oh) {
          const int ih = oh * d.stride - d.pad.top + ki;
          if (ih < 0 || ih >= d.H) continue;
          const double* g_row = g + static_cast<Eigen::Index>(oh) * d.OW;
          double* in_row = ginput + idx3(ci, ih, 0, d.H, d.W);
          for (int ow = 0; ow < d.OW; ++ow) {
            const int iw = ow * d.stride - d.pad.left + kj;
            if (iw >= 0 && iw < d.W) in_row[iw] += g_row[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, int stride, const Pad4& pad) {
  const ConvDims d = conv_dims(input.value(), kernel.value(), stride, pad);
  const RowMat col = im2col(input.value(), d);
  const Eigen::Index kn = static_cast<Eigen::Index>(d.C_in) * d.kh * d.kw;
  ConstMapRM wmat(kernel.value().data(), d.C_out, kn);
  Tensor out({d.C_out, d.OH, d.OW});
  MapRM(out.data(), d.C_out, static_cast<Eigen::Index>(d.OH) * d.OW).noalias() =
      wmat * col;
  // The patch matrix is rebuilt in the backward pass rather than kept alive;
  // graphs hold several of these per image and the GEMM dominates anyway.
  return make_op(std::move(out), {input.node(), kernel.node()}, [d, kn](Node& self) {
    const Tensor& in_v = self.parents[0]->value;
    const Tensor& k_v = self.parents[1]->value;
    ConstMapRM gout(self.grad.data(), d.C_out, static_cast<Eigen::Index>(d.OH) * d.OW);
    if (self.parents[1]->requires_grad) {
      const RowMat col = im2col(in_v, d);
      Node* pk = self.parents[1].get();
      pk->ensure_grad();
      MapRM gk(pk->grad.data(), d.C_out, kn);
      gk.noalias() += gout * col.transpose();
    }
    if (self.parents[0]->requires_grad) {
      ConstMapRM wmat(k_v.data(), d.C_out, kn);
      RowMat gcol = wmat.transpose() * gout;
      Node* pi = self.parents[0].get();
      pi->ensure_grad();
      col2im_add(gcol, d, pi->grad.data());
    }
  });
}

Var conv2d(const Var& input, const Var& kernel, int stride, int padding) {
  Pad4 p;
  p.top = p.bottom = p.left = p.right = padding;
  return conv2d(input, kernel, stride, p);
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank3(x, "add_channel_bias");
  const int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (bias.value().rank() != 1 || bias.value().dim(0) != C) {
    fail("add_channel_bias: bias must be [" + std::to_string(C) + "], got " +
         bias.value().shape_str());
  }
  const Eigen::Index hw = static_cast<Eigen::Index>(H) * W;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    out.array().segment(c * hw, hw) = x.value().array().segment(c * hw, hw) +
                                      bias.value()[c];
  return make_op(std::move(out), {x.node(), bias.node()}, [C, hw](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.array());
    if (self.parents[1]->requires_grad) {
      Node* pb = self.parents[1].get();
      pb->ensure_grad();
      for (int c = 0; c < C; ++c)
        pb->grad[c] += self.grad.array().segment(c * hw, hw).sum();
    }
  });
}

void channel_stats(const Tensor& x, Tensor& mean_c, Tensor& var_c) {
  if (x.rank() != 3) fail("channel_stats: expected [C,H,W]");
  const int C = x.dim(0);
  const Eigen::Index hw = static_cast<Eigen::Index>(x.dim(1)) * x.dim(2);
  mean_c = Tensor({C});
  var_c = Tensor({C});
  for (int c = 0; c < C; ++c) {
    const auto seg = x.array().segment(c * hw, hw);
    const double m = seg.mean();
    mean_c[c] = m;
    var_c[c] = (seg - m).square().mean();
  }
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank3(x, "channel_norm");
  const int C = x.value().dim(0);
  if (gamma.value().rank() != 1 || gamma.value().dim(0) != C ||
      beta.value().rank() != 1 || beta.value().dim(0) != C) {
    fail("channel_norm: gamma/beta must be [C]");
  }
  const Eigen::Index hw =
      static_cast<Eigen::Index>(x.value().dim(1)) * x.value().dim(2);
  Eigen::ArrayXd xhat(x.value().numel());
  Eigen::ArrayXd inv_std(C);
  Tensor out(x.value().shape());
  for (int c = 0; c < C; ++c) {
    const auto seg = x.value().array().segment(c * hw, hw);
    const double m = seg.mean();
    const double v = (seg - m).square().mean();
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[c] = is;
    xhat.segment(c * hw, hw) = (seg - m) * is;
    out.array().segment(c * hw, hw) =
        gamma.value()[c] * xhat.segment(c * hw, hw) + beta.value()[c];
  }
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()},
                 [C, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const auto& g = self.grad.array();
    Node* px = self.parents[0].get();
    Node* pg = self.parents[1].get();
    Node* pb = self.parents[2].get();
    const auto& gamma_v = pg->value.array();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    if (px->requires_grad) px->ensure_grad();
    const double m = static_cast<double>(hw);
    for (int c = 0; c < C; ++c) {
      const auto gseg = g.segment(c * hw, hw);
      const auto xh = xhat.segment(c * hw, hw);
      if (pg->requires_grad) pg->grad[c] += (gseg * xh).sum();
      if (pb->requires_grad) pb->grad[c] += gseg.sum();
      if (px->requires_grad) {
        // standard normalization backward through batch statistics
        const Eigen::ArrayXd dxhat = gseg * gamma_v[c];
        const double s1 = dxhat.sum();
        const double s2 = (dxhat * xh).sum();
        px->grad.array().segment(c * hw, hw) +=
            (inv_std[c] / m) * (m * dxhat - s1 - xh * s2);
      }
    }
  });
}

Var channel_norm_fixed(const Var& x, const Var& gamma, const Var& beta,
                       const Tensor& mean_c, const Tensor& var_c, double eps) {
  require_rank3(x, "channel_norm_fixed");
  const int C = x.value().dim(0);
  if (mean_c.numel() != C || var_c.numel() != C) {
    fail("channel_norm_fixed: statistics must be [C]");
  }
  const Eigen::Index hw =
      static_cast<Eigen::Index>(x.value().dim(1)) * x.value().dim(2);
  Eigen::ArrayXd xhat(x.value().numel());
  Eigen::ArrayXd inv_std(C);
  Tensor out(x.value().shape());
  for (int c = 0; c < C; ++c) {
    const double is = 1.0 / std::sqrt(var_c[c] + eps);
    inv_std[c] = is;
    xhat.segment(c * hw, hw) = (x.value().array().segment(c * hw, hw) - mean_c[c]) * is;
    out.array().segment(c * hw, hw) =
        gamma.value()[c] * xhat.segment(c * hw, hw) + beta.value()[c];
  }
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()},
                 [C, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const auto& g = self.grad.array();
    Node* px = self.parents[0].get();
    Node* pg = self.parents[1].get();
    Node* pb = self.parents[2].get();
    for (int c = 0; c < C; ++c) {
      const auto gseg = g.segment(c * hw, hw);
      if (pg->requires_grad) {
        pg->ensure_grad();
        pg->grad[c] += (gseg * xhat.segment(c * hw, hw)).sum();
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        pb->grad[c] += gseg.sum();
      }
      if (px->requires_grad) {
        px->ensure_grad();
        px->grad.array().segment(c * hw, hw) += gseg * pg->value[c] * inv_std[c];
      }
    }
  });
}

// ---- reverse sweep --------------------------------------------------------

void backward(const Var& root) {
  if (!root.valid()) fail("backward: empty root");
  if (root.value().numel() != 1) {
    fail("backward: root must be scalar-valued, got " + root.value().shape_str());
  }
  Node* r = root.node().get();
  if (!r->requires_grad) return;  // no trainable leaf below

  // Post-order over the requires-grad subgraph; each node visited once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* n = top.first;
    if (top.second < n->parents.size()) {
      Node* p = n->parents[top.second++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  r->ensure_grad();
  r->grad.array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

std::map<std::string, Tensor> backward(const Var& root,
                                       std::span<const Parameter> params) {
  for (const auto& p : params) p.var.node()->grad = Tensor();
  backward(root);
  std::map<std::string, Tensor> out;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    out[p.name] = p.var.node()->has_grad() ? p.var.grad()
                                           : Tensor(p.var.value().shape());
  }
  return out;
}

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.var.zero_grad();
}

// ---- gradient checking ----------------------------------------------------

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

bool GradCheckReport::pass(double tol) const {
  for (const auto& e : entries)
    if (e.nonfinite || e.max_rel_err >= tol) return false;
  return true;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << "  " << e.name << ": max_rel_err=" << e.max_rel_err
       << (e.nonfinite ? " [non-finite loss at perturbed point]" : "") << "\n";
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Var()>& loss_fn,
                           std::vector<Parameter>& params, double eps) {
  if (eps <= 0.0) fail("grad_check: eps must be > 0");
  zero_grads(params);
  {
    Var loss = loss_fn();
    backward(loss);
  }
  std::vector<Tensor> ad_grads;
  ad_grads.reserve(params.size());
  for (auto& p : params) {
    ad_grads.push_back(p.var.node()->has_grad() ? p.var.grad()
                                                : Tensor(p.var.value().shape()));
  }

  const auto eval = [&]() {
    NoGradGuard ng;
    return loss_fn().item();
  };

  GradCheckReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    GradCheckEntry entry;
    entry.name = p.name;
    Tensor& v = p.var.value();
    for (Eigen::Index j = 0; j < v.numel(); ++j) {
      const double orig = v[j];
      v[j] = orig + eps;
      const double lp = eval();
      v[j] = orig - eps;
      const double lm = eval();
      v[j] = orig;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        entry.nonfinite = true;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * eps);
      const double ga = ad_grads[i][j];
      const double rel =
          std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    rep.entries.push_back(std::move(entry));
  }
  return rep;
}

}  // namespace segan
