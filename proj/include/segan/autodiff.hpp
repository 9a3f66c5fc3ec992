#pragma once

#include "segan/tensor.hpp"

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace segan {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One record on the reverse-mode tape: a value, the nodes it was computed
/// from, and the local rule that pushes an incoming gradient to them. Graphs
/// are rebuilt per step (define-by-run) and are acyclic by construction.
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value once touched; empty until then
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Eigen::ArrayXd& g);
  bool has_grad() const { return grad.numel() == value.numel(); }
  void ensure_grad();
};

/// Value-semantics handle to a tape node. Free functions below build the
/// graph; `backward` runs the reverse sweep.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  /// Wrap a value with no gradient tracking.
  static Var constant(Tensor t);
  /// Wrap a value as a differentiable leaf.
  static Var leaf(Tensor t);

  bool valid() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const { return node_->value.item(); }
  void zero_grad();

 private:
  NodePtr node_;
};

/// While alive, newly built ops produce constants: values are computed but
/// no parents or backward rules are recorded. Cuts forward-only passes
/// (frozen-generator sampling, evaluation) to value cost.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// A named trainable leaf. Names are unique within one model.
struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

// ---- elementwise and reduction ops --------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var square(const Var& a);
Var sqrt(const Var& a);  // inputs strictly positive
/// sqrt accepting exact zeros: gradient there is clipped to keep the tape
/// finite (Pearson's zero-variance guard relies on it).
Var sqrt_nonneg(const Var& a);
Var log(const Var& a);   // inputs strictly positive
Var exp(const Var& a);
Var powi(const Var& a, int n);  // integer power, n >= 1
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp(const Var& a, double lo, double hi);
Var mean(const Var& a);  // -> [1]
Var sum(const Var& a);   // -> [1]
Var dot(const Var& a, const Var& b);  // -> [1]
/// x - s broadcast over x, s one-element.
Var sub_bscalar(const Var& x, const Var& s);
/// Stack one-element vars into a [n] tensor.
Var stack_scalars(const std::vector<Var>& xs);
Var detach(const Var& a);
/// Same data, new shape (element count must match).
Var reshape(const Var& a, const std::vector<int>& shape);

// ---- spatial ops on [C,H,W] tensors --------------------------------------

Var concat_channels(const Var& a, const Var& b);
Var nearest_upsample2(const Var& a);
Var avg_pool2(const Var& a);
Var crop_hw(const Var& x, int r0, int c0, int h, int w);

/// Explicit per-side padding; even "same" kernels pad one extra pixel on
/// the bottom/right.
struct Pad4 {
  int top = 0, bottom = 0, left = 0, right = 0;
};
Pad4 same_padding(int kernel_side);

/// Cross-correlation (no kernel flip), input [C_in,H,W], kernel
/// [C_out,C_in,k,k], output [C_out,H',W'] with
/// H' = floor((H + pad_t + pad_b - k)/stride) + 1.
Var conv2d(const Var& input, const Var& kernel, int stride, const Pad4& pad);
Var conv2d(const Var& input, const Var& kernel, int stride, int padding);
Var add_channel_bias(const Var& x, const Var& bias);

/// Per-channel normalization over spatial positions with learned affine.
/// Statistics are taken from x itself and participate in the gradient.
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
/// Same affine normalization with externally fixed statistics.
Var channel_norm_fixed(const Var& x, const Var& gamma, const Var& beta,
                       const Tensor& mean_c, const Tensor& var_c, double eps);
/// Per-channel biased mean/variance over spatial positions of a [C,H,W]
/// tensor; feeds running-statistic updates.
void channel_stats(const Tensor& x, Tensor& mean_c, Tensor& var_c);

// ---- reverse sweep --------------------------------------------------------

/// Reverse-mode sweep from a scalar root; every reachable node is visited
/// exactly once and leaf grads accumulate (callers zero them between steps).
void backward(const Var& root);

/// Convenience: zero, sweep, and collect grads of the given parameters.
std::map<std::string, Tensor> backward(const Var& root,
                                       std::span<const Parameter> params);

void zero_grads(std::span<Parameter> params);

// ---- gradient checking ----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool nonfinite = false;  // loss was non-finite at a perturbed point
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst() const;
  bool pass(double tol) const;
  std::string to_string() const;
};

/// Central-finite-difference check of reverse-mode gradients. loss_fn must
/// rebuild its graph from the current parameter values on every call.
/// Relative error: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const std::function<Var()>& loss_fn,
                           std::vector<Parameter>& params, double eps = 1e-5);

}  // namespace segan
