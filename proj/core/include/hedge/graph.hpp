#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hedge/array.hpp"
#include "hedge/rng.hpp"

namespace hedge {

// Reverse-mode autodiff over dense double arrays. Graphs are built once
// (static shapes), then forward/backward run every step reusing the same
// buffers. Node ids are indices into a topologically ordered vector by
// construction, so "evaluate in order" is the whole scheduler.
//
// Design notes that matter for correctness:
//  - binary elementwise ops broadcast trailing dimensions (numpy rule);
//    backward sums gradients over the broadcast dimensions.
//  - max_pool2 ties break toward the first maximal element in row-major
//    order, and its backward routes the gradient there.
//  - reparameterize(mu, sigma, eps) computes mu + sigma*eps with broadcast,
//    but its backward treats eps as a constant: the draw is data, not a
//    differentiable input.
//  - conv2d/affine lower to BLAS dgemm (im2col for conv); everything else is
//    plain loops.

enum class Op : uint8_t {
  kLeaf,
  kAffine,        // X[B,F], W[F,O], b[O] -> [B,O]
  kConv2d,        // X[B,Ci,H,W], K[Co,Ci,kh,kw], b[Co] -> valid conv, stride 1
  kMaxPool2,      // [B,C,H,W] -> [B,C,H/2,W/2]
  kRelu,
  kSigmoid,
  kSoftplus,
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kClamp,         // clamp(x, lo, hi); zero gradient outside (lo, hi)
  kAffineConst,   // alpha * x + beta, scalar constants
  kAdd,
  kSub,
  kMul,
  kDiv,
  kSumAxes,       // reduce-sum over a set of axes (dims dropped)
  kMeanAxes,      // reduce-mean over a set of axes
  kReshape,
  kSlice,         // [start, stop) along one axis
  kConcat,        // along one axis
  kReparameterize,  // mu + sigma * eps, no gradient into eps
  kLogSumExp,     // over one axis (dim dropped), max-shifted for stability
};

struct Node {
  Op op = Op::kLeaf;
  std::vector<int> inputs;
  Array value;
  Array grad;
  std::string name;       // leaves only
  bool is_param = false;  // leaves only; non-param leaves are inputs

  // op attributes (used per kind)
  double alpha = 1.0, beta = 0.0;  // kAffineConst
  double lo = 0.0, hi = 0.0;       // kClamp
  int axis = 0;                    // kSlice/kConcat/kLogSumExp
  int64_t start = 0, stop = 0;     // kSlice
  std::vector<int> axes;           // kSumAxes/kMeanAxes

  // caches
  std::vector<int32_t> argmax;  // kMaxPool2
};

struct FdCoordError {
  int node = -1;
  int64_t coord = -1;
  double analytic = 0.0, numeric = 0.0, rel_err = 0.0;
};

struct FdReport {
  bool pass = true;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  FdCoordError worst;
};

class Graph {
 public:
  // --- construction (returns node id) ---
  int input(const std::string& name, std::vector<int64_t> shape);
  int param(const std::string& name, std::vector<int64_t> shape);
  int affine(int x, int w, int b);
  int conv2d(int x, int k, int b);
  int max_pool2(int x);
  int relu(int x) { return unary(Op::kRelu, x); }
  int sigmoid(int x) { return unary(Op::kSigmoid, x); }
  int softplus(int x) { return unary(Op::kSoftplus, x); }
  int exp_(int x) { return unary(Op::kExp, x); }
  int log_(int x) { return unary(Op::kLog, x); }
  int sqrt_(int x) { return unary(Op::kSqrt, x); }
  int square(int x) { return unary(Op::kSquare, x); }
  int clamp(int x, double lo, double hi);
  int affine_const(int x, double alpha, double beta);
  int add(int a, int b) { return binary(Op::kAdd, a, b); }
  int sub(int a, int b) { return binary(Op::kSub, a, b); }
  int mul(int a, int b) { return binary(Op::kMul, a, b); }
  int div(int a, int b) { return binary(Op::kDiv, a, b); }
  int sum_axes(int x, std::vector<int> axes);
  int mean_axes(int x, std::vector<int> axes);
  int sum_all(int x);
  int mean_all(int x);
  int reshape(int x, std::vector<int64_t> shape);
  int slice(int x, int axis, int64_t start, int64_t stop);
  int concat(const std::vector<int>& xs, int axis);
  int reparameterize(int mu, int sigma, int eps);
  int logsumexp(int x, int axis);

  // --- leaf access ---
  int leaf_id(const std::string& name) const;
  void set_leaf(const std::string& name, const Array& v) { set_leaf(leaf_id(name), v); }
  void set_leaf(int id, const Array& v);
  Array& leaf(int id);
  const std::vector<int>& param_ids() const { return param_ids_; }
  const std::vector<int>& input_ids() const { return input_ids_; }

  // --- execution ---
  void forward();
  void backward(int output);  // output must be scalar; forward must have run
  const Array& value(int id) const { return nodes_[id].value; }
  const Array& grad(int id) const { return nodes_[id].grad; }
  Array& value_mut(int id) { return nodes_[id].value; }

  // When set, forward() scans every node output and raises NonFiniteValue on
  // the first inf/nan. Off by default (training checks its scalar loss).
  void set_check_finite(bool on) { check_finite_ = on; }

  size_t node_count() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }

  // --- gradient verification ---
  // Central differences on one leaf: perturb up to max_coords coordinates
  // (all when max_coords < 0; a deterministic subsample otherwise, drawn with
  // coord_rng), compare against the analytic gradient at relative error
  // rel = |a - n| / max(|a|, |n|, 1e-6).
  FdReport finite_difference_check(int output, int leaf, double step, double tolerance,
                                   int64_t max_coords = -1, Rng* coord_rng = nullptr);

 private:
  int unary(Op op, int x);
  int binary(Op op, int a, int b);
  int add_node(Node n);
  void eval_node(int id);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> by_name_;
  std::vector<int> param_ids_;
  std::vector<int> input_ids_;
  bool forward_ran_ = false;
  bool check_finite_ = false;

  // scratch for conv lowering, sized on first use
  std::vector<double> col_buf_, out_buf_;
};

// numpy-style trailing broadcast of two shapes; throws ShapeMismatch if
// incompatible.
std::vector<int64_t> broadcast_shapes(const std::vector<int64_t>& a,
                                      const std::vector<int64_t>& b);

// Pin the BLAS worker count. 1 (the default everywhere here) keeps dgemm
// summation order fixed, which keeps runs bit-reproducible.
void set_blas_threads(int n);

}  // namespace hedge
