#include "hedge/graph.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>

#include "hedge/errors.hpp"

namespace hedge {

std::vector<int64_t> broadcast_shapes(const std::vector<int64_t>& a,
                                      const std::vector<int64_t>& b) {
  size_t r = std::max(a.size(), b.size());
  std::vector<int64_t> out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

std::vector<int64_t> natural_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size());
  int64_t acc = 1;
  for (int i = int(shape.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

// stride of `in` viewed through `out` (0 on broadcast dims); in must
// right-align-broadcast to out
std::vector<int64_t> bcast_strides(const std::vector<int64_t>& in,
                                   const std::vector<int64_t>& out) {
  auto raw = natural_strides(in);
  std::vector<int64_t> st(out.size(), 0);
  for (int o = int(out.size()) - 1, i = int(in.size()) - 1; i >= 0; --o, --i)
    st[o] = (in[i] == out[o]) ? raw[i] : 0;
  return st;
}

// visit every output coordinate; f(linear_out, off_a, off_b)
template <class F>
void for_each2(const std::vector<int64_t>& oshape, const std::vector<int64_t>& sa,
               const std::vector<int64_t>& sb, F&& f) {
  int r = int(oshape.size());
  int64_t total = 1;
  for (int64_t e : oshape) total *= e;
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> c(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0;;) {
    f(i, oa, ob);
    if (++i == total) break;
    for (int d = r - 1;; --d) {
      ++c[d];
      oa += sa[d];
      ob += sb[d];
      if (c[d] < oshape[d]) break;
      c[d] = 0;
      oa -= sa[d] * oshape[d];
      ob -= sb[d] * oshape[d];
    }
  }
}

template <class F>
void for_each3(const std::vector<int64_t>& oshape, const std::vector<int64_t>& sa,
               const std::vector<int64_t>& sb, const std::vector<int64_t>& sc,
               F&& f) {
  int r = int(oshape.size());
  int64_t total = 1;
  for (int64_t e : oshape) total *= e;
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0, 0);
    return;
  }
  std::vector<int64_t> c(r, 0);
  int64_t oa = 0, ob = 0, oc = 0;
  for (int64_t i = 0;;) {
    f(i, oa, ob, oc);
    if (++i == total) break;
    for (int d = r - 1;; --d) {
      ++c[d];
      oa += sa[d];
      ob += sb[d];
      oc += sc[d];
      if (c[d] < oshape[d]) break;
      c[d] = 0;
      oa -= sa[d] * oshape[d];
      ob -= sb[d] * oshape[d];
      oc -= sc[d] * oshape[d];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

constexpr int kConvChunk = 16;  // images per im2col block

}  // namespace

// ---------------------------------------------------------------------------
// construction

int Graph::add_node(Node n) {
  n.grad = Array(n.value.shape);
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

int Graph::input(const std::string& name, std::vector<int64_t> shape) {
  if (by_name_.count(name)) throw Error("duplicate leaf name " + name);
  Node n;
  n.op = Op::kLeaf;
  n.name = name;
  n.value = Array(std::move(shape));
  int id = add_node(std::move(n));
  by_name_[name] = id;
  input_ids_.push_back(id);
  return id;
}

int Graph::param(const std::string& name, std::vector<int64_t> shape) {
  if (by_name_.count(name)) throw Error("duplicate leaf name " + name);
  Node n;
  n.op = Op::kLeaf;
  n.name = name;
  n.is_param = true;
  n.value = Array(std::move(shape));
  int id = add_node(std::move(n));
  by_name_[name] = id;
  param_ids_.push_back(id);
  return id;
}

int Graph::unary(Op op, int x) {
  Node n;
  n.op = op;
  n.inputs = {x};
  n.value = Array(nodes_[x].value.shape);
  return add_node(std::move(n));
}

int Graph::binary(Op op, int a, int b) {
  Node n;
  n.op = op;
  n.inputs = {a, b};
  n.value = Array(broadcast_shapes(nodes_[a].value.shape, nodes_[b].value.shape));
  return add_node(std::move(n));
}

int Graph::affine(int x, int w, int b) {
  const auto& xs = nodes_[x].value.shape;
  const auto& ws = nodes_[w].value.shape;
  const auto& bs = nodes_[b].value.shape;
  if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[0] ||
      ws[1] != bs[0])
    throw ShapeMismatch("affine wants [B,F]x[F,O]+[O], got " + shape_str(xs) + " " +
                        shape_str(ws) + " " + shape_str(bs));
  Node n;
  n.op = Op::kAffine;
  n.inputs = {x, w, b};
  n.value = Array({xs[0], ws[1]});
  return add_node(std::move(n));
}

int Graph::conv2d(int x, int k, int b) {
  const auto& xs = nodes_[x].value.shape;
  const auto& ks = nodes_[k].value.shape;
  const auto& bs = nodes_[b].value.shape;
  if (xs.size() != 4 || ks.size() != 4 || bs.size() != 1 || xs[1] != ks[1] ||
      bs[0] != ks[0])
    throw ShapeMismatch("conv2d wants x[B,Ci,H,W], k[Co,Ci,kh,kw], b[Co]");
  int64_t oh = xs[2] - ks[2] + 1, ow = xs[3] - ks[3] + 1;
  if (oh <= 0 || ow <= 0) throw ShapeMismatch("conv kernel larger than image");
  Node n;
  n.op = Op::kConv2d;
  n.inputs = {x, k, b};
  n.value = Array({xs[0], ks[0], oh, ow});
  return add_node(std::move(n));
}

int Graph::max_pool2(int x) {
  const auto& xs = nodes_[x].value.shape;
  if (xs.size() != 4 || xs[2] % 2 || xs[3] % 2)
    throw ShapeMismatch("max_pool2 wants [B,C,H,W] with even H,W, got " +
                        shape_str(xs));
  Node n;
  n.op = Op::kMaxPool2;
  n.inputs = {x};
  n.value = Array({xs[0], xs[1], xs[2] / 2, xs[3] / 2});
  n.argmax.resize(size_t(n.value.size()));
  return add_node(std::move(n));
}

int Graph::clamp(int x, double lo, double hi) {
  int id = unary(Op::kClamp, x);
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  return id;
}

int Graph::affine_const(int x, double alpha, double beta) {
  int id = unary(Op::kAffineConst, x);
  nodes_[id].alpha = alpha;
  nodes_[id].beta = beta;
  return id;
}

int Graph::sum_axes(int x, std::vector<int> axes) {
  const auto& xs = nodes_[x].value.shape;
  std::sort(axes.begin(), axes.end());
  if (std::unique(axes.begin(), axes.end()) != axes.end())
    throw Error("duplicate reduction axis");
  for (int a : axes)
    if (a < 0 || a >= int(xs.size())) throw ShapeMismatch("bad reduction axis");
  std::vector<int64_t> oshape;
  for (int i = 0; i < int(xs.size()); ++i)
    if (!std::count(axes.begin(), axes.end(), i)) oshape.push_back(xs[i]);
  Node n;
  n.op = Op::kSumAxes;
  n.inputs = {x};
  n.axes = std::move(axes);
  n.value = Array(std::move(oshape));
  return add_node(std::move(n));
}

int Graph::mean_axes(int x, std::vector<int> axes) {
  int id = sum_axes(x, std::move(axes));
  nodes_[id].op = Op::kMeanAxes;
  return id;
}

int Graph::sum_all(int x) {
  std::vector<int> axes(nodes_[x].value.ndim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = int(i);
  return sum_axes(x, std::move(axes));
}

int Graph::mean_all(int x) {
  std::vector<int> axes(nodes_[x].value.ndim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = int(i);
  return mean_axes(x, std::move(axes));
}

int Graph::reshape(int x, std::vector<int64_t> shape) {
  if (Array::count_of(shape) != nodes_[x].value.size())
    throw ShapeMismatch("reshape " + shape_str(nodes_[x].value.shape) + " -> " +
                        shape_str(shape) + " changes element count");
  Node n;
  n.op = Op::kReshape;
  n.inputs = {x};
  n.value = Array(std::move(shape));
  return add_node(std::move(n));
}

int Graph::slice(int x, int axis, int64_t start, int64_t stop) {
  const auto& xs = nodes_[x].value.shape;
  if (axis < 0 || axis >= int(xs.size()) || start < 0 || stop > xs[axis] ||
      start >= stop)
    throw ShapeMismatch("bad slice [" + std::to_string(start) + "," +
                        std::to_string(stop) + ") on axis " + std::to_string(axis) +
                        " of " + shape_str(xs));
  auto oshape = xs;
  oshape[axis] = stop - start;
  Node n;
  n.op = Op::kSlice;
  n.inputs = {x};
  n.axis = axis;
  n.start = start;
  n.stop = stop;
  n.value = Array(std::move(oshape));
  return add_node(std::move(n));
}

int Graph::concat(const std::vector<int>& xs, int axis) {
  if (xs.empty()) throw Error("concat of nothing");
  auto oshape = nodes_[xs[0]].value.shape;
  if (axis < 0 || axis >= int(oshape.size())) throw ShapeMismatch("bad concat axis");
  for (size_t i = 1; i < xs.size(); ++i) {
    const auto& s = nodes_[xs[i]].value.shape;
    if (s.size() != oshape.size()) throw ShapeMismatch("concat rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (int(d) != axis && s[d] != oshape[d])
        throw ShapeMismatch("concat extent mismatch on dim " + std::to_string(d));
    oshape[axis] += s[axis];
  }
  Node n;
  n.op = Op::kConcat;
  n.inputs = xs;
  n.axis = axis;
  n.value = Array(std::move(oshape));
  return add_node(std::move(n));
}

int Graph::reparameterize(int mu, int sigma, int eps) {
  auto ms = broadcast_shapes(nodes_[mu].value.shape, nodes_[sigma].value.shape);
  Node n;
  n.op = Op::kReparameterize;
  n.inputs = {mu, sigma, eps};
  n.value = Array(broadcast_shapes(ms, nodes_[eps].value.shape));
  return add_node(std::move(n));
}

int Graph::logsumexp(int x, int axis) {
  const auto& xs = nodes_[x].value.shape;
  if (axis < 0 || axis >= int(xs.size())) throw ShapeMismatch("bad logsumexp axis");
  std::vector<int64_t> oshape;
  for (int i = 0; i < int(xs.size()); ++i)
    if (i != axis) oshape.push_back(xs[i]);
  Node n;
  n.op = Op::kLogSumExp;
  n.inputs = {x};
  n.axis = axis;
  n.value = Array(std::move(oshape));
  return add_node(std::move(n));
}

int Graph::leaf_id(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("no leaf named " + name);
  return it->second;
}

void Graph::set_leaf(int id, const Array& v) {
  Node& n = nodes_[id];
  if (n.op != Op::kLeaf) throw Error("set_leaf on a non-leaf node");
  if (!n.value.same_shape(v))
    throw ShapeMismatch("leaf " + n.name + " is " + shape_str(n.value.shape) +
                        ", got " + shape_str(v.shape));
  n.value.data = v.data;
  forward_ran_ = false;
}

Array& Graph::leaf(int id) {
  if (nodes_[id].op != Op::kLeaf) throw Error("leaf() on a non-leaf node");
  forward_ran_ = false;
  return nodes_[id].value;
}

// ---------------------------------------------------------------------------
// forward

void Graph::eval_node(int id) {
  Node& n = nodes_[id];
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAffine: {
      const Array& x = nodes_[n.inputs[0]].value;
      const Array& w = nodes_[n.inputs[1]].value;
      const Array& b = nodes_[n.inputs[2]].value;
      int64_t B = x.shape[0], F = x.shape[1], O = w.shape[1];
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(B), int(O), int(F),
                  1.0, x.data.data(), int(F), w.data.data(), int(O), 0.0,
                  n.value.data.data(), int(O));
      for (int64_t i = 0; i < B; ++i)
        for (int64_t o = 0; o < O; ++o) n.value[i * O + o] += b[o];
      break;
    }
    case Op::kConv2d: {
      const Array& x = nodes_[n.inputs[0]].value;
      const Array& k = nodes_[n.inputs[1]].value;
      const Array& b = nodes_[n.inputs[2]].value;
      int64_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
      int64_t Co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
      int64_t OH = H - kh + 1, OW = W - kw + 1;
      int64_t rows = Ci * kh * kw;
      for (int64_t base = 0; base < B; base += kConvChunk) {
        int64_t nb = std::min<int64_t>(kConvChunk, B - base);
        int64_t cols = nb * OH * OW;
        col_buf_.resize(size_t(rows * cols));
        out_buf_.resize(size_t(Co * cols));
        for (int64_t ci = 0; ci < Ci; ++ci)
          for (int64_t kr = 0; kr < kh; ++kr)
            for (int64_t kc = 0; kc < kw; ++kc) {
              double* dst = col_buf_.data() + ((ci * kh + kr) * kw + kc) * cols;
              for (int64_t j = 0; j < nb; ++j) {
                const double* src =
                    x.data.data() + (((base + j) * Ci + ci) * H + kr) * W + kc;
                for (int64_t oh = 0; oh < OH; ++oh)
                  std::memcpy(dst + (j * OH + oh) * OW, src + oh * W,
                              size_t(OW) * sizeof(double));
              }
            }
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(Co), int(cols),
                    int(rows), 1.0, k.data.data(), int(rows), col_buf_.data(),
                    int(cols), 0.0, out_buf_.data(), int(cols));
        for (int64_t co = 0; co < Co; ++co)
          for (int64_t j = 0; j < nb; ++j) {
            double* dst = n.value.data.data() + (((base + j) * Co + co) * OH) * OW;
            const double* src = out_buf_.data() + co * cols + j * OH * OW;
            double bias = b[co];
            for (int64_t p = 0; p < OH * OW; ++p) dst[p] = src[p] + bias;
          }
      }
      break;
    }
    case Op::kMaxPool2: {
      const Array& x = nodes_[n.inputs[0]].value;
      int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      int64_t OH = H / 2, OW = W / 2;
      int64_t out_i = 0;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* plane = x.data.data() + bc * H * W;
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            // ties go to the first row-major candidate (strict > below)
            int64_t i0 = (2 * oh) * W + 2 * ow;
            int64_t best = i0;
            double v = plane[i0];
            if (plane[i0 + 1] > v) best = i0 + 1, v = plane[i0 + 1];
            if (plane[i0 + W] > v) best = i0 + W, v = plane[i0 + W];
            if (plane[i0 + W + 1] > v) best = i0 + W + 1, v = plane[i0 + W + 1];
            n.value[out_i] = v;
            n.argmax[size_t(out_i)] = int32_t(bc * H * W + best);
            ++out_i;
          }
      }
      break;
    }
    case Op::kRelu: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }
    case Op::kSigmoid: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = stable_sigmoid(x[i]);
      break;
    }
    case Op::kSoftplus: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = stable_softplus(x[i]);
      break;
    }
    case Op::kExp: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = std::exp(x[i]);
      break;
    }
    case Op::kLog: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = std::log(x[i]);
      break;
    }
    case Op::kSqrt: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = std::sqrt(x[i]);
      break;
    }
    case Op::kSquare: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * x[i];
      break;
    }
    case Op::kClamp: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i)
        n.value[i] = std::min(std::max(x[i], n.lo), n.hi);
      break;
    }
    case Op::kAffineConst: {
      const Array& x = nodes_[n.inputs[0]].value;
      for (int64_t i = 0; i < x.size(); ++i) n.value[i] = n.alpha * x[i] + n.beta;
      break;
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Array& a = nodes_[n.inputs[0]].value;
      const Array& b = nodes_[n.inputs[1]].value;
      auto sa = bcast_strides(a.shape, n.value.shape);
      auto sb = bcast_strides(b.shape, n.value.shape);
      double* out = n.value.data.data();
      const double* pa = a.data.data();
      const double* pb = b.data.data();
      switch (n.op) {
        case Op::kAdd:
          for_each2(n.value.shape, sa, sb,
                    [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] + pb[ib]; });
          break;
        case Op::kSub:
          for_each2(n.value.shape, sa, sb,
                    [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] - pb[ib]; });
          break;
        case Op::kMul:
          for_each2(n.value.shape, sa, sb,
                    [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] * pb[ib]; });
          break;
        default:
          for_each2(n.value.shape, sa, sb,
                    [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] / pb[ib]; });
          break;
      }
      break;
    }
    case Op::kSumAxes:
    case Op::kMeanAxes: {
      const Array& x = nodes_[n.inputs[0]].value;
      std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
      // output strides viewed from input coordinates (0 on reduced axes)
      auto ost = natural_strides(n.value.shape);
      std::vector<int64_t> sout(x.ndim(), 0);
      for (int i = 0, o = 0; i < int(x.ndim()); ++i)
        if (!std::count(n.axes.begin(), n.axes.end(), i)) sout[i] = ost[o++];
      auto sin = natural_strides(x.shape);
      double* out = n.value.data.data();
      const double* px = x.data.data();
      for_each2(x.shape, sin, sout,
                [&](int64_t, int64_t ix, int64_t io) { out[io] += px[ix]; });
      if (n.op == Op::kMeanAxes) {
        double scale = double(n.value.size()) / double(x.size());
        for (int64_t i = 0; i < n.value.size(); ++i) n.value[i] *= scale;
      }
      break;
    }
    case Op::kReshape: {
      n.value.data = nodes_[n.inputs[0]].value.data;
      break;
    }
    case Op::kSlice: {
      const Array& x = nodes_[n.inputs[0]].value;
      int64_t outer = 1, inner = 1;
      for (int i = 0; i < n.axis; ++i) outer *= x.shape[i];
      for (int i = n.axis + 1; i < int(x.ndim()); ++i) inner *= x.shape[i];
      int64_t ext = x.shape[n.axis], w = n.stop - n.start;
      for (int64_t o = 0; o < outer; ++o)
        std::memcpy(n.value.data.data() + o * w * inner,
                    x.data.data() + (o * ext + n.start) * inner,
                    size_t(w * inner) * sizeof(double));
      break;
    }
    case Op::kConcat: {
      int64_t outer = 1, inner = 1;
      const auto& os = n.value.shape;
      for (int i = 0; i < n.axis; ++i) outer *= os[i];
      for (int i = n.axis + 1; i < int(os.size()); ++i) inner *= os[i];
      int64_t off = 0, total = os[n.axis];
      for (int in_id : n.inputs) {
        const Array& x = nodes_[in_id].value;
        int64_t ext = x.shape[n.axis];
        for (int64_t o = 0; o < outer; ++o)
          std::memcpy(n.value.data.data() + (o * total + off) * inner,
                      x.data.data() + o * ext * inner,
                      size_t(ext * inner) * sizeof(double));
        off += ext;
      }
      break;
    }
    case Op::kReparameterize: {
      const Array& mu = nodes_[n.inputs[0]].value;
      const Array& sg = nodes_[n.inputs[1]].value;
      const Array& ep = nodes_[n.inputs[2]].value;
      auto sm = bcast_strides(mu.shape, n.value.shape);
      auto ss = bcast_strides(sg.shape, n.value.shape);
      auto se = bcast_strides(ep.shape, n.value.shape);
      double* out = n.value.data.data();
      const double* pm = mu.data.data();
      const double* ps = sg.data.data();
      const double* pe = ep.data.data();
      for_each3(n.value.shape, sm, ss, se,
                [&](int64_t i, int64_t im, int64_t is, int64_t ie) {
                  out[i] = pm[im] + ps[is] * pe[ie];
                });
      break;
    }
    case Op::kLogSumExp: {
      const Array& x = nodes_[n.inputs[0]].value;
      int64_t outer = 1, inner = 1, ext = x.shape[n.axis];
      for (int i = 0; i < n.axis; ++i) outer *= x.shape[i];
      for (int i = n.axis + 1; i < int(x.ndim()); ++i) inner *= x.shape[i];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const double* base = x.data.data() + o * ext * inner + in;
          double m = base[0];
          for (int64_t e = 1; e < ext; ++e) m = std::max(m, base[e * inner]);
          double s = 0.0;
          for (int64_t e = 0; e < ext; ++e) s += std::exp(base[e * inner] - m);
          n.value[o * inner + in] = m + std::log(s);
        }
      break;
    }
  }
}

void Graph::forward() {
  for (int id = 0; id < int(nodes_.size()); ++id) {
    eval_node(id);
    if (check_finite_) {
      for (double v : nodes_[id].value.data)
        if (!std::isfinite(v))
          throw NonFiniteValue("node " + std::to_string(id) + " (op " +
                               std::to_string(int(nodes_[id].op)) + ")");
    }
  }
  forward_ran_ = true;
}

// ---------------------------------------------------------------------------
// backward

void Graph::backprop_node(int id) {
  Node& n = nodes_[id];
  const Array& g = n.grad;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAffine: {
      const Array& x = nodes_[n.inputs[0]].value;
      const Array& w = nodes_[n.inputs[1]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      Array& gw = nodes_[n.inputs[1]].grad;
      Array& gb = nodes_[n.inputs[2]].grad;
      int64_t B = x.shape[0], F = x.shape[1], O = w.shape[1];
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(B), int(F), int(O),
                  1.0, g.data.data(), int(O), w.data.data(), int(O), 1.0,
                  gx.data.data(), int(F));
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(F), int(O), int(B),
                  1.0, x.data.data(), int(F), g.data.data(), int(O), 1.0,
                  gw.data.data(), int(O));
      for (int64_t i = 0; i < B; ++i)
        for (int64_t o = 0; o < O; ++o) gb[o] += g[i * O + o];
      break;
    }
    case Op::kConv2d: {
      const Array& x = nodes_[n.inputs[0]].value;
      const Array& k = nodes_[n.inputs[1]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      Array& gk = nodes_[n.inputs[1]].grad;
      Array& gb = nodes_[n.inputs[2]].grad;
      int64_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
      int64_t Co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
      int64_t OH = H - kh + 1, OW = W - kw + 1;
      int64_t rows = Ci * kh * kw;
      std::vector<double> gout_buf, dcol_buf;
      for (int64_t base = 0; base < B; base += kConvChunk) {
        int64_t nb = std::min<int64_t>(kConvChunk, B - base);
        int64_t cols = nb * OH * OW;
        col_buf_.resize(size_t(rows * cols));
        gout_buf.resize(size_t(Co * cols));
        dcol_buf.resize(size_t(rows * cols));
        // rebuild the im2col block (cheaper than caching it across the pass)
        for (int64_t ci = 0; ci < Ci; ++ci)
          for (int64_t kr = 0; kr < kh; ++kr)
            for (int64_t kc = 0; kc < kw; ++kc) {
              double* dst = col_buf_.data() + ((ci * kh + kr) * kw + kc) * cols;
              for (int64_t j = 0; j < nb; ++j) {
                const double* src =
                    x.data.data() + (((base + j) * Ci + ci) * H + kr) * W + kc;
                for (int64_t oh = 0; oh < OH; ++oh)
                  std::memcpy(dst + (j * OH + oh) * OW, src + oh * W,
                              size_t(OW) * sizeof(double));
              }
            }
        for (int64_t co = 0; co < Co; ++co)
          for (int64_t j = 0; j < nb; ++j)
            std::memcpy(gout_buf.data() + co * cols + j * OH * OW,
                        g.data.data() + (((base + j) * Co + co) * OH) * OW,
                        size_t(OH * OW) * sizeof(double));
        // dK += gout x col^T ; dcol = K^T x gout
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(Co), int(rows),
                    int(cols), 1.0, gout_buf.data(), int(cols), col_buf_.data(),
                    int(cols), 1.0, gk.data.data(), int(rows));
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(rows), int(cols),
                    int(Co), 1.0, k.data.data(), int(rows), gout_buf.data(),
                    int(cols), 0.0, dcol_buf.data(), int(cols));
        for (int64_t co = 0; co < Co; ++co) {
          double s = 0.0;
          const double* row = gout_buf.data() + co * cols;
          for (int64_t c = 0; c < cols; ++c) s += row[c];
          gb[co] += s;
        }
        for (int64_t ci = 0; ci < Ci; ++ci)
          for (int64_t kr = 0; kr < kh; ++kr)
            for (int64_t kc = 0; kc < kw; ++kc) {
              const double* src = dcol_buf.data() + ((ci * kh + kr) * kw + kc) * cols;
              for (int64_t j = 0; j < nb; ++j) {
                double* dst =
                    gx.data.data() + (((base + j) * Ci + ci) * H + kr) * W + kc;
                for (int64_t oh = 0; oh < OH; ++oh) {
                  const double* s_ = src + (j * OH + oh) * OW;
                  double* d_ = dst + oh * W;
                  for (int64_t ow = 0; ow < OW; ++ow) d_[ow] += s_[ow];
                }
              }
            }
      }
      break;
    }
    case Op::kMaxPool2: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < n.value.size(); ++i)
        gx[n.argmax[size_t(i)]] += g[i];
      break;
    }
    case Op::kRelu: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) gx[i] += g[i];
      break;
    }
    case Op::kSigmoid: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < n.value.size(); ++i)
        gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case Op::kSoftplus: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] * stable_sigmoid(x[i]);
      break;
    }
    case Op::kExp: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < n.value.size(); ++i) gx[i] += g[i] * n.value[i];
      break;
    }
    case Op::kLog: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] / x[i];
      break;
    }
    case Op::kSqrt: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < n.value.size(); ++i)
        gx[i] += g[i] * 0.5 / n.value[i];
      break;
    }
    case Op::kSquare: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] * 2.0 * x[i];
      break;
    }
    case Op::kClamp: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < x.size(); ++i)
        if (x[i] > n.lo && x[i] < n.hi) gx[i] += g[i];
      break;
    }
    case Op::kAffineConst: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < n.value.size(); ++i) gx[i] += n.alpha * g[i];
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const Array& a = nodes_[n.inputs[0]].value;
      const Array& b = nodes_[n.inputs[1]].value;
      Array& ga = nodes_[n.inputs[0]].grad;
      Array& gb = nodes_[n.inputs[1]].grad;
      auto sa = bcast_strides(a.shape, n.value.shape);
      auto sb = bcast_strides(b.shape, n.value.shape);
      const double sign = n.op == Op::kSub ? -1.0 : 1.0;
      const double* pg = g.data.data();
      for_each2(n.value.shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
        ga[ia] += pg[i];
        gb[ib] += sign * pg[i];
      });
      break;
    }
    case Op::kMul: {
      const Array& a = nodes_[n.inputs[0]].value;
      const Array& b = nodes_[n.inputs[1]].value;
      Array& ga = nodes_[n.inputs[0]].grad;
      Array& gb = nodes_[n.inputs[1]].grad;
      auto sa = bcast_strides(a.shape, n.value.shape);
      auto sb = bcast_strides(b.shape, n.value.shape);
      const double* pg = g.data.data();
      const double* pa = a.data.data();
      const double* pb = b.data.data();
      for_each2(n.value.shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
        ga[ia] += pg[i] * pb[ib];
        gb[ib] += pg[i] * pa[ia];
      });
      break;
    }
    case Op::kDiv: {
      const Array& a = nodes_[n.inputs[0]].value;
      const Array& b = nodes_[n.inputs[1]].value;
      Array& ga = nodes_[n.inputs[0]].grad;
      Array& gb = nodes_[n.inputs[1]].grad;
      auto sa = bcast_strides(a.shape, n.value.shape);
      auto sb = bcast_strides(b.shape, n.value.shape);
      const double* pg = g.data.data();
      const double* pa = a.data.data();
      const double* pb = b.data.data();
      for_each2(n.value.shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
        ga[ia] += pg[i] / pb[ib];
        gb[ib] -= pg[i] * pa[ia] / (pb[ib] * pb[ib]);
      });
      break;
    }
    case Op::kSumAxes:
    case Op::kMeanAxes: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      auto ost = natural_strides(n.value.shape);
      std::vector<int64_t> sout(x.ndim(), 0);
      for (int i = 0, o = 0; i < int(x.ndim()); ++i)
        if (!std::count(n.axes.begin(), n.axes.end(), i)) sout[i] = ost[o++];
      auto sin = natural_strides(x.shape);
      double scale =
          n.op == Op::kMeanAxes ? double(n.value.size()) / double(x.size()) : 1.0;
      const double* pg = g.data.data();
      for_each2(x.shape, sin, sout, [&](int64_t, int64_t ix, int64_t io) {
        gx[ix] += scale * pg[io];
      });
      break;
    }
    case Op::kReshape: {
      Array& gx = nodes_[n.inputs[0]].grad;
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      break;
    }
    case Op::kSlice: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      int64_t outer = 1, inner = 1;
      for (int i = 0; i < n.axis; ++i) outer *= x.shape[i];
      for (int i = n.axis + 1; i < int(x.ndim()); ++i) inner *= x.shape[i];
      int64_t ext = x.shape[n.axis], w = n.stop - n.start;
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = gx.data.data() + (o * ext + n.start) * inner;
        const double* src = g.data.data() + o * w * inner;
        for (int64_t i = 0; i < w * inner; ++i) dst[i] += src[i];
      }
      break;
    }
    case Op::kConcat: {
      int64_t outer = 1, inner = 1;
      const auto& os = n.value.shape;
      for (int i = 0; i < n.axis; ++i) outer *= os[i];
      for (int i = n.axis + 1; i < int(os.size()); ++i) inner *= os[i];
      int64_t off = 0, total = os[n.axis];
      for (int in_id : n.inputs) {
        Array& gx = nodes_[in_id].grad;
        int64_t ext = nodes_[in_id].value.shape[n.axis];
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g.data.data() + (o * total + off) * inner;
          double* dst = gx.data.data() + o * ext * inner;
          for (int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
        }
        off += ext;
      }
      break;
    }
    case Op::kReparameterize: {
      const Array& mu = nodes_[n.inputs[0]].value;
      const Array& sg = nodes_[n.inputs[1]].value;
      const Array& ep = nodes_[n.inputs[2]].value;
      Array& gm = nodes_[n.inputs[0]].grad;
      Array& gs = nodes_[n.inputs[1]].grad;
      auto sm = bcast_strides(mu.shape, n.value.shape);
      auto ss = bcast_strides(sg.shape, n.value.shape);
      auto se = bcast_strides(ep.shape, n.value.shape);
      const double* pg = g.data.data();
      const double* pe = ep.data.data();
      // eps is a draw, not a differentiable input: no gradient into it
      for_each3(n.value.shape, sm, ss, se,
                [&](int64_t i, int64_t im, int64_t is, int64_t ie) {
                  gm[im] += pg[i];
                  gs[is] += pg[i] * pe[ie];
                });
      break;
    }
    case Op::kLogSumExp: {
      const Array& x = nodes_[n.inputs[0]].value;
      Array& gx = nodes_[n.inputs[0]].grad;
      int64_t outer = 1, inner = 1, ext = x.shape[n.axis];
      for (int i = 0; i < n.axis; ++i) outer *= x.shape[i];
      for (int i = n.axis + 1; i < int(x.ndim()); ++i) inner *= x.shape[i];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          double y = n.value[o * inner + in];
          double gy = g[o * inner + in];
          const double* base = x.data.data() + o * ext * inner + in;
          double* gbase = gx.data.data() + o * ext * inner + in;
          for (int64_t e = 0; e < ext; ++e)
            gbase[e * inner] += gy * std::exp(base[e * inner] - y);
        }
      break;
    }
  }
}

void Graph::backward(int output) {
  if (!forward_ran_) throw ForwardNotRun("call forward() before backward()");
  if (nodes_[output].value.size() != 1)
    throw NotScalarOutput("output has " + std::to_string(nodes_[output].value.size()) +
                          " elements");
  for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  nodes_[output].grad[0] = 1.0;
  for (int id = output; id >= 0; --id) backprop_node(id);
}

// ---------------------------------------------------------------------------
// finite differences

FdReport Graph::finite_difference_check(int output, int leaf, double step,
                                        double tolerance, int64_t max_coords,
                                        Rng* coord_rng) {
  if (step <= 0.0) throw Error("finite_difference_check: step must be positive");
  forward();
  backward(output);
  Array analytic = nodes_[leaf].grad;

  std::vector<int64_t> coords;
  int64_t total = nodes_[leaf].value.size();
  if (max_coords < 0 || max_coords >= total) {
    coords.resize(size_t(total));
    for (int64_t i = 0; i < total; ++i) coords[size_t(i)] = i;
  } else {
    Rng fallback(12345);
    Rng& r = coord_rng ? *coord_rng : fallback;
    // sample distinct coordinates
    std::vector<int64_t> all(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) all[size_t(i)] = i;
    r.shuffle(all);
    coords.assign(all.begin(), all.begin() + max_coords);
  }

  FdReport rep;
  for (int64_t c : coords) {
    double saved = nodes_[leaf].value[c];
    nodes_[leaf].value[c] = saved + step;
    forward();
    double fp = nodes_[output].value[0];
    nodes_[leaf].value[c] = saved - step;
    forward();
    double fm = nodes_[output].value[0];
    nodes_[leaf].value[c] = saved;
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic[c];
    double rel = std::abs(a - numeric) /
                 std::max({std::abs(a), std::abs(numeric), 1e-6});
    ++rep.coords_checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = {leaf, c, a, numeric, rel};
    }
  }
  forward();  // leave cached values consistent with the restored leaf
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

extern "C" void openblas_set_num_threads(int);

void set_blas_threads(int n) {
  if (n < 1) n = 1;
  openblas_set_num_threads(n);
}

}  // namespace hedge
