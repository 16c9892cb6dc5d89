#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Reverse-mode tape over dense f64 tensors. Ops execute eagerly; the tape
// records enough to replay forward bit-exactly and to backpropagate.
//
// Matrix ops treat a rank-3 tensor [g,m,k] as g independent matrices; a
// rank-2 tensor is the g=1 case. Elementwise ops ignore rank.

enum class Op : std::uint8_t {
  Input,
  Add,
  Mul,
  MulConst,
  AddConst,
  MatMul,      // flags: transpose_a, transpose_b
  Affine,      // x[r,k] * W[k,n] + b[n]
  Softplus,
  SiLU,
  LayerNorm,   // rowwise over last axis
  Softmax,     // rowwise over last axis
  SumAll,
  MSE,         // scalar mean((a-b)^2)
  Concat,      // along last axis
  SliceCols,   // last-axis range [begin,end)
  SliceMid,    // rank-3 middle-axis range [begin,end)
  Broadcast,
  Reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Add: return "add";
    case Op::Mul: return "multiply";
    case Op::MulConst: return "multiply-const";
    case Op::AddConst: return "add-const";
    case Op::MatMul: return "matrix-multiply";
    case Op::Affine: return "affine";
    case Op::Softplus: return "softplus";
    case Op::SiLU: return "silu";
    case Op::LayerNorm: return "layer-normalize";
    case Op::Softmax: return "softmax";
    case Op::SumAll: return "sum-reduce";
    case Op::MSE: return "mean-squared-error";
    case Op::Concat: return "concatenate";
    case Op::SliceCols: return "slice";
    case Op::SliceMid: return "slice-mid";
    case Op::Broadcast: return "broadcast";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

inline double softplus_val(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid_val(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

namespace detail {

// C[m,n] += op(A) * op(B), row-major, pre-zeroed C
inline void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                     const double* A, const double* B, double* C) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      const double* a = A + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        double av = a[p];
        const double* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* a = A + i * k;
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
        c[j] += s;
      }
    }
  } else if (ta && !tb) {
    // A is [k,m] stored row-major
    for (std::size_t p = 0; p < k; ++p) {
      const double* a = A + p * m;
      const double* b = B + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        double av = a[i];
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else {
    throw TkError("autodiff", "gemm", "double-transposed product unsupported");
  }
}

}  // namespace detail

class Tape {
 public:
  using NodeId = int;
  static constexpr NodeId kNoNode = -1;  // "no such node" sentinel for optional graph inputs

  struct Node {
    Op op;
    std::array<NodeId, 3> in{-1, -1, -1};
    int nin = 0;
    Tensor value;
    std::string name;              // inputs only
    double c0 = 0.0, c1 = 0.0;     // op constants (scale, eps, ...)
    std::size_t i0 = 0, i1 = 0;    // op integers (slice range, flags)
    std::vector<double> saved;     // per-row stats for layer-norm
  };

  NodeId input(const std::string& name, Tensor v) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(v);
    n.name = name;
    return push(std::move(n));
  }

  NodeId constant(Tensor v) { return input("", std::move(v)); }
  NodeId constant(double v) { return input("", Tensor::scalar(v)); }

  NodeId add(NodeId a, NodeId b) { return record(Op::Add, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return record(Op::Mul, {a, b}); }

  NodeId mul_const(NodeId a, double c) {
    Node n = base(Op::MulConst, {a});
    n.c0 = c;
    return push_compute(std::move(n));
  }
  NodeId add_const(NodeId a, double c) {
    Node n = base(Op::AddConst, {a});
    n.c0 = c;
    return push_compute(std::move(n));
  }
  NodeId sub(NodeId a, NodeId b) { return add(a, mul_const(b, -1.0)); }

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
    Node n = base(Op::MatMul, {a, b});
    n.i0 = trans_a ? 1 : 0;
    n.i1 = trans_b ? 1 : 0;
    return push_compute(std::move(n));
  }

  NodeId affine(NodeId x, NodeId w, NodeId b) { return record(Op::Affine, {x, w, b}); }
  NodeId softplus(NodeId a) { return record(Op::Softplus, {a}); }
  NodeId silu(NodeId a) { return record(Op::SiLU, {a}); }

  NodeId layer_norm(NodeId a, double eps) {
    Node n = base(Op::LayerNorm, {a});
    n.c0 = eps;
    return push_compute(std::move(n));
  }

  NodeId softmax_rows(NodeId a) { return record(Op::Softmax, {a}); }
  NodeId sum_all(NodeId a) { return record(Op::SumAll, {a}); }
  NodeId mean_all(NodeId a) { return mul_const(sum_all(a), 1.0 / double(node(a).value.numel())); }
  NodeId mse(NodeId a, NodeId b) { return record(Op::MSE, {a, b}); }
  NodeId concat_cols(NodeId a, NodeId b) { return record(Op::Concat, {a, b}); }

  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end) {
    Node n = base(Op::SliceCols, {a});
    n.i0 = begin;
    n.i1 = end;
    return push_compute(std::move(n));
  }

  NodeId slice_mid(NodeId a, std::size_t begin, std::size_t end) {
    Node n = base(Op::SliceMid, {a});
    n.i0 = begin;
    n.i1 = end;
    return push_compute(std::move(n));
  }

  NodeId broadcast(NodeId a, Shape target) {
    Node n = base(Op::Broadcast, {a});
    n.value = Tensor(target);  // shape carrier; filled in compute
    return push_compute(std::move(n));
  }

  NodeId reshape(NodeId a, Shape s) {
    Node n = base(Op::Reshape, {a});
    n.value = Tensor(s);
    return push_compute(std::move(n));
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from `out` seeded with grad_out. May be called once per tape.
  void backward(NodeId out, const Tensor& grad_out) {
    if (ran_backward_) throw TkError("autodiff", "backward", "tape already backpropagated");
    ran_backward_ = true;
    grads_.assign(nodes_.size(), Tensor());
    if (!(grad_out.shape == nodes_[out].value.shape))
      throw TkError("autodiff", "backward",
                    "output gradient shape " + shape_str(grad_out.shape) + " != value shape " +
                        shape_str(nodes_[out].value.shape));
    grads_[out] = grad_out;
    for (NodeId id = out; id >= 0; --id) {
      if (grads_[id].data.empty()) continue;
      check_finite_grad(id);
      pull_back(id);
    }
  }

  // Gradient of a leaf (zero tensor if the leaf never received one).
  Tensor grad(NodeId id) const {
    if (!ran_backward_) throw TkError("autodiff", "grad", "backward has not run");
    if (id < 0 || std::size_t(id) >= nodes_.size())
      throw TkError("autodiff", "grad", "bad node id");
    if (grads_[id].data.empty()) return Tensor(nodes_[id].value.shape);
    return grads_[id];
  }

  // Recompute every non-input node and require bit equality with the record.
  bool replay_matches() const {
    Tape fresh;
    std::vector<NodeId> map(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::Input) {
        map[i] = fresh.input(n.name, n.value);
        continue;
      }
      Node copy = n;
      for (int k = 0; k < n.nin; ++k) copy.in[k] = map[n.in[k]];
      copy.saved.clear();
      if (n.op != Op::Broadcast && n.op != Op::Reshape) copy.value = Tensor();
      map[i] = fresh.push_compute(std::move(copy));
      const auto& a = fresh.nodes_[map[i]].value;
      const auto& b = n.value;
      if (!(a.shape == b.shape) || a.data != b.data) return false;
    }
    return true;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool ran_backward_ = false;

  static Node base(Op op, std::initializer_list<NodeId> ins) {
    Node n;
    n.op = op;
    n.nin = int(ins.size());
    int k = 0;
    for (NodeId id : ins) n.in[k++] = id;
    return n;
  }

  NodeId record(Op op, std::initializer_list<NodeId> ins) {
    return push_compute(base(op, ins));
  }

  NodeId push(Node n) {
    check_finite_value(n, NodeId(nodes_.size()));
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
  }

  NodeId push_compute(Node n) {
    compute(n);
    return push(std::move(n));
  }

  void check_finite_value(const Node& n, NodeId id) const {
    if (!n.value.all_finite())
      throw TkError("autodiff",
                    "node " + std::to_string(id) + " (" + op_name(n.op) + ")",
                    "non-finite value");
  }

  void check_finite_grad(NodeId id) const {
    if (!grads_[id].all_finite())
      throw TkError("autodiff",
                    "node " + std::to_string(id) + " (" + op_name(nodes_[id].op) + ")",
                    "non-finite gradient");
  }

  const Tensor& in_val(const Node& n, int k) const { return nodes_[n.in[k]].value; }

  void require(bool ok, const char* what) const {
    if (!ok) throw TkError("autodiff", "shape", what);
  }

  // ---- forward ----

  void compute(Node& n) {
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Add: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        require(a.shape == b.shape, "add operands differ in shape");
        n.value = a;
        for (std::size_t i = 0; i < b.data.size(); ++i) n.value.data[i] += b.data[i];
        break;
      }
      case Op::Mul: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        require(a.shape == b.shape, "multiply operands differ in shape");
        n.value = a;
        for (std::size_t i = 0; i < b.data.size(); ++i) n.value.data[i] *= b.data[i];
        break;
      }
      case Op::MulConst: {
        n.value = in_val(n, 0);
        for (double& v : n.value.data) v *= n.c0;
        break;
      }
      case Op::AddConst: {
        n.value = in_val(n, 0);
        for (double& v : n.value.data) v += n.c0;
        break;
      }
      case Op::MatMul: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        bool ta = n.i0 != 0, tb = n.i1 != 0;
        matmul_shapes(a, b, ta, tb, n);
        break;
      }
      case Op::Affine: {
        const Tensor& x = in_val(n, 0);
        const Tensor& w = in_val(n, 1);
        const Tensor& b = in_val(n, 2);
        std::size_t k = x.last_dim(), r = x.rows_collapsed();
        require(w.rank() == 2 && w.dim(0) == k, "affine weight rows != input cols");
        std::size_t m = w.dim(1);
        require(b.numel() == m, "affine bias length != output cols");
        Shape out_shape = x.shape;
        out_shape.back() = m;
        Tensor out(out_shape);
        detail::gemm_acc(false, false, r, m, k, x.data.data(), w.data.data(), out.data.data());
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += b.data[j];
        n.value = std::move(out);
        break;
      }
      case Op::Softplus: {
        n.value = in_val(n, 0);
        for (double& v : n.value.data) v = softplus_val(v);
        break;
      }
      case Op::SiLU: {
        n.value = in_val(n, 0);
        for (double& v : n.value.data) v = v * sigmoid_val(v);
        break;
      }
      case Op::LayerNorm: {
        const Tensor& a = in_val(n, 0);
        std::size_t c = a.last_dim(), r = a.rows_collapsed();
        n.value = Tensor(a.shape);
        n.saved.assign(2 * r, 0.0);
        for (std::size_t i = 0; i < r; ++i) {
          const double* x = a.data.data() + i * c;
          double* y = n.value.data.data() + i * c;
          double mean = 0.0;
          for (std::size_t j = 0; j < c; ++j) mean += x[j];
          mean /= double(c);
          double var = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            double d = x[j] - mean;
            var += d * d;
          }
          var /= double(c);
          if (n.c0 == 0.0 && var < 1e-12)
            throw TkError("autodiff", "layer-normalize", "variance collapse (< 1e-12)");
          double inv = 1.0 / std::sqrt(var + n.c0);
          for (std::size_t j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv;
          n.saved[2 * i] = mean;
          n.saved[2 * i + 1] = inv;
        }
        break;
      }
      case Op::Softmax: {
        const Tensor& a = in_val(n, 0);
        std::size_t c = a.last_dim(), r = a.rows_collapsed();
        n.value = Tensor(a.shape);
        for (std::size_t i = 0; i < r; ++i) {
          const double* x = a.data.data() + i * c;
          double* y = n.value.data.data() + i * c;
          double mx = x[0];
          for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
          double z = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
          }
          for (std::size_t j = 0; j < c; ++j) y[j] /= z;
        }
        break;
      }
      case Op::SumAll: {
        const Tensor& a = in_val(n, 0);
        double s = 0.0;
        for (double v : a.data) s += v;
        n.value = Tensor::scalar(s);
        break;
      }
      case Op::MSE: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        require(a.shape == b.shape, "mse operands differ in shape");
        n.value = Tensor::scalar(sum_sq_diff(a, b) / double(a.numel()));
        break;
      }
      case Op::Concat: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        std::size_t r = a.rows_collapsed();
        require(b.rows_collapsed() == r, "concatenate row counts differ");
        std::size_t ca = a.last_dim(), cb = b.last_dim();
        Shape s = a.shape;
        s.back() = ca + cb;
        Tensor out(s);
        for (std::size_t i = 0; i < r; ++i) {
          double* y = out.data.data() + i * (ca + cb);
          const double* xa = a.data.data() + i * ca;
          const double* xb = b.data.data() + i * cb;
          for (std::size_t j = 0; j < ca; ++j) y[j] = xa[j];
          for (std::size_t j = 0; j < cb; ++j) y[ca + j] = xb[j];
        }
        n.value = std::move(out);
        break;
      }
      case Op::SliceCols: {
        const Tensor& a = in_val(n, 0);
        std::size_t c = a.last_dim(), r = a.rows_collapsed();
        require(n.i0 < n.i1 && n.i1 <= c, "slice range out of bounds");
        std::size_t w = n.i1 - n.i0;
        Shape s = a.shape;
        s.back() = w;
        Tensor out(s);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out.data[i * w + j] = a.data[i * c + n.i0 + j];
        n.value = std::move(out);
        break;
      }
      case Op::SliceMid: {
        const Tensor& a = in_val(n, 0);
        require(a.rank() == 3, "slice-mid needs rank-3 input");
        std::size_t g = a.dim(0), m = a.dim(1), c = a.dim(2);
        require(n.i0 < n.i1 && n.i1 <= m, "slice-mid range out of bounds");
        std::size_t w = n.i1 - n.i0;
        Tensor out({g, w, c});
        for (std::size_t q = 0; q < g; ++q)
          for (std::size_t i = 0; i < w; ++i)
            for (std::size_t j = 0; j < c; ++j)
              out.data[(q * w + i) * c + j] = a.data[(q * m + n.i0 + i) * c + j];
        n.value = std::move(out);
        break;
      }
      case Op::Broadcast: {
        const Tensor& a = in_val(n, 0);
        Shape target = n.value.shape;
        n.value = Tensor(target);
        broadcast_fill(a, n.value);
        break;
      }
      case Op::Reshape: {
        const Tensor& a = in_val(n, 0);
        Shape target = n.value.shape;
        require(shape_numel(target) == a.numel(), "reshape changes element count");
        n.value = Tensor(target, a.data);
        break;
      }
    }
  }

  void matmul_shapes(const Tensor& a, const Tensor& b, bool ta, bool tb, Node& n) {
    auto dims3 = [](const Tensor& t) -> std::array<std::size_t, 3> {
      if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
      if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
      throw TkError("autodiff", "matrix-multiply", "operand rank must be 2 or 3");
    };
    auto [ga, ra, ca] = dims3(a);
    auto [gb, rb, cb] = dims3(b);
    require(ga == gb, "matrix-multiply group counts differ");
    require(!(ta && tb), "double-transposed product unsupported");
    std::size_t m = ta ? ca : ra;
    std::size_t ka = ta ? ra : ca;
    std::size_t kb = tb ? cb : rb;
    std::size_t p = tb ? rb : cb;
    require(ka == kb, "matrix-multiply inner dims differ");
    bool flat = a.rank() == 2 && b.rank() == 2;
    Tensor out(flat ? Shape{m, p} : Shape{ga, m, p});
    for (std::size_t q = 0; q < ga; ++q)
      detail::gemm_acc(ta, tb, m, p, ka, a.data.data() + q * ra * ca,
                       b.data.data() + q * rb * cb, out.data.data() + q * m * p);
    n.value = std::move(out);
  }

  static void broadcast_fill(const Tensor& src, Tensor& dst) {
    std::size_t sn = src.numel(), dn = dst.numel();
    if (sn == 1) {
      for (double& v : dst.data) v = src.data[0];
      return;
    }
    std::size_t dc = dst.last_dim(), dr = dst.rows_collapsed();
    std::size_t sc = src.last_dim(), sr = src.rows_collapsed();
    if (sc == 1 && sr == dr) {  // [r,1] -> [r,c]
      for (std::size_t i = 0; i < dr; ++i)
        for (std::size_t j = 0; j < dc; ++j) dst.data[i * dc + j] = src.data[i];
      return;
    }
    if (sc == dc && sn == sc) {  // [c] or [1,c] -> [r,c]
      for (std::size_t i = 0; i < dr; ++i)
        for (std::size_t j = 0; j < dc; ++j) dst.data[i * dc + j] = src.data[j];
      return;
    }
    if (sc == dc && dn % sn == 0) {  // [p,c] tiled over leading groups
      std::size_t reps = dn / sn;
      for (std::size_t t = 0; t < reps; ++t)
        for (std::size_t i = 0; i < sn; ++i) dst.data[t * sn + i] = src.data[i];
      return;
    }
    throw TkError("autodiff", "broadcast",
                  "unsupported broadcast " + shape_str(src.shape) + " -> " + shape_str(dst.shape));
  }

  // Sums `g` back over the dimensions broadcast_fill expanded.
  static void broadcast_reduce(const Tensor& g, Tensor& out) {
    std::size_t sn = out.numel(), dn = g.numel();
    if (sn == 1) {
      double s = 0.0;
      for (double v : g.data) s += v;
      out.data[0] = s;
      return;
    }
    std::size_t dc = g.last_dim(), dr = g.rows_collapsed();
    std::size_t sc = out.last_dim(), sr = out.rows_collapsed();
    if (sc == 1 && sr == dr) {
      for (std::size_t i = 0; i < dr; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dc; ++j) s += g.data[i * dc + j];
        out.data[i] = s;
      }
      return;
    }
    if (sc == dc && sn == sc) {
      for (std::size_t j = 0; j < dc; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dr; ++i) s += g.data[i * dc + j];
        out.data[j] = s;
      }
      return;
    }
    if (sc == dc && dn % sn == 0) {
      std::size_t reps = dn / sn;
      for (std::size_t t = 0; t < reps; ++t)
        for (std::size_t i = 0; i < sn; ++i) out.data[i] += g.data[t * sn + i];
      return;
    }
    throw TkError("autodiff", "broadcast", "unsupported reduction");
  }

  // ---- backward ----

  void acc_grad(NodeId id, const Tensor& g) {
    if (grads_[id].data.empty()) {
      grads_[id] = g;
      return;
    }
    for (std::size_t i = 0; i < g.data.size(); ++i) grads_[id].data[i] += g.data[i];
  }

  void pull_back(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Add:
        acc_grad(n.in[0], g);
        acc_grad(n.in[1], g);
        break;
      case Op::Mul: {
        Tensor ga = g, gb = g;
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] *= b.data[i];
          gb.data[i] *= a.data[i];
        }
        acc_grad(n.in[0], ga);
        acc_grad(n.in[1], gb);
        break;
      }
      case Op::MulConst: {
        Tensor ga = g;
        for (double& v : ga.data) v *= n.c0;
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::AddConst:
        acc_grad(n.in[0], g);
        break;
      case Op::MatMul:
        matmul_backward(n, g);
        break;
      case Op::Affine: {
        const Tensor& x = in_val(n, 0);
        const Tensor& w = in_val(n, 1);
        std::size_t k = x.last_dim(), r = x.rows_collapsed(), m = w.dim(1);
        Tensor gx(x.shape), gw(w.shape), gb(nodes_[n.in[2]].value.shape);
        detail::gemm_acc(false, true, r, k, m, g.data.data(), w.data.data(), gx.data.data());
        detail::gemm_acc(true, false, k, m, r, x.data.data(), g.data.data(), gw.data.data());
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < m; ++j) gb.data[j] += g.data[i * m + j];
        acc_grad(n.in[0], gx);
        acc_grad(n.in[1], gw);
        acc_grad(n.in[2], gb);
        break;
      }
      case Op::Softplus: {
        Tensor ga = g;
        const Tensor& x = in_val(n, 0);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= sigmoid_val(x.data[i]);
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::SiLU: {
        Tensor ga = g;
        const Tensor& x = in_val(n, 0);
        for (std::size_t i = 0; i < ga.data.size(); ++i) {
          double s = sigmoid_val(x.data[i]);
          ga.data[i] *= s * (1.0 + x.data[i] * (1.0 - s));
        }
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::LayerNorm: {
        const Tensor& x = in_val(n, 0);
        std::size_t c = x.last_dim(), r = x.rows_collapsed();
        Tensor gx(x.shape);
        for (std::size_t i = 0; i < r; ++i) {
          const double* gr = g.data.data() + i * c;
          const double* y = n.value.data.data() + i * c;
          double inv = n.saved[2 * i + 1];
          double gmean = 0.0, gymean = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            gmean += gr[j];
            gymean += gr[j] * y[j];
          }
          gmean /= double(c);
          gymean /= double(c);
          double* o = gx.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j)
            o[j] = inv * (gr[j] - gmean - y[j] * gymean);
        }
        acc_grad(n.in[0], gx);
        break;
      }
      case Op::Softmax: {
        std::size_t c = n.value.last_dim(), r = n.value.rows_collapsed();
        Tensor gx(n.value.shape);
        for (std::size_t i = 0; i < r; ++i) {
          const double* gr = g.data.data() + i * c;
          const double* p = n.value.data.data() + i * c;
          double dp = 0.0;
          for (std::size_t j = 0; j < c; ++j) dp += gr[j] * p[j];
          double* o = gx.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) o[j] = p[j] * (gr[j] - dp);
        }
        acc_grad(n.in[0], gx);
        break;
      }
      case Op::SumAll: {
        Tensor ga(in_val(n, 0).shape);
        for (double& v : ga.data) v = g.data[0];
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::MSE: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        double s = 2.0 * g.data[0] / double(a.numel());
        Tensor ga(a.shape), gb(b.shape);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
          double d = s * (a.data[i] - b.data[i]);
          ga.data[i] = d;
          gb.data[i] = -d;
        }
        acc_grad(n.in[0], ga);
        acc_grad(n.in[1], gb);
        break;
      }
      case Op::Concat: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        std::size_t r = a.rows_collapsed(), ca = a.last_dim(), cb = b.last_dim();
        Tensor ga(a.shape), gb(b.shape);
        for (std::size_t i = 0; i < r; ++i) {
          const double* gr = g.data.data() + i * (ca + cb);
          for (std::size_t j = 0; j < ca; ++j) ga.data[i * ca + j] = gr[j];
          for (std::size_t j = 0; j < cb; ++j) gb.data[i * cb + j] = gr[ca + j];
        }
        acc_grad(n.in[0], ga);
        acc_grad(n.in[1], gb);
        break;
      }
      case Op::SliceCols: {
        const Tensor& a = in_val(n, 0);
        std::size_t c = a.last_dim(), r = a.rows_collapsed(), w = n.i1 - n.i0;
        Tensor ga(a.shape);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j)
            ga.data[i * c + n.i0 + j] = g.data[i * w + j];
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::SliceMid: {
        const Tensor& a = in_val(n, 0);
        std::size_t gcount = a.dim(0), m = a.dim(1), c = a.dim(2), w = n.i1 - n.i0;
        Tensor ga(a.shape);
        for (std::size_t q = 0; q < gcount; ++q)
          for (std::size_t i = 0; i < w; ++i)
            for (std::size_t j = 0; j < c; ++j)
              ga.data[(q * m + n.i0 + i) * c + j] = g.data[(q * w + i) * c + j];
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::Broadcast: {
        const Tensor& a = in_val(n, 0);
        Tensor ga(a.shape);
        broadcast_reduce(g, ga);
        acc_grad(n.in[0], ga);
        break;
      }
      case Op::Reshape: {
        const Tensor& a = in_val(n, 0);
        acc_grad(n.in[0], Tensor(a.shape, g.data));
        break;
      }
    }
  }

  void matmul_backward(const Node& n, const Tensor& g) {
    const Tensor& a = in_val(n, 0);
    const Tensor& b = in_val(n, 1);
    bool ta = n.i0 != 0, tb = n.i1 != 0;
    auto dims3 = [](const Tensor& t) -> std::array<std::size_t, 3> {
      if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
      return {t.dim(0), t.dim(1), t.dim(2)};
    };
    auto [gn, ra, ca] = dims3(a);
    auto [gn2, rb, cb] = dims3(b);
    (void)gn2;
    std::size_t m = ta ? ca : ra;
    std::size_t k = ta ? ra : ca;
    std::size_t p = tb ? rb : cb;
    Tensor da(a.shape), db(b.shape);
    for (std::size_t q = 0; q < gn; ++q) {
      const double* Aq = a.data.data() + q * ra * ca;
      const double* Bq = b.data.data() + q * rb * cb;
      const double* Gq = g.data.data() + q * m * p;
      double* dAq = da.data.data() + q * ra * ca;
      double* dBq = db.data.data() + q * rb * cb;
      if (!ta && !tb) {
        detail::gemm_acc(false, true, m, k, p, Gq, Bq, dAq);   // dA = G B^T
        detail::gemm_acc(true, false, k, p, m, Aq, Gq, dBq);   // dB = A^T G
      } else if (!ta && tb) {
        detail::gemm_acc(false, false, m, k, p, Gq, Bq, dAq);  // dA = G B
        detail::gemm_acc(true, false, p, k, m, Gq, Aq, dBq);   // dB = G^T A
      } else {  // ta && !tb; ta && tb is rejected at forward
        detail::gemm_acc(false, true, k, m, p, Bq, Gq, dAq);   // dA = B G^T
        detail::gemm_acc(false, false, k, p, m, Aq, Gq, dBq);  // dB = A G
      }
    }
    acc_grad(n.in[0], da);
    acc_grad(n.in[1], db);
  }
};

// A graph body: wires tape ops from named leaves to one scalar output.
using GraphFn =
    std::function<Tape::NodeId(Tape&, const std::map<std::string, Tape::NodeId>&)>;

struct GraphEval {
  Tape tape;
  std::map<std::string, Tape::NodeId> leaves;
  Tape::NodeId output = -1;
};

inline GraphEval evaluate_graph(const std::map<std::string, Tensor>& inputs,
                                const GraphFn& graph) {
  GraphEval ev;
  for (const auto& [name, t] : inputs) ev.leaves[name] = ev.tape.input(name, t);
  ev.output = graph(ev.tape, ev.leaves);
  return ev;
}

// Seeds the output with `grad_out` and returns a gradient per named leaf.
inline std::map<std::string, Tensor> backpropagate(GraphEval& ev, const Tensor& grad_out) {
  ev.tape.backward(ev.output, grad_out);
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : ev.leaves) out[name] = ev.tape.grad(id);
  return out;
}

// Central finite differences of a scalar-output graph against the tape's
// gradients. Returns the max relative error, denominator max(1,|analytic|).
inline double finite_difference_check(const std::map<std::string, Tensor>& point,
                                      const GraphFn& graph, double h = 1e-6) {
  GraphEval ev = evaluate_graph(point, graph);
  if (ev.tape.value(ev.output).numel() != 1)
    throw TkError("autodiff", "finite-difference", "output must be scalar");
  auto grads = backpropagate(ev, Tensor::scalar(1.0));
  double worst = 0.0;
  for (const auto& [name, base] : point) {
    for (std::size_t i = 0; i < base.data.size(); ++i) {
      auto probe = [&](double delta) {
        std::map<std::string, Tensor> p = point;
        p[name].data[i] += delta;
        GraphEval e = evaluate_graph(p, graph);
        return e.tape.value(e.output).data[0];
      };
      double numeric = (probe(h) - probe(-h)) / (2.0 * h);
      double analytic = grads[name].data[i];
      double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace tokenlab
