#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "evssl/errors.hpp"
#include "evssl/tensor.hpp"

namespace evssl::ad {

/// Handle to a node on a Tape. Only meaningful with the tape that created it.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  transpose,
  sum,
  mean,
  exp_,
  log_,
  relu,
  broadcast_add_row,
  scale,
  concat_rows,
  slice_rows,
  dot,
  l2_normalize,
  softmax_rows,
  gather_rows,
};

/// Gradients keyed by node id. Leaves that do not require gradients (and
/// nodes unreachable from the root) have no entry.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> adj) : adj_(std::move(adj)) {}

  bool has(Var v) const { return v.id < adj_.size() && !adj_[v.id].empty(); }

  const Tensor& at(Var v) const {
    require(has(v), Errc::domain_error, "no gradient recorded for node");
    return adj_[v.id];
  }

 private:
  std::vector<Tensor> adj_;
};

/// Reverse-mode tape over 2-D fp64 tensors. Nodes are recorded in
/// construction order (already topological); backward walks them once in
/// reverse. Single-writer; independent tapes may run concurrently.
class Tape {
 public:
  /// Trainable leaf: participates in backward.
  Var param(Tensor value) { return push(Op::leaf, {}, std::move(value), true); }

  /// Non-trainable leaf: never receives a gradient.
  Var constant(Tensor value) { return push(Op::leaf, {}, std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), Errc::shape_mismatch,
            "add " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    return push(Op::add, {a.id, b.id}, std::move(out));
  }

  Var sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), Errc::shape_mismatch,
            "sub " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
    return push(Op::sub, {a.id, b.id}, std::move(out));
  }

  Var mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), Errc::shape_mismatch,
            "mul " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
    return push(Op::mul, {a.id, b.id}, std::move(out));
  }

  Var matmul(Var a, Var b) {
    return push(Op::matmul, {a.id, b.id}, matmul_values(value(a), value(b)));
  }

  Var transpose(Var a) { return push(Op::transpose, {a.id}, transpose_values(value(a))); }

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).v) s += x;
    return push(Op::sum, {a.id}, Tensor::scalar(s));
  }

  Var mean(Var a) {
    require(value(a).size() > 0, Errc::shape_mismatch, "mean of empty tensor");
    double s = 0.0;
    for (double x : value(a).v) s += x;
    return push(Op::mean, {a.id}, Tensor::scalar(s / static_cast<double>(value(a).size())));
  }

  Var exp_(Var a) {
    Tensor out = value(a);
    for (double& x : out.v) x = std::exp(x);
    return push(Op::exp_, {a.id}, std::move(out));
  }

  Var log_(Var a) {
    Tensor out = value(a);
    for (double& x : out.v) {
      require(x > 0.0, Errc::domain_error, "log of non-positive value");
      x = std::log(x);
    }
    return push(Op::log_, {a.id}, std::move(out));
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return push(Op::relu, {a.id}, std::move(out));
  }

  /// M (m x n) + row (1 x n), broadcast over rows.
  Var broadcast_add_row(Var m, Var r) {
    const Tensor& tm = value(m);
    const Tensor& tr = value(r);
    require(tr.rows == 1 && tr.cols == tm.cols, Errc::shape_mismatch,
            "broadcast_add_row " + tm.shape_str() + " vs " + tr.shape_str());
    Tensor out = tm;
    for (std::size_t i = 0; i < tm.rows; ++i) {
      for (std::size_t j = 0; j < tm.cols; ++j) out.at(i, j) += tr.v[j];
    }
    return push(Op::broadcast_add_row, {m.id, r.id}, std::move(out));
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& x : out.v) x *= c;
    Var v = push(Op::scale, {a.id}, std::move(out));
    nodes_[v.id].aux = c;
    return v;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), Errc::shape_mismatch, "concat_rows of nothing");
    const std::size_t cols = value(parts.front()).cols;
    std::size_t rows = 0;
    for (Var p : parts) {
      require(value(p).cols == cols, Errc::shape_mismatch, "concat_rows column mismatch");
      rows += value(p).rows;
    }
    Tensor out(rows, cols);
    std::size_t r = 0;
    std::vector<std::uint32_t> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
      const Tensor& t = value(p);
      std::copy(t.v.begin(), t.v.end(), out.v.begin() + r * cols);
      r += t.rows;
      ids.push_back(p.id);
    }
    return push(Op::concat_rows, std::move(ids), std::move(out));
  }

  Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& t = value(a);
    require(count >= 1 && begin + count <= t.rows, Errc::shape_mismatch,
            "slice_rows out of range");
    Tensor out(count, t.cols);
    std::copy(t.v.begin() + begin * t.cols, t.v.begin() + (begin + count) * t.cols,
              out.v.begin());
    Var v = push(Op::slice_rows, {a.id}, std::move(out));
    nodes_[v.id].idx = {begin, count};
    return v;
  }

  /// Sum of the elementwise product; shapes must match. Returns 1 x 1.
  Var dot(Var a, Var b) {
    return push(Op::dot, {a.id, b.id}, Tensor::scalar(dot_values(value(a), value(b))));
  }

  Var l2_normalize(Var a) {
    const Tensor& t = value(a);
    const double n = l2_norm(t);
    require(n >= 1e-12, Errc::domain_error, "l2_normalize of near-zero vector");
    Tensor out = t;
    for (double& x : out.v) x /= n;
    Var v = push(Op::l2_normalize, {a.id}, std::move(out));
    nodes_[v.id].aux = n;
    return v;
  }

  /// Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
      double total = 0.0;
      for (std::size_t j = 0; j < out.cols; ++j) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        total += out.at(i, j);
      }
      for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) /= total;
    }
    return push(Op::softmax_rows, {a.id}, std::move(out));
  }

  Var gather_rows(Var a, std::vector<std::size_t> indices) {
    const Tensor& t = value(a);
    require(!indices.empty(), Errc::shape_mismatch, "gather_rows with no indices");
    Tensor out(indices.size(), t.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] < t.rows, Errc::shape_mismatch, "gather_rows index out of range");
      std::copy(t.v.begin() + indices[i] * t.cols, t.v.begin() + (indices[i] + 1) * t.cols,
                out.v.begin() + i * t.cols);
    }
    Var v = push(Op::gather_rows, {a.id}, std::move(out));
    nodes_[v.id].idx = std::move(indices);
    return v;
  }

  /// Reverse sweep from a scalar root. Returns adjoints for every node that
  /// requires a gradient and is reachable from the root.
  Gradients backward(Var root) const {
    const Node& r = nodes_[check(root)];
    require(r.value.is_scalar(), Errc::non_scalar_root, "backward root must be 1x1");
    std::vector<Tensor> adj(nodes_.size());
    if (!r.requires_grad) return Gradients(std::move(adj));
    adj[root.id] = Tensor::scalar(1.0);

    for (std::uint32_t id = root.id + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (adj[id].empty() || !node.requires_grad) continue;
      propagate(node, adj[id], adj);
    }
    return Gradients(std::move(adj));
  }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    bool requires_grad = false;
    double aux = 0.0;
    std::vector<std::size_t> idx;
  };

  std::uint32_t check(Var v) const {
    require(v.id < nodes_.size(), Errc::domain_error, "Var from another tape");
    return v.id;
  }

  Var push(Op op, std::vector<std::uint32_t> inputs, Tensor value) {
    bool rg = false;
    for (std::uint32_t i : inputs) rg = rg || nodes_[i].requires_grad;
    return push(op, std::move(inputs), std::move(value), rg);
  }

  Var push(Op op, std::vector<std::uint32_t> inputs, Tensor value, bool requires_grad) {
    require(value.all_finite(), Errc::domain_error, "non-finite tensor on tape");
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void accumulate(std::vector<Tensor>& adj, std::uint32_t id, const Tensor& delta) const {
    if (!nodes_[id].requires_grad) return;
    if (adj[id].empty()) {
      adj[id] = delta;
      return;
    }
    for (std::size_t i = 0; i < delta.size(); ++i) adj[id].v[i] += delta.v[i];
  }

  void propagate(const Node& node, const Tensor& g, std::vector<Tensor>& adj) const {
    switch (node.op) {
      case Op::leaf:
        break;
      case Op::add: {
        accumulate(adj, node.inputs[0], g);
        accumulate(adj, node.inputs[1], g);
        break;
      }
      case Op::sub: {
        accumulate(adj, node.inputs[0], g);
        Tensor neg = g;
        for (double& x : neg.v) x = -x;
        accumulate(adj, node.inputs[1], neg);
        break;
      }
      case Op::mul: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] *= b.v[i];
        accumulate(adj, node.inputs[0], ga);
        Tensor gb = g;
        for (std::size_t i = 0; i < gb.size(); ++i) gb.v[i] *= a.v[i];
        accumulate(adj, node.inputs[1], gb);
        break;
      }
      case Op::matmul: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        if (nodes_[node.inputs[0]].requires_grad) {
          accumulate(adj, node.inputs[0], matmul_values(g, transpose_values(b)));
        }
        if (nodes_[node.inputs[1]].requires_grad) {
          accumulate(adj, node.inputs[1], matmul_values(transpose_values(a), g));
        }
        break;
      }
      case Op::transpose: {
        accumulate(adj, node.inputs[0], transpose_values(g));
        break;
      }
      case Op::sum: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        accumulate(adj, node.inputs[0], Tensor::full(a.rows, a.cols, g.item()));
        break;
      }
      case Op::mean: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        accumulate(adj, node.inputs[0],
                   Tensor::full(a.rows, a.cols, g.item() / static_cast<double>(a.size())));
        break;
      }
      case Op::exp_: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] *= node.value.v[i];
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::log_: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] /= a.v[i];
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::relu: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] = a.v[i] > 0.0 ? ga.v[i] : 0.0;
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::broadcast_add_row: {
        accumulate(adj, node.inputs[0], g);
        if (nodes_[node.inputs[1]].requires_grad) {
          Tensor gr(1, g.cols);
          for (std::size_t i = 0; i < g.rows; ++i) {
            for (std::size_t j = 0; j < g.cols; ++j) gr.v[j] += g.at(i, j);
          }
          accumulate(adj, node.inputs[1], gr);
        }
        break;
      }
      case Op::scale: {
        Tensor ga = g;
        for (double& x : ga.v) x *= node.aux;
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::concat_rows: {
        std::size_t r = 0;
        for (std::uint32_t in : node.inputs) {
          const Tensor& t = nodes_[in].value;
          if (nodes_[in].requires_grad) {
            Tensor part(t.rows, t.cols);
            std::copy(g.v.begin() + r * g.cols, g.v.begin() + (r + t.rows) * g.cols,
                      part.v.begin());
            accumulate(adj, in, part);
          }
          r += t.rows;
        }
        break;
      }
      case Op::slice_rows: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        Tensor ga(a.rows, a.cols);
        const std::size_t begin = node.idx[0];
        std::copy(g.v.begin(), g.v.end(), ga.v.begin() + begin * a.cols);
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::dot: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        const double s = g.item();
        if (nodes_[node.inputs[0]].requires_grad) {
          Tensor ga = b;
          for (double& x : ga.v) x *= s;
          accumulate(adj, node.inputs[0], ga);
        }
        if (nodes_[node.inputs[1]].requires_grad) {
          Tensor gb = a;
          for (double& x : gb.v) x *= s;
          accumulate(adj, node.inputs[1], gb);
        }
        break;
      }
      case Op::l2_normalize: {
        // out = v / n; gv = (g - out * <out, g>) / n.
        const double n = node.aux;
        double og = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) og += node.value.v[i] * g.v[i];
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga.v[i] = (g.v[i] - node.value.v[i] * og) / n;
        }
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::softmax_rows: {
        // Per row: gin = s * (g - <g, s>).
        Tensor ga(g.rows, g.cols);
        for (std::size_t i = 0; i < g.rows; ++i) {
          double gs = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) gs += g.at(i, j) * node.value.at(i, j);
          for (std::size_t j = 0; j < g.cols; ++j) {
            ga.at(i, j) = node.value.at(i, j) * (g.at(i, j) - gs);
          }
        }
        accumulate(adj, node.inputs[0], ga);
        break;
      }
      case Op::gather_rows: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        Tensor ga(a.rows, a.cols);
        for (std::size_t i = 0; i < node.idx.size(); ++i) {
          const std::size_t r = node.idx[i];
          for (std::size_t j = 0; j < a.cols; ++j) ga.at(r, j) += g.at(i, j);
        }
        accumulate(adj, node.inputs[0], ga);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace evssl::ad
