#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vancl/rng.hpp"

namespace vancl::nn {

using Real = double;

// Dense row-major matrix. Scalars are [1,1]; vectors [1,n] or [n,1].
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor scalar(Real v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  Real& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  Real at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  Real item() const { return data.at(0); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
};

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in topological order; backward walks
// the tape in reverse. One Tape per training step / forward pass.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Real v) { return leaf(Tensor::scalar(v)); }

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // ----- arithmetic -----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Real c);
  Var add_rowvec(Var a, Var row);     // a[m,n] + row[1,n]
  Var matmul(Var a, Var b);           // a[m,k] @ b[k,n]
  Var matmul_nt(Var a, Var b);        // a[m,k] @ b[n,k]^T

  // ----- nonlinearities -----
  Var relu(Var a);
  Var gelu(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var log_floor(Var a, Real eps);     // ln(max(x, eps)); zero grad below the floor

  Var layer_norm_rows(Var x, Var gamma, Var beta, Real eps = 1e-5);

  // ----- structure -----
  Var embedding_rows(Var table, std::vector<int> ids);  // [|ids|, d]
  Var col_slice(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var row_slice(Var a, int r0, int r1);
  Var concat_rows(const std::vector<Var>& parts);
  Var row_sum(Var a);                                   // [m,n] -> [m,1]

  // conv 3x3, stride 1, zero padding 1; x[N, Cin*H*W], k[Cout, Cin*3*3]
  Var conv2d_3x3(Var x, Var k, Var bias, int cin, int h, int w);
  Var global_avg_pool(Var x, int c, int h, int w);      // [N, C*H*W] -> [N, C]

  // ----- masking / reductions -----
  Var add_key_mask(Var scores, std::vector<std::uint8_t> key_mask);  // -1e30 on masked cols
  Var select_rows(Var a, std::vector<std::uint8_t> row_mask);        // dropped rows -> exact 0
  Var masked_mean(Var col, std::vector<std::uint8_t> mask);          // [m,1] -> [1,1]
  Var nll(Var log_probs, std::vector<int> ids, std::vector<std::uint8_t> mask);  // [1,1]

  Var dropout(Var a, Real p, rng::Rng& rng, bool active);

  void backward(Var scalar_loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // may be empty (leaf / constant)
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backprop);
  Tensor& grad_mut(int id);
  void ensure_grad(int id);

  std::vector<Node> nodes_;
};

}  // namespace vancl::nn
