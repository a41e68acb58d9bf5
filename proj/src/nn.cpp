#include "vancl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vancl::nn {

namespace {
constexpr Real kMaskPenalty = -1e30;
constexpr Real kInvSqrt2 = 0.70710678118654752440;
constexpr Real kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

bool Tensor::all_finite() const {
  for (Real v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_mut(int id) {
  ensure_grad(id);
  return nodes_[id].grad;
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
}

void Tape::backward(Var scalar_loss) {
  const Tensor& lv = nodes_[scalar_loss.id].value;
  if (lv.rows != 1 || lv.cols != 1) throw std::logic_error("backward() expects a scalar loss");
  grad_mut(scalar_loss.id).data[0] = 1.0;
  for (int id = scalar_loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.data.empty() || !n.backprop) continue;
    n.backprop(*this, id);
  }
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::logic_error("add: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    for (Var p : {a, b}) {
      if (!t.requires_grad(p)) continue;
      Tensor& pg = t.grad_mut(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::logic_error("sub: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) {
      Tensor& pg = t.grad_mut(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i];
    }
    if (t.requires_grad(b)) {
      Tensor& pg = t.grad_mut(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] -= g.data[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::logic_error("mul: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) {
      Tensor& pg = t.grad_mut(a.id);
      const Tensor& bv2 = t.val(b);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i] * bv2.data[i];
    }
    if (t.requires_grad(b)) {
      Tensor& pg = t.grad_mut(b.id);
      const Tensor& av2 = t.val(a);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i] * av2.data[i];
    }
  });
}

Var Tape::scale(Var a, Real c) {
  Tensor out = val(a);
  for (Real& v : out.data) v *= c;
  return push(std::move(out), requires_grad(a), [a, c](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (!t.requires_grad(a)) return;
    Tensor& pg = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += c * g.data[i];
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Tensor& av = val(a);
  const Tensor& rv = val(row);
  if (rv.rows != 1 || rv.cols != av.cols) throw std::logic_error("add_rowvec: shape mismatch");
  Tensor out = av;
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += rv.data[c];
  }
  const bool rg = requires_grad(a) || requires_grad(row);
  return push(std::move(out), rg, [a, row](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) {
      Tensor& pg = t.grad_mut(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i];
    }
    if (t.requires_grad(row)) {
      Tensor& pg = t.grad_mut(row.id);
      for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) pg.data[c] += g.at(r, c);
      }
    }
  });
}

namespace {

// out[m,n] += A[m,k] @ B[k,n]
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  for (int i = 0; i < a.rows; ++i) {
    const Real* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    Real* orow = out.data.data() + static_cast<std::size_t>(i) * out.cols;
    for (int k = 0; k < a.cols; ++k) {
      const Real av = arow[k];
      if (av == 0.0) continue;
      const Real* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,n] += A[m,k] @ B[n,k]^T
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  for (int i = 0; i < a.rows; ++i) {
    const Real* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    Real* orow = out.data.data() + static_cast<std::size_t>(i) * out.cols;
    for (int j = 0; j < b.rows; ++j) {
      const Real* brow = b.data.data() + static_cast<std::size_t>(j) * b.cols;
      Real acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
}

// out[k,n] += A[m,k]^T @ B[m,n]
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  for (int i = 0; i < a.rows; ++i) {
    const Real* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    const Real* brow = b.data.data() + static_cast<std::size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      const Real av = arow[k];
      if (av == 0.0) continue;
      Real* orow = out.data.data() + static_cast<std::size_t>(k) * out.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.cols != bv.rows) throw std::logic_error("matmul: inner dimension mismatch");
  Tensor out(av.rows, bv.cols);
  gemm_acc(av, bv, out);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) gemm_nt_acc(g, t.val(b), t.grad_mut(a.id));  // dA += G @ B^T
    if (t.requires_grad(b)) gemm_tn_acc(t.val(a), g, t.grad_mut(b.id));  // dB += A^T @ G
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.cols != bv.cols) throw std::logic_error("matmul_nt: inner dimension mismatch");
  Tensor out(av.rows, bv.rows);
  gemm_nt_acc(av, bv, out);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) gemm_acc(g, t.val(b), t.grad_mut(a.id));    // dA += G @ B
    if (t.requires_grad(b)) gemm_tn_acc(g, t.val(a), t.grad_mut(b.id)); // dB += G^T @ A
  });
}

Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (Real& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.val(a);
    Tensor& pg = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av.data[i] > 0.0) pg.data[i] += g.data[i];
    }
  });
}

Var Tape::gelu(Var a) {
  Tensor out = val(a);
  for (Real& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av = t.val(a);
    Tensor& pg = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real x = av.data[i];
      const Real cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const Real pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      pg.data[i] += g.data[i] * (cdf + x * pdf);
    }
  });
}

Var Tape::softmax_rows(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r) {
    Real mx = av.at(r, 0);
    for (int c = 1; c < av.cols; ++c) mx = std::max(mx, av.at(r, c));
    Real sum = 0.0;
    for (int c = 0; c < av.cols; ++c) {
      const Real e = std::exp(av.at(r, c) - mx);
      out.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < av.cols; ++c) out.at(r, c) /= sum;
  }
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < g.rows; ++r) {
      Real dot = 0.0;
      for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < g.cols; ++c) {
        pg.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
      }
    }
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r) {
    Real mx = av.at(r, 0);
    for (int c = 1; c < av.cols; ++c) mx = std::max(mx, av.at(r, c));
    Real sum = 0.0;
    for (int c = 0; c < av.cols; ++c) sum += std::exp(av.at(r, c) - mx);
    const Real lse = mx + std::log(sum);
    for (int c = 0; c < av.cols; ++c) out.at(r, c) = av.at(r, c) - lse;
  }
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& ls = t.nodes_[self].value;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < g.rows; ++r) {
      Real gsum = 0.0;
      for (int c = 0; c < g.cols; ++c) gsum += g.at(r, c);
      for (int c = 0; c < g.cols; ++c) {
        pg.at(r, c) += g.at(r, c) - std::exp(ls.at(r, c)) * gsum;
      }
    }
  });
}

Var Tape::log_floor(Var a, Real eps) {
  const Tensor& av = val(a);
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = std::log(std::max(av.data[i], eps));
  return push(std::move(out), requires_grad(a), [a, eps](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& av2 = t.val(a);
    Tensor& pg = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av2.data[i] > eps) pg.data[i] += g.data[i] / av2.data[i];
    }
  });
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, Real eps) {
  const Tensor& xv = val(x);
  const Tensor& gv = val(gamma);
  const Tensor& bv = val(beta);
  if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols) {
    throw std::logic_error("layer_norm_rows: parameter shape mismatch");
  }
  const int n = xv.cols;
  Tensor out(xv.rows, n);
  Tensor xhat(xv.rows, n);
  std::vector<Real> inv_std(static_cast<std::size_t>(xv.rows));
  for (int r = 0; r < xv.rows; ++r) {
    Real mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xv.at(r, c);
    mean /= n;
    Real var = 0.0;
    for (int c = 0; c < n; ++c) {
      const Real d = xv.at(r, c) - mean;
      var += d * d;
    }
    var /= n;
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int c = 0; c < n; ++c) {
      const Real xh = (xv.at(r, c) - mean) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = gv.data[c] * xh + bv.data[c];
    }
  }
  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  return push(std::move(out), rg,
              [x, gamma, beta, xh = std::move(xhat), is = std::move(inv_std)](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& gv2 = t.val(gamma);
    const int n = g.cols;
    if (t.requires_grad(beta)) {
      Tensor& pg = t.grad_mut(beta.id);
      for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < n; ++c) pg.data[c] += g.at(r, c);
      }
    }
    if (t.requires_grad(gamma)) {
      Tensor& pg = t.grad_mut(gamma.id);
      for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < n; ++c) pg.data[c] += g.at(r, c) * xh.at(r, c);
      }
    }
    if (t.requires_grad(x)) {
      Tensor& pg = t.grad_mut(x.id);
      for (int r = 0; r < g.rows; ++r) {
        Real mean_dxhat = 0.0;
        Real mean_dxhat_xhat = 0.0;
        for (int c = 0; c < n; ++c) {
          const Real dxh = g.at(r, c) * gv2.data[c];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh.at(r, c);
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for (int c = 0; c < n; ++c) {
          const Real dxh = g.at(r, c) * gv2.data[c];
          pg.at(r, c) += is[r] * (dxh - mean_dxhat - xh.at(r, c) * mean_dxhat_xhat);
        }
      }
    }
  });
}

Var Tape::embedding_rows(Var table, std::vector<int> ids) {
  const Tensor& tv = val(table);
  Tensor out(static_cast<int>(ids.size()), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= tv.rows) throw std::logic_error("embedding_rows: id out of range");
    for (int c = 0; c < tv.cols; ++c) out.at(static_cast<int>(i), c) = tv.at(id, c);
  }
  return push(std::move(out), requires_grad(table),
              [table, ids = std::move(ids)](Tape& t, int self) {
    if (!t.requires_grad(table)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (int c = 0; c < g.cols; ++c) pg.at(ids[i], c) += g.at(static_cast<int>(i), c);
    }
  });
}

Var Tape::col_slice(Var a, int c0, int c1) {
  const Tensor& av = val(a);
  if (c0 < 0 || c1 > av.cols || c0 >= c1) throw std::logic_error("col_slice: bad range");
  Tensor out(av.rows, c1 - c0);
  for (int r = 0; r < av.rows; ++r) {
    for (int c = c0; c < c1; ++c) out.at(r, c - c0) = av.at(r, c);
  }
  return push(std::move(out), requires_grad(a), [a, c0](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) pg.at(r, c0 + c) += g.at(r, c);
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::logic_error("concat_cols: no parts");
  const int rows = val(parts[0]).rows;
  int cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).rows != rows) throw std::logic_error("concat_cols: row mismatch");
    cols += val(p).cols;
    rg = rg || requires_grad(p);
  }
  Tensor out(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& pv = val(p);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < pv.cols; ++c) out.at(r, off + c) = pv.at(r, c);
    }
    off += pv.cols;
  }
  return push(std::move(out), rg, [parts](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    int off2 = 0;
    for (Var p : parts) {
      const int pc = t.val(p).cols;
      if (t.requires_grad(p)) {
        Tensor& pg = t.grad_mut(p.id);
        for (int r = 0; r < g.rows; ++r) {
          for (int c = 0; c < pc; ++c) pg.at(r, c) += g.at(r, off2 + c);
        }
      }
      off2 += pc;
    }
  });
}

Var Tape::row_slice(Var a, int r0, int r1) {
  const Tensor& av = val(a);
  if (r0 < 0 || r1 > av.rows || r0 >= r1) throw std::logic_error("row_slice: bad range");
  Tensor out(r1 - r0, av.cols);
  std::copy(av.data.begin() + static_cast<std::ptrdiff_t>(r0) * av.cols,
            av.data.begin() + static_cast<std::ptrdiff_t>(r1) * av.cols, out.data.begin());
  return push(std::move(out), requires_grad(a), [a, r0](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) pg.at(r0 + r, c) += g.at(r, c);
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::logic_error("concat_rows: no parts");
  const int cols = val(parts[0]).cols;
  int rows = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).cols != cols) throw std::logic_error("concat_rows: column mismatch");
    rows += val(p).rows;
    rg = rg || requires_grad(p);
  }
  Tensor out(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& pv = val(p);
    std::copy(pv.data.begin(), pv.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(off) * cols);
    off += pv.rows;
  }
  return push(std::move(out), rg, [parts](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    int off2 = 0;
    for (Var p : parts) {
      const int pr = t.val(p).rows;
      if (t.requires_grad(p)) {
        Tensor& pg = t.grad_mut(p.id);
        for (int r = 0; r < pr; ++r) {
          for (int c = 0; c < g.cols; ++c) pg.at(r, c) += g.at(off2 + r, c);
        }
      }
      off2 += pr;
    }
  });
}

Var Tape::row_sum(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.rows, 1);
  for (int r = 0; r < av.rows; ++r) {
    Real s = 0.0;
    for (int c = 0; c < av.cols; ++c) s += av.at(r, c);
    out.at(r, 0) = s;
  }
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < pg.rows; ++r) {
      for (int c = 0; c < pg.cols; ++c) pg.at(r, c) += g.at(r, 0);
    }
  });
}

Var Tape::conv2d_3x3(Var x, Var k, Var bias, int cin, int h, int w) {
  const Tensor& xv = val(x);
  const Tensor& kv = val(k);
  const Tensor& bv = val(bias);
  if (xv.cols != cin * h * w) throw std::logic_error("conv2d: input shape mismatch");
  if (kv.cols != cin * 9) throw std::logic_error("conv2d: kernel shape mismatch");
  const int cout = kv.rows;
  if (bv.rows != 1 || bv.cols != cout) throw std::logic_error("conv2d: bias shape mismatch");
  const int n = xv.rows;
  Tensor out(n, cout * h * w);
  auto xat = [&](int img, int c, int y, int xx) -> Real {
    if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
    return xv.at(img, (c * h + y) * w + xx);
  };
  for (int img = 0; img < n; ++img) {
    for (int co = 0; co < cout; ++co) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          Real acc = bv.data[co];
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                acc += kv.at(co, (ci * 3 + ky) * 3 + kx) * xat(img, ci, y + ky - 1, xx + kx - 1);
              }
            }
          }
          out.at(img, (co * h + y) * w + xx) = acc;
        }
      }
    }
  }
  const bool rg = requires_grad(x) || requires_grad(k) || requires_grad(bias);
  return push(std::move(out), rg, [x, k, bias, cin, h, w](Tape& t, int self) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& xv2 = t.val(x);
    const Tensor& kv2 = t.val(k);
    const int cout = kv2.rows;
    const int n = xv2.rows;
    auto xat = [&](int img, int c, int y, int xx) -> Real {
      if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
      return xv2.at(img, (c * h + y) * w + xx);
    };
    if (t.requires_grad(bias)) {
      Tensor& pg = t.grad_mut(bias.id);
      for (int img = 0; img < n; ++img) {
        for (int co = 0; co < cout; ++co) {
          for (int i = 0; i < h * w; ++i) pg.data[co] += g.at(img, co * h * w + i);
        }
      }
    }
    if (t.requires_grad(k)) {
      Tensor& pg = t.grad_mut(k.id);
      for (int img = 0; img < n; ++img) {
        for (int co = 0; co < cout; ++co) {
          for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
              const Real go = g.at(img, (co * h + y) * w + xx);
              if (go == 0.0) continue;
              for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < 3; ++ky) {
                  for (int kx = 0; kx < 3; ++kx) {
                    pg.at(co, (ci * 3 + ky) * 3 + kx) += go * xat(img, ci, y + ky - 1, xx + kx - 1);
                  }
                }
              }
            }
          }
        }
      }
    }
    if (t.requires_grad(x)) {
      Tensor& pg = t.grad_mut(x.id);
      for (int img = 0; img < n; ++img) {
        for (int co = 0; co < cout; ++co) {
          for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
              const Real go = g.at(img, (co * h + y) * w + xx);
              if (go == 0.0) continue;
              for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < 3; ++ky) {
                  const int sy = y + ky - 1;
                  if (sy < 0 || sy >= h) continue;
                  for (int kx = 0; kx < 3; ++kx) {
                    const int sx = xx + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    pg.at(img, (ci * h + sy) * w + sx) += go * kv2.at(co, (ci * 3 + ky) * 3 + kx);
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

Var Tape::global_avg_pool(Var x, int c, int h, int w) {
  const Tensor& xv = val(x);
  if (xv.cols != c * h * w) throw std::logic_error("global_avg_pool: shape mismatch");
  const Real inv = 1.0 / (static_cast<Real>(h) * w);
  Tensor out(xv.rows, c);
  for (int img = 0; img < xv.rows; ++img) {
    for (int ch = 0; ch < c; ++ch) {
      Real s = 0.0;
      for (int i = 0; i < h * w; ++i) s += xv.at(img, ch * h * w + i);
      out.at(img, ch) = s * inv;
    }
  }
  return push(std::move(out), requires_grad(x), [x, c, h, w, inv](Tape& t, int self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(x.id);
    for (int img = 0; img < g.rows; ++img) {
      for (int ch = 0; ch < c; ++ch) {
        const Real gv = g.at(img, ch) * inv;
        for (int i = 0; i < h * w; ++i) pg.at(img, ch * h * w + i) += gv;
      }
    }
  });
}

Var Tape::add_key_mask(Var scores, std::vector<std::uint8_t> key_mask) {
  const Tensor& sv = val(scores);
  if (static_cast<int>(key_mask.size()) != sv.cols) {
    throw std::logic_error("add_key_mask: mask length mismatch");
  }
  Tensor out = sv;
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      if (!key_mask[c]) out.at(r, c) += kMaskPenalty;
    }
  }
  return push(std::move(out), requires_grad(scores), [scores](Tape& t, int self) {
    if (!t.requires_grad(scores)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(scores.id);
    for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i];
  });
}

Var Tape::select_rows(Var a, std::vector<std::uint8_t> row_mask) {
  const Tensor& av = val(a);
  if (static_cast<int>(row_mask.size()) != av.rows) {
    throw std::logic_error("select_rows: mask length mismatch");
  }
  Tensor out(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r) {
    if (!row_mask[r]) continue;  // dropped rows stay exact zero (kills NaN)
    for (int c = 0; c < av.cols; ++c) out.at(r, c) = av.at(r, c);
  }
  return push(std::move(out), requires_grad(a),
              [a, row_mask = std::move(row_mask)](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(a.id);
    for (int r = 0; r < g.rows; ++r) {
      if (!row_mask[r]) continue;
      for (int c = 0; c < g.cols; ++c) pg.at(r, c) += g.at(r, c);
    }
  });
}

Var Tape::masked_mean(Var col, std::vector<std::uint8_t> mask) {
  const Tensor& cv = val(col);
  if (cv.cols != 1 || static_cast<int>(mask.size()) != cv.rows) {
    throw std::logic_error("masked_mean: shape mismatch");
  }
  int n_real = 0;
  Real sum = 0.0;
  for (int r = 0; r < cv.rows; ++r) {
    if (mask[r]) {
      sum += cv.at(r, 0);
      ++n_real;
    }
  }
  if (n_real == 0) throw std::logic_error("masked_mean: no unmasked rows");
  Tensor out = Tensor::scalar(sum / n_real);
  return push(std::move(out), requires_grad(col),
              [col, mask = std::move(mask), n_real](Tape& t, int self) {
    if (!t.requires_grad(col)) return;
    const Real g = t.nodes_[self].grad.data[0] / n_real;
    Tensor& pg = t.grad_mut(col.id);
    for (int r = 0; r < pg.rows; ++r) {
      if (mask[r]) pg.at(r, 0) += g;
    }
  });
}

Var Tape::nll(Var log_probs, std::vector<int> ids, std::vector<std::uint8_t> mask) {
  const Tensor& lv = val(log_probs);
  if (static_cast<int>(ids.size()) != lv.rows || static_cast<int>(mask.size()) != lv.rows) {
    throw std::logic_error("nll: shape mismatch");
  }
  int n_real = 0;
  Real sum = 0.0;
  for (int r = 0; r < lv.rows; ++r) {
    if (!mask[r]) continue;
    if (ids[r] < 0 || ids[r] >= lv.cols) throw std::logic_error("nll: id out of range");
    sum -= lv.at(r, ids[r]);
    ++n_real;
  }
  if (n_real == 0) throw std::logic_error("nll: no unmasked rows");
  Tensor out = Tensor::scalar(sum / n_real);
  return push(std::move(out), requires_grad(log_probs),
              [log_probs, ids = std::move(ids), mask = std::move(mask), n_real](Tape& t, int self) {
    if (!t.requires_grad(log_probs)) return;
    const Real g = t.nodes_[self].grad.data[0] / n_real;
    Tensor& pg = t.grad_mut(log_probs.id);
    for (int r = 0; r < pg.rows; ++r) {
      if (mask[r]) pg.at(r, ids[r]) -= g;
    }
  });
}

Var Tape::dropout(Var a, Real p, rng::Rng& rng, bool active) {
  if (!active || p <= 0.0) return a;
  if (p >= 1.0) throw std::logic_error("dropout: p must be < 1");
  const Tensor& av = val(a);
  const Real inv_keep = 1.0 / (1.0 - p);
  std::vector<std::uint8_t> keep(av.size());
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < av.size(); ++i) {
    keep[i] = rng.uniform() >= p ? 1 : 0;
    out.data[i] = keep[i] ? av.data[i] * inv_keep : 0.0;
  }
  return push(std::move(out), requires_grad(a),
              [a, keep = std::move(keep), inv_keep](Tape& t, int self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.nodes_[self].grad;
    Tensor& pg = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (keep[i]) pg.data[i] += g.data[i] * inv_keep;
    }
  });
}

}  // namespace vancl::nn
