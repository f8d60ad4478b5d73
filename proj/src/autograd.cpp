// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "fgahoi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fga {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [&](std::size_t i) { return nodes_[i].requires_grad; });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty() && n.value.numel() != 0) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() != n.value.numel() || n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(ErrorKind::kContract, "loss does not belong to this tape");
  if (value(loss).numel() != 1) {
    throw Error(ErrorKind::kContract, "backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.tape != b.tape) throw Error(ErrorKind::kContract, std::string(op) + ": operands live on different tapes");
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kDimension,
                std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Adds `g` into input `which` of node `self` if that input wants a gradient.
template <typename F>
void accumulate(Tape& t, std::size_t self, std::size_t which, F&& f) {
  const std::size_t in = t.inputs(self)[which];
  if (!t.requires_grad(in)) return;
  f(t.grad_buffer(in));
}

template <typename Fwd, typename Da, typename Db>
Var binary(const char* name, Var a, Var b, Fwd fwd, Da da, Db db) {
  require_same_shape(name, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i], bv[i]);
  return a.tape->push(std::move(out), {a.id, b.id}, [da, db](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.value(t.inputs(self)[0]);
    const Tensor& y = t.value(t.inputs(self)[1]);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * da(x[i], y[i]);
    });
    accumulate(t, self, 1, [&](Tensor& gy) {
      for (std::size_t i = 0; i < g.numel(); ++i) gy[i] += g[i] * db(x[i], y[i]);
    });
  });
}

template <typename Fwd, typename D>
Var unary(Var a, Fwd fwd, D deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i]);
  return a.tape->push(std::move(out), {a.id}, [deriv](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.value(t.inputs(self)[0]);
    const Tensor& y = t.value(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
    });
  });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Var maximum(Var a, Var b) {
  return binary("maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
                [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var minimum(Var a, Var b) {
  return binary("minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
                [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_const(Var a, const Tensor& c) {
  if (c.shape() != a.shape()) {
    throw Error(ErrorKind::kDimension, "add_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c[i];
  return a.tape->push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
  });
}

Var mul_const(Var a, const Tensor& c) {
  if (c.shape() != a.shape()) {
    throw Error(ErrorKind::kDimension, "mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  return a.tape->push(std::move(out), {a.id}, [c](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c[i];
    });
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var logistic(Var a) {
  return unary(a, sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var hard_sigmoid(Var a) {
  return unary(
      a, [](double x) { return std::clamp(x / 6.0 + 0.5, 0.0, 1.0); },
      [](double x, double) {
        const double z = x / 6.0 + 0.5;
        return (z > 0.0 && z < 1.0) ? 1.0 / 6.0 : 0.0;
      });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.rank() < 1 || av.cols() != bv.dim(0)) {
    throw Error(ErrorKind::kDimension,
                "matmul: inner extents disagree for " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  Shape shape = av.shape();
  shape.back() = n;
  Tensor out(shape);
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      if (s == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
  return a.tape->push(std::move(out), {a.id, b.id}, [m, k, n](Tape& t, std::size_t self) {
    const double* G = t.upstream(self).data().data();
    const double* A = t.value(t.inputs(self)[0]).data().data();
    const double* B = t.value(t.inputs(self)[1]).data().data();
    accumulate(t, self, 0, [&](Tensor& ga) {
      double* GA = ga.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          // Four fixed lanes so the loop vectorizes; the order is still fixed.
          double acc[4] = {0.0, 0.0, 0.0, 0.0};
          std::size_t j = 0;
          for (; j + 4 <= n; j += 4) {
            for (std::size_t l = 0; l < 4; ++l) acc[l] += grow[j + l] * brow[j + l];
          }
          for (; j < n; ++j) acc[0] += grow[j] * brow[j];
          GA[i * k + p] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
        }
      }
    });
    accumulate(t, self, 1, [&](Tensor& gb) {
      double* GB = gb.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    });
  });
}

Var add_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.numel() != xv.cols()) {
    throw Error(ErrorKind::kDimension, "add_bias: bias " + shape_str(bv.shape()) + " does not fit " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % n];
  return x.tape->push(std::move(out), {x.id, b.id}, [n](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
    accumulate(t, self, 1, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i % n] += g[i];
    });
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.tape->push(Tensor::scalar(s), {a.id}, [](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (auto& v : gx.data()) v += g;
    });
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw Error(ErrorKind::kDimension, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  if (start + count > cols) {
    throw Error(ErrorKind::kDimension, "slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                           ") out of range for " + shape_str(av.shape()));
  }
  Shape shape = av.shape();
  shape.back() = count;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = av[r * cols + start + c];
  }
  return a.tape->push(std::move(out), {a.id}, [rows, cols, start, count](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) gx[r * cols + start + c] += g[r * count + c];
      }
    });
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols();
  if (start + count > av.rows()) {
    throw Error(ErrorKind::kDimension, "slice_rows: out of range for " + shape_str(av.shape()));
  }
  Tensor out({count, cols});
  std::copy(av.data().begin() + static_cast<std::ptrdiff_t>(start * cols),
            av.data().begin() + static_cast<std::ptrdiff_t>((start + count) * cols), out.data().begin());
  return a.tape->push(std::move(out), {a.id}, [start, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.numel(); ++i) gx[start * cols + i] += g[i];
    });
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kDimension, "concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) {
      throw Error(ErrorKind::kDimension, "concat_cols: row count mismatch " + shape_str(parts[0].shape()) + " vs " +
                                             shape_str(p.shape()));
    }
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += widths.back();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = pv[r * widths[k] + c];
    }
    off += widths[k];
  }
  return parts[0].tape->push(std::move(out), ids, [widths, rows, total](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      accumulate(t, self, k, [&](Tensor& gx) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gx[r * widths[k] + c] += g[r * total + off + c];
        }
      });
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kDimension, "concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> sizes, ids;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) {
      throw Error(ErrorKind::kDimension, "concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                                             shape_str(p.shape()));
    }
    sizes.push_back(p.value().numel());
    ids.push_back(p.id);
    rows += p.value().rows();
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().numel();
  }
  return parts[0].tape->push(std::move(out), ids, [sizes](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      accumulate(t, self, k, [&](Tensor& gx) {
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += g[off + i];
      });
      off += sizes[k];
    }
  });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  Tensor out({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw Error(ErrorKind::kDimension, "gather_rows: index out of range");
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(index[r] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return a.tape->push(std::move(out), {a.id}, [index = std::move(index), cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t r = 0; r < index.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[index[r] * cols + c] += g[r * cols + c];
      }
    });
  });
}

Var expand_cols(Var c, std::size_t width) {
  const Tensor& cv = c.value();
  if (cv.cols() != 1) throw Error(ErrorKind::kDimension, "expand_cols: expected one column, got " + shape_str(cv.shape()));
  const std::size_t rows = cv.rows();
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = cv[r];
  }
  return c.tape->push(std::move(out), {c.id}, [rows, width](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += g[r * width + j];
        gx[r] += s;
      }
    });
  });
}

Var group_mean_rows(Var a, std::size_t group) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  if (group == 0 || rows % group != 0) {
    throw Error(ErrorKind::kDimension, "group_mean_rows: " + std::to_string(rows) + " rows not divisible by " +
                                           std::to_string(group));
  }
  const std::size_t groups = rows / group;
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out({groups, cols});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t r = 0; r < group; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[gi * cols + c] += av[(gi * group + r) * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[gi * cols + c] *= inv;
  }
  return a.tape->push(std::move(out), {a.id}, [groups, group, cols, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t r = 0; r < group; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gx[(gi * group + r) * cols + c] += inv * g[gi * cols + c];
        }
      }
    });
  });
}

Var softmax(Var a, std::size_t axis) {
  const Tensor& av = a.value();
  if (axis >= av.rank()) {
    throw Error(ErrorKind::kDimension, "softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(av.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
  for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
  const std::size_t n = av.dim(axis);
  Tensor out(av.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = av[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(av[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  return a.tape->push(std::move(out), {a.id}, [outer, inner, n](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& y = t.value(self);
    accumulate(t, self, 0, [&](Tensor& gx) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  if (gamma.value().numel() != n || beta.value().numel() != n) {
    throw Error(ErrorKind::kDimension, "layer_norm: affine parameters do not match width " + std::to_string(n));
  }
  Tensor normed(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) normed[r * n + j] = (row[j] - mu) * inv_std[r];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = normed[i] * gv[i % n] + bv[i % n];
  return x.tape->push(
      std::move(out), {x.id, gamma.id, beta.id},
      [normed = std::move(normed), inv_std = std::move(inv_std), n, rows](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& gam = t.value(t.inputs(self)[1]);
        accumulate(t, self, 0, [&](Tensor& gx) {
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[r * n + j] * gam[j];
              m1 += gh;
              m2 += gh * normed[r * n + j];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[r * n + j] * gam[j];
              gx[r * n + j] += inv_std[r] * (gh - m1 - normed[r * n + j] * m2);
            }
          }
        });
        accumulate(t, self, 1, [&](Tensor& gg) {
          for (std::size_t i = 0; i < g.numel(); ++i) gg[i % n] += g[i] * normed[i];
        });
        accumulate(t, self, 2, [&](Tensor& gb) {
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i % n] += g[i];
        });
      });
}

namespace {

// Corner geometry of one bilinear read in pixel space.
struct BilinearCell {
  long x0, y0;
  double fx, fy;
};

BilinearCell locate(double u, double v, std::size_t h, std::size_t w) {
  const double px = u * static_cast<double>(w) - 0.5;
  const double py = v * static_cast<double>(h) - 0.5;
  const double fx0 = std::floor(px), fy0 = std::floor(py);
  return {static_cast<long>(fx0), static_cast<long>(fy0), px - fx0, py - fy0};
}

// A strided single-level view: pixel (y, x) channel c lives at
// base[(y * w + x) * stride + c].
struct MapView {
  const double* base;
  std::size_t h, w, stride, channels;

  const double* pixel(long y, long x) const {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return nullptr;
    return base + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * stride;
  }
};

void sample_into(const MapView& m, const BilinearCell& cell, double scale_by, double* out) {
  const double wts[4] = {(1 - cell.fx) * (1 - cell.fy), cell.fx * (1 - cell.fy), (1 - cell.fx) * cell.fy,
                         cell.fx * cell.fy};
  const long xs[4] = {cell.x0, cell.x0 + 1, cell.x0, cell.x0 + 1};
  const long ys[4] = {cell.y0, cell.y0, cell.y0 + 1, cell.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    const double* p = m.pixel(ys[k], xs[k]);
    if (!p) continue;
    const double wk = wts[k] * scale_by;
    for (std::size_t c = 0; c < m.channels; ++c) out[c] += wk * p[c];
  }
}

// Backward of one read scaled by `scale_by`: scatters into dmap (same stride
// layout as the view) and returns d/d(px), d/d(py) of sum_c g[c] * read[c]
// (before multiplying by scale_by).
std::pair<double, double> sample_backward(const MapView& m, double* dmap, const BilinearCell& cell,
                                          double scale_by, const double* g) {
  const double wts[4] = {(1 - cell.fx) * (1 - cell.fy), cell.fx * (1 - cell.fy), (1 - cell.fx) * cell.fy,
                         cell.fx * cell.fy};
  const long xs[4] = {cell.x0, cell.x0 + 1, cell.x0, cell.x0 + 1};
  const long ys[4] = {cell.y0, cell.y0, cell.y0 + 1, cell.y0 + 1};
  double dot[4] = {0, 0, 0, 0};
  for (int k = 0; k < 4; ++k) {
    const double* p = m.pixel(ys[k], xs[k]);
    if (!p) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.channels; ++c) acc += g[c] * p[c];
    dot[k] = acc;
    if (dmap) {
      double* dp = dmap + (p - m.base);
      const double wk = wts[k] * scale_by;
      for (std::size_t c = 0; c < m.channels; ++c) dp[c] += wk * g[c];
    }
  }
  const double dpx = (1 - cell.fy) * (dot[1] - dot[0]) + cell.fy * (dot[3] - dot[2]);
  const double dpy = (1 - cell.fx) * (dot[2] - dot[0]) + cell.fx * (dot[3] - dot[1]);
  return {dpx, dpy};
}

}  // namespace

Var bilinear_sample(Var map, Var points) {
  const Tensor& mv = map.value();
  const Tensor& pv = points.value();
  if (mv.rank() != 3 || mv.dim(0) == 0 || mv.dim(1) == 0) {
    throw Error(ErrorKind::kDimension, "bilinear_sample: map must be [H, W, C], got " + shape_str(mv.shape()));
  }
  if (pv.cols() != 2) throw Error(ErrorKind::kDimension, "bilinear_sample: points must be [P, 2], got " + shape_str(pv.shape()));
  const std::size_t h = mv.dim(0), w = mv.dim(1), c = mv.dim(2), np = pv.rows();
  Tensor out({np, c});
  const MapView view{mv.data().data(), h, w, c, c};
  for (std::size_t p = 0; p < np; ++p) {
    sample_into(view, locate(pv[2 * p], pv[2 * p + 1], h, w), 1.0, out.data().data() + p * c);
  }
  return map.tape->push(std::move(out), {map.id, points.id}, [h, w, c, np](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& mv = t.value(t.inputs(self)[0]);
    const Tensor& pv = t.value(t.inputs(self)[1]);
    const bool want_map = t.requires_grad(t.inputs(self)[0]);
    const bool want_pts = t.requires_grad(t.inputs(self)[1]);
    double* dmap = want_map ? t.grad_buffer(t.inputs(self)[0]).data().data() : nullptr;
    double* dpts = want_pts ? t.grad_buffer(t.inputs(self)[1]).data().data() : nullptr;
    const MapView view{mv.data().data(), h, w, c, c};
    for (std::size_t p = 0; p < np; ++p) {
      const auto cell = locate(pv[2 * p], pv[2 * p + 1], h, w);
      const auto [dpx, dpy] = sample_backward(view, dmap, cell, 1.0, g.data().data() + p * c);
      if (dpts) {
        dpts[2 * p] += dpx * static_cast<double>(w);
        dpts[2 * p + 1] += dpy * static_cast<double>(h);
      }
    }
  });
}

AttentionOutput attention_core(Var q, Var k, Var v, std::size_t groups, std::size_t heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::kConfig, "attention: width " + std::to_string(d) + " not divisible by " +
                                        std::to_string(heads) + " heads");
  }
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw Error(ErrorKind::kDimension, "attention: q/k/v shapes " + shape_str(qv.shape()) + ", " +
                                           shape_str(kv.shape()) + ", " + shape_str(vv.shape()) + " disagree");
  }
  if (groups == 0 || qv.rows() % groups != 0 || kv.rows() % groups != 0) {
    throw Error(ErrorKind::kDimension, "attention: rows not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t lq = qv.rows() / groups, lk = kv.rows() / groups, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor weights({groups, heads, lq, lk});
  Tensor out({qv.rows(), d});
  const double* Q = qv.data().data();
  const double* K = kv.data().data();
  const double* V = vv.data().data();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < lq; ++i) {
        double* wrow = weights.data().data() + ((g * heads + h) * lq + i) * lk;
        const double* qrow = Q + (g * lq + i) * d + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < lk; ++j) {
          const double* krow = K + (g * lk + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qrow[c] * krow[c];
          wrow[j] = s * inv_sqrt;
          mx = std::max(mx, wrow[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          wrow[j] = std::exp(wrow[j] - mx);
          total += wrow[j];
        }
        double* orow = out.data().data() + (g * lq + i) * d + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          wrow[j] /= total;
          const double* vrow = V + (g * lk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += wrow[j] * vrow[c];
        }
      }
    }
  }
  Var result = q.tape->push(
      std::move(out), {q.id, k.id, v.id},
      [weights, groups, heads, lq, lk, d, dh, inv_sqrt](Tape& t, std::size_t self) {
        const double* G = t.upstream(self).data().data();
        const double* Q = t.value(t.inputs(self)[0]).data().data();
        const double* K = t.value(t.inputs(self)[1]).data().data();
        const double* V = t.value(t.inputs(self)[2]).data().data();
        const bool wq = t.requires_grad(t.inputs(self)[0]);
        const bool wk = t.requires_grad(t.inputs(self)[1]);
        const bool wv = t.requires_grad(t.inputs(self)[2]);
        double* GQ = wq ? t.grad_buffer(t.inputs(self)[0]).data().data() : nullptr;
        double* GK = wk ? t.grad_buffer(t.inputs(self)[1]).data().data() : nullptr;
        double* GV = wv ? t.grad_buffer(t.inputs(self)[2]).data().data() : nullptr;
        std::vector<double> dp(lk);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < lq; ++i) {
              const double* wrow = weights.data().data() + ((g * heads + h) * lq + i) * lk;
              const double* grow = G + (g * lq + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < lk; ++j) {
                const double* vrow = V + (g * lk + j) * d + h * dh;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += grow[c] * vrow[c];
                dp[j] = s;
                dot += s * wrow[j];
                if (GV) {
                  double* gvrow = GV + (g * lk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvrow[c] += wrow[j] * grow[c];
                }
              }
              const double* qrow = Q + (g * lq + i) * d + h * dh;
              for (std::size_t j = 0; j < lk; ++j) {
                const double ds = wrow[j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* krow = K + (g * lk + j) * d + h * dh;
                if (GQ) {
                  double* gqrow = GQ + (g * lq + i) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqrow[c] += ds * krow[c];
                }
                if (GK) {
                  double* gkrow = GK + (g * lk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkrow[c] += ds * qrow[c];
                }
              }
            }
          }
        }
      });
  return {result, std::move(weights)};
}

AttentionOutput multi_head_attention(Var q, Var k, Var v, const AttentionProjections& w, std::size_t heads,
                                     std::size_t groups) {
  const std::size_t d = q.value().cols();
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::kConfig, "multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                                        std::to_string(heads) + " heads");
  }
  AttentionOutput core = attention_core(matmul(q, w.query), matmul(k, w.key), matmul(v, w.value), groups, heads);
  return {matmul(core.out, w.output), std::move(core.weights)};
}

LevelLayout LevelLayout::from_shapes(const std::vector<std::pair<std::size_t, std::size_t>>& hw) {
  LevelLayout layout;
  std::size_t off = 0;
  for (const auto& [h, w] : hw) {
    layout.heights.push_back(h);
    layout.widths.push_back(w);
    layout.offsets.push_back(off);
    off += h * w;
  }
  return layout;
}

std::size_t LevelLayout::total() const {
  if (heights.empty()) return 0;
  return offsets.back() + heights.back() * widths.back();
}

Var deform_sample(Var value, const LevelLayout& layout, Var locations, Var weights, std::size_t heads,
                  std::size_t points) {
  const Tensor& vv = value.value();
  const Tensor& lv = locations.value();
  const Tensor& wv = weights.value();
  const std::size_t d = vv.cols(), levels = layout.levels();
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::kConfig, "deform_sample: width " + std::to_string(d) + " not divisible by heads");
  }
  if (vv.rows() != layout.total()) {
    throw Error(ErrorKind::kDimension, "deform_sample: value rows " + std::to_string(vv.rows()) +
                                           " do not match layout total " + std::to_string(layout.total()));
  }
  const std::size_t per_query = heads * levels * points;
  const std::size_t nq = wv.numel() / std::max<std::size_t>(per_query, 1);
  if (wv.numel() != nq * per_query || lv.numel() != nq * per_query * 2) {
    throw Error(ErrorKind::kDimension, "deform_sample: locations " + shape_str(lv.shape()) + " / weights " +
                                           shape_str(wv.shape()) + " do not match heads*levels*points");
  }
  const std::size_t dh = d / heads;
  Tensor out({nq, d});
  const double* L = lv.data().data();
  const double* W = wv.data().data();
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* orow = out.data().data() + q * d + h * dh;
      for (std::size_t l = 0; l < levels; ++l) {
        const MapView view{vv.data().data() + layout.offsets[l] * d + h * dh, layout.heights[l], layout.widths[l], d, dh};
        for (std::size_t k = 0; k < points; ++k) {
          const std::size_t idx = ((q * heads + h) * levels + l) * points + k;
          sample_into(view, locate(L[2 * idx], L[2 * idx + 1], view.h, view.w), W[idx], orow);
        }
      }
    }
  }
  return value.tape->push(
      std::move(out), {value.id, locations.id, weights.id},
      [layout, heads, levels, points, nq, d, dh](Tape& t, std::size_t self) {
        const double* G = t.upstream(self).data().data();
        const Tensor& vv = t.value(t.inputs(self)[0]);
        const double* L = t.value(t.inputs(self)[1]).data().data();
        const double* W = t.value(t.inputs(self)[2]).data().data();
        double* GV = t.requires_grad(t.inputs(self)[0]) ? t.grad_buffer(t.inputs(self)[0]).data().data() : nullptr;
        double* GL = t.requires_grad(t.inputs(self)[1]) ? t.grad_buffer(t.inputs(self)[1]).data().data() : nullptr;
        double* GW = t.requires_grad(t.inputs(self)[2]) ? t.grad_buffer(t.inputs(self)[2]).data().data() : nullptr;
        std::vector<double> read(dh);
        for (std::size_t q = 0; q < nq; ++q) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* grow = G + q * d + h * dh;
            for (std::size_t l = 0; l < levels; ++l) {
              const std::size_t base = layout.offsets[l] * d + h * dh;
              const MapView view{vv.data().data() + base, layout.heights[l], layout.widths[l], d, dh};
              double* dmap = GV ? GV + base : nullptr;
              for (std::size_t k = 0; k < points; ++k) {
                const std::size_t idx = ((q * heads + h) * levels + l) * points + k;
                const auto cell = locate(L[2 * idx], L[2 * idx + 1], view.h, view.w);
                if (GW) {
                  std::fill(read.begin(), read.end(), 0.0);
                  sample_into(view, cell, 1.0, read.data());
                  double s = 0.0;
                  for (std::size_t c = 0; c < dh; ++c) s += grow[c] * read[c];
                  GW[idx] += s;
                }
                if (GV || GL) {
                  const auto [dpx, dpy] = sample_backward(view, dmap, cell, W[idx], grow);
                  if (GL) {
                    GL[2 * idx] += W[idx] * dpx * static_cast<double>(view.w);
                    GL[2 * idx + 1] += W[idx] * dpy * static_cast<double>(view.h);
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace fga
