// SPDX-License-Identifier: Apache-2.0
#include "qebench/ops.hpp"

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>

namespace qebench {
namespace ops {
namespace {

using Store = std::shared_ptr<std::vector<double>>;

std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.ndim(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (!tape) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw DomainError("op: inputs recorded on different tapes");
    }
  }
  return tape;
}

// Interprets x as a [rows x cols] matrix, accepting 1-D as a single row.
void as_matrix(const Tensor& x, const char* op, std::size_t& rows,
               std::size_t& cols) {
  if (x.ndim() == 1) {
    rows = 1;
    cols = x.dim(0);
  } else if (x.ndim() == 2) {
    rows = x.dim(0);
    cols = x.dim(1);
  } else {
    throw DimensionError(std::string(op) + ": need 1-D or 2-D input, have " +
                         shape_str(x));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <typename Fwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b,
                          Fwd fwd, bool is_mul) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a) + " vs " + shape_str(b));
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (Tape* tp = common_tape({&a, &b})) {
    const int na = a.node(), nb = b.node();
    const bool neg_b = std::string(name) == "sub";
    Store sa = a.storage(), sb = b.storage();
    int node = tp->record(n, [na, nb, n, is_mul, neg_b, sa, sb](
                                 const double* g, Tape& t) {
      if (na >= 0) {
        double* ga = t.grad_accum(na, n);
        if (is_mul) {
          const double* vb = sb->data();
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (nb >= 0) {
        double* gb = t.grad_accum(nb, n);
        if (is_mul) {
          const double* va = sa->data();
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
        } else if (neg_b) {
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      }
    });
    tp->bind(out, node);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, true);
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    int node = tp->record(n, [na, n, c](const double* g, Tape& t) {
      double* ga = t.grad_accum(na, n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw DomainError("leaky_relu: slope must lie in (0,1), have " +
                      std::to_string(slope));
  }
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = px[i] > 0.0 ? px[i] : slope * px[i];
  }
  if (Tape* tp = common_tape({&x})) {
    const int nx = x.node();
    Store sx = x.storage();
    int node = tp->record(n, [nx, n, slope, sx](const double* g, Tape& t) {
      double* gx = t.grad_accum(nx, n);
      const double* vx = sx->data();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += g[i] * (vx[i] > 0.0 ? 1.0 : slope);
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (Tape* tp = common_tape({&x})) {
    const int nx = x.node();
    Store sx = x.storage();
    int node = tp->record(n, [nx, n, sx](const double* g, Tape& t) {
      double* gx = t.grad_accum(nx, n);
      const double* vx = sx->data();
      for (std::size_t i = 0; i < n; ++i) {
        if (vx[i] > 0.0) gx[i] += g[i];
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = px[i];
    if (v >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      po[i] = e / (1.0 + e);
    }
  }
  if (Tape* tp = common_tape({&x})) {
    const int nx = x.node();
    Store sy = out.storage();
    int node = tp->record(n, [nx, n, sy](const double* g, Tape& t) {
      double* gx = t.grad_accum(nx, n);
      const double* y = sy->data();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += g[i] * y[i] * (1.0 - y[i]);
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
  if (Tape* tp = common_tape({&x})) {
    const int nx = x.node();
    Store sy = out.storage();
    int node = tp->record(n, [nx, n, sy](const double* g, Tape& t) {
      double* gx = t.grad_accum(nx, n);
      const double* y = sy->data();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += g[i] * (1.0 - y[i] * y[i]);
      }
    });
    tp->bind(out, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

namespace {

Tensor affine_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
  std::size_t n, k;
  as_matrix(x, "affine", n, k);
  require(w.ndim() == 2, "affine: weight must be 2-D, have " + shape_str(w));
  require(w.dim(0) == k, "affine: input " + shape_str(x) +
                             " incompatible with weight " + shape_str(w));
  const std::size_t m = w.dim(1);
  if (b) {
    require(b->ndim() == 1 && b->dim(0) == m,
            "affine: bias " + shape_str(*b) + " incompatible with weight " +
                shape_str(w));
  }
  Tensor out(x.ndim() == 1 ? std::vector<std::size_t>{m}
                           : std::vector<std::size_t>{n, m});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    if (b) {
      std::memcpy(orow, b->data(), m * sizeof(double));
    } else {
      std::memset(orow, 0, m * sizeof(double));
    }
    const double* xrow = px + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double xv = xrow[kk];
      if (xv == 0.0) continue;
      const double* wrow = pw + kk * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * wrow[j];
    }
  }
  Tape* tp = b ? common_tape({&x, &w, b}) : common_tape({&x, &w});
  if (tp) {
    const int nx = x.node(), nw = w.node(), nb = b ? b->node() : -1;
    Store sx = x.storage(), sw = w.storage();
    int node = tp->record(
        out.size(), [nx, nw, nb, n, k, m, sx, sw](const double* g, Tape& t) {
          if (nx >= 0) {
            double* gx = t.grad_accum(nx, n * k);
            const double* vw = sw->data();
            // gx[i][kk] = sum_j g[i][j] * w[kk][j]
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * m;
              double* gxrow = gx + i * k;
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double* wrow = vw + kk * m;
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) acc += grow[j] * wrow[j];
                gxrow[kk] += acc;
              }
            }
          }
          if (nw >= 0) {
            double* gw = t.grad_accum(nw, k * m);
            const double* vx = sx->data();
            // gw[kk][j] += x[i][kk] * g[i][j]
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * m;
              const double* xrow = vx + i * k;
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double xv = xrow[kk];
                if (xv == 0.0) continue;
                double* gwrow = gw + kk * m;
                for (std::size_t j = 0; j < m; ++j) gwrow[j] += xv * grow[j];
              }
            }
          }
          if (nb >= 0) {
            double* gb = t.grad_accum(nb, m);
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * m;
              for (std::size_t j = 0; j < m; ++j) gb[j] += grow[j];
            }
          }
        });
    tp->bind(out, node);
  }
  return out;
}

}  // namespace

Tensor apply_linear(const Tensor& x, const Tensor& w) {
  return affine_impl(x, w, nullptr);
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require(a.ndim() == 2 && v.ndim() == 1,
          "add_rowvec: need [n x k] and [k], have " + shape_str(a) + " and " +
              shape_str(v));
  require(a.dim(1) == v.dim(0), "add_rowvec: " + shape_str(a) + " vs " +
                                    shape_str(v) + " widths differ");
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({n, k});
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * k;
    for (std::size_t j = 0; j < k; ++j) orow[j] = arow[j] + pv[j];
  }
  if (Tape* tp = common_tape({&a, &v})) {
    const int na = a.node(), nv = v.node();
    int node = tp->record(n * k, [na, nv, n, k](const double* g, Tape& t) {
      if (na >= 0) {
        double* ga = t.grad_accum(na, n * k);
        for (std::size_t i = 0; i < n * k; ++i) ga[i] += g[i];
      }
      if (nv >= 0) {
        double* gv = t.grad_accum(nv, k);
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * k;
          for (std::size_t j = 0; j < k; ++j) gv[j] += grow[j];
        }
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor apply_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return affine_impl(x, w, &b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul: need 2-D operands, have " + shape_str(a) + " and " +
              shape_str(b));
  require(a.dim(1) == b.dim(0), "matmul: " + shape_str(a) + " . " +
                                    shape_str(b) + " inner dims differ");
  return affine_impl(a, b, nullptr);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul_nt: need 2-D operands, have " + shape_str(a) + " and " +
              shape_str(b));
  require(a.dim(1) == b.dim(1), "matmul_nt: " + shape_str(a) + " . " +
                                    shape_str(b) + "^T inner dims differ");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  Tensor out({n, m});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      orow[j] = acc;
    }
  }
  if (Tape* tp = common_tape({&a, &b})) {
    const int na = a.node(), nb = b.node();
    Store sa = a.storage(), sb = b.storage();
    int node = tp->record(
        n * m, [na, nb, n, k, m, sa, sb](const double* g, Tape& t) {
          if (na >= 0) {
            double* ga = t.grad_accum(na, n * k);
            const double* vb = sb->data();
            // ga[i][:] += sum_j g[i][j] * b[j][:]
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * m;
              double* garow = ga + i * k;
              for (std::size_t j = 0; j < m; ++j) {
                const double gv = grow[j];
                if (gv == 0.0) continue;
                const double* brow = vb + j * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                  garow[kk] += gv * brow[kk];
                }
              }
            }
          }
          if (nb >= 0) {
            double* gb = t.grad_accum(nb, m * k);
            const double* va = sa->data();
            // gb[j][:] += sum_i g[i][j] * a[i][:]
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * m;
              const double* arow = va + i * k;
              for (std::size_t j = 0; j < m; ++j) {
                const double gv = grow[j];
                if (gv == 0.0) continue;
                double* gbrow = gb + j * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                  gbrow[kk] += gv * arow[kk];
                }
              }
            }
          }
        });
    tp->bind(out, node);
  }
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  require(a.ndim() == 2 && x.ndim() == 1,
          "matvec: need [n x k] and [k], have " + shape_str(a) + " and " +
              shape_str(x));
  require(a.dim(1) == x.dim(0), "matvec: " + shape_str(a) + " . " +
                                    shape_str(x) + " dims differ");
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({n});
  const double* pa = a.data();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    double acc = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * px[kk];
    po[i] = acc;
  }
  if (Tape* tp = common_tape({&a, &x})) {
    const int na = a.node(), nx = x.node();
    Store sa = a.storage(), sx = x.storage();
    int node = tp->record(n, [na, nx, n, k, sa, sx](const double* g, Tape& t) {
      if (na >= 0) {
        double* ga = t.grad_accum(na, n * k);
        const double* vx = sx->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double gv = g[i];
          if (gv == 0.0) continue;
          double* garow = ga + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += gv * vx[kk];
        }
      }
      if (nx >= 0) {
        double* gx = t.grad_accum(nx, k);
        const double* va = sa->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double gv = g[i];
          if (gv == 0.0) continue;
          const double* arow = va + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) gx[kk] += gv * arow[kk];
        }
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor vecmat(const Tensor& x, const Tensor& a) {
  require(x.ndim() == 1 && a.ndim() == 2,
          "vecmat: need [n] and [n x k], have " + shape_str(x) + " and " +
              shape_str(a));
  require(x.dim(0) == a.dim(0), "vecmat: " + shape_str(x) + " . " +
                                    shape_str(a) + " dims differ");
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor out({k});
  const double* px = x.data();
  const double* pa = a.data();
  double* po = out.data();
  std::memset(po, 0, k * sizeof(double));
  for (std::size_t i = 0; i < n; ++i) {
    const double xv = px[i];
    if (xv == 0.0) continue;
    const double* arow = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) po[kk] += xv * arow[kk];
  }
  if (Tape* tp = common_tape({&x, &a})) {
    const int nx = x.node(), na = a.node();
    Store sx = x.storage(), sa = a.storage();
    int node = tp->record(k, [nx, na, n, k, sx, sa](const double* g, Tape& t) {
      if (nx >= 0) {
        double* gx = t.grad_accum(nx, n);
        const double* va = sa->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = va + i * k;
          double acc = 0.0;
          for (std::size_t kk = 0; kk < k; ++kk) acc += g[kk] * arow[kk];
          gx[i] += acc;
        }
      }
      if (na >= 0) {
        double* ga = t.grad_accum(na, n * k);
        const double* vx = sx->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double xv = vx[i];
          if (xv == 0.0) continue;
          double* garow = ga + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += xv * g[kk];
        }
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor outer_add(const Tensor& u, const Tensor& v) {
  require(u.ndim() == 1 && v.ndim() == 1,
          "outer_add: need vectors, have " + shape_str(u) + " and " +
              shape_str(v));
  const std::size_t n = u.dim(0), m = v.dim(0);
  Tensor out({n, m});
  const double* pu = u.data();
  const double* pv = v.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    const double ui = pu[i];
    for (std::size_t j = 0; j < m; ++j) orow[j] = ui + pv[j];
  }
  if (Tape* tp = common_tape({&u, &v})) {
    const int nu = u.node(), nv = v.node();
    int node = tp->record(n * m, [nu, nv, n, m](const double* g, Tape& t) {
      if (nu >= 0) {
        double* gu = t.grad_accum(nu, n);
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j];
          gu[i] += acc;
        }
      }
      if (nv >= 0) {
        double* gv = t.grad_accum(nv, m);
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * m;
          for (std::size_t j = 0; j < m; ++j) gv[j] += grow[j];
        }
      }
    });
    tp->bind(out, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape surgery

Tensor slice(const Tensor& v, std::size_t lo, std::size_t hi) {
  require(v.ndim() == 1, "slice: need 1-D input, have " + shape_str(v));
  if (lo > hi || hi > v.dim(0)) {
    throw DimensionError("slice: range [" + std::to_string(lo) + "," +
                         std::to_string(hi) + ") outside " + shape_str(v));
  }
  const std::size_t m = hi - lo;
  Tensor out({m});
  std::memcpy(out.data(), v.data() + lo, m * sizeof(double));
  if (Tape* tp = common_tape({&v})) {
    const int nv = v.node();
    const std::size_t total = v.dim(0);
    int node = tp->record(m, [nv, lo, m, total](const double* g, Tape& t) {
      double* gv = t.grad_accum(nv, total);
      for (std::size_t i = 0; i < m; ++i) gv[lo + i] += g[i];
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DomainError("concat: empty part list");
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.ndim() == 1, "concat: need 1-D parts, have " + shape_str(p));
    total += p.dim(0);
  }
  Tensor out({total});
  double* po = out.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + off, p.data(), p.dim(0) * sizeof(double));
    off += p.dim(0);
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape* tp = nullptr;
  for (const auto& p : parts) {
    if (p.on_tape()) {
      if (tp && tp != p.tape()) {
        throw DomainError("op: inputs recorded on different tapes");
      }
      tp = p.tape();
    }
  }
  if (tp) {
    std::vector<int> nodes;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      sizes.push_back(p.dim(0));
    }
    int node = tp->record(total, [nodes, sizes](const double* g, Tape& t) {
      std::size_t off2 = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        if (nodes[pi] >= 0) {
          double* gp = t.grad_accum(nodes[pi], sizes[pi]);
          for (std::size_t i = 0; i < sizes[pi]; ++i) gp[i] += g[off2 + i];
        }
        off2 += sizes[pi];
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DomainError("concat_cols: empty part list");
  const std::size_t rows = parts.front().ndim() == 2 ? parts.front().dim(0) : 0;
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == rows,
            "concat_cols: parts must share rows, have " + shape_str(p));
    total_cols += p.dim(1);
  }
  Tensor out({rows, total_cols});
  double* po = out.data();
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    const double* pp = p.data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::memcpy(po + i * total_cols + coff, pp + i * c, c * sizeof(double));
    }
    coff += c;
  }
  Tape* tp = nullptr;
  for (const auto& p : parts) {
    if (p.on_tape()) {
      if (tp && tp != p.tape()) {
        throw DomainError("op: inputs recorded on different tapes");
      }
      tp = p.tape();
    }
  }
  if (tp) {
    std::vector<int> nodes;
    std::vector<std::size_t> cols;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      cols.push_back(p.dim(1));
    }
    int node = tp->record(
        rows * total_cols,
        [nodes, cols, rows, total_cols](const double* g, Tape& t) {
          std::size_t coff2 = 0;
          for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            const std::size_t c = cols[pi];
            if (nodes[pi] >= 0) {
              double* gp = t.grad_accum(nodes[pi], rows * c);
              for (std::size_t i = 0; i < rows; ++i) {
                const double* grow = g + i * total_cols + coff2;
                double* gprow = gp + i * c;
                for (std::size_t j = 0; j < c; ++j) gprow[j] += grow[j];
              }
            }
            coff2 += c;
          }
        });
    tp->bind(out, node);
  }
  return out;
}

Tensor row(const Tensor& a, std::size_t i) {
  require(a.ndim() == 2, "row: need 2-D input, have " + shape_str(a));
  if (i >= a.dim(0)) {
    throw DimensionError("row: index " + std::to_string(i) + " outside " +
                         shape_str(a));
  }
  const std::size_t cols = a.dim(1);
  Tensor out({cols});
  std::memcpy(out.data(), a.data() + i * cols, cols * sizeof(double));
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    const std::size_t rows = a.dim(0);
    int node = tp->record(cols, [na, i, cols, rows](const double* g, Tape& t) {
      double* ga = t.grad_accum(na, rows * cols);
      double* garow = ga + i * cols;
      for (std::size_t j = 0; j < cols; ++j) garow[j] += g[j];
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor permute_rows(const Tensor& a, const std::vector<std::size_t>& order) {
  require(a.ndim() == 2, "permute_rows: need 2-D input, have " + shape_str(a));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (order.size() != rows) {
    throw DimensionError("permute_rows: order size " +
                         std::to_string(order.size()) + " vs rows " +
                         std::to_string(rows));
  }
  std::vector<bool> seen(rows, false);
  for (auto idx : order) {
    if (idx >= rows || seen[idx]) {
      throw DomainError("permute_rows: order is not a permutation");
    }
    seen[idx] = true;
  }
  Tensor out({rows, cols});
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    std::memcpy(po + i * cols, pa + order[i] * cols, cols * sizeof(double));
  }
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    int node =
        tp->record(rows * cols, [na, order, rows, cols](const double* g,
                                                        Tape& t) {
          double* ga = t.grad_accum(na, rows * cols);
          for (std::size_t i = 0; i < rows; ++i) {
            double* garow = ga + order[i] * cols;
            const double* grow = g + i * cols;
            for (std::size_t j = 0; j < cols; ++j) garow[j] += grow[j];
          }
        });
    tp->bind(out, node);
  }
  return out;
}

Tensor take_rows(const Tensor& table, const std::vector<std::size_t>& ids,
                 std::size_t skip_grad_id) {
  require(table.ndim() == 2,
          "take_rows: need 2-D table, have " + shape_str(table));
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  for (auto id : ids) {
    if (id >= rows) {
      throw LookupError("take_rows: id " + std::to_string(id) +
                        " outside table " + shape_str(table));
    }
  }
  const std::size_t n = ids.size();
  Tensor out({n, cols});
  const double* pt = table.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(po + i * cols, pt + ids[i] * cols, cols * sizeof(double));
  }
  if (Tape* tp = common_tape({&table})) {
    const int nt = table.node();
    int node = tp->record(
        n * cols,
        [nt, ids, rows, cols, skip_grad_id, n](const double* g, Tape& t) {
          double* gt = t.grad_accum(nt, rows * cols);
          for (std::size_t i = 0; i < n; ++i) {
            if (ids[i] == skip_grad_id) continue;
            double* grow_t = gt + ids[i] * cols;
            const double* grow = g + i * cols;
            for (std::size_t j = 0; j < cols; ++j) grow_t[j] += grow[j];
          }
        });
    tp->bind(out, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / normalizers

namespace {

// Shift-stable softmax of one contiguous row.
void softmax_row(const double* in, double* out, std::size_t m) {
  double mx = in[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < m; ++j) out[j] *= inv;
}

void softmax_row_backward(const double* p, const double* g, double* gx,
                          std::size_t m) {
  double dot = 0.0;
  for (std::size_t j = 0; j < m; ++j) dot += p[j] * g[j];
  for (std::size_t j = 0; j < m; ++j) gx[j] += p[j] * (g[j] - dot);
}

}  // namespace

Tensor softmax(const Tensor& v) {
  require(v.ndim() == 1, "softmax: need 1-D input, have " + shape_str(v));
  const std::size_t m = v.dim(0);
  if (m == 0) throw DomainError("softmax: empty input");
  Tensor out({m});
  softmax_row(v.data(), out.data(), m);
  if (Tape* tp = common_tape({&v})) {
    const int nv = v.node();
    Store sp = out.storage();
    int node = tp->record(m, [nv, m, sp](const double* g, Tape& t) {
      double* gx = t.grad_accum(nv, m);
      softmax_row_backward(sp->data(), g, gx, m);
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  require(a.ndim() == 2, "softmax_rows: need 2-D input, have " + shape_str(a));
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (m == 0) throw DomainError("softmax_rows: empty rows");
  Tensor out({n, m});
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    softmax_row(pa + i * m, po + i * m, m);
  }
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    Store sp = out.storage();
    int node = tp->record(n * m, [na, n, m, sp](const double* g, Tape& t) {
      double* gx = t.grad_accum(na, n * m);
      const double* p = sp->data();
      for (std::size_t i = 0; i < n; ++i) {
        softmax_row_backward(p + i * m, g + i * m, gx + i * m, m);
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor sum_pool(const Tensor& a) {
  require(a.ndim() == 2, "sum_pool: need 2-D input, have " + shape_str(a));
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (n == 0) throw DomainError("sum_pool: no rows to pool");
  Tensor out({d});
  const double* pa = a.data();
  double* po = out.data();
  std::memset(po, 0, d * sizeof(double));
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * d;
    for (std::size_t j = 0; j < d; ++j) po[j] += arow[j];
  }
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    int node = tp->record(d, [na, n, d](const double* g, Tape& t) {
      double* ga = t.grad_accum(na, n * d);
      for (std::size_t i = 0; i < n; ++i) {
        double* garow = ga + i * d;
        for (std::size_t j = 0; j < d; ++j) garow[j] += g[j];
      }
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc);
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    int node = tp->record(1, [na, n](const double* g, Tape& t) {
      double* ga = t.grad_accum(na, n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor weighted_sum(const Tensor& a, const std::vector<double>& w) {
  if (w.size() != a.size()) {
    throw DimensionError("weighted_sum: weight count " +
                         std::to_string(w.size()) + " vs input size " +
                         std::to_string(a.size()));
  }
  const std::size_t n = a.size();
  double acc = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i] * w[i];
  Tensor out = Tensor::scalar(acc);
  if (Tape* tp = common_tape({&a})) {
    const int na = a.node();
    int node = tp->record(1, [na, n, w](const double* g, Tape& t) {
      double* ga = t.grad_accum(na, n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0] * w[i];
    });
    tp->bind(out, node);
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                       const Tensor& shift, double eps) {
  require(x.ndim() == 2, "layer_norm: need 2-D input, have " + shape_str(x));
  const std::size_t n = x.dim(0), d = x.dim(1);
  require(gain.ndim() == 1 && gain.dim(0) == d,
          "layer_norm: gain " + shape_str(gain) + " vs width " +
              std::to_string(d));
  require(shift.ndim() == 1 && shift.dim(0) == d,
          "layer_norm: shift " + shape_str(shift) + " vs width " +
              std::to_string(d));
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  Tensor out({n, d});
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_sd = std::make_shared<std::vector<double>>(n);
  const double* px = x.data();
  const double* pg = gain.data();
  const double* ps = shift.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xrow = px + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xrow[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xrow[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = inv;
    double* xh = xhat->data() + i * d;
    double* orow = po + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (xrow[j] - mu) * inv;
      orow[j] = pg[j] * xh[j] + ps[j];
    }
  }
  if (Tape* tp = common_tape({&x, &gain, &shift})) {
    const int nx = x.node(), ng = gain.node(), ns = shift.node();
    Store sg = gain.storage();
    int node = tp->record(
        n * d,
        [nx, ng, ns, n, d, xhat, inv_sd, sg](const double* g, Tape& t) {
          const double* xh = xhat->data();
          if (nx >= 0) {
            double* gx = t.grad_accum(nx, n * d);
            const double* vg = sg->data();
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * d;
              const double* xhrow = xh + i * d;
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double gh = grow[j] * vg[j];
                m1 += gh;
                m2 += gh * xhrow[j];
              }
              m1 /= static_cast<double>(d);
              m2 /= static_cast<double>(d);
              const double inv = (*inv_sd)[i];
              double* gxrow = gx + i * d;
              for (std::size_t j = 0; j < d; ++j) {
                const double gh = grow[j] * vg[j];
                gxrow[j] += inv * (gh - m1 - xhrow[j] * m2);
              }
            }
          }
          if (ng >= 0) {
            double* gg = t.grad_accum(ng, d);
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * d;
              const double* xhrow = xh + i * d;
              for (std::size_t j = 0; j < d; ++j) gg[j] += grow[j] * xhrow[j];
            }
          }
          if (ns >= 0) {
            double* gs = t.grad_accum(ns, d);
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * d;
              for (std::size_t j = 0; j < d; ++j) gs[j] += grow[j];
            }
          }
        });
    tp->bind(out, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// sequence conv

Tensor conv1d_seq(const Tensor& seq, const Tensor& kernel, const Tensor& bias) {
  require(seq.ndim() == 2, "conv1d: need 2-D sequence, have " +
                               shape_str(seq));
  require(kernel.ndim() == 3,
          "conv1d: need [s x in x out] kernel, have " + shape_str(kernel));
  const std::size_t n = seq.dim(0), din = seq.dim(1);
  const std::size_t s = kernel.dim(0), kin = kernel.dim(1),
                    dout = kernel.dim(2);
  if (n == 0) throw DomainError("conv1d: empty sequence");
  if (s == 0) throw DomainError("conv1d: window must be at least 1");
  require(kin == din, "conv1d: sequence " + shape_str(seq) +
                          " incompatible with kernel " + shape_str(kernel));
  require(bias.ndim() == 1 && bias.dim(0) == dout,
          "conv1d: bias " + shape_str(bias) + " vs kernel " +
              shape_str(kernel));
  Tensor out({n, dout});
  const double* ps = seq.data();
  const double* pk = kernel.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * dout;
    std::memcpy(orow, bias.data(), dout * sizeof(double));
    for (std::size_t t = 0; t < s && i + t < n; ++t) {
      const double* srow = ps + (i + t) * din;
      const double* kslab = pk + t * din * dout;
      for (std::size_t c = 0; c < din; ++c) {
        const double sv = srow[c];
        if (sv == 0.0) continue;
        const double* krow = kslab + c * dout;
        for (std::size_t o = 0; o < dout; ++o) orow[o] += sv * krow[o];
      }
    }
  }
  if (Tape* tp = common_tape({&seq, &kernel, &bias})) {
    const int ns = seq.node(), nk = kernel.node(), nb = bias.node();
    Store ss = seq.storage(), sk = kernel.storage();
    int node = tp->record(
        n * dout,
        [ns, nk, nb, n, din, s, dout, ss, sk](const double* g, Tape& t) {
          if (ns >= 0) {
            double* gs = t.grad_accum(ns, n * din);
            const double* vk = sk->data();
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * dout;
              for (std::size_t tt = 0; tt < s && i + tt < n; ++tt) {
                double* gsrow = gs + (i + tt) * din;
                const double* kslab = vk + tt * din * dout;
                for (std::size_t c = 0; c < din; ++c) {
                  const double* krow = kslab + c * dout;
                  double acc = 0.0;
                  for (std::size_t o = 0; o < dout; ++o) {
                    acc += grow[o] * krow[o];
                  }
                  gsrow[c] += acc;
                }
              }
            }
          }
          if (nk >= 0) {
            double* gk = t.grad_accum(nk, s * din * dout);
            const double* vs = ss->data();
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * dout;
              for (std::size_t tt = 0; tt < s && i + tt < n; ++tt) {
                const double* srow = vs + (i + tt) * din;
                double* gkslab = gk + tt * din * dout;
                for (std::size_t c = 0; c < din; ++c) {
                  const double sv = srow[c];
                  if (sv == 0.0) continue;
                  double* gkrow = gkslab + c * dout;
                  for (std::size_t o = 0; o < dout; ++o) {
                    gkrow[o] += sv * grow[o];
                  }
                }
              }
            }
          }
          if (nb >= 0) {
            double* gb = t.grad_accum(nb, dout);
            for (std::size_t i = 0; i < n; ++i) {
              const double* grow = g + i * dout;
              for (std::size_t o = 0; o < dout; ++o) gb[o] += grow[o];
            }
          }
        });
    tp->bind(out, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  require(logits.shape() == targets.shape(),
          "bce: logits " + shape_str(logits) + " vs targets " +
              shape_str(targets));
  const std::size_t n = logits.size();
  if (n == 0) throw DomainError("bce: empty logits");
  const double* pz = logits.data();
  const double* pt = targets.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pt[i] >= 0.0 && pt[i] <= 1.0)) {
      throw DomainError("bce: target outside [0,1]: " +
                        std::to_string(pt[i]));
    }
  }
  // max(z,0) - z*t + log1p(exp(-|z|)) is exact and overflow-free.
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = pz[i];
    acc += std::max(z, 0.0) - z * pt[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (Tape* tp = common_tape({&logits, &targets})) {
    if (targets.on_tape()) {
      throw DomainError("bce: targets must be constants");
    }
    const int nz = logits.node();
    Store sz = logits.storage();
    Store st = targets.storage();
    int node = tp->record(1, [nz, n, sz, st](const double* g, Tape& t) {
      double* gz = t.grad_accum(nz, n);
      const double* z = sz->data();
      const double* tv = st->data();
      const double scale_g = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        double sig;
        if (z[i] >= 0.0) {
          sig = 1.0 / (1.0 + std::exp(-z[i]));
        } else {
          const double e = std::exp(z[i]);
          sig = e / (1.0 + e);
        }
        gz[i] += scale_g * (sig - tv[i]);
      }
    });
    tp->bind(out, node);
  }
  return out;
}

}  // namespace ops
}  // namespace qebench
