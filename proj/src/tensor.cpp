#include "saln/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saln/log.hpp"

namespace saln {

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != static_cast<int>(values.size()))
    fail(ErrCode::ShapeMismatch, "value count does not match shape");
  for (int d : shape)
    if (d < 0) fail(ErrCode::ShapeMismatch, "negative dimension");
}

Tensor Tensor::scalar(double x) { return Tensor({}, {x}); }

Tensor Tensor::vec(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

Tensor Tensor::zeros(Shape s) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)), 0.0);
  return Tensor(std::move(s), std::move(v));
}

int Tensor::rows() const {
  if (rank() != 2) fail(ErrCode::ShapeMismatch, "rows() on non-matrix");
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) fail(ErrCode::ShapeMismatch, "cols() on non-matrix");
  return shape[1];
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrCode::NotScalar, "item() on non-scalar tensor");
  return values[0];
}

bool Tensor::all_finite() const {
  for (double x : values)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) fail(ErrCode::ShapeMismatch, std::string(op) + ": shapes differ");
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double c) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
}

// Indices of the k largest entries of row, ties toward lower index.
std::vector<int> topk_indices(const double* row, int n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int i, int j) {
    if (row[i] != row[j]) return row[i] > row[j];
    return i < j;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

int Tape::push(Shape shape, BackFn back, std::string name) {
  nodes_.push_back(Node{std::move(shape), {}, std::move(back), std::move(name)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(shape_numel(n.shape)), 0.0);
  return n.grad;
}

Tensor Tape::param(Tensor t, const std::string& name) {
  t.node = push(t.shape, nullptr, name);
  params_.emplace_back(name, t.node);
  return t;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  out.node = -1;
  for (int i = 0; i < out.numel(); ++i) out.values[i] += b.values[i];
  if (a.tracked() || b.tracked()) {
    int ia = a.node, ib = b.node;
    out.node = push(out.shape, [ia, ib](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) axpy(t.grad_buf(ia), g, 1.0);
      if (ib >= 0) axpy(t.grad_buf(ib), g, 1.0);
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  out.node = -1;
  for (int i = 0; i < out.numel(); ++i) out.values[i] -= b.values[i];
  if (a.tracked() || b.tracked()) {
    int ia = a.node, ib = b.node;
    out.node = push(out.shape, [ia, ib](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) axpy(t.grad_buf(ia), g, 1.0);
      if (ib >= 0) axpy(t.grad_buf(ib), g, -1.0);
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a;
  out.node = -1;
  for (int i = 0; i < out.numel(); ++i) out.values[i] *= b.values[i];
  if (a.tracked() || b.tracked()) {
    int ia = a.node, ib = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = push(out.shape, [ia, ib, av, bv](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.values) x *= c;
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, c](Tape& t, const std::vector<double>& g) {
      axpy(t.grad_buf(ia), g, c);
    });
  }
  return out;
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.values) x += c;
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia](Tape& t, const std::vector<double>& g) {
      axpy(t.grad_buf(ia), g, 1.0);
    });
  }
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    fail(ErrCode::ShapeMismatch, "matmul: incompatible shapes");
  const int r = a.rows(), k = a.cols(), c = b.cols();
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    for (int l = 0; l < k; ++l) {
      const double ail = a.values[static_cast<std::size_t>(i) * k + l];
      if (ail == 0.0) continue;
      const double* brow = &b.values[static_cast<std::size_t>(l) * c];
      double* orow = &out.values[static_cast<std::size_t>(i) * c];
      for (int j = 0; j < c; ++j) orow[j] += ail * brow[j];
    }
  if (a.tracked() || b.tracked()) {
    int ia = a.node, ib = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = push(out.shape, [ia, ib, av, bv, r, k, c](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {  // gA += G * B^T
        auto& ga = t.grad_buf(ia);
        for (int i = 0; i < r; ++i)
          for (int l = 0; l < k; ++l) {
            double s = 0.0;
            const double* grow = &g[static_cast<std::size_t>(i) * c];
            const double* brow = &bv[static_cast<std::size_t>(l) * c];
            for (int j = 0; j < c; ++j) s += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * k + l] += s;
          }
      }
      if (ib >= 0) {  // gB += A^T * G
        auto& gb = t.grad_buf(ib);
        for (int l = 0; l < k; ++l)
          for (int i = 0; i < r; ++i) {
            const double ail = av[static_cast<std::size_t>(i) * k + l];
            if (ail == 0.0) continue;
            const double* grow = &g[static_cast<std::size_t>(i) * c];
            double* gbrow = &gb[static_cast<std::size_t>(l) * c];
            for (int j = 0; j < c; ++j) gbrow[j] += ail * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor Tape::matvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.cols() != v.shape[0])
    fail(ErrCode::ShapeMismatch, "matvec: incompatible shapes");
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j) * v.values[j];
    out.values[i] = s;
  }
  if (a.tracked() || v.tracked()) {
    int ia = a.node, iv = v.node;
    std::vector<double> av = a.values, vv = v.values;
    out.node = push(out.shape, [ia, iv, av, vv, r, c](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += g[i] * vv[j];
      }
      if (iv >= 0) {
        auto& gv = t.grad_buf(iv);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gv[j] += g[i] * av[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return out;
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
    fail(ErrCode::ShapeMismatch, "dot: incompatible shapes");
  double s = 0.0;
  for (int i = 0; i < a.numel(); ++i) s += a.values[i] * b.values[i];
  Tensor out = Tensor::scalar(s);
  if (a.tracked() || b.tracked()) {
    int ia = a.node, ib = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = push(out.shape, [ia, ib, av, bv](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) axpy(t.grad_buf(ia), bv, g[0]);
      if (ib >= 0) axpy(t.grad_buf(ib), av, g[0]);
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.values[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, r, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          ga[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    });
  }
  return out;
}

Tensor Tape::tanh_map(const Tensor& a) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.values) x = std::tanh(x);
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> yv = out.values;
    out.node = push(out.shape, [ia, yv](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return out;
}

Tensor Tape::log_floor(const Tensor& a, double eps) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.values) x = std::log(std::max(x, eps));
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> av = a.values;
    out.node = push(out.shape, [ia, av, eps](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > eps) ga[i] += g[i] / av[i];
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values) s += x;
  Tensor out = Tensor::scalar(s);
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (auto& x : ga) x += g[0];
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& a) { return scale(sum(a), 1.0 / a.numel()); }

Tensor Tape::add_rowvec(const Tensor& m, const Tensor& v) {
  const int r = m.rows(), c = m.cols();
  if (v.rank() != 1 || v.numel() != c) fail(ErrCode::ShapeMismatch, "add_rowvec: bad vector length");
  Tensor out = m;
  out.node = -1;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.values[static_cast<std::size_t>(i) * c + j] += v.values[j];
  if (m.tracked() || v.tracked()) {
    int im = m.node, iv = v.node;
    out.node = push(out.shape, [im, iv, r, c](Tape& t, const std::vector<double>& g) {
      if (im >= 0) axpy(t.grad_buf(im), g, 1.0);
      if (iv >= 0) {
        auto& gv = t.grad_buf(iv);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gv[j] += g[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return out;
}

Tensor Tape::reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.numel()) fail(ErrCode::ShapeMismatch, "reshape: element count mismatch");
  Tensor out(std::move(s), a.values);
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia](Tape& t, const std::vector<double>& g) {
      axpy(t.grad_buf(ia), g, 1.0);
    });
  }
  return out;
}

Tensor Tape::row_sum(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j);
    out.values[i] = s;
  }
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, r, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += g[i];
    });
  }
  return out;
}

Tensor Tape::col(const Tensor& a, int j) {
  const int r = a.rows(), c = a.cols();
  if (j < 0 || j >= c) fail(ErrCode::ShapeMismatch, "col: index out of range");
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) out.values[i] = a.at(i, j);
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, r, c, j](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i) ga[static_cast<std::size_t>(i) * c + j] += g[i];
    });
  }
  return out;
}

Tensor Tape::diag(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) fail(ErrCode::ShapeMismatch, "diag: matrix not square");
  const int n = a.rows();
  Tensor out = Tensor::zeros({n});
  for (int i = 0; i < n; ++i) out.values[i] = a.at(i, i);
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < n; ++i) ga[static_cast<std::size_t>(i) * n + i] += g[i];
    });
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& a, int r0, int r1) {
  const int r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 > r || r0 >= r1) fail(ErrCode::ShapeMismatch, "slice_rows: bad range");
  Tensor out = Tensor::zeros({r1 - r0, c});
  std::copy(a.values.begin() + static_cast<std::ptrdiff_t>(r0) * c,
            a.values.begin() + static_cast<std::ptrdiff_t>(r1) * c, out.values.begin());
  if (a.tracked()) {
    int ia = a.node;
    out.node = push(out.shape, [ia, r0, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(r0) * c + i] += g[i];
    });
  }
  return out;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrCode::EmptySequence, "concat_rows: no parts");
  const int c = parts[0].cols();
  int r = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.cols() != c) fail(ErrCode::ShapeMismatch, "concat_rows: column mismatch");
    r += p.rows();
    any_tracked = any_tracked || p.tracked();
  }
  Tensor out = Tensor::zeros({r, c});
  int off = 0;
  for (const auto& p : parts) {
    std::copy(p.values.begin(), p.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(off) * c);
    off += p.rows();
  }
  if (any_tracked) {
    std::vector<int> ids, row_off;
    int o = 0;
    for (const auto& p : parts) {
      ids.push_back(p.node);
      row_off.push_back(o);
      o += p.rows();
    }
    std::vector<int> nrows;
    for (const auto& p : parts) nrows.push_back(p.rows());
    out.node = push(out.shape, [ids, row_off, nrows, c](Tape& t, const std::vector<double>& g) {
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] < 0) continue;
        auto& gp = t.grad_buf(ids[p]);
        const std::size_t base = static_cast<std::size_t>(row_off[p]) * c;
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[base + i];
      }
    });
  }
  return out;
}

Tensor Tape::logsumexp_rows(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    const double* row = &a.values[static_cast<std::size_t>(i) * c];
    double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(row[j] - m);
    out.values[i] = m + std::log(s);
  }
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> av = a.values, lse = out.values;
    out.node = push(out.shape, [ia, av, lse, r, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + j;
          ga[idx] += g[i] * std::exp(av[idx] - lse[i]);
        }
    });
  }
  return out;
}

namespace {

// shared row-softmax kernel over a contiguous row, writing probabilities.
void softmax_row(const double* x, double* y, int n, double inv_temp) {
  double m = x[0] * inv_temp;
  for (int j = 1; j < n; ++j) m = std::max(m, x[j] * inv_temp);
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] * inv_temp - m);
    s += y[j];
  }
  for (int j = 0; j < n; ++j) y[j] /= s;
}

}  // namespace

Tensor Tape::softmax_rows(const Tensor& a, double temperature) {
  if (temperature <= 0.0) fail(ErrCode::NonPositiveTemperature, "softmax temperature must be > 0");
  const bool vec_in = a.rank() == 1;
  const int r = vec_in ? 1 : a.rows();
  const int c = vec_in ? a.numel() : a.cols();
  if (c == 0 || a.numel() == 0) fail(ErrCode::EmptySequence, "softmax of empty input");
  Tensor out = a;
  out.node = -1;
  const double inv_temp = 1.0 / temperature;
  for (int i = 0; i < r; ++i)
    softmax_row(&a.values[static_cast<std::size_t>(i) * c], &out.values[static_cast<std::size_t>(i) * c], c, inv_temp);
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> yv = out.values;
    out.node = push(out.shape, [ia, yv, r, c, inv_temp](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double gy = 0.0;
        for (int j = 0; j < c; ++j) gy += g[base + j] * yv[base + j];
        for (int j = 0; j < c; ++j)
          ga[base + j] += inv_temp * yv[base + j] * (g[base + j] - gy);
      }
    });
  }
  return out;
}

Tensor Tape::softmax_topk_rows(const Tensor& a, int k) {
  const bool vec_in = a.rank() == 1;
  const int r = vec_in ? 1 : a.rows();
  const int c = vec_in ? a.numel() : a.cols();
  if (k < 1) fail(ErrCode::InvalidConfig, "top-k needs k >= 1");
  if (k > c) fail(ErrCode::KTooLarge, "top-k selection exceeds entry count");
  Tensor out = a;
  out.node = -1;
  std::fill(out.values.begin(), out.values.end(), 0.0);
  std::vector<int> selected(static_cast<std::size_t>(r) * k);
  for (int i = 0; i < r; ++i) {
    const double* row = &a.values[static_cast<std::size_t>(i) * c];
    auto idx = topk_indices(row, c, k);
    double m = row[idx[0]];
    double s = 0.0;
    std::vector<double> e(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      e[j] = std::exp(row[idx[j]] - m);
      s += e[j];
    }
    for (int j = 0; j < k; ++j) {
      out.values[static_cast<std::size_t>(i) * c + idx[j]] = e[j] / s;
      selected[static_cast<std::size_t>(i) * k + j] = idx[j];
    }
  }
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> yv = out.values;
    out.node = push(out.shape, [ia, yv, selected, r, c, k](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double gy = 0.0;
        for (int j = 0; j < k; ++j) {
          const int s = selected[static_cast<std::size_t>(i) * k + j];
          gy += g[base + s] * yv[base + s];
        }
        for (int j = 0; j < k; ++j) {
          const int s = selected[static_cast<std::size_t>(i) * k + j];
          ga[base + s] += yv[base + s] * (g[base + s] - gy);
        }
      }
    });
  }
  return out;
}

Tensor Tape::normalize_rows(const Tensor& a) {
  const bool vec_in = a.rank() == 1;
  const int r = vec_in ? 1 : a.rows();
  const int c = vec_in ? a.numel() : a.cols();
  Tensor out = a;
  out.node = -1;
  std::vector<double> norms(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    const double* row = &a.values[static_cast<std::size_t>(i) * c];
    for (int j = 0; j < c; ++j) s += row[j] * row[j];
    const double nrm = std::sqrt(s);
    if (nrm <= 1e-12) fail(ErrCode::ZeroVector, "cannot normalize a zero vector");
    norms[i] = nrm;
    for (int j = 0; j < c; ++j) out.values[static_cast<std::size_t>(i) * c + j] = row[j] / nrm;
  }
  if (a.tracked()) {
    int ia = a.node;
    std::vector<double> yv = out.values;
    out.node = push(out.shape, [ia, yv, norms, r, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double gy = 0.0;
        for (int j = 0; j < c; ++j) gy += g[base + j] * yv[base + j];
        for (int j = 0; j < c; ++j)
          ga[base + j] += (g[base + j] - gy * yv[base + j]) / norms[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale_rows(const Tensor& m, const Tensor& v) {
  const int r = m.rows(), c = m.cols();
  if (v.rank() != 1 || v.numel() != r) fail(ErrCode::ShapeMismatch, "scale_rows: bad scale vector");
  Tensor out = m;
  out.node = -1;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.values[static_cast<std::size_t>(i) * c + j] *= v.values[i];
  if (m.tracked() || v.tracked()) {
    int im = m.node, iv = v.node;
    std::vector<double> mv = m.values, vv = v.values;
    out.node = push(out.shape, [im, iv, mv, vv, r, c](Tape& t, const std::vector<double>& g) {
      if (im >= 0) {
        auto& gm = t.grad_buf(im);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + j;
            gm[idx] += g[idx] * vv[i];
          }
      }
      if (iv >= 0) {
        auto& gv = t.grad_buf(iv);
        for (int i = 0; i < r; ++i) {
          double s = 0.0;
          for (int j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + j;
            s += g[idx] * mv[idx];
          }
          gv[i] += s;
        }
      }
    });
  }
  return out;
}

Tensor Tape::block_maxmean(const Tensor& cos, int n_per, int m_per) {
  const int rows = cos.rows(), cols = cos.cols();
  if (n_per < 1 || m_per < 1 || rows % n_per != 0 || cols % m_per != 0)
    fail(ErrCode::ShapeMismatch, "block_maxmean: block sizes do not divide matrix");
  const int bt = rows / n_per, bv = cols / m_per;
  Tensor out = Tensor::zeros({bt, bv});
  // argmax frame per word and argmax word per frame, per block
  std::vector<int> am_w(static_cast<std::size_t>(bt) * bv * n_per);
  std::vector<int> am_f(static_cast<std::size_t>(bt) * bv * m_per);
  for (int i = 0; i < bt; ++i)
    for (int j = 0; j < bv; ++j) {
      double word_term = 0.0;
      for (int n = 0; n < n_per; ++n) {
        const double* row = &cos.values[static_cast<std::size_t>(i * n_per + n) * cols + j * m_per];
        int best = 0;
        for (int m = 1; m < m_per; ++m)
          if (row[m] > row[best]) best = m;
        am_w[(static_cast<std::size_t>(i) * bv + j) * n_per + n] = best;
        word_term += row[best];
      }
      double frame_term = 0.0;
      for (int m = 0; m < m_per; ++m) {
        int best = 0;
        double bestv = cos.at(i * n_per, j * m_per + m);
        for (int n = 1; n < n_per; ++n) {
          const double v = cos.at(i * n_per + n, j * m_per + m);
          if (v > bestv) {
            bestv = v;
            best = n;
          }
        }
        am_f[(static_cast<std::size_t>(i) * bv + j) * m_per + m] = best;
        frame_term += bestv;
      }
      out.values[static_cast<std::size_t>(i) * bv + j] =
          0.5 * (word_term / n_per + frame_term / m_per);
    }
  if (cos.tracked()) {
    int ic = cos.node;
    out.node = push(out.shape, [ic, am_w, am_f, bt, bv, n_per, m_per, cols](
                                   Tape& t, const std::vector<double>& g) {
      auto& gc = t.grad_buf(ic);
      for (int i = 0; i < bt; ++i)
        for (int j = 0; j < bv; ++j) {
          const double go = g[static_cast<std::size_t>(i) * bv + j];
          if (go == 0.0) continue;
          for (int n = 0; n < n_per; ++n) {
            const int m = am_w[(static_cast<std::size_t>(i) * bv + j) * n_per + n];
            gc[static_cast<std::size_t>(i * n_per + n) * cols + j * m_per + m] +=
                go * 0.5 / n_per;
          }
          for (int m = 0; m < m_per; ++m) {
            const int n = am_f[(static_cast<std::size_t>(i) * bv + j) * m_per + m];
            gc[static_cast<std::size_t>(i * n_per + n) * cols + j * m_per + m] +=
                go * 0.5 / m_per;
          }
        }
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) fail(ErrCode::NotScalar, "backward expects a scalar loss");
  if (loss.tracked()) {
    grad_buf(loss.node) = {1.0};
    for (int id = loss.node; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, n.grad);
    }
  }
  for (const auto& [name, id] : params_) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) {
      n.grad.assign(static_cast<std::size_t>(shape_numel(n.shape)), 0.0);
      log_debug("backward: parameter '" + name + "' is disconnected from the loss; gradient set to zero");
    }
  }
  ran_backward_ = true;
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (!t.tracked()) fail(ErrCode::ShapeMismatch, "grad of untracked tensor");
  const Node& n = nodes_[static_cast<std::size_t>(t.node)];
  if (n.grad.empty()) return std::vector<double>(static_cast<std::size_t>(shape_numel(n.shape)), 0.0);
  return n.grad;
}

// --- spec-level operations -------------------------------------------------

Tensor l2_normalize(Tape& tape, const Tensor& v) { return tape.normalize_rows(v); }

Tensor cosine_sim(Tape& tape, const Tensor& a, const Tensor& b) {
  return tape.dot(tape.normalize_rows(a), tape.normalize_rows(b));
}

Tensor softmax(Tape& tape, const Tensor& v, double temperature) {
  return tape.softmax_rows(v, temperature);
}

Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q) {
  check_same_shape(p, q, "kl_divergence");
  auto check_sum = [](const Tensor& t, const char* which) {
    double s = 0.0;
    for (double x : t.values) s += x;
    if (std::abs(s - 1.0) > 1e-6)
      fail(ErrCode::NotADistribution, std::string(which) + " does not sum to 1");
  };
  check_sum(p, "p");
  check_sum(q, "q");
  Tensor log_ratio = tape.sub(tape.log_floor(p, kKlFloor), tape.log_floor(q, kKlFloor));
  return tape.sum(tape.mul(p, log_ratio));
}

double grad_check(const LossFn& f, const std::vector<Tensor>& point, double step) {
  if (step < 1e-6 || step > 1e-3) fail(ErrCode::InvalidConfig, "grad_check step outside [1e-6, 1e-3]");
  Tape tape;
  std::vector<Tensor> params;
  params.reserve(point.size());
  for (std::size_t i = 0; i < point.size(); ++i)
    params.push_back(tape.param(point[i], "p" + std::to_string(i)));
  Tensor loss = f(tape, params);
  if (loss.numel() != 1) fail(ErrCode::NotScalar, "grad_check function must be scalar");
  if (!std::isfinite(loss.item())) fail(ErrCode::NonFiniteFunctionValue, "function value not finite");
  tape.backward(loss);

  auto eval = [&f](const std::vector<Tensor>& pts) {
    Tape scratch;
    const double v = f(scratch, pts).item();
    if (!std::isfinite(v)) fail(ErrCode::NonFiniteFunctionValue, "function value not finite");
    return v;
  };

  double max_rel = 0.0;
  std::vector<Tensor> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const std::vector<double> analytic = tape.grad(params[i]);
    for (int j = 0; j < point[i].numel(); ++j) {
      const double orig = probe[i].values[j];
      probe[i].values[j] = orig + step;
      const double fp = eval(probe);
      probe[i].values[j] = orig - step;
      const double fm = eval(probe);
      probe[i].values[j] = orig;
      const double cd = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[j]), std::abs(cd), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic[j] - cd) / denom);
    }
  }
  return max_rel;
}

}  // namespace saln
