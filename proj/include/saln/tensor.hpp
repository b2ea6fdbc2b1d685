#ifndef SALN_TENSOR_HPP
#define SALN_TENSOR_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "saln/errors.hpp"

namespace saln {

// Shape {} = scalar, {n} = vector, {r,c} = row-major matrix.
using Shape = std::vector<int>;

int shape_numel(const Shape& s);

// Plain dense value. When produced by a Tape operation with tracked inputs,
// `node` points at the tape node so gradients can flow; node == -1 means the
// tensor is an untracked constant.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor scalar(double x);
  static Tensor vec(std::vector<double> v);
  static Tensor matrix(int r, int c, std::vector<double> v);
  static Tensor zeros(Shape s);

  bool tracked() const { return node >= 0; }
  int numel() const { return static_cast<int>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;
  double item() const;  // scalar only
  double at(int i) const { return values[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols() + j]; }
  bool all_finite() const;
};

// Reverse-mode tape. Operations record a backward closure when any input is
// tracked; with only constant inputs they are pure value computations.
// Single-threaded per tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf with requires_grad; registered under `name` for gradient lookup.
  Tensor param(Tensor t, const std::string& name);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor matvec(const Tensor& a, const Tensor& v);
  Tensor dot(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor tanh_map(const Tensor& a);
  Tensor log_floor(const Tensor& a, double eps);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  // v added to every row of m.
  Tensor add_rowvec(const Tensor& m, const Tensor& v);
  // same data, new shape (element count must match).
  Tensor reshape(const Tensor& a, Shape s);
  Tensor row_sum(const Tensor& a);
  Tensor col(const Tensor& a, int j);
  Tensor diag(const Tensor& a);
  Tensor slice_rows(const Tensor& a, int r0, int r1);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor logsumexp_rows(const Tensor& a);
  // softmax over each row (a 1-D input is treated as a single row);
  // temperature must be positive.
  Tensor softmax_rows(const Tensor& a, double temperature);
  // per row: keep the k largest entries (ties broken toward lower index),
  // softmax over them, zero elsewhere.
  Tensor softmax_topk_rows(const Tensor& a, int k);
  // each row scaled to unit l2 norm (1-D input = single row).
  Tensor normalize_rows(const Tensor& a);
  // row i of m multiplied by v[i].
  Tensor scale_rows(const Tensor& m, const Tensor& v);
  // `cos` is a (Bt*n_per)x(Bv*m_per) matrix of word/frame cosines; returns the
  // Bt x Bv matrix of symmetric max-mean block aggregates.
  Tensor block_maxmean(const Tensor& cos, int n_per, int m_per);

  // Reverse sweep from a scalar loss; populates gradients for every
  // registered parameter (zeros, with a debug log, for disconnected ones).
  void backward(const Tensor& loss);

  std::vector<double> grad(const Tensor& t) const;
  const std::vector<std::pair<std::string, int>>& params() const { return params_; }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  using BackFn = std::function<void(Tape&, const std::vector<double>&)>;
  struct Node {
    Shape shape;
    std::vector<double> grad;
    BackFn back;
    std::string name;
  };

  int push(Shape shape, BackFn back, std::string name = {});
  std::vector<double>& grad_buf(int node);

  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
  bool ran_backward_ = false;
};

// --- spec-level operations -------------------------------------------------

// Unit vector in the direction of v; ZeroVector if ||v|| <= 1e-12.
Tensor l2_normalize(Tape& tape, const Tensor& v);
// Cosine similarity of two nonzero vectors, in [-1, 1].
Tensor cosine_sim(Tape& tape, const Tensor& a, const Tensor& b);
// softmax(v / temperature); NonPositiveTemperature if temperature <= 0.
Tensor softmax(Tape& tape, const Tensor& v, double temperature);
// KL(p || q) with a 1e-12 floor inside the logs. Both inputs must sum to 1
// within 1e-6 (NotADistribution otherwise).
Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q);

inline constexpr double kKlFloor = 1e-12;

// Scalar function of a set of parameter tensors, built on the given tape.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Max over parameter coordinates of the relative error between the analytic
// gradient and a central finite difference with the given step.
double grad_check(const LossFn& f, const std::vector<Tensor>& point, double step = 1e-4);

}  // namespace saln

#endif
