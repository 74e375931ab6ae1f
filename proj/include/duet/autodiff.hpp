#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "duet/errors.hpp"
#include "duet/skeleton.hpp"

namespace duet::ad {

using Mat = Eigen::MatrixXd;
using Mask = std::vector<std::uint8_t>;

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for its scope (sampling, finite differences).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
};

struct Node {
  Mat value;
  Mat grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void accumulate(const Mat& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

/// Handle to a graph node. Copy is cheap; the graph lives as long as some
/// Var references its sink.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Mat value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  long rows() const { return node_->value.rows(); }
  long cols() const { return node_->value.cols(); }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(Mat value, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.node()->requires_grad;
  if (grad_enabled() && any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

}  // namespace detail

/// Reverse accumulation from a 1x1 loss node.
inline void backward(const Var& loss) {
  require<ShapeMismatch>(loss.rows() == 1 && loss.cols() == 1,
                         "backward needs a scalar node");
  // Topological order by iterative DFS, then reverse sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

// -- elementwise and linear ops ----------------------------------------------

inline Var add(const Var& a, const Var& b) {
  require<ShapeMismatch>(a.rows() == b.rows() && a.cols() == b.cols(), "add shape");
  return detail::make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  require<ShapeMismatch>(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape");
  return detail::make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  require<ShapeMismatch>(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape");
  return detail::make_op(
      a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad)
          self.parents[0]->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
        if (self.parents[1]->requires_grad)
          self.parents[1]->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
      });
}

inline Var scale(const Var& a, double c) {
  return detail::make_op(c * a.value(), {a}, [c](Node& self) {
    self.parents[0]->accumulate(c * self.grad);
  });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::make_op(a.value().array() + c, {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

inline Var matmul(const Var& a, const Var& b, bool trans_a = false,
                  bool trans_b = false) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  long ar = trans_a ? A.cols() : A.rows(), ac = trans_a ? A.rows() : A.cols();
  long br = trans_b ? B.cols() : B.rows();
  require<ShapeMismatch>(ac == br, "matmul inner dims");
  Mat v(ar, trans_b ? B.rows() : B.cols());
  if (!trans_a && !trans_b) v = A * B;
  else if (trans_a && !trans_b) v = A.transpose() * B;
  else if (!trans_a && trans_b) v = A * B.transpose();
  else v = A.transpose() * B.transpose();
  return detail::make_op(std::move(v), {a, b}, [trans_a, trans_b](Node& self) {
    const Mat& G = self.grad;
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Mat dA;
      if (!trans_a && !trans_b) dA = G * B.transpose();
      else if (trans_a && !trans_b) dA = B * G.transpose();
      else if (!trans_a && trans_b) dA = G * B;
      else dA = B.transpose() * G.transpose();
      self.parents[0]->accumulate(dA);
    }
    if (self.parents[1]->requires_grad) {
      Mat dB;
      if (!trans_a && !trans_b) dB = A.transpose() * G;
      else if (trans_a && !trans_b) dB = A * G;
      else if (!trans_a && trans_b) dB = G.transpose() * A;
      else dB = G.transpose() * A.transpose();
      self.parents[1]->accumulate(dB);
    }
  });
}

/// out = x + b broadcast over rows; b is 1 x C.
inline Var bias_add(const Var& x, const Var& b) {
  require<ShapeMismatch>(b.rows() == 1 && b.cols() == x.cols(), "bias shape");
  Mat v = x.value().rowwise() + b.value().row(0);
  return detail::make_op(std::move(v), {x, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

/// out = x .* r broadcast over rows; r is 1 x C.
inline Var row_mul(const Var& x, const Var& r) {
  require<ShapeMismatch>(r.rows() == 1 && r.cols() == x.cols(), "row_mul shape");
  Mat v = x.value().array().rowwise() * r.value().row(0).array();
  return detail::make_op(std::move(v), {x, r}, [](Node& self) {
    const Mat& X = self.parents[0]->value;
    const Mat& R = self.parents[1]->value;
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.grad.array().rowwise() * R.row(0).array());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(self.grad.cwiseProduct(X).colwise().sum());
  });
}

/// out = x .* c broadcast over columns; c is S x 1.
inline Var col_mul(const Var& x, const Var& c) {
  require<ShapeMismatch>(c.cols() == 1 && c.rows() == x.rows(), "col_mul shape");
  Mat v = x.value().array().colwise() * c.value().col(0).array();
  return detail::make_op(std::move(v), {x, c}, [](Node& self) {
    const Mat& X = self.parents[0]->value;
    const Mat& C = self.parents[1]->value;
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.grad.array().colwise() * C.col(0).array());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(self.grad.cwiseProduct(X).rowwise().sum());
  });
}

/// out = s * x where s is a 1x1 variable.
inline Var scalar_mul(const Var& x, const Var& s) {
  require<ShapeMismatch>(s.rows() == 1 && s.cols() == 1, "scalar_mul shape");
  return detail::make_op(s.value()(0, 0) * x.value(), {x, s}, [](Node& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.parents[1]->value(0, 0) * self.grad);
    if (self.parents[1]->requires_grad) {
      Mat ds(1, 1);
      ds(0, 0) = self.grad.cwiseProduct(self.parents[0]->value).sum();
      self.parents[1]->accumulate(ds);
    }
  });
}

inline Var slice_cols(const Var& x, long start, long len) {
  require<ShapeMismatch>(start >= 0 && start + len <= x.cols(), "slice_cols range");
  Mat v = x.value().middleCols(start, len);
  return detail::make_op(std::move(v), {x}, [start, len](Node& self) {
    Mat g = Mat::Zero(self.parents[0]->value.rows(), self.parents[0]->value.cols());
    g.middleCols(start, len) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require<BadArgument>(!parts.empty(), "concat_cols needs parts");
  long rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    require<ShapeMismatch>(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  long at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make_op(std::move(v), parts, [](Node& self) {
    long at = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad.middleCols(at, p->value.cols()));
      at += p->value.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require<BadArgument>(!parts.empty(), "concat_rows needs parts");
  long cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    require<ShapeMismatch>(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  long at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make_op(std::move(v), parts, [](Node& self) {
    long at = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad.middleRows(at, p->value.rows()));
      at += p->value.rows();
    }
  });
}

inline Var transpose(const Var& x) {
  return detail::make_op(x.value().transpose(), {x}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

// -- nonlinearities -----------------------------------------------------------

inline Var silu(const Var& x) {
  Mat s = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  Mat v = x.value().cwiseProduct(s);
  return detail::make_op(std::move(v), {x}, [s](Node& self) {
    const Mat& X = self.parents[0]->value;
    Mat d = s.array() * (1.0 + X.array() * (1.0 - s.array()));
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

inline Var square(const Var& x) {
  return detail::make_op(x.value().array().square(), {x}, [](Node& self) {
    self.parents[0]->accumulate(2.0 * self.grad.cwiseProduct(self.parents[0]->value));
  });
}

inline Var abs(const Var& x) {
  return detail::make_op(x.value().cwiseAbs(), {x}, [](Node& self) {
    Mat sign = self.parents[0]->value.unaryExpr(
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    self.parents[0]->accumulate(self.grad.cwiseProduct(sign));
  });
}

inline Var exp(const Var& x) {
  Mat v = x.value().array().exp();
  return detail::make_op(v, {x}, [v](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(v));
  });
}

// -- normalization, attention -------------------------------------------------

/// Per-row layer normalization (no affine parameters).
inline Var layer_norm_rows(const Var& x, double eps = 1e-5) {
  const Mat& X = x.value();
  const long C = X.cols();
  Mat y(X.rows(), C);
  Eigen::VectorXd inv_std(X.rows());
  for (long r = 0; r < X.rows(); ++r) {
    double mu = X.row(r).mean();
    double var = (X.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    y.row(r) = (X.row(r).array() - mu) * is;
  }
  return detail::make_op(y, {x}, [y, inv_std, C](Node& self) {
    const Mat& G = self.grad;
    Mat dx(G.rows(), C);
    for (long r = 0; r < G.rows(); ++r) {
      double gm = G.row(r).mean();
      double gym = G.row(r).cwiseProduct(y.row(r)).mean();
      dx.row(r) =
          inv_std(r) * (G.row(r).array() - gm - y.row(r).array() * gym);
    }
    self.parents[0]->accumulate(dx);
  });
}

/// Row-wise softmax over the columns flagged valid; masked columns are
/// exactly zero in the output and receive zero gradient.
inline Var softmax_rows_masked(const Var& x, const Mask& col_valid) {
  const Mat& X = x.value();
  require<ShapeMismatch>(static_cast<long>(col_valid.size()) == X.cols(),
                         "softmax mask length");
  long nvalid = 0;
  for (auto m : col_valid) nvalid += m ? 1 : 0;
  require<BadArgument>(nvalid > 0, "softmax needs at least one valid column");
  Mat y = Mat::Zero(X.rows(), X.cols());
  for (long r = 0; r < X.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < X.cols(); ++c)
      if (col_valid[c] && X(r, c) > m) m = X(r, c);
    double s = 0;
    for (long c = 0; c < X.cols(); ++c)
      if (col_valid[c]) {
        y(r, c) = std::exp(X(r, c) - m);
        s += y(r, c);
      }
    for (long c = 0; c < X.cols(); ++c)
      if (col_valid[c]) y(r, c) /= s;
  }
  return detail::make_op(y, {x}, [y, col_valid](Node& self) {
    const Mat& G = self.grad;
    Mat dx = Mat::Zero(G.rows(), G.cols());
    for (long r = 0; r < G.rows(); ++r) {
      double dot = 0;
      for (long c = 0; c < G.cols(); ++c)
        if (col_valid[c]) dot += G(r, c) * y(r, c);
      for (long c = 0; c < G.cols(); ++c)
        if (col_valid[c]) dx(r, c) = y(r, c) * (G(r, c) - dot);
    }
    self.parents[0]->accumulate(dx);
  });
}

inline Var log_softmax_rows(const Var& x) {
  const Mat& X = x.value();
  Mat y(X.rows(), X.cols());
  Mat p(X.rows(), X.cols());
  for (long r = 0; r < X.rows(); ++r) {
    double m = X.row(r).maxCoeff();
    double s = (X.row(r).array() - m).exp().sum();
    y.row(r) = X.row(r).array() - m - std::log(s);
    p.row(r) = y.row(r).array().exp();
  }
  return detail::make_op(y, {x}, [p](Node& self) {
    const Mat& G = self.grad;
    Mat dx(G.rows(), G.cols());
    for (long r = 0; r < G.rows(); ++r)
      dx.row(r) = G.row(r).array() - p.row(r).array() * G.row(r).sum();
    self.parents[0]->accumulate(dx);
  });
}

/// Rows rescaled to unit L2 norm (soft at eps).
inline Var l2_normalize_rows(const Var& x, double eps = 1e-12) {
  const Mat& X = x.value();
  Eigen::VectorXd n(X.rows());
  Mat y(X.rows(), X.cols());
  for (long r = 0; r < X.rows(); ++r) {
    n(r) = std::sqrt(X.row(r).squaredNorm() + eps);
    y.row(r) = X.row(r) / n(r);
  }
  return detail::make_op(y, {x}, [n](Node& self) {
    const Mat& G = self.grad;
    const Mat& X = self.parents[0]->value;
    Mat dx(G.rows(), G.cols());
    for (long r = 0; r < G.rows(); ++r) {
      double d = X.row(r).dot(G.row(r));
      dx.row(r) = G.row(r) / n(r) - X.row(r) * (d / (n(r) * n(r) * n(r)));
    }
    self.parents[0]->accumulate(dx);
  });
}

// -- reductions ---------------------------------------------------------------

inline Var sum_all(const Var& x) {
  Mat v(1, 1);
  v(0, 0) = x.value().sum();
  return detail::make_op(std::move(v), {x}, [](Node& self) {
    self.parents[0]->accumulate(
        Mat::Constant(self.parents[0]->value.rows(), self.parents[0]->value.cols(),
                      self.grad(0, 0)));
  });
}

/// Mean over (valid rows x all columns).
inline Var masked_mean_all(const Var& x, const Mask& row_valid) {
  const Mat& X = x.value();
  require<ShapeMismatch>(static_cast<long>(row_valid.size()) == X.rows(),
                         "row mask length");
  long nvalid = 0;
  for (auto m : row_valid) nvalid += m ? 1 : 0;
  require<BadArgument>(nvalid > 0, "mask admits no rows");
  double total = 0;
  for (long r = 0; r < X.rows(); ++r)
    if (row_valid[r]) total += X.row(r).sum();
  const double denom = static_cast<double>(nvalid) * X.cols();
  Mat v(1, 1);
  v(0, 0) = total / denom;
  return detail::make_op(std::move(v), {x}, [row_valid, denom](Node& self) {
    Mat g = Mat::Zero(self.parents[0]->value.rows(), self.parents[0]->value.cols());
    double coef = self.grad(0, 0) / denom;
    for (long r = 0; r < g.rows(); ++r)
      if (row_valid[r]) g.row(r).setConstant(coef);
    self.parents[0]->accumulate(g);
  });
}

/// Column means over valid rows: 1 x C.
inline Var masked_mean_rows(const Var& x, const Mask& row_valid) {
  const Mat& X = x.value();
  require<ShapeMismatch>(static_cast<long>(row_valid.size()) == X.rows(),
                         "row mask length");
  long nvalid = 0;
  for (auto m : row_valid) nvalid += m ? 1 : 0;
  require<BadArgument>(nvalid > 0, "mask admits no rows");
  Mat v = Mat::Zero(1, X.cols());
  for (long r = 0; r < X.rows(); ++r)
    if (row_valid[r]) v += X.row(r);
  v /= static_cast<double>(nvalid);
  return detail::make_op(std::move(v), {x}, [row_valid, nvalid](Node& self) {
    Mat g = Mat::Zero(self.parents[0]->value.rows(), self.parents[0]->value.cols());
    for (long r = 0; r < g.rows(); ++r)
      if (row_valid[r]) g.row(r) = self.grad.row(0) / static_cast<double>(nvalid);
    self.parents[0]->accumulate(g);
  });
}

/// Mean of the diagonal of a square matrix.
inline Var trace_mean(const Var& x) {
  require<ShapeMismatch>(x.rows() == x.cols(), "trace_mean needs square input");
  Mat v(1, 1);
  v(0, 0) = x.value().diagonal().mean();
  return detail::make_op(std::move(v), {x}, [](Node& self) {
    long n = self.parents[0]->value.rows();
    Mat g = Mat::Zero(n, n);
    g.diagonal().setConstant(self.grad(0, 0) / static_cast<double>(n));
    self.parents[0]->accumulate(g);
  });
}

// -- sequence and geometry ops --------------------------------------------------

/// out.row(0) = 0; out.row(t) = x.row(t) - x.row(t-1).
inline Var temporal_diff(const Var& x) {
  const Mat& X = x.value();
  Mat v = Mat::Zero(X.rows(), X.cols());
  for (long t = 1; t < X.rows(); ++t) v.row(t) = X.row(t) - X.row(t - 1);
  return detail::make_op(std::move(v), {x}, [](Node& self) {
    const Mat& G = self.grad;
    Mat dx = Mat::Zero(G.rows(), G.cols());
    for (long t = 0; t < G.rows(); ++t) {
      if (t >= 1) dx.row(t) += G.row(t);
      if (t + 1 < G.rows()) dx.row(t) -= G.row(t + 1);
    }
    self.parents[0]->accumulate(dx);
  });
}

/// Row-wise dot product: S x 1.
inline Var row_dot(const Var& a, const Var& b) {
  require<ShapeMismatch>(a.rows() == b.rows() && a.cols() == b.cols(),
                         "row_dot shape");
  Mat v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    const Mat& G = self.grad;  // S x 1
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(B.array().colwise() * G.col(0).array());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(A.array().colwise() * G.col(0).array());
  });
}

/// Row-wise cross product of S x 3 inputs.
inline Var cross_rows(const Var& a, const Var& b) {
  require<ShapeMismatch>(a.cols() == 3 && b.cols() == 3 && a.rows() == b.rows(),
                         "cross_rows shape");
  const Mat& A = a.value();
  const Mat& B = b.value();
  Mat v(A.rows(), 3);
  for (long r = 0; r < A.rows(); ++r)
    v.row(r) = Eigen::Vector3d(A.row(r)).cross(Eigen::Vector3d(B.row(r))).transpose();
  return detail::make_op(std::move(v), {a, b}, [](Node& self) {
    const Mat& G = self.grad;
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Mat da(G.rows(), 3);
      for (long r = 0; r < G.rows(); ++r)
        da.row(r) =
            Eigen::Vector3d(B.row(r)).cross(Eigen::Vector3d(G.row(r))).transpose();
      self.parents[0]->accumulate(da);
    }
    if (self.parents[1]->requires_grad) {
      Mat db(G.rows(), 3);
      for (long r = 0; r < G.rows(); ++r)
        db.row(r) =
            Eigen::Vector3d(G.row(r)).cross(Eigen::Vector3d(A.row(r))).transpose();
      self.parents[1]->accumulate(db);
    }
  });
}

/// Distances between every joint of a and every joint of b, per frame.
/// Inputs are T x 3N position blocks; output is T x (N*N) with column
/// i*N + j holding ||a_i - b_j||. Gradient is zero at coincident joints.
inline Var pairwise_distances(const Var& a, const Var& b, int joints) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  require<ShapeMismatch>(A.cols() == 3 * joints && B.cols() == 3 * joints &&
                             A.rows() == B.rows(),
                         "pairwise_distances shape");
  const long T = A.rows();
  Mat v(T, joints * joints);
  for (long t = 0; t < T; ++t)
    for (int i = 0; i < joints; ++i)
      for (int j = 0; j < joints; ++j)
        v(t, i * joints + j) =
            (A.row(t).segment<3>(3 * i) - B.row(t).segment<3>(3 * j)).norm();
  return detail::make_op(std::move(v), {a, b}, [joints, v](Node& self) {
    const Mat& G = self.grad;
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    Mat da = Mat::Zero(A.rows(), A.cols());
    Mat db = Mat::Zero(B.rows(), B.cols());
    for (long t = 0; t < A.rows(); ++t)
      for (int i = 0; i < joints; ++i)
        for (int j = 0; j < joints; ++j) {
          double d = v(t, i * joints + j);
          double g = G(t, i * joints + j);
          if (d < 1e-12 || g == 0.0) continue;
          Eigen::RowVector3d u =
              (A.row(t).segment<3>(3 * i) - B.row(t).segment<3>(3 * j)) * (g / d);
          da.row(t).segment<3>(3 * i) += u;
          db.row(t).segment<3>(3 * j) -= u;
        }
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(da);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(db);
  });
}

/// Per-frame bone lengths ||p_child - p_parent|| for non-root joints:
/// T x (N-1), column j-1 for joint j.
inline Var bone_lengths(const Var& positions, const Skeleton& skeleton) {
  const Mat& P = positions.value();
  const int N = skeleton.joint_count;
  require<ShapeMismatch>(P.cols() == 3 * N, "bone_lengths positions shape");
  Mat v(P.rows(), N - 1);
  for (long t = 0; t < P.rows(); ++t)
    for (int j = 1; j < N; ++j)
      v(t, j - 1) = (P.row(t).segment<3>(3 * j) -
                     P.row(t).segment<3>(3 * skeleton.parent_index[j]))
                        .norm();
  std::vector<int> parents = skeleton.parent_index;
  return detail::make_op(std::move(v), {positions}, [parents, N](Node& self) {
    const Mat& G = self.grad;
    const Mat& P = self.parents[0]->value;
    Mat dp = Mat::Zero(P.rows(), P.cols());
    for (long t = 0; t < P.rows(); ++t)
      for (int j = 1; j < N; ++j) {
        int par = parents[j];
        Eigen::RowVector3d diff =
            P.row(t).segment<3>(3 * j) - P.row(t).segment<3>(3 * par);
        double d = diff.norm();
        double g = G(t, j - 1);
        if (d < 1e-12 || g == 0.0) continue;
        Eigen::RowVector3d u = diff * (g / d);
        dp.row(t).segment<3>(3 * j) += u;
        dp.row(t).segment<3>(3 * par) -= u;
      }
    self.parents[0]->accumulate(dp);
  });
}

}  // namespace duet::ad
