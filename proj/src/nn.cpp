#include "sali/nn.hpp"

#include <cmath>
#include <memory>

namespace sali::nn {

namespace {
constexpr double kLnEps = 1e-5;

void check_finite_mat(const Mat& m, const std::string& what) {
  if (!m.allFinite()) fail(ErrorKind::Numeric, "non-finite values in " + what);
}
}  // namespace

Tensor& ParamStore::add(const std::string& name, int rows, int cols) {
  if (tensors_.count(name)) fail(ErrorKind::Config, "duplicate tensor " + name);
  Tensor t;
  t.value = Mat::Zero(rows, cols);
  t.grad = Mat::Zero(rows, cols);
  return tensors_[name] = std::move(t);
}

Tensor& ParamStore::add_uniform(const std::string& name, int rows, int cols, Rng& rng) {
  Tensor& t = add(name, rows, cols);
  double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t.value(i, j) = rng.uniform(-bound, bound);
  return t;
}

Tensor& ParamStore::add_constant(const std::string& name, int rows, int cols, double v) {
  Tensor& t = add(name, rows, cols);
  t.value.setConstant(v);
  return t;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::Lookup, "unknown tensor " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::Lookup, "unknown tensor " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : tensors_) t.grad.setZero();
}

void ParamStore::sgd_step(double lr) {
  for (auto& [name, t] : tensors_) t.value -= lr * t.grad;
}

void ParamStore::scale_grads(double s) {
  for (auto& [name, t] : tensors_) t.grad *= s;
}

bool ParamStore::grads_finite() const {
  for (const auto& [name, t] : tensors_)
    if (!t.grad.allFinite()) return false;
  return true;
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors_) n += static_cast<size_t>(t.value.size());
  return n;
}

// ---------------------------------------------------------------------------

Var Tape::push(Mat val) {
  Node n;
  n.grad = Mat::Zero(val.rows(), val.cols());
  n.val = std::move(val);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_back(Var v, std::function<void(Tape&)> fn) {
  nodes_[v.i].back = std::move(fn);
}

Var Tape::constant(Mat m) { return push(std::move(m)); }

Var Tape::param(ParamStore& ps, const std::string& name) {
  Tensor& t = ps.at(name);
  Var v = push(t.value);
  leaves_.push_back({v.i, &t});
  return v;
}

void Tape::backward(Var root) {
  if (!root.valid() || nodes_[root.i].val.size() != 1)
    fail(ErrorKind::Shape, "backward requires a 1x1 root");
  nodes_[root.i].grad(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this);
  for (auto& [idx, tensor] : leaves_) tensor->grad += nodes_[idx].grad;
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Tape& t, Var a, Var b) {
  if (t.val(a).cols() != t.val(b).rows()) fail(ErrorKind::Shape, "matmul shape mismatch");
  Var out = t.push(t.val(a) * t.val(b));
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out) * tp.val(b).transpose();
    tp.grad(b) += tp.val(a).transpose() * tp.grad(out);
  });
  return out;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  if (t.val(a).cols() != t.val(b).cols()) fail(ErrorKind::Shape, "matmul_nt shape mismatch");
  Var out = t.push(t.val(a) * t.val(b).transpose());
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out) * tp.val(b);
    tp.grad(b) += tp.grad(out).transpose() * tp.val(a);
  });
  return out;
}

Var add(Tape& t, Var a, Var b) {
  if (t.val(a).rows() != t.val(b).rows() || t.val(a).cols() != t.val(b).cols())
    fail(ErrorKind::Shape, "add shape mismatch");
  Var out = t.push(t.val(a) + t.val(b));
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out);
    tp.grad(b) += tp.grad(out);
  });
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  Var out = t.push(t.val(a) - t.val(b));
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out);
    tp.grad(b) -= tp.grad(out);
  });
  return out;
}

Var add_rowvec(Tape& t, Var a, Var b) {
  if (t.val(b).rows() != 1 || t.val(b).cols() != t.val(a).cols())
    fail(ErrorKind::Shape, "add_rowvec expects a 1 x cols bias");
  Mat out = t.val(a);
  out.rowwise() += t.val(b).row(0);
  Var v = t.push(std::move(out));
  t.set_back(v, [a, b, v](Tape& tp) {
    tp.grad(a) += tp.grad(v);
    tp.grad(b) += tp.grad(v).colwise().sum();
  });
  return v;
}

Var hadamard(Tape& t, Var a, Var b) {
  Var out = t.push(t.val(a).cwiseProduct(t.val(b)));
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.val(b).cwiseProduct(tp.grad(out));
    tp.grad(b) += tp.val(a).cwiseProduct(tp.grad(out));
  });
  return out;
}

Var scale(Tape& t, Var a, double c) {
  Var out = t.push(c * t.val(a));
  t.set_back(out, [a, c, out](Tape& tp) { tp.grad(a) += c * tp.grad(out); });
  return out;
}

Var scalar_mul(Tape& t, Var a, Var s) {
  if (t.val(s).size() != 1) fail(ErrorKind::Shape, "scalar_mul expects a 1x1 scalar");
  Var out = t.push(t.val(s)(0, 0) * t.val(a));
  t.set_back(out, [a, s, out](Tape& tp) {
    tp.grad(a) += tp.val(s)(0, 0) * tp.grad(out);
    tp.grad(s)(0, 0) += tp.val(a).cwiseProduct(tp.grad(out)).sum();
  });
  return out;
}

Var transpose(Tape& t, Var a) {
  Var out = t.push(t.val(a).transpose());
  t.set_back(out, [a, out](Tape& tp) { tp.grad(a) += tp.grad(out).transpose(); });
  return out;
}

Var softmax_rows(Tape& t, Var a) {
  Mat p = t.val(a);
  for (int r = 0; r < p.rows(); ++r) {
    double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  Var out = t.push(std::move(p));
  t.set_back(out, [a, out](Tape& tp) {
    const Mat& pv = tp.val(out);
    const Mat& g = tp.grad(out);
    Mat da(pv.rows(), pv.cols());
    for (int r = 0; r < pv.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(pv.row(r)).sum();
      da.row(r) = pv.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    tp.grad(a) += da;
  });
  return out;
}

Var tanh_op(Tape& t, Var a) {
  Var out = t.push(t.val(a).array().tanh().matrix());
  t.set_back(out, [a, out](Tape& tp) {
    tp.grad(a) += ((1.0 - tp.val(out).array().square()) * tp.grad(out).array()).matrix();
  });
  return out;
}

Var sigmoid_op(Tape& t, Var a) {
  Mat y = (1.0 / (1.0 + (-t.val(a).array()).exp())).matrix();
  Var out = t.push(std::move(y));
  t.set_back(out, [a, out](Tape& tp) {
    const auto& y2 = tp.val(out).array();
    tp.grad(a) += (y2 * (1.0 - y2) * tp.grad(out).array()).matrix();
  });
  return out;
}

Var relu_op(Tape& t, Var a) {
  Var out = t.push(t.val(a).cwiseMax(0.0));
  t.set_back(out, [a, out](Tape& tp) {
    tp.grad(a) += (tp.val(a).array() > 0.0).cast<double>().matrix().cwiseProduct(tp.grad(out));
  });
  return out;
}

Var clamp_op(Tape& t, Var a, double lo, double hi) {
  Var out = t.push(t.val(a).cwiseMax(lo).cwiseMin(hi));
  t.set_back(out, [a, lo, hi, out](Tape& tp) {
    const auto& x = tp.val(a).array();
    tp.grad(a) +=
        ((x > lo && x < hi).cast<double>() * tp.grad(out).array()).matrix();
  });
  return out;
}

Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias) {
  const Mat& x = t.val(a);
  int rows = static_cast<int>(x.rows());
  int cols = static_cast<int>(x.cols());
  if (t.val(gain).cols() != cols || t.val(bias).cols() != cols)
    fail(ErrorKind::Shape, "layer_norm gain/bias width mismatch");
  auto xhat = std::make_shared<Mat>(rows, cols);
  auto sigma = std::make_shared<Eigen::VectorXd>(rows);
  Mat out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double sd = std::sqrt(var + kLnEps);
    (*sigma)(r) = sd;
    xhat->row(r) = (x.row(r).array() - mu) / sd;
    out.row(r) =
        xhat->row(r).cwiseProduct(t.val(gain).row(0)) + t.val(bias).row(0);
  }
  Var v = t.push(std::move(out));
  t.set_back(v, [a, gain, bias, v, xhat, sigma](Tape& tp) {
    const Mat& g = tp.grad(v);
    int rows = static_cast<int>(g.rows());
    int cols = static_cast<int>(g.cols());
    for (int r = 0; r < rows; ++r) {
      Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(tp.val(gain).row(0));
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
      tp.grad(a).row(r) +=
          (dxhat.array() - m1 - xhat->row(r).array() * m2).matrix() / (*sigma)(r);
      tp.grad(gain).row(0) += g.row(r).cwiseProduct(xhat->row(r));
      tp.grad(bias).row(0) += g.row(r);
    }
    (void)cols;
  });
  return v;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat_cols of nothing");
  int rows = static_cast<int>(t.val(parts[0]).rows());
  int cols = 0;
  for (Var p : parts) cols += static_cast<int>(t.val(p).cols());
  Mat out(rows, cols);
  int at = 0;
  std::vector<int> offsets;
  for (Var p : parts) {
    offsets.push_back(at);
    out.middleCols(at, t.val(p).cols()) = t.val(p);
    at += static_cast<int>(t.val(p).cols());
  }
  Var v = t.push(std::move(out));
  t.set_back(v, [parts, offsets, v](Tape& tp) {
    for (size_t k = 0; k < parts.size(); ++k) {
      int w = static_cast<int>(tp.val(parts[k]).cols());
      tp.grad(parts[k]) += tp.grad(v).middleCols(offsets[k], w);
    }
  });
  return v;
}

Var slice_cols(Tape& t, Var a, int col0, int ncols) {
  Var out = t.push(t.val(a).middleCols(col0, ncols));
  t.set_back(out, [a, col0, ncols, out](Tape& tp) {
    tp.grad(a).middleCols(col0, ncols) += tp.grad(out);
  });
  return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat_rows of nothing");
  int cols = static_cast<int>(t.val(parts[0]).cols());
  int rows = 0;
  for (Var p : parts) rows += static_cast<int>(t.val(p).rows());
  Mat out(rows, cols);
  int at = 0;
  std::vector<int> offsets;
  for (Var p : parts) {
    offsets.push_back(at);
    out.middleRows(at, t.val(p).rows()) = t.val(p);
    at += static_cast<int>(t.val(p).rows());
  }
  Var v = t.push(std::move(out));
  t.set_back(v, [parts, offsets, v](Tape& tp) {
    for (size_t k = 0; k < parts.size(); ++k) {
      int h = static_cast<int>(tp.val(parts[k]).rows());
      tp.grad(parts[k]) += tp.grad(v).middleRows(offsets[k], h);
    }
  });
  return v;
}

Var select_rows(Tape& t, Var a, std::vector<int> rows) {
  Mat out(static_cast<int>(rows.size()), t.val(a).cols());
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= t.val(a).rows())
      fail(ErrorKind::Shape, "select_rows index out of range");
    out.row(static_cast<int>(k)) = t.val(a).row(rows[k]);
  }
  Var v = t.push(std::move(out));
  t.set_back(v, [a, rows, v](Tape& tp) {
    for (size_t k = 0; k < rows.size(); ++k)
      tp.grad(a).row(rows[k]) += tp.grad(v).row(static_cast<int>(k));
  });
  return v;
}

Var mean_rows(Tape& t, Var a) {
  int m = static_cast<int>(t.val(a).rows());
  Var out = t.push(t.val(a).colwise().mean());
  t.set_back(out, [a, m, out](Tape& tp) {
    tp.grad(a) += tp.grad(out).replicate(m, 1) / static_cast<double>(m);
  });
  return out;
}

Var gather_cells(Tape& t, Var table, const Eigen::MatrixXi& idx) {
  if (t.val(table).rows() != 1) fail(ErrorKind::Shape, "gather table must be 1 x K");
  Mat out(idx.rows(), idx.cols());
  for (int i = 0; i < idx.rows(); ++i)
    for (int j = 0; j < idx.cols(); ++j) {
      if (idx(i, j) < 0 || idx(i, j) >= t.val(table).cols())
        fail(ErrorKind::Shape, "gather index out of range");
      out(i, j) = t.val(table)(0, idx(i, j));
    }
  Var v = t.push(std::move(out));
  t.set_back(v, [table, idx, v](Tape& tp) {
    for (int i = 0; i < idx.rows(); ++i)
      for (int j = 0; j < idx.cols(); ++j)
        tp.grad(table)(0, idx(i, j)) += tp.grad(v)(i, j);
  });
  return v;
}

namespace {
double logsumexp_row(const Mat& s) {
  double m = s.maxCoeff();
  return m + std::log((s.array() - m).exp().sum());
}

Mat softmax_row(const Mat& s) {
  double m = s.maxCoeff();
  Mat p = (s.array() - m).exp().matrix();
  return p / p.sum();
}
}  // namespace

Var cross_entropy_logits(Tape& t, Var s, int target) {
  const Mat& sv = t.val(s);
  if (sv.rows() != 1) fail(ErrorKind::Shape, "cross_entropy expects 1 x k logits");
  if (target < 0 || target >= sv.cols())
    fail(ErrorKind::Supervision, "target outside candidate set");
  Mat loss(1, 1);
  loss(0, 0) = logsumexp_row(sv) - sv(0, target);
  Var v = t.push(std::move(loss));
  t.set_back(v, [s, target, v](Tape& tp) {
    Mat p = softmax_row(tp.val(s));
    p(0, target) -= 1.0;
    tp.grad(s) += tp.grad(v)(0, 0) * p;
  });
  return v;
}

Var cross_entropy_logits_dist(Tape& t, Var s, Mat gt) {
  const Mat& sv = t.val(s);
  if (sv.rows() != 1 || gt.rows() != 1 || gt.cols() != sv.cols())
    fail(ErrorKind::Shape, "cross_entropy_dist shape mismatch");
  double gsum = gt.sum();
  Mat loss(1, 1);
  loss(0, 0) = gsum * logsumexp_row(sv) - gt.cwiseProduct(sv).sum();
  Var v = t.push(std::move(loss));
  t.set_back(v, [s, gt, gsum, v](Tape& tp) {
    Mat p = softmax_row(tp.val(s));
    tp.grad(s) += tp.grad(v)(0, 0) * (gsum * p - gt);
  });
  return v;
}

Var cross_entropy_rows(Tape& t, Var s, std::vector<int> targets) {
  const Mat& sv = t.val(s);
  if (static_cast<size_t>(sv.rows()) != targets.size())
    fail(ErrorKind::Shape, "cross_entropy_rows target count mismatch");
  double total = 0.0;
  for (int r = 0; r < sv.rows(); ++r) {
    if (targets[r] < 0 || targets[r] >= sv.cols())
      fail(ErrorKind::Supervision, "target outside candidate set");
    total += logsumexp_row(sv.row(r)) - sv(r, targets[r]);
  }
  Mat loss(1, 1);
  loss(0, 0) = total / sv.rows();
  Var v = t.push(std::move(loss));
  t.set_back(v, [s, targets, v](Tape& tp) {
    const Mat& sv2 = tp.val(s);
    double g = tp.grad(v)(0, 0) / sv2.rows();
    for (int r = 0; r < sv2.rows(); ++r) {
      Mat p = softmax_row(sv2.row(r));
      p(0, targets[r]) -= 1.0;
      tp.grad(s).row(r) += g * p.row(0);
    }
  });
  return v;
}

Var cross_entropy_rows_dist(Tape& t, Var s, Mat gt) {
  const Mat& sv = t.val(s);
  if (sv.rows() != gt.rows() || sv.cols() != gt.cols())
    fail(ErrorKind::Shape, "cross_entropy_rows_dist shape mismatch");
  double total = 0.0;
  for (int r = 0; r < sv.rows(); ++r)
    total += gt.row(r).sum() * logsumexp_row(sv.row(r)) -
             gt.row(r).cwiseProduct(sv.row(r)).sum();
  Mat loss(1, 1);
  loss(0, 0) = total / sv.rows();
  Var v = t.push(std::move(loss));
  t.set_back(v, [s, gt, v](Tape& tp) {
    const Mat& sv2 = tp.val(s);
    double g = tp.grad(v)(0, 0) / sv2.rows();
    for (int r = 0; r < sv2.rows(); ++r) {
      Mat p = softmax_row(sv2.row(r));
      tp.grad(s).row(r) += g * (gt.row(r).sum() * p.row(0) - gt.row(r));
    }
  });
  return v;
}

Var mean_sq_diff(Tape& t, Var a, Mat c) {
  const Mat& av = t.val(a);
  if (av.rows() != c.rows() || av.cols() != c.cols())
    fail(ErrorKind::Shape, "mean_sq_diff shape mismatch");
  double n = static_cast<double>(av.size());
  Mat loss(1, 1);
  loss(0, 0) = (av - c).array().square().sum() / n;
  Var v = t.push(std::move(loss));
  t.set_back(v, [a, c, n, v](Tape& tp) {
    tp.grad(a) += tp.grad(v)(0, 0) * 2.0 / n * (tp.val(a) - c);
  });
  return v;
}

Var mean_abs_diff(Tape& t, Var a, Mat c) {
  const Mat& av = t.val(a);
  if (av.rows() != c.rows() || av.cols() != c.cols())
    fail(ErrorKind::Shape, "mean_abs_diff shape mismatch");
  double n = static_cast<double>(av.size());
  Mat loss(1, 1);
  loss(0, 0) = (av - c).array().abs().sum() / n;
  Var v = t.push(std::move(loss));
  t.set_back(v, [a, c, n, v](Tape& tp) {
    tp.grad(a) += tp.grad(v)(0, 0) / n * (tp.val(a) - c).array().sign().matrix();
  });
  return v;
}

Var linear(Tape& t, Var x, ParamStore& ps, const std::string& prefix) {
  Var w = t.param(ps, prefix + ".w");
  Var b = t.param(ps, prefix + ".b");
  return add_rowvec(t, matmul(t, x, w), b);
}

Var linear_nobias(Tape& t, Var x, ParamStore& ps, const std::string& prefix) {
  return matmul(t, x, t.param(ps, prefix + ".w"));
}

void ensure_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  if (!ps.has(prefix + ".w")) ps.add_uniform(prefix + ".w", in, out, rng);
  if (!ps.has(prefix + ".b")) ps.add(prefix + ".b", 1, out);
}

void ensure_linear_nobias(ParamStore& ps, const std::string& prefix, int in, int out,
                          Rng& rng) {
  if (!ps.has(prefix + ".w")) ps.add_uniform(prefix + ".w", in, out, rng);
}

void ensure_layer_norm(ParamStore& ps, const std::string& prefix, int dim) {
  if (!ps.has(prefix + ".gain")) ps.add_constant(prefix + ".gain", 1, dim, 1.0);
  if (!ps.has(prefix + ".bias")) ps.add(prefix + ".bias", 1, dim);
}

Var layer_norm(Tape& t, Var x, ParamStore& ps, const std::string& prefix) {
  Var g = t.param(ps, prefix + ".gain");
  Var b = t.param(ps, prefix + ".bias");
  return layer_norm_rows(t, x, g, b);
}

// ---------------------------------------------------------------------------

double eval_loss(const LossFn& f) {
  Tape t;
  Var v = f(t);
  if (t.val(v).size() != 1) fail(ErrorKind::Shape, "loss must be 1x1");
  return t.val(v)(0, 0);
}

std::map<std::string, Mat> analytic_grads(ParamStore& ps, const LossFn& f) {
  ps.zero_grads();
  Tape t;
  Var v = f(t);
  t.backward(v);
  std::map<std::string, Mat> out;
  for (const auto& [name, tensor] : ps.tensors()) {
    check_finite_mat(tensor.grad, "gradient of tensor " + name);
    out[name] = tensor.grad;
  }
  return out;
}

std::map<std::string, Mat> numeric_grads(ParamStore& ps, const LossFn& f, double eps) {
  std::map<std::string, Mat> out;
  for (auto& [name, tensor] : ps.tensors()) {
    Mat g(tensor.value.rows(), tensor.value.cols());
    for (int i = 0; i < tensor.value.rows(); ++i)
      for (int j = 0; j < tensor.value.cols(); ++j) {
        double saved = tensor.value(i, j);
        tensor.value(i, j) = saved + eps;
        double up = eval_loss(f);
        tensor.value(i, j) = saved - eps;
        double down = eval_loss(f);
        tensor.value(i, j) = saved;
        g(i, j) = (up - down) / (2.0 * eps);
      }
    out[name] = std::move(g);
  }
  return out;
}

GradCheckResult max_rel_error(const std::map<std::string, Mat>& analytic,
                              const std::map<std::string, Mat>& numeric) {
  GradCheckResult res;
  for (const auto& [name, a] : analytic) {
    const Mat& n = numeric.at(name);
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < a.cols(); ++j) {
        double rel = std::abs(a(i, j) - n(i, j)) / std::max(1e-8, std::abs(n(i, j)));
        if (rel > res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_tensor = name;
          res.worst_row = i;
          res.worst_col = j;
        }
      }
  }
  return res;
}

GradCheckResult grad_check(ParamStore& ps, const LossFn& f, double eps) {
  auto a = analytic_grads(ps, f);
  auto n = numeric_grads(ps, f, eps);
  return max_rel_error(a, n);
}

}  // namespace sali::nn
