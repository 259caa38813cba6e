#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sali/error.hpp"
#include "sali/rng.hpp"

namespace sali::nn {

using Mat = Eigen::MatrixXd;

struct Tensor {
  Mat value;
  Mat grad;
};

// Named parameter tensors. std::map keeps iteration (and therefore
// checkpoint serialization and SGD update order) deterministic.
class ParamStore {
public:
  Tensor& add(const std::string& name, int rows, int cols);
  // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Tensor& add_uniform(const std::string& name, int rows, int cols, Rng& rng);
  Tensor& add_constant(const std::string& name, int rows, int cols, double v);

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  void zero_grads();
  void sgd_step(double lr);
  void scale_grads(double s);
  bool grads_finite() const;
  size_t scalar_count() const;

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

private:
  std::map<std::string, Tensor> tensors_;
};

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape. Build the graph forward with the free functions below,
// then call backward() on a 1x1 result; parameter gradients accumulate into
// the bound ParamStore tensors.
class Tape {
public:
  Var constant(Mat m);
  Var param(ParamStore& ps, const std::string& name);

  const Mat& val(Var v) const { return nodes_[v.i].val; }
  Mat& grad(Var v) { return nodes_[v.i].grad; }

  void backward(Var root);

  // Internal plumbing for op implementations.
  Var push(Mat val);
  void set_back(Var v, std::function<void(Tape&)> fn);
  size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Tensor*>> leaves_;
};

Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);  // A * B^T
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var add_rowvec(Tape& t, Var a, Var b);  // broadcast 1 x n bias over rows
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var scalar_mul(Tape& t, Var a, Var s);  // s is 1x1
Var transpose(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);
Var tanh_op(Tape& t, Var a);
Var sigmoid_op(Tape& t, Var a);
Var relu_op(Tape& t, Var a);
Var clamp_op(Tape& t, Var a, double lo, double hi);
Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias);  // eps = 1e-5
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, Var a, int col0, int ncols);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var select_rows(Tape& t, Var a, std::vector<int> rows);
Var mean_rows(Tape& t, Var a);  // 1 x n column means
Var gather_cells(Tape& t, Var table, const Eigen::MatrixXi& idx);  // table 1 x K

// -log softmax(s)[target] for a 1 x k logit row.
Var cross_entropy_logits(Tape& t, Var s, int target);
// -sum_i gt_i * log softmax(s)_i for a 1 x k logit row and a target
// distribution gt (rows of both 1 x k).
Var cross_entropy_logits_dist(Tape& t, Var s, Mat gt);
// Row-wise cross entropies averaged over the batch (N x k logits).
Var cross_entropy_rows(Tape& t, Var s, std::vector<int> targets);
Var cross_entropy_rows_dist(Tape& t, Var s, Mat gt);
Var mean_sq_diff(Tape& t, Var a, Mat c);
Var mean_abs_diff(Tape& t, Var a, Mat c);

// y = x * W + b with parameters named prefix + ".w" / ".b".
Var linear(Tape& t, Var x, ParamStore& ps, const std::string& prefix);
Var linear_nobias(Tape& t, Var x, ParamStore& ps, const std::string& prefix);
void ensure_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
void ensure_linear_nobias(ParamStore& ps, const std::string& prefix, int in, int out,
                          Rng& rng);
void ensure_layer_norm(ParamStore& ps, const std::string& prefix, int dim);
Var layer_norm(Tape& t, Var x, ParamStore& ps, const std::string& prefix);

// ---------------------------------------------------------------------------
// Gradient checking

using LossFn = std::function<Var(Tape&)>;

double eval_loss(const LossFn& f);
// Forward + backward once; throws Error(Numeric) naming the tensor if any
// gradient is non-finite.
std::map<std::string, Mat> analytic_grads(ParamStore& ps, const LossFn& f);
// Central finite differences over every scalar parameter.
std::map<std::string, Mat> numeric_grads(ParamStore& ps, const LossFn& f, double eps);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  int worst_row = 0;
  int worst_col = 0;
};

// max |a - n| / max(1e-8, |n|) over all entries of all tensors.
GradCheckResult max_rel_error(const std::map<std::string, Mat>& analytic,
                              const std::map<std::string, Mat>& numeric);
GradCheckResult grad_check(ParamStore& ps, const LossFn& f, double eps = 1e-5);

}  // namespace sali::nn
