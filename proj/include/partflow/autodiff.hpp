#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// Every operation records its inputs and a backward closure on a tape that
// lives as long as the resulting Var. `backward(loss)` walks the graph in
// reverse topological order and accumulates gradients into every node that
// requires them. Parameters are leaves with requires_grad set; their
// gradients persist until `zero_grad`.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace partflow::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  static Var constant(Matrix value) { return Var(std::move(value), false); }
  static Var parameter(Matrix value) { return Var(std::move(value), true); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend Var make_result(Matrix, std::initializer_list<const Var*>, std::function<void(const Node&)>);
  friend Var make_result(Matrix, std::span<const Var>, std::function<void(const Node&)>);

  std::shared_ptr<Node> node_;
};

// Disables graph recording in its scope (inference, sampling).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var make_result(Matrix value, std::initializer_list<const Var*> inputs, std::function<void(const Node&)> fn);
Var make_result(Matrix value, std::span<const Var> inputs, std::function<void(const Node&)> fn);

// Seeds d(loss)/d(loss) = 1; `loss` must be 1x1.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a · bᵀ
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1×C row over every row of a
Var silu(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var vstack(std::span<const Var> parts);
Var hstack(std::span<const Var> parts);
Var gather_rows(const Var& table, std::span<const int> rows);
Var mean_rows(const Var& a);  // 1×C
Var max_rows(const Var& a);   // 1×C, gradient routed to the first maximal row
Var sum(const Var& a);        // 1×1
Var mean(const Var& a);       // 1×1
Var mean_square(const Var& a);  // 1×1
Var sum_square(const Var& a);   // 1×1

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Named, ordered collection of trainable leaves.
class ParameterStore {
 public:
  // The returned reference is invalidated by the next add; copy the handle to keep it.
  Var& add(const std::string& name, Matrix init);
  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

class Adam {
 public:
  Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[row,col]" of the worst entry
};

// Compares analytic parameter gradients of the scalar `loss_fn` against
// central differences with step `eps`. `max_entries_per_param` > 0 limits
// the check to a deterministic spread of entries in each tensor.
// Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradcheckReport finite_diff_gradcheck(const std::function<Var()>& loss_fn,
                                      std::span<const std::pair<std::string, Var>> params, double eps = 1e-5,
                                      std::size_t max_entries_per_param = 0);

}  // namespace partflow::ad
