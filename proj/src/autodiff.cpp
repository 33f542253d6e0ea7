#include "partflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "partflow/errors.hpp"

namespace partflow::ad {
namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_result(Matrix value, std::initializer_list<const Var*> inputs, std::function<void(const Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Var* in : inputs) node->parents.push_back(in->node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

Var make_result(Matrix value, std::span<const Var> inputs, std::function<void(const Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var& in : inputs) {
      if (in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Var& in : inputs) node->parents.push_back(in.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward expects a 1x1 loss");
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() > 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  }
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() * b.value(), {&a, &b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_transposed: inner dimensions differ");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() * b.value().transpose(), {&a, &b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(self.grad.transpose() * pa->value);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() + b.value(), {&a, &b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() - b.value(), {&a, &b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value().cwiseProduct(b.value()), {&a, &b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  auto pa = a.node();
  return make_result(a.value() * s, {&a}, [pa, s](const Node& self) { pa->accumulate(self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1x" + std::to_string(a.cols()));
  auto pa = a.node(), pr = row.node();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {&a, &row}, [pa, pr](const Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate(self.grad.colwise().sum());
  });
}

Var silu(const Var& a) {
  auto pa = a.node();
  const Matrix s = sigmoid(a.value());
  Matrix out = a.value().cwiseProduct(s);
  return make_result(std::move(out), {&a}, [pa, s](const Node& self) {
    const auto& x = pa->value.array();
    const Matrix d = (s.array() * (1.0 + x * (1.0 - s.array()))).matrix();
    pa->accumulate(self.grad.cwiseProduct(d));
  });
}

Var softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  auto pa = a.node();
  return make_result(y, {&a}, [pa](const Node& self) {
    const Matrix& s = self.value;
    const Eigen::VectorXd dots = self.grad.cwiseProduct(s).rowwise().sum();
    Matrix g = s.cwiseProduct(self.grad.colwise() - dots);
    pa->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(d));
  }
  const Matrix& v = x.value();
  const Eigen::VectorXd mu = v.rowwise().mean();
  const Matrix centered = v.colwise() - mu;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  const Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_result(std::move(out), {&x, &gamma, &beta}, [px, pg, pb, xhat, inv_std, d](const Node& self) {
    const Matrix& g = self.grad;
    if (pg->requires_grad) pg->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (pb->requires_grad) pb->accumulate(g.colwise().sum());
    if (px->requires_grad) {
      const Matrix dxhat = g.array().rowwise() * pg->value.row(0).array();
      const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
      const Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = (dxhat.colwise() - mean_d) - (xhat.array().colwise() * mean_dx.array()).matrix();
      dx = dx.array().colwise() * inv_std.array();
      px->accumulate(dx);
    }
    (void)d;
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ShapeError("slice_rows out of range");
  auto pa = a.node();
  return make_result(a.value().middleRows(begin, count), {&a}, [pa, begin, count](const Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(begin, count) = self.grad;
    pa->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ShapeError("slice_cols out of range");
  auto pa = a.node();
  return make_result(a.value().middleCols(begin, count), {&a}, [pa, begin, count](const Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(begin, count) = self.grad;
    pa->accumulate(g);
  });
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("vstack of nothing");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    nodes.push_back(p.node());
  }
  return make_result(std::move(out), parts, [nodes](const Node& self) {
    Eigen::Index r = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) n->accumulate(self.grad.middleRows(r, n->value.rows()));
      r += n->value.rows();
    }
  });
}

Var hstack(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("hstack of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hstack: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    nodes.push_back(p.node());
  }
  return make_result(std::move(out), parts, [nodes](const Node& self) {
    Eigen::Index c = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) n->accumulate(self.grad.middleCols(c, n->value.cols()));
      c += n->value.cols();
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw RangeError("row index " + std::to_string(rows[i]) + " outside table of " + std::to_string(table.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(rows[i]);
  }
  auto pt = table.node();
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {&table}, [pt, idx](const Node& self) {
    Matrix g = Matrix::Zero(pt->value.rows(), pt->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    pt->accumulate(g);
  });
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of an empty matrix");
  auto pa = a.node();
  const double n = static_cast<double>(a.rows());
  return make_result(a.value().colwise().mean(), {&a}, [pa, n](const Node& self) {
    pa->accumulate(self.grad.replicate(pa->value.rows(), 1) / n);
  });
}

Var max_rows(const Var& a) {
  if (a.rows() == 0) throw ShapeError("max_rows of an empty matrix");
  const Matrix& v = a.value();
  Matrix out(1, v.cols());
  std::vector<Eigen::Index> arg(v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index r = 0;
    out(0, c) = v.col(c).maxCoeff(&r);
    arg[c] = r;
  }
  auto pa = a.node();
  return make_result(std::move(out), {&a}, [pa, arg](const Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (std::size_t c = 0; c < arg.size(); ++c) g(arg[c], c) = self.grad(0, c);
    pa->accumulate(g);
  });
}

Var sum(const Var& a) {
  auto pa = a.node();
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {&a}, [pa](const Node& self) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_square(const Var& a) {
  auto pa = a.node();
  return make_result(Matrix::Constant(1, 1, a.value().squaredNorm()), {&a}, [pa](const Node& self) {
    pa->accumulate(2.0 * self.grad(0, 0) * pa->value);
  });
}

Var mean_square(const Var& a) { return scale(sum_square(a), 1.0 / static_cast<double>(a.value().size())); }

Var& ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw SchemaError(name, "duplicate parameter name");
  entries_.emplace_back(name, Var::parameter(std::move(init)));
  return entries_.back().second;
}

Var& ParameterStore::at(const std::string& name) {
  for (auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw SchemaError(name, "unknown parameter");
}

const Var& ParameterStore::at(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw SchemaError(name, "unknown parameter");
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::vector<Var> ParameterStore::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix mhat = m_[i] / c1;
    const Matrix vhat = v_[i] / c2;
    p.mutable_value() -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

GradcheckReport finite_diff_gradcheck(const std::function<Var()>& loss_fn,
                                      std::span<const std::pair<std::string, Var>> params, double eps,
                                      std::size_t max_entries_per_param) {
  for (const auto& [name, v] : params) {
    auto copy = v;
    copy.zero_grad();
  }
  {
    const Var loss = loss_fn();
    backward(loss);
  }
  GradcheckReport report;
  for (const auto& [name, v] : params) {
    Var p = v;
    const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    if (!analytic.allFinite()) throw InvariantError("non-finite analytic gradient for " + name);
    const auto total = static_cast<std::size_t>(p.value().size());
    std::size_t stride = 1;
    if (max_entries_per_param > 0 && total > max_entries_per_param) stride = (total + max_entries_per_param - 1) / max_entries_per_param;
    for (std::size_t flat = 0; flat < total; flat += stride) {
      const auto r = static_cast<Eigen::Index>(flat % static_cast<std::size_t>(p.rows()));
      const auto c = static_cast<Eigen::Index>(flat / static_cast<std::size_t>(p.rows()));
      const double saved = p.value()(r, c);
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        p.mutable_value()(r, c) = saved + eps;
        plus = loss_fn().value()(0, 0);
        p.mutable_value()(r, c) = saved - eps;
        minus = loss_fn().value()(0, 0);
        p.mutable_value()(r, c) = saved;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      if (!std::isfinite(numeric)) throw InvariantError("non-finite numeric gradient for " + name);
      const double a = analytic(r, c);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
      }
    }
  }
  for (const auto& [name, v] : params) {
    auto copy = v;
    copy.zero_grad();
  }
  return report;
}

}  // namespace partflow::ad
