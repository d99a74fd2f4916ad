#include "cirforge/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "cirforge/errors.hpp"

namespace cirforge::nc {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ValidationError(std::string(op) + ": " + detail);
}

void require_matrix(const char* op, const Var& a) {
  if (!a) shape_error(op, "null input");
  if (a.value().rank() != 2) shape_error(op, "expected a matrix, got shape " + a.value().shape_string());
}

void require_same(const char* op, const Var& a, const Var& b) {
  require_matrix(op, a);
  require_matrix(op, b);
  if (a.value().shape() != b.value().shape()) {
    shape_error(op, "shapes " + a.value().shape_string() + " and " + b.value().shape_string() + " differ");
  }
}

Tensor& grad_of(Node& n) {
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

Var make(Tensor value, const char* op, std::vector<std::shared_ptr<Node>> inputs,
         std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(), wants);
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

// out += a (n x k) * b (k x m)
void gemm_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

// out (n x k) += a (n x m) * b^T where b is (k x m)
void gemm_abt_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < m; ++p) s += a[i * m + p] * b[j * m + p];
      out[i * k + j] += s;
    }
  }
}

// out (k x m) += a^T * b where a is (n x k) and b is (n x m)
void gemm_atb_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* row = out + p * m;
      const double* brow = b + i * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ValidationError("tensor data has " + std::to_string(data_.size()) + " values for shape " + shape_string());
  }
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

const Tensor& Var::grad() const {
  if (node_->grad.shape() != node_->value.shape()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "parameter";
  n->requires_grad = true;
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (!loss || loss.value().size() != 1) {
    throw ValidationError("backward: loss must be a scalar, got shape " + loss.value().shape_string());
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  grad_of(*loss.node()).data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.shape() == n.value.shape()) n.backward(n);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    shape_error("matmul", "shapes " + a.value().shape_string() + " and " + b.value().shape_string() + " do not chain");
  }
  Tensor out = Tensor::matrix(n, m);
  gemm_acc(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  return make(std::move(out), "matmul", {a.node(), b.node()}, [n, k, m](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    const double* g = self.grad.data().data();
    if (A.requires_grad) gemm_abt_acc(g, B.value.data().data(), grad_of(A).data().data(), n, m, k);
    if (B.requires_grad) gemm_atb_acc(A.value.data().data(), g, grad_of(B).data().data(), n, k, m);
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = grad_of(*self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = grad_of(*self.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = grad_of(A);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = grad_of(B);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Var mul_scalar(const Var& a, double s) {
  require_matrix("mul_scalar", a);
  Tensor out = a.value();
  for (auto& x : out.data()) x *= s;
  return make(std::move(out), "mul_scalar", {a.node()}, [s](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Var add_row(const Var& a, const Var& b) {
  require_matrix("add_row", a);
  require_matrix("add_row", b);
  if (b.rows() != 1 || b.cols() != a.cols()) {
    shape_error("add_row", "cannot broadcast " + b.value().shape_string() + " over " + a.value().shape_string());
  }
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += b.value()(0, j);
  return make(std::move(out), "add_row", {a.node(), b.node()}, [n, m](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = grad_of(*self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = grad_of(*self.inputs[1]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad(i, j);
    }
  });
}

Var mul_row(const Var& a, const Var& gvec) {
  require_matrix("mul_row", a);
  require_matrix("mul_row", gvec);
  if (gvec.rows() != 1 || gvec.cols() != a.cols()) {
    shape_error("mul_row", "cannot broadcast " + gvec.value().shape_string() + " over " + a.value().shape_string());
  }
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= gvec.value()(0, j);
  return make(std::move(out), "mul_row", {a.node(), gvec.node()}, [n, m](Node& self) {
    Node& A = *self.inputs[0];
    Node& G = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = grad_of(A);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, j) * G.value(0, j);
    }
    if (G.requires_grad) {
      auto& g = grad_of(G);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g(0, j) += self.grad(i, j) * A.value(i, j);
    }
  });
}

Var mul_col(const Var& a, const Var& c) {
  require_matrix("mul_col", a);
  require_matrix("mul_col", c);
  const bool scalar = c.rows() == 1 && c.cols() == 1;
  if (c.cols() != 1 || !(scalar || c.rows() == a.rows())) {
    shape_error("mul_col", "cannot broadcast " + c.value().shape_string() + " over " + a.value().shape_string());
  }
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = c.value()[scalar ? 0 : i];
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= s;
  }
  return make(std::move(out), "mul_col", {a.node(), c.node()}, [n, m, scalar](Node& self) {
    Node& A = *self.inputs[0];
    Node& C = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = grad_of(A);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, j) * C.value[scalar ? 0 : i];
    }
    if (C.requires_grad) {
      auto& g = grad_of(C);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += self.grad(i, j) * A.value(i, j);
        g[scalar ? 0 : i] += s;
      }
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  if (axis != 0 && axis != 1) shape_error("concat", "axis must be 0 or 1");
  for (const auto& p : parts) require_matrix("concat", p);
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t o = axis == 0 ? p.cols() : p.rows();
    if (o != other) shape_error("concat", "mismatched shape " + p.value().shape_string() + " along the fixed axis");
    offsets.push_back(total);
    total += axis == 0 ? p.rows() : p.cols();
  }
  Tensor out = axis == 0 ? Tensor::matrix(total, other) : Tensor::matrix(other, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0)
          out(offsets[k] + i, j) = v(i, j);
        else
          out(i, offsets[k] + j) = v(i, j);
      }
  }
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) inputs.push_back(p.node());
  return make(std::move(out), "concat", std::move(inputs), [axis, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = grad_of(in);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
          g(i, j) += axis == 0 ? self.grad(offsets[k] + i, j) : self.grad(i, offsets[k] + j);
    }
  });
}

Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  require_matrix("slice", a);
  if (axis != 0 && axis != 1) shape_error("slice", "axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (begin >= end || end > extent) {
    shape_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds for " +
                             a.value().shape_string());
  }
  const std::size_t n = axis == 0 ? end - begin : a.rows();
  const std::size_t m = axis == 0 ? a.cols() : end - begin;
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = axis == 0 ? a.value()(begin + i, j) : a.value()(i, begin + j);
  return make(std::move(out), "slice", {a.node()}, [axis, begin, n, m](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (axis == 0)
          g(begin + i, j) += self.grad(i, j);
        else
          g(i, begin + j) += self.grad(i, j);
      }
  });
}

Var transpose(const Var& a) {
  require_matrix("transpose", a);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = a.value()(i, j);
  return make(std::move(out), "transpose", {a.node()}, [n, m](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(j, i);
  });
}

Var softmax(const Var& a) {
  require_matrix("softmax", a);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, out(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (out(i, j) = std::exp(out(i, j) - mx));
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= s;
  }
  return make(out, "softmax", {a.node()}, [n, m, y = out](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad(i, j) * y(i, j);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += y(i, j) * (self.grad(i, j) - dot);
    }
  });
}

Var log_softmax(const Var& a) {
  require_matrix("log_softmax", a);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, out(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(out(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) out(i, j) -= lse;
  }
  return make(out, "log_softmax", {a.node()}, [n, m, y = out](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += self.grad(i, j);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

Var layer_norm(const Var& a, double eps) {
  require_matrix("layer_norm", a);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += out(i, j);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (out(i, j) - mu) * (out(i, j) - mu);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) out(i, j) = (out(i, j) - mu) * inv_std[i];
  }
  return make(out, "layer_norm", {a.node()}, [n, m, xhat = out, inv_std](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i) {
      double mg = 0.0, mgx = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        mg += self.grad(i, j);
        mgx += self.grad(i, j) * xhat(i, j);
      }
      mg /= static_cast<double>(m);
      mgx /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += inv_std[i] * (self.grad(i, j) - mg - xhat(i, j) * mgx);
    }
  });
}

Var relu(const Var& a) {
  require_matrix("relu", a);
  Tensor out = a.value();
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  return make(std::move(out), "relu", {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = grad_of(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var embedding_lookup(const Var& table, std::span<const std::size_t> indices) {
  require_matrix("embedding_lookup", table);
  if (indices.empty()) shape_error("embedding_lookup", "no indices");
  const std::size_t m = table.cols();
  Tensor out = Tensor::matrix(indices.size(), m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.rows()) {
      shape_error("embedding_lookup", "index " + std::to_string(indices[i]) + " out of range for table " +
                                          table.value().shape_string());
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) = table.value()(indices[i], j);
  }
  return make(std::move(out), "embedding_lookup", {table.node()},
              [m, idx = std::vector<std::size_t>(indices.begin(), indices.end())](Node& self) {
                auto& g = grad_of(*self.inputs[0]);
                for (std::size_t i = 0; i < idx.size(); ++i)
                  for (std::size_t j = 0; j < m; ++j) g(idx[i], j) += self.grad(i, j);
              });
}

Var l2_normalize(const Var& a) {
  require_matrix("l2_normalize", a);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += out(i, j) * out(i, j);
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw ValidationError("l2_normalize: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= norms[i];
  }
  return make(out, "l2_normalize", {a.node()}, [n, m, y = out, norms](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad(i, j) * y(i, j);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += (self.grad(i, j) - y(i, j) * dot) / norms[i];
    }
  });
}

Var cosine_similarity(const Var& a, const Var& b) {
  require_matrix("cosine_similarity", a);
  require_matrix("cosine_similarity", b);
  if (a.cols() != b.cols()) {
    shape_error("cosine_similarity",
                "shapes " + a.value().shape_string() + " and " + b.value().shape_string() + " differ in width");
  }
  return matmul(l2_normalize(a), transpose(l2_normalize(b)));
}

Var sum(const Var& a) {
  require_matrix("sum", a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make(Tensor::scalar(s), "sum", {a.node()}, [](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    const double d = self.grad[0];
    for (auto& x : g.data()) x += d;
  });
}

Var mean(const Var& a) {
  require_matrix("mean", a);
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var take_diagonal(const Var& a) {
  require_matrix("take_diagonal", a);
  if (a.rows() != a.cols()) shape_error("take_diagonal", "matrix " + a.value().shape_string() + " is not square");
  const std::size_t n = a.rows();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) out(i, 0) = a.value()(i, i);
  return make(std::move(out), "take_diagonal", {a.node()}, [n](Node& self) {
    auto& g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i) g(i, i) += self.grad(i, 0);
  });
}

}  // namespace cirforge::nc
