#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cirforge::nc {

/// Dense row-major float64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  /// Throws ValidationError unless data.size() is the product of `shape`.
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Matrix view: rank-2 tensors only.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Bitwise comparison of shape and data.
  bool operator==(const Tensor& other) const;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Node {
  Tensor value;
  /// Empty until a gradient flows in; same shape as value afterwards.
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Mutable value of a leaf, for optimizers and tests.
  Tensor& mutable_value() { return node_->value; }
  /// Accumulated gradient; zeros when nothing reached this node.
  const Tensor& grad() const;
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const char* op() const { return node_->op; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Reverse-mode accumulation from a 1x1 loss into every node that requires
/// a gradient. Throws ValidationError for a non-scalar loss.
void backward(const Var& loss);

// Ops on rank-2 tensors. Shape errors throw ValidationError naming the op and
// the shapes involved.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var mul_scalar(const Var& a, double s);
/// a (n x m) plus a row vector b (1 x m) added to every row.
Var add_row(const Var& a, const Var& b);
/// a (n x m) times a row vector g (1 x m), columnwise.
Var mul_row(const Var& a, const Var& g);
/// a (n x m) times c (n x 1 or 1 x 1), rowwise.
Var mul_col(const Var& a, const Var& c);
Var concat(const std::vector<Var>& parts, int axis);
/// Half-open range [begin, end) along `axis`.
Var slice(const Var& a, int axis, std::size_t begin, std::size_t end);
Var transpose(const Var& a);
/// Row-wise softmax with max subtraction.
Var softmax(const Var& a);
Var log_softmax(const Var& a);

inline constexpr double kLayerNormEps = 1e-5;
/// Row-wise (x - mean) / sqrt(var + eps), biased variance, no affine part.
Var layer_norm(const Var& a, double eps = kLayerNormEps);
Var relu(const Var& a);
/// x (n x in) W (in x out) + b (1 x out).
Var linear(const Var& x, const Var& w, const Var& b);
/// Rows of `table` selected by `indices`.
Var embedding_lookup(const Var& table, std::span<const std::size_t> indices);
/// Row-wise unit normalization. Throws ValidationError on a zero row.
Var l2_normalize(const Var& a);
/// (n x d), (m x d) -> (n x m) cosines.
Var cosine_similarity(const Var& a, const Var& b);
/// Sum of all entries, 1 x 1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Diagonal of a square matrix as an n x 1 column.
Var take_diagonal(const Var& a);

}  // namespace cirforge::nc
