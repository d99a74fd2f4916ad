#pragma once

// Finite-difference checks of every differentiable numcore op on small
// random tensors.

#include <functional>
#include <string>
#include <vector>

#include "cirforge/numcore.hpp"
#include "cirforge/rng.hpp"
#include "gradcheck.hpp"

namespace cirforge::testing {

inline nc::Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  nc::Tensor t = nc::Tensor::matrix(r, c);
  for (auto& x : t.data()) x = rng.normal() * scale;
  return t;
}

struct OpCheck {
  std::string name;
  GradCheck result;
};

/// Each op output is reduced to a scalar with fixed random weights so every
/// output entry contributes a distinct amount.
inline std::vector<OpCheck> run_op_gradchecks(std::uint64_t seed = 5) {
  using namespace cirforge::nc;
  Rng rng(seed);
  auto A = parameter(random_tensor(rng, 3, 4));
  auto B = parameter(random_tensor(rng, 4, 5));
  auto C = parameter(random_tensor(rng, 3, 4));
  auto row = parameter(random_tensor(rng, 1, 4));
  auto col = parameter(random_tensor(rng, 3, 1));
  auto s = parameter(random_tensor(rng, 1, 1));
  auto sq = parameter(random_tensor(rng, 4, 4));
  auto bias = parameter(random_tensor(rng, 1, 5));
  const std::vector<std::size_t> idx = {3, 0, 3, 1};

  std::vector<OpCheck> out;
  auto check = [&](const char* name, std::vector<Var> leaves, const std::function<Var()>& op) {
    Rng wrng(derive_seed(seed, fnv1a64(name)));
    const Var probe = op();
    const Tensor w = random_tensor(wrng, probe.rows(), probe.cols());
    out.push_back({name, gradcheck([&] { return sum(mul(op(), constant(w))); }, std::move(leaves))});
  };
  check("matmul", {A, B}, [&] { return matmul(A, B); });
  check("add", {A, C}, [&] { return add(A, C); });
  check("sub", {A, C}, [&] { return sub(A, C); });
  check("mul", {A, C}, [&] { return mul(A, C); });
  check("mul_scalar", {A}, [&] { return mul_scalar(A, -1.7); });
  check("add_row", {A, row}, [&] { return add_row(A, row); });
  check("mul_row", {A, row}, [&] { return mul_row(A, row); });
  check("mul_col", {A, col}, [&] { return mul_col(A, col); });
  check("mul_col scalar", {A, s}, [&] { return mul_col(A, s); });
  check("concat rows", {A, C}, [&] { return concat({A, C, A}, 0); });
  check("concat cols", {A, col}, [&] { return concat({col, A}, 1); });
  check("slice rows", {A}, [&] { return slice(A, 0, 1, 3); });
  check("slice cols", {A}, [&] { return slice(A, 1, 1, 3); });
  check("transpose", {A}, [&] { return transpose(A); });
  check("softmax", {A}, [&] { return softmax(A); });
  check("log_softmax", {A}, [&] { return log_softmax(A); });
  check("layer_norm", {A}, [&] { return layer_norm(A); });
  check("relu", {A}, [&] { return relu(A); });
  check("linear", {A, B, bias}, [&] { return linear(A, B, bias); });
  check("embedding_lookup", {sq}, [&] { return embedding_lookup(sq, idx); });
  check("l2_normalize", {A}, [&] { return l2_normalize(A); });
  check("cosine_similarity", {A, C}, [&] { return cosine_similarity(A, C); });
  check("sum", {A}, [&] { return sum(A); });
  check("mean", {A}, [&] { return mean(A); });
  check("take_diagonal", {sq}, [&] { return take_diagonal(sq); });
  return out;
}

}  // namespace cirforge::testing
