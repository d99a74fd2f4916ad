#include <cmath>
#include <numbers>
#include <sstream>

#include "cirforge/checkpoint.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/numcore.hpp"
#include "cirforge/optim.hpp"
#include "cirforge/rng.hpp"
#include "doctest.h"
#include "../support/op_cases.hpp"
#include "test_util.hpp"

using namespace cirforge;
using namespace cirforge::nc;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& x : t.data()) x = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("forward values") {
  const auto s = softmax(constant(Tensor({1, 3}, {0, 0, 0})));
  for (std::size_t j = 0; j < 3; ++j) CHECK(s.value()[j] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const auto n = l2_normalize(constant(Tensor({1, 2}, {3, 4})));
  CHECK(n.value()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.value()[1] == doctest::Approx(0.8).epsilon(1e-15));
  const auto big = softmax(constant(Tensor({1, 3}, {1000, 1000, -1000})));
  CHECK(big.value()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(log_softmax(constant(Tensor({1, 2}, {-1e4, 1e4}))).value()[0]));

  const auto m = matmul(constant(Tensor({2, 2}, {1, 2, 3, 4})), constant(Tensor({2, 1}, {5, 6})));
  CHECK(m.value() == Tensor({2, 1}, {17, 39}));
  CHECK(take_diagonal(constant(Tensor({2, 2}, {1, 2, 3, 4}))).value() == Tensor({2, 1}, {1, 4}));
  CHECK(concat({constant(Tensor({1, 2}, {1, 2})), constant(Tensor({1, 1}, {3}))}, 1).value() ==
        Tensor({1, 3}, {1, 2, 3}));
  CHECK(slice(constant(Tensor({3, 1}, {1, 2, 3})), 0, 1, 3).value() == Tensor({2, 1}, {2, 3}));
  CHECK(embedding_lookup(constant(Tensor({3, 1}, {7, 8, 9})), std::vector<std::size_t>{2, 0, 2}).value() ==
        Tensor({3, 1}, {9, 7, 9}));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(1);
  const auto s = softmax(constant(random_matrix(rng, 20, 13, 5.0)));
  for (std::size_t i = 0; i < 20; ++i) {
    double t = 0;
    for (std::size_t j = 0; j < 13; ++j) t += s.value()(i, j);
    CHECK(std::fabs(t - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm matches a two-pass oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_matrix(rng, 1, 8, 0.1 + trial);
    const auto y = layer_norm(constant(x));
    double mu = 0;
    for (double v : x.data()) mu += v;
    mu /= 8;
    double var = 0;
    for (double v : x.data()) var += (v - mu) * (v - mu);
    var /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::fabs(y.value()[j] - (x[j] - mu) / std::sqrt(var + 1e-5)) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm output moments") {
  Rng rng(3);
  // Output variance is var / (var + eps); within 1e-8 of one once var >= 1e3.
  const auto y = layer_norm(constant(random_matrix(rng, 30, 16, 100.0)));
  for (std::size_t i = 0; i < 30; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.value()(i, j);
    mu /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.value()(i, j) - mu) * (y.value()(i, j) - mu);
    var /= 16;
    CHECK(std::fabs(mu) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("backward basics") {
  Rng rng(4);
  auto x = parameter(random_matrix(rng, 3, 4));
  backward(sum(x));
  for (double g : x.grad().data()) CHECK(g == 1.0);

  x.zero_grad();
  const auto first = slice(x, 0, 0, 1);
  backward(cosine_similarity(first, first));
  for (double g : x.grad().data()) CHECK(std::fabs(g) < 1e-12);

  auto unused = parameter(random_matrix(rng, 2, 2));
  backward(sum(x));
  CHECK(unused.grad() == Tensor::matrix(2, 2));

  CHECK_THROWS_AS(backward(x), ValidationError);

  // Shared subexpressions accumulate.
  x.zero_grad();
  const auto y = mul_scalar(x, 2.0);
  backward(sum(add(y, y)));
  for (double g : x.grad().data()) CHECK(g == 4.0);

  auto frozen = parameter(random_matrix(rng, 3, 4));
  frozen.set_requires_grad(false);
  const auto z = sum(mul(frozen, x));
  CHECK(z.requires_grad());
  x.zero_grad();
  backward(z);
  CHECK(frozen.grad() == Tensor::matrix(3, 4));
  CHECK(x.grad() == frozen.value());
}

TEST_CASE("shape errors name the op") {
  const auto a = constant(Tensor::matrix(2, 3));
  const auto b = constant(Tensor::matrix(2, 3));
  auto expect = [](const std::function<void()>& f, const std::string& op) {
    try {
      f();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).starts_with(op + ":"));
      CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
    }
  };
  expect([&] { matmul(a, b); }, "matmul");
  expect([&] { add(a, transpose(b)); }, "add");
  expect([&] { add_row(a, a); }, "add_row");
  expect([&] { slice(a, 1, 2, 5); }, "slice");
  expect([&] { take_diagonal(a); }, "take_diagonal");
  CHECK_THROWS_AS(l2_normalize(constant(Tensor::matrix(1, 3))), ValidationError);
  CHECK_THROWS_AS(cosine_similarity(a, constant(Tensor::matrix(2, 4, 1.0))), ValidationError);
  CHECK_THROWS_AS(embedding_lookup(a, std::vector<std::size_t>{5}), ValidationError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST_CASE("every op passes the finite-difference check") {
  const auto checks = cirforge::testing::run_op_gradchecks();
  CHECK(checks.size() == 25);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.result.worst);
    CHECK(c.result.max_rel_error < 1e-4);
    CHECK(c.result.checked > 0);
  }
}

TEST_CASE("forward is bit-reproducible") {
  Rng rng(6);
  const auto a = random_matrix(rng, 7, 9);
  const auto b = random_matrix(rng, 9, 5);
  CHECK(matmul(constant(a), constant(b)).value() == matmul(constant(a), constant(b)).value());
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(1e-4, 0.0) == 1e-4);
  CHECK(cosine_lr(1e-4, 1.0) == doctest::Approx(0.0).epsilon(1e-30));
  CHECK(cosine_lr(2.0, 0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_lr(1.0, 1.5), ValidationError);
  CHECK_THROWS_AS(cosine_lr(1.0, -0.1), ValidationError);
}

TEST_CASE("adamw with zero gradients only decays") {
  ParameterSet ps;
  auto p = ps.add("w", Tensor({1, 2}, {1.0, -2.0}), ParamGroup::head);
  AdamWConfig cfg;
  cfg.head_lr = 0.1;
  cfg.weight_decay = 0.05;
  AdamW opt(cfg);
  double factor = 1.0;
  for (int t = 0; t < 4; ++t) {
    const double pos = t / 4.0;
    ps.zero_grad();
    opt.step(ps, pos);
    factor *= 1.0 - cosine_lr(0.1, pos) * 0.05;
  }
  CHECK(p.value()[0] == doctest::Approx(factor).epsilon(1e-15));
  CHECK(p.value()[1] == doctest::Approx(-2.0 * factor).epsilon(1e-15));
}

TEST_CASE("adamw at the schedule end is a no-op without decay") {
  ParameterSet ps;
  auto p = ps.add("w", Tensor({1, 1}, {0.3}), ParamGroup::head);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  backward(sum(mul(p, p)));
  opt.step(ps, 1.0);
  CHECK(p.value()[0] == 0.3);
}

TEST_CASE("adamw matches the three-step hand trace") {
  // Values from tests/oracles/adamw_trace.py (update equations, cross-checked
  // against torch.optim.AdamW in float64).
  const double expected[3][3] = {
      {0.3995000005, 0.19999999999999996, 0.0040000000000000036},
      {0.32603838909914984, 0.3197000002999999, 0.0059476090083820056},
      {0.30257515925776574, 0.3833530337294898, 0.006856037852173097},
  };
  ParameterSet ps;
  auto p = ps.add("p", Tensor({1, 1}, {0.5}), ParamGroup::head);
  AdamWConfig cfg;
  cfg.head_lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(cfg);
  for (int t = 0; t < 3; ++t) {
    ps.zero_grad();
    backward(sub(mul_scalar(mul(p, p), 3.0), p));
    opt.step(ps, t / 3.0);
    const auto state = opt.export_state(ps);
    CHECK(std::fabs(p.value()[0] - expected[t][0]) < 1e-12);
    CHECK(std::fabs(state[0].second[0] - expected[t][1]) < 1e-12);
    CHECK(std::fabs(state[1].second[0] - expected[t][2]) < 1e-12);
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("adamw groups and frozen parameters") {
  ParameterSet ps;
  auto enc = ps.add("text.emb", Tensor({1, 1}, {1.0}), ParamGroup::encoder);
  auto head = ps.add("agg.w", Tensor({1, 1}, {1.0}), ParamGroup::head);
  auto frozen = ps.add("image.proj", Tensor({1, 1}, {1.0}), ParamGroup::encoder);
  frozen.set_requires_grad(false);
  CHECK(ps.trainable_count() == 2);
  CHECK_THROWS_AS(ps.add("agg.w", Tensor({1, 1}), ParamGroup::head), ValidationError);
  CHECK_THROWS_AS(ps.get("nope"), ValidationError);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  backward(sum(add(add(enc, head), frozen)));
  opt.step(ps, 0.0);
  // First Adam step moves each parameter by its learning rate (m/sqrt(v) = 1).
  CHECK(enc.value()[0] == doctest::Approx(1.0 - 1e-6).epsilon(1e-12));
  CHECK(head.value()[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));
  CHECK(frozen.value()[0] == 1.0);
}

TEST_CASE("adamw state export and import") {
  Rng rng(8);
  ParameterSet a;
  auto pa = a.add("w", random_matrix(rng, 2, 3), ParamGroup::head);
  ParameterSet b;
  auto pb = b.add("w", pa.value(), ParamGroup::head);
  AdamW oa, ob;
  for (int t = 0; t < 2; ++t) {
    a.zero_grad();
    backward(sum(mul(pa, pa)));
    oa.step(a, t / 4.0);
  }
  pb.mutable_value() = pa.value();
  ob.import_state(b, oa.export_state(a));
  CHECK(ob.step_count() == 2);
  for (int t = 2; t < 4; ++t) {
    a.zero_grad();
    b.zero_grad();
    backward(sum(mul(pa, pa)));
    backward(sum(mul(pb, pb)));
    oa.step(a, t / 4.0);
    ob.step(b, t / 4.0);
  }
  CHECK(pa.value() == pb.value());
  auto state = oa.export_state(a);
  state.pop_back();
  CHECK_THROWS_AS(ob.import_state(b, state), FormatError);
}

TEST_CASE("checkpoint container round-trips byte-exactly") {
  Rng rng(9);
  TensorTable table = {{"alpha", random_matrix(rng, 3, 4)},
                       {"adam.step", Tensor({1}, {7.0})},
                       {"cube", Tensor({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, std::nextafter(8.0, 9.0)})},
                       {"empty", Tensor({0})}};
  std::ostringstream first;
  write_checkpoint(table, first);
  std::istringstream in(first.str());
  const auto back = read_checkpoint(in);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].first == table[i].first);
    CHECK(back[i].second == table[i].second);
  }
  std::ostringstream second;
  write_checkpoint(back, second);
  CHECK(second.str() == first.str());
  const std::string bytes = first.str();
  CHECK(bytes.substr(0, 8) == "CIRCKPT1");
  CHECK(bytes.size() == 8 + 8 + (8 + 5 + 8 + 16 + 96) + (8 + 9 + 8 + 8 + 8) + (8 + 4 + 8 + 24 + 64) + (8 + 5 + 8 + 8));

  std::string bad = bytes;
  bad[3] = 'X';
  std::istringstream bad_in(bad);
  try {
    read_checkpoint(bad_in);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("CIRCKPT1") != std::string::npos);
  }
  std::istringstream trunc(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(trunc), FormatError);
  std::istringstream trailing(bytes + "x");
  CHECK_THROWS_AS(read_checkpoint(trailing), FormatError);
  std::ostringstream dup;
  write_checkpoint({{"a", Tensor({1}, {1.0})}, {"a", Tensor({1}, {2.0})}}, dup);
  std::istringstream dup_in(dup.str());
  CHECK_THROWS_AS(read_checkpoint(dup_in), FormatError);

  cirforge::testing::TempDir dir;
  write_checkpoint(table, dir / "c.ckpt");
  CHECK(cirforge::testing::read_bytes(dir / "c.ckpt") == bytes);
  CHECK(read_checkpoint(dir / "c.ckpt").size() == 4);
}
