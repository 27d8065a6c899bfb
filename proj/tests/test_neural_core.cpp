#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cfcrs/error.hpp"
#include "cfcrs/nn/checkpoint.hpp"
#include "cfcrs/nn/grad_check.hpp"
#include "cfcrs/nn/graph.hpp"
#include "cfcrs/nn/optimizer.hpp"
#include "fixtures.hpp"

using namespace cfcrs;
using namespace cfcrs::nn;

namespace {

ParamStore random_store(std::initializer_list<std::tuple<const char*, std::size_t, std::size_t>> specs,
                        std::uint64_t seed) {
  Rng rng(seed);
  ParamStore s;
  for (const auto& [name, r, c] : specs) s.add(name, fixtures::random_matrix(r, c, rng));
  return s;
}

double check(const LossFn& f, ParamStore& store) { return grad_check(f, store).max_relative_error; }

}  // namespace

TEST_CASE("backward of sum of squares at zero is zero") {
  ParamStore s;
  s.add("p", Tensor::matrix(2, 3));
  Graph g;
  Expr p = g.param(s, "p");
  Gradients grads = g.backward(sum(mul(p, p)));
  for (double v : grads.at("p").values()) CHECK(v == 0.0);
}

TEST_CASE("backward of a linear form returns its coefficients") {
  ParamStore s;
  s.add("w", Tensor::row({0.3, -1.2, 2.0}));
  Graph g;
  Expr x = g.constant(Tensor::row({1, 2, 3}));
  Gradients grads = g.backward(sum(mul(g.param(s, "w"), x)));
  CHECK(grads.at("w").values()[0] == 1.0);
  CHECK(grads.at("w").values()[1] == 2.0);
  CHECK(grads.at("w").values()[2] == 3.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  ParamStore s;
  s.add("w", Tensor::row({1, 2}));
  Graph g;
  Expr w = g.param(s, "w");
  CHECK_THROWS_AS(g.backward(w), Error);
}

TEST_CASE("frozen store enters the graph as constants") {
  ParamStore s;
  s.add("w", Tensor::row({1, 2}));
  s.set_frozen(true);
  Graph g;
  Gradients grads = g.backward(sum(g.param(s, "w")));
  CHECK(grads.count("w") == 0);
}

TEST_CASE("three layer composition matches finite differences") {
  ParamStore s = random_store({{"w1", 4, 5}, {"b1", 1, 5}, {"w2", 5, 3}, {"w3", 3, 2}}, 7);
  Rng rng(8);
  const Tensor x = fixtures::random_matrix(3, 4, rng);
  LossFn f = [&](Graph& g) {
    Expr h = tanh(add(matmul(g.constant(x), g.param(s, "w1")), g.param(s, "b1")));
    h = gelu(matmul(h, g.param(s, "w2")));
    Expr out = matmul(h, g.param(s, "w3"));
    return sum(mul(out, out));
  };
  CHECK(check(f, s) < 1e-6);
}

TEST_CASE("grad check on a quadratic form is exact to roundoff") {
  ParamStore s = random_store({{"x", 1, 4}}, 3);
  Rng rng(4);
  const Tensor a = fixtures::random_matrix(4, 4, rng);
  LossFn f = [&](Graph& g) {
    Expr x = g.param(s, "x");
    return sum(mul(matmul(x, g.constant(a)), x));
  };
  CHECK(check(f, s) < 1e-9);
}

TEST_CASE("grad check on a softmax cross-entropy head") {
  ParamStore s = random_store({{"w", 3, 5}, {"b", 1, 5}}, 11);
  Rng rng(12);
  const Tensor x = fixtures::random_matrix(4, 3, rng);
  LossFn f = [&](Graph& g) {
    Expr logits = add(matmul(g.constant(x), g.param(s, "w")), g.param(s, "b"));
    return scale(sum(log_softmax_pick(logits, nullptr, {0, 3, 2, 4})), -0.25);
  };
  CHECK(check(f, s) < 1e-6);
}

TEST_CASE("grad check detects a planted gradient fault") {
  ParamStore s = random_store({{"w", 2, 2}}, 5);
  LossFn f = [&](Graph& g) {
    Expr w = g.param(s, "w");
    return sum(mul(w, w));
  };
  Gradients analytic = analytic_gradient(f, s);
  analytic.at("w")[1] += 0.1;
  Gradients numeric = numeric_gradient(f, s, 1e-5);
  CHECK(compare_gradients(analytic, numeric).max_relative_error > 1e-2);
}

TEST_CASE("every op passes grad check") {
  ParamStore s = random_store({{"a", 3, 4}, {"b", 3, 4}, {"c", 4, 3}, {"r", 1, 4}}, 21);
  s.add("g", Tensor::row({1.1, 0.9, 1.3, 0.7}));
  s.add("s", Tensor::row({0.1, -0.2, 0.3, 0.05}));
  auto cands = std::make_shared<const std::vector<std::vector<std::int32_t>>>(
      std::vector<std::vector<std::int32_t>>{{0, 2}, {}, {1, 2, 3}});
  auto sp = std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(
      2, 4, {{0, 0, 0.5}, {0, 3, 0.5}, {1, 1, 1.0}}));
  Rng rng(22);
  const Tensor w = fixtures::random_matrix(3, 4, rng);
  const Tensor w33 = fixtures::random_matrix(3, 3, rng);
  std::vector<std::pair<std::string, LossFn>> cases = {
      {"matmul", [&](Graph& g) { return sum(mul(matmul(g.param(s, "a"), g.param(s, "c")), g.constant(w33))); }},
      {"matmul_nt", [&](Graph& g) { Expr m = matmul_nt(g.param(s, "a"), g.param(s, "b")); return sum(mul(m, m)); }},
      {"transpose", [&](Graph& g) { return sum(mul(transpose(g.param(s, "a")), g.param(s, "c"))); }},
      {"add_broadcast", [&](Graph& g) { Expr m = add(g.param(s, "a"), g.param(s, "r")); return sum(mul(m, m)); }},
      {"sub", [&](Graph& g) { Expr m = sub(g.param(s, "a"), g.param(s, "b")); return sum(mul(m, m)); }},
      {"scale", [&](Graph& g) { Expr m = scale(g.param(s, "a"), -1.5); return sum(mul(m, g.param(s, "b"))); }},
      {"tanh", [&](Graph& g) { return sum(mul(tanh(g.param(s, "a")), g.constant(w))); }},
      {"relu", [&](Graph& g) { return sum(mul(relu(g.param(s, "a")), g.constant(w))); }},
      {"gelu", [&](Graph& g) { return sum(mul(gelu(g.param(s, "a")), g.constant(w))); }},
      {"mean", [&](Graph& g) { Expr m = mul(g.param(s, "a"), g.param(s, "b")); return mean(m); }},
      {"softmax", [&](Graph& g) { return sum(mul(softmax_rows(g.param(s, "a")), g.constant(w))); }},
      {"softmax_causal", [&](Graph& g) { Expr sq = matmul_nt(g.param(s, "a"), g.param(s, "b")); return sum(mul(softmax_rows(sq, true), g.constant(w33))); }},
      {"log_softmax_pick", [&](Graph& g) { return sum(log_softmax_pick(g.param(s, "a"), cands, {2, 1, 3}, 0.7)); }},
      {"layer_norm", [&](Graph& g) { return sum(mul(layer_norm(g.param(s, "a"), g.param(s, "g"), g.param(s, "s")), g.constant(w))); }},
      {"concat", [&](Graph& g) {
         Expr parts[] = {g.param(s, "a"), g.param(s, "b")};
         Expr cols[] = {g.param(s, "a"), g.param(s, "b")};
         Expr r = concat_rows(parts), c = concat_cols(cols);
         return add(sum(mul(r, r)), sum(mul(c, tanh(c)))); }},
      {"slice", [&](Graph& g) { Expr m = slice_cols(slice_rows(g.param(s, "a"), 1, 2), 1, 3); return sum(mul(m, m)); }},
      {"gather", [&](Graph& g) { Expr m = gather_rows(g.param(s, "a"), {2, 0, 2}); return sum(mul(m, tanh(m))); }},
      {"reshape", [&](Graph& g) { Expr m = reshape(g.param(s, "a"), 2, 6); return sum(mul(m, tanh(m))); }},
      {"add_to_row", [&](Graph& g) { Expr m = add_to_row(g.param(s, "a"), 1, g.param(s, "r")); return sum(mul(m, tanh(m))); }},
      {"spmm", [&](Graph& g) { Expr m = spmm(sp, g.param(s, "c")); return sum(mul(m, tanh(m))); }},
  };
  for (auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(check(f, s) < 1e-6);
  }
}

TEST_CASE("optimizer: zero gradient and zero decay leaves parameters") {
  ParamStore s = random_store({{"w", 2, 2}}, 1);
  const Tensor before = s.get("w");
  Gradients grads = {{"w", Tensor::matrix(2, 2)}};
  optimizer_step(s, grads, AdamW{.lr = 0.1, .weight_decay = 0.0});
  CHECK(s.get("w") == before);
  CHECK(s.steps() == 1);
}

TEST_CASE("optimizer: decoupled decay scales by 1 - lr * wd") {
  ParamStore s = random_store({{"w", 2, 2}}, 1);
  Tensor expected = s.get("w");
  Gradients grads = {{"w", Tensor::matrix(2, 2)}};
  const AdamW opt{.lr = 0.01, .weight_decay = 0.5};
  for (int step = 0; step < 3; ++step) {
    optimizer_step(s, grads, opt);
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] *= 1.0 - 0.01 * 0.5;
  }
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(s.get("w")[i] == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("optimizer converges on a convex quadratic") {
  ParamStore s = random_store({{"w", 1, 6}}, 99);
  LossFn f = [&](Graph& g) {
    Expr w = g.param(s, "w");
    return sum(mul(w, w));
  };
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    Graph g;
    Expr l = f(g);
    loss = l.scalar();
    optimizer_step(s, g.backward(l), AdamW{.lr = 0.05, .weight_decay = 0.0});
  }
  Graph g(false);
  loss = f(g).scalar();
  CHECK(loss < 1e-6);
}

TEST_CASE("optimizer rejects a non-finite gradient") {
  ParamStore s = random_store({{"w", 1, 2}}, 1);
  Gradients grads = {{"w", Tensor::row({NAN, 0.0})}};
  CHECK_THROWS_AS(optimizer_step(s, grads, AdamW{}), Error);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  ParamStore s = random_store({{"a", 3, 2}, {"b.c", 1, 5}}, 2);
  s.add("scalar", Tensor::scalar(3.25));
  for (DType dtype : {DType::kF64, DType::kF32}) {
    std::ostringstream first;
    save_checkpoint(s, first, dtype);
    std::istringstream in(first.str());
    ParamStore loaded = load_checkpoint(in);
    std::ostringstream second;
    save_checkpoint(loaded, second, dtype);
    CHECK(first.str() == second.str());
    CHECK(loaded.names() == s.names());
    if (dtype == DType::kF64) CHECK(loaded.get("a") == s.get("a"));
  }
}

TEST_CASE("checkpoint rejects a corrupt header") {
  std::istringstream in("NOTACKPT");
  CHECK_THROWS_AS(load_checkpoint(in), Error);
}
