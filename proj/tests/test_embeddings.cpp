#include <doctest.h>

#include <cmath>

#include "cfcrs/embeddings.hpp"
#include "cfcrs/error.hpp"
#include "cfcrs/nn/grad_check.hpp"
#include "fixtures.hpp"

using namespace cfcrs;
using nn::Tensor;
using fixtures::throws_code;

namespace {

using Dense = std::vector<std::vector<double>>;

Dense zeros(std::size_t r, std::size_t c) { return Dense(r, std::vector<double>(c, 0.0)); }

Dense to_dense(const Tensor& t) {
  Dense out = zeros(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  }
  return out;
}

Dense mul(const Dense& a, const Dense& b) {
  Dense out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

void add_into(Dense& a, const Dense& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
}

void normalise_rows(Dense& a) {
  for (auto& row : a) {
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0) {
      for (double& v : row) v /= s;
    }
  }
}

// Independent dense R-GCN: builds every adjacency from the triples and user
// lists directly, forms each relation weight from the bases, and applies the
// layers.
Dense dense_rgcn(const HeterogeneousKG& hkg, const nn::ParamStore& store, const RgcnConfig& c) {
  const KnowledgeGraph& kg = hkg.base();
  const std::size_t ne = kg.num_entities(), n = hkg.num_nodes(), d = c.dim;
  std::vector<Dense> adj;
  for (std::size_t r = 0; r < kg.num_relations(); ++r) {
    Dense fwd = zeros(n, n), inv = zeros(n, n);
    for (const Triple& t : kg.triples()) {
      if (static_cast<std::size_t>(t.relation) != r) continue;
      fwd[t.tail][t.head] += 1;
      inv[t.head][t.tail] += 1;
    }
    adj.push_back(fwd);
    adj.push_back(inv);
  }
  Dense to_e = zeros(n, n), to_u = zeros(n, n);
  const Dense input = to_dense(store.get("rgcn.entity_input"));
  Dense h = zeros(n, d);
  for (std::size_t e = 0; e < ne; ++e) h[e] = input[e];
  for (std::size_t u = 0; u < hkg.num_users(); ++u) {
    const auto& ents = hkg.user(u).entities;
    for (EntityId e : ents) {
      to_e[e][ne + u] += 1;
      to_u[ne + u][e] += 1;
      for (std::size_t j = 0; j < d; ++j) h[ne + u][j] += input[e][j] / ents.size();
    }
  }
  adj.push_back(to_e);
  adj.push_back(to_u);
  for (auto& a : adj) normalise_rows(a);

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "rgcn.l" + std::to_string(l) + ".";
    const Dense bases = to_dense(store.get(p + "bases"));
    const Dense coeff = to_dense(store.get(p + "coeff"));
    Dense out = mul(h, to_dense(store.get(p + "self")));
    for (std::size_t ch = 0; ch < adj.size(); ++ch) {
      Dense w = zeros(d, d);
      for (std::size_t b = 0; b < c.num_bases; ++b) {
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < d; ++j) w[i][j] += coeff[ch][b] * bases[b * d + i][j];
        }
      }
      add_into(out, mul(mul(adj[ch], h), w));
    }
    const Tensor& bias = store.get(p + "bias");
    for (auto& row : out) {
      for (std::size_t j = 0; j < d; ++j) {
        row[j] += bias[j];
        if (c.activation == Activation::kTanh) row[j] = std::tanh(row[j]);
      }
    }
    h = out;
  }
  return h;
}

HeterogeneousKG toy_hkg() {
  auto kg = fixtures::kg_from(
      "i1\tg\tg1\ni2\tg\tg1\ni3\tg\tg2\ni2\tstar\ta1\ni3\tstar\ta1\ni1\tstar\ta1\n",
      "g1\tgenre\ng2\tgenre\ni1\titem\ni2\titem\ni3\titem\na1\tactor\nlone\titem\n");
  return attach_users(kg, {{"u1", {0, 2}}, {"u2", {2, 3, 5}}});
}

nn::ParamStore random_rgcn(const RgcnConfig& c, const RgcnStructure& s, std::uint64_t seed) {
  nn::ParamStore store;
  Rng rng(seed);
  init_rgcn(store, c, s.num_entities(), s.num_channels(), rng);
  for (std::size_t l = 0; l < c.layers; ++l) {
    store.get("rgcn.l" + std::to_string(l) + ".bias") = [&] {
      Tensor b({c.dim});
      for (std::size_t j = 0; j < c.dim; ++j) b[j] = 0.1 * static_cast<double>(j) - 0.2;
      return b;
    }();
  }
  return store;
}

void check_close(const Tensor& got, const Dense& want, double tol) {
  REQUIRE(got.rows() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    for (std::size_t j = 0; j < want[i].size(); ++j) CHECK(std::abs(got.at(i, j) - want[i][j]) < tol);
  }
}

}  // namespace

TEST_CASE("rgcn: single isolated node with identity self-loop returns its input") {
  auto kg = fixtures::kg_from("", "x\tt\n");
  HeterogeneousKG hkg = attach_users(kg, {});
  RgcnStructure s(hkg);
  CHECK(s.num_channels() == 2);
  const RgcnConfig c{.dim = 3, .layers = 1, .num_bases = 1, .activation = Activation::kLinear};
  nn::ParamStore store = random_rgcn(c, s, 1);
  store.get("rgcn.l0.self") = Tensor::matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) store.get("rgcn.l0.self").at(i, i) = 1.0;
  store.get("rgcn.l0.bias").fill(0.0);
  const EntityEmbeddings emb = compute_embeddings(store, s, c);
  CHECK(emb.table == store.get("rgcn.entity_input"));
}

TEST_CASE("rgcn: zero bases reduce every node to self-loop plus bias") {
  auto kg = fixtures::kg_from("a\tr\tb\n", "a\tt\nb\tt\n");
  HeterogeneousKG hkg = attach_users(kg, {});
  RgcnStructure s(hkg);
  const RgcnConfig c{.dim = 2, .layers = 1, .num_bases = 2, .activation = Activation::kLinear};
  nn::ParamStore store = random_rgcn(c, s, 2);
  store.get("rgcn.l0.bases").fill(0.0);
  const Dense h = to_dense(store.get("rgcn.entity_input"));
  Dense want = mul(h, to_dense(store.get("rgcn.l0.self")));
  for (auto& row : want) {
    for (std::size_t j = 0; j < 2; ++j) row[j] += store.get("rgcn.l0.bias")[j];
  }
  check_close(compute_embeddings(store, s, c).table, want, 1e-14);
}

TEST_CASE("rgcn: matches a dense reference implementation") {
  HeterogeneousKG hkg = toy_hkg();
  RgcnStructure s(hkg);
  CHECK(s.num_nodes() == 9);
  CHECK(s.num_channels() == 6);
  for (std::size_t layers : {1u, 2u}) {
    for (Activation act : {Activation::kLinear, Activation::kTanh}) {
      const RgcnConfig c{.dim = 4, .layers = layers, .num_bases = 3, .activation = act};
      nn::ParamStore store = random_rgcn(c, s, 10 + layers);
      check_close(compute_embeddings(store, s, c).table, dense_rgcn(hkg, store, c), 1e-10);
    }
  }
}

TEST_CASE("rgcn: relabelling entities permutes the output rows") {
  const std::string types = "a\tt\nb\tt\nc\tu\nd\tu\n";
  auto kg1 = fixtures::kg_from("a\tr\tb\nb\tr\tc\nd\tr\ta\n", types);
  auto kg2 = fixtures::kg_from("d\tr\ta\nb\tr\tc\na\tr\tb\n", types);
  REQUIRE(kg1->entity_id("a") != kg2->entity_id("a"));
  const RgcnConfig c{.dim = 3, .layers = 2, .num_bases = 2, .activation = Activation::kTanh};
  HeterogeneousKG h1 = attach_users(kg1, {{"u", {kg1->entity_id("c"), kg1->entity_id("d")}}});
  HeterogeneousKG h2 = attach_users(kg2, {{"u", {kg2->entity_id("c"), kg2->entity_id("d")}}});
  RgcnStructure s1(h1), s2(h2);
  nn::ParamStore p1 = random_rgcn(c, s1, 3);
  nn::ParamStore p2 = p1;
  for (const char* name : {"a", "b", "c", "d"}) {
    const auto src = p1.get("rgcn.entity_input").row_span(kg1->entity_id(name));
    auto dst = p2.get("rgcn.entity_input").row_span(kg2->entity_id(name));
    std::copy(src.begin(), src.end(), dst.begin());
  }
  const Tensor o1 = compute_embeddings(p1, s1, c).table;
  const Tensor o2 = compute_embeddings(p2, s2, c).table;
  for (const char* name : {"a", "b", "c", "d"}) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(o1.at(kg1->entity_id(name), j) - o2.at(kg2->entity_id(name), j)) < 1e-12);
    }
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(o1.at(4, j) - o2.at(4, j)) < 1e-12);
}

TEST_CASE("rgcn: too many bases is a config error") {
  HeterogeneousKG hkg = toy_hkg();
  RgcnStructure s(hkg);
  nn::ParamStore store;
  Rng rng(0);
  CHECK(throws_code(ErrorCode::kConfigError, [&] {
    init_rgcn(store, RgcnConfig{.dim = 2, .num_bases = 7}, s.num_entities(), s.num_channels(), rng);
  }));
}

TEST_CASE("rgcn: gradients match finite differences") {
  HeterogeneousKG hkg = toy_hkg();
  RgcnStructure s(hkg);
  const RgcnConfig c{.dim = 3, .layers = 2, .num_bases = 2, .activation = Activation::kTanh};
  nn::ParamStore store = random_rgcn(c, s, 4);
  Rng rng(5);
  const Tensor w = fixtures::random_matrix(s.num_nodes(), 3, rng);
  nn::LossFn f = [&](nn::Graph& g) {
    return nn::sum(nn::mul(rgcn_forward(g, store, s, c), g.constant(w)));
  };
  CHECK(nn::grad_check(f, store).max_relative_error < 1e-6);
}

TEST_CASE("encode_user: hand-computed attention") {
  const Tensor e = [] {
    Tensor t = Tensor::matrix(2, 2);
    t.at(0, 0) = 1.0;
    t.at(1, 1) = 1.0;
    return t;
  }();
  Tensor w = Tensor::matrix(1, 2);
  w.at(0, 0) = 1.0;
  w.at(0, 1) = 2.0;
  const Tensor b({1}, {1.0});
  const UserPreference pref = encode_user(e, w, b);
  const double z0 = std::exp(std::tanh(1.0)), z1 = std::exp(std::tanh(2.0));
  const double a0 = z0 / (z0 + z1), a1 = z1 / (z0 + z1);
  REQUIRE(pref.alpha.size() == 2);
  CHECK(std::abs(pref.alpha[0] - a0) < 1e-12);
  CHECK(std::abs(pref.alpha[1] - a1) < 1e-12);
  CHECK(std::abs(pref.e_u.at(0, 0) - a0) < 1e-12);
  CHECK(std::abs(pref.e_u.at(0, 1) - a1) < 1e-12);
}

TEST_CASE("encode_user: one entity gets all the weight, none is an error") {
  Rng rng(6);
  const Tensor e = fixtures::random_matrix(1, 4, rng);
  const Tensor w = fixtures::random_matrix(3, 4, rng);
  const Tensor b({3}, {0.5, -0.1, 0.2});
  const UserPreference pref = encode_user(e, w, b);
  CHECK(pref.alpha == std::vector<double>{1.0});
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(pref.e_u.at(0, j) - e.at(0, j)) < 1e-15);
  CHECK(throws_code(ErrorCode::kEmptyEntitySet,
                    [&] { encode_user(Tensor::matrix(0, 4), w, b); }));
}

TEST_CASE("encode_user: weights are a distribution and order-equivariant") {
  Rng rng(7);
  const Tensor e = fixtures::random_matrix(5, 4, rng);
  const Tensor w = fixtures::random_matrix(3, 4, rng);
  const Tensor b({3}, {0.3, 0.9, -0.4});
  const UserPreference pref = encode_user(e, w, b);
  double total = 0.0;
  for (double a : pref.alpha) {
    CHECK(a > 0.0);
    total += a;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);

  Tensor reversed = Tensor::matrix(5, 4);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) reversed.at(i, j) = e.at(4 - i, j);
  }
  const UserPreference rev = encode_user(reversed, w, b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(rev.alpha[i] - pref.alpha[4 - i]) < 1e-12);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(rev.e_u.at(0, j) - pref.e_u.at(0, j)) < 1e-12);
}

TEST_CASE("encode_user: gradients match finite differences") {
  nn::ParamStore store;
  Rng rng(8);
  store.add("e", fixtures::random_matrix(4, 3, rng));
  init_user_encoder(store, "att", 3, 2, rng);
  const Tensor w = fixtures::random_matrix(1, 3, rng);
  nn::LossFn f = [&](nn::Graph& g) {
    nn::Expr e_u = encode_user(g.param(store, "e"), g.param(store, "att.W"), g.param(store, "att.b"));
    return nn::sum(nn::mul(e_u, g.constant(w)));
  };
  CHECK(nn::grad_check(f, store).max_relative_error < 1e-6);
}

TEST_CASE("PreferenceEncoder: empty list encodes to zero") {
  Rng rng(9);
  PreferenceEncoder enc{EntityEmbeddings{fixtures::random_matrix(3, 2, rng), 3},
                        fixtures::random_matrix(2, 2, rng), Tensor({2}, {0.1, 0.2})};
  const Tensor z = enc.encode({});
  CHECK(z.rows() == 1);
  CHECK(z.squared_norm() == 0.0);
  const std::vector<EntityId> one = {1};
  const Tensor e1 = enc.encode(one);
  for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(e1.at(0, j) - enc.embeddings.table.at(1, j)) < 1e-15);
}
