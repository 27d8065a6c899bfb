#include "cfcrs/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include "cfcrs/error.hpp"

namespace cfcrs::nn {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + detail);
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

// c(m x n) += a(m x k) * b(k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c(m x n) += a(m x k) * b(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c(k x n) += a(m x k)^T * b(m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace

// --- SparseMatrix ---------------------------------------------------------

SparseMatrix SparseMatrix::from_triplets(
    std::size_t rows, std::size_t cols,
    const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries) {
  SparseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_offsets.assign(rows + 1, 0);
  for (const auto& [r, c, w] : entries) {
    if (r >= rows || c >= cols) {
      throw Error(ErrorCode::kShapeMismatch, "sparse entry out of range");
    }
    ++m.row_offsets[r + 1];
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_offsets[r + 1] += m.row_offsets[r];
  m.col_index.resize(entries.size());
  m.weight.resize(entries.size());
  std::vector<std::size_t> cursor(m.row_offsets.begin(), m.row_offsets.end() - 1);
  for (const auto& [r, c, w] : entries) {
    const std::size_t at = cursor[r]++;
    m.col_index[at] = c;
    m.weight[at] = w;
  }
  return m;
}

Tensor SparseMatrix::to_dense() const {
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) {
      out.at(r, col_index[e]) += weight[e];
    }
  }
  return out;
}

// --- Graph ----------------------------------------------------------------

const Tensor& Expr::value() const { return graph_->value_of(id_); }

const Tensor& Graph::value_of(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Tensor& Graph::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor& v = value_of(id);
    n.grad = Tensor(v.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Expr Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Expr(this, nodes_.size() - 1);
}

Expr Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Expr Graph::input(Tensor value, std::string name) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_;
  n.name = std::move(name);
  return push(std::move(n));
}

Expr Graph::param(const ParamStore& store, const std::string& name) {
  const auto key = std::make_pair(&store, name);
  if (auto it = params_.find(key); it != params_.end()) {
    return Expr(this, it->second);
  }
  Node n;
  n.external = &store.get(name);
  if (!store.frozen() && record_) {
    n.needs_grad = true;
    n.name = name;
  }
  Expr e = push(std::move(n));
  params_.emplace(key, e.id());
  return e;
}

Expr Graph::record(const char* op, Tensor value, std::span<const Expr> parents,
                   BackwardFn fn) {
  if (!value.all_finite()) {
    throw Error(ErrorCode::kNonFinite, std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Expr& p : parents) {
      if (nodes_[p.id()].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Gradients Graph::backward(Expr loss) {
  if (!record_) {
    throw Error(ErrorCode::kConfigError, "backward on a non-recording graph");
  }
  const Tensor& lv = loss.value();
  if (lv.size() != 1) {
    throw Error(ErrorCode::kNonScalarLoss, "loss has shape " + lv.shape_string());
  }
  if (backward_done_) {
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
  }
  backward_done_ = true;
  grad_accumulator(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
  Gradients out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.name.empty() || !n.needs_grad) continue;
    Tensor g = n.has_grad ? n.grad : Tensor(value_of(id).shape());
    if (!g.all_finite()) {
      throw Error(ErrorCode::kNonFiniteGradient, n.name);
    }
    auto [it, inserted] = out.emplace(n.name, std::move(g));
    if (!inserted) {
      // The same name bound twice (e.g. two stores): accumulate.
      const Tensor& extra = n.grad;
      if (n.has_grad) {
        for (std::size_t i = 0; i < extra.size(); ++i) it->second[i] += extra[i];
      }
    }
  }
  return out;
}

Tensor Graph::grad(Expr e) const {
  const Node& n = nodes_[e.id()];
  if (n.has_grad) return n.grad;
  return Tensor(value_of(e.id()).shape());
}

// --- operations -----------------------------------------------------------

Expr matmul(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", dims(av) + " * " + dims(bv));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::matrix(m, n);
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", std::move(out), {a, b},
                          [ia, ib, m, k, n](Graph& g, std::size_t self) {
                            const double* dc = g.grad_of(self).values().data();
                            if (g.needs_grad(ia)) {
                              gemm_nt(dc, g.value_of(ib).values().data(),
                                      g.grad_accumulator(ia).values().data(), m, n, k);
                            }
                            if (g.needs_grad(ib)) {
                              gemm_tn(g.value_of(ia).values().data(), dc,
                                      g.grad_accumulator(ib).values().data(), m, k, n);
                            }
                          });
}

Expr matmul_nt(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt", dims(av) + " * " + dims(bv) + "^T");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out = Tensor::matrix(m, n);
  gemm_nt(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul_nt", std::move(out), {a, b},
                          [ia, ib, m, k, n](Graph& g, std::size_t self) {
                            const double* dc = g.grad_of(self).values().data();
                            if (g.needs_grad(ia)) {
                              gemm_nn(dc, g.value_of(ib).values().data(),
                                      g.grad_accumulator(ia).values().data(), m, n, k);
                            }
                            if (g.needs_grad(ib)) {
                              gemm_tn(dc, g.value_of(ia).values().data(),
                                      g.grad_accumulator(ib).values().data(), m, n, k);
                            }
                          });
}

Expr transpose(Expr a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id();
  return a.graph().record("transpose", std::move(out), {a},
                          [ia, r, c](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                ga[i * c + j] += d[j * r + i];
                          });
}

Expr add(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.rows(), c = av.cols();
  const bool broadcast = !(bv.rows() == r && bv.cols() == c);
  require(!broadcast || (bv.rows() == 1 && bv.cols() == c), "add",
          dims(av) + " + " + dims(bv));
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = av[i * c + j] + (broadcast ? bv[j] : bv[i * c + j]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("add", std::move(out), {a, b},
                          [ia, ib, r, c, broadcast](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            if (g.needs_grad(ia)) {
                              Tensor& ga = g.grad_accumulator(ia);
                              for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
                            }
                            if (g.needs_grad(ib)) {
                              Tensor& gb = g.grad_accumulator(ib);
                              if (broadcast) {
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j) gb[j] += d[i * c + j];
                              } else {
                                for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
                              }
                            }
                          });
}

Expr sub(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub",
          dims(av) + " - " + dims(bv));
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("sub", std::move(out), {a, b},
                          [ia, ib](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            if (g.needs_grad(ia)) {
                              Tensor& ga = g.grad_accumulator(ia);
                              for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
                            }
                            if (g.needs_grad(ib)) {
                              Tensor& gb = g.grad_accumulator(ib);
                              for (std::size_t i = 0; i < d.size(); ++i) gb[i] -= d[i];
                            }
                          });
}

Expr mul(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul",
          dims(av) + " .* " + dims(bv));
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("mul", std::move(out), {a, b},
                          [ia, ib](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            if (g.needs_grad(ia)) {
                              const Tensor& bv = g.value_of(ib);
                              Tensor& ga = g.grad_accumulator(ia);
                              for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * bv[i];
                            }
                            if (g.needs_grad(ib)) {
                              const Tensor& av = g.value_of(ia);
                              Tensor& gb = g.grad_accumulator(ib);
                              for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * av[i];
                            }
                          });
}

Expr scale(Expr a, double s) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  const std::size_t ia = a.id();
  return a.graph().record("scale", std::move(out), {a},
                          [ia, s](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * s;
                          });
}

Expr tanh(Expr a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
  const std::size_t ia = a.id();
  return a.graph().record("tanh", std::move(out), {a},
                          [ia](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            const Tensor& y = g.value_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i)
                              ga[i] += d[i] * (1.0 - y[i] * y[i]);
                          });
}

Expr relu(Expr a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const std::size_t ia = a.id();
  return a.graph().record("relu", std::move(out), {a},
                          [ia](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            const Tensor& x = g.value_of(ia);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i)
                              if (x[i] > 0.0) ga[i] += d[i];
                          });
}

Expr gelu(Expr a) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  const std::size_t ia = a.id();
  return a.graph().record("gelu", std::move(out), {a},
                          [ia](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            const Tensor& xv = g.value_of(ia);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) {
                              const double x = xv[i];
                              const double t = std::tanh(kC * (x + kA * x * x * x));
                              const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
                              ga[i] += d[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
                            }
                          });
}

Expr sum(Expr a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.graph().record("sum", Tensor::scalar(s), {a},
                          [ia](Graph& g, std::size_t self) {
                            const double d = g.grad_of(self)[0];
                            Tensor& ga = g.grad_accumulator(ia);
                            for (double& v : ga.values()) v += d;
                          });
}

Expr mean(Expr a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Expr softmax_rows(Expr a, bool causal) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t width = causal ? std::min(c, i + 1) : c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, av.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) /= z;
  }
  const std::size_t ia = a.id();
  return a.graph().record("softmax_rows", std::move(out), {a},
                          [ia, r, c, causal](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            const Tensor& y = g.value_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < r; ++i) {
                              const std::size_t width = causal ? std::min(c, i + 1) : c;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < width; ++j)
                                dot += d[i * c + j] * y[i * c + j];
                              for (std::size_t j = 0; j < width; ++j)
                                ga[i * c + j] += y[i * c + j] * (d[i * c + j] - dot);
                            }
                          });
}

Expr log_softmax_pick(
    Expr logits, std::shared_ptr<const std::vector<std::vector<std::int32_t>>> candidates,
    std::vector<std::int32_t> targets, double temperature) {
  const Tensor& lv = logits.value();
  const std::size_t r = lv.rows(), c = lv.cols();
  require(targets.size() == r, "log_softmax_pick", "one target per row required");
  require(!candidates || candidates->size() == r, "log_softmax_pick",
          "one candidate list per row required");
  require(temperature > 0.0, "log_softmax_pick", "temperature must be positive");
  const double inv_t = 1.0 / temperature;

  // Per-row normaliser, kept for the adjoint.
  auto log_z = std::make_shared<std::vector<double>>(r);
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::vector<std::int32_t>* cand =
        candidates && !(*candidates)[i].empty() ? &(*candidates)[i] : nullptr;
    const std::size_t count = cand ? cand->size() : c;
    auto col = [&](std::size_t k) -> std::size_t {
      return cand ? static_cast<std::size_t>((*cand)[k]) : k;
    };
    const auto t = static_cast<std::size_t>(targets[i]);
    bool found = false;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = col(k);
      require(j < c, "log_softmax_pick", "candidate out of range");
      found = found || j == t;
      mx = std::max(mx, lv.at(i, j) * inv_t);
    }
    if (!found) {
      throw Error(ErrorCode::kConstraintViolation,
                  "target " + std::to_string(targets[i]) + " not among candidates of row " +
                      std::to_string(i));
    }
    double z = 0.0;
    for (std::size_t k = 0; k < count; ++k) z += std::exp(lv.at(i, col(k)) * inv_t - mx);
    (*log_z)[i] = mx + std::log(z);
    out[i] = lv.at(i, t) * inv_t - (*log_z)[i];
  }
  const std::size_t il = logits.id();
  return logits.graph().record(
      "log_softmax_pick", std::move(out), {logits},
      [il, r, c, inv_t, candidates, targets = std::move(targets), log_z](Graph& g,
                                                                         std::size_t self) {
        const Tensor& d = g.grad_of(self);
        const Tensor& lv = g.value_of(il);
        Tensor& gl = g.grad_accumulator(il);
        for (std::size_t i = 0; i < r; ++i) {
          const double di = d[i];
          if (di == 0.0) continue;
          const std::vector<std::int32_t>* cand =
              candidates && !(*candidates)[i].empty() ? &(*candidates)[i] : nullptr;
          const std::size_t count = cand ? cand->size() : c;
          for (std::size_t k = 0; k < count; ++k) {
            const std::size_t j = cand ? static_cast<std::size_t>((*cand)[k]) : k;
            const double p = std::exp(lv[i * c + j] * inv_t - (*log_z)[i]);
            gl[i * c + j] -= di * inv_t * p;
          }
          gl[i * c + static_cast<std::size_t>(targets[i])] += di * inv_t;
        }
      });
}

Expr layer_norm(Expr x, Expr gain, Expr bias, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  require(gv.size() == c && bv.size() == c, "layer_norm", "gain/bias width mismatch");
  Tensor out = Tensor::matrix(r, c);
  auto normed = std::make_shared<Tensor>(Tensor::matrix(r, c));
  auto inv_sd = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double dlt = xv.at(i, j) - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (xv.at(i, j) - mu) * is;
      normed->at(i, j) = xh;
      out.at(i, j) = xh * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [ix, ig, ib, r, c, normed, inv_sd](Graph& g, std::size_t self) {
        const Tensor& d = g.grad_of(self);
        const Tensor& gv = g.value_of(ig);
        if (g.needs_grad(ig)) {
          Tensor& gg = g.grad_accumulator(ig);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += d[i * c + j] * normed->at(i, j);
        }
        if (g.needs_grad(ib)) {
          Tensor& gb = g.grad_accumulator(ib);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += d[i * c + j];
        }
        if (g.needs_grad(ix)) {
          Tensor& gx = g.grad_accumulator(ix);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = d[i * c + j] * gv[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * normed->at(i, j);
            }
            mean_dxh *= inv_c;
            mean_dxh_xh *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = d[i * c + j] * gv[j];
              gx[i * c + j] +=
                  (*inv_sd)[i] * (dxh - mean_dxh - normed->at(i, j) * mean_dxh_xh);
            }
          }
        }
      });
}

Expr concat_rows(std::span<const Expr> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t c = parts[0].value().cols();
  std::size_t r = 0;
  for (const Expr& p : parts) {
    require(p.value().cols() == c, "concat_rows", "column mismatch");
    r += p.value().rows();
  }
  Tensor out = Tensor::matrix(r, c);
  std::vector<std::size_t> ids, offsets;
  std::size_t at = 0;
  for (const Expr& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + at);
    ids.push_back(p.id());
    offsets.push_back(at);
    at += v.size();
  }
  return parts[0].graph().record(
      "concat_rows", std::move(out), parts,
      [ids, offsets](Graph& g, std::size_t self) {
        const Tensor& d = g.grad_of(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.needs_grad(ids[k])) continue;
          Tensor& gp = g.grad_accumulator(ids[k]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += d[offsets[k] + i];
        }
      });
}

Expr concat_cols(std::span<const Expr> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t r = parts[0].value().rows();
  std::size_t c = 0;
  for (const Expr& p : parts) {
    require(p.value().rows() == r, "concat_cols", "row mismatch");
    c += p.value().cols();
  }
  Tensor out = Tensor::matrix(r, c);
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t at = 0;
  for (const Expr& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, at + j) = v[i * w + j];
    ids.push_back(p.id());
    offsets.push_back(at);
    widths.push_back(w);
    at += w;
  }
  return parts[0].graph().record(
      "concat_cols", std::move(out), parts,
      [ids, offsets, widths, r, c](Graph& g, std::size_t self) {
        const Tensor& d = g.grad_of(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.needs_grad(ids[k])) continue;
          Tensor& gp = g.grad_accumulator(ids[k]);
          const std::size_t w = widths[k];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += d[i * c + offsets[k] + j];
        }
      });
}

Expr slice_rows(Expr a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require(begin + count <= av.rows(), "slice_rows", "range past end");
  const std::size_t c = av.cols();
  Tensor out = Tensor::matrix(count, c);
  std::copy(av.values().begin() + begin * c, av.values().begin() + (begin + count) * c,
            out.values().begin());
  const std::size_t ia = a.id();
  return a.graph().record("slice_rows", std::move(out), {a},
                          [ia, begin, c](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) ga[begin * c + i] += d[i];
                          });
}

Expr slice_cols(Expr a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require(begin + count <= av.cols(), "slice_cols", "range past end");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = av.at(i, begin + j);
  const std::size_t ia = a.id();
  return a.graph().record("slice_cols", std::move(out), {a},
                          [ia, begin, count, r, c](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < count; ++j)
                                ga[i * c + begin + j] += d[i * count + j];
                          });
}

Expr gather_rows(Expr a, std::vector<std::size_t> indices) {
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  Tensor out = Tensor::matrix(indices.size(), c);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] < av.rows(), "gather_rows", "index out of range");
    std::copy_n(av.values().begin() + indices[k] * c, c, out.values().begin() + k * c);
  }
  const std::size_t ia = a.id();
  return a.graph().record("gather_rows", std::move(out), {a},
                          [ia, c, indices = std::move(indices)](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t k = 0; k < indices.size(); ++k)
                              for (std::size_t j = 0; j < c; ++j)
                                ga[indices[k] * c + j] += d[k * c + j];
                          });
}

Expr reshape(Expr a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  require(rows * cols == av.size(), "reshape", "element count changes");
  Tensor out({rows, cols}, std::vector<double>(av.values().begin(), av.values().end()));
  const std::size_t ia = a.id();
  return a.graph().record("reshape", std::move(out), {a},
                          [ia](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& ga = g.grad_accumulator(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
                          });
}

Expr add_to_row(Expr a, std::size_t row, Expr delta) {
  const Tensor& av = a.value();
  const Tensor& dv = delta.value();
  require(row < av.rows(), "add_to_row", "row out of range");
  require(dv.size() == av.cols(), "add_to_row", "delta width mismatch");
  const std::size_t c = av.cols();
  Tensor out({av.rows(), c}, std::vector<double>(av.values().begin(), av.values().end()));
  for (std::size_t j = 0; j < c; ++j) out.at(row, j) += dv[j];
  const std::size_t ia = a.id(), id = delta.id();
  return a.graph().record("add_to_row", std::move(out), {a, delta},
                          [ia, id, row, c](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            if (g.needs_grad(ia)) {
                              Tensor& ga = g.grad_accumulator(ia);
                              for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
                            }
                            if (g.needs_grad(id)) {
                              Tensor& gd = g.grad_accumulator(id);
                              for (std::size_t j = 0; j < c; ++j) gd[j] += d[row * c + j];
                            }
                          });
}

Expr spmm(std::shared_ptr<const SparseMatrix> m, Expr h) {
  const Tensor& hv = h.value();
  require(m->cols == hv.rows(), "spmm", "sparse cols != dense rows");
  const std::size_t c = hv.cols();
  Tensor out = Tensor::matrix(m->rows, c);
  for (std::size_t r = 0; r < m->rows; ++r) {
    double* o = out.values().data() + r * c;
    for (std::size_t e = m->row_offsets[r]; e < m->row_offsets[r + 1]; ++e) {
      const double w = m->weight[e];
      const double* src = hv.values().data() + m->col_index[e] * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += w * src[j];
    }
  }
  const std::size_t ih = h.id();
  return h.graph().record("spmm", std::move(out), {h},
                          [ih, c, m](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& gh = g.grad_accumulator(ih);
                            for (std::size_t r = 0; r < m->rows; ++r) {
                              const double* dr = d.values().data() + r * c;
                              for (std::size_t e = m->row_offsets[r]; e < m->row_offsets[r + 1];
                                   ++e) {
                                const double w = m->weight[e];
                                double* dst = gh.values().data() + m->col_index[e] * c;
                                for (std::size_t j = 0; j < c; ++j) dst[j] += w * dr[j];
                              }
                            }
                          });
}

}  // namespace cfcrs::nn
