#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfcrs/nn/param_store.hpp"
#include "cfcrs/nn/tensor.hpp"

namespace cfcrs::nn {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
class Expr {
 public:
  Expr() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

 private:
  friend class Graph;
  Expr(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Constant CSR matrix, used for neighbourhood aggregation.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // rows + 1 entries
  std::vector<std::size_t> col_index;
  std::vector<double> weight;

  // Builds from (row, col, weight) triplets; entries are kept in input order
  // within each row.
  static SparseMatrix from_triplets(
      std::size_t rows, std::size_t cols,
      const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries);
  Tensor to_dense() const;
};

// Reverse-mode tape. Values are computed eagerly as operations are added;
// backward() replays the recorded adjoints in reverse creation order.
// A graph built with record=false keeps values only and cannot backprop.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Tensor value);
  // Differentiable leaf reported under `name` by backward().
  Expr input(Tensor value, std::string name);
  // Leaf bound to a stored parameter (no copy). The store must outlive the
  // graph and must not be modified while the graph is in use.
  Expr param(const ParamStore& store, const std::string& name);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a 1x1 loss for every named leaf in the graph.
  Gradients backward(Expr loss);
  // Gradient of any node after backward(); zeros when unreached.
  Tensor grad(Expr e) const;

  // Op-implementation interface.
  Expr record(const char* op, Tensor value, std::span<const Expr> parents,
              BackwardFn fn);
  Expr record(const char* op, Tensor value, std::initializer_list<Expr> parents,
              BackwardFn fn) {
    return record(op, std::move(value),
                  std::span<const Expr>(parents.begin(), parents.size()),
                  std::move(fn));
  }
  const Tensor& value_of(std::size_t id) const;
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_accumulator(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::string name;
    BackwardFn backward;
  };

  Expr push(Node node);

  bool record_;
  std::deque<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, std::size_t> params_;
  bool backward_done_ = false;
};

// --- operations -----------------------------------------------------------

Expr matmul(Expr a, Expr b);     // a * b
Expr matmul_nt(Expr a, Expr b);  // a * b^T
Expr transpose(Expr a);
// Elementwise sum; b may also be a single row broadcast over a's rows.
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);  // elementwise
Expr scale(Expr a, double s);
Expr tanh(Expr a);
Expr relu(Expr a);
Expr gelu(Expr a);
Expr sum(Expr a);   // 1x1
Expr mean(Expr a);  // 1x1
// Row-wise softmax. With causal=true, row i only covers columns 0..i.
Expr softmax_rows(Expr a, bool causal = false);
// Per row i: log-softmax of logits(i,:)/temperature restricted to
// candidates[i] (all columns when candidates[i] is empty), evaluated at
// targets[i]. Returns an (rows x 1) column.
Expr log_softmax_pick(Expr logits,
                      std::shared_ptr<const std::vector<std::vector<std::int32_t>>> candidates,
                      std::vector<std::int32_t> targets, double temperature = 1.0);
Expr layer_norm(Expr x, Expr gain, Expr bias, double eps = 1e-5);
Expr concat_rows(std::span<const Expr> parts);
Expr concat_cols(std::span<const Expr> parts);
Expr slice_rows(Expr a, std::size_t begin, std::size_t count);
Expr slice_cols(Expr a, std::size_t begin, std::size_t count);
Expr gather_rows(Expr a, std::vector<std::size_t> indices);
Expr reshape(Expr a, std::size_t rows, std::size_t cols);
// Adds `delta` (1 x cols) to row `row` of a.
Expr add_to_row(Expr a, std::size_t row, Expr delta);
// Constant sparse matrix times dense expression.
Expr spmm(std::shared_ptr<const SparseMatrix> m, Expr h);

inline Expr operator+(Expr a, Expr b) { return add(a, b); }
inline Expr operator-(Expr a, Expr b) { return sub(a, b); }
inline Expr operator*(double s, Expr a) { return scale(a, s); }

}  // namespace cfcrs::nn
