#pragma once

// Minimal reverse-mode autodiff over dense row-major matrices. Each op records
// a closure that pushes its output gradient back to its inputs; backward()
// sweeps the tape once in reverse creation order. Instantiated for float
// (training) and double (gradient checks).

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "compass/matrix.hpp"

namespace compass::nn {

/// Grouped multi-head scaled dot-product attention layout. Queries are
/// (groups * queries_per_group) x d, keys/values (groups * keys_per_group) x d;
/// each query only sees the keys of its own group.
struct AttentionSpec {
  int heads = 1;
  int groups = 1;
  int queries_per_group = 1;
  int keys_per_group = 1;
  /// groups * keys_per_group flags; empty means every key is valid.
  std::vector<std::uint8_t> key_valid;
};

/// Constant row mixing: y[r] = sum_i w_i * x[src_i].
struct RowMix {
  std::vector<std::vector<std::pair<int, double>>> rows;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix<T> value);
  /// Leaf bound to external storage; the pointee must outlive the tape.
  Var parameter(const Matrix<T>* value);

  const Matrix<T>& value(Var v) const;
  /// Accumulated gradient; an empty matrix when nothing reached the node.
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Var matmul(Var a, Var b);     ///< a * b
  Var matmul_nt(Var a, Var b);  ///< a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  ///< broadcast a 1 x c row over every row of a
  Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }
  Var scale(Var a, T s);
  Var layer_norm(Var x, Var gain, Var bias);  ///< row-wise, eps 1e-5
  Var gelu(Var x);                            ///< tanh approximation
  Var tanh(Var x);
  Var concat_cols(std::span<const Var> parts);
  Var gather_rows(Var x, std::vector<int> rows);
  Var mix_rows(Var x, RowMix mix);
  Var attention(Var q, Var k, Var v, AttentionSpec spec);
  /// Log-softmax over every entry of x.
  Var log_softmax(Var x);

  /// Attention probabilities of an attention node, laid out
  /// [group][head][query][key]; masked keys hold exactly 0.
  const std::vector<T>& attention_weights(Var out) const;

  /// Adds `g` to the output gradient of v. Call before backward().
  void seed(Var v, const Matrix<T>& g);
  /// Single reverse sweep. Throws ContractError without prior seeds or when
  /// called twice.
  void backward();

 private:
  struct Node {
    Matrix<T> own;
    const Matrix<T>* ext = nullptr;
    Matrix<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
    std::vector<T> saved;  // op-specific cache (attention weights, ...)
  };

  Var push(Matrix<T> value, bool needs_grad, std::function<void(Tape&, int)> back);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix<T>& acc(int id);
  const Matrix<T>& val(int id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }

  std::vector<Node> nodes_;
  bool seeded_ = false;
  bool done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace compass::nn
