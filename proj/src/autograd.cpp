#include "compass/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "compass/errors.hpp"

namespace compass::nn {
namespace {

constexpr double kLayerNormEps = 1e-5;

void check_shape(bool ok, const char* op) {
  if (!ok) throw InputError(std::string("shape mismatch in ") + op);
}

}  // namespace

template <class T>
Var Tape<T>::push(Matrix<T> value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Matrix<T>& Tape<T>::acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Matrix<T>& v = val(id);
    n.grad = Matrix<T>(v.rows(), v.cols());
  }
  return n.grad;
}

template <class T>
Var Tape<T>::constant(Matrix<T> value) {
  return push(std::move(value), false, {});
}

template <class T>
Var Tape<T>::parameter(const Matrix<T>* value) {
  Node n;
  n.ext = value;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
const Matrix<T>& Tape<T>::value(Var v) const {
  return val(v.id);
}

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
  const Matrix<T>& A = val(a.id);
  const Matrix<T>& B = val(b.id);
  check_shape(A.cols() == B.rows(), "matmul");
  Matrix<T> C(A.rows(), B.cols());
  gemm_nn_acc(A, B, C);
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Matrix<T>& dC = t.nodes_[self].grad;
    if (t.needs(a)) gemm_nt_acc(dC, t.val(b.id), t.acc(a.id));
    if (t.needs(b)) gemm_tn_acc(t.val(a.id), dC, t.acc(b.id));
  });
}

template <class T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  const Matrix<T>& A = val(a.id);
  const Matrix<T>& B = val(b.id);
  check_shape(A.cols() == B.cols(), "matmul_nt");
  Matrix<T> C(A.rows(), B.rows());
  gemm_nt_acc(A, B, C);
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Matrix<T>& dC = t.nodes_[self].grad;
    if (t.needs(a)) gemm_nn_acc(dC, t.val(b.id), t.acc(a.id));
    if (t.needs(b)) gemm_tn_acc(dC, t.val(a.id), t.acc(b.id));
  });
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  const Matrix<T>& A = val(a.id);
  const Matrix<T>& B = val(b.id);
  check_shape(A.same_shape(B), "add");
  Matrix<T> C = A;
  simd::axpy(T(1), B.data(), C.data(), C.size());
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Matrix<T>& dC = t.nodes_[self].grad;
    for (Var in : {a, b}) {
      if (t.needs(in)) simd::axpy(T(1), dC.data(), t.acc(in.id).data(), dC.size());
    }
  });
}

template <class T>
Var Tape<T>::add_row(Var a, Var row) {
  const Matrix<T>& A = val(a.id);
  const Matrix<T>& R = val(row.id);
  check_shape(R.rows() == 1 && R.cols() == A.cols(), "add_row");
  Matrix<T> C = A;
  const auto n = static_cast<std::size_t>(A.cols());
  for (int i = 0; i < A.rows(); ++i) simd::axpy(T(1), R.data(), C.row_ptr(i), n);
  return push(std::move(C), needs(a) || needs(row), [a, row](Tape& t, int self) {
    const Matrix<T>& dC = t.nodes_[self].grad;
    if (t.needs(a)) simd::axpy(T(1), dC.data(), t.acc(a.id).data(), dC.size());
    if (t.needs(row)) {
      Matrix<T>& dR = t.acc(row.id);
      for (int i = 0; i < dC.rows(); ++i) {
        simd::axpy(T(1), dC.row_ptr(i), dR.data(), static_cast<std::size_t>(dC.cols()));
      }
    }
  });
}

template <class T>
Var Tape<T>::scale(Var a, T s) {
  Matrix<T> C = val(a.id);
  for (auto& x : C.storage()) x *= s;
  return push(std::move(C), needs(a), [a, s](Tape& t, int self) {
    const Matrix<T>& dC = t.nodes_[self].grad;
    simd::axpy(s, dC.data(), t.acc(a.id).data(), dC.size());
  });
}

template <class T>
Var Tape<T>::layer_norm(Var x, Var gain, Var bias) {
  const Matrix<T>& X = val(x.id);
  const Matrix<T>& G = val(gain.id);
  const Matrix<T>& Bv = val(bias.id);
  check_shape(G.rows() == 1 && G.cols() == X.cols() && Bv.same_shape(G), "layer_norm");
  const int rows = X.rows();
  const int cols = X.cols();
  Matrix<T> Y(rows, cols);
  // saved: xhat (rows*cols) followed by inv_std (rows)
  std::vector<T> saved(static_cast<std::size_t>(rows) * cols + rows);
  for (int i = 0; i < rows; ++i) {
    const T* xi = X.row_ptr(i);
    T mean = 0;
    for (int c = 0; c < cols; ++c) mean += xi[c];
    mean /= cols;
    T var = 0;
    for (int c = 0; c < cols; ++c) var += (xi[c] - mean) * (xi[c] - mean);
    var /= cols;
    const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
    saved[static_cast<std::size_t>(rows) * cols + i] = inv;
    for (int c = 0; c < cols; ++c) {
      const T xh = (xi[c] - mean) * inv;
      saved[static_cast<std::size_t>(i) * cols + c] = xh;
      Y(i, c) = G(0, c) * xh + Bv(0, c);
    }
  }
  Var out = push(std::move(Y), needs(x) || needs(gain) || needs(bias),
                 [x, gain, bias](Tape& t, int self) {
                   const Matrix<T>& dY = t.nodes_[self].grad;
                   const std::vector<T>& s = t.nodes_[self].saved;
                   const Matrix<T>& G = t.val(gain.id);
                   const int rows = dY.rows();
                   const int cols = dY.cols();
                   Matrix<T>* dG = t.needs(gain) ? &t.acc(gain.id) : nullptr;
                   Matrix<T>* dB = t.needs(bias) ? &t.acc(bias.id) : nullptr;
                   Matrix<T>* dX = t.needs(x) ? &t.acc(x.id) : nullptr;
                   for (int i = 0; i < rows; ++i) {
                     const T* xh = s.data() + static_cast<std::size_t>(i) * cols;
                     const T inv = s[static_cast<std::size_t>(rows) * cols + i];
                     T m1 = 0, m2 = 0;
                     for (int c = 0; c < cols; ++c) {
                       const T g = dY(i, c);
                       if (dG) (*dG)(0, c) += g * xh[c];
                       if (dB) (*dB)(0, c) += g;
                       const T dxh = g * G(0, c);
                       m1 += dxh;
                       m2 += dxh * xh[c];
                     }
                     if (!dX) continue;
                     m1 /= cols;
                     m2 /= cols;
                     for (int c = 0; c < cols; ++c) {
                       (*dX)(i, c) += inv * (dY(i, c) * G(0, c) - m1 - xh[c] * m2);
                     }
                   }
                 });
  nodes_[out.id].saved = std::move(saved);
  return out;
}

template <class T>
Var Tape<T>::gelu(Var x) {
  const T c = static_cast<T>(std::sqrt(2.0 / 3.14159265358979323846));
  const T k = static_cast<T>(0.044715);
  Matrix<T> Y = val(x.id);
  for (auto& v : Y.storage()) v = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  return push(std::move(Y), needs(x), [x, c, k](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    const Matrix<T>& X = t.val(x.id);
    Matrix<T>& dX = t.acc(x.id);
    for (std::size_t i = 0; i < X.size(); ++i) {
      const T v = X.data()[i];
      const T th = std::tanh(c * (v + k * v * v * v));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * k * v * v);
      dX.data()[i] += dY.data()[i] * d;
    }
  });
}

template <class T>
Var Tape<T>::tanh(Var x) {
  Matrix<T> Y = val(x.id);
  for (auto& v : Y.storage()) v = std::tanh(v);
  return push(std::move(Y), needs(x), [x](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    const Matrix<T>& Yv = t.nodes_[self].own;
    Matrix<T>& dX = t.acc(x.id);
    for (std::size_t i = 0; i < Yv.size(); ++i) {
      dX.data()[i] += dY.data()[i] * (T(1) - Yv.data()[i] * Yv.data()[i]);
    }
  });
}

template <class T>
Var Tape<T>::concat_cols(std::span<const Var> parts) {
  check_shape(!parts.empty(), "concat_cols");
  const int rows = val(parts[0].id).rows();
  int cols = 0;
  bool any = false;
  for (Var p : parts) {
    check_shape(val(p.id).rows() == rows, "concat_cols");
    cols += val(p.id).cols();
    any = any || needs(p);
  }
  Matrix<T> Y(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Matrix<T>& P = val(p.id);
    for (int i = 0; i < rows; ++i) std::copy(P.row_ptr(i), P.row_ptr(i) + P.cols(), Y.row_ptr(i) + off);
    off += P.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(Y), any, [ps](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    int off = 0;
    for (Var p : ps) {
      const int c = t.val(p.id).cols();
      if (t.needs(p)) {
        Matrix<T>& dP = t.acc(p.id);
        for (int i = 0; i < dY.rows(); ++i) {
          simd::axpy(T(1), dY.row_ptr(i) + off, dP.row_ptr(i), static_cast<std::size_t>(c));
        }
      }
      off += c;
    }
  });
}

template <class T>
Var Tape<T>::gather_rows(Var x, std::vector<int> rows) {
  const Matrix<T>& X = val(x.id);
  Matrix<T> Y(static_cast<int>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check_shape(rows[i] >= 0 && rows[i] < X.rows(), "gather_rows");
    std::copy(X.row_ptr(rows[i]), X.row_ptr(rows[i]) + X.cols(), Y.row_ptr(static_cast<int>(i)));
  }
  return push(std::move(Y), needs(x), [x, rows = std::move(rows)](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    Matrix<T>& dX = t.acc(x.id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      simd::axpy(T(1), dY.row_ptr(static_cast<int>(i)), dX.row_ptr(rows[i]),
                 static_cast<std::size_t>(dY.cols()));
    }
  });
}

template <class T>
Var Tape<T>::mix_rows(Var x, RowMix mix) {
  const Matrix<T>& X = val(x.id);
  const auto n = static_cast<std::size_t>(X.cols());
  Matrix<T> Y(static_cast<int>(mix.rows.size()), X.cols());
  for (std::size_t r = 0; r < mix.rows.size(); ++r) {
    for (const auto& [src, w] : mix.rows[r]) {
      check_shape(src >= 0 && src < X.rows(), "mix_rows");
      simd::axpy(static_cast<T>(w), X.row_ptr(src), Y.row_ptr(static_cast<int>(r)), n);
    }
  }
  return push(std::move(Y), needs(x), [x, mix = std::move(mix)](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    Matrix<T>& dX = t.acc(x.id);
    const auto n = static_cast<std::size_t>(dY.cols());
    for (std::size_t r = 0; r < mix.rows.size(); ++r) {
      for (const auto& [src, w] : mix.rows[r]) {
        simd::axpy(static_cast<T>(w), dY.row_ptr(static_cast<int>(r)), dX.row_ptr(src), n);
      }
    }
  });
}

template <class T>
Var Tape<T>::attention(Var q, Var k, Var v, AttentionSpec spec) {
  const Matrix<T>& Q = val(q.id);
  const Matrix<T>& Kx = val(k.id);
  const Matrix<T>& V = val(v.id);
  const int G = spec.groups, H = spec.heads, nq = spec.queries_per_group, nk = spec.keys_per_group;
  const int d = Q.cols();
  check_shape(H >= 1 && d % H == 0, "attention (heads)");
  check_shape(Q.rows() == G * nq && Kx.rows() == G * nk && V.rows() == G * nk, "attention (rows)");
  check_shape(Kx.cols() == d && V.cols() == d, "attention (cols)");
  check_shape(spec.key_valid.empty() || static_cast<int>(spec.key_valid.size()) == G * nk,
              "attention (mask)");
  auto valid = [&spec, nk](int g, int j) {
    return spec.key_valid.empty() || spec.key_valid[static_cast<std::size_t>(g) * nk + j] != 0;
  };
  for (int g = 0; g < G; ++g) {
    bool any = false;
    for (int j = 0; j < nk; ++j) any = any || valid(g, j);
    if (!any) throw ContractError("attention group " + std::to_string(g) + " has every key masked");
  }

  const int dh = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> w(static_cast<std::size_t>(G) * H * nq * nk, T(0));
  Matrix<T> Y(G * nq, d);
  std::vector<T> s(nk);
  for (int g = 0; g < G; ++g) {
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < nq; ++i) {
        const T* qi = Q.row_ptr(g * nq + i) + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < nk; ++j) {
          if (!valid(g, j)) continue;
          s[j] = simd::dot(qi, Kx.row_ptr(g * nk + j) + h * dh, static_cast<std::size_t>(dh)) * scale;
          mx = std::max(mx, s[j]);
        }
        T z = 0;
        T* wi = w.data() + ((static_cast<std::size_t>(g) * H + h) * nq + i) * nk;
        for (int j = 0; j < nk; ++j) {
          if (!valid(g, j)) continue;
          wi[j] = std::exp(s[j] - mx);
          z += wi[j];
        }
        T* yi = Y.row_ptr(g * nq + i) + h * dh;
        for (int j = 0; j < nk; ++j) {
          if (!valid(g, j)) continue;
          wi[j] /= z;
          simd::axpy(wi[j], V.row_ptr(g * nk + j) + h * dh, yi, static_cast<std::size_t>(dh));
        }
      }
    }
  }

  Var out = push(std::move(Y), needs(q) || needs(k) || needs(v),
                 [q, k, v, G, H, nq, nk, dh, scale](Tape& t, int self) {
                   const Matrix<T>& dY = t.nodes_[self].grad;
                   const std::vector<T>& w = t.nodes_[self].saved;
                   const Matrix<T>& Q = t.val(q.id);
                   const Matrix<T>& Kx = t.val(k.id);
                   const Matrix<T>& V = t.val(v.id);
                   Matrix<T>* dQ = t.needs(q) ? &t.acc(q.id) : nullptr;
                   Matrix<T>* dK = t.needs(k) ? &t.acc(k.id) : nullptr;
                   Matrix<T>* dV = t.needs(v) ? &t.acc(v.id) : nullptr;
                   const auto n = static_cast<std::size_t>(dh);
                   std::vector<T> da(nk);
                   for (int g = 0; g < G; ++g) {
                     for (int h = 0; h < H; ++h) {
                       for (int i = 0; i < nq; ++i) {
                         const T* wi = w.data() + ((static_cast<std::size_t>(g) * H + h) * nq + i) * nk;
                         const T* dyi = dY.row_ptr(g * nq + i) + h * dh;
                         T dot_wa = 0;
                         for (int j = 0; j < nk; ++j) {
                           if (wi[j] == T(0)) {
                             da[j] = 0;
                             continue;
                           }
                           da[j] = simd::dot(dyi, V.row_ptr(g * nk + j) + h * dh, n);
                           dot_wa += wi[j] * da[j];
                           if (dV) simd::axpy(wi[j], dyi, dV->row_ptr(g * nk + j) + h * dh, n);
                         }
                         for (int j = 0; j < nk; ++j) {
                           if (wi[j] == T(0)) continue;
                           const T ds = wi[j] * (da[j] - dot_wa) * scale;
                           if (dQ) simd::axpy(ds, Kx.row_ptr(g * nk + j) + h * dh, dQ->row_ptr(g * nq + i) + h * dh, n);
                           if (dK) simd::axpy(ds, Q.row_ptr(g * nq + i) + h * dh, dK->row_ptr(g * nk + j) + h * dh, n);
                         }
                       }
                     }
                   }
                 });
  nodes_[out.id].saved = std::move(w);
  return out;
}

template <class T>
Var Tape<T>::log_softmax(Var x) {
  Matrix<T> Y = val(x.id);
  check_shape(!Y.empty(), "log_softmax");
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : Y.storage()) mx = std::max(mx, v);
  T z = 0;
  for (T v : Y.storage()) z += std::exp(v - mx);
  const T lse = mx + std::log(z);
  for (auto& v : Y.storage()) v -= lse;
  return push(std::move(Y), needs(x), [x](Tape& t, int self) {
    const Matrix<T>& dY = t.nodes_[self].grad;
    const Matrix<T>& Yv = t.nodes_[self].own;
    T total = 0;
    for (T g : dY.storage()) total += g;
    Matrix<T>& dX = t.acc(x.id);
    for (std::size_t i = 0; i < Yv.size(); ++i) {
      dX.data()[i] += dY.data()[i] - std::exp(Yv.data()[i]) * total;
    }
  });
}

template <class T>
const std::vector<T>& Tape<T>::attention_weights(Var out) const {
  return nodes_[out.id].saved;
}

template <class T>
void Tape<T>::seed(Var v, const Matrix<T>& g) {
  if (done_) throw ContractError("tape already swept; seed a fresh forward pass");
  check_shape(g.same_shape(val(v.id)), "seed");
  if (!needs(v)) return;
  simd::axpy(T(1), g.data(), acc(v.id).data(), g.size());
  seeded_ = true;
}

template <class T>
void Tape<T>::backward() {
  if (nodes_.empty()) throw ContractError("backward called before any forward pass");
  if (done_) throw ContractError("backward called twice on the same tape");
  if (!seeded_) throw ContractError("backward called without a loss seed");
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.back && !n.grad.empty()) n.back(*this, id);
  }
  done_ = true;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace compass::nn
