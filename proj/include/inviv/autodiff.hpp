#pragma once

#include <functional>
#include <vector>

#include "inviv/common.hpp"

namespace inviv::autodiff {

enum class Op : uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    ScalarMul,
    ElemMul,
    Relu,
    LayerNorm,
    MonomialMap,
    GramPolyKernel,
    Trace,
    Mean,
    Sum,
    Square,
    Sqrt,
    LogDet,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    int id = -1;
    Tape* tape = nullptr;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;
};

/// Gradients keyed by node id, produced by Tape::backward. Immutable.
class GradTable {
  public:
    bool has(Var v) const { return v.id >= 0 && static_cast<size_t>(v.id) < present_.size() && present_[static_cast<size_t>(v.id)]; }
    const Matrix& grad(Var v) const;

  private:
    friend class Tape;
    std::vector<Matrix> grads_;
    std::vector<uint8_t> present_;
};

/// Eagerly evaluated define-by-run tape over dense matrices. Shape errors are
/// raised at record time. A tape is single-owner while recording; scalars are
/// 1x1 matrices.
class Tape {
  public:
    Var leaf(Matrix value, bool requires_grad = false);
    Var constant(Matrix value) { return leaf(std::move(value), false); }
    Var constant_scalar(double v);

    /// a * b with optional BLAS-style transposition of either operand.
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    /// Elementwise sum; b may be a 1 x m row vector broadcast over rows of a.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scalar_mul(double c, Var a);
    /// Elementwise product; b may be a 1 x m row broadcast.
    Var elem_mul(Var a, Var b);
    Var relu(Var a);
    /// Per-row feature normalization with learnable affine: gain, bias are 1 x m.
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    /// Graded-lex monomial expansion of each row, constant term first.
    Var monomial_map(Var u, int degree);
    /// K_ij = (x_i . y_j + offset)^degree for rows x_i of x, y_j of y.
    Var gram_poly_kernel(Var x, Var y, int degree, double offset);
    Var trace(Var a);
    Var mean(Var a);
    Var sum(Var a);
    Var square(Var a);
    /// Elementwise sqrt; subgradient at 0 is 0.
    Var sqrt(Var a);
    /// log det of a symmetric positive-definite matrix (input is symmetrized).
    Var log_det(Var a);

    /// Reverse pass from a scalar loss. Deterministic: identical tapes give
    /// bit-identical gradients.
    GradTable backward(Var loss) const;

    size_t size() const { return nodes_.size(); }
    const Matrix& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1, c = -1;
        double scalar = 0.0; // ScalarMul factor / kernel offset / layer_norm eps
        int degree = 0;
        bool trans_a = false, trans_b = false;
        bool requires_grad = false;
        Matrix value;
        Matrix aux;  // op cache: LayerNorm xhat, GramPolyKernel inner products, LogDet inverse
        Matrix aux2; // LayerNorm 1/sqrt(var+eps) column
    };

    Var push(Node n);
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
};

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
    std::vector<double> per_param_err;
};

/// Compares reverse-mode gradients of a scalar-valued tape program against
/// central finite differences, parameter entry by parameter entry.
/// Relative error uses denominator max(1, |ad|, |fd|). h must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                           const std::vector<Matrix>& params, double h, double tol);

} // namespace inviv::autodiff
