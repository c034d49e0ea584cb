// Reverse-mode differentiation over dense matrices.
//
// A Tape records primitive operations as they are evaluated eagerly; nodes
// are appended in evaluation order, so walking the node list backwards
// visits the graph in reverse topological order. backward() seeds the
// output adjoint and accumulates vector-Jacobian products into every node;
// adjoints add at fan-out.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/error.hpp"

namespace unmix::diff {

// Handle to a node on a Tape. Only valid for the tape that created it.
struct Var {
  int id = -1;
};

class Tape {
 public:
  // -- leaves --------------------------------------------------------------

  // Differentiable leaf (parameter or data we want gradients for).
  Var input(Matrix value) { return leaf(std::move(value), true); }

  // Non-differentiable leaf. Gradients still accumulate but read back zero
  // unless touched; callers simply never ask for them.
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // -- primitives ----------------------------------------------------------

  // op(a) * op(b), where op transposes when the flag is set. (ta && tb) is
  // not needed by any caller and is rejected.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    if (ta && tb) throw ShapeError("matmul: double transpose not supported");
    const Matrix& A = val(a);
    const Matrix& B = val(b);
    const long ar = ta ? A.cols() : A.rows(), ac = ta ? A.rows() : A.cols();
    const long br = tb ? B.cols() : B.rows(), bc = tb ? B.rows() : B.cols();
    if (ac != br)
      throw ShapeError("matmul: inner dimensions disagree (" + dims(a) + " vs " + dims(b) + ")");
    Matrix out(ar, bc);
    if (ta)
      out.noalias() = A.transpose() * B;
    else if (tb)
      out.noalias() = A * B.transpose();
    else
      out.noalias() = A * B;
    return push(Op::MatMul, a, b, std::move(out), 0.0, ta, tb);
  }

  // Elementwise sum; the second operand may be a 1 x C row broadcast over
  // the rows of the first.
  Var add(Var a, Var b) { return binary(Op::Add, a, b); }

  // a - b with the same broadcast rule as add.
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }

  // Hadamard product with the same broadcast rule as add.
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }

  Var scale(Var a, double c) {
    return push(Op::Scale, a, Var{}, val(a) * c, c);
  }

  Var leaky_relu(Var a, double slope) {
    Matrix out = val(a).unaryExpr([slope](double x) { return x >= 0.0 ? x : slope * x; });
    return push(Op::LeakyRelu, a, Var{}, std::move(out), slope);
  }

  Var relu(Var a) {
    Matrix out = val(a).cwiseMax(0.0);
    return push(Op::Relu, a, Var{}, std::move(out));
  }

  Var abs(Var a) {
    return push(Op::Abs, a, Var{}, val(a).cwiseAbs());
  }

  // Sum of all entries, as a 1x1 matrix.
  Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = val(a).sum();
    return push(Op::Sum, a, Var{}, std::move(out));
  }

  // Per-column totals, as a 1 x C row.
  Var colsum(Var a) {
    Matrix out = val(a).colwise().sum();
    return push(Op::ColSum, a, Var{}, std::move(out));
  }

  // Elementwise power with a constant exponent.
  Var pow(Var a, double exponent) {
    Matrix out = val(a).unaryExpr([exponent](double x) { return std::pow(x, exponent); });
    return push(Op::Pow, a, Var{}, std::move(out), exponent);
  }

  // Squared Frobenius norm, as a 1x1 matrix.
  Var fro2(Var a) {
    Matrix out(1, 1);
    out(0, 0) = val(a).squaredNorm();
    return push(Op::Fro2, a, Var{}, std::move(out));
  }

  // Divides each row by its sum. A row whose sum is exactly zero maps to
  // the uniform row 1/C with zero gradient.
  Var row_normalize(Var a) {
    const Matrix& x = val(a);
    Matrix out(x.rows(), x.cols());
    const double uniform = 1.0 / static_cast<double>(x.cols());
    for (long i = 0; i < x.rows(); ++i) {
      const double s = x.row(i).sum();
      if (s == 0.0)
        out.row(i).setConstant(uniform);
      else
        out.row(i) = x.row(i) / s;
    }
    return push(Op::RowNormalize, a, Var{}, std::move(out));
  }

  // [a | b] column-wise; b may be a single row broadcast over a's rows.
  Var concat_cols(Var a, Var b) {
    const Matrix& A = val(a);
    const Matrix& B = val(b);
    if (B.rows() != A.rows() && B.rows() != 1)
      throw ShapeError("concat_cols: row counts disagree (" + dims(a) + " vs " + dims(b) + ")");
    Matrix out(A.rows(), A.cols() + B.cols());
    out.leftCols(A.cols()) = A;
    if (B.rows() == A.rows())
      out.rightCols(B.cols()) = B;
    else
      out.rightCols(B.cols()) = B.replicate(A.rows(), 1);
    return push(Op::ConcatCols, a, b, std::move(out));
  }

  Var transpose(Var a) {
    return push(Op::Transpose, a, Var{}, val(a).transpose());
  }

  // Reinterprets the entries in column-major storage order.
  Var reshape(Var a, long rows, long cols) {
    const Matrix& x = val(a);
    if (rows * cols != x.size())
      throw ShapeError("reshape: element count changes");
    Matrix out = Eigen::Map<const Matrix>(x.data(), rows, cols);
    return push(Op::Reshape, a, Var{}, std::move(out));
  }

  // -- evaluation ----------------------------------------------------------

  const Matrix& value(Var v) const { return val(v); }

  // Seeds the adjoint of `output` and runs the reverse sweep. A tape may be
  // consumed once; a second backward() is an error because adjoints would
  // accumulate twice.
  void backward(Var output, const Matrix& seed) {
    if (consumed_) throw NumericError("backward: tape already consumed");
    consumed_ = true;
    Node& out = node(output);
    if (seed.rows() != out.value.rows() || seed.cols() != out.value.cols())
      throw ShapeError("backward: seed shape differs from output shape");
    accumulate(output.id, seed);
    for (int i = output.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      propagate(n);
    }
  }

  // Convenience for scalar outputs: seed with 1.
  void backward(Var output) {
    const Matrix& v = val(output);
    backward(output, Matrix::Ones(v.rows(), v.cols()));
  }

  // Adjoint of `v` after backward(); zero if the output does not depend
  // on it.
  Matrix grad(Var v) const {
    if (!consumed_) throw NumericError("grad: backward has not run");
    const Node& n = node(v);
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Input, Const, MatMul, Add, Sub, Mul, Scale, LeakyRelu, Relu, Abs,
    Sum, ColSum, Pow, Fro2, RowNormalize, ConcatCols, Transpose, Reshape,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    double scalar = 0.0;   // slope, exponent, or scale factor
    bool ta = false, tb = false;
  };

  static const char* name(Op op) {
    switch (op) {
      case Op::Input: return "input";
      case Op::Const: return "constant";
      case Op::MatMul: return "matmul";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Scale: return "scale";
      case Op::LeakyRelu: return "leaky_relu";
      case Op::Relu: return "relu";
      case Op::Abs: return "abs";
      case Op::Sum: return "sum";
      case Op::ColSum: return "colsum";
      case Op::Pow: return "pow";
      case Op::Fro2: return "fro2";
      case Op::RowNormalize: return "row_normalize";
      case Op::ConcatCols: return "concat_cols";
      case Op::Transpose: return "transpose";
      case Op::Reshape: return "reshape";
    }
    return "?";
  }

  Var leaf(Matrix value, bool differentiable) {
    Node n;
    n.op = differentiable ? Op::Input : Op::Const;
    n.value = std::move(value);
    if (!n.value.allFinite())
      throw NumericError(std::string("non-finite values in ") + name(n.op) + " leaf");
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var binary(Op op, Var a, Var b) {
    const Matrix& A = val(a);
    const Matrix& B = val(b);
    Matrix out;
    if (A.rows() == B.rows() && A.cols() == B.cols()) {
      out = apply(op, A, B);
    } else if (B.rows() == 1 && B.cols() == A.cols()) {
      out = apply(op, A, Matrix(B.replicate(A.rows(), 1)));
    } else if (A.rows() == 1 && A.cols() == B.cols() && op != Op::Sub) {
      out = apply(op, Matrix(A.replicate(B.rows(), 1)), B);
    } else {
      throw ShapeError(std::string(name(op)) + ": shapes incompatible (" + dims(a) + " vs " + dims(b) + ")");
    }
    return push(op, a, b, std::move(out));
  }

  static Matrix apply(Op op, const Matrix& A, const Matrix& B) {
    switch (op) {
      case Op::Add: return A + B;
      case Op::Sub: return A - B;
      case Op::Mul: return A.cwiseProduct(B);
      default: throw NumericError("apply: not a binary elementwise op");
    }
  }

  Var push(Op op, Var a, Var b, Matrix value, double scalar = 0.0,
           bool ta = false, bool tb = false) {
    if (!value.allFinite())
      throw NumericError(std::string("non-finite result in ") + name(op));
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(value);
    n.scalar = scalar;
    n.ta = ta;
    n.tb = tb;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& val(Var v) const { return node(v).value; }

  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw ShapeError("invalid Var handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  Node& node(Var v) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
  }

  std::string dims(Var v) const {
    const Matrix& m = val(v);
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  void accumulate(int id, const Matrix& g) {
    if (id < 0) return;
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    // Broadcast operands receive the column totals of the expanded adjoint.
    if (g.rows() != n.grad.rows() && n.grad.rows() == 1)
      n.grad += g.colwise().sum();
    else
      n.grad += g;
  }

  void propagate(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::MatMul: {
        const Matrix& A = nodes_[n.a].value;
        const Matrix& B = nodes_[n.b].value;
        if (n.ta) {            // out = A^T B
          accumulate(n.a, B * g.transpose());
          accumulate(n.b, A * g);
        } else if (n.tb) {     // out = A B^T
          accumulate(n.a, g * B);
          accumulate(n.b, g.transpose() * A);
        } else {               // out = A B
          accumulate(n.a, g * B.transpose());
          accumulate(n.b, A.transpose() * g);
        }
        break;
      }
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::Mul: {
        const Matrix& A = nodes_[n.a].value;
        const Matrix& B = nodes_[n.b].value;
        Matrix be = B.rows() == g.rows() ? B : Matrix(B.replicate(g.rows(), 1));
        Matrix ae = A.rows() == g.rows() ? A : Matrix(A.replicate(g.rows(), 1));
        accumulate(n.a, g.cwiseProduct(be));
        accumulate(n.b, g.cwiseProduct(ae));
        break;
      }
      case Op::Scale:
        accumulate(n.a, g * n.scalar);
        break;
      case Op::LeakyRelu: {
        const Matrix& x = nodes_[n.a].value;
        const double slope = n.scalar;
        // Right-derivative at 0: the positive branch.
        accumulate(n.a, g.cwiseProduct(x.unaryExpr(
            [slope](double v) { return v >= 0.0 ? 1.0 : slope; })));
        break;
      }
      case Op::Relu: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, g.cwiseProduct(x.unaryExpr(
            [](double v) { return v >= 0.0 ? 1.0 : 0.0; })));
        break;
      }
      case Op::Abs: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, g.cwiseProduct(x.unaryExpr(
            [](double v) { return v >= 0.0 ? 1.0 : -1.0; })));
        break;
      }
      case Op::Sum: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::ColSum: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, g.replicate(x.rows(), 1));
        break;
      }
      case Op::Pow: {
        const Matrix& x = nodes_[n.a].value;
        const double p = n.scalar;
        Matrix d = x.unaryExpr([p](double v) { return p * std::pow(v, p - 1.0); });
        accumulate(n.a, g.cwiseProduct(d));
        break;
      }
      case Op::Fro2:
        accumulate(n.a, 2.0 * g(0, 0) * nodes_[n.a].value);
        break;
      case Op::RowNormalize: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& y = n.value;
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        for (long i = 0; i < x.rows(); ++i) {
          const double s = x.row(i).sum();
          if (s == 0.0) continue;  // uniform branch is locally constant
          const double gy = g.row(i).dot(y.row(i));
          d.row(i) = (g.row(i).array() - gy) / s;
        }
        accumulate(n.a, d);
        break;
      }
      case Op::ConcatCols: {
        const Matrix& A = nodes_[n.a].value;
        const Matrix& B = nodes_[n.b].value;
        accumulate(n.a, g.leftCols(A.cols()));
        if (B.rows() == g.rows())
          accumulate(n.b, g.rightCols(B.cols()));
        else
          accumulate(n.b, g.rightCols(B.cols()).colwise().sum());
        break;
      }
      case Op::Transpose:
        accumulate(n.a, g.transpose());
        break;
      case Op::Reshape: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, Matrix(Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols())));
        break;
      }
    }
    if (n.a >= 0 && nodes_[n.a].has_grad && !nodes_[n.a].grad.allFinite())
      throw NumericError(std::string("non-finite gradient out of ") + name(n.op));
    if (n.b >= 0 && nodes_[n.b].has_grad && !nodes_[n.b].grad.allFinite())
      throw NumericError(std::string("non-finite gradient out of ") + name(n.op));
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace unmix::diff
