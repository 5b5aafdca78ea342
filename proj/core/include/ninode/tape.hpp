#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "ninode/matrix.hpp"

namespace ninode::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape is not
/// rewound past it.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return rows() * cols(); }
  std::span<const double> values() const;
  Matrix value() const;
  /// Value of a 1x1 node.
  double scalar() const;
};

/// Vector-valued function with a hand-written vector-Jacobian product, used
/// for model terms that are not built from tape primitives (e.g. a potential
/// energy gradient). Must be pure.
class ExternalFunction {
 public:
  virtual ~ExternalFunction() = default;
  virtual std::size_t output_size(std::size_t input_size) const = 0;
  virtual void forward(std::span<const double> in, std::span<double> out) const = 0;
  virtual void vjp(std::span<const double> in, std::span<const double> out_bar,
                   std::span<double> in_bar) const = 0;
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Neg,
  Scale,
  ScaleBy,
  Hadamard,
  MatMul,
  MatMulTN,
  Transpose,
  Tanh,
  OneMinusSquare,
  Exp,
  Dot,
  Sum,
  LinComb,
  Slice,
  Concat,
  SkewFromUpper,
  LowerFromVec,
  AddIdentity,
  SpectralNormalize,
  Cayley,
  External,
};

/// Records dense matrix operations in execution order for reverse-mode
/// differentiation. Node ids are assigned in recording order, which is a
/// topological order of the computation.
class Tape {
 public:
  struct Mark {
    std::size_t nodes = 0, values = 0, inputs = 0, aux = 0, externals = 0, params = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(const Matrix& m);
  Var constant(std::span<const double> column);
  Var scalar(double s);
  /// Registers a differentiable leaf; slots are numbered in registration order.
  Var parameter(const Matrix& m);

  std::size_t parameter_count() const noexcept { return param_nodes_.size(); }
  std::size_t op_count() const noexcept { return nodes_.size(); }
  Op op_kind(std::size_t index) const { return nodes_.at(index).op; }

  Mark mark() const;
  void rewind(const Mark& m);
  void clear();

  /// Gradient of a 1x1 node with respect to every parameter slot.
  std::vector<Matrix> grad(Var loss);
  /// Gradient of a 1x1 node with respect to arbitrary earlier nodes.
  std::vector<Matrix> grad(Var loss, std::span<const Var> wrt);

  /// Recomputes every non-leaf node from its recorded inputs. With unchanged
  /// leaves this reproduces the recorded values exactly.
  void replay();

  /// Overwrites a leaf value (for re-evaluating a recorded graph at new inputs
  /// via replay()).
  void set_leaf(Var leaf, std::span<const double> values);

  // Internal recording interface used by the primitive functions below.
  Var record(Op op, std::initializer_list<Var> inputs, std::size_t rows, std::size_t cols,
             double scalar = 0.0, std::span<const double> aux = {}, std::size_t aux_extra = 0,
             std::int32_t tag = -1);
  Var record_list(Op op, std::span<const Var> inputs, std::size_t rows, std::size_t cols,
                  double scalar = 0.0, std::span<const double> aux = {});
  std::int32_t add_external(std::shared_ptr<const ExternalFunction> fn);
  Var apply_external(std::int32_t fn_index, Var x);

  std::size_t rows(std::int32_t id) const { return nodes_[id].rows; }
  std::size_t cols(std::int32_t id) const { return nodes_[id].cols; }
  std::span<const double> values(std::int32_t id) const;

 private:
  struct Node {
    Op op = Op::Leaf;
    std::uint32_t rows = 0, cols = 0;
    std::uint32_t in_off = 0, in_n = 0;
    std::size_t val_off = 0;
    std::size_t aux_off = 0;
    std::uint32_t aux_n = 0;
    std::int32_t tag = -1;  // parameter slot or external index
    double scalar = 0.0;
  };

  Var push(Node node, std::span<const std::int32_t> inputs, std::span<const double> aux,
           std::size_t aux_extra);
  void eval(std::size_t index);
  void backprop(std::size_t index, std::vector<double>& g, std::vector<char>& touched) const;
  void run_backward(Var loss, std::vector<double>& g, std::vector<char>& touched);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<std::int32_t> inputs_;
  std::vector<double> aux_;
  std::vector<std::shared_ptr<const ExternalFunction>> externals_;
  std::vector<std::int32_t> param_nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
/// s (1x1 node) times every entry of x.
Var scale(Var s, Var x);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
/// a^T b without materializing the transpose.
Var matmul_tn(Var a, Var b);
Var transpose(Var a);
Var tanh(Var a);
/// 1 - a*a elementwise (tanh derivative from its output).
Var one_minus_square(Var a);
Var exp(Var a);
/// Sum over all entries of a .* b; returns 1x1.
Var dot(Var a, Var b);
/// Sum of same-shaped nodes, pairwise-reduced.
Var sum(std::span<const Var> terms);
/// sum_i coeffs[i] * terms[i] over same-shaped nodes.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);
/// Entries [begin, begin + count) of a flattened node, as a column.
Var slice(Var a, std::size_t begin, std::size_t count);
/// Column concatenation of flattened nodes.
Var concat(std::span<const Var> parts);
/// m x m matrix with the strictly upper triangle filled row-wise from v and
/// the lower triangle set to the negated transpose.
Var skew_from_upper(Var v, std::size_t m);
/// m x m lower-triangular matrix filled row-wise from v.
Var lower_from_vec(Var v, std::size_t m);
Var add_identity(Var a, double c);
/// c * V / (u^T V v) with fixed unit vectors u, v (spectral normalization
/// with the singular directions held constant).
Var spectral_normalize(Var v, double c, std::span<const double> left, std::span<const double> right);
/// (I - A)(I + A)^{-1}
Var cayley(Var a);
Var external(std::int32_t fn_index, Var x);

}  // namespace ninode::ad
