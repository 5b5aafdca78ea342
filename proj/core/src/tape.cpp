#include "ninode/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ninode/errors.hpp"
#include "ninode/linalg.hpp"

namespace ninode::ad {

std::size_t Var::rows() const { return tape->rows(id); }
std::size_t Var::cols() const { return tape->cols(id); }
std::span<const double> Var::values() const { return tape->values(id); }

Matrix Var::value() const {
  const auto v = values();
  return Matrix(rows(), cols(), std::vector<double>(v.begin(), v.end()));
}

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw ContractError("Var::scalar: node is not 1x1");
  return values()[0];
}

std::span<const double> Tape::values(std::int32_t id) const {
  const Node& n = nodes_[id];
  return {values_.data() + n.val_off, static_cast<std::size_t>(n.rows) * n.cols};
}

Var Tape::push(Node node, std::span<const std::int32_t> inputs, std::span<const double> aux,
               std::size_t aux_extra) {
  node.val_off = values_.size();
  node.in_off = static_cast<std::uint32_t>(inputs_.size());
  node.in_n = static_cast<std::uint32_t>(inputs.size());
  node.aux_off = aux_.size();
  node.aux_n = static_cast<std::uint32_t>(aux.size() + aux_extra);
  inputs_.insert(inputs_.end(), inputs.begin(), inputs.end());
  aux_.insert(aux_.end(), aux.begin(), aux.end());
  aux_.resize(aux_.size() + aux_extra, 0.0);
  values_.resize(values_.size() + static_cast<std::size_t>(node.rows) * node.cols, 0.0);
  nodes_.push_back(node);
  const std::size_t index = nodes_.size() - 1;
  if (node.op != Op::Leaf) eval(index);
  return Var{this, static_cast<std::int32_t>(index)};
}

Var Tape::constant(const Matrix& m) {
  Node n;
  n.rows = static_cast<std::uint32_t>(m.rows());
  n.cols = static_cast<std::uint32_t>(m.cols());
  Var v = push(n, {}, {}, 0);
  std::copy(m.data(), m.data() + m.size(), values_.data() + nodes_[v.id].val_off);
  return v;
}

Var Tape::constant(std::span<const double> column) {
  return constant(Matrix::column(column));
}

Var Tape::scalar(double s) { return constant(Matrix(1, 1, s)); }

Var Tape::parameter(const Matrix& m) {
  Var v = constant(m);
  nodes_[v.id].tag = static_cast<std::int32_t>(param_nodes_.size());
  param_nodes_.push_back(v.id);
  return v;
}

void Tape::set_leaf(Var leaf, std::span<const double> values) {
  const Node& n = nodes_.at(leaf.id);
  if (n.op != Op::Leaf) throw ContractError("set_leaf: node is not a leaf");
  if (values.size() != static_cast<std::size_t>(n.rows) * n.cols)
    throw ContractError("set_leaf: size mismatch");
  std::copy(values.begin(), values.end(), values_.data() + n.val_off);
}

Tape::Mark Tape::mark() const {
  return Mark{nodes_.size(), values_.size(), inputs_.size(), aux_.size(), externals_.size(),
              param_nodes_.size()};
}

void Tape::rewind(const Mark& m) {
  nodes_.resize(m.nodes);
  values_.resize(m.values);
  inputs_.resize(m.inputs);
  aux_.resize(m.aux);
  externals_.resize(m.externals);
  param_nodes_.resize(m.params);
}

void Tape::clear() { rewind(Mark{}); }

Var Tape::apply_external(std::int32_t fn_index, Var x) {
  if (fn_index < 0 || static_cast<std::size_t>(fn_index) >= externals_.size())
    throw ContractError("external: unknown function index");
  const std::size_t out = externals_[fn_index]->output_size(x.size());
  return record(Op::External, {x}, out, 1, 0.0, {}, 0, fn_index);
}

std::int32_t Tape::add_external(std::shared_ptr<const ExternalFunction> fn) {
  externals_.push_back(std::move(fn));
  return static_cast<std::int32_t>(externals_.size() - 1);
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, std::size_t rows, std::size_t cols,
                 double scalar, std::span<const double> aux, std::size_t aux_extra,
                 std::int32_t tag) {
  std::int32_t ids[4];
  std::size_t k = 0;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("tape: operands recorded on different tapes");
    ids[k++] = v.id;
  }
  Node n;
  n.op = op;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  n.scalar = scalar;
  n.tag = tag;
  return push(n, std::span<const std::int32_t>(ids, k), aux, aux_extra);
}

Var Tape::record_list(Op op, std::span<const Var> inputs, std::size_t rows, std::size_t cols,
                      double scalar, std::span<const double> aux) {
  std::vector<std::int32_t> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("tape: operands recorded on different tapes");
    ids.push_back(v.id);
  }
  Node n;
  n.op = op;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  n.scalar = scalar;
  return push(n, ids, aux, 0);
}

void Tape::replay() {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op != Op::Leaf) eval(i);
}

namespace {

double sum_terms(const double* terms, std::size_t k) {
  return pairwise_sum(std::span<const double>(terms, k));
}

}  // namespace

void Tape::eval(std::size_t index) {
  const Node& n = nodes_[index];
  double* out = values_.data() + n.val_off;
  const std::size_t size = static_cast<std::size_t>(n.rows) * n.cols;
  auto in = [&](std::size_t k) -> const Node& { return nodes_[inputs_[n.in_off + k]]; };
  auto val = [&](const Node& x) -> const double* { return values_.data() + x.val_off; };
  const double* aux = aux_.data() + n.aux_off;

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      const double* a = val(in(0));
      const double* b = val(in(1));
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] + b[i];
      break;
    }
    case Op::Sub: {
      const double* a = val(in(0));
      const double* b = val(in(1));
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] - b[i];
      break;
    }
    case Op::Neg: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < size; ++i) out[i] = -a[i];
      break;
    }
    case Op::Scale: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < size; ++i) out[i] = n.scalar * a[i];
      break;
    }
    case Op::ScaleBy: {
      const double s = val(in(0))[0];
      const double* x = val(in(1));
      for (std::size_t i = 0; i < size; ++i) out[i] = s * x[i];
      break;
    }
    case Op::Hadamard: {
      const double* a = val(in(0));
      const double* b = val(in(1));
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * b[i];
      break;
    }
    case Op::MatMul: {
      const Node& an = in(0);
      const double* a = val(an);
      const double* b = val(in(1));
      const std::size_t k = an.cols;
      const std::size_t c = n.cols;
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = pairwise_dot(a + i * k, 1, b + j, c, k);
      break;
    }
    case Op::MatMulTN: {
      const Node& an = in(0);
      const double* a = val(an);
      const double* b = val(in(1));
      const std::size_t k = an.rows;
      const std::size_t r = n.rows;
      const std::size_t c = n.cols;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = pairwise_dot(a + i, r, b + j, c, k);
      break;
    }
    case Op::Transpose: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < n.cols; ++j) out[i * n.cols + j] = a[j * n.rows + i];
      break;
    }
    case Op::Tanh: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(a[i]);
      break;
    }
    case Op::OneMinusSquare: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < size; ++i) out[i] = 1.0 - a[i] * a[i];
      break;
    }
    case Op::Exp: {
      const double* a = val(in(0));
      for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(a[i]);
      break;
    }
    case Op::Dot: {
      const Node& an = in(0);
      out[0] = pairwise_dot(val(an), 1, val(in(1)), 1, static_cast<std::size_t>(an.rows) * an.cols);
      break;
    }
    case Op::Sum: {
      std::vector<double> terms(n.in_n);
      for (std::size_t e = 0; e < size; ++e) {
        for (std::size_t k = 0; k < n.in_n; ++k) terms[k] = val(in(k))[e];
        out[e] = sum_terms(terms.data(), n.in_n);
      }
      break;
    }
    case Op::LinComb: {
      double terms[16];
      for (std::size_t e = 0; e < size; ++e) {
        for (std::size_t k = 0; k < n.in_n; ++k) terms[k] = aux[k] * val(in(k))[e];
        out[e] = sum_terms(terms, n.in_n);
      }
      break;
    }
    case Op::Slice: {
      const double* a = val(in(0)) + n.tag;
      std::copy(a, a + size, out);
      break;
    }
    case Op::Concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.in_n; ++k) {
        const Node& p = in(k);
        const std::size_t len = static_cast<std::size_t>(p.rows) * p.cols;
        std::copy(val(p), val(p) + len, out + off);
        off += len;
      }
      break;
    }
    case Op::SkewFromUpper: {
      const double* v = val(in(0));
      const std::size_t m = n.rows;
      std::size_t k = 0;
      for (std::size_t i = 0; i < m; ++i) {
        out[i * m + i] = 0.0;
        for (std::size_t j = i + 1; j < m; ++j, ++k) {
          out[i * m + j] = v[k];
          out[j * m + i] = -v[k];
        }
      }
      break;
    }
    case Op::LowerFromVec: {
      const double* v = val(in(0));
      const std::size_t m = n.rows;
      std::size_t k = 0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = j <= i ? v[k++] : 0.0;
      break;
    }
    case Op::AddIdentity: {
      const double* a = val(in(0));
      std::copy(a, a + size, out);
      for (std::size_t i = 0; i < n.rows; ++i) out[i * n.cols + i] += n.scalar;
      break;
    }
    case Op::SpectralNormalize: {
      const double* v = val(in(0));
      const double* u = aux;
      const double* r = aux + n.rows;
      std::vector<double> vr(n.rows);
      for (std::size_t i = 0; i < n.rows; ++i) vr[i] = pairwise_dot(v + i * n.cols, 1, r, 1, n.cols);
      const double sigma = pairwise_dot(u, 1, vr.data(), 1, n.rows);
      if (!(sigma > 0.0)) throw NumericError("spectral_normalize: non-positive norm estimate",
                                             static_cast<std::ptrdiff_t>(index));
      const double s = n.scalar / sigma;
      for (std::size_t i = 0; i < size; ++i) out[i] = s * v[i];
      break;
    }
    case Op::Cayley: {
      const std::size_t m = n.rows;
      const Matrix a(m, m, std::vector<double>(val(in(0)), val(in(0)) + size));
      const Matrix id = Matrix::identity(m);
      const Matrix b = inverse(id + a);
      const Matrix q = matmul(id - a, b);
      std::copy(q.data(), q.data() + size, out);
      std::copy(b.data(), b.data() + size, aux_.data() + n.aux_off);
      break;
    }
    case Op::External: {
      const Node& x = in(0);
      externals_[n.tag]->forward({val(x), static_cast<std::size_t>(x.rows) * x.cols}, {out, size});
      break;
    }
  }
}

void Tape::backprop(std::size_t index, std::vector<double>& g, std::vector<char>& touched) const {
  const Node& n = nodes_[index];
  const double* go = g.data() + n.val_off;
  const std::size_t size = static_cast<std::size_t>(n.rows) * n.cols;
  auto in_id = [&](std::size_t k) { return inputs_[n.in_off + k]; };
  auto in = [&](std::size_t k) -> const Node& { return nodes_[in_id(k)]; };
  auto val = [&](const Node& x) -> const double* { return values_.data() + x.val_off; };
  auto grad_of = [&](std::size_t k) -> double* {
    touched[in_id(k)] = 1;
    return g.data() + in(k).val_off;
  };
  const double* out = values_.data() + n.val_off;
  const double* aux = aux_.data() + n.aux_off;

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i];
      double* gb = grad_of(1);
      for (std::size_t i = 0; i < size; ++i) gb[i] += go[i];
      break;
    }
    case Op::Sub: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i];
      double* gb = grad_of(1);
      for (std::size_t i = 0; i < size; ++i) gb[i] -= go[i];
      break;
    }
    case Op::Neg: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] -= go[i];
      break;
    }
    case Op::Scale: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += n.scalar * go[i];
      break;
    }
    case Op::ScaleBy: {
      const double s = val(in(0))[0];
      const double* x = val(in(1));
      grad_of(0)[0] += pairwise_dot(go, 1, x, 1, size);
      double* gx = grad_of(1);
      for (std::size_t i = 0; i < size; ++i) gx[i] += s * go[i];
      break;
    }
    case Op::Hadamard: {
      const double* a = val(in(0));
      const double* b = val(in(1));
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i] * b[i];
      double* gb = grad_of(1);
      for (std::size_t i = 0; i < size; ++i) gb[i] += go[i] * a[i];
      break;
    }
    case Op::MatMul: {
      const Node& an = in(0);
      const double* a = val(an);
      const double* b = val(in(1));
      const std::size_t r = n.rows, c = n.cols, k = an.cols;
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t l = 0; l < k; ++l) ga[i * k + l] += pairwise_dot(go + i * c, 1, b + l * c, 1, c);
      double* gb = grad_of(1);
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < c; ++j) gb[l * c + j] += pairwise_dot(a + l, k, go + j, c, r);
      break;
    }
    case Op::MatMulTN: {
      const Node& an = in(0);
      const double* a = val(an);
      const double* b = val(in(1));
      const std::size_t r = n.rows, c = n.cols, k = an.rows;
      double* ga = grad_of(0);
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t i = 0; i < r; ++i) ga[l * r + i] += pairwise_dot(b + l * c, 1, go + i * c, 1, c);
      double* gb = grad_of(1);
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < c; ++j) gb[l * c + j] += pairwise_dot(a + l * r, 1, go + j, c, r);
      break;
    }
    case Op::Transpose: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < n.cols; ++j) ga[j * n.rows + i] += go[i * n.cols + j];
      break;
    }
    case Op::Tanh: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i] * (1.0 - out[i] * out[i]);
      break;
    }
    case Op::OneMinusSquare: {
      const double* a = val(in(0));
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] -= 2.0 * a[i] * go[i];
      break;
    }
    case Op::Exp: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i] * out[i];
      break;
    }
    case Op::Dot: {
      const Node& an = in(0);
      const std::size_t len = static_cast<std::size_t>(an.rows) * an.cols;
      const double* a = val(an);
      const double* b = val(in(1));
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < len; ++i) ga[i] += go[0] * b[i];
      double* gb = grad_of(1);
      for (std::size_t i = 0; i < len; ++i) gb[i] += go[0] * a[i];
      break;
    }
    case Op::Sum: {
      for (std::size_t k = 0; k < n.in_n; ++k) {
        double* gk = grad_of(k);
        for (std::size_t i = 0; i < size; ++i) gk[i] += go[i];
      }
      break;
    }
    case Op::LinComb: {
      for (std::size_t k = 0; k < n.in_n; ++k) {
        double* gk = grad_of(k);
        for (std::size_t i = 0; i < size; ++i) gk[i] += aux[k] * go[i];
      }
      break;
    }
    case Op::Slice: {
      double* ga = grad_of(0) + n.tag;
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i];
      break;
    }
    case Op::Concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.in_n; ++k) {
        const std::size_t len = static_cast<std::size_t>(in(k).rows) * in(k).cols;
        double* gk = grad_of(k);
        for (std::size_t i = 0; i < len; ++i) gk[i] += go[off + i];
        off += len;
      }
      break;
    }
    case Op::SkewFromUpper: {
      const std::size_t m = n.rows;
      double* gv = grad_of(0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j, ++k) gv[k] += go[i * m + j] - go[j * m + i];
      break;
    }
    case Op::LowerFromVec: {
      const std::size_t m = n.rows;
      double* gv = grad_of(0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j <= i; ++j) gv[k++] += go[i * m + j];
      break;
    }
    case Op::AddIdentity: {
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += go[i];
      break;
    }
    case Op::SpectralNormalize: {
      const double* v = val(in(0));
      const double* u = aux;
      const double* r = aux + n.rows;
      std::vector<double> vr(n.rows);
      for (std::size_t i = 0; i < n.rows; ++i) vr[i] = pairwise_dot(v + i * n.cols, 1, r, 1, n.cols);
      const double sigma = pairwise_dot(u, 1, vr.data(), 1, n.rows);
      const double gv_dot = pairwise_dot(go, 1, v, 1, size);
      const double s = n.scalar / sigma;
      const double t = n.scalar * gv_dot / (sigma * sigma);
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < n.cols; ++j)
          ga[i * n.cols + j] += s * go[i * n.cols + j] - t * u[i] * r[j];
      break;
    }
    case Op::Cayley: {
      const std::size_t m = n.rows;
      const Matrix q(m, m, std::vector<double>(out, out + size));
      const Matrix b(m, m, std::vector<double>(aux, aux + size));
      const Matrix gq(m, m, std::vector<double>(go, go + size));
      const Matrix ipq = Matrix::identity(m) + q;
      const Matrix ga_local = matmul(matmul(ipq.transpose(), gq), b.transpose());
      double* ga = grad_of(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] -= ga_local[i];
      break;
    }
    case Op::External: {
      const Node& x = in(0);
      const std::size_t len = static_cast<std::size_t>(x.rows) * x.cols;
      std::vector<double> local(len, 0.0);
      externals_[n.tag]->vjp({val(x), len}, {go, size}, local);
      double* gx = grad_of(0);
      for (std::size_t i = 0; i < len; ++i) gx[i] += local[i];
      break;
    }
  }
}

void Tape::run_backward(Var loss, std::vector<double>& g, std::vector<char>& touched) {
  if (loss.tape != this) throw ContractError("grad: loss recorded on a different tape");
  if (rows(loss.id) != 1 || cols(loss.id) != 1) throw ContractError("grad: loss is not a scalar node");
  g.assign(values_.size(), 0.0);
  touched.assign(nodes_.size(), 0);
  g[nodes_[loss.id].val_off] = 1.0;
  touched[loss.id] = 1;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    if (!touched[i]) continue;
    const Node& n = nodes_[i];
    const std::size_t len = static_cast<std::size_t>(n.rows) * n.cols;
    for (std::size_t k = 0; k < len; ++k) {
      if (!std::isfinite(g[n.val_off + k])) {
        throw NumericError("grad: non-finite adjoint at op " + std::to_string(i),
                           static_cast<std::ptrdiff_t>(i));
      }
    }
    backprop(i, g, touched);
  }
}

std::vector<Matrix> Tape::grad(Var loss) {
  std::vector<double> g;
  std::vector<char> touched;
  run_backward(loss, g, touched);
  std::vector<Matrix> out;
  out.reserve(param_nodes_.size());
  for (std::int32_t id : param_nodes_) {
    const Node& n = nodes_[id];
    const std::size_t len = static_cast<std::size_t>(n.rows) * n.cols;
    out.emplace_back(n.rows, n.cols,
                     std::vector<double>(g.begin() + static_cast<std::ptrdiff_t>(n.val_off),
                                         g.begin() + static_cast<std::ptrdiff_t>(n.val_off + len)));
  }
  return out;
}

std::vector<Matrix> Tape::grad(Var loss, std::span<const Var> wrt) {
  std::vector<double> g;
  std::vector<char> touched;
  run_backward(loss, g, touched);
  std::vector<Matrix> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    const Node& n = nodes_.at(v.id);
    const std::size_t len = static_cast<std::size_t>(n.rows) * n.cols;
    out.emplace_back(n.rows, n.cols,
                     std::vector<double>(g.begin() + static_cast<std::ptrdiff_t>(n.val_off),
                                         g.begin() + static_cast<std::ptrdiff_t>(n.val_off + len)));
  }
  return out;
}

// Primitive functions.

namespace {

void same_shape(Var a, Var b, const char* what) {
  if (a.tape != b.tape) throw ContractError(std::string(what) + ": operands on different tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(what) + ": shape mismatch");
}

}  // namespace

Var operator+(Var a, Var b) {
  same_shape(a, b, "add");
  return a.tape->record(Op::Add, {a, b}, a.rows(), a.cols());
}

Var operator-(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.tape->record(Op::Sub, {a, b}, a.rows(), a.cols());
}

Var operator-(Var a) { return a.tape->record(Op::Neg, {a}, a.rows(), a.cols()); }

Var operator*(double s, Var a) { return a.tape->record(Op::Scale, {a}, a.rows(), a.cols(), s); }

Var scale(Var s, Var x) {
  if (s.rows() != 1 || s.cols() != 1) throw ContractError("scale: factor is not 1x1");
  return x.tape->record(Op::ScaleBy, {s, x}, x.rows(), x.cols());
}

Var hadamard(Var a, Var b) {
  same_shape(a, b, "hadamard");
  return a.tape->record(Op::Hadamard, {a, b}, a.rows(), a.cols());
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  return a.tape->record(Op::MatMul, {a, b}, a.rows(), b.cols());
}

Var matmul_tn(Var a, Var b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: inner dimension mismatch");
  return a.tape->record(Op::MatMulTN, {a, b}, a.cols(), b.cols());
}

Var transpose(Var a) { return a.tape->record(Op::Transpose, {a}, a.cols(), a.rows()); }
Var tanh(Var a) { return a.tape->record(Op::Tanh, {a}, a.rows(), a.cols()); }
Var one_minus_square(Var a) { return a.tape->record(Op::OneMinusSquare, {a}, a.rows(), a.cols()); }
Var exp(Var a) { return a.tape->record(Op::Exp, {a}, a.rows(), a.cols()); }

Var dot(Var a, Var b) {
  if (a.size() != b.size()) throw ContractError("dot: size mismatch");
  return a.tape->record(Op::Dot, {a, b}, 1, 1);
}

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("sum: no terms");
  for (const Var& t : terms) same_shape(terms[0], t, "sum");
  if (terms.size() == 1) return terms[0];
  return terms[0].tape->record_list(Op::Sum, terms, terms[0].rows(), terms[0].cols());
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size() || terms.size() > 16)
    throw ContractError("lincomb: need 1..16 terms with matching coefficients");
  for (const Var& t : terms) same_shape(terms[0], t, "lincomb");
  return terms[0].tape->record_list(Op::LinComb, terms, terms[0].rows(), terms[0].cols(), 0.0,
                                    coeffs);
}

Var slice(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.size()) throw ContractError("slice: range out of bounds");
  return a.tape->record(Op::Slice, {a}, count, 1, 0.0, {}, 0, static_cast<std::int32_t>(begin));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat: no parts");
  std::size_t total = 0;
  for (const Var& p : parts) total += p.size();
  return parts[0].tape->record_list(Op::Concat, parts, total, 1);
}

Var skew_from_upper(Var v, std::size_t m) {
  if (v.size() != m * (m - 1) / 2) throw ContractError("skew_from_upper: expected m(m-1)/2 entries");
  return v.tape->record(Op::SkewFromUpper, {v}, m, m);
}

Var lower_from_vec(Var v, std::size_t m) {
  if (v.size() != m * (m + 1) / 2) throw ContractError("lower_from_vec: expected m(m+1)/2 entries");
  return v.tape->record(Op::LowerFromVec, {v}, m, m);
}

Var add_identity(Var a, double c) {
  if (a.rows() != a.cols()) throw ContractError("add_identity: matrix not square");
  return a.tape->record(Op::AddIdentity, {a}, a.rows(), a.cols(), c);
}

Var spectral_normalize(Var v, double c, std::span<const double> left, std::span<const double> right) {
  if (left.size() != v.rows() || right.size() != v.cols())
    throw ContractError("spectral_normalize: singular vector size mismatch");
  std::vector<double> aux(left.begin(), left.end());
  aux.insert(aux.end(), right.begin(), right.end());
  return v.tape->record(Op::SpectralNormalize, {v}, v.rows(), v.cols(), c, aux);
}

Var cayley(Var a) {
  if (a.rows() != a.cols()) throw ContractError("cayley: matrix not square");
  return a.tape->record(Op::Cayley, {a}, a.rows(), a.cols(), 0.0, {}, a.size());
}

Var external(std::int32_t fn_index, Var x) { return x.tape->apply_external(fn_index, x); }

}  // namespace ninode::ad
