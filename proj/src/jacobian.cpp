#include "tpower/jacobian.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace tpower {

LinearOperator::LinearOperator(std::size_t in_dim, std::size_t out_dim, Fn apply,
                               Fn adjoint)
    : in_dim_(in_dim), out_dim_(out_dim), apply_(std::move(apply)),
      adjoint_(std::move(adjoint)) {
  if (in_dim_ == 0 || out_dim_ == 0) throw ShapeError("operator dims must be positive");
}

Vec LinearOperator::apply(const Vec& v) const {
  if (v.size() != in_dim_) {
    throw ShapeError("apply: expected length " + std::to_string(in_dim_) + ", got " +
                     std::to_string(v.size()));
  }
  Vec out = apply_(v);
  if (out.size() != out_dim_) throw ShapeError("apply returned wrong length");
  return out;
}

Vec LinearOperator::adjoint(const Vec& u) const {
  if (u.size() != out_dim_) {
    throw ShapeError("adjoint: expected length " + std::to_string(out_dim_) + ", got " +
                     std::to_string(u.size()));
  }
  Vec out = adjoint_(u);
  if (out.size() != in_dim_) throw ShapeError("adjoint returned wrong length");
  return out;
}

LinearOperator operator_from_model(const Model& model, const std::string& cut,
                                   const Tensor& x) {
  auto tape = std::make_shared<ModelTape>(model, model.layer_index(cut), x);
  const std::size_t in_dim = tape->in_dim(), out_dim = tape->out_dim();
  return LinearOperator(
      in_dim, out_dim, [tape](const Vec& v) { return tape->jvp(v); },
      [tape](const Vec& u) { return tape->vjp(u); });
}

LinearOperator operator_from_matrix(std::vector<Vec> rows) {
  if (rows.empty() || rows[0].empty()) throw ShapeError("matrix must be nonempty");
  const std::size_t m = rows.size(), n = rows[0].size();
  for (const Vec& r : rows) {
    if (r.size() != n) throw ShapeError("ragged matrix rows");
  }
  auto mat = std::make_shared<std::vector<Vec>>(std::move(rows));
  return LinearOperator(
      n, m,
      [mat, m, n](const Vec& v) {
        Vec out(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += (*mat)[i][j] * v[j];
          out[i] = acc;
        }
        return out;
      },
      [mat, m, n](const Vec& u) {
        Vec out(n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) out[j] += (*mat)[i][j] * u[i];
        }
        return out;
      });
}

LinearOperator transpose(const LinearOperator& op) {
  LinearOperator copy = op;
  return LinearOperator(
      copy.out_dim(), copy.in_dim(), [copy](const Vec& u) { return copy.adjoint(u); },
      [copy](const Vec& v) { return copy.apply(v); });
}

std::vector<Vec> materialize(const LinearOperator& op, std::size_t max_dim) {
  if (op.in_dim() > max_dim || op.out_dim() > max_dim) {
    throw TooLargeError("operator " + std::to_string(op.out_dim()) + "x" +
                        std::to_string(op.in_dim()) + " exceeds max_dim " +
                        std::to_string(max_dim));
  }
  std::vector<Vec> rows(op.out_dim(), Vec(op.in_dim(), 0.0));
  Vec e(op.in_dim(), 0.0);
  for (std::size_t j = 0; j < op.in_dim(); ++j) {
    e[j] = 1.0;
    Vec col = op.apply(e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < op.out_dim(); ++i) rows[i][j] = col[i];
  }
  return rows;
}

BatchJacobian::BatchJacobian(std::vector<LinearOperator> ops) : ops_(std::move(ops)) {
  if (ops_.empty()) throw EmptyDataError("batch jacobian needs at least one operator");
  in_dim_ = ops_[0].in_dim();
  for (const LinearOperator& op : ops_) {
    if (op.in_dim() != in_dim_) throw ShapeError("batch operators disagree on in_dim");
  }
}

BatchJacobian batch_from_model(const Model& model, const std::string& cut,
                               const std::vector<Tensor>& batch) {
  if (batch.empty()) throw EmptyDataError("empty sample batch");
  std::vector<LinearOperator> ops;
  ops.reserve(batch.size());
  for (const Tensor& x : batch) ops.push_back(operator_from_model(model, cut, x));
  return BatchJacobian(std::move(ops));
}

AmStep am_step(const BatchJacobian& batch, const Vec& eps, NormExponent q) {
  if (eps.size() != batch.in_dim()) {
    throw ShapeError("am_step: eps length " + std::to_string(eps.size()) +
                     " does not match in_dim " + std::to_string(batch.in_dim()));
  }
  if (q.is_infinite()) throw UnsupportedExponentError("am_step needs finite q");
  const double qv = q.value();
  AmStep result;
  result.direction.assign(batch.in_dim(), 0.0);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Vec b = batch.op(s).apply(eps);
    for (double bi : b) result.objective += std::pow(std::abs(bi), qv);
    const Vec term = batch.op(s).adjoint(psi(b, q));
    for (std::size_t i = 0; i < term.size(); ++i) result.direction[i] += term[i];
  }
  return result;
}

}  // namespace tpower
