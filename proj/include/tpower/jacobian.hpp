#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tpower/model.hpp"
#include "tpower/numerics.hpp"

namespace tpower {

// Matrix-free linear map with its adjoint. apply must be linear and adjoint
// must satisfy <apply(v), u> = <v, adjoint(u)>; both are probed in tests.
class LinearOperator {
 public:
  using Fn = std::function<Vec(const Vec&)>;

  LinearOperator(std::size_t in_dim, std::size_t out_dim, Fn apply, Fn adjoint);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }

  Vec apply(const Vec& v) const;    // J v
  Vec adjoint(const Vec& u) const;  // J^T u

 private:
  std::size_t in_dim_, out_dim_;
  Fn apply_, adjoint_;
};

// Jacobian of x -> activation after `cut`, linearized at x with frozen
// activation decisions (one shared primal tape feeds both directions).
LinearOperator operator_from_model(const Model& model, const std::string& cut,
                                   const Tensor& x);

// Explicit row-major matrix as an operator.
LinearOperator operator_from_matrix(std::vector<Vec> rows);

// Operator with apply and adjoint exchanged.
LinearOperator transpose(const LinearOperator& op);

// Dense row-major matrix M with column j = apply(e_j).
// Throws TooLargeError when either dimension exceeds max_dim.
std::vector<Vec> materialize(const LinearOperator& op, std::size_t max_dim);

// Per-sample Jacobians sharing one input space; the stacked operator of the
// batch problem. Sample order is fixed at construction.
class BatchJacobian {
 public:
  explicit BatchJacobian(std::vector<LinearOperator> ops);

  std::size_t size() const { return ops_.size(); }
  std::size_t in_dim() const { return in_dim_; }
  const LinearOperator& op(std::size_t i) const { return ops_[i]; }

 private:
  std::vector<LinearOperator> ops_;
  std::size_t in_dim_;
};

BatchJacobian batch_from_model(const Model& model, const std::string& cut,
                               const std::vector<Tensor>& batch);

// One alternating-maximization step: direction = sum_x J^T(x) psi_q(J(x) eps),
// accumulated in sample order. objective = sum_x ||J(x) eps||_q^q, computed
// from the same per-sample images.
struct AmStep {
  Vec direction;
  double objective = 0.0;
};
AmStep am_step(const BatchJacobian& batch, const Vec& eps, NormExponent q);

}  // namespace tpower
