#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpower/jacobian.hpp"
#include "tpower/model.hpp"
#include "tpower/numerics.hpp"

namespace tpower {

// Hyperparameters of the truncated power attack.
struct AttackConfig {
  int n_steps = 100;
  double init_truncation = 1.0;  // starting cardinality as a block fraction, (0,1]
  int top_k = 1;                 // target active block count
  int patch_size = 1;
  int reduction_steps = 10;      // cardinality update period
  NormExponent q{1.0};           // hidden-layer norm, finite
  NormExponent p = NormExponent::infinity();  // input-norm constraint
  std::string layer;             // cut-point name
  std::uint64_t seed = 0;
  double magnitude = 1.0;        // evaluation scale xi, (0,1]
};

// Throws ConfigError on out-of-range fields (block_count checks top_k).
void validate_config(const AttackConfig& cfg, std::size_t block_count);

// Sparse universal perturbation: unit p-norm, nonzeros confined to the
// support blocks, at most top_k of them once the attack terminates.
struct Perturbation {
  Tensor eps;
  SparsityPattern pattern;
  std::vector<std::size_t> support;  // active block ids, ascending
  AttackConfig config;
  std::string source_model_id;
  std::vector<double> objective_trace;  // sum_x ||J eps||_q^q per iterate
};

std::vector<std::size_t> active_blocks(const Vec& v, const SparsityPattern& pattern);

// Geometric cardinality decay toward top_k, evaluated at an update event.
// step must be a positive multiple of reduction_steps.
std::size_t cardinality_schedule(std::size_t k_current, std::size_t top_k, int n_steps,
                                 int reduction_steps, int step);

struct LoopOptions {
  // Override of the seeded random start (sign-symmetry and planted tests).
  std::optional<Vec> initial_eps;
};

// The attack loop over explicit per-sample operators. The pattern must cover
// the operator input space. Deterministic given (batch, cfg).
Perturbation tpower_loop(const BatchJacobian& batch, const SparsityPattern& pattern,
                         const AttackConfig& cfg, const LoopOptions& opts = {});

// Model-level attack: blocks are patch_size x patch_size pixel patches across
// all channels of the input image.
Perturbation tpower_attack(const Model& model, const std::vector<Tensor>& batch,
                           const AttackConfig& cfg, const std::string& model_id = "");

// Dense singular-vector baseline: the same loop at full cardinality.
Perturbation sv_attack(const Model& model, const std::vector<Tensor>& batch,
                       const std::string& layer, NormExponent q, NormExponent p,
                       int n_steps, std::uint64_t seed,
                       const std::string& model_id = "");

// Unlinearized baseline: projected gradient ascent of
// sum_x ||l(x + zeta) - l(x)||_q^q over the p-ball of radius `magnitude`.
// Stored eps = zeta / magnitude. Supports p in {2, inf}.
Perturbation sgd_layer_max_attack(const Model& model, const std::vector<Tensor>& batch,
                                  const std::string& layer, NormExponent q,
                                  NormExponent p, double magnitude, int steps,
                                  double lr, std::uint64_t seed,
                                  const std::string& model_id = "");

}  // namespace tpower
