#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpower/attack.hpp"
#include "tpower/dataset.hpp"
#include "tpower/model.hpp"
#include "tpower/tensor.hpp"

namespace tpower {

// Metrics for one (model, dataset, perturbation, xi) evaluation.
// attack_success_rate is conditioned on clean-correct samples and is an
// error when that set is empty, so evaluate() refuses untrained garbage
// instead of reporting 0/0 as something.
struct EvalReport {
  double fooling_rate = 0.0;
  double attack_success_rate = 0.0;
  double damaged_pixel_fraction = 0.0;
  double clean_accuracy = 0.0;
  double attacked_accuracy = 0.0;
  int n_samples = 0;
  std::string config_hash;
};

// clamp(x + xi * eps, 0, 1). Shapes must already match; adapt first.
Tensor apply_perturbation(const Tensor& x, const Perturbation& pert, double xi);

// Fraction of samples whose argmax changes under the attack. Label-free.
double fooling_rate(const Model& model, const std::vector<Tensor>& samples,
                    const Perturbation& pert, double xi);

// Among clean-correct samples, the fraction misclassified after the attack.
double attack_success_rate(const Model& model, const LabeledDataset& data,
                           const Perturbation& pert, double xi);

// Fraction of spatial locations with a nonzero perturbation in any channel,
// measured on eps itself (pre-clipping).
double damaged_pixel_fraction(const Perturbation& pert);

EvalReport evaluate(const Model& model, const LabeledDataset& data,
                    const Perturbation& pert, double xi);

// Stable 16-hex-digit digest of an attack configuration.
std::string config_hash(const AttackConfig& cfg);

// Per-channel windowed median with replicate borders. window odd, >= 3.
Tensor median_filter(const Tensor& x, int window);

// Center-crop / zero-pad eps per spatial axis to the target shape.
// Padding puts the extra row/column on the bottom/right. Channel counts
// must match. The sparsity pattern and support are rebuilt on the target
// grid; config and provenance are carried over.
Perturbation adapt_perturbation(const Perturbation& pert, const Shape& target_shape);

// rates[i][j] = fooling rate of models[j] under perts[i] adapted to its
// input shape. Diagonal entries are NaN and are not meaningful.
struct TransferMatrix {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> rates;
};

TransferMatrix transfer_matrix(const std::vector<Perturbation>& perts,
                               const std::vector<Model>& models,
                               const std::vector<std::string>& model_ids,
                               const std::vector<Tensor>& samples, double xi);

// Exhaustive sweep over {layer, q, patch_size} at fixed p. top_k per point
// is the damage budget mapped to whole blocks: clamp(floor(budget * block
// count), 1, block count).
struct GridSpec {
  std::vector<std::string> layers;
  std::vector<double> qs;
  std::vector<int> patch_sizes;
  NormExponent p = NormExponent::infinity();
  double damage_budget = 0.05;
  int n_steps = 100;
  int reduction_steps = 10;
  double init_truncation = 1.0;
  std::uint64_t seed = 0;
  double xi = 1.0;
};

struct GridPointReport {
  std::string layer;
  double q = 0.0;
  int patch_size = 0;
  int top_k = 0;
  double val_fr = 0.0;
};

struct GridSearchResult {
  std::vector<GridPointReport> points;  // grid order: layer-major, then q, then patch
  std::size_t best_index = 0;
  Perturbation best;
};

// One AttackConfig per grid point, in grid order. Points are independent,
// so callers may fit them in parallel and merge afterwards.
std::vector<AttackConfig> grid_configs(const Model& model, const GridSpec& spec);

// Winner index by validation fooling rate. Ties are broken toward the
// earlier model layer, then lower q, then smaller patch_size.
std::size_t select_grid_winner(const Model& model, const std::vector<GridPointReport>& points);

// Fits one attack per grid point on fit_batch and scores validation fooling
// rate, then selects per select_grid_winner.
GridSearchResult grid_search(const Model& model, const std::vector<Tensor>& fit_batch,
                             const std::vector<Tensor>& val_samples, const GridSpec& spec);

}  // namespace tpower
