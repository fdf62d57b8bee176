#include "tpower/attack.hpp"

#include <algorithm>
#include <cmath>

#include "tpower/rng.hpp"

namespace tpower {

namespace {

Vec random_unit(std::size_t n, NormExponent p, std::uint64_t seed) {
  Rng rng(seed);
  Vec v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return renormalize_step(v, p);
}

SparsityPattern pattern_for_input(const Shape& shape, int patch_size) {
  if (shape.size() == 3) {
    return SparsityPattern::grid(shape[0], shape[1], shape[2], patch_size);
  }
  if (shape.size() == 1 && patch_size == 1) {
    return SparsityPattern::singletons(shape_numel(shape));
  }
  throw ShapeError("patch pattern needs an HWC input, got " + shape_str(shape));
}

double objective_of(const BatchJacobian& batch, const Vec& eps, NormExponent q) {
  const double qv = q.value();
  double obj = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (double bi : batch.op(s).apply(eps)) obj += std::pow(std::abs(bi), qv);
  }
  return obj;
}

}  // namespace

void validate_config(const AttackConfig& cfg, std::size_t block_count) {
  if (cfg.n_steps < 1) throw ConfigError("n_steps must be positive");
  if (!(cfg.init_truncation > 0.0 && cfg.init_truncation <= 1.0)) {
    throw ConfigError("init_truncation must be in (0,1]");
  }
  if (cfg.top_k < 1) throw ConfigError("top_k must be positive");
  if (block_count > 0 && static_cast<std::size_t>(cfg.top_k) > block_count) {
    throw ConfigError("top_k " + std::to_string(cfg.top_k) + " exceeds block count " +
                      std::to_string(block_count));
  }
  if (cfg.patch_size < 1) throw ConfigError("patch_size must be positive");
  if (cfg.reduction_steps < 1 || cfg.reduction_steps > cfg.n_steps) {
    throw ConfigError("reduction_steps must be in [1, n_steps]");
  }
  if (cfg.q.is_infinite()) throw ConfigError("q must be finite");
  if (!cfg.p.is_infinite() && cfg.p.value() == 1.0) {
    throw ConfigError("p = 1 is unsupported: the renormalization map psi_inf has no closed form");
  }
  if (!(cfg.magnitude > 0.0 && cfg.magnitude <= 1.0)) {
    throw ConfigError("magnitude must be in (0,1]");
  }
}

std::vector<std::size_t> active_blocks(const Vec& v, const SparsityPattern& pattern) {
  std::vector<std::size_t> out;
  for (std::size_t id = 0; id < pattern.block_count(); ++id) {
    for (std::size_t idx : pattern.block(id)) {
      if (v[idx] != 0.0) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

std::size_t cardinality_schedule(std::size_t k_current, std::size_t top_k, int n_steps,
                                 int reduction_steps, int step) {
  if (top_k < 1 || k_current < top_k) {
    throw InvalidKError("cardinality_schedule: need k_current >= top_k >= 1");
  }
  if (reduction_steps < 1 || n_steps < reduction_steps || step < 1 ||
      step % reduction_steps != 0) {
    throw Error("cardinality_schedule: step must be a positive multiple of reduction_steps");
  }
  if (k_current == top_k) return top_k;
  const double ratio = static_cast<double>(k_current) / static_cast<double>(top_k);
  const double k_reduction =
      std::pow(ratio, static_cast<double>(reduction_steps) / static_cast<double>(n_steps));
  const auto k_next =
      static_cast<std::size_t>(static_cast<double>(k_current) / k_reduction);
  return std::max(k_next, top_k);
}

Perturbation tpower_loop(const BatchJacobian& batch, const SparsityPattern& pattern,
                         const AttackConfig& cfg, const LoopOptions& opts) {
  validate_config(cfg, pattern.block_count());
  if (pattern.total_len() != batch.in_dim()) {
    throw ShapeError("pattern length does not match operator input dim");
  }
  if (opts.initial_eps && opts.initial_eps->size() != batch.in_dim()) {
    throw ShapeError("initial eps length mismatch");
  }

  const std::size_t top_k = static_cast<std::size_t>(cfg.top_k);
  const std::size_t block_count = pattern.block_count();
  const std::size_t k_init = std::clamp<std::size_t>(
      static_cast<std::size_t>(cfg.init_truncation * static_cast<double>(block_count)),
      top_k, block_count);
  const NormExponent pstar = cfg.p.dual();

  for (int attempt = 0; attempt < 2; ++attempt) {
    Vec eps = (attempt == 0 && opts.initial_eps)
                  ? renormalize_step(*opts.initial_eps, cfg.p)
                  : random_unit(batch.in_dim(), cfg.p,
                                cfg.seed + static_cast<std::uint64_t>(attempt));
    std::size_t k = k_init;
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(cfg.n_steps) + 2);
    bool collapsed = false;

    // Main loop: direction -> truncate -> renormalize. The trace records the
    // objective of every post-update iterate (the dense random start is not a
    // constrained iterate, so it is not logged); am_step already evaluates
    // the previous iterate, leaving one extra pass for the last one.
    for (int s = 1; s <= cfg.n_steps && !collapsed; ++s) {
      AmStep step = am_step(batch, eps, cfg.q);
      if (s > 1) trace.push_back(step.objective);
      Vec direction = truncate_topk(step.direction, k, pattern, pstar);
      if (std::all_of(direction.begin(), direction.end(),
                      [](double x) { return x == 0.0; })) {
        collapsed = true;
        break;
      }
      eps = renormalize_step(direction, cfg.p);
      if (s % cfg.reduction_steps == 0) {
        k = cardinality_schedule(k, top_k, cfg.n_steps, cfg.reduction_steps, s);
      }
    }

    // The geometric schedule can terminate above top_k; finish the descent at
    // the target cardinality so the support budget holds at termination.
    if (!collapsed && k > top_k) {
      for (int s = 0; s < cfg.reduction_steps && !collapsed; ++s) {
        AmStep step = am_step(batch, eps, cfg.q);
        trace.push_back(step.objective);
        Vec direction = truncate_topk(step.direction, top_k, pattern, pstar);
        if (std::all_of(direction.begin(), direction.end(),
                        [](double x) { return x == 0.0; })) {
          collapsed = true;
          break;
        }
        eps = renormalize_step(direction, cfg.p);
      }
    }

    if (collapsed) continue;  // one reseeded restart

    trace.push_back(objective_of(batch, eps, cfg.q));
    Perturbation out;
    const int len = static_cast<int>(eps.size());
    out.eps = Tensor({len}, std::move(eps));
    out.pattern = pattern;
    out.support = active_blocks(out.eps.data, pattern);
    out.config = cfg;
    out.objective_trace = std::move(trace);
    return out;
  }
  throw DegenerateIterateError("attack iterate collapsed to zero after restart");
}

Perturbation tpower_attack(const Model& model, const std::vector<Tensor>& batch,
                           const AttackConfig& cfg, const std::string& model_id) {
  SparsityPattern pattern = pattern_for_input(model.input_shape(), cfg.patch_size);
  Perturbation out = tpower_loop(batch_from_model(model, cfg.layer, batch), pattern, cfg);
  out.eps = Tensor(model.input_shape(), std::move(out.eps.data));
  out.source_model_id = model_id;
  return out;
}

Perturbation sv_attack(const Model& model, const std::vector<Tensor>& batch,
                       const std::string& layer, NormExponent q, NormExponent p,
                       int n_steps, std::uint64_t seed, const std::string& model_id) {
  SparsityPattern pattern = pattern_for_input(model.input_shape(), 1);
  AttackConfig cfg;
  cfg.n_steps = n_steps;
  cfg.init_truncation = 1.0;
  cfg.top_k = static_cast<int>(pattern.block_count());
  cfg.patch_size = 1;
  cfg.reduction_steps = std::max(1, n_steps / 10);
  cfg.q = q;
  cfg.p = p;
  cfg.layer = layer;
  cfg.seed = seed;
  Perturbation out = tpower_loop(batch_from_model(model, layer, batch), pattern, cfg);
  out.eps = Tensor(model.input_shape(), std::move(out.eps.data));
  out.source_model_id = model_id;
  return out;
}

namespace {

void project_ball(Vec& v, NormExponent p, double radius) {
  if (p.is_infinite()) {
    for (double& x : v) x = std::clamp(x, -radius, radius);
    return;
  }
  if (p.value() == 2.0) {
    const double n = lp_norm(v, p);
    if (n > radius) {
      const double s = radius / n;
      for (double& x : v) x *= s;
    }
    return;
  }
  throw UnsupportedExponentError("ball projection supports p in {2, inf}");
}

}  // namespace

Perturbation sgd_layer_max_attack(const Model& model, const std::vector<Tensor>& batch,
                                  const std::string& layer, NormExponent q,
                                  NormExponent p, double magnitude, int steps,
                                  double lr, std::uint64_t seed,
                                  const std::string& model_id) {
  if (batch.empty()) throw EmptyDataError("empty sample batch");
  if (q.is_infinite()) throw ConfigError("q must be finite");
  if (!(magnitude > 0.0 && magnitude <= 1.0)) throw ConfigError("magnitude must be in (0,1]");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  const int cut = model.layer_index(layer);
  const std::size_t n = shape_numel(model.input_shape());
  const double qv = q.value();

  // Clean-layer outputs are fixed; only the perturbed tape moves.
  std::vector<Vec> clean;
  clean.reserve(batch.size());
  for (const Tensor& x : batch) {
    clean.push_back(ModelTape(model, cut, x).output().data);
  }

  Rng rng(seed);
  Vec zeta(n);
  for (double& z : zeta) z = rng.uniform(-1.0, 1.0);
  project_ball(zeta, p, magnitude);

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(steps) + 1);
  Vec grad(n, 0.0);
  for (int s = 0; s <= steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double obj = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor shifted = batch[i];
      for (std::size_t j = 0; j < n; ++j) shifted.data[j] += zeta[j];
      ModelTape tape(model, cut, shifted);
      Vec r = tape.output().data;
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= clean[i][j];
      for (double rj : r) obj += std::pow(std::abs(rj), qv);
      Vec term = tape.vjp(psi(r, q));
      for (std::size_t j = 0; j < n; ++j) grad[j] += qv * term[j];
    }
    trace.push_back(obj);
    if (s == steps) break;
    if (lr != 0.0) {
      for (std::size_t j = 0; j < n; ++j) zeta[j] += lr * grad[j];
      project_ball(zeta, p, magnitude);
    }
  }

  Perturbation out;
  Vec eps = std::move(zeta);
  for (double& e : eps) e /= magnitude;
  out.eps = Tensor(model.input_shape(), std::move(eps));
  out.pattern = pattern_for_input(model.input_shape(), 1);
  out.support = active_blocks(out.eps.data, out.pattern);
  out.config.layer = layer;
  out.config.q = q;
  out.config.p = p;
  out.config.magnitude = magnitude;
  out.config.n_steps = steps;
  out.config.seed = seed;
  out.config.top_k = static_cast<int>(out.pattern.block_count());
  out.source_model_id = model_id;
  out.objective_trace = std::move(trace);
  return out;
}

}  // namespace tpower
