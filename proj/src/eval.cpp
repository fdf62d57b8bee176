#include "tpower/eval.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>

#include "tpower/error.hpp"

namespace tpower {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

void check_xi(double xi) {
  if (!(xi > 0.0) || xi > 1.0) {
    throw ConfigError("xi must lie in (0, 1], got " + std::to_string(xi));
  }
}

int spatial_axis_src(int t, int src, int tgt) {
  // Maps a target index to the source index, or -1 for a padded cell.
  // Crop keeps the central window; padding puts the extra cell bottom/right.
  if (src >= tgt) return t + (src - tgt) / 2;
  const int pad = (tgt - src) / 2;
  const int s = t - pad;
  return (s >= 0 && s < src) ? s : -1;
}

}  // namespace

Tensor apply_perturbation(const Tensor& x, const Perturbation& pert, double xi) {
  check_xi(xi);
  if (x.shape != pert.eps.shape) {
    throw ShapeError("perturbation shape " + shape_str(pert.eps.shape) +
                     " does not match input shape " + shape_str(x.shape));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = clamp01(x.data[i] + xi * pert.eps.data[i]);
  }
  return out;
}

double fooling_rate(const Model& model, const std::vector<Tensor>& samples,
                    const Perturbation& pert, double xi) {
  if (samples.empty()) throw EmptyDataError("fooling rate over an empty sample set");
  int flipped = 0;
  for (const Tensor& x : samples) {
    const int clean = model.predict(x);
    const int attacked = model.predict(apply_perturbation(x, pert, xi));
    if (clean != attacked) ++flipped;
  }
  return static_cast<double>(flipped) / static_cast<double>(samples.size());
}

double attack_success_rate(const Model& model, const LabeledDataset& data,
                           const Perturbation& pert, double xi) {
  if (data.samples.empty()) throw EmptyDataError("attack success rate over an empty dataset");
  int clean_correct = 0;
  int broken = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int clean = model.predict(data.samples[i]);
    if (clean != data.labels[i]) continue;
    ++clean_correct;
    const int attacked = model.predict(apply_perturbation(data.samples[i], pert, xi));
    if (attacked != data.labels[i]) ++broken;
  }
  if (clean_correct == 0) {
    throw UndefinedMetricError("attack success rate undefined: no clean-correct samples");
  }
  return static_cast<double>(broken) / static_cast<double>(clean_correct);
}

double damaged_pixel_fraction(const Perturbation& pert) {
  const Shape& s = pert.eps.shape;
  if (s.size() == 3) {
    const int h = s[0], w = s[1], c = s[2];
    int damaged = 0;
    for (int loc = 0; loc < h * w; ++loc) {
      for (int ch = 0; ch < c; ++ch) {
        if (pert.eps.data[static_cast<std::size_t>(loc * c + ch)] != 0.0) {
          ++damaged;
          break;
        }
      }
    }
    return static_cast<double>(damaged) / static_cast<double>(h * w);
  }
  if (s.size() == 1) {
    int damaged = 0;
    for (double v : pert.eps.data) {
      if (v != 0.0) ++damaged;
    }
    return static_cast<double>(damaged) / static_cast<double>(pert.eps.data.size());
  }
  throw ShapeError("damage accounting expects a rank-1 or rank-3 perturbation, got rank " +
                   std::to_string(s.size()));
}

EvalReport evaluate(const Model& model, const LabeledDataset& data,
                    const Perturbation& pert, double xi) {
  if (data.samples.empty()) throw EmptyDataError("evaluation over an empty dataset");
  data.validate(model.num_classes());
  int flipped = 0, clean_correct = 0, attacked_correct = 0, broken = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int clean = model.predict(data.samples[i]);
    const int attacked = model.predict(apply_perturbation(data.samples[i], pert, xi));
    if (clean != attacked) ++flipped;
    if (attacked == data.labels[i]) ++attacked_correct;
    if (clean == data.labels[i]) {
      ++clean_correct;
      if (attacked != data.labels[i]) ++broken;
    }
  }
  if (clean_correct == 0) {
    throw UndefinedMetricError("attack success rate undefined: no clean-correct samples");
  }
  const double n = static_cast<double>(data.samples.size());
  EvalReport report;
  report.fooling_rate = flipped / n;
  report.attack_success_rate = static_cast<double>(broken) / clean_correct;
  report.damaged_pixel_fraction = damaged_pixel_fraction(pert);
  report.clean_accuracy = clean_correct / n;
  report.attacked_accuracy = attacked_correct / n;
  report.n_samples = static_cast<int>(data.samples.size());
  report.config_hash = config_hash(pert.config);
  return report;
}

std::string config_hash(const AttackConfig& cfg) {
  char buf[256];
  const auto exp_str = [](const NormExponent& e, char* out, std::size_t cap) {
    if (e.is_infinite()) {
      std::snprintf(out, cap, "inf");
    } else {
      std::snprintf(out, cap, "%.17g", e.value());
    }
  };
  char qs[32], ps[32];
  exp_str(cfg.q, qs, sizeof qs);
  exp_str(cfg.p, ps, sizeof ps);
  std::snprintf(buf, sizeof buf,
                "n_steps=%d;init_truncation=%.17g;top_k=%d;patch_size=%d;"
                "reduction_steps=%d;q=%s;p=%s;layer=%s;seed=%" PRIu64 ";magnitude=%.17g",
                cfg.n_steps, cfg.init_truncation, cfg.top_k, cfg.patch_size,
                cfg.reduction_steps, qs, ps, cfg.layer.c_str(), cfg.seed, cfg.magnitude);
  // FNV-1a, 64-bit.
  std::uint64_t h = 1469598103934665603ull;
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016" PRIx64, h);
  return std::string(hex);
}

Tensor median_filter(const Tensor& x, int window) {
  if (window < 3 || window % 2 == 0) {
    throw InvalidWindowError("median filter window must be an odd integer >= 3, got " +
                             std::to_string(window));
  }
  if (x.shape.size() != 3) {
    throw ShapeError("median filter expects a rank-3 tensor, got rank " +
                     std::to_string(x.shape.size()));
  }
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  const int half = window / 2;
  Tensor out = x;
  std::vector<double> patch(static_cast<std::size_t>(window) * window);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      for (int ch = 0; ch < c; ++ch) {
        std::size_t n = 0;
        for (int dy = -half; dy <= half; ++dy) {
          const int sy = std::clamp(y + dy, 0, h - 1);
          for (int dx = -half; dx <= half; ++dx) {
            const int sx = std::clamp(xx + dx, 0, w - 1);
            patch[n++] = x.data[static_cast<std::size_t>((sy * w + sx) * c + ch)];
          }
        }
        auto mid = patch.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(patch.begin(), mid, patch.begin() + static_cast<std::ptrdiff_t>(n));
        out.data[static_cast<std::size_t>((y * w + xx) * c + ch)] = *mid;
      }
    }
  }
  return out;
}

Perturbation adapt_perturbation(const Perturbation& pert, const Shape& target_shape) {
  if (pert.eps.shape.size() != 3 || target_shape.size() != 3) {
    throw ShapeError("shape adaptation expects rank-3 perturbations and targets");
  }
  shape_numel(target_shape);
  if (pert.eps.shape[2] != target_shape[2]) {
    throw ChannelMismatchError("cannot adapt " + std::to_string(pert.eps.shape[2]) +
                               "-channel perturbation to " + std::to_string(target_shape[2]) +
                               " channels");
  }
  const int sh = pert.eps.shape[0], sw = pert.eps.shape[1], c = pert.eps.shape[2];
  const int th = target_shape[0], tw = target_shape[1];
  Tensor eps = Tensor::zeros(target_shape);
  for (int ty = 0; ty < th; ++ty) {
    const int sy = spatial_axis_src(ty, sh, th);
    if (sy < 0) continue;
    for (int tx = 0; tx < tw; ++tx) {
      const int sx = spatial_axis_src(tx, sw, tw);
      if (sx < 0) continue;
      for (int ch = 0; ch < c; ++ch) {
        eps.data[static_cast<std::size_t>((ty * tw + tx) * c + ch)] =
            pert.eps.data[static_cast<std::size_t>((sy * sw + sx) * c + ch)];
      }
    }
  }
  Perturbation out;
  out.pattern = SparsityPattern::grid(th, tw, c, pert.config.patch_size);
  out.support = active_blocks(eps.data, out.pattern);
  out.eps = std::move(eps);
  out.config = pert.config;
  out.source_model_id = pert.source_model_id;
  out.objective_trace = pert.objective_trace;
  return out;
}

TransferMatrix transfer_matrix(const std::vector<Perturbation>& perts,
                               const std::vector<Model>& models,
                               const std::vector<std::string>& model_ids,
                               const std::vector<Tensor>& samples, double xi) {
  if (models.size() < 2) throw EmptyDataError("transfer protocol needs at least two models");
  if (perts.size() != models.size() || model_ids.size() != models.size()) {
    throw ShapeError("transfer protocol needs one perturbation and one id per model");
  }
  const std::size_t n = models.size();
  TransferMatrix out;
  out.model_ids = model_ids;
  out.rates.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      try {
        const Perturbation adapted = adapt_perturbation(perts[i], models[j].input_shape());
        out.rates[i][j] = fooling_rate(models[j], samples, adapted, xi);
      } catch (const ChannelMismatchError& e) {
        throw ChannelMismatchError("perturbation from '" + model_ids[i] + "' vs model '" +
                                   model_ids[j] + "': " + e.what());
      }
    }
  }
  return out;
}

std::vector<AttackConfig> grid_configs(const Model& model, const GridSpec& spec) {
  if (spec.layers.empty() || spec.qs.empty() || spec.patch_sizes.empty()) {
    throw ConfigError("grid search needs at least one layer, q, and patch_size");
  }
  std::vector<AttackConfig> configs;
  configs.reserve(spec.layers.size() * spec.qs.size() * spec.patch_sizes.size());
  for (const std::string& layer : spec.layers) {
    for (double qv : spec.qs) {
      for (int patch : spec.patch_sizes) {
        AttackConfig cfg;
        cfg.n_steps = spec.n_steps;
        cfg.init_truncation = spec.init_truncation;
        cfg.patch_size = patch;
        cfg.reduction_steps = spec.reduction_steps;
        cfg.q = NormExponent(qv);
        cfg.p = spec.p;
        cfg.layer = layer;
        cfg.seed = spec.seed;

        const Shape& in = model.input_shape();
        std::size_t blocks;
        if (in.size() == 3) {
          blocks = SparsityPattern::grid(in[0], in[1], in[2], patch).block_count();
        } else {
          blocks = shape_numel(in);
        }
        const double want = std::floor(spec.damage_budget * static_cast<double>(blocks));
        cfg.top_k = static_cast<int>(std::clamp<double>(want, 1.0, static_cast<double>(blocks)));
        configs.push_back(std::move(cfg));
      }
    }
  }
  return configs;
}

std::size_t select_grid_winner(const Model& model, const std::vector<GridPointReport>& points) {
  if (points.empty()) throw EmptyDataError("no grid points to select from");
  std::size_t best = 0;
  int best_layer_idx = model.layer_index(points[0].layer);
  for (std::size_t i = 1; i < points.size(); ++i) {
    const int layer_idx = model.layer_index(points[i].layer);
    const GridPointReport& cand = points[i];
    const GridPointReport& cur = points[best];
    const bool better =
        cand.val_fr > cur.val_fr ||
        (cand.val_fr == cur.val_fr &&
         (layer_idx < best_layer_idx ||
          (layer_idx == best_layer_idx &&
           (cand.q < cur.q || (cand.q == cur.q && cand.patch_size < cur.patch_size)))));
    if (better) {
      best = i;
      best_layer_idx = layer_idx;
    }
  }
  return best;
}

GridSearchResult grid_search(const Model& model, const std::vector<Tensor>& fit_batch,
                             const std::vector<Tensor>& val_samples, const GridSpec& spec) {
  const std::vector<AttackConfig> configs = grid_configs(model, spec);
  GridSearchResult result;
  std::vector<Perturbation> perts;
  perts.reserve(configs.size());
  for (const AttackConfig& cfg : configs) {
    Perturbation pert = tpower_attack(model, fit_batch, cfg);
    GridPointReport point;
    point.layer = cfg.layer;
    point.q = cfg.q.value();
    point.patch_size = cfg.patch_size;
    point.top_k = cfg.top_k;
    point.val_fr = fooling_rate(model, val_samples, pert, spec.xi);
    result.points.push_back(point);
    perts.push_back(std::move(pert));
  }
  result.best_index = select_grid_winner(model, result.points);
  result.best = std::move(perts[result.best_index]);
  return result;
}

}  // namespace tpower
