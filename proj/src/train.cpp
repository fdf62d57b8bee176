#include "tpower/train.hpp"

#include <algorithm>
#include <cmath>

#include "tpower/rng.hpp"

namespace tpower {

namespace {

// Returns softmax cross-entropy loss; grad receives softmax(z) - onehot(label).
double softmax_ce(const Vec& logits, int label, Vec& grad) {
  const double m = *std::max_element(logits.begin(), logits.end());
  grad.resize(logits.size());
  double z = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    grad[j] = std::exp(logits[j] - m);
    z += grad[j];
  }
  for (double& g : grad) g /= z;
  const double p = std::max(grad[static_cast<std::size_t>(label)], 1e-300);
  grad[static_cast<std::size_t>(label)] -= 1.0;
  return -std::log(p);
}

struct GradAccum {
  std::vector<ParamGrads> layers;

  explicit GradAccum(const Model& m) : layers(m.layer_count()) {}

  void add(std::size_t i, const ParamGrads& g) {
    if (g.weights.empty()) return;
    if (layers[i].weights.empty()) {
      layers[i] = g;
      return;
    }
    for (std::size_t j = 0; j < g.weights.size(); ++j) layers[i].weights[j] += g.weights[j];
    for (std::size_t j = 0; j < g.bias.size(); ++j) layers[i].bias[j] += g.bias[j];
  }
};

void apply_update(Model& model, const GradAccum& acc, double scale) {
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const ParamGrads& g = acc.layers[i];
    if (g.weights.empty()) continue;
    Layer& layer = model.mutable_layers()[i];
    if (auto* d = std::get_if<Dense>(&layer)) {
      for (std::size_t j = 0; j < g.weights.size(); ++j) d->weights.data[j] -= scale * g.weights[j];
      for (std::size_t j = 0; j < g.bias.size(); ++j) d->bias.data[j] -= scale * g.bias[j];
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      for (std::size_t j = 0; j < g.weights.size(); ++j) c->kernels.data[j] -= scale * g.weights[j];
      for (std::size_t j = 0; j < g.bias.size(); ++j) c->bias.data[j] -= scale * g.bias[j];
    }
  }
}

// Full-network backward from the logit gradient, accumulating param grads.
void backward(const Model& model, const std::vector<LayerContext>& ctxs,
              Vec grad, GradAccum& acc) {
  for (int i = static_cast<int>(model.layer_count()) - 1; i >= 0; --i) {
    const Layer& layer = model.layers()[i];
    acc.add(static_cast<std::size_t>(i), layer_param_grads(layer, ctxs[i], grad));
    if (i > 0) grad = layer_vjp(layer, ctxs[i], grad);
  }
}

}  // namespace

TrainResult train_sgd(const Model& model, const LabeledDataset& data,
                      const TrainOptions& opts) {
  if (data.size() == 0) throw EmptyDataError("train_sgd: empty dataset");
  data.validate(model.num_classes());
  if (opts.epochs < 0 || opts.batch_size < 1) {
    throw Error("train_sgd: bad epochs/batch_size");
  }

  TrainResult result{model, 0.0, 0.0};
  Model& net = result.model;
  const int last = static_cast<int>(net.layer_count()) - 1;
  Rng rng(opts.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Vec grad;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      GradAccum acc(net);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t s = order[b];
        ModelTape tape(net, last, data.samples[s], /*keep_inputs=*/true);
        softmax_ce(tape.output().data, data.labels[s], grad);
        backward(net, tape.contexts(), grad, acc);
      }
      // Skip the no-op update so lr = 0 leaves weights bit-identical
      // (subtracting 0.0 can still flip signed zeros).
      if (opts.lr != 0.0) {
        apply_update(net, acc, opts.lr / static_cast<double>(stop - start));
      }
    }
  }

  EvalStats stats = model_stats(net, data);
  result.train_loss = stats.loss;
  result.train_accuracy = stats.accuracy;
  return result;
}

void init_he_uniform(Model& model, std::uint64_t seed) {
  Rng rng(seed);
  for (Layer& layer : model.mutable_layers()) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      const double limit = std::sqrt(6.0 / d->weights.shape[1]);
      for (double& w : d->weights.data) w = rng.uniform(-limit, limit);
      std::fill(d->bias.data.begin(), d->bias.data.end(), 0.0);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      const double fan_in = static_cast<double>(c->kernels.shape[1]) *
                            c->kernels.shape[2] * c->kernels.shape[3];
      const double limit = std::sqrt(6.0 / fan_in);
      for (double& w : c->kernels.data) w = rng.uniform(-limit, limit);
      std::fill(c->bias.data.begin(), c->bias.data.end(), 0.0);
    }
  }
}

EvalStats model_stats(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) throw EmptyDataError("model_stats: empty dataset");
  EvalStats stats;
  Vec grad;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Tensor logits = model.forward(data.samples[s]);
    stats.loss += softmax_ce(logits.data, data.labels[s], grad);
    if (argmax_lowest(logits.data) == data.labels[s]) ++correct;
  }
  stats.loss /= static_cast<double>(data.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

double model_accuracy(const Model& model, const LabeledDataset& data) {
  return model_stats(model, data).accuracy;
}

}  // namespace tpower
