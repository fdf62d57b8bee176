#pragma once

#include <cstdint>

#include "tpower/dataset.hpp"
#include "tpower/model.hpp"

namespace tpower {

struct TrainOptions {
  int epochs = 10;
  double lr = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

// Plain minibatch SGD on softmax cross-entropy. Deterministic in seed
// (seeded epoch shuffles, fixed accumulation order). lr = 0 leaves the
// weights bit-identical.
TrainResult train_sgd(const Model& model, const LabeledDataset& data,
                      const TrainOptions& opts);

// He-uniform fill of every Dense/Conv2d weight tensor, biases zeroed.
// Draws consumed in layer order then tensor order, so init is reproducible.
void init_he_uniform(Model& model, std::uint64_t seed);

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalStats model_stats(const Model& model, const LabeledDataset& data);
double model_accuracy(const Model& model, const LabeledDataset& data);

}  // namespace tpower
