#pragma once

#include <cstdint>
#include <vector>

#include "tpower/tensor.hpp"

namespace tpower {

// Samples are images with values in [0,1]; labels are class indices.
struct LabeledDataset {
  std::vector<Tensor> samples;
  std::vector<int> labels;

  std::size_t size() const { return samples.size(); }
  void push(Tensor t, int label);
  void validate(int num_classes) const;
};

struct Dataset {
  LabeledDataset train, val, test;
};

// Seeded shuffle split: train_count samples for attack fitting / training,
// val_fraction of the remainder for validation, the rest for test.
// train_count is clamped to leave at least one val and one test sample.
Dataset split_dataset(const LabeledDataset& all, std::size_t train_count,
                      double val_fraction, std::uint64_t seed);

// Synthetic labeled images: oriented sinusoidal gratings, one
// (orientation, frequency) pair per class, with per-sample random phase,
// contrast and pixel noise. Values in [0,1]. Deterministic in seed.
LabeledDataset generate_synthetic(int num_classes, int height, int width, int channels,
                                  int samples_per_class, std::uint64_t seed);

}  // namespace tpower
