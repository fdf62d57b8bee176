#include "tpower/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tpower/rng.hpp"

namespace tpower {

void LabeledDataset::push(Tensor t, int label) {
  samples.push_back(std::move(t));
  labels.push_back(label);
}

void LabeledDataset::validate(int num_classes) const {
  if (samples.size() != labels.size()) {
    throw ShapeError("dataset sample/label count mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw Error("label " + std::to_string(l) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    }
  }
}

Dataset split_dataset(const LabeledDataset& all, std::size_t train_count,
                      double val_fraction, std::uint64_t seed) {
  const std::size_t n = all.size();
  if (n < 3) throw EmptyDataError("need at least 3 samples to split");
  if (val_fraction <= 0.0 || val_fraction >= 1.0) {
    throw Error("val_fraction must be in (0,1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::size_t n_train = std::min(train_count, n - 2);
  if (n_train == 0) n_train = 1;
  std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(n));
  n_val = std::clamp<std::size_t>(n_val, 1, n - n_train - 1);

  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledDataset& part =
        i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    part.push(all.samples[order[i]], all.labels[order[i]]);
  }
  return out;
}

LabeledDataset generate_synthetic(int num_classes, int height, int width, int channels,
                                  int samples_per_class, std::uint64_t seed) {
  if (num_classes < 2) throw Error("need at least 2 classes");
  if (samples_per_class < 1) throw EmptyDataError("samples_per_class must be positive");
  if (height < 1 || width < 1 || channels < 1) throw ShapeError("bad image dims");

  constexpr double pi = std::numbers::pi;
  const int n_orient = (num_classes + 1) / 2;
  Rng rng(seed);
  LabeledDataset out;
  for (int c = 0; c < num_classes; ++c) {
    // Class signature: orientation from the first factor, spatial frequency
    // (cycles per image) from the second.
    const double theta = pi * static_cast<double>(c % n_orient) / n_orient;
    const double freq = (c / n_orient == 0) ? 2.0 : 4.5;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int s = 0; s < samples_per_class; ++s) {
      const double phase = rng.uniform(0.0, 2.0 * pi);
      const double contrast = rng.uniform(0.28, 0.45);
      std::vector<double> gain(channels);
      for (int ch = 0; ch < channels; ++ch) gain[ch] = rng.uniform(0.85, 1.15);
      Tensor img = Tensor::zeros({height, width, channels});
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double u = (static_cast<double>(x) + 0.5) / width;
          const double v = (static_cast<double>(y) + 0.5) / height;
          const double wave = std::sin(2.0 * pi * freq * (u * ct + v * st) + phase);
          for (int ch = 0; ch < channels; ++ch) {
            const double noise = rng.uniform(-0.06, 0.06);
            double val = 0.5 + contrast * gain[ch] * wave + noise;
            img.data[(static_cast<std::size_t>(y) * width + x) * channels + ch] =
                std::clamp(val, 0.0, 1.0);
          }
        }
      }
      out.push(std::move(img), c);
    }
  }
  return out;
}

}  // namespace tpower
