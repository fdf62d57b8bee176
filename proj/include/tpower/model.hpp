#pragma once

#include <string>
#include <vector>

#include "tpower/layers.hpp"
#include "tpower/tensor.hpp"

namespace tpower {

// Sequential network. Every layer boundary is a cut point, auto-named
// "<kind><index>" (conv0, relu1, ...). The last layer's output is the logit
// vector of length num_classes.
class Model {
 public:
  Model(Shape input_shape, std::vector<Layer> layers, int num_classes);

  const Shape& input_shape() const { return input_shape_; }
  int num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }

  const std::vector<std::string>& cut_points() const { return names_; }
  // Index of a named cut point; throws LookupError on unknown names.
  int layer_index(const std::string& cut) const;
  // Output shape after layer i (i in [0, layer_count)).
  const Shape& shape_after(int i) const { return shapes_[i + 1]; }

  Tensor forward(const Tensor& x) const;
  Tensor forward_to_layer(const std::string& cut, const Tensor& x) const;
  // Argmax of the logits; ties go to the lowest class index.
  int predict(const Tensor& x) const;

 private:
  void check_input(const Tensor& x) const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  int num_classes_;
  std::vector<std::string> names_;
  std::vector<Shape> shapes_;  // shapes_[0] = input, shapes_[i+1] = after layer i
};

// Frozen linearization of x -> activation after layer cut_idx: one primal
// pass records every activation decision, then jvp/vjp apply the exact same
// linear operator and its transpose.
class ModelTape {
 public:
  ModelTape(const Model& model, int cut_idx, const Tensor& x, bool keep_inputs = false);

  const Tensor& output() const { return output_; }
  std::size_t in_dim() const;
  std::size_t out_dim() const { return output_.size(); }

  Vec jvp(const Vec& v) const;
  Vec vjp(const Vec& u) const;

  int cut_index() const { return cut_idx_; }
  const std::vector<LayerContext>& contexts() const { return ctxs_; }

 private:
  const Model* model_;
  int cut_idx_;
  Tensor output_;
  std::vector<LayerContext> ctxs_;
};

// Convenience wrappers building a fresh tape per call.
Tensor model_jvp(const Model& model, const std::string& cut, const Tensor& x,
                 const Tensor& v);
Tensor model_vjp(const Model& model, const std::string& cut, const Tensor& x,
                 const Tensor& u);

int argmax_lowest(const Vec& v);

}  // namespace tpower
