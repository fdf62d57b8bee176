#include "tpower/model.hpp"

#include <utility>

namespace tpower {

Model::Model(Shape input_shape, std::vector<Layer> layers, int num_classes)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      num_classes_(num_classes) {
  if (layers_.empty()) throw ShapeError("model needs at least one layer");
  if (num_classes_ < 2) throw ShapeError("model needs at least two classes");
  shapes_.reserve(layers_.size() + 1);
  shapes_.push_back(input_shape_);
  names_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(layer_out_shape(layers_[i], shapes_.back()));
    names_.push_back(std::string(layer_kind(layers_[i])) + std::to_string(i));
  }
  const Shape& out = shapes_.back();
  if (out.size() != 1 || out[0] != num_classes_) {
    throw ShapeError("model output shape " + shape_str(out) + " is not (" +
                     std::to_string(num_classes_) + ")");
  }
}

int Model::layer_index(const std::string& cut) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == cut) return static_cast<int>(i);
  }
  throw LookupError("unknown cut point '" + cut + "'");
}

void Model::check_input(const Tensor& x) const {
  if (x.shape != input_shape_) {
    throw ShapeError("input shape " + shape_str(x.shape) + " does not match model " +
                     shape_str(input_shape_));
  }
}

Tensor Model::forward(const Tensor& x) const {
  check_input(x);
  Tensor cur = x;
  LayerContext ctx;
  for (const Layer& layer : layers_) cur = layer_forward(layer, cur, ctx);
  return cur;
}

Tensor Model::forward_to_layer(const std::string& cut, const Tensor& x) const {
  const int idx = layer_index(cut);
  check_input(x);
  Tensor cur = x;
  LayerContext ctx;
  for (int i = 0; i <= idx; ++i) cur = layer_forward(layers_[i], cur, ctx);
  return cur;
}

int argmax_lowest(const Vec& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

int Model::predict(const Tensor& x) const { return argmax_lowest(forward(x).data); }

ModelTape::ModelTape(const Model& model, int cut_idx, const Tensor& x, bool keep_inputs)
    : model_(&model), cut_idx_(cut_idx) {
  if (cut_idx < 0 || cut_idx >= static_cast<int>(model.layer_count())) {
    throw LookupError("cut index " + std::to_string(cut_idx) + " out of range");
  }
  if (x.shape != model.input_shape()) {
    throw ShapeError("tape input shape " + shape_str(x.shape) + " does not match model " +
                     shape_str(model.input_shape()));
  }
  ctxs_.resize(cut_idx + 1);
  Tensor cur = x;
  for (int i = 0; i <= cut_idx; ++i) {
    cur = layer_forward(model.layers()[i], cur, ctxs_[i], keep_inputs);
  }
  output_ = std::move(cur);
}

std::size_t ModelTape::in_dim() const { return shape_numel(model_->input_shape()); }

Vec ModelTape::jvp(const Vec& v) const {
  if (v.size() != in_dim()) {
    throw ShapeError("jvp direction length " + std::to_string(v.size()) +
                     " does not match input dim " + std::to_string(in_dim()));
  }
  Vec cur = v;
  for (int i = 0; i <= cut_idx_; ++i) {
    cur = layer_jvp(model_->layers()[i], ctxs_[i], cur);
  }
  return cur;
}

Vec ModelTape::vjp(const Vec& u) const {
  if (u.size() != out_dim()) {
    throw ShapeError("vjp covector length " + std::to_string(u.size()) +
                     " does not match output dim " + std::to_string(out_dim()));
  }
  Vec cur = u;
  for (int i = cut_idx_; i >= 0; --i) {
    cur = layer_vjp(model_->layers()[i], ctxs_[i], cur);
  }
  return cur;
}

Tensor model_jvp(const Model& model, const std::string& cut, const Tensor& x,
                 const Tensor& v) {
  if (v.shape != x.shape) {
    throw ShapeError("jvp direction shape " + shape_str(v.shape) +
                     " does not match input " + shape_str(x.shape));
  }
  ModelTape tape(model, model.layer_index(cut), x);
  return Tensor(tape.output().shape, tape.jvp(v.data));
}

Tensor model_vjp(const Model& model, const std::string& cut, const Tensor& x,
                 const Tensor& u) {
  ModelTape tape(model, model.layer_index(cut), x);
  if (u.shape != tape.output().shape) {
    throw ShapeError("vjp covector shape " + shape_str(u.shape) +
                     " does not match layer output " + shape_str(tape.output().shape));
  }
  return Tensor(model.input_shape(), tape.vjp(u.data));
}

}  // namespace tpower
