#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "tpower/tensor.hpp"

namespace tpower {

// weights: {out, in}; bias: {out}. Input must be rank 1.
struct Dense {
  Tensor weights;
  Tensor bias;
};

// kernels: {out_c, kh, kw, in_c}; bias: {out_c}. Zero padding. Input HWC.
struct Conv2d {
  Tensor kernels;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

struct ReLU {};

// Non-overlapping window x window pooling, stride = window. Input HWC.
struct MaxPool {
  int window = 2;
};

struct AvgPool {
  int window = 2;
};

struct Flatten {};

using Layer = std::variant<Dense, Conv2d, ReLU, MaxPool, AvgPool, Flatten>;

// Short kind tag used for cut-point names and serialization.
const char* layer_kind(const Layer& layer);

// Output shape for a given input shape; validates compatibility.
Shape layer_out_shape(const Layer& layer, const Shape& in);

// Decisions frozen on the primal pass so jvp and vjp realize the exact same
// linear operator (shared ReLU masks and MaxPool argmax routing).
struct LayerContext {
  Shape in_shape;
  Shape out_shape;
  Vec input;                        // filled only when keep_input was set
  std::vector<char> relu_mask;      // ReLU: input > 0
  std::vector<std::size_t> argmax;  // MaxPool: winning input flat index per output
};

// Primal pass. keep_input stores x into ctx for later parameter gradients.
Tensor layer_forward(const Layer& layer, const Tensor& x, LayerContext& ctx,
                     bool keep_input = false);

// Tangent (Jv) and adjoint (J^T u) of the linearization frozen in ctx.
Vec layer_jvp(const Layer& layer, const LayerContext& ctx, const Vec& v);
Vec layer_vjp(const Layer& layer, const LayerContext& ctx, const Vec& u);

// Gradients of a scalar loss w.r.t. layer parameters given the upstream
// gradient u at the layer output. Requires ctx built with keep_input.
// Both vectors empty for parameter-free layers.
struct ParamGrads {
  Vec weights;
  Vec bias;
};
ParamGrads layer_param_grads(const Layer& layer, const LayerContext& ctx, const Vec& u);

// Zero-initialized parameterized layers; see init_he_uniform in train.hpp.
Dense make_dense(int in_dim, int out_dim);
Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride = 1,
                 int padding = 0);

}  // namespace tpower
