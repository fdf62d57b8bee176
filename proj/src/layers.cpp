#include "tpower/layers.hpp"

#include <algorithm>
#include <cstddef>

namespace tpower {

namespace {

struct KindVisitor {
  const char* operator()(const Dense&) const { return "dense"; }
  const char* operator()(const Conv2d&) const { return "conv"; }
  const char* operator()(const ReLU&) const { return "relu"; }
  const char* operator()(const MaxPool&) const { return "maxpool"; }
  const char* operator()(const AvgPool&) const { return "avgpool"; }
  const char* operator()(const Flatten&) const { return "flatten"; }
};

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Shape dense_out_shape(const Dense& d, const Shape& in) {
  require(in.size() == 1, "dense expects rank-1 input, got " + shape_str(in));
  require(d.weights.shape.size() == 2, "dense weights must be rank 2");
  require(d.bias.shape.size() == 1, "dense bias must be rank 1");
  require(d.weights.shape[1] == in[0],
          "dense weights expect input " + std::to_string(d.weights.shape[1]) +
              ", got " + shape_str(in));
  require(d.bias.shape[0] == d.weights.shape[0], "dense bias length mismatch");
  return {d.weights.shape[0]};
}

Shape conv_out_shape(const Conv2d& c, const Shape& in) {
  require(in.size() == 3, "conv expects HWC input, got " + shape_str(in));
  require(c.kernels.shape.size() == 4, "conv kernels must be rank 4 (OC,KH,KW,IC)");
  require(c.bias.shape.size() == 1 && c.bias.shape[0] == c.kernels.shape[0],
          "conv bias length mismatch");
  require(c.stride >= 1, "conv stride must be >= 1");
  require(c.padding >= 0, "conv padding must be >= 0");
  require(c.kernels.shape[3] == in[2],
          "conv kernels expect " + std::to_string(c.kernels.shape[3]) +
              " input channels, got " + std::to_string(in[2]));
  const int kh = c.kernels.shape[1], kw = c.kernels.shape[2];
  const int eh = in[0] + 2 * c.padding - kh, ew = in[1] + 2 * c.padding - kw;
  require(eh >= 0 && ew >= 0, "conv kernel larger than padded input");
  return {eh / c.stride + 1, ew / c.stride + 1, c.kernels.shape[0]};
}

Shape pool_out_shape(int window, const Shape& in, const char* what) {
  require(in.size() == 3, std::string(what) + " expects HWC input, got " + shape_str(in));
  require(window >= 1, std::string(what) + " window must be >= 1");
  require(in[0] >= window && in[1] >= window,
          std::string(what) + " window exceeds input size");
  return {in[0] / window, in[1] / window, in[2]};
}

// Enumerates conv taps: calls f(out_flat, in_flat, kernel_flat) for every
// in-bounds (output element, kernel element) pair, with the channel loops
// innermost. Fixed iteration order keeps all conv passes deterministic.
template <typename F>
void conv_taps(const Conv2d& c, const Shape& in, const Shape& out, F&& f) {
  const int h = in[0], w = in[1], ic = in[2];
  const int oh = out[0], ow = out[1], oc = out[2];
  const int kh = c.kernels.shape[1], kw = c.kernels.shape[2];
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * c.stride + ky - c.padding;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * c.stride + kx - c.padding;
          if (ix < 0 || ix >= w) continue;
          const std::size_t in_base = (static_cast<std::size_t>(iy) * w + ix) * ic;
          const std::size_t out_base = (static_cast<std::size_t>(oy) * ow + ox) * oc;
          for (int co = 0; co < oc; ++co) {
            const std::size_t k_base =
                ((static_cast<std::size_t>(co) * kh + ky) * kw + kx) * ic;
            for (int ci = 0; ci < ic; ++ci) {
              f(out_base + co, in_base + ci, k_base + ci);
            }
          }
        }
      }
    }
  }
}

template <typename F>
void pool_windows(int window, const Shape& in, const Shape& out, F&& f) {
  const int w = in[1], c = in[2];
  const int oh = out[0], ow = out[1];
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t out_flat = (static_cast<std::size_t>(oy) * ow + ox) * c + ch;
        for (int ky = 0; ky < window; ++ky) {
          for (int kx = 0; kx < window; ++kx) {
            const int iy = oy * window + ky, ix = ox * window + kx;
            const std::size_t in_flat = (static_cast<std::size_t>(iy) * w + ix) * c + ch;
            f(out_flat, in_flat);
          }
        }
      }
    }
  }
}

}  // namespace

const char* layer_kind(const Layer& layer) { return std::visit(KindVisitor{}, layer); }

Shape layer_out_shape(const Layer& layer, const Shape& in) {
  shape_numel(in);
  return std::visit(
      [&]([[maybe_unused]] const auto& l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) return dense_out_shape(l, in);
        else if constexpr (std::is_same_v<T, Conv2d>) return conv_out_shape(l, in);
        else if constexpr (std::is_same_v<T, ReLU>) return in;
        else if constexpr (std::is_same_v<T, MaxPool>) return pool_out_shape(l.window, in, "maxpool");
        else if constexpr (std::is_same_v<T, AvgPool>) return pool_out_shape(l.window, in, "avgpool");
        else return Shape{static_cast<int>(shape_numel(in))};
      },
      layer);
}

Tensor layer_forward(const Layer& layer, const Tensor& x, LayerContext& ctx,
                     bool keep_input) {
  ctx.in_shape = x.shape;
  ctx.out_shape = layer_out_shape(layer, x.shape);
  if (keep_input) ctx.input = x.data;

  Tensor out = Tensor::zeros(ctx.out_shape);
  std::visit(
      [&]([[maybe_unused]] const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          const int m = l.weights.shape[0], n = l.weights.shape[1];
          for (int o = 0; o < m; ++o) {
            double acc = l.bias.data[o];
            const double* wrow = &l.weights.data[static_cast<std::size_t>(o) * n];
            for (int i = 0; i < n; ++i) acc += wrow[i] * x.data[i];
            out.data[o] = acc;
          }
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          const int oc = ctx.out_shape[2];
          const std::size_t on = out.size();
          for (std::size_t i = 0; i < on; ++i) out.data[i] = l.bias.data[i % oc];
          conv_taps(l, ctx.in_shape, ctx.out_shape,
                    [&](std::size_t of, std::size_t inf, std::size_t kf) {
                      out.data[of] += l.kernels.data[kf] * x.data[inf];
                    });
        } else if constexpr (std::is_same_v<T, ReLU>) {
          ctx.relu_mask.resize(x.size());
          for (std::size_t i = 0; i < x.size(); ++i) {
            ctx.relu_mask[i] = x.data[i] > 0.0;
            out.data[i] = ctx.relu_mask[i] ? x.data[i] : 0.0;
          }
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          ctx.argmax.assign(out.size(), 0);
          std::vector<char> started(out.size(), 0);
          pool_windows(l.window, ctx.in_shape, ctx.out_shape,
                       [&](std::size_t of, std::size_t inf) {
                         // First strictly-larger value wins; scan order makes
                         // ties resolve to the lowest input index.
                         if (!started[of] || x.data[inf] > out.data[of]) {
                           started[of] = 1;
                           out.data[of] = x.data[inf];
                           ctx.argmax[of] = inf;
                         }
                       });
        } else if constexpr (std::is_same_v<T, AvgPool>) {
          const double inv = 1.0 / (static_cast<double>(l.window) * l.window);
          pool_windows(l.window, ctx.in_shape, ctx.out_shape,
                       [&](std::size_t of, std::size_t inf) {
                         out.data[of] += x.data[inf] * inv;
                       });
        } else {
          out.data = x.data;
        }
      },
      layer);
  return out;
}

Vec layer_jvp(const Layer& layer, const LayerContext& ctx, const Vec& v) {
  if (v.size() != shape_numel(ctx.in_shape)) {
    throw ShapeError("jvp direction length mismatch at " + shape_str(ctx.in_shape));
  }
  Vec out(shape_numel(ctx.out_shape), 0.0);
  std::visit(
      [&]([[maybe_unused]] const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          const int m = l.weights.shape[0], n = l.weights.shape[1];
          for (int o = 0; o < m; ++o) {
            double acc = 0.0;
            const double* wrow = &l.weights.data[static_cast<std::size_t>(o) * n];
            for (int i = 0; i < n; ++i) acc += wrow[i] * v[i];
            out[o] = acc;
          }
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          conv_taps(l, ctx.in_shape, ctx.out_shape,
                    [&](std::size_t of, std::size_t inf, std::size_t kf) {
                      out[of] += l.kernels.data[kf] * v[inf];
                    });
        } else if constexpr (std::is_same_v<T, ReLU>) {
          for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = ctx.relu_mask[i] ? v[i] : 0.0;
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          for (std::size_t o = 0; o < out.size(); ++o) out[o] = v[ctx.argmax[o]];
        } else if constexpr (std::is_same_v<T, AvgPool>) {
          const double inv = 1.0 / (static_cast<double>(l.window) * l.window);
          pool_windows(l.window, ctx.in_shape, ctx.out_shape,
                       [&](std::size_t of, std::size_t inf) { out[of] += v[inf] * inv; });
        } else {
          out = v;
        }
      },
      layer);
  return out;
}

Vec layer_vjp(const Layer& layer, const LayerContext& ctx, const Vec& u) {
  if (u.size() != shape_numel(ctx.out_shape)) {
    throw ShapeError("vjp covector length mismatch at " + shape_str(ctx.out_shape));
  }
  Vec out(shape_numel(ctx.in_shape), 0.0);
  std::visit(
      [&]([[maybe_unused]] const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          const int m = l.weights.shape[0], n = l.weights.shape[1];
          for (int o = 0; o < m; ++o) {
            const double g = u[o];
            const double* wrow = &l.weights.data[static_cast<std::size_t>(o) * n];
            for (int i = 0; i < n; ++i) out[i] += wrow[i] * g;
          }
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          conv_taps(l, ctx.in_shape, ctx.out_shape,
                    [&](std::size_t of, std::size_t inf, std::size_t kf) {
                      out[inf] += l.kernels.data[kf] * u[of];
                    });
        } else if constexpr (std::is_same_v<T, ReLU>) {
          for (std::size_t i = 0; i < u.size(); ++i)
            out[i] = ctx.relu_mask[i] ? u[i] : 0.0;
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          for (std::size_t o = 0; o < u.size(); ++o) out[ctx.argmax[o]] += u[o];
        } else if constexpr (std::is_same_v<T, AvgPool>) {
          const double inv = 1.0 / (static_cast<double>(l.window) * l.window);
          pool_windows(l.window, ctx.in_shape, ctx.out_shape,
                       [&](std::size_t of, std::size_t inf) { out[inf] += u[of] * inv; });
        } else {
          out = u;
        }
      },
      layer);
  return out;
}

Dense make_dense(int in_dim, int out_dim) {
  return Dense{Tensor::zeros({out_dim, in_dim}), Tensor::zeros({out_dim})};
}

Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride,
                 int padding) {
  return Conv2d{Tensor::zeros({out_channels, kernel, kernel, in_channels}),
                Tensor::zeros({out_channels}), stride, padding};
}

ParamGrads layer_param_grads(const Layer& layer, const LayerContext& ctx, const Vec& u) {
  ParamGrads g;
  std::visit(
      [&]([[maybe_unused]] const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          if (ctx.input.empty()) throw Error("param grads need keep_input contexts");
          const int m = l.weights.shape[0], n = l.weights.shape[1];
          g.weights.assign(l.weights.size(), 0.0);
          g.bias.assign(l.bias.size(), 0.0);
          for (int o = 0; o < m; ++o) {
            const double go = u[o];
            g.bias[o] = go;
            double* wrow = &g.weights[static_cast<std::size_t>(o) * n];
            for (int i = 0; i < n; ++i) wrow[i] = go * ctx.input[i];
          }
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          if (ctx.input.empty()) throw Error("param grads need keep_input contexts");
          g.weights.assign(l.kernels.size(), 0.0);
          g.bias.assign(l.bias.size(), 0.0);
          const int oc = ctx.out_shape[2];
          for (std::size_t of = 0; of < u.size(); ++of) g.bias[of % oc] += u[of];
          conv_taps(l, ctx.in_shape, ctx.out_shape,
                    [&](std::size_t of, std::size_t inf, std::size_t kf) {
                      g.weights[kf] += u[of] * ctx.input[inf];
                    });
        }
      },
      layer);
  return g;
}

}  // namespace tpower
