#include "stoneseg/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace stoneseg::nn {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(' << shape[0] << ',' << shape[1] << ',' << shape[2] << ',' << shape[3] << ')';
  return os.str();
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3x3:
      return "conv3x3";
    case LayerKind::conv1x1:
      return "conv1x1";
    case LayerKind::relu:
      return "relu";
    case LayerKind::sigmoid:
      return "sigmoid";
    case LayerKind::maxpool2:
      return "maxpool2";
    case LayerKind::upsample2:
      return "upsample2";
    case LayerKind::concat:
      return "concat";
    case LayerKind::add:
      return "add";
    case LayerKind::norm:
      return "norm";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(LayerKind kind, std::string_view name, const std::string& detail) {
  std::string msg(to_string(kind));
  if (!name.empty()) msg += " '" + std::string(name) + "'";
  throw ShapeError(msg + ": " + detail);
}

template <typename Scalar>
void expect_inputs(LayerKind kind, std::string_view name, std::span<const Tensor<Scalar>* const> inputs,
                   std::size_t expected) {
  if (inputs.size() != expected) {
    shape_error(kind, name, "expected " + std::to_string(expected) + " inputs, got " + std::to_string(inputs.size()));
  }
}

template <typename Scalar>
void check_conv(LayerKind kind, std::string_view name, const LayerParams<Scalar>& p, const Tensor<Scalar>& x,
                Index k) {
  if (!p.weight || !p.bias) shape_error(kind, name, "missing weight or bias");
  const Shape& w = p.weight->shape();
  if (w[1] != x.channels() || w[2] != k || w[3] != k) {
    shape_error(kind, name, "input " + to_string(x.shape()) + " vs weight " + to_string(w));
  }
  if (p.bias->size() != w[0]) shape_error(kind, name, "bias " + to_string(p.bias->shape()) + " vs weight " + to_string(w));
}

// Column matrix of one sample for a 3x3 same-padded convolution:
// row (c*9 + ky*3 + kx), column (y*W + x) holds x[c, y+ky-1, x+kx-1].
template <typename Scalar>
void im2col3x3(const Scalar* src, Index channels, Index height, Index width,
               typename Tensor<Scalar>::RowMatrix& col) {
  col.resize(channels * 9, height * width);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = src + c * height * width;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* dst = col.data() + (c * 9 + ky * 3 + kx) * height * width;
        const Index dx = kx - 1;
        const Index x_begin = std::max<Index>(0, -dx);
        const Index x_end = std::min(width, width - dx);
        for (Index y = 0; y < height; ++y) {
          Scalar* row = dst + y * width;
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, Scalar(0));
            continue;
          }
          const Scalar* srow = plane + sy * width;
          std::fill(row, row + x_begin, Scalar(0));
          std::copy(srow + x_begin + dx, srow + x_end + dx, row + x_begin);
          std::fill(row + x_end, row + width, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im3x3_add(const typename Tensor<Scalar>::RowMatrix& col, Index channels, Index height, Index width,
                   Scalar* dst) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = dst + c * height * width;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* src = col.data() + (c * 9 + ky * 3 + kx) * height * width;
        const Index dx = kx - 1;
        const Index x_begin = std::max<Index>(0, -dx);
        const Index x_end = std::min(width, width - dx);
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const Scalar* row = src + y * width;
          Scalar* drow = plane + sy * width;
          for (Index x = x_begin; x < x_end; ++x) drow[x + dx] += row[x];
        }
      }
    }
  }
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap weight_matrix(const Tensor<Scalar>& w) {
  return typename Tensor<Scalar>::ConstMatrixMap(w.data(), w.shape()[0], w.shape()[1] * w.shape()[2] * w.shape()[3]);
}

template <typename Scalar>
Tensor<Scalar> conv_forward(LayerKind kind, const LayerParams<Scalar>& p, const Tensor<Scalar>& x,
                            std::string_view name) {
  const Index k = kind == LayerKind::conv3x3 ? 3 : 1;
  check_conv(kind, name, p, x, k);
  const Index out_channels = p.weight->shape()[0];
  Tensor<Scalar> y({x.batch(), out_channels, x.height(), x.width()});
  const auto w = weight_matrix(*p.weight);
  const auto b = p.bias->values();
  typename Tensor<Scalar>::RowMatrix col;
  for (Index n = 0; n < x.batch(); ++n) {
    auto out = y.sample(n);
    if (k == 3) {
      im2col3x3<Scalar>(x.data() + n * x.sample_size(), x.channels(), x.height(), x.width(), col);
      out.noalias() = w * col;
    } else {
      out.noalias() = w * x.sample(n);
    }
    out.colwise() += b;
  }
  return y;
}

template <typename Scalar>
LayerGradients<Scalar> conv_backward(LayerKind kind, const LayerParams<Scalar>& p, const Tensor<Scalar>& x,
                                     const Tensor<Scalar>& dy, std::string_view name) {
  const Index k = kind == LayerKind::conv3x3 ? 3 : 1;
  check_conv(kind, name, p, x, k);
  const Index out_channels = p.weight->shape()[0];
  if (dy.shape() != Shape{x.batch(), out_channels, x.height(), x.width()}) {
    shape_error(kind, name, "upstream " + to_string(dy.shape()) + " vs input " + to_string(x.shape()));
  }
  LayerGradients<Scalar> g;
  g.inputs.emplace_back(x.shape());
  g.weight = Tensor<Scalar>(p.weight->shape());
  g.bias = Tensor<Scalar>(p.bias->shape());

  const auto w = weight_matrix(*p.weight);
  typename Tensor<Scalar>::MatrixMap dw(g.weight.data(), w.rows(), w.cols());
  typename Tensor<Scalar>::RowMatrix col;
  typename Tensor<Scalar>::RowMatrix dcol;
  for (Index n = 0; n < x.batch(); ++n) {
    const auto dout = dy.sample(n);
    g.bias.values() += dout.rowwise().sum();
    if (k == 3) {
      im2col3x3<Scalar>(x.data() + n * x.sample_size(), x.channels(), x.height(), x.width(), col);
      dw.noalias() += dout * col.transpose();
      dcol.noalias() = w.transpose() * dout;
      col2im3x3_add<Scalar>(dcol, x.channels(), x.height(), x.width(), g.inputs[0].data() + n * x.sample_size());
    } else {
      dw.noalias() += dout * x.sample(n).transpose();
      g.inputs[0].sample(n).noalias() = w.transpose() * dout;
    }
  }
  return g;
}

template <typename Scalar>
void check_norm(std::string_view name, const LayerParams<Scalar>& p, const Tensor<Scalar>& x) {
  if (!p.weight || !p.bias) shape_error(LayerKind::norm, name, "missing scale or shift");
  if (p.weight->size() != x.channels() || p.bias->size() != x.channels()) {
    shape_error(LayerKind::norm, name, "input " + to_string(x.shape()) + " vs scale " + to_string(p.weight->shape()));
  }
}

// Per-channel mean and inverse standard deviation over (batch, y, x).
template <typename Scalar>
void channel_stats(const Tensor<Scalar>& x, Index c, Scalar& mean, Scalar& inv_std) {
  const Index m = x.batch() * x.height() * x.width();
  Scalar sum = 0;
  for (Index n = 0; n < x.batch(); ++n) sum += x.plane(n, c).sum();
  mean = sum / static_cast<Scalar>(m);
  Scalar sq = 0;
  for (Index n = 0; n < x.batch(); ++n) sq += (x.plane(n, c) - mean).square().sum();
  inv_std = Scalar(1) / std::sqrt(sq / static_cast<Scalar>(m) + static_cast<Scalar>(kNormEpsilon));
}

template <typename Scalar>
Tensor<Scalar> norm_forward(const LayerParams<Scalar>& p, const Tensor<Scalar>& x, std::string_view name) {
  check_norm(name, p, x);
  Tensor<Scalar> y(x.shape());
  for (Index c = 0; c < x.channels(); ++c) {
    Scalar mean;
    Scalar inv_std;
    channel_stats(x, c, mean, inv_std);
    const Scalar scale = p.weight->values()[c];
    const Scalar shift = p.bias->values()[c];
    for (Index n = 0; n < x.batch(); ++n) y.plane(n, c) = (x.plane(n, c) - mean) * (inv_std * scale) + shift;
  }
  return y;
}

template <typename Scalar>
LayerGradients<Scalar> norm_backward(const LayerParams<Scalar>& p, const Tensor<Scalar>& x, const Tensor<Scalar>& dy,
                                     std::string_view name) {
  check_norm(name, p, x);
  LayerGradients<Scalar> g;
  g.inputs.emplace_back(x.shape());
  g.weight = Tensor<Scalar>(p.weight->shape());
  g.bias = Tensor<Scalar>(p.bias->shape());
  const auto m = static_cast<Scalar>(x.batch() * x.height() * x.width());
  for (Index c = 0; c < x.channels(); ++c) {
    Scalar mean;
    Scalar inv_std;
    channel_stats(x, c, mean, inv_std);
    Scalar sum_dy = 0;
    Scalar sum_dy_xhat = 0;
    for (Index n = 0; n < x.batch(); ++n) {
      sum_dy += dy.plane(n, c).sum();
      sum_dy_xhat += (dy.plane(n, c) * (x.plane(n, c) - mean) * inv_std).sum();
    }
    g.weight.values()[c] = sum_dy_xhat;
    g.bias.values()[c] = sum_dy;
    const Scalar scale = p.weight->values()[c];
    for (Index n = 0; n < x.batch(); ++n) {
      const auto xhat = (x.plane(n, c) - mean) * inv_std;
      g.inputs[0].plane(n, c) = (scale * inv_std / m) * (m * dy.plane(n, c) - sum_dy - xhat * sum_dy_xhat);
    }
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> maxpool_forward(const Tensor<Scalar>& x, std::string_view name) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0) {
    shape_error(LayerKind::maxpool2, name, "odd spatial size " + to_string(x.shape()));
  }
  Tensor<Scalar> y({x.batch(), x.channels(), x.height() / 2, x.width() / 2});
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const auto in = x.plane(n, c);
      auto out = y.plane(n, c);
      for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) {
          out(i, j) = std::max(std::max(in(2 * i, 2 * j), in(2 * i, 2 * j + 1)),
                               std::max(in(2 * i + 1, 2 * j), in(2 * i + 1, 2 * j + 1)));
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(x.shape());
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const auto in = x.plane(n, c);
      const auto up = dy.plane(n, c);
      auto out = dx.plane(n, c);
      for (Index i = 0; i < up.rows(); ++i) {
        for (Index j = 0; j < up.cols(); ++j) {
          Index bi = 2 * i;
          Index bj = 2 * j;
          for (Index di = 0; di < 2; ++di) {
            for (Index dj = 0; dj < 2; ++dj) {
              if (in(2 * i + di, 2 * j + dj) > in(bi, bj)) {
                bi = 2 * i + di;
                bj = 2 * j + dj;
              }
            }
          }
          out(bi, bj) += up(i, j);
        }
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> upsample_forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> y({x.batch(), x.channels(), x.height() * 2, x.width() * 2});
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const auto in = x.plane(n, c);
      auto out = y.plane(n, c);
      for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) out(i, j) = in(i / 2, j / 2);
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(x.shape());
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const auto up = dy.plane(n, c);
      auto out = dx.plane(n, c);
      for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) {
          out(i, j) = up(2 * i, 2 * j) + up(2 * i, 2 * j + 1) + up(2 * i + 1, 2 * j) + up(2 * i + 1, 2 * j + 1);
        }
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> concat_forward(std::span<const Tensor<Scalar>* const> inputs, std::string_view name) {
  if (inputs.empty()) shape_error(LayerKind::concat, name, "no inputs");
  const Shape& first = inputs[0]->shape();
  Index channels = 0;
  for (const Tensor<Scalar>* t : inputs) {
    const Shape& s = t->shape();
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      shape_error(LayerKind::concat, name, to_string(first) + " vs " + to_string(s));
    }
    channels += s[1];
  }
  Tensor<Scalar> y({first[0], channels, first[2], first[3]});
  for (Index n = 0; n < first[0]; ++n) {
    Index offset = 0;
    for (const Tensor<Scalar>* t : inputs) {
      y.sample(n).middleRows(offset, t->channels()) = t->sample(n);
      offset += t->channels();
    }
  }
  return y;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> layer_apply(LayerKind kind, const LayerParams<Scalar>& params,
                           std::span<const Tensor<Scalar>* const> inputs, std::string_view name) {
  if (kind == LayerKind::concat) return concat_forward<Scalar>(inputs, name);
  if (kind == LayerKind::add) {
    expect_inputs<Scalar>(kind, name, inputs, 2);
    if (inputs[0]->shape() != inputs[1]->shape()) {
      shape_error(kind, name, to_string(inputs[0]->shape()) + " vs " + to_string(inputs[1]->shape()));
    }
    return Tensor<Scalar>(inputs[0]->shape(), inputs[0]->values() + inputs[1]->values());
  }
  expect_inputs<Scalar>(kind, name, inputs, 1);
  const Tensor<Scalar>& x = *inputs[0];
  switch (kind) {
    case LayerKind::conv3x3:
    case LayerKind::conv1x1:
      return conv_forward(kind, params, x, name);
    case LayerKind::relu:
      return Tensor<Scalar>(x.shape(), x.values().cwiseMax(Scalar(0)));
    case LayerKind::sigmoid:
      return Tensor<Scalar>(x.shape(), ((-x.values().array()).exp() + Scalar(1)).inverse().matrix());
    case LayerKind::maxpool2:
      return maxpool_forward(x, name);
    case LayerKind::upsample2:
      return upsample_forward(x);
    case LayerKind::norm:
      return norm_forward(params, x, name);
    default:
      break;
  }
  shape_error(kind, name, "unsupported layer");
}

template <typename Scalar>
LayerGradients<Scalar> layer_grad(LayerKind kind, const LayerParams<Scalar>& params,
                                  std::span<const Tensor<Scalar>* const> inputs, const Tensor<Scalar>& output,
                                  const Tensor<Scalar>& upstream, std::string_view name) {
  if (upstream.shape() != output.shape()) {
    shape_error(kind, name, "upstream " + to_string(upstream.shape()) + " vs output " + to_string(output.shape()));
  }
  LayerGradients<Scalar> g;
  if (kind == LayerKind::concat) {
    Index offset = 0;
    for (const Tensor<Scalar>* t : inputs) {
      Tensor<Scalar> part(t->shape());
      for (Index n = 0; n < t->batch(); ++n) part.sample(n) = upstream.sample(n).middleRows(offset, t->channels());
      offset += t->channels();
      g.inputs.push_back(std::move(part));
    }
    return g;
  }
  if (kind == LayerKind::add) {
    expect_inputs<Scalar>(kind, name, inputs, 2);
    g.inputs = {upstream, upstream};
    return g;
  }
  expect_inputs<Scalar>(kind, name, inputs, 1);
  const Tensor<Scalar>& x = *inputs[0];
  switch (kind) {
    case LayerKind::conv3x3:
    case LayerKind::conv1x1:
      return conv_backward(kind, params, x, upstream, name);
    case LayerKind::relu:
      g.inputs.emplace_back(x.shape(),
                            (x.values().array() > Scalar(0)).select(upstream.values().array(), Scalar(0)).matrix());
      return g;
    case LayerKind::sigmoid: {
      const auto s = output.values().array();
      g.inputs.emplace_back(x.shape(), (upstream.values().array() * s * (Scalar(1) - s)).matrix());
      return g;
    }
    case LayerKind::maxpool2:
      g.inputs.push_back(maxpool_backward(x, upstream));
      return g;
    case LayerKind::upsample2:
      g.inputs.push_back(upsample_backward(x, upstream));
      return g;
    case LayerKind::norm:
      return norm_backward(params, x, upstream, name);
    default:
      break;
  }
  shape_error(kind, name, "unsupported layer");
}

#define STONESEG_INSTANTIATE_LAYERS(Scalar)                                                                       \
  template Tensor<Scalar> layer_apply<Scalar>(LayerKind, const LayerParams<Scalar>&,                              \
                                              std::span<const Tensor<Scalar>* const>, std::string_view);          \
  template LayerGradients<Scalar> layer_grad<Scalar>(LayerKind, const LayerParams<Scalar>&,                       \
                                                     std::span<const Tensor<Scalar>* const>, const Tensor<Scalar>&, \
                                                     const Tensor<Scalar>&, std::string_view);

STONESEG_INSTANTIATE_LAYERS(float)
STONESEG_INSTANTIATE_LAYERS(double)

}  // namespace stoneseg::nn
