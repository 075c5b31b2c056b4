#include "prismer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "prismer/error.hpp"

namespace prismer::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

detail::Node& parent(detail::Node& out, std::size_t i) { return *out.parents[i]; }

template <typename F>
Tensor unary_elementwise(const Tensor& x, F&& fn) {
  // fn(v) -> {value, derivative}
  const auto in = x.data();
  std::vector<double> values(in.size());
  auto derivs = std::make_shared<std::vector<double>>(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto [v, d] = fn(in[i]);
    values[i] = v;
    (*derivs)[i] = d;
  }
  return Tensor::make_result(x.shape(), std::move(values), {x}, [derivs](detail::Node& out) {
    auto& px = parent(out, 0);
    if (!px.requires_grad) return;
    std::vector<double> delta(out.grad.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = out.grad[i] * (*derivs)[i];
    px.accumulate(delta);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> values(m * n);
  MutMap(values.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(values), {a, b}, [m, k, n](detail::Node& out) {
    auto& pa = parent(out, 0);
    auto& pb = parent(out, 1);
    ConstMap grad(out.grad.data(), m, n);
    if (pa.requires_grad) {
      std::vector<double> delta(m * k);
      MutMap(delta.data(), m, k).noalias() = grad * ConstMap(pb.value.data(), k, n).transpose();
      pa.accumulate(delta);
    }
    if (pb.requires_grad) {
      std::vector<double> delta(k * n);
      MutMap(delta.data(), k, n).noalias() = ConstMap(pa.value.data(), m, k).transpose() * grad;
      pb.accumulate(delta);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> values(m * n);
  const auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) values[j * m + i] = in[i * n + j];
  return Tensor::make_result({n, m}, std::move(values), {a}, [m, n](detail::Node& out) {
    auto& pa = parent(out, 0);
    if (!pa.requires_grad) return;
    std::vector<double> delta(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) delta[i * n + j] = out.grad[j * m + i];
    pa.accumulate(delta);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(values), {a, b}, [](detail::Node& out) {
    parent(out, 0).accumulate(out.grad);
    parent(out, 1).accumulate(out.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(values), {a, b}, [](detail::Node& out) {
    parent(out, 0).accumulate(out.grad);
    auto& pb = parent(out, 1);
    if (!pb.requires_grad) return;
    std::vector<double> delta(out.grad.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = -out.grad[i];
    pb.accumulate(delta);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(values), {a, b}, [](detail::Node& out) {
    auto& pa = parent(out, 0);
    auto& pb = parent(out, 1);
    std::vector<double> delta(out.grad.size());
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = out.grad[i] * pb.value[i];
      pa.accumulate(delta);
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = out.grad[i] * pa.value[i];
      pb.accumulate(delta);
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  const auto x = a.data();
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = x[i] * factor;
  return Tensor::make_result(a.shape(), std::move(values), {a}, [factor](detail::Node& out) {
    auto& pa = parent(out, 0);
    if (!pa.requires_grad) return;
    std::vector<double> delta(out.grad.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = out.grad[i] * factor;
    pa.accumulate(delta);
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const auto m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_bias: " + shape_to_string(a.shape()) + " with bias " +
                         shape_to_string(bias.shape()));
  }
  const auto x = a.data(), b = bias.data();
  std::vector<double> values(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) values[i * n + j] = x[i * n + j] + b[j];
  return Tensor::make_result({m, n}, std::move(values), {a, bias}, [m, n](detail::Node& out) {
    parent(out, 0).accumulate(out.grad);
    auto& pb = parent(out, 1);
    if (!pb.requires_grad) return;
    std::vector<double> delta(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) delta[j] += out.grad[i * n + j];
    pb.accumulate(delta);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) throw DimensionError("softmax: axis out of range for " + shape_to_string(shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto n = shape[axis];
  const auto in = x.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> values(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const auto idx = [&](std::size_t i) { return (o * n + i) * inner + j; };
      double peak = in[idx(0)];
      for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, in[idx(i)]);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        values[idx(i)] = std::exp(in[idx(i)] - peak);
        total += values[idx(i)];
      }
      for (std::size_t i = 0; i < n; ++i) values[idx(i)] /= total;
    }
  }
  return Tensor::make_result(shape, std::move(values), {x}, [outer, inner, n](detail::Node& out) {
    auto& px = parent(out, 0);
    if (!px.requires_grad) return;
    std::vector<double> delta(out.grad.size());
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const auto idx = [&](std::size_t i) { return (o * n + i) * inner + j; };
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += out.value[idx(i)] * out.grad[idx(i)];
        for (std::size_t i = 0; i < n; ++i) delta[idx(i)] = out.value[idx(i)] * (out.grad[idx(i)] - dot);
      }
    }
    px.accumulate(delta);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw RangeError("layer_norm: eps must be positive");
  const auto& shape = x.shape();
  const auto d = shape.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_to_string(gain.shape()) + " and " + shape_to_string(bias.shape()));
  }
  const auto rows = x.numel() / d;
  const auto in = x.data(), g = gain.data(), b = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> values(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (row[i] - mu) * inv;
      (*xhat)[r * d + i] = h;
      values[r * d + i] = h * g[i] + b[i];
    }
  }
  return Tensor::make_result(shape, std::move(values), {x, gain, bias},
                             [rows, d, xhat, inv_std](detail::Node& out) {
    auto& px = parent(out, 0);
    auto& pg = parent(out, 1);
    auto& pb = parent(out, 2);
    if (px.requires_grad) {
      std::vector<double> delta(out.grad.size());
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double dh = out.grad[r * d + i] * pg.value[i];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[r * d + i];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double dh = out.grad[r * d + i] * pg.value[i];
          delta[r * d + i] = (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + i] * mean_dh_h);
        }
      }
      px.accumulate(delta);
    }
    if (pg.requires_grad || pb.requires_grad) {
      std::vector<double> dg(d, 0.0), db(d, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
          dg[i] += out.grad[r * d + i] * (*xhat)[r * d + i];
          db[i] += out.grad[r * d + i];
        }
      }
      pg.accumulate(dg);
      pb.accumulate(db);
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(x, [](double v) -> std::pair<double, double> {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0};
  });
}

Tensor squared_relu(const Tensor& x) {
  return unary_elementwise(x, [](double v) -> std::pair<double, double> {
    return v > 0.0 ? std::pair{v * v, 2.0 * v} : std::pair{0.0, 0.0};
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.044715;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return unary_elementwise(x, [c](double v) -> std::pair<double, double> {
    const double u = c * (v + kAlpha * v * v * v);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * kAlpha * v * v);
    return {0.5 * v * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const auto h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const auto kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kh != 3 || kw != 3) throw DimensionError("conv2d: kernel must be 3x3, got " + shape_to_string(kernel.shape()));
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: input " + shape_to_string(x.shape()) + " does not match kernel " +
                         shape_to_string(kernel.shape()));
  }
  if (stride < 1 || stride > 2) throw ContractError("conv2d: stride must be 1 or 2");
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: input " + shape_to_string(x.shape()) + " smaller than kernel after padding");
  }
  const auto ho = (h + 2 * padding - kh) / stride + 1;
  const auto wo = (w + 2 * padding - kw) / stride + 1;
  const auto patch = kh * kw * cin;

  // im2col: one row per output site, columns ordered (ky, kx, c) to match the kernel layout.
  auto cols = std::make_shared<std::vector<double>>(ho * wo * patch, 0.0);
  const auto in = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* row = cols->data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          std::copy_n(in.data() + (iy * w + ix) * cin, cin, row + (ky * kw + kx) * cin);
        }
      }
    }
  }
  std::vector<double> values(ho * wo * cout);
  MutMap(values.data(), ho * wo, cout).noalias() =
      ConstMap(cols->data(), ho * wo, patch) * ConstMap(kernel.data().data(), patch, cout);

  return Tensor::make_result(
      {ho, wo, cout}, std::move(values), {x, kernel},
      [=](detail::Node& out) {
        auto& px = parent(out, 0);
        auto& pk = parent(out, 1);
        ConstMap grad(out.grad.data(), ho * wo, cout);
        if (pk.requires_grad) {
          std::vector<double> delta(patch * cout);
          MutMap(delta.data(), patch, cout).noalias() = ConstMap(cols->data(), ho * wo, patch).transpose() * grad;
          pk.accumulate(delta);
        }
        if (px.requires_grad) {
          RowMat dcols = grad * ConstMap(pk.value.data(), patch, cout).transpose();
          std::vector<double> delta(h * w * cin, 0.0);
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double* row = dcols.data() + (oy * wo + ox) * patch;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  double* dst = delta.data() + (iy * w + ix) * cin;
                  const double* src = row + (ky * kw + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
              }
            }
          }
          px.accumulate(delta);
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  require_rank(logits, 2, "cross_entropy");
  const auto t_len = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != t_len) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_to_string(logits.shape()));
  }
  if (!mask.empty() && mask.size() != t_len) {
    throw DimensionError("cross_entropy: mask length " + std::to_string(mask.size()) + " for " +
                         std::to_string(t_len) + " positions");
  }
  const auto active = [&](std::size_t t) { return mask.empty() || mask[t]; };
  std::size_t count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!active(t)) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw RangeError("cross_entropy: target " + std::to_string(targets[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw EmptyLossError("cross_entropy: every position is masked");

  const auto in = logits.data();
  auto probs = std::make_shared<std::vector<double>>(in.size(), 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!active(t)) continue;
    const double* row = in.data() + t * vocab;
    double peak = row[0];
    for (std::size_t v = 1; v < vocab; ++v) peak = std::max(peak, row[v]);
    if (!std::isfinite(peak)) throw NumericError("cross_entropy: non-finite logits at position " + std::to_string(t));
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - peak);
    const double log_z = std::log(z) + peak;
    total += log_z - row[targets[t]];
    for (std::size_t v = 0; v < vocab; ++v) (*probs)[t * vocab + v] = std::exp(row[v] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<int> kept(targets.begin(), targets.end());
  std::vector<bool> kept_mask = mask;
  return Tensor::make_result(
      {1}, {total * inv_count}, {logits},
      [probs, kept = std::move(kept), kept_mask = std::move(kept_mask), t_len, vocab, inv_count](detail::Node& out) {
        auto& pl = parent(out, 0);
        if (!pl.requires_grad) return;
        const double g = out.grad[0] * inv_count;
        std::vector<double> delta(t_len * vocab, 0.0);
        for (std::size_t t = 0; t < t_len; ++t) {
          if (!kept_mask.empty() && !kept_mask[t]) continue;
          for (std::size_t v = 0; v < vocab; ++v) delta[t * vocab + v] = g * (*probs)[t * vocab + v];
          delta[t * vocab + static_cast<std::size_t>(kept[t])] -= g;
        }
        pl.accumulate(delta);
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  }
  std::vector<double> values(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(values), {x},
                             [](detail::Node& out) { parent(out, 0).accumulate(out.grad); });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  const auto cols = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<double> values;
  values.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(values.size());
    values.insert(values.end(), p.data().begin(), p.data().end());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make_result({rows, cols}, std::move(values), std::move(parents),
                             [offsets](detail::Node& out) {
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      auto& p = parent(out, i);
      if (!p.requires_grad) continue;
      p.accumulate(std::span<const double>(out.grad).subspan(offsets[i], p.value.size()));
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const auto rows = parts.front().dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<double> values(rows * cols);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto src = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[i], widths[i], values.data() + r * cols + offset);
    offset += widths[i];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make_result({rows, cols}, std::move(values), std::move(parents),
                             [rows, cols, widths](detail::Node& out) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& p = parent(out, i);
      if (p.requires_grad) {
        std::vector<double> delta(rows * widths[i]);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(out.grad.data() + r * cols + offset, widths[i], delta.data() + r * widths[i]);
        p.accumulate(delta);
      }
      offset += widths[i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > rows) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> values(x.data().begin() + begin * cols, x.data().begin() + (begin + count) * cols);
  return Tensor::make_result({count, cols}, std::move(values), {x}, [begin, cols](detail::Node& out) {
    auto& px = parent(out, 0);
    if (!px.requires_grad) return;
    if (px.grad.empty()) px.grad.assign(px.value.size(), 0.0);
    for (std::size_t i = 0; i < out.grad.size(); ++i) px.grad[begin * cols + i] += out.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> values(rows * count);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(in.data() + r * cols + begin, count, values.data() + r * count);
  return Tensor::make_result({rows, count}, std::move(values), {x}, [rows, cols, begin, count](detail::Node& out) {
    auto& px = parent(out, 0);
    if (!px.requires_grad) return;
    if (px.grad.empty()) px.grad.assign(px.value.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) px.grad[r * cols + begin + c] += out.grad[r * count + c];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "gather_rows");
  const auto n = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  std::vector<double> values(indices.size() * d);
  const auto in = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " outside " +
                           shape_to_string(table.shape()));
    }
    std::copy_n(in.data() + indices[i] * d, d, values.data() + i * d);
  }
  std::vector<std::size_t> kept(indices.begin(), indices.end());
  return Tensor::make_result({indices.size(), d}, std::move(values), {table},
                             [kept = std::move(kept), d](detail::Node& out) {
    auto& pt = parent(out, 0);
    if (!pt.requires_grad) return;
    if (pt.grad.empty()) pt.grad.assign(pt.value.size(), 0.0);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) pt.grad[kept[i] * d + j] += out.grad[i * d + j];
  });
}

Tensor add_indexed_rows(const Tensor& base, const Tensor& table, std::span<const int> ids) {
  require_rank(base, 2, "add_indexed_rows");
  require_rank(table, 2, "add_indexed_rows");
  const auto rows = base.dim(0), d = base.dim(1);
  if (table.dim(1) != d || ids.size() != rows) {
    throw DimensionError("add_indexed_rows: base " + shape_to_string(base.shape()) + ", table " +
                         shape_to_string(table.shape()) + ", " + std::to_string(ids.size()) + " ids");
  }
  const auto slots = table.dim(0);
  std::vector<double> values(base.data().begin(), base.data().end());
  const auto tab = table.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (ids[r] < 0) continue;
    if (static_cast<std::size_t>(ids[r]) >= slots) throw DimensionError("add_indexed_rows: id out of range");
    for (std::size_t j = 0; j < d; ++j) values[r * d + j] += tab[static_cast<std::size_t>(ids[r]) * d + j];
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return Tensor::make_result({rows, d}, std::move(values), {base, table},
                             [kept = std::move(kept), d](detail::Node& out) {
    parent(out, 0).accumulate(out.grad);
    auto& pt = parent(out, 1);
    if (!pt.requires_grad) return;
    if (pt.grad.empty()) pt.grad.assign(pt.value.size(), 0.0);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (kept[r] < 0) continue;
      for (std::size_t j = 0; j < d; ++j) pt.grad[static_cast<std::size_t>(kept[r]) * d + j] += out.grad[r * d + j];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({1}, {total}, {x}, [](detail::Node& out) {
    auto& px = parent(out, 0);
    if (!px.requires_grad) return;
    px.accumulate(std::vector<double>(px.value.size(), out.grad[0]));
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace prismer::ops
