#include "mmr/layers.hpp"

#include <cmath>

#include "mmr/errors.hpp"

namespace mmr {

namespace {

int floor_div(int a, int b) {
  const int q = a / b, r = a % b;
  return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
}

}  // namespace

void Conv2d::init_he(Rng& rng) {
  const double stddev =
      std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
  for (double& x : w.v) x = rng.normal(0.0, stddev);
  std::fill(b.v.begin(), b.v.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_ch) throw DataError("conv: input channel mismatch");
  const int oh = out_dim(x.h), ow = out_dim(x.w);
  if (oh <= 0 || ow <= 0) throw DataError("conv: input too small");
  Tensor y(out_ch, oh, ow);
  for (int co = 0; co < out_ch; ++co) {
    double* yp = y.plane(co);
    const double bias = b.v[co];
    for (int i = 0; i < oh * ow; ++i) yp[i] = bias;
    for (int ci = 0; ci < in_ch; ++ci) {
      const double* xp = x.plane(ci);
      const double* wp =
          &w.v[(static_cast<size_t>(co) * in_ch + ci) * ksize * ksize];
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const double wv = wp[ky * ksize + kx];
          const int ox_lo = std::max(0, -floor_div(kx - pad, stride));
          const int ox_hi = std::min(ow - 1, floor_div(x.w - 1 + pad - kx, stride));
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            const double* xrow = xp + static_cast<size_t>(iy) * x.w - pad + kx;
            double* yrow = yp + static_cast<size_t>(oy) * ow;
            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
              yrow[ox] += wv * xrow[ox * stride];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& gy) {
  if (x.c != in_ch) throw DataError("conv backward: input channel mismatch");
  const int oh = out_dim(x.h), ow = out_dim(x.w);
  if (gy.c != out_ch || gy.h != oh || gy.w != ow) {
    throw DataError("conv backward: output gradient shape mismatch");
  }
  Tensor gx(x.c, x.h, x.w);
  for (int co = 0; co < out_ch; ++co) {
    const double* gyp = gy.plane(co);
    double bacc = 0.0;
    for (int i = 0; i < oh * ow; ++i) bacc += gyp[i];
    b.g[co] += bacc;
    for (int ci = 0; ci < in_ch; ++ci) {
      const double* xp = x.plane(ci);
      double* gxp = gx.plane(ci);
      double* gwp =
          &w.g[(static_cast<size_t>(co) * in_ch + ci) * ksize * ksize];
      const double* wp =
          &w.v[(static_cast<size_t>(co) * in_ch + ci) * ksize * ksize];
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const double wv = wp[ky * ksize + kx];
          double wacc = 0.0;
          const int ox_lo = std::max(0, -floor_div(kx - pad, stride));
          const int ox_hi = std::min(ow - 1, floor_div(x.w - 1 + pad - kx, stride));
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            const double* xrow = xp + static_cast<size_t>(iy) * x.w - pad + kx;
            double* gxrow = gxp + static_cast<size_t>(iy) * x.w - pad + kx;
            const double* gyrow = gyp + static_cast<size_t>(oy) * ow;
            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
              const double g = gyrow[ox];
              wacc += g * xrow[ox * stride];
              gxrow[ox * stride] += wv * g;
            }
          }
          gwp[ky * ksize + kx] += wacc;
        }
      }
    }
  }
  return gx;
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = v / (1.0 + std::exp(-v));
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& gy) {
  require_same_shape(x, gy, "silu_backward");
  Tensor gx = x;
  for (size_t i = 0; i < x.v.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
    gx.v[i] = gy.v[i] * s * (1.0 + x.v[i] * (1.0 - s));
  }
  return gx;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor sigmoid_map(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = sigmoid(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& s, const Tensor& gy) {
  require_same_shape(s, gy, "sigmoid_backward");
  Tensor gx = s;
  for (size_t i = 0; i < s.v.size(); ++i) {
    gx.v[i] = gy.v[i] * s.v[i] * (1.0 - s.v[i]);
  }
  return gx;
}

Tensor upsample2(const Tensor& x) {
  Tensor y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    const double* xp = x.plane(c);
    double* yp = y.plane(c);
    for (int iy = 0; iy < x.h; ++iy) {
      for (int ix = 0; ix < x.w; ++ix) {
        const double v = xp[static_cast<size_t>(iy) * x.w + ix];
        const size_t base = (static_cast<size_t>(iy) * 2) * y.w + ix * 2;
        yp[base] = v;
        yp[base + 1] = v;
        yp[base + y.w] = v;
        yp[base + y.w + 1] = v;
      }
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& gy) {
  if (gy.h % 2 != 0 || gy.w % 2 != 0) {
    throw DataError("upsample2_backward: odd spatial size");
  }
  Tensor gx(gy.c, gy.h / 2, gy.w / 2);
  for (int c = 0; c < gy.c; ++c) {
    const double* gp = gy.plane(c);
    double* op = gx.plane(c);
    for (int iy = 0; iy < gx.h; ++iy) {
      for (int ix = 0; ix < gx.w; ++ix) {
        const size_t base = (static_cast<size_t>(iy) * 2) * gy.w + ix * 2;
        op[static_cast<size_t>(iy) * gx.w + ix] =
            gp[base] + gp[base + 1] + gp[base + gy.w] + gp[base + gy.w + 1];
      }
    }
  }
  return gx;
}

Tensor concat_channels(const std::vector<const Tensor*>& xs) {
  if (xs.empty()) throw DataError("concat_channels: empty input");
  int c = 0;
  for (const Tensor* t : xs) {
    if (t->h != xs[0]->h || t->w != xs[0]->w) {
      throw DataError("concat_channels: spatial shape mismatch");
    }
    c += t->c;
  }
  Tensor y(c, xs[0]->h, xs[0]->w);
  size_t off = 0;
  for (const Tensor* t : xs) {
    std::copy(t->v.begin(), t->v.end(), y.v.begin() + off);
    off += t->v.size();
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& x,
                                   const std::vector<int>& sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.c) throw DataError("split_channels: channel count mismatch");
  std::vector<Tensor> out;
  size_t off = 0;
  for (int s : sizes) {
    Tensor t(s, x.h, x.w);
    std::copy(x.v.begin() + off, x.v.begin() + off + t.v.size(), t.v.begin());
    off += t.v.size();
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tensor> softmax_modality(const std::vector<Tensor>& logits) {
  const size_t n = logits.size();
  if (n == 0) throw DataError("softmax_modality: no modalities");
  for (const Tensor& t : logits) {
    require_same_shape(t, logits[0], "softmax_modality");
  }
  std::vector<Tensor> w(n, Tensor::zeros_like(logits[0]));
  const size_t count = logits[0].v.size();
  for (size_t i = 0; i < count; ++i) {
    double mx = logits[0].v[i];
    for (size_t m = 1; m < n; ++m) mx = std::max(mx, logits[m].v[i]);
    double denom = 0.0;
    for (size_t m = 0; m < n; ++m) {
      const double e = std::exp(logits[m].v[i] - mx);
      w[m].v[i] = e;
      denom += e;
    }
    for (size_t m = 0; m < n; ++m) w[m].v[i] /= denom;
  }
  return w;
}

std::vector<Tensor> softmax_modality_backward(
    const std::vector<Tensor>& weights, const std::vector<Tensor>& gw) {
  const size_t n = weights.size();
  if (gw.size() != n) throw DataError("softmax backward: arity mismatch");
  std::vector<Tensor> gl(n, Tensor::zeros_like(weights[0]));
  const size_t count = weights[0].v.size();
  for (size_t i = 0; i < count; ++i) {
    double dot = 0.0;
    for (size_t m = 0; m < n; ++m) dot += weights[m].v[i] * gw[m].v[i];
    for (size_t m = 0; m < n; ++m) {
      gl[m].v[i] = weights[m].v[i] * (gw[m].v[i] - dot);
    }
  }
  return gl;
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor p = logits;
  const size_t plane = static_cast<size_t>(logits.h) * logits.w;
  for (size_t i = 0; i < plane; ++i) {
    double mx = logits.v[i];
    for (int c = 1; c < logits.c; ++c) {
      mx = std::max(mx, logits.v[c * plane + i]);
    }
    double denom = 0.0;
    for (int c = 0; c < logits.c; ++c) {
      const double e = std::exp(logits.v[c * plane + i] - mx);
      p.v[c * plane + i] = e;
      denom += e;
    }
    for (int c = 0; c < logits.c; ++c) p.v[c * plane + i] /= denom;
  }
  return p;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& gp) {
  require_same_shape(probs, gp, "softmax_channels_backward");
  Tensor gl = Tensor::zeros_like(probs);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  for (size_t i = 0; i < plane; ++i) {
    double dot = 0.0;
    for (int c = 0; c < probs.c; ++c) {
      dot += probs.v[c * plane + i] * gp.v[c * plane + i];
    }
    for (int c = 0; c < probs.c; ++c) {
      gl.v[c * plane + i] =
          probs.v[c * plane + i] * (gp.v[c * plane + i] - dot);
    }
  }
  return gl;
}

}  // namespace mmr
