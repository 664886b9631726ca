#pragma once

#include <cstdint>
#include <vector>

#include "mmr/rng.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

// One learnable tensor: values, gradient accumulator, momentum buffer.
struct ParamTensor {
  std::vector<double> v;
  std::vector<double> g;
  std::vector<double> m;

  void resize(size_t n) {
    v.assign(n, 0.0);
    g.assign(n, 0.0);
    m.assign(n, 0.0);
  }
  void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
  size_t size() const { return v.size(); }
};

// 2-D convolution with square kernel, zero padding. Weights are laid out
// [out][in][ky][kx]. forward() is const; backward() accumulates into w.g
// and b.g and returns the input gradient.
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
  ParamTensor w;
  ParamTensor b;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride_, int pad_)
      : in_ch(in), out_ch(out), ksize(k), stride(stride_), pad(pad_) {
    w.resize(static_cast<size_t>(out) * in * k * k);
    b.resize(static_cast<size_t>(out));
  }

  // He-normal weights, zero bias. Leaving init out keeps everything zero.
  void init_he(Rng& rng);

  int out_dim(int n) const { return (n + 2 * pad - ksize) / stride + 1; }

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& gy);
};

// SiLU activation x * sigmoid(x): smooth, with f(0) = 0, so zero inputs
// propagate as zeros and finite-difference gradient checks are clean.
Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& gy);

double sigmoid(double x);
Tensor sigmoid_map(const Tensor& x);
// gy is the gradient w.r.t. the sigmoid output s.
Tensor sigmoid_backward(const Tensor& s, const Tensor& gy);

// Nearest-neighbor 2x upsampling and its adjoint.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& gy);

Tensor concat_channels(const std::vector<const Tensor*>& xs);
std::vector<Tensor> split_channels(const Tensor& x,
                                   const std::vector<int>& sizes);

// Softmax across a list of same-shape tensors (the modality axis),
// independently at every (channel, y, x) position.
std::vector<Tensor> softmax_modality(const std::vector<Tensor>& logits);
// weights = softmax_modality output; gw = gradient w.r.t. the weights.
std::vector<Tensor> softmax_modality_backward(
    const std::vector<Tensor>& weights, const std::vector<Tensor>& gw);

// Channel-axis softmax within one tensor, independently per pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& gp);

}  // namespace mmr
