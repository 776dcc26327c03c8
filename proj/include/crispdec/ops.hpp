#pragma once

#include <vector>

#include "crispdec/tensor.hpp"

namespace crispdec {

// Elementwise. Binary ops require identical shapes; the only broadcast
// supported is tensor-scalar (the *_scalar helpers) and scale_by_map below.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws DomainError if any input is <= 0.
Tensor log(const Tensor& a);
/// ln(1 + e^x), evaluated as max(x,0) + log1p(e^-|x|) so large x cannot overflow.
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

/// Bilinear resize of an N x C x h x w map up to target size, half-pixel
/// centres (align_corners = false). Target must not be smaller than input.
Tensor bilinear_upsample(const Tensor& t, int64_t target_h, int64_t target_w);

struct Conv2dOptions {
  int stride = 1;
  int padding = -1;  // -1: "same" padding for stride 1, i.e. k / 2
};

/// Cross-correlation of x [N,Cin,H,W] with kernel [Cout,Cin,k,k] plus bias
/// [Cout] (bias may be undefined). k must be 1 or 3.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              Conv2dOptions options = {});

/// Concatenates N x Ci x H x W maps along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& t, int64_t begin, int64_t count);

/// x [N,C,H,W] times m [N,1,H,W], m broadcast over channels.
Tensor scale_by_map(const Tensor& x, const Tensor& m);
/// Mean over the channel axis: [N,C,H,W] -> [N,1,H,W].
Tensor channel_mean(const Tensor& x);

/// Normalises each pixel's channel vector to zero mean / unit variance, then
/// applies a per-channel affine transform (gamma, beta of shape [C]).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-5);

}  // namespace crispdec
