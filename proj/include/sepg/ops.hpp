#pragma once

#include <vector>

#include "sepg/autodiff.hpp"
#include "sepg/tensor.hpp"

namespace sepg {

// Convolution window geometry. Kernels may be rectangular internally; the
// square() factory covers the common case of odd square kernels.
struct ConvGeometry {
    int64_t kh = 3, kw = 3;
    int64_t stride_h = 1, stride_w = 1;
    int64_t pad_h = 0, pad_w = 0;
    int64_t groups = 1;

    static ConvGeometry square(int64_t k, int64_t stride = 1, int64_t pad = 0,
                               int64_t groups = 1) {
        return ConvGeometry{k, k, stride, stride, pad, pad, groups};
    }
    int64_t out_h(int64_t in_h) const { return (in_h + 2 * pad_h - kh) / stride_h + 1; }
    int64_t out_w(int64_t in_w) const { return (in_w + 2 * pad_w - kw) / stride_w + 1; }
};

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var abs_op(const Var& a);                 // sign(0) = 0 subgradient
Var maximum(const Var& a, const Var& b);  // ties route gradient to a
Var gelu(const Var& x);                   // tanh approximation, fixed
Var sigmoid(const Var& x);

// ---- reductions / broadcasts ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]
Var gap(const Var& x);       // [B,C,H,W] -> [B,C], mean over H*W
Var broadcast_spatial(const Var& v, int64_t h, int64_t w); // [B,C] -> [B,C,H,W]
Var broadcast_batch(const Var& t, int64_t b);              // [M,C] -> [B,M,C]
Var scale_by_scalar(const Var& x, const Var& s);           // s shape [1]
Var mul_bcast_channel(const Var& x, const Var& m);         // x [B,C,H,W], m [B,1,H,W]
Var add_rowvec(const Var& x, const Var& v);                // v [C] onto last axis

// ---- shape ----
Var reshape(const Var& x, std::vector<int64_t> shape);
Var permute(const Var& x, const std::vector<int>& axes);
Var transpose_last2(const Var& x);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, int64_t start, int64_t len);

// ---- linear algebra ----
// a [..., n, k] x b [..., k, m] with identical leading dims, or b rank-2
// shared across all leading dims of a.
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var& bias); // weight [Cout,Cin]

// ---- normalization / activation over last axis ----
Var softmax_last(const Var& x, double temperature);
Var layer_norm_last(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);
// Channel normalization of a feature map, applied per spatial location.
Var layer_norm_channels(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

// Sparse routing head: keeps the top K entries of each last-axis slice,
// renormalizes them with a softmax restricted to the kept set, zeroes the
// rest. Ties on the K-th entry resolve to the lower index. Gradients flow
// through kept entries only.
Var topk_renorm_last(const Var& x, int64_t k);

// ---- convolution & spatial ----
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geom);
Var replicate_pad(const Var& x, int64_t pad); // H,W edge replication
Var upsample_nearest2(const Var& x);

// Gradient magnitude |Gx| + |Gy| from 3x3 Sobel kernels over replicate
// padding, computed per channel. Requires H,W >= 3.
Var sobel_magnitude(const Var& x);

// Mean structural similarity over valid 11x11 Gaussian windows (sigma 1.5,
// stabilizers on unit dynamic range). Inputs share shape [B,C,H,W], H,W >= 11.
Var ssim_mean(const Var& a, const Var& b);

} // namespace sepg
