#include <cmath>

#include "sepg/error.hpp"
#include "sepg/ops.hpp"

namespace sepg {

namespace {

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
    if (x.rank() != 4) {
        throw DimensionError("conv2d input must be rank 4, got shape " + shape_str(x.shape()));
    }
    if (w.rank() != 4) {
        throw DimensionError("conv2d weight must be rank 4, got shape " + shape_str(w.shape()));
    }
    if (g.groups < 1 || g.stride_h < 1 || g.stride_w < 1 || g.pad_h < 0 || g.pad_w < 0) {
        throw ParameterError("conv2d geometry has non-positive stride/groups or negative padding");
    }
    int64_t cin = x.dim(1), cout = w.dim(0);
    if (cin % g.groups != 0) {
        throw DimensionError("conv2d input channels " + std::to_string(cin) +
                             " (axis 1) not divisible by groups " + std::to_string(g.groups));
    }
    if (cout % g.groups != 0) {
        throw DimensionError("conv2d output channels " + std::to_string(cout) +
                             " (weight axis 0) not divisible by groups " + std::to_string(g.groups));
    }
    if (w.dim(1) != cin / g.groups) {
        throw DimensionError("conv2d weight axis 1 (" + std::to_string(w.dim(1)) +
                             ") must equal input channels / groups (" +
                             std::to_string(cin / g.groups) + ")");
    }
    if (w.dim(2) != g.kh || w.dim(3) != g.kw) {
        throw DimensionError("conv2d weight spatial axes " + std::to_string(w.dim(2)) + "x" +
                             std::to_string(w.dim(3)) + " do not match kernel geometry " +
                             std::to_string(g.kh) + "x" + std::to_string(g.kw));
    }
    if (g.out_h(x.dim(2)) < 1 || g.out_w(x.dim(3)) < 1) {
        throw DimensionError("conv2d output would be empty for input " + shape_str(x.shape()));
    }
    if (!b.empty() && (b.rank() != 1 || b.dim(0) != cout)) {
        throw DimensionError("conv2d bias must have length " + std::to_string(cout) +
                             ", got shape " + shape_str(b.shape()));
    }
}

} // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geom) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor bias_v = bias.defined() ? bias.value() : Tensor();
    check_conv_args(xv, wv, bias_v, geom);

    const int64_t B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t Cout = wv.dim(0), Cg = wv.dim(1);
    const int64_t OH = geom.out_h(H), OW = geom.out_w(W);
    const int64_t cout_g = Cout / geom.groups;

    Tensor out({B, Cout, OH, OW});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < geom.groups; ++g) {
            for (int64_t col = 0; col < cout_g; ++col) {
                int64_t co = g * cout_g + col;
                double bias_co = bias_v.empty() ? 0.0 : bias_v[co];
                for (int64_t oy = 0; oy < OH; ++oy) {
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        double acc = bias_co;
                        for (int64_t cl = 0; cl < Cg; ++cl) {
                            int64_t ci = g * Cg + cl;
                            for (int64_t ky = 0; ky < geom.kh; ++ky) {
                                int64_t iy = oy * geom.stride_h - geom.pad_h + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int64_t kx = 0; kx < geom.kw; ++kx) {
                                    int64_t ix = ox * geom.stride_w - geom.pad_w + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += wv.at4(co, cl, ky, kx) * xv.at4(b, ci, iy, ix);
                                }
                            }
                        }
                        out.at4(b, co, oy, ox) = acc;
                    }
                }
            }
        }
    }

    std::vector<Var> parents = {x, weight};
    bool has_bias = bias.defined();
    if (has_bias) parents.push_back(bias);
    ConvGeometry gm = geom;
    return make_op("conv2d", std::move(out), std::move(parents), [gm, has_bias](Var::Node& self) {
        const Tensor& xv2 = self.parents[0].value();
        const Tensor& wv2 = self.parents[1].value();
        const Tensor& gy = self.grad;
        const int64_t B = xv2.dim(0), Cin = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
        const int64_t Cout = wv2.dim(0), Cg = wv2.dim(1);
        const int64_t OH = gy.dim(2), OW = gy.dim(3);
        const int64_t cout_g = Cout / gm.groups;
        (void)Cin;

        bool need_x = self.parents[0].requires_grad();
        bool need_w = self.parents[1].requires_grad();
        Tensor gx = need_x ? Tensor::zeros(xv2.shape()) : Tensor();
        Tensor gw = need_w ? Tensor::zeros(wv2.shape()) : Tensor();
        if (need_x || need_w) {
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t g = 0; g < gm.groups; ++g) {
                    for (int64_t col = 0; col < cout_g; ++col) {
                        int64_t co = g * cout_g + col;
                        for (int64_t oy = 0; oy < OH; ++oy) {
                            for (int64_t ox = 0; ox < OW; ++ox) {
                                double go = gy.at4(b, co, oy, ox);
                                if (go == 0.0) continue;
                                for (int64_t cl = 0; cl < Cg; ++cl) {
                                    int64_t ci = g * Cg + cl;
                                    for (int64_t ky = 0; ky < gm.kh; ++ky) {
                                        int64_t iy = oy * gm.stride_h - gm.pad_h + ky;
                                        if (iy < 0 || iy >= H) continue;
                                        for (int64_t kx = 0; kx < gm.kw; ++kx) {
                                            int64_t ix = ox * gm.stride_w - gm.pad_w + kx;
                                            if (ix < 0 || ix >= W) continue;
                                            if (need_x)
                                                gx.at4(b, ci, iy, ix) += wv2.at4(co, cl, ky, kx) * go;
                                            if (need_w)
                                                gw.at4(co, cl, ky, kx) += xv2.at4(b, ci, iy, ix) * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if (need_x) self.parents[0].node()->accumulate(gx);
        if (need_w) self.parents[1].node()->accumulate(gw);
        if (has_bias && self.parents[2].requires_grad()) {
            Tensor gb({Cout});
            for (int64_t b = 0; b < B; ++b)
                for (int64_t co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    const double* p = gy.data() + gy.index4(b, co, 0, 0);
                    for (int64_t i = 0; i < OH * OW; ++i) acc += p[i];
                    gb[co] += acc;
                }
            self.parents[2].node()->accumulate(gb);
        }
    });
}

Var replicate_pad(const Var& x, int64_t pad) {
    const Tensor& v = x.value();
    if (v.rank() != 4) {
        throw DimensionError("replicate_pad expects rank-4 input, got shape " +
                             shape_str(v.shape()));
    }
    if (pad < 0) throw ParameterError("replicate_pad amount must be non-negative");
    const int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    Tensor out({B, C, H + 2 * pad, W + 2 * pad});
    auto clampi = [](int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H + 2 * pad; ++y)
                for (int64_t xc = 0; xc < W + 2 * pad; ++xc)
                    out.at4(b, c, y, xc) = v.at4(b, c, clampi(y - pad, H), clampi(xc - pad, W));
    return make_op("replicate_pad", std::move(out), {x}, [pad](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        Tensor gx(xv.shape());
        auto clampi = [](int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < H + 2 * pad; ++y)
                    for (int64_t xc = 0; xc < W + 2 * pad; ++xc)
                        gx.at4(b, c, clampi(y - pad, H), clampi(xc - pad, W)) +=
                            self.grad.at4(b, c, y, xc);
        self.parents[0].node()->accumulate(gx);
    });
}

Var upsample_nearest2(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) {
        throw DimensionError("upsample_nearest2 expects rank-4 input, got shape " +
                             shape_str(v.shape()));
    }
    const int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    Tensor out({B, C, 2 * H, 2 * W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < 2 * H; ++y)
                for (int64_t xc = 0; xc < 2 * W; ++xc)
                    out.at4(b, c, y, xc) = v.at4(b, c, y / 2, xc / 2);
    return make_op("upsample_nearest2", std::move(out), {x}, [](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        Tensor gx(xv.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < 2 * H; ++y)
                    for (int64_t xc = 0; xc < 2 * W; ++xc)
                        gx.at4(b, c, y / 2, xc / 2) += self.grad.at4(b, c, y, xc);
        self.parents[0].node()->accumulate(gx);
    });
}

namespace {

// Depthwise constant kernel replicated across channels.
Var depthwise_const_kernel(int64_t channels, const double (&k)[3][3]) {
    Tensor w({channels, 1, 3, 3});
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 3; ++j) w.at4(c, 0, i, j) = k[i][j];
    return Var::constant(std::move(w));
}

} // namespace

Var sobel_magnitude(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) {
        throw DimensionError("sobel_magnitude expects rank-4 input, got shape " +
                             shape_str(v.shape()));
    }
    if (v.dim(2) < 3 || v.dim(3) < 3) {
        throw DimensionError("sobel_magnitude needs H,W >= 3, got " + shape_str(v.shape()));
    }
    static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    int64_t c = v.dim(1);
    Var padded = replicate_pad(x, 1);
    ConvGeometry g = ConvGeometry::square(3, 1, 0, c);
    Var gx = conv2d(padded, depthwise_const_kernel(c, kx), Var(), g);
    Var gy = conv2d(padded, depthwise_const_kernel(c, ky), Var(), g);
    return add(abs_op(gx), abs_op(gy));
}

namespace {

Var gaussian_window(int64_t channels) {
    constexpr int64_t win = 11;
    constexpr double sigma = 1.5;
    double g1[win];
    double total = 0.0;
    for (int64_t i = 0; i < win; ++i) {
        double d = static_cast<double>(i) - (win - 1) / 2.0;
        g1[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += g1[i];
    }
    for (int64_t i = 0; i < win; ++i) g1[i] /= total;
    Tensor w({channels, 1, win, win});
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < win; ++i)
            for (int64_t j = 0; j < win; ++j) w.at4(c, 0, i, j) = g1[i] * g1[j];
    return Var::constant(std::move(w));
}

} // namespace

Var ssim_mean(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    if (!av.same_shape(b.value())) {
        throw DimensionError("ssim operands differ: " + shape_str(av.shape()) + " vs " +
                             shape_str(b.value().shape()));
    }
    if (av.rank() != 4) throw DimensionError("ssim expects rank-4 inputs");
    if (av.dim(2) < 11 || av.dim(3) < 11) {
        throw DimensionError("ssim needs H,W >= 11, got " + shape_str(av.shape()));
    }
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    int64_t ch = av.dim(1);
    Var window = gaussian_window(ch);
    ConvGeometry g = ConvGeometry::square(11, 1, 0, ch);

    Var mu_a = conv2d(a, window, Var(), g);
    Var mu_b = conv2d(b, window, Var(), g);
    Var mu_aa = mul(mu_a, mu_a);
    Var mu_bb = mul(mu_b, mu_b);
    Var mu_ab = mul(mu_a, mu_b);
    Var sigma_aa = sub(conv2d(mul(a, a), window, Var(), g), mu_aa);
    Var sigma_bb = sub(conv2d(mul(b, b), window, Var(), g), mu_bb);
    Var sigma_ab = sub(conv2d(mul(a, b), window, Var(), g), mu_ab);

    Var num = mul(add_scalar(mul_scalar(mu_ab, 2.0), c1), add_scalar(mul_scalar(sigma_ab, 2.0), c2));
    Var den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(sigma_aa, sigma_bb), c2));
    return mean_all(div(num, den));
}

} // namespace sepg
