#include <algorithm>
#include <cmath>
#include <numeric>

#include "sepg/error.hpp"
#include "sepg/ops.hpp"

namespace sepg {

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        throw DimensionError(std::string(op) + ": operand shapes " + shape_str(a.value().shape()) +
                             " and " + shape_str(b.value().shape()) + " differ");
    }
}

constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / M_PI);

} // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_op("add", std::move(out), {a, b}, [](Var::Node& self) {
        self.parents[0].node()->accumulate(self.grad);
        self.parents[1].node()->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_op("sub", std::move(out), {a, b}, [](Var::Node& self) {
        self.parents[0].node()->accumulate(self.grad);
        Tensor gb = self.grad;
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
        self.parents[1].node()->accumulate(gb);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_op("mul", std::move(out), {a, b}, [](Var::Node& self) {
        const Tensor& av = self.parents[0].value();
        const Tensor& bv = self.parents[1].value();
        Tensor ga = self.grad, gb = self.grad;
        for (int64_t i = 0; i < ga.numel(); ++i) {
            ga[i] *= bv[i];
            gb[i] *= av[i];
        }
        self.parents[0].node()->accumulate(ga);
        self.parents[1].node()->accumulate(gb);
    });
}

Var div(const Var& a, const Var& b) {
    check_same_shape("div", a, b);
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
    return make_op("div", std::move(out), {a, b}, [](Var::Node& self) {
        const Tensor& av = self.parents[0].value();
        const Tensor& bv = self.parents[1].value();
        Tensor ga = self.grad, gb = self.grad;
        for (int64_t i = 0; i < ga.numel(); ++i) {
            ga[i] /= bv[i];
            gb[i] *= -av[i] / (bv[i] * bv[i]);
        }
        self.parents[0].node()->accumulate(ga);
        self.parents[1].node()->accumulate(gb);
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return make_op("add_scalar", std::move(out), {a}, [](Var::Node& self) {
        self.parents[0].node()->accumulate(self.grad);
    });
}

Var mul_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return make_op("mul_scalar", std::move(out), {a}, [c](Var::Node& self) {
        Tensor ga = self.grad;
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= c;
        self.parents[0].node()->accumulate(ga);
    });
}

Var abs_op(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    return make_op("abs", std::move(out), {a}, [](Var::Node& self) {
        const Tensor& av = self.parents[0].value();
        Tensor ga = self.grad;
        for (int64_t i = 0; i < ga.numel(); ++i) {
            double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
            ga[i] *= s;
        }
        self.parents[0].node()->accumulate(ga);
    });
}

Var maximum(const Var& a, const Var& b) {
    check_same_shape("maximum", a, b);
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], b.value()[i]);
    return make_op("maximum", std::move(out), {a, b}, [](Var::Node& self) {
        const Tensor& av = self.parents[0].value();
        const Tensor& bv = self.parents[1].value();
        Tensor ga = self.grad, gb = self.grad;
        for (int64_t i = 0; i < ga.numel(); ++i) {
            if (av[i] >= bv[i]) {
                gb[i] = 0.0;
            } else {
                ga[i] = 0.0;
            }
        }
        self.parents[0].node()->accumulate(ga);
        self.parents[1].node()->accumulate(gb);
    });
}

Var gelu(const Var& x) {
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = out[i];
        double u = kGeluScale * (v + kGeluCoeff * v * v * v);
        out[i] = 0.5 * v * (1.0 + std::tanh(u));
    }
    return make_op("gelu", std::move(out), {x}, [](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        Tensor gx = self.grad;
        for (int64_t i = 0; i < gx.numel(); ++i) {
            double v = xv[i];
            double u = kGeluScale * (v + kGeluCoeff * v * v * v);
            double t = std::tanh(u);
            double du = kGeluScale * (1.0 + 3.0 * kGeluCoeff * v * v);
            gx[i] *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        }
        self.parents[0].node()->accumulate(gx);
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_op("sigmoid", std::move(out), {x}, [](Var::Node& self) {
        const Tensor& y = self.value;
        Tensor gx = self.grad;
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
        self.parents[0].node()->accumulate(gx);
    });
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.value().numel(); ++i) acc += a.value()[i];
    return make_op("sum_all", Tensor::scalar(acc), {a}, [](Var::Node& self) {
        Tensor ga = Tensor::full(self.parents[0].value().shape(), self.grad[0]);
        self.parents[0].node()->accumulate(ga);
    });
}

Var mean_all(const Var& a) {
    int64_t n = a.value().numel();
    if (n == 0) throw DimensionError("mean_all of empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += a.value()[i];
    return make_op("mean_all", Tensor::scalar(acc / static_cast<double>(n)), {a},
                   [n](Var::Node& self) {
                       Tensor ga = Tensor::full(self.parents[0].value().shape(),
                                                self.grad[0] / static_cast<double>(n));
                       self.parents[0].node()->accumulate(ga);
                   });
}

Var gap(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) {
        throw DimensionError("gap expects rank-4 input, got shape " + shape_str(v.shape()));
    }
    int64_t b = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    int64_t hw = h * w;
    Tensor out({b, c});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            const double* p = v.data() + v.index4(bi, ci, 0, 0);
            for (int64_t i = 0; i < hw; ++i) acc += p[i];
            out.at2(bi, ci) = acc / static_cast<double>(hw);
        }
    return make_op("gap", std::move(out), {x}, [b, c, hw](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        Tensor gx = Tensor::zeros(xv.shape());
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < c; ++ci) {
                double g = self.grad.at2(bi, ci) / static_cast<double>(hw);
                double* p = gx.data() + xv.index4(bi, ci, 0, 0);
                for (int64_t i = 0; i < hw; ++i) p[i] += g;
            }
        self.parents[0].node()->accumulate(gx);
    });
}

Var broadcast_spatial(const Var& v, int64_t h, int64_t w) {
    const Tensor& t = v.value();
    if (t.rank() != 2) {
        throw DimensionError("broadcast_spatial expects rank-2 input, got shape " +
                             shape_str(t.shape()));
    }
    int64_t b = t.dim(0), c = t.dim(1);
    Tensor out({b, c, h, w});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            double val = t.at2(bi, ci);
            double* p = out.data() + out.index4(bi, ci, 0, 0);
            for (int64_t i = 0; i < h * w; ++i) p[i] = val;
        }
    return make_op("broadcast_spatial", std::move(out), {v}, [b, c, h, w](Var::Node& self) {
        Tensor gv({b, c});
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                const double* p = self.grad.data() + self.grad.index4(bi, ci, 0, 0);
                for (int64_t i = 0; i < h * w; ++i) acc += p[i];
                gv.at2(bi, ci) = acc;
            }
        self.parents[0].node()->accumulate(gv);
    });
}

Var broadcast_batch(const Var& t, int64_t b) {
    const Tensor& v = t.value();
    if (v.rank() != 2) {
        throw DimensionError("broadcast_batch expects rank-2 input, got shape " +
                             shape_str(v.shape()));
    }
    int64_t m = v.dim(0), c = v.dim(1);
    Tensor out({b, m, c});
    for (int64_t bi = 0; bi < b; ++bi)
        std::copy(v.data(), v.data() + m * c, out.data() + bi * m * c);
    return make_op("broadcast_batch", std::move(out), {t}, [b, m, c](Var::Node& self) {
        Tensor gt({m, c});
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* p = self.grad.data() + bi * m * c;
            for (int64_t i = 0; i < m * c; ++i) gt[i] += p[i];
        }
        self.parents[0].node()->accumulate(gt);
    });
}

Var scale_by_scalar(const Var& x, const Var& s) {
    if (s.value().numel() != 1) {
        throw DimensionError("scale_by_scalar: scale must have a single element, got shape " +
                             shape_str(s.value().shape()));
    }
    double sv = s.value()[0];
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    return make_op("scale_by_scalar", std::move(out), {x, s}, [](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        double sv = self.parents[1].value()[0];
        Tensor gx = self.grad;
        double gs = 0.0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
            gs += gx[i] * xv[i];
            gx[i] *= sv;
        }
        self.parents[0].node()->accumulate(gx);
        self.parents[1].node()->accumulate(Tensor::from(self.parents[1].value().shape(), {gs}));
    });
}

Var mul_bcast_channel(const Var& x, const Var& m) {
    const Tensor& xv = x.value();
    const Tensor& mv = m.value();
    if (xv.rank() != 4 || mv.rank() != 4 || mv.dim(1) != 1 || xv.dim(0) != mv.dim(0) ||
        xv.dim(2) != mv.dim(2) || xv.dim(3) != mv.dim(3)) {
        throw DimensionError("mul_bcast_channel: shapes " + shape_str(xv.shape()) + " and " +
                             shape_str(mv.shape()) + " are incompatible");
    }
    int64_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            double* po = out.data() + (bi * c + ci) * hw;
            const double* pm = mv.data() + bi * hw;
            for (int64_t i = 0; i < hw; ++i) po[i] *= pm[i];
        }
    return make_op("mul_bcast_channel", std::move(out), {x, m}, [b, c, hw](Var::Node& self) {
        const Tensor& xv2 = self.parents[0].value();
        const Tensor& mv2 = self.parents[1].value();
        Tensor gx = Tensor::zeros(xv2.shape());
        Tensor gm = Tensor::zeros(mv2.shape());
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* pg = self.grad.data() + (bi * c + ci) * hw;
                const double* px = xv2.data() + (bi * c + ci) * hw;
                const double* pm = mv2.data() + bi * hw;
                double* pgx = gx.data() + (bi * c + ci) * hw;
                double* pgm = gm.data() + bi * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    pgx[i] = pg[i] * pm[i];
                    pgm[i] += pg[i] * px[i];
                }
            }
        self.parents[0].node()->accumulate(gx);
        self.parents[1].node()->accumulate(gm);
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (vv.rank() != 1 || xv.rank() < 1 ||
        xv.shape().back() != vv.dim(0)) {
        throw DimensionError("add_rowvec: vector shape " + shape_str(vv.shape()) +
                             " does not match last axis of " + shape_str(xv.shape()));
    }
    int64_t c = vv.dim(0);
    int64_t rows = xv.numel() / c;
    Tensor out = xv;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * c;
        for (int64_t i = 0; i < c; ++i) p[i] += vv[i];
    }
    return make_op("add_rowvec", std::move(out), {x, v}, [rows, c](Var::Node& self) {
        self.parents[0].node()->accumulate(self.grad);
        Tensor gv({c});
        for (int64_t r = 0; r < rows; ++r) {
            const double* p = self.grad.data() + r * c;
            for (int64_t i = 0; i < c; ++i) gv[i] += p[i];
        }
        self.parents[1].node()->accumulate(gv);
    });
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
    if (shape_numel(shape) != x.value().numel()) {
        throw DimensionError("reshape from " + shape_str(x.value().shape()) + " to " +
                             shape_str(shape) + " changes element count");
    }
    std::vector<double> data(x.value().data(), x.value().data() + x.value().numel());
    Tensor out = Tensor::from(shape, std::move(data));
    return make_op("reshape", std::move(out), {x}, [](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        std::vector<double> g(self.grad.data(), self.grad.data() + self.grad.numel());
        self.parents[0].node()->accumulate(Tensor::from(xv.shape(), std::move(g)));
    });
}

namespace {

Tensor permute_tensor(const Tensor& x, const std::vector<int>& axes) {
    int r = x.rank();
    if (static_cast<int>(axes.size()) != r) {
        throw DimensionError("permute axes count " + std::to_string(axes.size()) +
                             " does not match rank " + std::to_string(r));
    }
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[static_cast<size_t>(a)]) {
            throw DimensionError("permute axes are not a permutation of 0.." +
                                 std::to_string(r - 1));
        }
        seen[static_cast<size_t>(a)] = true;
    }
    std::vector<int64_t> out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);

    std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);

    Tensor out(out_shape);
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t n = out.numel();
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t src = 0;
        for (int i = 0; i < r; ++i) src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
        out[flat] = x[src];
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

} // namespace

Var permute(const Var& x, const std::vector<int>& axes) {
    Tensor out = permute_tensor(x.value(), axes);
    std::vector<int> inverse(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inverse[static_cast<size_t>(axes[i])] = static_cast<int>(i);
    return make_op("permute", std::move(out), {x}, [inverse](Var::Node& self) {
        self.parents[0].node()->accumulate(permute_tensor(self.grad, inverse));
    });
}

Var transpose_last2(const Var& x) {
    int r = x.value().rank();
    if (r < 2) throw DimensionError("transpose_last2 requires rank >= 2");
    std::vector<int> axes(static_cast<size_t>(r));
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[static_cast<size_t>(r - 1)], axes[static_cast<size_t>(r - 2)]);
    return permute(x, axes);
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const Tensor& first = parts[0].value();
    int r = first.rank();
    if (axis < 0 || axis >= r) throw DimensionError("concat axis out of range");
    std::vector<int64_t> out_shape = first.shape();
    int64_t total_axis = 0;
    for (const Var& p : parts) {
        const Tensor& t = p.value();
        if (t.rank() != r) throw DimensionError("concat rank mismatch");
        for (int i = 0; i < r; ++i) {
            if (i != axis && t.dim(i) != first.dim(i)) {
                throw DimensionError("concat shapes disagree on axis " + std::to_string(i) +
                                     ": " + shape_str(first.shape()) + " vs " +
                                     shape_str(t.shape()));
            }
        }
        total_axis += t.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total_axis;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= first.dim(i);

    Tensor out(out_shape);
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const Var& p : parts) {
        offsets.push_back(off);
        int64_t len = p.value().dim(axis);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = p.value().data() + o * len * inner;
            double* dst = out.data() + (o * total_axis + off) * inner;
            std::copy(src, src + len * inner, dst);
        }
        off += len;
    }
    return make_op("concat", std::move(out), parts,
                   [axis, outer, inner, total_axis, offsets](Var::Node& self) {
                       for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                           const Tensor& pv = self.parents[pi].value();
                           int64_t len = pv.dim(axis);
                           Tensor gp(pv.shape());
                           for (int64_t o = 0; o < outer; ++o) {
                               const double* src =
                                   self.grad.data() + (o * total_axis + offsets[pi]) * inner;
                               double* dst = gp.data() + o * len * inner;
                               std::copy(src, src + len * inner, dst);
                           }
                           self.parents[pi].node()->accumulate(gp);
                       }
                   });
}

Var slice(const Var& x, int axis, int64_t start, int64_t len) {
    const Tensor& v = x.value();
    int r = v.rank();
    if (axis < 0 || axis >= r) throw DimensionError("slice axis out of range");
    if (start < 0 || len < 0 || start + len > v.dim(axis)) {
        throw DimensionError("slice [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds axis " +
                             std::to_string(axis) + " of shape " + shape_str(v.shape()));
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= v.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= v.dim(i);
    int64_t full = v.dim(axis);

    std::vector<int64_t> out_shape = v.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = v.data() + (o * full + start) * inner;
        std::copy(src, src + len * inner, out.data() + o * len * inner);
    }
    return make_op("slice", std::move(out), {x}, [outer, inner, full, start, len](Var::Node& self) {
        const Tensor& pv = self.parents[0].value();
        Tensor gp(pv.shape());
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + o * len * inner;
            double* dst = gp.data() + (o * full + start) * inner;
            std::copy(src, src + len * inner, dst);
        }
        self.parents[0].node()->accumulate(gp);
    });
}

namespace {

struct MatmulDims {
    int64_t batch, n, k, m;
    bool b_shared;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul requires rank >= 2 operands");
    }
    MatmulDims d{};
    d.n = a.dim(a.rank() - 2);
    d.k = a.dim(a.rank() - 1);
    int64_t bk = b.dim(b.rank() - 2);
    d.m = b.dim(b.rank() - 1);
    if (d.k != bk) {
        throw DimensionError("matmul inner dimensions disagree: " + std::to_string(d.k) +
                             " vs " + std::to_string(bk) + " (shapes " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()) + ")");
    }
    d.batch = a.numel() / (d.n * d.k);
    d.b_shared = b.rank() == 2 && a.rank() > 2;
    if (!d.b_shared) {
        if (a.rank() != b.rank() || b.numel() / (d.k * d.m) != d.batch) {
            throw DimensionError("matmul leading dimensions disagree: " + shape_str(a.shape()) +
                                 " x " + shape_str(b.shape()));
        }
        for (int i = 0; i + 2 < a.rank(); ++i) {
            if (a.dim(i) != b.dim(i)) {
                throw DimensionError("matmul leading axis " + std::to_string(i) + " disagrees");
            }
        }
    }
    return d;
}

void matmul_kernel(const double* a, const double* b, double* out, int64_t n, int64_t k,
                   int64_t m, bool accumulate) {
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            double acc = accumulate ? out[i * m + j] : 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * m + j];
            out[i * m + j] = acc;
        }
    }
}

// out[n,k] += g[n,m] * b^T[m,k]
void matmul_grad_a(const double* g, const double* b, double* out, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            double acc = out[i * k + kk];
            for (int64_t j = 0; j < m; ++j) acc += g[i * m + j] * b[kk * m + j];
            out[i * k + kk] = acc;
        }
}

// out[k,m] += a^T[k,n] * g[n,m]
void matmul_grad_b(const double* a, const double* g, double* out, int64_t n, int64_t k, int64_t m) {
    for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t j = 0; j < m; ++j) {
            double acc = out[kk * m + j];
            for (int64_t i = 0; i < n; ++i) acc += a[i * k + kk] * g[i * m + j];
            out[kk * m + j] = acc;
        }
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    MatmulDims d = matmul_dims(av, bv);

    std::vector<int64_t> out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(d.m);
    Tensor out(out_shape);
    for (int64_t bi = 0; bi < d.batch; ++bi) {
        const double* pa = av.data() + bi * d.n * d.k;
        const double* pb = bv.data() + (d.b_shared ? 0 : bi * d.k * d.m);
        matmul_kernel(pa, pb, out.data() + bi * d.n * d.m, d.n, d.k, d.m, false);
    }
    return make_op("matmul", std::move(out), {a, b}, [d](Var::Node& self) {
        const Tensor& av2 = self.parents[0].value();
        const Tensor& bv2 = self.parents[1].value();
        Tensor ga = Tensor::zeros(av2.shape());
        Tensor gb = Tensor::zeros(bv2.shape());
        for (int64_t bi = 0; bi < d.batch; ++bi) {
            const double* pg = self.grad.data() + bi * d.n * d.m;
            const double* pa = av2.data() + bi * d.n * d.k;
            const double* pb = bv2.data() + (d.b_shared ? 0 : bi * d.k * d.m);
            matmul_grad_a(pg, pb, ga.data() + bi * d.n * d.k, d.n, d.k, d.m);
            matmul_grad_b(pa, pg, gb.data() + (d.b_shared ? 0 : bi * d.k * d.m), d.n, d.k, d.m);
        }
        self.parents[0].node()->accumulate(ga);
        self.parents[1].node()->accumulate(gb);
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    Var y = matmul(x, transpose_last2(weight));
    if (bias.defined()) y = add_rowvec(y, bias);
    return y;
}

Var softmax_last(const Var& x, double temperature) {
    if (!(temperature > 0.0)) {
        throw ParameterError("softmax temperature must be positive, got " +
                             std::to_string(temperature));
    }
    const Tensor& v = x.value();
    if (v.rank() < 1) throw DimensionError("softmax requires rank >= 1");
    int64_t c = v.shape().back();
    int64_t rows = v.numel() / c;
    Tensor out(v.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = v.data() + r * c;
        double* q = out.data() + r * c;
        double mx = p[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, p[i]);
        double denom = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            q[i] = std::exp((p[i] - mx) / temperature);
            denom += q[i];
        }
        for (int64_t i = 0; i < c; ++i) q[i] /= denom;
    }
    return make_op("softmax", std::move(out), {x}, [rows, c, temperature](Var::Node& self) {
        const Tensor& p = self.value;
        Tensor gx(self.parents[0].value().shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* pp = p.data() + r * c;
            const double* pg = self.grad.data() + r * c;
            double dot = 0.0;
            for (int64_t i = 0; i < c; ++i) dot += pp[i] * pg[i];
            double* px = gx.data() + r * c;
            for (int64_t i = 0; i < c; ++i) px[i] = pp[i] * (pg[i] - dot) / temperature;
        }
        self.parents[0].node()->accumulate(gx);
    });
}

Var layer_norm_last(const Var& x, const Var& gain, const Var& shift, double eps) {
    const Tensor& v = x.value();
    if (v.rank() < 1) throw DimensionError("layer_norm requires rank >= 1");
    int64_t c = v.shape().back();
    if (gain.value().numel() != c || shift.value().numel() != c) {
        throw DimensionError("layer_norm affine parameters must have length " +
                             std::to_string(c) + ", got " + shape_str(gain.value().shape()) +
                             " and " + shape_str(shift.value().shape()));
    }
    int64_t rows = v.numel() / c;
    Tensor out(v.shape());
    const double* pg = gain.value().data();
    const double* ps = shift.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = v.data() + r * c;
        double* q = out.data() + r * c;
        double mean = 0.0;
        for (int64_t i = 0; i < c; ++i) mean += p[i];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t i = 0; i < c; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t i = 0; i < c; ++i) q[i] = pg[i] * (p[i] - mean) * inv + ps[i];
    }
    return make_op("layer_norm", std::move(out), {x, gain, shift}, [rows, c, eps](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        const Tensor& gv = self.parents[1].value();
        Tensor gx(xv.shape());
        Tensor ggain({c});
        Tensor gshift({c});
        for (int64_t r = 0; r < rows; ++r) {
            const double* p = xv.data() + r * c;
            const double* pdy = self.grad.data() + r * c;
            double mean = 0.0;
            for (int64_t i = 0; i < c; ++i) mean += p[i];
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (int64_t i = 0; i < c; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<double>(c);
            double inv = 1.0 / std::sqrt(var + eps);

            double mean_dyg = 0.0, mean_dyg_xhat = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                double xhat = (p[i] - mean) * inv;
                double dyg = pdy[i] * gv[i];
                mean_dyg += dyg;
                mean_dyg_xhat += dyg * xhat;
                ggain[i] += pdy[i] * xhat;
                gshift[i] += pdy[i];
            }
            mean_dyg /= static_cast<double>(c);
            mean_dyg_xhat /= static_cast<double>(c);
            double* px = gx.data() + r * c;
            for (int64_t i = 0; i < c; ++i) {
                double xhat = (p[i] - mean) * inv;
                double dyg = pdy[i] * gv[i];
                px[i] = (dyg - mean_dyg - xhat * mean_dyg_xhat) * inv;
            }
        }
        self.parents[0].node()->accumulate(gx);
        self.parents[1].node()->accumulate(ggain);
        self.parents[2].node()->accumulate(gshift);
    });
}

Var layer_norm_channels(const Var& x, const Var& gain, const Var& shift, double eps) {
    if (x.value().rank() != 4) {
        throw DimensionError("layer_norm_channels expects rank-4 input, got shape " +
                             shape_str(x.value().shape()));
    }
    Var moved = permute(x, {0, 2, 3, 1});
    Var normed = layer_norm_last(moved, gain, shift, eps);
    return permute(normed, {0, 3, 1, 2});
}

namespace {

// Indices of the K largest entries, ties resolved toward the lower index.
void topk_indices(const double* p, int64_t c, int64_t k, std::vector<int64_t>& out) {
    out.resize(static_cast<size_t>(c));
    std::iota(out.begin(), out.end(), 0);
    std::stable_sort(out.begin(), out.end(), [p](int64_t i, int64_t j) { return p[i] > p[j]; });
    out.resize(static_cast<size_t>(k));
}

} // namespace

Var topk_renorm_last(const Var& x, int64_t k) {
    const Tensor& v = x.value();
    if (v.rank() < 1) throw DimensionError("topk_renorm requires rank >= 1");
    int64_t c = v.shape().back();
    if (k < 1 || k > c) {
        throw ParameterError("top-k count " + std::to_string(k) + " outside [1, " +
                             std::to_string(c) + "]");
    }
    int64_t rows = v.numel() / c;
    Tensor out(v.shape());
    std::vector<int64_t> kept;
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = v.data() + r * c;
        double* q = out.data() + r * c;
        topk_indices(p, c, k, kept);
        double mx = p[kept[0]];
        double denom = 0.0;
        for (int64_t i : kept) denom += std::exp(p[i] - mx);
        for (int64_t i : kept) q[i] = std::exp(p[i] - mx) / denom;
    }
    return make_op("topk_renorm", std::move(out), {x}, [rows, c, k](Var::Node& self) {
        const Tensor& xv = self.parents[0].value();
        const Tensor& q = self.value;
        Tensor gx(xv.shape());
        std::vector<int64_t> kept;
        for (int64_t r = 0; r < rows; ++r) {
            const double* pq = q.data() + r * c;
            const double* pg = self.grad.data() + r * c;
            topk_indices(xv.data() + r * c, c, k, kept);
            double dot = 0.0;
            for (int64_t i : kept) dot += pq[i] * pg[i];
            double* px = gx.data() + r * c;
            for (int64_t i : kept) px[i] = pq[i] * (pg[i] - dot);
        }
        self.parents[0].node()->accumulate(gx);
    });
}

} // namespace sepg
