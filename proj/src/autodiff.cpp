#include "contrail/autodiff.hpp"

#include "contrail/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace contrail::ad {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor / Tape
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    for (int d : shape)
        if (d < 0) throw Error(Errc::ShapeMismatch, "negative extent in " + to_string(shape));
    auto node = std::make_shared<detail::Node<T>>();
    node->value.assign(ad::numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (values.size() != ad::numel(shape))
        throw Error(Errc::ShapeMismatch, std::to_string(values.size()) + " values for shape " + to_string(shape));
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw Error(Errc::NotScalar, "item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

template <class T>
void Tensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
    return from(shape(), node_->value, false);
}

template <class T>
void Tape<T>::backward(Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw Error(Errc::NotScalar, "backward needs a scalar loss");
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

namespace {

template <class T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <class T>
bool wants_grad(const Tape<T>& tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape.recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::ShapeMismatch, what);
}

template <class T>
void require_rank4(const Tensor<T>& t, const char* op) {
    require(t.defined() && t.rank() == 4, std::string(op) + " expects [N,C,H,W], got " +
                                              (t.defined() ? to_string(t.shape()) : "undefined"));
}

// C[m x n] += A[m x k] * B[k x n], all row-major.
template <class T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = a[static_cast<std::size_t>(i) * k + p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B[k x n]^T
template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T* brow = b + static_cast<std::size_t>(p) * n;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[static_cast<std::size_t>(i) * k + p] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = a[static_cast<std::size_t>(i) * k + p];
            if (av == T(0)) continue;
            T* crow = c + static_cast<std::size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeometry {
    int cin_g, h, w, kh, kw, stride, pad, oh, ow;
    int k() const { return cin_g * kh * kw; }
    int p() const { return oh * ow; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
    const int shift = g.pad - kx;
    int lo = shift > 0 ? (shift + g.stride - 1) / g.stride : 0;
    int hi = (g.w - 1 + shift) >= 0 ? (g.w - 1 + shift) / g.stride + 1 : 0;
    lo = std::min(lo, g.ow);
    hi = std::clamp(hi, lo, g.ow);
    return {lo, hi};
}

// Unfolds one group's input planes into cols[K x P].
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
    for (int c = 0; c < g.cin_g; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                T* row = cols + (static_cast<std::size_t>(c) * g.kh * g.kw + ky * g.kw + kx) * g.p();
                const auto [lo, hi] = valid_columns(g, kx);
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, T(0));
                        continue;
                    }
                    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy) * g.w - g.pad + kx;
                    std::fill(dst, dst + lo, T(0));
                    if (g.stride == 1) {
                        if (hi > lo) std::copy(plane + base + lo, plane + base + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = plane[base + ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.ow, T(0));
                }
            }
        }
    }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
    for (int c = 0; c < g.cin_g; ++c) {
        T* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + (static_cast<std::size_t>(c) * g.kh * g.kw + ky * g.kw + kx) * g.p();
                const auto [lo, hi] = valid_columns(g, kx);
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.ow;
                    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy) * g.w - g.pad + kx;
                    if (g.stride == 1) {
#pragma omp simd
                        for (int ox = lo; ox < hi; ++ox) plane[base + ox] += src[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) plane[base + ox * g.stride] += src[ox];
                    }
                }
            }
        }
    }
}

template <class T>
Tensor<T> make_output(Shape shape, bool requires_grad) {
    return Tensor<T>::zeros(std::move(shape), requires_grad);
}

} // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt) {
    require_rank4(input, "conv2d input");
    require_rank4(weight, "conv2d weight");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    require(opt.groups >= 1 && opt.stride >= 1 && opt.padding >= 0, "conv2d: bad stride/padding/groups");
    require(cin % opt.groups == 0 && cout % opt.groups == 0,
            "conv2d: channels not divisible by groups");
    const int cin_g = cin / opt.groups;
    const int cout_g = cout / opt.groups;
    require(weight.dim(1) == cin_g, "conv2d: weight " + to_string(weight.shape()) +
                                        " does not match input " + to_string(input.shape()));
    if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bias must be [Cout]");
    const int oh_num = h + 2 * opt.padding - kh;
    const int ow_num = w + 2 * opt.padding - kw;
    require(oh_num >= 0 && ow_num >= 0, "conv2d: kernel larger than padded input");
    ConvGeometry g{cin_g, h, w, kh, kw, opt.stride, opt.padding,
                   oh_num / opt.stride + 1, ow_num / opt.stride + 1};

    const bool grad = wants_grad(tape, {&input, &weight, &bias});
    Tensor<T> out = make_output<T>({n, cout, g.oh, g.ow}, grad);

    const bool direct = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
    std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(g.k()) * g.p());
    const T* x = input.values().data();
    const T* wt = weight.values().data();
    T* y = out.values().data();
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(g.p());
    const std::size_t w_group = static_cast<std::size_t>(cout_g) * g.k();

    for (int s = 0; s < n; ++s) {
        for (int grp = 0; grp < opt.groups; ++grp) {
            const T* xg = x + (static_cast<std::size_t>(s) * cin + static_cast<std::size_t>(grp) * cin_g) * in_plane;
            T* yg = y + (static_cast<std::size_t>(s) * cout + static_cast<std::size_t>(grp) * cout_g) * out_plane;
            const T* b = xg;
            if (!direct) {
                im2col(g, xg, cols.data());
                b = cols.data();
            }
            if (bias.defined()) {
                const T* bv = bias.values().data() + static_cast<std::size_t>(grp) * cout_g;
                for (int c = 0; c < cout_g; ++c)
                    std::fill(yg + c * out_plane, yg + (c + 1) * out_plane, bv[c]);
            }
            gemm_nn(cout_g, g.p(), g.k(), wt + grp * w_group, b, yg);
        }
    }

    if (grad) {
        tape.record([g, direct, n, cin, cout, cin_g, cout_g, groups = opt.groups, in_plane, out_plane,
                     w_group, xi = input.handle(), wi = weight.handle(), bi = bias.handle(),
                     yo = out.handle()] {
            if (yo->grad.empty()) return;
            const T* dy = yo->grad.data();
            T* dx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
            T* dw = wi->requires_grad ? wi->ensure_grad().data() : nullptr;
            T* db = (bi && bi->requires_grad) ? bi->ensure_grad().data() : nullptr;
            std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(g.k()) * g.p());
            std::vector<T> dcols(direct ? 0 : static_cast<std::size_t>(g.k()) * g.p());
            for (int s = 0; s < n; ++s) {
                for (int grp = 0; grp < groups; ++grp) {
                    const std::size_t xoff =
                        (static_cast<std::size_t>(s) * cin + static_cast<std::size_t>(grp) * cin_g) * in_plane;
                    const T* dyg = dy + (static_cast<std::size_t>(s) * cout +
                                         static_cast<std::size_t>(grp) * cout_g) * out_plane;
                    if (db) {
                        for (int c = 0; c < cout_g; ++c) {
                            T acc = T(0);
                            const T* row = dyg + c * out_plane;
                            for (std::size_t j = 0; j < out_plane; ++j) acc += row[j];
                            db[grp * cout_g + c] += acc;
                        }
                    }
                    if (dw) {
                        const T* b = xi->value.data() + xoff;
                        if (!direct) {
                            im2col(g, b, cols.data());
                            b = cols.data();
                        }
                        gemm_nt(cout_g, g.k(), g.p(), dyg, b, dw + grp * w_group);
                    }
                    if (dx) {
                        const T* wg = wi->value.data() + grp * w_group;
                        if (direct) {
                            gemm_tn(cout_g, g.k(), g.p(), wg, dyg, dx + xoff);
                        } else {
                            std::fill(dcols.begin(), dcols.end(), T(0));
                            gemm_tn(cout_g, g.k(), g.p(), wg, dyg, dcols.data());
                            col2im(g, dcols.data(), dx + xoff);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, int kernel, int stride) {
    require_rank4(input, "max_pool2d");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(kernel >= 1 && stride >= 1 && kernel <= h && kernel <= w, "max_pool2d: window does not fit");
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>({n, c, oh, ow}, grad);
    std::vector<std::size_t> argmax(out.numel());
    const T* x = input.values().data();
    T* y = out.values().data();
    std::size_t o = 0;
    for (int plane = 0; plane < n * c; ++plane) {
        const std::size_t base = static_cast<std::size_t>(plane) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = base + static_cast<std::size_t>(oy * stride) * w + ox * stride;
                for (int ky = 0; ky < kernel; ++ky) {
                    for (int kx = 0; kx < kernel; ++kx) {
                        const std::size_t idx = base + static_cast<std::size_t>(oy * stride + ky) * w + ox * stride + kx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                argmax[o] = best;
                y[o] = x[best];
            }
        }
    }
    if (grad) {
        tape.record([argmax = std::move(argmax), xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dx = xi->ensure_grad();
            for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += yo->grad[i];
        });
    }
    return out;
}

namespace {
struct LerpTable {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

LerpTable lerp_table(int in, int out) {
    LerpTable t;
    t.lo.resize(static_cast<std::size_t>(out));
    t.hi.resize(static_cast<std::size_t>(out));
    t.frac.resize(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int d = 0; d < out; ++d) {
        const double src = std::max((d + 0.5) * ratio - 0.5, 0.0);
        int lo = std::min(static_cast<int>(src), in - 1);
        const int hi = std::min(lo + 1, in - 1);
        t.lo[static_cast<std::size_t>(d)] = lo;
        t.hi[static_cast<std::size_t>(d)] = hi;
        t.frac[static_cast<std::size_t>(d)] = std::min(src - lo, 1.0);
    }
    return t;
}
} // namespace

template <class T>
Tensor<T> resize_bilinear(Tape<T>& tape, const Tensor<T>& input, int out_h, int out_w) {
    require_rank4(input, "resize_bilinear");
    require(out_h >= 1 && out_w >= 1, "resize_bilinear: output must be non-empty");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>({n, c, out_h, out_w}, grad);
    auto ty = lerp_table(h, out_h);
    auto tx = lerp_table(w, out_w);
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int plane = 0; plane < n * c; ++plane) {
        const T* xp = x + static_cast<std::size_t>(plane) * h * w;
        T* yp = y + static_cast<std::size_t>(plane) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            const T* r0 = xp + static_cast<std::size_t>(ty.lo[oy]) * w;
            const T* r1 = xp + static_cast<std::size_t>(ty.hi[oy]) * w;
            for (int ox = 0; ox < out_w; ++ox) {
                const T fx = static_cast<T>(tx.frac[ox]);
                const int x0 = tx.lo[ox], x1 = tx.hi[ox];
                const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
                const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                yp[static_cast<std::size_t>(oy) * out_w + ox] = top + fy * (bot - top);
            }
        }
    }
    if (grad) {
        tape.record([ty = std::move(ty), tx = std::move(tx), n, c, h, w, out_h, out_w,
                     xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dx = xi->ensure_grad();
            for (int plane = 0; plane < n * c; ++plane) {
                T* dp = dx.data() + static_cast<std::size_t>(plane) * h * w;
                const T* gp = yo->grad.data() + static_cast<std::size_t>(plane) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const T fy = static_cast<T>(ty.frac[oy]);
                    T* r0 = dp + static_cast<std::size_t>(ty.lo[oy]) * w;
                    T* r1 = dp + static_cast<std::size_t>(ty.hi[oy]) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const T fx = static_cast<T>(tx.frac[ox]);
                        const int x0 = tx.lo[ox], x1 = tx.hi[ox];
                        const T gv = gp[static_cast<std::size_t>(oy) * out_w + ox];
                        r0[x0] += gv * (T(1) - fy) * (T(1) - fx);
                        r0[x1] += gv * (T(1) - fy) * fx;
                        r1[x0] += gv * fy * (T(1) - fx);
                        r1[x1] += gv * fy * fx;
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& input, int scale) {
    require_rank4(input, "upsample_bilinear");
    require(scale >= 1, "upsample_bilinear: scale must be >= 1");
    return resize_bilinear(tape, input, input.dim(2) * scale, input.dim(3) * scale);
}

template <class T>
Tensor<T> adaptive_avg_pool(Tape<T>& tape, const Tensor<T>& input, int out_h, int out_w) {
    require_rank4(input, "adaptive_avg_pool");
    require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: output must be non-empty");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    auto bins = [](int in, int out) {
        std::vector<std::pair<int, int>> b(static_cast<std::size_t>(out));
        for (int i = 0; i < out; ++i) {
            const int lo = (i * in) / out;
            const int hi = ((i + 1) * in + out - 1) / out;
            b[static_cast<std::size_t>(i)] = {lo, hi};
        }
        return b;
    };
    auto by = bins(h, out_h);
    auto bx = bins(w, out_w);
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>({n, c, out_h, out_w}, grad);
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int plane = 0; plane < n * c; ++plane) {
        const T* xp = x + static_cast<std::size_t>(plane) * h * w;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                T acc = T(0);
                for (int iy = by[oy].first; iy < by[oy].second; ++iy)
                    for (int ix = bx[ox].first; ix < bx[ox].second; ++ix) acc += xp[iy * w + ix];
                const int count = (by[oy].second - by[oy].first) * (bx[ox].second - bx[ox].first);
                y[(static_cast<std::size_t>(plane) * out_h + oy) * out_w + ox] = acc / static_cast<T>(count);
            }
        }
    }
    if (grad) {
        tape.record([by = std::move(by), bx = std::move(bx), n, c, h, w, out_h, out_w,
                     xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dx = xi->ensure_grad();
            for (int plane = 0; plane < n * c; ++plane) {
                T* dp = dx.data() + static_cast<std::size_t>(plane) * h * w;
                for (int oy = 0; oy < out_h; ++oy) {
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int count = (by[oy].second - by[oy].first) * (bx[ox].second - bx[ox].first);
                        const T gv = yo->grad[(static_cast<std::size_t>(plane) * out_h + oy) * out_w + ox] /
                                     static_cast<T>(count);
                        for (int iy = by[oy].first; iy < by[oy].second; ++iy)
                            for (int ix = bx[ox].first; ix < bx[ox].second; ++ix) dp[iy * w + ix] += gv;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> elementwise(Tape<T>& tape, const Tensor<T>& input, Activation kind) {
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>(input.shape(), grad);
    const auto x = input.values();
    auto y = out.values();
    constexpr T kSqrt2OverPi = T(0.7978845608028654);
    constexpr T kCubic = T(0.044715);
    switch (kind) {
    case Activation::Relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        break;
    case Activation::Gelu:
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T v = x[i];
            y[i] = T(0.5) * v * (T(1) + std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v)));
        }
        break;
    case Activation::Sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
        break;
    }
    if (grad) {
        tape.record([kind, xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dx = xi->ensure_grad();
            const auto& x = xi->value;
            const auto& y = yo->value;
            const auto& dy = yo->grad;
            switch (kind) {
            case Activation::Relu:
                for (std::size_t i = 0; i < x.size(); ++i)
                    if (x[i] > T(0)) dx[i] += dy[i];
                break;
            case Activation::Gelu:
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const T v = x[i];
                    const T t = std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v));
                    const T d = T(0.5) * (T(1) + t) +
                                T(0.5) * v * (T(1) - t * t) * kSqrt2OverPi * (T(1) + T(3) * kCubic * v * v);
                    dx[i] += dy[i] * d;
                }
                break;
            case Activation::Sigmoid:
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
                break;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const bool grad = wants_grad(tape, {&a, &b});
    Tensor<T> out = make_output<T>(a.shape(), grad);
    auto y = out.values();
    const auto x0 = a.values();
    const auto x1 = b.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] + x1[i];
    if (grad) {
        tape.record([ai = a.handle(), bi = b.handle(), yo = out.handle()] {
            if (yo->grad.empty()) return;
            for (auto* in : {ai.get(), bi.get()}) {
                if (!in->requires_grad) continue;
                auto& d = in->ensure_grad();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += yo->grad[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>(input.shape(), grad);
    auto y = out.values();
    const auto x = input.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
    if (grad) {
        tape.record([factor, xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& d = xi->ensure_grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += yo->grad[i] * factor;
        });
    }
    return out;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>({}, grad);
    T acc = T(0);
    for (const T v : input.values()) acc += v;
    out.values()[0] = acc;
    if (grad) {
        tape.record([xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& d = xi->ensure_grad();
            for (auto& v : d) v += yo->grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization / structure
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> channel_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gain,
                       const Tensor<T>& offset, T eps) {
    require_rank4(input, "channel_norm");
    const int n = input.dim(0), c = input.dim(1);
    const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
    require(c >= 1, "channel_norm: needs at least one channel");
    require(gain.numel() == static_cast<std::size_t>(c) && offset.numel() == static_cast<std::size_t>(c),
            "channel_norm: gain/offset must have C elements");
    const bool grad = wants_grad(tape, {&input, &gain, &offset});
    Tensor<T> out = make_output<T>(input.shape(), grad);
    // Normalized values and inverse std per position, kept for backward.
    std::vector<T> xhat(input.numel());
    std::vector<T> inv_std(static_cast<std::size_t>(n) * hw);
    const T* x = input.values().data();
    const T* gv = gain.values().data();
    const T* ov = offset.values().data();
    T* y = out.values().data();
    for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * c * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            T mean = T(0);
            for (int ch = 0; ch < c; ++ch) mean += x[base + ch * hw + p];
            mean /= static_cast<T>(c);
            T var = T(0);
            for (int ch = 0; ch < c; ++ch) {
                const T d = x[base + ch * hw + p] - mean;
                var += d * d;
            }
            var /= static_cast<T>(c);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(s) * hw + p] = is;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t i = base + ch * hw + p;
                xhat[i] = (x[i] - mean) * is;
                y[i] = gv[ch] * xhat[i] + ov[ch];
            }
        }
    }
    if (grad) {
        tape.record([n, c, hw, xhat = std::move(xhat), inv_std = std::move(inv_std), xi = input.handle(),
                     gi = gain.handle(), oi = offset.handle(), yo = out.handle()] {
            if (yo->grad.empty()) return;
            const auto& dy = yo->grad;
            T* dg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
            T* dof = oi->requires_grad ? oi->ensure_grad().data() : nullptr;
            T* dx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
            const T* gv = gi->value.data();
            std::vector<T> dxhat(static_cast<std::size_t>(c));
            for (int s = 0; s < n; ++s) {
                const std::size_t base = static_cast<std::size_t>(s) * c * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    T mean_d = T(0), mean_dx = T(0);
                    for (int ch = 0; ch < c; ++ch) {
                        const std::size_t i = base + ch * hw + p;
                        if (dg) dg[ch] += dy[i] * xhat[i];
                        if (dof) dof[ch] += dy[i];
                        dxhat[ch] = dy[i] * gv[ch];
                        mean_d += dxhat[ch];
                        mean_dx += dxhat[ch] * xhat[i];
                    }
                    if (!dx) continue;
                    mean_d /= static_cast<T>(c);
                    mean_dx /= static_cast<T>(c);
                    const T is = inv_std[static_cast<std::size_t>(s) * hw + p];
                    for (int ch = 0; ch < c; ++ch) {
                        const std::size_t i = base + ch * hw + p;
                        dx[i] += is * (dxhat[ch] - mean_d - xhat[i] * mean_dx);
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, int axis) {
    require(!inputs.empty(), "concat: no inputs");
    const Shape& first = inputs.front().shape();
    const int rank = static_cast<int>(first.size());
    require(axis >= 0 && axis < rank, "concat: axis out of range");
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& t : inputs) {
        require(static_cast<int>(t.rank()) == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis)
                require(t.dim(d) == first[d], "concat: shapes " + to_string(first) + " and " +
                                                  to_string(t.shape()) + " disagree off-axis");
        shape[axis] += t.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(first[d]);
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(first[d]);

    bool grad = false;
    if (tape.recording())
        for (const auto& t : inputs) grad = grad || t.requires_grad();
    Tensor<T> out = make_output<T>(shape, grad);
    const std::size_t out_chunk = static_cast<std::size_t>(shape[axis]) * inner;
    std::size_t offset = 0;
    std::vector<std::pair<std::size_t, std::size_t>> spans; // (offset, chunk) per input
    for (const auto& t : inputs) {
        const std::size_t chunk = static_cast<std::size_t>(t.dim(axis)) * inner;
        const T* src = t.values().data();
        T* dst = out.values().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(src + o * chunk, src + (o + 1) * chunk, dst + o * out_chunk + offset);
        spans.emplace_back(offset, chunk);
        offset += chunk;
    }
    if (grad) {
        std::vector<NodePtr<T>> handles;
        for (const auto& t : inputs) handles.push_back(t.handle());
        tape.record([handles = std::move(handles), spans = std::move(spans), outer, out_chunk, yo = out.handle()] {
            if (yo->grad.empty()) return;
            for (std::size_t k = 0; k < handles.size(); ++k) {
                if (!handles[k]->requires_grad) continue;
                auto& d = handles[k]->ensure_grad();
                const auto [off, chunk] = spans[k];
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* g = yo->grad.data() + o * out_chunk + off;
                    T* dst = d.data() + o * chunk;
                    for (std::size_t j = 0; j < chunk; ++j) dst[j] += g[j];
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input, int axis) {
    const int rank = static_cast<int>(input.rank());
    require(axis >= 0 && axis < rank, "softmax: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(input.dim(d));
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(input.dim(d));
    const std::size_t len = static_cast<std::size_t>(input.dim(axis));
    const bool grad = wants_grad(tape, {&input});
    Tensor<T> out = make_output<T>(input.shape(), grad);
    const T* x = input.values().data();
    T* y = out.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T m = x[base];
            for (std::size_t k = 1; k < len; ++k) m = std::max(m, x[base + k * inner]);
            T z = T(0);
            for (std::size_t k = 0; k < len; ++k) {
                y[base + k * inner] = std::exp(x[base + k * inner] - m);
                z += y[base + k * inner];
            }
            for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= z;
        }
    }
    if (grad) {
        tape.record([outer, inner, len, xi = input.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dx = xi->ensure_grad();
            const auto& y = yo->value;
            const auto& dy = yo->grad;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * len * inner + i;
                    T dot = T(0);
                    for (std::size_t k = 0; k < len; ++k) dot += dy[base + k * inner] * y[base + k * inner];
                    for (std::size_t k = 0; k < len; ++k)
                        dx[base + k * inner] += y[base + k * inner] * (dy[base + k * inner] - dot);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> weighted_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                 const std::vector<mask::BitMask>& targets, ClassWeights weights) {
    require_rank4(logits, "weighted_cross_entropy");
    const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
    require(logits.dim(1) == 2, "weighted_cross_entropy: logits need 2 channels");
    require(static_cast<int>(targets.size()) == n, "weighted_cross_entropy: one target mask per sample");
    for (const auto& t : targets)
        require(t.height() == h && t.width() == w, "weighted_cross_entropy: target size mismatch");
    if (!(weights.background > 0.0) || !(weights.contrail > 0.0))
        throw Error(Errc::BadConfig, "class weights must be positive");

    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double inv_m = 1.0 / static_cast<double>(static_cast<std::size_t>(n) * hw);
    const bool grad = wants_grad(tape, {&logits});
    Tensor<T> out = make_output<T>({}, grad);
    const T* z = logits.values().data();
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        const T* z0 = z + static_cast<std::size_t>(s) * 2 * hw;
        const T* z1 = z0 + hw;
        const auto& bits = targets[static_cast<std::size_t>(s)].bits();
        for (std::size_t p = 0; p < hw; ++p) {
            const double a = z0[p], b = z1[p];
            const double m = std::max(a, b);
            const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
            total += bits[p] ? weights.contrail * (lse - b) : weights.background * (lse - a);
        }
    }
    out.values()[0] = static_cast<T>(total * inv_m);
    if (grad) {
        tape.record([n, hw, inv_m, weights, targets, xi = logits.handle(), yo = out.handle()] {
            if (yo->grad.empty() || !xi->requires_grad) return;
            auto& dz = xi->ensure_grad();
            const double upstream = static_cast<double>(yo->grad[0]);
            for (int s = 0; s < n; ++s) {
                const std::size_t off = static_cast<std::size_t>(s) * 2 * hw;
                const T* z0 = xi->value.data() + off;
                const T* z1 = z0 + hw;
                const auto& bits = targets[static_cast<std::size_t>(s)].bits();
                for (std::size_t p = 0; p < hw; ++p) {
                    const double a = z0[p], b = z1[p];
                    const double m = std::max(a, b);
                    const double e0 = std::exp(a - m), e1 = std::exp(b - m);
                    const double p1 = e1 / (e0 + e1);
                    const double p0 = 1.0 - p1;
                    const double wy = bits[p] ? weights.contrail : weights.background;
                    const double k = upstream * wy * inv_m;
                    dz[off + p] += static_cast<T>(k * (p0 - (bits[p] ? 0.0 : 1.0)));
                    dz[off + hw + p] += static_cast<T>(k * (p1 - (bits[p] ? 1.0 : 0.0)));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

#define CONTRAIL_INSTANTIATE(T)                                                                       \
    template class Tensor<T>;                                                                         \
    template class Tape<T>;                                                                           \
    template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                              Conv2dOptions);                                                         \
    template Tensor<T> max_pool2d(Tape<T>&, const Tensor<T>&, int, int);                              \
    template Tensor<T> resize_bilinear(Tape<T>&, const Tensor<T>&, int, int);                         \
    template Tensor<T> upsample_bilinear(Tape<T>&, const Tensor<T>&, int);                            \
    template Tensor<T> adaptive_avg_pool(Tape<T>&, const Tensor<T>&, int, int);                       \
    template Tensor<T> elementwise(Tape<T>&, const Tensor<T>&, Activation);                           \
    template Tensor<T> channel_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                    T);                                                               \
    template Tensor<T> concat(Tape<T>&, const std::vector<Tensor<T>>&, int);                          \
    template Tensor<T> softmax(Tape<T>&, const Tensor<T>&, int);                                      \
    template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                          \
    template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                               \
    template Tensor<T> weighted_cross_entropy(Tape<T>&, const Tensor<T>&,                             \
                                              const std::vector<mask::BitMask>&, ClassWeights);

CONTRAIL_INSTANTIATE(float)
CONTRAIL_INSTANTIATE(double)

#undef CONTRAIL_INSTANTIATE

} // namespace contrail::ad
