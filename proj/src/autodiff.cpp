#include "crispdepth/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace crisp::ad {

namespace {

int64_t next_id() {
    static std::atomic<int64_t> counter{0};
    return ++counter;
}

Var make_node(Tensor value, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p && p->requires_grad) n->requires_grad = true;
    n->id = next_id();
    return n;
}

// Broadcast view over an activation tensor: full map, scalar, single-channel
// map expanded across channels, or per-channel vector expanded spatially.
enum class Bcast { kFull, kScalar, kChannel, kPerChannel };

struct View {
    const Tensor* t;
    Bcast mode;
    float at(int c, int y, int x) const {
        switch (mode) {
            case Bcast::kFull: return t->at(0, c, y, x);
            case Bcast::kScalar: return t->data()[0];
            case Bcast::kChannel: return t->at(0, 0, y, x);
            default: return t->data()[c];
        }
    }
};

bool is_scalar(const Tensor& t) { return t.size() == 1; }

// Determines output shape and per-operand broadcast mode, or throws.
void resolve_broadcast(const Tensor& a, const Tensor& b, const Tensor** out_like,
                       Bcast* am, Bcast* bm) {
    if (a.same_shape(b)) {
        *out_like = &a;
        *am = *bm = Bcast::kFull;
        return;
    }
    if (is_scalar(b)) {
        *out_like = &a;
        *am = Bcast::kFull;
        *bm = Bcast::kScalar;
        return;
    }
    if (is_scalar(a)) {
        *out_like = &b;
        *am = Bcast::kScalar;
        *bm = Bcast::kFull;
        return;
    }
    if (a.n() == 1 && b.n() == 1 && a.h() == b.h() && a.w() == b.w()) {
        if (b.c() == 1) {
            *out_like = &a;
            *am = Bcast::kFull;
            *bm = Bcast::kChannel;
            return;
        }
        if (a.c() == 1) {
            *out_like = &b;
            *am = Bcast::kChannel;
            *bm = Bcast::kFull;
            return;
        }
    }
    if (a.n() == 1 && b.n() == 1 && a.c() == b.c()) {
        if (b.h() == 1 && b.w() == 1) {
            *out_like = &a;
            *am = Bcast::kFull;
            *bm = Bcast::kPerChannel;
            return;
        }
        if (a.h() == 1 && a.w() == 1) {
            *out_like = &b;
            *am = Bcast::kPerChannel;
            *bm = Bcast::kFull;
            return;
        }
    }
    throw ShapeError("incompatible shapes for elementwise op: " + a.shape_str() +
                     " vs " + b.shape_str());
}

// Accumulate an elementwise gradient contribution into an operand that may
// have been broadcast. `emit(c,y,x)` yields the contribution at each output
// position.
template <class Emit>
void accumulate(Tensor& g, Bcast mode, int C, int H, int W, Emit emit) {
    if (mode == Bcast::kFull) {
        float* gp = g.data();
        int64_t i = 0;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) gp[i++] += emit(c, y, x);
    } else if (mode == Bcast::kScalar) {
        double s = 0.0;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) s += emit(c, y, x);
        g.data()[0] += static_cast<float>(s);
    } else if (mode == Bcast::kChannel) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                for (int c = 0; c < C; ++c) s += emit(c, y, x);
                g.at(0, 0, y, x) += static_cast<float>(s);
            }
    } else {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) s += emit(c, y, x);
            g.data()[c] += static_cast<float>(s);
        }
    }
}

template <class F, class DA, class DB>
Var binary_op(const Var& a, const Var& b, F f, DA da, DB db) {
    const Tensor* like = nullptr;
    Bcast am, bm;
    resolve_broadcast(a->value, b->value, &like, &am, &bm);
    const int C = like->c(), H = like->h(), W = like->w();
    if (like->n() != 1 && (am != Bcast::kFull || bm != Bcast::kFull))
        throw ShapeError("broadcast requires activation tensors (n=1)");

    Tensor out(like->n(), C, H, W);
    View va{&a->value, am}, vb{&b->value, bm};
    if (am == Bcast::kFull && bm == Bcast::kFull) {
        const float* pa = a->value.data();
        const float* pb = b->value.data();
        float* po = out.data();
        const int64_t n = out.size();
        for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    } else {
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    out.at(0, c, y, x) = f(va.at(c, y, x), vb.at(c, y, x));
    }

    auto node = make_node(std::move(out), {a, b});
    if (node->requires_grad) {
        node->backprop = [a, b, am, bm, C, H, W, da, db](Node& self) {
            View va2{&a->value, am}, vb2{&b->value, bm};
            const Tensor& g = self.grad;
            if (a->requires_grad) {
                Tensor& ga = a->ensure_grad();
                accumulate(ga, am, C, H, W, [&](int c, int y, int x) {
                    return g.at(0, c, y, x) * da(va2.at(c, y, x), vb2.at(c, y, x));
                });
            }
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                accumulate(gb, bm, C, H, W, [&](int c, int y, int x) {
                    return g.at(0, c, y, x) * db(va2.at(c, y, x), vb2.at(c, y, x));
                });
            }
        };
    }
    return node;
}

template <class F, class D>
Var unary_op(const Var& a, F f, D d) {
    Tensor out = Tensor::zeros_like(a->value);
    const float* pa = a->value.data();
    float* po = out.data();
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);

    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, d](Node& self) {
            Tensor& ga = a->ensure_grad();
            const float* pg = self.grad.data();
            const float* pa2 = a->value.data();
            float* pga = ga.data();
            const int64_t m = ga.size();
            for (int64_t i = 0; i < m; ++i) pga[i] += pg[i] * d(pa2[i]);
        };
    }
    return node;
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Var constant(Tensor v) { return leaf(std::move(v), false); }

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->id = next_id();
    return n;
}

void backward(const Var& root) {
    if (!root) throw Error("backward on null var");
    if (root->value.size() != 1) throw ShapeError("backward root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second)
                stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* x, const Node* y) { return x->id > y->id; });

    root->ensure_grad().data()[0] = 1.0f;
    for (Node* n : order) {
        if (n->backprop && n->has_grad()) n->backprop(*n);
    }
}

Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x + y; },
        [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x - y; },
        [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x * y; },
        [](float, float y) { return y; }, [](float x, float) { return x; });
}

Var div(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x / y; },
        [](float, float y) { return 1.0f / y; },
        [](float x, float y) { return -x / (y * y); });
}

Var add_const(const Var& a, float k) {
    return unary_op(a, [k](float x) { return x + k; }, [](float) { return 1.0f; });
}

Var mul_const(const Var& a, float k) {
    return unary_op(a, [k](float x) { return x * k; }, [k](float) { return k; });
}

Var neg(const Var& a) { return mul_const(a, -1.0f); }

Var abs(const Var& a) {
    return unary_op(
        a, [](float x) { return std::fabs(x); },
        [](float x) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Var square(const Var& a) {
    return unary_op(a, [](float x) { return x * x; }, [](float x) { return 2.0f * x; });
}

Var sqrt(const Var& a) {
    return unary_op(
        a, [](float x) { return std::sqrt(x); },
        [](float x) { return 0.5f / std::sqrt(std::max(x, 1e-20f)); });
}

Var exp(const Var& a) {
    return unary_op(a, [](float x) { return std::exp(x); },
                    [](float x) { return std::exp(x); });
}

Var log(const Var& a) {
    return unary_op(a, [](float x) { return std::log(x); },
                    [](float x) { return 1.0f / x; });
}

Var sigmoid(const Var& a) {
    return unary_op(
        a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
        [](float x) {
            float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f - s);
        });
}

Var gelu(const Var& a) {
    return unary_op(
        a,
        [](float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); },
        [](float x) {
            float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
            float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
            return cdf + x * pdf;
        });
}

Var sin(const Var& a) {
    return unary_op(a, [](float x) { return std::sin(x); },
                    [](float x) { return std::cos(x); });
}

Var cos(const Var& a) {
    return unary_op(a, [](float x) { return std::cos(x); },
                    [](float x) { return -std::sin(x); });
}

Var clamp_min(const Var& a, float lo) {
    return unary_op(
        a, [lo](float x) { return x > lo ? x : lo; },
        [lo](float x) { return x > lo ? 1.0f : 0.0f; });
}

Var slice_channels(const Var& a, int c0, int c1) {
    const Tensor& v = a->value;
    if (v.n() != 1 || c0 < 0 || c1 > v.c() || c0 >= c1)
        throw ShapeError("bad channel slice [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") of " + v.shape_str());
    const int H = v.h(), W = v.w();
    Tensor out(1, c1 - c0, H, W);
    for (int c = c0; c < c1; ++c)
        std::copy(v.plane(c), v.plane(c) + static_cast<size_t>(H) * W,
                  out.plane(c - c0));

    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, c0, c1, H, W](Node& self) {
            Tensor& ga = a->ensure_grad();
            for (int c = c0; c < c1; ++c) {
                const float* g = self.grad.plane(c - c0);
                float* dst = ga.plane(c);
                for (int i = 0; i < H * W; ++i) dst[i] += g[i];
            }
        };
    }
    return node;
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& va = a->value;
    const Tensor& vb = b->value;
    if (va.n() != 1 || vb.n() != 1 || va.h() != vb.h() || va.w() != vb.w())
        throw ShapeError("concat spatial mismatch: " + va.shape_str() + " vs " +
                         vb.shape_str());
    const int H = va.h(), W = va.w();
    Tensor out(1, va.c() + vb.c(), H, W);
    std::copy(va.data(), va.data() + va.size(), out.data());
    std::copy(vb.data(), vb.data() + vb.size(), out.data() + va.size());

    auto node = make_node(std::move(out), {a, b});
    if (node->requires_grad) {
        const int ca = va.c();
        node->backprop = [a, b, ca](Node& self) {
            if (a->requires_grad) {
                Tensor& ga = a->ensure_grad();
                const float* g = self.grad.data();
                for (int64_t i = 0; i < ga.size(); ++i) ga.data()[i] += g[i];
            }
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                const float* g = self.grad.plane(ca);
                for (int64_t i = 0; i < gb.size(); ++i) gb.data()[i] += g[i];
            }
        };
    }
    return node;
}

namespace {
// Maps a padded coordinate back into [0,n) for the given mode; returns -1 for
// zero padding outside the source.
inline int pad_src_index(int i, int n, PadMode mode) {
    if (i >= 0 && i < n) return i;
    switch (mode) {
        case PadMode::kZero: return -1;
        case PadMode::kReplicate: return i < 0 ? 0 : n - 1;
        case PadMode::kReflect: {
            // mirror about the edge pixel (edge not duplicated)
            int j = i < 0 ? -i : 2 * n - 2 - i;
            return std::clamp(j, 0, n - 1);
        }
    }
    return -1;
}
}  // namespace

Var pad2d(const Var& a, int left, int right, int top, int bottom, PadMode mode) {
    const Tensor& v = a->value;
    if (v.n() != 1) throw ShapeError("pad2d expects activation tensor");
    const int C = v.c(), H = v.h(), W = v.w();
    const int Ho = H + top + bottom, Wo = W + left + right;
    if (mode == PadMode::kReflect && (left >= W || right >= W || top >= H || bottom >= H))
        throw ShapeError("reflect pad wider than source");
    Tensor out(1, C, Ho, Wo);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y) {
            const int sy = pad_src_index(y - top, H, mode);
            for (int x = 0; x < Wo; ++x) {
                const int sx = pad_src_index(x - left, W, mode);
                out.at(0, c, y, x) =
                    (sy >= 0 && sx >= 0) ? v.at(0, c, sy, sx) : 0.0f;
            }
        }

    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, left, top, C, H, W, Ho, Wo, mode](Node& self) {
            Tensor& ga = a->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y) {
                    const int sy = pad_src_index(y - top, H, mode);
                    if (sy < 0) continue;
                    for (int x = 0; x < Wo; ++x) {
                        const int sx = pad_src_index(x - left, W, mode);
                        if (sx < 0) continue;
                        ga.at(0, c, sy, sx) += self.grad.at(0, c, y, x);
                    }
                }
        };
    }
    return node;
}

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, ho, wo, stride, pad, dil, groups, cin_g, cout_g;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const ConvOpts& o) {
    ConvDims d;
    d.cin = x.c();
    d.h = x.h();
    d.w = x.w();
    d.cout = w.n();
    d.kh = w.h();
    d.kw = w.w();
    d.stride = o.stride;
    d.pad = o.pad;
    d.dil = o.dilation;
    d.groups = o.groups;
    if (d.groups < 1 || d.cin % d.groups != 0 || d.cout % d.groups != 0)
        throw ShapeError("conv groups must divide channel counts");
    d.cin_g = d.cin / d.groups;
    d.cout_g = d.cout / d.groups;
    if (w.c() != d.cin_g)
        throw ShapeError("conv weight channels " + std::to_string(w.c()) +
                         " do not match input channels/groups " +
                         std::to_string(d.cin_g));
    d.ho = (d.h + 2 * d.pad - d.dil * (d.kh - 1) - 1) / d.stride + 1;
    d.wo = (d.w + 2 * d.pad - d.dil * (d.kw - 1) - 1) / d.stride + 1;
    if (d.ho <= 0 || d.wo <= 0)
        throw ShapeError("conv output would be empty for input " + x.shape_str());
    return d;
}

// output index range such that ix = o*stride - pad + k*dil lies in [0, in_extent)
inline void conv_valid_range(int k, const ConvDims& d, int in_extent,
                             int out_extent, int* lo, int* hi) {
    const int off = k * d.dil - d.pad;
    int l = off < 0 ? (-off + d.stride - 1) / d.stride : 0;
    const int num = in_extent - 1 - off;
    int h = num < 0 ? -1 : num / d.stride;  // floor, not truncation toward zero
    *lo = l;
    *hi = std::min(h, out_extent - 1);
}

void conv_forward(Tensor& out, const Tensor& x, const Tensor& w,
                  const Tensor* bias, const ConvDims& d) {
    if (bias) {
        for (int oc = 0; oc < d.cout; ++oc) {
            float bv = bias->data()[oc];
            float* po = out.plane(oc);
            for (int i = 0; i < d.ho * d.wo; ++i) po[i] = bv;
        }
    }
    for (int oc = 0; oc < d.cout; ++oc) {
        const int g = oc / d.cout_g;
        float* outp = out.plane(oc);
        for (int icl = 0; icl < d.cin_g; ++icl) {
            const int ic = g * d.cin_g + icl;
            const float* xp = x.plane(ic);
            for (int ky = 0; ky < d.kh; ++ky)
                for (int kx = 0; kx < d.kw; ++kx) {
                    const float wv = w.at(oc, icl, ky, kx);
                    if (wv == 0.0f) continue;
                    int oxlo, oxhi, oylo, oyhi;
                    conv_valid_range(kx, d, d.w, d.wo, &oxlo, &oxhi);
                    conv_valid_range(ky, d, d.h, d.ho, &oylo, &oyhi);
                    for (int oy = oylo; oy <= oyhi; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky * d.dil;
                        const float* xrow = xp + static_cast<size_t>(iy) * d.w;
                        float* orow = outp + static_cast<size_t>(oy) * d.wo;
                        const int base = kx * d.dil - d.pad;
                        if (d.stride == 1) {
                            for (int ox = oxlo; ox <= oxhi; ++ox)
                                orow[ox] += wv * xrow[ox + base];
                        } else {
                            for (int ox = oxlo; ox <= oxhi; ++ox)
                                orow[ox] += wv * xrow[ox * d.stride + base];
                        }
                    }
                }
        }
    }
}

void conv_backward_input(Tensor& gx, const Tensor& gout, const Tensor& w,
                         const ConvDims& d) {
    for (int oc = 0; oc < d.cout; ++oc) {
        const int g = oc / d.cout_g;
        const float* gop = gout.plane(oc);
        for (int icl = 0; icl < d.cin_g; ++icl) {
            const int ic = g * d.cin_g + icl;
            float* gxp = gx.plane(ic);
            for (int ky = 0; ky < d.kh; ++ky)
                for (int kx = 0; kx < d.kw; ++kx) {
                    const float wv = w.at(oc, icl, ky, kx);
                    if (wv == 0.0f) continue;
                    int oxlo, oxhi, oylo, oyhi;
                    conv_valid_range(kx, d, d.w, d.wo, &oxlo, &oxhi);
                    conv_valid_range(ky, d, d.h, d.ho, &oylo, &oyhi);
                    for (int oy = oylo; oy <= oyhi; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky * d.dil;
                        float* gxrow = gxp + static_cast<size_t>(iy) * d.w;
                        const float* gorow = gop + static_cast<size_t>(oy) * d.wo;
                        const int base = kx * d.dil - d.pad;
                        for (int ox = oxlo; ox <= oxhi; ++ox)
                            gxrow[ox * d.stride + base] += wv * gorow[ox];
                    }
                }
        }
    }
}

void conv_backward_weight(Tensor& gw, const Tensor& gout, const Tensor& x,
                          const ConvDims& d) {
    for (int oc = 0; oc < d.cout; ++oc) {
        const int g = oc / d.cout_g;
        const float* gop = gout.plane(oc);
        for (int icl = 0; icl < d.cin_g; ++icl) {
            const int ic = g * d.cin_g + icl;
            const float* xp = x.plane(ic);
            for (int ky = 0; ky < d.kh; ++ky)
                for (int kx = 0; kx < d.kw; ++kx) {
                    int oxlo, oxhi, oylo, oyhi;
                    conv_valid_range(kx, d, d.w, d.wo, &oxlo, &oxhi);
                    conv_valid_range(ky, d, d.h, d.ho, &oylo, &oyhi);
                    double acc = 0.0;
                    for (int oy = oylo; oy <= oyhi; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky * d.dil;
                        const float* xrow = xp + static_cast<size_t>(iy) * d.w;
                        const float* gorow = gop + static_cast<size_t>(oy) * d.wo;
                        const int base = kx * d.dil - d.pad;
                        for (int ox = oxlo; ox <= oxhi; ++ox)
                            acc += static_cast<double>(gorow[ox]) *
                                   xrow[ox * d.stride + base];
                    }
                    gw.at(oc, icl, ky, kx) += static_cast<float>(acc);
                }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts) {
    const ConvDims d = conv_dims(x->value, w->value, opts);
    if (bias && bias->value.size() != d.cout)
        throw ShapeError("conv bias size mismatch");
    Tensor out(1, d.cout, d.ho, d.wo);
    conv_forward(out, x->value, w->value, bias ? &bias->value : nullptr, d);

    auto node = make_node(std::move(out), {x, w, bias});
    if (node->requires_grad) {
        node->backprop = [x, w, bias, d](Node& self) {
            if (x->requires_grad)
                conv_backward_input(x->ensure_grad(), self.grad, w->value, d);
            if (w->requires_grad)
                conv_backward_weight(w->ensure_grad(), self.grad, x->value, d);
            if (bias && bias->requires_grad) {
                Tensor& gb = bias->ensure_grad();
                for (int oc = 0; oc < d.cout; ++oc) {
                    const float* gp = self.grad.plane(oc);
                    double s = 0.0;
                    for (int i = 0; i < d.ho * d.wo; ++i) s += gp[i];
                    gb.data()[oc] += static_cast<float>(s);
                }
            }
        };
    }
    return node;
}

Var upsample_nearest(const Var& a, int factor) {
    if (factor < 1) throw ShapeError("upsample factor must be >= 1");
    const Tensor& v = a->value;
    const int C = v.c(), H = v.h(), W = v.w();
    Tensor out(1, C, H * factor, W * factor);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H * factor; ++y) {
            const float* src = v.plane(c) + static_cast<size_t>(y / factor) * W;
            float* dst = out.plane(c) + static_cast<size_t>(y) * (W * factor);
            for (int x = 0; x < W * factor; ++x) dst[x] = src[x / factor];
        }

    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, factor, C, H, W](Node& self) {
            Tensor& ga = a->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H * factor; ++y) {
                    const float* g =
                        self.grad.plane(c) + static_cast<size_t>(y) * (W * factor);
                    float* dst = ga.plane(c) + static_cast<size_t>(y / factor) * W;
                    for (int x = 0; x < W * factor; ++x) dst[x / factor] += g[x];
                }
        };
    }
    return node;
}

Var global_avg_pool(const Var& a) {
    const Tensor& v = a->value;
    const int C = v.c(), HW = v.h() * v.w();
    Tensor out(1, C, 1, 1);
    for (int c = 0; c < C; ++c) {
        const float* p = v.plane(c);
        double s = 0.0;
        for (int i = 0; i < HW; ++i) s += p[i];
        out.data()[c] = static_cast<float>(s / HW);
    }

    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, C, HW](Node& self) {
            Tensor& ga = a->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const float g = self.grad.data()[c] / HW;
                float* dst = ga.plane(c);
                for (int i = 0; i < HW; ++i) dst[i] += g;
            }
        };
    }
    return node;
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
    const Tensor& v = x->value;
    const int C = v.c(), HW = v.h() * v.w();
    if (gamma->value.size() != C || beta->value.size() != C)
        throw ShapeError("channel_norm affine size mismatch");
    // normalizing a single spatial element would zero the signal entirely;
    // fall back to the plain affine map there
    if (HW == 1) return add(mul(x, gamma), beta);

    Tensor out = Tensor::zeros_like(v);
    Tensor xhat = Tensor::zeros_like(v);
    std::vector<float> inv_std(C);
    for (int c = 0; c < C; ++c) {
        const float* p = v.plane(c);
        double s = 0.0;
        for (int i = 0; i < HW; ++i) s += p[i];
        const double mu = s / HW;
        double vs = 0.0;
        for (int i = 0; i < HW; ++i) {
            const double dd = p[i] - mu;
            vs += dd * dd;
        }
        const float is = static_cast<float>(1.0 / std::sqrt(vs / HW + eps));
        inv_std[c] = is;
        const float g = gamma->value.data()[c], b = beta->value.data()[c];
        float* xh = xhat.plane(c);
        float* o = out.plane(c);
        const float muf = static_cast<float>(mu);
        for (int i = 0; i < HW; ++i) {
            xh[i] = (p[i] - muf) * is;
            o[i] = g * xh[i] + b;
        }
    }

    auto node = make_node(std::move(out), {x, gamma, beta});
    if (node->requires_grad) {
        node->backprop = [x, gamma, beta, xhat = std::move(xhat),
                          inv_std = std::move(inv_std), C, HW](Node& self) {
            for (int c = 0; c < C; ++c) {
                const float* g = self.grad.plane(c);
                const float* xh = xhat.plane(c);
                double sg = 0.0, sgx = 0.0;
                for (int i = 0; i < HW; ++i) {
                    sg += g[i];
                    sgx += static_cast<double>(g[i]) * xh[i];
                }
                if (gamma->requires_grad)
                    gamma->ensure_grad().data()[c] += static_cast<float>(sgx);
                if (beta->requires_grad)
                    beta->ensure_grad().data()[c] += static_cast<float>(sg);
                if (x->requires_grad) {
                    Tensor& gx = x->ensure_grad();
                    float* dst = gx.plane(c);
                    const float gam = gamma->value.data()[c];
                    const float mg = static_cast<float>(sg / HW);
                    const float mgx = static_cast<float>(sgx / HW);
                    const float scale = gam * inv_std[c];
                    for (int i = 0; i < HW; ++i)
                        dst[i] += scale * (g[i] - mg - xh[i] * mgx);
                }
            }
        };
    }
    return node;
}

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(static_cast<float>(a->value.dsum()));
    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a](Node& self) {
            Tensor& ga = a->ensure_grad();
            const float g = self.grad.data()[0];
            float* p = ga.data();
            for (int64_t i = 0; i < ga.size(); ++i) p[i] += g;
        };
    }
    return node;
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a->value.size());
    Tensor out = Tensor::scalar(static_cast<float>(a->value.dsum() / n));
    auto node = make_node(std::move(out), {a});
    if (node->requires_grad) {
        node->backprop = [a, n](Node& self) {
            Tensor& ga = a->ensure_grad();
            const float g = static_cast<float>(self.grad.data()[0] / n);
            float* p = ga.data();
            for (int64_t i = 0; i < ga.size(); ++i) p[i] += g;
        };
    }
    return node;
}

Var bilinear_sample(const Var& map, const Var& gx, const Var& gy) {
    const Tensor& m = map->value;
    const Tensor& vx = gx->value;
    const Tensor& vy = gy->value;
    if (vx.c() != 1 || vy.c() != 1 || !vx.same_shape(vy))
        throw ShapeError("bilinear_sample coords must be (1,1,H,W) pairs");
    const int C = m.c(), H = m.h(), W = m.w();
    const int Ho = vx.h(), Wo = vx.w();

    Tensor out(1, C, Ho, Wo);
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            const float fx = vx.at(0, 0, y, x);
            const float fy = vy.at(0, 0, y, x);
            const int x0 = static_cast<int>(std::floor(fx));
            const int y0 = static_cast<int>(std::floor(fy));
            const float wx = fx - x0;
            const float wy = fy - y0;
            const int cx0 = clampi(x0, W - 1), cx1 = clampi(x0 + 1, W - 1);
            const int cy0 = clampi(y0, H - 1), cy1 = clampi(y0 + 1, H - 1);
            for (int c = 0; c < C; ++c) {
                const float v00 = m.at(0, c, cy0, cx0);
                const float v01 = m.at(0, c, cy0, cx1);
                const float v10 = m.at(0, c, cy1, cx0);
                const float v11 = m.at(0, c, cy1, cx1);
                out.at(0, c, y, x) = (1.0f - wy) * ((1.0f - wx) * v00 + wx * v01) +
                                     wy * ((1.0f - wx) * v10 + wx * v11);
            }
        }

    auto node = make_node(std::move(out), {map, gx, gy});
    if (node->requires_grad) {
        node->backprop = [map, gx, gy, C, H, W, Ho, Wo](Node& self) {
            auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
            const Tensor& m = map->value;
            Tensor* gm = map->requires_grad ? &map->ensure_grad() : nullptr;
            Tensor* ggx = gx->requires_grad ? &gx->ensure_grad() : nullptr;
            Tensor* ggy = gy->requires_grad ? &gy->ensure_grad() : nullptr;
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const float fx = gx->value.at(0, 0, y, x);
                    const float fy = gy->value.at(0, 0, y, x);
                    const int x0 = static_cast<int>(std::floor(fx));
                    const int y0 = static_cast<int>(std::floor(fy));
                    const float wx = fx - x0;
                    const float wy = fy - y0;
                    const int cx0 = clampi(x0, W - 1), cx1 = clampi(x0 + 1, W - 1);
                    const int cy0 = clampi(y0, H - 1), cy1 = clampi(y0 + 1, H - 1);
                    double dx_acc = 0.0, dy_acc = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const float g = self.grad.at(0, c, y, x);
                        const float v00 = m.at(0, c, cy0, cx0);
                        const float v01 = m.at(0, c, cy0, cx1);
                        const float v10 = m.at(0, c, cy1, cx0);
                        const float v11 = m.at(0, c, cy1, cx1);
                        if (gm) {
                            gm->at(0, c, cy0, cx0) += g * (1.0f - wy) * (1.0f - wx);
                            gm->at(0, c, cy0, cx1) += g * (1.0f - wy) * wx;
                            gm->at(0, c, cy1, cx0) += g * wy * (1.0f - wx);
                            gm->at(0, c, cy1, cx1) += g * wy * wx;
                        }
                        dx_acc += static_cast<double>(g) *
                                  ((1.0f - wy) * (v01 - v00) + wy * (v11 - v10));
                        dy_acc += static_cast<double>(g) *
                                  ((1.0f - wx) * (v10 - v00) + wx * (v11 - v01));
                    }
                    if (ggx) ggx->at(0, 0, y, x) += static_cast<float>(dx_acc);
                    if (ggy) ggy->at(0, 0, y, x) += static_cast<float>(dy_acc);
                }
        };
    }
    return node;
}

Var softmax_cross_entropy(const Var& logits, const Tensor& labels) {
    const Tensor& v = logits->value;
    const int K = v.c(), H = v.h(), W = v.w();
    if (labels.c() != 1 || labels.h() != H || labels.w() != W)
        throw ShapeError("labels shape mismatch for cross entropy");

    Tensor probs = Tensor::zeros_like(v);
    double loss = 0.0;
    int64_t counted = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float mx = v.at(0, 0, y, x);
            for (int k = 1; k < K; ++k) mx = std::max(mx, v.at(0, k, y, x));
            double z = 0.0;
            for (int k = 0; k < K; ++k) {
                const float e = std::exp(v.at(0, k, y, x) - mx);
                probs.at(0, k, y, x) = e;
                z += e;
            }
            for (int k = 0; k < K; ++k)
                probs.at(0, k, y, x) = static_cast<float>(probs.at(0, k, y, x) / z);
            const float lab = labels.at(0, 0, y, x);
            if (lab < 0.0f) continue;
            const int cls = static_cast<int>(lab);
            if (cls >= K) throw ShapeError("label class out of range");
            loss += -std::log(std::max(1e-12f, probs.at(0, cls, y, x)));
            ++counted;
        }
    if (counted == 0) throw Error("cross entropy: no labeled pixels");
    Tensor out = Tensor::scalar(static_cast<float>(loss / counted));

    auto node = make_node(std::move(out), {logits});
    if (node->requires_grad) {
        node->backprop = [logits, probs = std::move(probs), labels, K, H, W,
                          counted](Node& self) {
            Tensor& gl = logits->ensure_grad();
            const float g = self.grad.data()[0] / counted;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float lab = labels.at(0, 0, y, x);
                    if (lab < 0.0f) continue;
                    const int cls = static_cast<int>(lab);
                    for (int k = 0; k < K; ++k) {
                        const float p = probs.at(0, k, y, x);
                        gl.at(0, k, y, x) += g * (p - (k == cls ? 1.0f : 0.0f));
                    }
                }
        };
    }
    return node;
}

}  // namespace crisp::ad
