#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "crispdepth/tensor.hpp"

namespace crisp::ad {

// Eager reverse-mode autodiff. Each op computes its value immediately and
// records a pull-back closure; backward() walks reachable nodes in reverse
// creation order. Single-threaded, fixed-order accumulation throughout.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily by ensure_grad()
    bool requires_grad = false;
    int64_t id = 0;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros_like(value);
        return grad;
    }
    bool has_grad() const { return !grad.empty(); }
};

Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad);

// Seeds d(root)/d(root)=1 and propagates. root must be scalar-shaped.
void backward(const Var& root);

enum class PadMode { kZero, kReflect, kReplicate };

struct ConvOpts {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
    int groups = 1;
};

// Binary ops broadcast a scalar (1,1,1,1) or a single-channel map (1,1,H,W)
// against a full map (1,C,H,W), on either side.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_const(const Var& a, float k);
Var mul_const(const Var& a, float k);
Var neg(const Var& a);

Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var clamp_min(const Var& a, float lo);

Var slice_channels(const Var& a, int c0, int c1);
Var concat_channels(const Var& a, const Var& b);
Var pad2d(const Var& a, int left, int right, int top, int bottom, PadMode mode);
Var conv2d(const Var& x, const Var& w, const Var& bias, const ConvOpts& opts);
Var upsample_nearest(const Var& a, int factor);
Var global_avg_pool(const Var& a);
// Per-channel normalization over the spatial extent, learnable scale/shift.
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);

Var sum(const Var& a);   // -> scalar
Var mean(const Var& a);  // -> scalar

// map (1,C,H,W) sampled at continuous pixel coords gx,gy (1,1,Ho,Wo).
// Out-of-range taps clamp to the border; validity is the caller's concern.
Var bilinear_sample(const Var& map, const Var& gx, const Var& gy);

// Mean softmax cross-entropy over pixels; labels hold class indices, negative
// labels are ignored. Returns scalar.
Var softmax_cross_entropy(const Var& logits, const Tensor& labels);

inline float value0(const Var& v) { return v->value.data()[0]; }

}  // namespace crisp::ad
