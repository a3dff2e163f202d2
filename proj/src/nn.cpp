#include "crispdepth/nn.hpp"

#include <cmath>

namespace crisp::nn {

std::vector<std::pair<std::string, Var>> Module::named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& [name, v] : params_) out.emplace_back(name, v);
    for (const auto& [name, child] : children_) {
        for (auto& [pname, v] : child->named_parameters())
            out.emplace_back(name + "." + pname, v);
    }
    return out;
}

int64_t Module::parameter_count(bool trainable_only) const {
    int64_t total = 0;
    for (const auto& [name, v] : named_parameters())
        if (!trainable_only || v->requires_grad) total += v->value.size();
    return total;
}

void Module::set_trainable(bool trainable) {
    for (auto& [name, v] : named_parameters()) {
        v->requires_grad = trainable;
        if (!trainable) v->grad = Tensor();
    }
}

bool Module::all_finite() const {
    for (const auto& [name, v] : named_parameters())
        if (!v->value.all_finite()) return false;
    return true;
}

uint64_t Module::weights_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, v] : named_parameters()) {
        const uint64_t hn = fnv1a(name.data(), name.size());
        const uint64_t hv = fnv1a(v->value.data(), v->value.size() * sizeof(float));
        h ^= hn;
        h *= 1099511628211ull;
        h ^= hv;
        h *= 1099511628211ull;
    }
    return h;
}

void Module::zero_grad() {
    for (auto& [name, v] : named_parameters())
        if (v->has_grad()) v->grad.fill(0.0f);
}

Var Module::add_param(const std::string& name, Tensor init) {
    Var v = ad::leaf(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
}

void Module::add_child(const std::string& name, Module* m) {
    children_.emplace_back(name, m);
}

Tensor trunc_normal_init(int n, int c, int h, int w, float stddev, Rng& rng) {
    Tensor t(n, c, h, w);
    float* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i)
        p[i] = static_cast<float>(rng.truncated_normal(stddev));
    return t;
}

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
               int dilation, int groups, bool bias_enabled) {
    opts.stride = stride;
    opts.pad = pad;
    opts.dilation = dilation;
    opts.groups = groups;
    if (in_ch % groups != 0) throw ConfigError("conv in_ch not divisible by groups");
    weight = add_param("w", trunc_normal_init(out_ch, in_ch / groups, k, k, 0.02f, rng));
    if (bias_enabled) bias = add_param("b", Tensor(1, out_ch, 1, 1));
}

Var Conv2d::forward(const Var& x) const { return ad::conv2d(x, weight, bias, opts); }

ChannelNorm::ChannelNorm(int channels) {
    gamma = add_param("gamma", Tensor::full(1, channels, 1, 1, 1.0f));
    beta = add_param("beta", Tensor(1, channels, 1, 1));
}

Var ChannelNorm::forward(const Var& x) const {
    return ad::channel_norm(x, gamma, beta);
}

Adam::Adam(std::vector<Var> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros_like(p->value));
        v_.push_back(Tensor::zeros_like(p->value));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i];
        if (!p->requires_grad || !p->has_grad()) continue;
        float* w = p->value.data();
        const float* g = p->grad.data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = p->value.size();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
            const float mhat = static_cast<float>(m[j] / bc1);
            const float vhat = static_cast<float>(v[j] / bc2);
            w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_)
        if (p->has_grad()) p->grad.fill(0.0f);
}

}  // namespace crisp::nn
