#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crispdepth/autodiff.hpp"
#include "crispdepth/common.hpp"

namespace crisp::nn {

using ad::Var;

// Base for anything that owns parameters. Registration order is construction
// order and defines checkpoint layout; submodules are plain members
// registered by the owner.
class Module {
public:
    virtual ~Module() = default;
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    // Dotted-path parameter listing, depth-first in registration order.
    std::vector<std::pair<std::string, Var>> named_parameters() const;
    int64_t parameter_count(bool trainable_only = false) const;
    void set_trainable(bool trainable);
    bool all_finite() const;
    uint64_t weights_hash() const;
    void zero_grad();

protected:
    Var add_param(const std::string& name, Tensor init);
    void add_child(const std::string& name, Module* m);

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, Module*>> children_;
};

// init draws in parameter-element order from the provided RNG
Tensor trunc_normal_init(int n, int c, int h, int w, float stddev, Rng& rng);

class Conv2d : public Module {
public:
    // kernel k x k, optional dilation/groups; truncated-normal(0.02) weights,
    // zero bias
    Conv2d(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
           int dilation = 1, int groups = 1, bool bias = true);
    Var forward(const Var& x) const;

    Var weight;
    Var bias;
    ad::ConvOpts opts;
};

class ChannelNorm : public Module {
public:
    explicit ChannelNorm(int channels);
    Var forward(const Var& x) const;

    Var gamma;
    Var beta;
};

// Adaptive moment estimation. State tensors are part of checkpoints.
class Adam {
public:
    Adam(std::vector<Var> params, float lr, float beta1 = 0.9f,
         float beta2 = 0.999f, float eps = 1e-8f);

    void step();
    void zero_grad();
    float lr() const { return lr_; }
    void set_lr(float lr) { lr_ = lr; }

    int64_t step_count() const { return t_; }
    // checkpoint access: first/second moments in parameter order plus t
    std::vector<Tensor>& moments1() { return m_; }
    std::vector<Tensor>& moments2() { return v_; }
    void set_step_count(int64_t t) { t_ = t; }
    const std::vector<Var>& params() const { return params_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace crisp::nn
