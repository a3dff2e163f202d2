#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "crispdepth/common.hpp"

namespace crisp {

// Dense float32 NCHW tensor. Activations use n=1; conv weights use
// n=out_channels. Scalars are (1,1,1,1).
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w)
        : n_(n), c_(c), h_(h), w_(w), data_(static_cast<size_t>(n) * c * h * w, 0.0f) {
        if (n <= 0 || c <= 0 || h <= 0 || w <= 0)
            throw ShapeError("tensor dims must be positive, got " + shape_str());
    }

    static Tensor scalar(float v) {
        Tensor t(1, 1, 1, 1);
        t.data_[0] = v;
        return t;
    }
    static Tensor full(int n, int c, int h, int w, float v) {
        Tensor t(n, c, h, w);
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n_, o.c_, o.h_, o.w_); }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    int64_t size() const { return static_cast<int64_t>(n_) * c_ * h_ * w_; }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int ni, int ci, int yi, int xi) {
        return data_[((static_cast<size_t>(ni) * c_ + ci) * h_ + yi) * w_ + xi];
    }
    float at(int ni, int ci, int yi, int xi) const {
        return data_[((static_cast<size_t>(ni) * c_ + ci) * h_ + yi) * w_ + xi];
    }
    // channel plane pointer for n=0 activations
    float* plane(int ci) { return data_.data() + static_cast<size_t>(ci) * h_ * w_; }
    const float* plane(int ci) const { return data_.data() + static_cast<size_t>(ci) * h_ * w_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // fixed-order reduction in double
    double dsum() const {
        double s = 0.0;
        for (float v : data_) s += v;
        return s;
    }
    float min_value() const {
        float m = data_[0];
        for (float v : data_) m = std::min(m, v);
        return m;
    }
    float max_value() const {
        float m = data_[0];
        for (float v : data_) m = std::max(m, v);
        return m;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
               std::to_string(h_) + "," + std::to_string(w_) + ")";
    }

    bool operator==(const Tensor& o) const {
        return same_shape(o) && data_ == o.data_;
    }

    const std::vector<float>& raw() const { return data_; }
    std::vector<float>& raw() { return data_; }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

}  // namespace crisp
