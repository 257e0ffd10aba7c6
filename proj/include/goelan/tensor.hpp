#pragma once

// Dense 4-D tensor (batch, channels, height, width), the unit every
// block and loss consumes. Storage is shared on copy; clone() deep-copies.

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "goelan/common.hpp"

namespace goelan {

template <class T>
class Tensor {
public:
    Tensor() = default;

    Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w) {
        if (n < 0 || c < 0 || h < 0 || w < 0) fail_shape("negative tensor dim");
        store_ = std::make_shared<std::vector<T>>(std::size_t(n) * c * h * w, T(0));
    }

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

    static Tensor full(int n, int c, int h, int w, T v) {
        Tensor t(n, c, h, w);
        std::fill(t.data(), t.data() + t.size(), v);
        return t;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n_, o.c_, o.h_, o.w_); }

    static Tensor scalar(T v) { return full(1, 1, 1, 1, v); }

    bool empty() const { return !store_; }
    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::int64_t size() const { return store_ ? std::int64_t(store_->size()) : 0; }
    std::int64_t plane() const { return std::int64_t(h_) * w_; }

    T* data() { return store_->data(); }
    const T* data() const { return store_->data(); }

    T& at(int in, int ic, int iy, int ix) {
        return (*store_)[((std::size_t(in) * c_ + ic) * h_ + iy) * w_ + ix];
    }
    const T& at(int in, int ic, int iy, int ix) const {
        return (*store_)[((std::size_t(in) * c_ + ic) * h_ + iy) * w_ + ix];
    }

    T item() const {
        if (size() != 1) fail_shape("item() on non-scalar tensor of size ", size());
        return (*store_)[0];
    }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    Tensor clone() const {
        if (empty()) return Tensor();
        Tensor t(n_, c_, h_, w_);
        std::copy(data(), data() + size(), t.data());
        return t;
    }

    void fill(T v) { std::fill(data(), data() + size(), v); }

    void add_(const Tensor& o) {
        if (!same_shape(o)) fail_shape("add_: shape mismatch");
        const T* s = o.data();
        T* d = data();
        for (std::int64_t i = 0, e = size(); i < e; ++i) d[i] += s[i];
    }

    void scale_(T s) {
        T* d = data();
        for (std::int64_t i = 0, e = size(); i < e; ++i) d[i] *= s;
    }

    template <class U>
    Tensor<U> cast() const {
        if (empty()) return Tensor<U>();
        Tensor<U> t(n_, c_, h_, w_);
        const T* s = data();
        U* d = t.data();
        for (std::int64_t i = 0, e = size(); i < e; ++i) d[i] = U(s[i]);
        return t;
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::shared_ptr<std::vector<T>> store_;
};

// Feature map with its downsampling factor relative to the network input.
template <class T>
struct FeatureMap {
    Tensor<T> data;
    int stride = 1;
};

}  // namespace goelan
