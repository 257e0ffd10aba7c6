#pragma once

// Architectural building blocks: ConvBNAct, GoELAN, SPPELAN, ADown,
// CBLinear and CBFuse. Each is a pure function of (weights, input) with a
// declared shape contract, plus parameter/FLOP introspection used by the
// network-level budget checks.

#include <string>
#include <utility>
#include <vector>

#include "goelan/ops.hpp"

namespace goelan {

enum class BlockKind { ConvBNAct, GoELAN, SPPELAN, ADown, CBLinear, CBFuse };

struct BlockSpec {
    BlockKind kind = BlockKind::ConvBNAct;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    std::vector<int> internal_widths;   // GoELAN hidden widths
    std::vector<int> pool_sizes;        // SPPELAN windows
    std::vector<int> out_channel_list;  // CBLinear projection widths

    void validate() const {
        if (out_channels <= 0 && kind != BlockKind::CBLinear && kind != BlockKind::CBFuse)
            fail_config("block spec: out_channels must be positive");
        if (kernel % 2 == 0) fail_config("block spec: kernel must be odd, got ", kernel);
        if (stride != 1 && stride != 2) fail_config("block spec: stride must be 1 or 2");
    }
};

namespace detail {

inline bool power_of_two_stride(int s) {
    return s == 1 || s == 2 || s == 4 || s == 8 || s == 16 || s == 32;
}

template <class T>
void check_feature(const FeatureMap<T>& f, const char* where) {
    if (f.data.h() < 1 || f.data.w() < 1 || f.data.c() < 1)
        fail_shape(where, ": degenerate feature map");
    if (!power_of_two_stride(f.stride))
        fail_shape(where, ": stride ", f.stride, " is not a power of two in [1,32]");
}

}  // namespace detail

// Parameter visitor: blocks register their parameters (trainable tensors and
// batch-norm buffers) in a stable order used by the optimizer and checkpoints.
template <class T>
using ParamList = std::vector<Parameter<T>*>;

// Convolution -> batch norm -> SiLU. The activation can be disabled for
// plain projection layers (detection head output, CBLinear).
template <class T>
class ConvBNAct {
public:
    ConvBNAct() = default;

    // bias is only used when bn is off (raw conv head outputs)
    ConvBNAct(std::string name, int cin, int cout, int kernel, int stride, bool act = true,
              bool bn = true)
        : name_(std::move(name)), cin_(cin), cout_(cout), kernel_(kernel), stride_(stride),
          act_(act), bn_(bn) {
        if (cin <= 0 || cout <= 0) fail_config("conv ", name_, ": bad channels");
        if (kernel % 2 == 0) fail_config("conv ", name_, ": kernel must be odd");
        if (stride != 1 && stride != 2) fail_config("conv ", name_, ": stride must be 1 or 2");
        weight_ = {name_ + ".weight", Tensor<T>(cout, cin, kernel, kernel), {}, true, true};
        if (bn_) {
            bn_gamma_ = {name_ + ".bn.gamma", Tensor<T>::full(1, cout, 1, 1, T(1)), {}, true, false};
            bn_beta_ = {name_ + ".bn.beta", Tensor<T>(1, cout, 1, 1), {}, true, false};
            bn_mean_ = {name_ + ".bn.running_mean", Tensor<T>(1, cout, 1, 1), {}, false, false};
            bn_var_ = {name_ + ".bn.running_var", Tensor<T>::full(1, cout, 1, 1, T(1)), {}, false,
                       false};
        } else {
            bias_ = {name_ + ".bias", Tensor<T>(1, cout, 1, 1), {}, true, false};
        }
    }

    void init(Rng& rng) {
        // He-style fan-in scaling
        const double scale = std::sqrt(2.0 / (double(cin_) * kernel_ * kernel_));
        T* w = weight_.value.data();
        for (std::int64_t i = 0, e = weight_.value.size(); i < e; ++i)
            w[i] = T(rng.normal(0.0, scale));
    }

    Value<T> forward(Tape<T>& tape, Value<T> x, bool training) {
        if (x.val().c() != cin_)
            fail_config("conv ", name_, ": expected ", cin_, " input channels, got ",
                        x.val().c());
        Value<T> w = tape.leaf(weight_);
        Value<T> y;
        if (bn_) {
            y = ops::conv2d(tape, x, w, Value<T>{}, stride_, kernel_ / 2);
            Value<T> g = tape.leaf(bn_gamma_);
            Value<T> b = tape.leaf(bn_beta_);
            y = ops::batchnorm(tape, y, g, b, bn_mean_, bn_var_, training);
        } else {
            Value<T> b = tape.leaf(bias_);
            y = ops::conv2d(tape, x, w, b, stride_, kernel_ / 2);
        }
        return act_ ? ops::silu(tape, y) : y;
    }

    FeatureMap<T> forward(Tape<T>& tape, const FeatureMap<T>& x, bool training) {
        detail::check_feature(x, "conv_bn_act");
        Value<T> y = forward(tape, tape.input(x.data, false), training);
        return {y.val(), x.stride * stride_};
    }

    void params(ParamList<T>& out) {
        out.push_back(&weight_);
        if (bn_) {
            out.push_back(&bn_gamma_);
            out.push_back(&bn_beta_);
            out.push_back(&bn_mean_);
            out.push_back(&bn_var_);
        } else {
            out.push_back(&bias_);
        }
    }

    // MAC = 2 FLOPs; convolution only (BN/activation excluded by convention).
    double flops(int in_h, int in_w) const {
        const double oh = ops::conv_out_dim(in_h, kernel_, stride_, kernel_ / 2);
        const double ow = ops::conv_out_dim(in_w, kernel_, stride_, kernel_ / 2);
        return 2.0 * kernel_ * kernel_ * cin_ * cout_ * oh * ow;
    }

    int out_channels() const { return cout_; }
    int stride() const { return stride_; }
    const std::string& name() const { return name_; }

private:
    std::string name_;
    int cin_ = 0, cout_ = 0, kernel_ = 3, stride_ = 1;
    bool act_ = true, bn_ = true;
    Parameter<T> weight_, bias_;
    Parameter<T> bn_gamma_, bn_beta_, bn_mean_, bn_var_;
};

// CSP + ELAN aggregation: split the input in two, run one half through a
// chain of two-conv sub-blocks, concatenate [bypass, every chain output]
// and fuse with a 1x1 transition.
template <class T>
class GoElanBlock {
public:
    GoElanBlock() = default;

    GoElanBlock(std::string name, int cin, int cout, std::vector<int> widths, int kernel = 3)
        : name_(std::move(name)), cin_(cin), cout_(cout), widths_(std::move(widths)) {
        if (widths_.empty()) fail_config("go_elan ", name_, ": internal_widths empty");
        if (cin_ % 2 != 0) fail_config("go_elan ", name_, ": input channels must be even");
        int prev = cin_ / 2;
        int concat_w = cin_ / 2;
        for (std::size_t i = 0; i < widths_.size(); ++i) {
            const int w = widths_[i];
            if (w <= 0) fail_config("go_elan ", name_, ": non-positive width");
            sub_a_.emplace_back(name_ + ".sub" + std::to_string(i) + ".a", prev, w, kernel, 1);
            sub_b_.emplace_back(name_ + ".sub" + std::to_string(i) + ".b", w, w, kernel, 1);
            prev = w;
            concat_w += w;
        }
        transition_ = ConvBNAct<T>(name_ + ".transition", concat_w, cout_, 1, 1);
    }

    void init(Rng& rng) {
        for (auto& c : sub_a_) c.init(rng);
        for (auto& c : sub_b_) c.init(rng);
        transition_.init(rng);
    }

    Value<T> forward(Tape<T>& tape, Value<T> x, bool training) {
        const int half = cin_ / 2;
        std::vector<Value<T>> parts;
        parts.push_back(ops::slice_c(tape, x, 0, half));
        Value<T> cur = ops::slice_c(tape, x, half, half);
        for (std::size_t i = 0; i < sub_a_.size(); ++i) {
            cur = sub_a_[i].forward(tape, cur, training);
            cur = sub_b_[i].forward(tape, cur, training);
            parts.push_back(cur);
        }
        return transition_.forward(tape, ops::concat_c(tape, parts), training);
    }

    FeatureMap<T> forward(Tape<T>& tape, const FeatureMap<T>& x, bool training) {
        detail::check_feature(x, "go_elan_block");
        Value<T> y = forward(tape, tape.input(x.data, false), training);
        return {y.val(), x.stride};
    }

    void params(ParamList<T>& out) {
        for (std::size_t i = 0; i < sub_a_.size(); ++i) {
            sub_a_[i].params(out);
            sub_b_[i].params(out);
        }
        transition_.params(out);
    }

    double flops(int h, int w) const {
        double f = 0;
        for (std::size_t i = 0; i < sub_a_.size(); ++i)
            f += sub_a_[i].flops(h, w) + sub_b_[i].flops(h, w);
        return f + transition_.flops(h, w);
    }

    int out_channels() const { return cout_; }
    int concat_width() const {
        int cw = cin_ / 2;
        for (int w : widths_) cw += w;
        return cw;
    }

private:
    std::string name_;
    int cin_ = 0, cout_ = 0;
    std::vector<int> widths_;
    std::vector<ConvBNAct<T>> sub_a_, sub_b_;
    ConvBNAct<T> transition_;
};

// Spatial pyramid pooling: parallel stride-1 max poolings concatenated with
// the unpooled path, then fused to out_channels. Removes any fixed-size
// assumption on the backbone input.
template <class T>
class SppElan {
public:
    SppElan() = default;

    SppElan(std::string name, int cin, int cout, std::vector<int> pools)
        : name_(std::move(name)), cin_(cin), cout_(cout), pools_(std::move(pools)) {
        if (pools_.empty()) fail_config("sppelan ", name_, ": pool_sizes empty");
        hidden_ = std::max(1, cout_ / 2);
        reduce_ = ConvBNAct<T>(name_ + ".reduce", cin_, hidden_, 1, 1);
        fuse_ = ConvBNAct<T>(name_ + ".fuse", hidden_ * int(pools_.size() + 1), cout_, 1, 1);
    }

    void init(Rng& rng) {
        reduce_.init(rng);
        fuse_.init(rng);
    }

    Value<T> forward(Tape<T>& tape, Value<T> x, bool training) {
        for (int p : pools_)
            if (p > x.val().h() || p > x.val().w())
                fail_config("sppelan ", name_, ": pool window ", p, " exceeds feature map ",
                            x.val().h(), "x", x.val().w());
        Value<T> r = reduce_.forward(tape, x, training);
        std::vector<Value<T>> parts{r};
        Value<T> cur = r;
        for (int p : pools_) {
            cur = ops::maxpool_same(tape, cur, p);
            parts.push_back(cur);
        }
        return fuse_.forward(tape, ops::concat_c(tape, parts), training);
    }

    FeatureMap<T> forward(Tape<T>& tape, const FeatureMap<T>& x, bool training) {
        detail::check_feature(x, "sppelan");
        Value<T> y = forward(tape, tape.input(x.data, false), training);
        return {y.val(), x.stride};
    }

    void params(ParamList<T>& out) {
        reduce_.params(out);
        fuse_.params(out);
    }

    double flops(int h, int w) const { return reduce_.flops(h, w) + fuse_.flops(h, w); }

    int out_channels() const { return cout_; }

private:
    std::string name_;
    int cin_ = 0, cout_ = 0, hidden_ = 0;
    std::vector<int> pools_;
    ConvBNAct<T> reduce_, fuse_;
};

// Hybrid downsampling: channel split into an average-pool->conv path and a
// stride-2 conv path, concatenated. Halves the spatial dims (ceil).
template <class T>
class ADownBlock {
public:
    ADownBlock() = default;

    ADownBlock(std::string name, int cin, int cout) : name_(std::move(name)), cin_(cin), cout_(cout) {
        if (cin_ % 2 != 0 || cout_ % 2 != 0)
            fail_config("adown ", name_, ": channels must be even");
        avg_conv_ = ConvBNAct<T>(name_ + ".avg_conv", cin_ / 2, cout_ / 2, 3, 1);
        stride_conv_ = ConvBNAct<T>(name_ + ".stride_conv", cin_ / 2, cout_ / 2, 3, 2);
    }

    void init(Rng& rng) {
        avg_conv_.init(rng);
        stride_conv_.init(rng);
    }

    Value<T> forward(Tape<T>& tape, Value<T> x, bool training) {
        if (x.val().h() < 2 || x.val().w() < 2)
            fail_shape("adown ", name_, ": input ", x.val().h(), "x", x.val().w(),
                       " too small to downsample");
        const int half = cin_ / 2;
        Value<T> a = ops::slice_c(tape, x, 0, half);
        Value<T> b = ops::slice_c(tape, x, half, half);
        a = ops::avgpool2(tape, a);
        a = avg_conv_.forward(tape, a, training);
        b = stride_conv_.forward(tape, b, training);
        return ops::concat_c(tape, std::vector<Value<T>>{a, b});
    }

    FeatureMap<T> forward(Tape<T>& tape, const FeatureMap<T>& x, bool training) {
        detail::check_feature(x, "adown");
        Value<T> y = forward(tape, tape.input(x.data, false), training);
        return {y.val(), x.stride * 2};
    }

    void params(ParamList<T>& out) {
        avg_conv_.params(out);
        stride_conv_.params(out);
    }

    double flops(int h, int w) const {
        const int oh = (h + 1) / 2, ow = (w + 1) / 2;
        return avg_conv_.flops(oh, ow) + stride_conv_.flops(h, w);
    }

    int out_channels() const { return cout_; }

private:
    std::string name_;
    int cin_ = 0, cout_ = 0;
    ConvBNAct<T> avg_conv_, stride_conv_;
};

// One 1x1 projection per requested width; order preserved.
template <class T>
class CBLinearBlock {
public:
    CBLinearBlock() = default;

    CBLinearBlock(std::string name, int cin, std::vector<int> out_widths)
        : name_(std::move(name)), cin_(cin), widths_(std::move(out_widths)) {
        if (widths_.empty()) fail_config("cb_linear ", name_, ": empty width list");
        for (std::size_t i = 0; i < widths_.size(); ++i) {
            if (widths_[i] <= 0)
                fail_config("cb_linear ", name_, ": non-positive width ", widths_[i]);
            projs_.emplace_back(name_ + ".proj" + std::to_string(i), cin_, widths_[i], 1, 1,
                                /*act=*/false, /*bn=*/false);
        }
    }

    void init(Rng& rng) {
        for (auto& p : projs_) p.init(rng);
    }

    std::vector<Value<T>> forward(Tape<T>& tape, Value<T> x, bool training) {
        std::vector<Value<T>> out;
        out.reserve(projs_.size());
        for (auto& p : projs_) out.push_back(p.forward(tape, x, training));
        return out;
    }

    std::vector<FeatureMap<T>> forward(Tape<T>& tape, const FeatureMap<T>& x, bool training) {
        detail::check_feature(x, "cb_linear");
        std::vector<FeatureMap<T>> out;
        Value<T> xin = tape.input(x.data, false);
        for (auto& p : projs_) out.push_back({p.forward(tape, xin, training).val(), x.stride});
        return out;
    }

    void params(ParamList<T>& out) {
        for (auto& p : projs_) p.params(out);
    }

    double flops(int h, int w) const {
        double f = 0;
        for (const auto& p : projs_) f += p.flops(h, w);
        return f;
    }

    const std::vector<int>& widths() const { return widths_; }

private:
    std::string name_;
    int cin_ = 0;
    std::vector<int> widths_;
    std::vector<ConvBNAct<T>> projs_;
};

// Resample every feature to the target's spatial dims (nearest neighbor)
// and sum them all with the target. Parameter-free.
template <class T>
Value<T> cb_fuse(Tape<T>& tape, const std::vector<Value<T>>& features, Value<T> target) {
    Value<T> acc = target;
    for (const auto& f : features) {
        if (f.val().c() != target.val().c())
            fail_config("cb_fuse: feature has ", f.val().c(), " channels, target has ",
                        target.val().c());
        Value<T> r = f;
        if (f.val().h() != target.val().h() || f.val().w() != target.val().w())
            r = ops::resize_nearest(tape, f, target.val().h(), target.val().w());
        acc = ops::add(tape, acc, r);
    }
    return acc;
}

template <class T>
FeatureMap<T> cb_fuse(Tape<T>& tape, const std::vector<FeatureMap<T>>& features,
                      const FeatureMap<T>& target) {
    detail::check_feature(target, "cb_fuse");
    std::vector<Value<T>> vals;
    vals.reserve(features.size());
    for (const auto& f : features) vals.push_back(tape.input(f.data, false));
    Value<T> y = cb_fuse(tape, vals, tape.input(target.data, false));
    return {y.val(), target.stride};
}

}  // namespace goelan
