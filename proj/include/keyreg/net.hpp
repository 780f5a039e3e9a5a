#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "keyreg/image.hpp"
#include "keyreg/rng.hpp"

namespace keyreg {

// ---------------------------------------------------------------------------
// Tensors

struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    size_t size() const { return data.size(); }
    size_t idx(int i, int j, int y, int x) const {
        return ((static_cast<size_t>(i) * c + j) * h + y) * w + x;
    }
    double& at(int i, int j, int y, int x) { return data[idx(i, j, y, x)]; }
    double at(int i, int j, int y, int x) const { return data[idx(i, j, y, x)]; }
    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

// ---------------------------------------------------------------------------
// Layers. Forward functions return fresh tensors; backward functions assign
// input gradients and accumulate parameter gradients into a caller-zeroed
// grad struct.

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3;  // zero padding ksize/2
    Tensor4 w;              // (out, in, k, k)
    std::vector<double> b;  // out

    Conv2d() = default;
    Conv2d(int in, int out, int k)
        : in_ch(in), out_ch(out), ksize(k), w(out, in, k, k), b(out, 0.0) {}
};

Tensor4 conv2d_forward(const Conv2d& conv, const Tensor4& x);
void conv2d_backward(const Conv2d& conv, const Tensor4& x, const Tensor4& dy,
                     Tensor4* dx, Conv2d* grad);

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // running = m*running + (1-m)*batch

struct BatchNorm2d {
    int ch = 0;
    std::vector<double> gamma, beta, run_mean, run_var;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int ch_)
        : ch(ch_), gamma(ch_, 1.0), beta(ch_, 0.0),
          run_mean(ch_, 0.0), run_var(ch_, 1.0) {}
};

struct BnCache {
    std::vector<double> mean, var;  // biased batch statistics per channel
};

// Normalizes with batch statistics and folds them into the running
// estimates.
Tensor4 bn_forward_train(BatchNorm2d& bn, const Tensor4& x, BnCache& cache);
Tensor4 bn_forward_eval(const BatchNorm2d& bn, const Tensor4& x);
void bn_backward(const BatchNorm2d& bn, const Tensor4& x, const BnCache& cache,
                 const Tensor4& dy, Tensor4* dx, BatchNorm2d* grad);

Tensor4 relu_forward(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& y, const Tensor4& dy);

// 2x2 max-pool, stride 2; requires even h and w. argmax records the flat
// input index of each winner (first in scan order on ties).
Tensor4 maxpool2_forward(const Tensor4& x, std::vector<size_t>& argmax);
Tensor4 maxpool2_backward(const Tensor4& dy, const std::vector<size_t>& argmax,
                          const Tensor4& x_shape);

Tensor4 upsample2_forward(const Tensor4& x);  // nearest neighbor, x2
Tensor4 upsample2_backward(const Tensor4& dy);

Tensor4 sigmoid_forward(const Tensor4& x);
Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& dy);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
void split_channels(const Tensor4& d, int c_a, Tensor4* da, Tensor4* db);

// ---------------------------------------------------------------------------
// Network

struct ConvBlock {  // conv3x3 -> batch-norm -> ReLU
    Conv2d conv;
    BatchNorm2d bn;
};

struct BlockCache {
    Tensor4 conv_out;  // pre-normalization
    BnCache bn;
    Tensor4 out;  // post-ReLU
};

struct UnetPlan {
    std::array<int, 4> enc{8, 16, 32, 64};

    int bottleneck() const { return enc[3] * 2; }
    void validate() const {
        for (int c : enc)
            if (c < 1) throw std::invalid_argument("unet plan: channels must be >= 1");
    }
    bool operator==(const UnetPlan&) const = default;
};

struct EncLevel {
    ConvBlock b0, b1;
};
struct DecLevel {
    Conv2d up;  // plain conv3x3 applied after nearest upsampling
    ConvBlock b0, b1;
};

// Trainable parameter count of the default (8,16,32,64) plan; asserted
// at construction as a drift tripwire.
constexpr size_t kDefaultPlanTrainableCount = 541545;

struct UnetParams {
    UnetPlan plan;
    std::array<EncLevel, 4> enc;  // enc[0] at full resolution
    EncLevel bott;
    std::array<DecLevel, 4> dec;  // applied in order dec[3] .. dec[0]
    Conv2d head;                  // 1x1 to a single channel

    // All-zero parameters with the plan's shapes (gradient carrier).
    static UnetParams build(const UnetPlan& plan);
    // He-uniform conv weights, identity batch-norm.
    static UnetParams init(const UnetPlan& plan, Rng& rng);

    size_t trainable_count() const;
};

// Stable iteration over the named trainable tensors, in checkpoint order.
// fn(name, values, dims).
template <typename Params, typename Fn>
void walk_trainable(Params& p, Fn&& fn) {
    auto u32 = [](int v) { return static_cast<uint32_t>(v); };
    auto conv = [&](const std::string& prefix, auto& c) {
        fn(prefix + ".w", c.w.data,
           std::vector<uint32_t>{u32(c.out_ch), u32(c.in_ch), u32(c.ksize), u32(c.ksize)});
        fn(prefix + ".b", c.b, std::vector<uint32_t>{u32(c.out_ch)});
    };
    auto block = [&](const std::string& prefix, auto& blk) {
        conv(prefix + ".conv", blk.conv);
        fn(prefix + ".bn.gamma", blk.bn.gamma, std::vector<uint32_t>{u32(blk.bn.ch)});
        fn(prefix + ".bn.beta", blk.bn.beta, std::vector<uint32_t>{u32(blk.bn.ch)});
    };
    for (int i = 0; i < 4; ++i) {
        std::string lv = "enc" + std::to_string(i);
        block(lv + ".b0", p.enc[i].b0);
        block(lv + ".b1", p.enc[i].b1);
    }
    block("bott.b0", p.bott.b0);
    block("bott.b1", p.bott.b1);
    for (int i = 3; i >= 0; --i) {
        std::string lv = "dec" + std::to_string(i);
        conv(lv + ".up", p.dec[i].up);
        block(lv + ".b0", p.dec[i].b0);
        block(lv + ".b1", p.dec[i].b1);
    }
    conv("head", p.head);
}

// Batch-norm running statistics, same traversal order.
template <typename Params, typename Fn>
void walk_stats(Params& p, Fn&& fn) {
    auto u32 = [](int v) { return static_cast<uint32_t>(v); };
    auto block = [&](const std::string& prefix, auto& blk) {
        fn(prefix + ".bn.mean", blk.bn.run_mean, std::vector<uint32_t>{u32(blk.bn.ch)});
        fn(prefix + ".bn.var", blk.bn.run_var, std::vector<uint32_t>{u32(blk.bn.ch)});
    };
    for (int i = 0; i < 4; ++i) {
        std::string lv = "enc" + std::to_string(i);
        block(lv + ".b0", p.enc[i].b0);
        block(lv + ".b1", p.enc[i].b1);
    }
    block("bott.b0", p.bott.b0);
    block("bott.b1", p.bott.b1);
    for (int i = 3; i >= 0; --i) {
        std::string lv = "dec" + std::to_string(i);
        block(lv + ".b0", p.dec[i].b0);
        block(lv + ".b1", p.dec[i].b1);
    }
}

struct UnetCache {
    Tensor4 input;
    std::array<BlockCache, 4> enc_b0, enc_b1;
    std::array<Tensor4, 4> pooled;
    std::array<std::vector<size_t>, 4> pool_argmax;
    BlockCache bott_b0, bott_b1;
    std::array<Tensor4, 4> dec_upsampled;  // after nearest x2, before up conv
    std::array<Tensor4, 4> dec_concat;     // [up conv out, skip]
    std::array<BlockCache, 4> dec_b0, dec_b1;
    Tensor4 score;  // sigmoid output
};

// Forward pass on a batch (n, 1, h, w) with h, w divisible by 16.
// Train mode uses batch statistics (mutating running stats) and fills the
// cache for a later backward; eval mode uses running stats.
Tensor4 unet_forward_train(UnetParams& params, const Tensor4& input, UnetCache& cache);
Tensor4 unet_forward_eval(const UnetParams& params, const Tensor4& input);

// Reverse-mode gradients of a scalar loss given dL/dScore.
UnetParams unet_backward(const UnetParams& params, const UnetCache& cache,
                         const Tensor4& dscore);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    UnetParams m, v;  // moment accumulators, parameter-shaped
    uint64_t t = 0;

    static AdamState create(const UnetPlan& plan);
};

void adam_step(UnetParams& params, const UnetParams& grads, AdamState& state,
               const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints: flat binary container, magic "KREG", version u32, then
// (name_len u32, name, rank u32, dims u32[rank], payload f64-LE) records.

struct Checkpoint {
    UnetParams params;
    AdamState adam;
    uint64_t epoch = 0;
};

void save_checkpoint(const std::string& path, const UnetParams& params,
                     const AdamState& adam, uint64_t epoch);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Image plumbing

// Stacks equally-sized images into an (n, 1, h, w) batch.
Tensor4 images_to_tensor(const std::vector<const GrayImage*>& imgs);
GrayImage tensor_to_image(const Tensor4& t, int n);

// Eval-mode score map for an arbitrarily sized image: mirror-pads to the
// next multiple of 16, runs the network, crops back.
GrayImage unet_score_map(const UnetParams& params, const GrayImage& img);

}  // namespace keyreg
