#include "keyreg/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>

#include "keyreg/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace keyreg {

// ---------------------------------------------------------------------------
// Convolution

Tensor4 conv2d_forward(const Conv2d& conv, const Tensor4& x) {
    if (x.c != conv.in_ch)
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.c) +
                                    " channels, expected " + std::to_string(conv.in_ch));
    const int pad = conv.ksize / 2;
    const int H = x.h, W = x.w, K = conv.ksize;
    Tensor4 out(x.n, conv.out_ch, H, W);

    parallel_for(x.n * conv.out_ch, [&](int task) {
        const int ni = task / conv.out_ch;
        const int o = task % conv.out_ch;
        double* oslice = &out.data[out.idx(ni, o, 0, 0)];
        std::fill(oslice, oslice + static_cast<size_t>(H) * W, conv.b[o]);
        for (int i = 0; i < conv.in_ch; ++i) {
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    const double wv = conv.w.at(o, i, ky, kx);
                    if (wv == 0.0) continue;
                    const int x0 = std::max(0, pad - kx);
                    const int x1 = std::min(W, W + pad - kx);
                    for (int y = 0; y < H; ++y) {
                        const int yy = y + ky - pad;
                        if (yy < 0 || yy >= H) continue;
                        const double* irow = &x.data[x.idx(ni, i, yy, 0)];
                        double* orow = oslice + static_cast<size_t>(y) * W;
                        for (int xx = x0; xx < x1; ++xx)
                            orow[xx] += wv * irow[xx + kx - pad];
                    }
                }
            }
        }
    });
    return out;
}

void conv2d_backward(const Conv2d& conv, const Tensor4& x, const Tensor4& dy,
                     Tensor4* dx, Conv2d* grad) {
    if (x.c != conv.in_ch || dy.c != conv.out_ch || dy.n != x.n ||
        dy.h != x.h || dy.w != x.w)
        throw std::invalid_argument("conv2d backward: shape mismatch");
    const int pad = conv.ksize / 2;
    const int H = x.h, W = x.w, K = conv.ksize;

    if (grad) {
        // Each task owns one output channel of dw/db.
        parallel_for(conv.out_ch, [&](int o) {
            double bsum = 0.0;
            for (int ni = 0; ni < x.n; ++ni) {
                const double* dyslice = &dy.data[dy.idx(ni, o, 0, 0)];
                for (size_t k = 0; k < static_cast<size_t>(H) * W; ++k) bsum += dyslice[k];
            }
            grad->b[o] += bsum;
            for (int i = 0; i < conv.in_ch; ++i) {
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const int x0 = std::max(0, pad - kx);
                        const int x1 = std::min(W, W + pad - kx);
                        double acc = 0.0;
                        for (int ni = 0; ni < x.n; ++ni) {
                            for (int y = 0; y < H; ++y) {
                                const int yy = y + ky - pad;
                                if (yy < 0 || yy >= H) continue;
                                const double* dyrow = &dy.data[dy.idx(ni, o, y, 0)];
                                const double* xrow = &x.data[x.idx(ni, i, yy, 0)];
                                for (int xx = x0; xx < x1; ++xx)
                                    acc += dyrow[xx] * xrow[xx + kx - pad];
                            }
                        }
                        grad->w.at(o, i, ky, kx) += acc;
                    }
                }
            }
        });
    }

    if (dx) {
        *dx = Tensor4(x.n, x.c, H, W);
        parallel_for(x.n * conv.in_ch, [&](int task) {
            const int ni = task / conv.in_ch;
            const int i = task % conv.in_ch;
            for (int o = 0; o < conv.out_ch; ++o) {
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const double wv = conv.w.at(o, i, ky, kx);
                        if (wv == 0.0) continue;
                        const int x0 = std::max(0, pad - kx);
                        const int x1 = std::min(W, W + pad - kx);
                        for (int y = 0; y < H; ++y) {
                            const int yy = y + ky - pad;
                            if (yy < 0 || yy >= H) continue;
                            const double* dyrow = &dy.data[dy.idx(ni, o, y, 0)];
                            double* dxrow = &dx->data[dx->idx(ni, i, yy, 0)];
                            for (int xx = x0; xx < x1; ++xx)
                                dxrow[xx + kx - pad] += wv * dyrow[xx];
                        }
                    }
                }
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

static void bn_batch_stats(const Tensor4& x, std::vector<double>& mean,
                           std::vector<double>& var) {
    mean.assign(x.c, 0.0);
    var.assign(x.c, 0.0);
    const double m = static_cast<double>(x.n) * x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
        double s = 0.0;
        for (int ni = 0; ni < x.n; ++ni) {
            const double* p = &x.data[x.idx(ni, c, 0, 0)];
            for (size_t k = 0; k < static_cast<size_t>(x.h) * x.w; ++k) s += p[k];
        }
        mean[c] = s / m;
        double sq = 0.0;
        for (int ni = 0; ni < x.n; ++ni) {
            const double* p = &x.data[x.idx(ni, c, 0, 0)];
            for (size_t k = 0; k < static_cast<size_t>(x.h) * x.w; ++k) {
                const double d = p[k] - mean[c];
                sq += d * d;
            }
        }
        var[c] = sq / m;  // biased, used for normalization and running update
    }
}

static Tensor4 bn_apply(const Tensor4& x, const std::vector<double>& mean,
                        const std::vector<double>& var, const std::vector<double>& gamma,
                        const std::vector<double>& beta) {
    Tensor4 out(x.n, x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c) {
        const double inv = 1.0 / std::sqrt(var[c] + kBnEps);
        const double g = gamma[c] * inv;
        const double b = beta[c] - gamma[c] * inv * mean[c];
        for (int ni = 0; ni < x.n; ++ni) {
            const double* p = &x.data[x.idx(ni, c, 0, 0)];
            double* q = &out.data[out.idx(ni, c, 0, 0)];
            for (size_t k = 0; k < static_cast<size_t>(x.h) * x.w; ++k)
                q[k] = g * p[k] + b;
        }
    }
    return out;
}

Tensor4 bn_forward_train(BatchNorm2d& bn, const Tensor4& x, BnCache& cache) {
    if (x.c != bn.ch) throw std::invalid_argument("batch-norm: channel mismatch");
    bn_batch_stats(x, cache.mean, cache.var);
    for (int c = 0; c < bn.ch; ++c) {
        bn.run_mean[c] = kBnMomentum * bn.run_mean[c] + (1.0 - kBnMomentum) * cache.mean[c];
        bn.run_var[c] = kBnMomentum * bn.run_var[c] + (1.0 - kBnMomentum) * cache.var[c];
    }
    return bn_apply(x, cache.mean, cache.var, bn.gamma, bn.beta);
}

Tensor4 bn_forward_eval(const BatchNorm2d& bn, const Tensor4& x) {
    if (x.c != bn.ch) throw std::invalid_argument("batch-norm: channel mismatch");
    return bn_apply(x, bn.run_mean, bn.run_var, bn.gamma, bn.beta);
}

void bn_backward(const BatchNorm2d& bn, const Tensor4& x, const BnCache& cache,
                 const Tensor4& dy, Tensor4* dx, BatchNorm2d* grad) {
    if (!x.same_shape(dy)) throw std::invalid_argument("batch-norm backward: shape mismatch");
    const double m = static_cast<double>(x.n) * x.h * x.w;
    if (dx) *dx = Tensor4(x.n, x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c) {
        const double inv = 1.0 / std::sqrt(cache.var[c] + kBnEps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int ni = 0; ni < x.n; ++ni) {
            const double* xp = &x.data[x.idx(ni, c, 0, 0)];
            const double* dp = &dy.data[dy.idx(ni, c, 0, 0)];
            for (size_t k = 0; k < static_cast<size_t>(x.h) * x.w; ++k) {
                sum_dy += dp[k];
                sum_dy_xhat += dp[k] * (xp[k] - cache.mean[c]) * inv;
            }
        }
        if (grad) {
            grad->beta[c] += sum_dy;
            grad->gamma[c] += sum_dy_xhat;
        }
        if (dx) {
            const double g = bn.gamma[c] * inv;
            const double mean_dy = sum_dy / m;
            const double mean_dy_xhat = sum_dy_xhat / m;
            for (int ni = 0; ni < x.n; ++ni) {
                const double* xp = &x.data[x.idx(ni, c, 0, 0)];
                const double* dp = &dy.data[dy.idx(ni, c, 0, 0)];
                double* op = &dx->data[dx->idx(ni, c, 0, 0)];
                for (size_t k = 0; k < static_cast<size_t>(x.h) * x.w; ++k) {
                    const double xhat = (xp[k] - cache.mean[c]) * inv;
                    op[k] = g * (dp[k] - mean_dy - xhat * mean_dy_xhat);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise layers and pooling

Tensor4 relu_forward(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor4 relu_backward(const Tensor4& y, const Tensor4& dy) {
    if (!y.same_shape(dy)) throw std::invalid_argument("relu backward: shape mismatch");
    Tensor4 dx = dy;
    for (size_t k = 0; k < dx.data.size(); ++k)
        if (y.data[k] <= 0.0) dx.data[k] = 0.0;
    return dx;
}

Tensor4 maxpool2_forward(const Tensor4& x, std::vector<size_t>& argmax) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw std::invalid_argument("maxpool2: odd input dimensions");
    Tensor4 out(x.n, x.c, x.h / 2, x.w / 2);
    argmax.assign(out.size(), 0);
    size_t oi = 0;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int c = 0; c < x.c; ++c) {
            for (int y = 0; y < out.h; ++y) {
                for (int xx = 0; xx < out.w; ++xx, ++oi) {
                    size_t best = x.idx(ni, c, 2 * y, 2 * xx);
                    double bv = x.data[best];
                    // scan order breaks ties toward the earliest cell
                    const size_t cand[3] = {x.idx(ni, c, 2 * y, 2 * xx + 1),
                                            x.idx(ni, c, 2 * y + 1, 2 * xx),
                                            x.idx(ni, c, 2 * y + 1, 2 * xx + 1)};
                    for (size_t idx : cand) {
                        if (x.data[idx] > bv) {
                            bv = x.data[idx];
                            best = idx;
                        }
                    }
                    out.data[oi] = bv;
                    argmax[oi] = best;
                }
            }
        }
    }
    return out;
}

Tensor4 maxpool2_backward(const Tensor4& dy, const std::vector<size_t>& argmax,
                          const Tensor4& x_shape) {
    if (argmax.size() != dy.size())
        throw std::invalid_argument("maxpool2 backward: argmax size mismatch");
    Tensor4 dx(x_shape.n, x_shape.c, x_shape.h, x_shape.w);
    for (size_t k = 0; k < dy.data.size(); ++k) dx.data[argmax[k]] += dy.data[k];
    return dx;
}

Tensor4 upsample2_forward(const Tensor4& x) {
    Tensor4 out(x.n, x.c, x.h * 2, x.w * 2);
    for (int ni = 0; ni < x.n; ++ni)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < out.h; ++y) {
                const double* irow = &x.data[x.idx(ni, c, y / 2, 0)];
                double* orow = &out.data[out.idx(ni, c, y, 0)];
                for (int xx = 0; xx < out.w; ++xx) orow[xx] = irow[xx / 2];
            }
    return out;
}

Tensor4 upsample2_backward(const Tensor4& dy) {
    if (dy.h % 2 != 0 || dy.w % 2 != 0)
        throw std::invalid_argument("upsample2 backward: odd dimensions");
    Tensor4 dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for (int ni = 0; ni < dy.n; ++ni)
        for (int c = 0; c < dy.c; ++c)
            for (int y = 0; y < dy.h; ++y) {
                const double* drow = &dy.data[dy.idx(ni, c, y, 0)];
                double* orow = &dx.data[dx.idx(ni, c, y / 2, 0)];
                for (int xx = 0; xx < dy.w; ++xx) orow[xx / 2] += drow[xx];
            }
    return dx;
}

Tensor4 sigmoid_forward(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return out;
}

Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& dy) {
    if (!y.same_shape(dy)) throw std::invalid_argument("sigmoid backward: shape mismatch");
    Tensor4 dx = dy;
    for (size_t k = 0; k < dx.data.size(); ++k)
        dx.data[k] *= y.data[k] * (1.0 - y.data[k]);
    return dx;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat: spatial/batch mismatch");
    Tensor4 out(a.n, a.c + b.c, a.h, a.w);
    const size_t plane = static_cast<size_t>(a.h) * a.w;
    for (int ni = 0; ni < a.n; ++ni) {
        std::memcpy(&out.data[out.idx(ni, 0, 0, 0)], &a.data[a.idx(ni, 0, 0, 0)],
                    plane * a.c * sizeof(double));
        std::memcpy(&out.data[out.idx(ni, a.c, 0, 0)], &b.data[b.idx(ni, 0, 0, 0)],
                    plane * b.c * sizeof(double));
    }
    return out;
}

void split_channels(const Tensor4& d, int c_a, Tensor4* da, Tensor4* db) {
    if (c_a < 0 || c_a > d.c) throw std::invalid_argument("split: bad channel split");
    const int c_b = d.c - c_a;
    *da = Tensor4(d.n, c_a, d.h, d.w);
    *db = Tensor4(d.n, c_b, d.h, d.w);
    const size_t plane = static_cast<size_t>(d.h) * d.w;
    for (int ni = 0; ni < d.n; ++ni) {
        std::memcpy(&da->data[da->idx(ni, 0, 0, 0)], &d.data[d.idx(ni, 0, 0, 0)],
                    plane * c_a * sizeof(double));
        std::memcpy(&db->data[db->idx(ni, 0, 0, 0)], &d.data[d.idx(ni, c_a, 0, 0)],
                    plane * c_b * sizeof(double));
    }
}

// ---------------------------------------------------------------------------
// Network assembly

static UnetParams make_params(const UnetPlan& plan) {
    plan.validate();
    UnetParams p;
    p.plan = plan;
    auto block = [](int in, int out) {
        return ConvBlock{Conv2d(in, out, 3), BatchNorm2d(out)};
    };
    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
        p.enc[i].b0 = block(in_ch, plan.enc[i]);
        p.enc[i].b1 = block(plan.enc[i], plan.enc[i]);
        in_ch = plan.enc[i];
    }
    const int bott = plan.bottleneck();
    p.bott.b0 = block(plan.enc[3], bott);
    p.bott.b1 = block(bott, bott);
    int below = bott;
    for (int i = 3; i >= 0; --i) {
        const int c = plan.enc[i];
        p.dec[i].up = Conv2d(below, c, 3);
        p.dec[i].b0 = block(2 * c, c);  // up conv output concatenated with the skip
        p.dec[i].b1 = block(c, c);
        below = c;
    }
    p.head = Conv2d(plan.enc[0], 1, 1);
    return p;
}

UnetParams UnetParams::build(const UnetPlan& plan) {
    UnetParams p = make_params(plan);
    // BatchNorm2d construction sets gamma to 1; a gradient/moment carrier
    // must start at zero everywhere.
    walk_trainable(p, [](const std::string&, std::vector<double>& v,
                         const std::vector<uint32_t>&) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    return p;
}

UnetParams UnetParams::init(const UnetPlan& plan, Rng& rng) {
    UnetParams p = make_params(plan);
    walk_trainable(p, [&](const std::string&, std::vector<double>& v,
                          const std::vector<uint32_t>& dims) {
        if (dims.size() != 4) return;  // only conv kernels draw
        const double fan_in = static_cast<double>(dims[1]) * dims[2] * dims[3];
        const double bound = std::sqrt(6.0 / fan_in);
        for (double& w : v) w = rng.uniform(-bound, bound);
    });
    if (plan == UnetPlan{} && p.trainable_count() != kDefaultPlanTrainableCount)
        throw std::logic_error("unet: default-plan parameter count drifted");
    return p;
}

size_t UnetParams::trainable_count() const {
    size_t total = 0;
    walk_trainable(*this, [&](const std::string&, const std::vector<double>& v,
                              const std::vector<uint32_t>&) { total += v.size(); });
    return total;
}

static void block_forward_train(ConvBlock& blk, const Tensor4& x, BlockCache& cache) {
    cache.conv_out = conv2d_forward(blk.conv, x);
    Tensor4 bn_out = bn_forward_train(blk.bn, cache.conv_out, cache.bn);
    cache.out = relu_forward(bn_out);
}

static Tensor4 block_forward_eval(const ConvBlock& blk, const Tensor4& x) {
    return relu_forward(bn_forward_eval(blk.bn, conv2d_forward(blk.conv, x)));
}

static void block_backward(const ConvBlock& blk, const Tensor4& x, const BlockCache& cache,
                           const Tensor4& dy, Tensor4* dx, ConvBlock* grad) {
    Tensor4 dbn = relu_backward(cache.out, dy);
    Tensor4 dconv;
    bn_backward(blk.bn, cache.conv_out, cache.bn, dbn, &dconv, &grad->bn);
    conv2d_backward(blk.conv, x, dconv, dx, &grad->conv);
}

static void check_input(const Tensor4& input) {
    if (input.c != 1) throw std::invalid_argument("unet: expected single-channel input");
    if (input.h % 16 != 0 || input.w % 16 != 0)
        throw std::invalid_argument("unet: input dims must be divisible by 16, got " +
                                    std::to_string(input.w) + "x" + std::to_string(input.h));
}

Tensor4 unet_forward_train(UnetParams& params, const Tensor4& input, UnetCache& cache) {
    check_input(input);
    cache.input = input;
    const Tensor4* cur = &cache.input;
    for (int i = 0; i < 4; ++i) {
        block_forward_train(params.enc[i].b0, *cur, cache.enc_b0[i]);
        block_forward_train(params.enc[i].b1, cache.enc_b0[i].out, cache.enc_b1[i]);
        cache.pooled[i] = maxpool2_forward(cache.enc_b1[i].out, cache.pool_argmax[i]);
        cur = &cache.pooled[i];
    }
    block_forward_train(params.bott.b0, *cur, cache.bott_b0);
    block_forward_train(params.bott.b1, cache.bott_b0.out, cache.bott_b1);
    cur = &cache.bott_b1.out;
    for (int i = 3; i >= 0; --i) {
        cache.dec_upsampled[i] = upsample2_forward(*cur);
        Tensor4 upc = conv2d_forward(params.dec[i].up, cache.dec_upsampled[i]);
        cache.dec_concat[i] = concat_channels(upc, cache.enc_b1[i].out);
        block_forward_train(params.dec[i].b0, cache.dec_concat[i], cache.dec_b0[i]);
        block_forward_train(params.dec[i].b1, cache.dec_b0[i].out, cache.dec_b1[i]);
        cur = &cache.dec_b1[i].out;
    }
    Tensor4 head_out = conv2d_forward(params.head, *cur);
    cache.score = sigmoid_forward(head_out);
    return cache.score;
}

Tensor4 unet_forward_eval(const UnetParams& params, const Tensor4& input) {
    check_input(input);
    Tensor4 cur = input;
    std::array<Tensor4, 4> skips;
    for (int i = 0; i < 4; ++i) {
        Tensor4 a = block_forward_eval(params.enc[i].b0, cur);
        skips[i] = block_forward_eval(params.enc[i].b1, a);
        std::vector<size_t> argmax;
        cur = maxpool2_forward(skips[i], argmax);
    }
    cur = block_forward_eval(params.bott.b0, cur);
    cur = block_forward_eval(params.bott.b1, cur);
    for (int i = 3; i >= 0; --i) {
        Tensor4 up = upsample2_forward(cur);
        Tensor4 upc = conv2d_forward(params.dec[i].up, up);
        Tensor4 cat = concat_channels(upc, skips[i]);
        Tensor4 a = block_forward_eval(params.dec[i].b0, cat);
        cur = block_forward_eval(params.dec[i].b1, a);
    }
    return sigmoid_forward(conv2d_forward(params.head, cur));
}

UnetParams unet_backward(const UnetParams& params, const UnetCache& cache,
                         const Tensor4& dscore) {
    if (!dscore.same_shape(cache.score))
        throw std::invalid_argument("unet backward: dscore shape mismatch");
    UnetParams grads = UnetParams::build(params.plan);

    Tensor4 dhead = sigmoid_backward(cache.score, dscore);
    Tensor4 dcur;
    conv2d_backward(params.head, cache.dec_b1[0].out, dhead, &dcur, &grads.head);

    // Decoder in reverse application order (0 up to 3), collecting the
    // gradient each level sends back through its skip connection.
    std::array<Tensor4, 4> dskip;
    for (int i = 0; i < 4; ++i) {
        Tensor4 db0;
        block_backward(params.dec[i].b1, cache.dec_b0[i].out, cache.dec_b1[i], dcur,
                       &db0, &grads.dec[i].b1);
        Tensor4 dcat;
        block_backward(params.dec[i].b0, cache.dec_concat[i], cache.dec_b0[i], db0,
                       &dcat, &grads.dec[i].b0);
        Tensor4 dupc;
        split_channels(dcat, params.plan.enc[i], &dupc, &dskip[i]);
        Tensor4 dups;
        conv2d_backward(params.dec[i].up, cache.dec_upsampled[i], dupc, &dups,
                        &grads.dec[i].up);
        dcur = upsample2_backward(dups);  // grad of the stage below
    }

    Tensor4 db0;
    block_backward(params.bott.b1, cache.bott_b0.out, cache.bott_b1, dcur, &db0,
                   &grads.bott.b1);
    Tensor4 dpooled;
    block_backward(params.bott.b0, cache.pooled[3], cache.bott_b0, db0, &dpooled,
                   &grads.bott.b0);

    for (int i = 3; i >= 0; --i) {
        Tensor4 dout = maxpool2_backward(dpooled, cache.pool_argmax[i], cache.enc_b1[i].out);
        for (size_t k = 0; k < dout.data.size(); ++k) dout.data[k] += dskip[i].data[k];
        Tensor4 dmid;
        block_backward(params.enc[i].b1, cache.enc_b0[i].out, cache.enc_b1[i], dout,
                       &dmid, &grads.enc[i].b1);
        const Tensor4& below = i == 0 ? cache.input : cache.pooled[i - 1];
        block_backward(params.enc[i].b0, below, cache.enc_b0[i], dmid, &dpooled,
                       &grads.enc[i].b0);
    }
    return grads;  // dpooled now holds dL/dinput, which nothing consumes
}

// ---------------------------------------------------------------------------
// Adam

static std::vector<std::vector<double>*> tensor_ptrs(UnetParams& p) {
    std::vector<std::vector<double>*> out;
    walk_trainable(p, [&](const std::string&, std::vector<double>& v,
                          const std::vector<uint32_t>&) { out.push_back(&v); });
    return out;
}

static std::vector<const std::vector<double>*> tensor_ptrs(const UnetParams& p) {
    std::vector<const std::vector<double>*> out;
    walk_trainable(p, [&](const std::string&, const std::vector<double>& v,
                          const std::vector<uint32_t>&) { out.push_back(&v); });
    return out;
}

AdamState AdamState::create(const UnetPlan& plan) {
    AdamState st;
    st.m = UnetParams::build(plan);
    st.v = UnetParams::build(plan);
    st.t = 0;
    return st;
}

void adam_step(UnetParams& params, const UnetParams& grads, AdamState& state,
               const AdamConfig& cfg) {
    if (!(params.plan == grads.plan) || !(params.plan == state.m.plan))
        throw std::invalid_argument("adam: plan mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    auto ps = tensor_ptrs(params);
    auto gs = tensor_ptrs(static_cast<const UnetParams&>(grads));
    auto ms = tensor_ptrs(state.m);
    auto vs = tensor_ptrs(state.v);
    for (size_t k = 0; k < ps.size(); ++k) {
        std::vector<double>& p = *ps[k];
        const std::vector<double>& g = *gs[k];
        std::vector<double>& m = *ms[k];
        std::vector<double>& v = *vs[k];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            p[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

static constexpr char kMagic[4] = {'K', 'R', 'E', 'G'};
static constexpr uint32_t kVersion = 1;

static void put_u32(std::string& buf, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

static void put_entry(std::string& buf, const std::string& name,
                      const std::vector<uint32_t>& dims, const std::vector<double>& data) {
    size_t prod = 1;
    for (uint32_t d : dims) prod *= d;
    if (prod != data.size()) throw std::logic_error("checkpoint: dims/data mismatch for " + name);
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<uint32_t>(dims.size()));
    for (uint32_t d : dims) put_u32(buf, d);
    buf.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

void save_checkpoint(const std::string& path, const UnetParams& params,
                     const AdamState& adam, uint64_t epoch) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    walk_trainable(params, [&](const std::string& name, const std::vector<double>& v,
                               const std::vector<uint32_t>& dims) { put_entry(buf, name, dims, v); });
    walk_stats(params, [&](const std::string& name, const std::vector<double>& v,
                           const std::vector<uint32_t>& dims) { put_entry(buf, name, dims, v); });
    walk_trainable(adam.m, [&](const std::string& name, const std::vector<double>& v,
                               const std::vector<uint32_t>& dims) { put_entry(buf, "adam.m." + name, dims, v); });
    walk_trainable(adam.v, [&](const std::string& name, const std::vector<double>& v,
                               const std::vector<uint32_t>& dims) { put_entry(buf, "adam.v." + name, dims, v); });
    put_entry(buf, "adam.t", {1}, {static_cast<double>(adam.t)});
    put_entry(buf, "meta.epoch", {1}, {static_cast<double>(epoch)});
    std::vector<double> plan(4);
    for (int i = 0; i < 4; ++i) plan[i] = params.plan.enc[i];
    put_entry(buf, "meta.plan", {4}, plan);
    write_file_atomic(path, buf);
}

namespace {

struct RawEntry {
    std::vector<uint32_t> dims;
    std::vector<double> data;
};

std::map<std::string, RawEntry> parse_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    size_t off = 0;
    auto need = [&](size_t n, const char* what) {
        if (buf.size() - off < n)
            throw std::runtime_error("checkpoint " + path + ": truncated " + what +
                                     " at byte " + std::to_string(off));
    };
    auto get_u32 = [&](const char* what) {
        need(4, what);
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint " + path + ": bad magic");
    off = 4;
    const uint32_t version = get_u32("version");
    if (version != kVersion)
        throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                                 std::to_string(version));
    std::map<std::string, RawEntry> entries;
    while (off < buf.size()) {
        const uint32_t name_len = get_u32("name length");
        need(name_len, "name");
        std::string name(buf.data() + off, name_len);
        off += name_len;
        const uint32_t rank = get_u32("rank");
        if (rank > 8) throw std::runtime_error("checkpoint " + path + ": absurd rank in " + name);
        RawEntry e;
        size_t count = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            e.dims.push_back(get_u32("dims"));
            count *= e.dims.back();
        }
        need(count * sizeof(double), "payload");
        e.data.resize(count);
        std::memcpy(e.data.data(), buf.data() + off, count * sizeof(double));
        off += count * sizeof(double);
        if (!entries.emplace(name, std::move(e)).second)
            throw std::runtime_error("checkpoint " + path + ": duplicate tensor " + name);
    }
    return entries;
}

void take(std::map<std::string, RawEntry>& entries, const std::string& name,
          std::vector<double>& dst, const std::vector<uint32_t>& dims,
          const std::string& path) {
    auto it = entries.find(name);
    if (it == entries.end())
        throw std::runtime_error("checkpoint " + path + ": missing tensor " + name);
    if (it->second.dims != dims)
        throw std::runtime_error("checkpoint " + path + ": shape mismatch for " + name);
    dst = std::move(it->second.data);
    entries.erase(it);
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
    auto entries = parse_checkpoint(path);

    auto plan_it = entries.find("meta.plan");
    if (plan_it == entries.end())
        throw std::runtime_error("checkpoint " + path + ": missing tensor meta.plan");
    if (plan_it->second.data.size() != 4)
        throw std::runtime_error("checkpoint " + path + ": meta.plan must have 4 entries");
    UnetPlan plan;
    for (int i = 0; i < 4; ++i) {
        const double c = plan_it->second.data[i];
        if (c < 1 || c != std::floor(c) || c > 4096)
            throw std::runtime_error("checkpoint " + path + ": invalid channel plan");
        plan.enc[i] = static_cast<int>(c);
    }
    entries.erase(plan_it);

    Checkpoint ck;
    ck.params = UnetParams::build(plan);
    ck.adam = AdamState::create(plan);
    walk_trainable(ck.params, [&](const std::string& name, std::vector<double>& v,
                                  const std::vector<uint32_t>& dims) { take(entries, name, v, dims, path); });
    walk_stats(ck.params, [&](const std::string& name, std::vector<double>& v,
                              const std::vector<uint32_t>& dims) { take(entries, name, v, dims, path); });
    walk_trainable(ck.adam.m, [&](const std::string& name, std::vector<double>& v,
                                  const std::vector<uint32_t>& dims) { take(entries, "adam.m." + name, v, dims, path); });
    walk_trainable(ck.adam.v, [&](const std::string& name, std::vector<double>& v,
                                  const std::vector<uint32_t>& dims) { take(entries, "adam.v." + name, v, dims, path); });
    std::vector<double> scalar;
    take(entries, "adam.t", scalar, {1}, path);
    ck.adam.t = static_cast<uint64_t>(scalar[0]);
    take(entries, "meta.epoch", scalar, {1}, path);
    ck.epoch = static_cast<uint64_t>(scalar[0]);
    if (!entries.empty())
        throw std::runtime_error("checkpoint " + path + ": unknown tensor " +
                                 entries.begin()->first);
    return ck;
}

// ---------------------------------------------------------------------------
// Image plumbing

Tensor4 images_to_tensor(const std::vector<const GrayImage*>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int w = imgs[0]->width, h = imgs[0]->height;
    Tensor4 t(static_cast<int>(imgs.size()), 1, h, w);
    for (size_t k = 0; k < imgs.size(); ++k) {
        if (imgs[k]->width != w || imgs[k]->height != h)
            throw std::invalid_argument("images_to_tensor: mixed sizes in batch");
        std::memcpy(&t.data[t.idx(static_cast<int>(k), 0, 0, 0)], imgs[k]->pix.data(),
                    static_cast<size_t>(w) * h * sizeof(double));
    }
    return t;
}

GrayImage tensor_to_image(const Tensor4& t, int n) {
    GrayImage img(t.w, t.h);
    std::memcpy(img.pix.data(), &t.data[t.idx(n, 0, 0, 0)],
                static_cast<size_t>(t.w) * t.h * sizeof(double));
    return img;
}

// Mirror index into [0, n) without repeating the edge sample.
static int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
}

GrayImage unet_score_map(const UnetParams& params, const GrayImage& img) {
    if (img.width < 1 || img.height < 1)
        throw std::invalid_argument("score map: empty image");
    const int pw = (img.width + 15) / 16 * 16;
    const int ph = (img.height + 15) / 16 * 16;
    GrayImage padded(pw, ph);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
            padded.at(x, y) = img.at(reflect_index(x, img.width), reflect_index(y, img.height));
    Tensor4 in = images_to_tensor({&padded});
    Tensor4 s = unet_forward_eval(params, in);
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = s.at(0, 0, y, x);
    return out;
}

}  // namespace keyreg
