#include "keyreg/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace keyreg {

static const Keypoint& side_kp(const std::vector<Keypoint>& kps, const Match& m,
                               PairSide side) {
    return side == PairSide::a ? kps.at(m.idx_a) : kps.at(m.idx_b);
}

RewardMap build_reward(const std::vector<Keypoint>& kps,
                       const std::vector<Verdict>& verdicts, PairSide side,
                       int w, int h) {
    RewardMap r(w, h);
    for (const Verdict& v : verdicts) {
        if (!v.true_positive) continue;
        const Keypoint& kp = side_kp(kps, v.match, side);
        if (!r.contains(kp.x, kp.y))
            throw std::invalid_argument("build_reward: keypoint outside map");
        r.at(kp.x, kp.y) = 1.0;
    }
    return r;
}

MiningMask build_mask(const std::vector<Keypoint>& kps,
                      const std::vector<Verdict>& verdicts, PairSide side,
                      Rng& rng, int w, int h) {
    MiningMask m(w, h);
    std::vector<const Keypoint*> fps;
    size_t n_tp = 0;
    for (const Verdict& v : verdicts) {
        const Keypoint& kp = side_kp(kps, v.match, side);
        if (!m.contains(kp.x, kp.y))
            throw std::invalid_argument("build_mask: keypoint outside map");
        if (v.true_positive) {
            m.at(kp.x, kp.y) = 1.0;
            ++n_tp;
        } else {
            fps.push_back(&kp);
        }
    }
    // Balance: n mined false positives against the n true positives; if
    // false positives are the minority, take them all.
    size_t take = std::min(n_tp, fps.size());
    for (size_t i = 0; i < take; ++i) {
        const size_t j = i + rng.uniform_int(fps.size() - i);
        std::swap(fps[i], fps[j]);
        m.at(fps[i]->x, fps[i]->y) = 1.0;
    }
    return m;
}

std::optional<MaskedLoss> masked_loss(const ScoreMap& s, const RewardMap& r,
                                      const MiningMask& m) {
    if (s.width != r.width || s.height != r.height || s.width != m.width ||
        s.height != m.height)
        throw std::invalid_argument("masked_loss: shape mismatch");
    double sum_m = 0.0;
    for (double v : m.pix) sum_m += v;
    if (sum_m == 0.0) return std::nullopt;

    MaskedLoss out;
    out.dL_dS = GrayImage(s.width, s.height);
    double acc = 0.0;
    for (size_t k = 0; k < s.pix.size(); ++k) {
        const double d = s.pix[k] - r.pix[k];
        acc += d * d * m.pix[k];
        out.dL_dS.pix[k] = 2.0 * d * m.pix[k] / sum_m;
    }
    out.loss = acc / sum_m;
    return out;
}

PairSample generate_pair(const GrayImage& base, int crop_size,
                         const HomographySampleRanges& ranges,
                         const AugmentationConfig& aug, Rng& rng) {
    if (crop_size < 1) throw std::invalid_argument("generate_pair: bad crop size");
    if (base.width < crop_size || base.height < crop_size)
        throw std::invalid_argument("generate_pair: base smaller than crop");

    const Vec2 center{(base.width - 1) / 2.0, (base.height - 1) / 2.0};
    const Homography g = sample_homography(ranges, center, rng);
    const Homography g_prime = sample_homography(ranges, center, rng);
    const GrayImage warped_a = warp_image(base, g, base.width, base.height);
    const GrayImage warped_b = warp_image(base, g_prime, base.width, base.height);

    const int ox = static_cast<int>(rng.uniform_int(base.width - crop_size + 1));
    const int oy = static_cast<int>(rng.uniform_int(base.height - crop_size + 1));
    auto crop = [&](const GrayImage& src) {
        GrayImage c(crop_size, crop_size);
        for (int y = 0; y < crop_size; ++y)
            for (int x = 0; x < crop_size; ++x) c.at(x, y) = src.at(ox + x, oy + y);
        return c;
    };

    PairSample pair;
    pair.a = augment(crop(warped_a), aug, rng);
    pair.b = augment(crop(warped_b), aug, rng);
    const Homography h = compose_pair(g_prime, g);
    const Homography shift = Homography::translation(ox, oy);
    const Homography unshift = Homography::translation(-ox, -oy);
    pair.h = unshift * h * shift;  // same map expressed in crop coordinates
    return pair;
}

void TrainConfig::validate() const {
    plan.validate();
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (crop < 16 || crop % 16 != 0)
        throw std::invalid_argument("train: crop must be a positive multiple of 16");
    if (steps_per_epoch < 0) throw std::invalid_argument("train: bad steps_per_epoch");
    if (nms_window < 1) throw std::invalid_argument("train: nms window must be >= 1");
    if (max_kp < 1) throw std::invalid_argument("train: max_kp must be >= 1");
    if (eps <= 0) throw std::invalid_argument("train: eps must be positive");
    if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint cadence must be >= 1");
    ranges.validate();
    aug.validate();
}

namespace {

struct PairOutcome {
    int n_kp_a = 0, n_kp_b = 0, n_matches = 0, n_tp = 0, n_fp = 0;
    bool contributed = false;
    double loss = 0.0;
};

// Steps 2-5 plus the loss for one pair whose score maps live at batch slots
// (slot_a, slot_b) of `scores`; writes per-side gradients (scaled by the
// number of contributing sides) into the matching slots of `dscore`.
PairOutcome pair_losses(const PairSample& pair, const Tensor4& scores, int slot_a,
                        int slot_b, const TrainConfig& cfg, Rng& mine_rng,
                        Tensor4& dscore) {
    const ScoreMap s_a = tensor_to_image(scores, slot_a);
    const ScoreMap s_b = tensor_to_image(scores, slot_b);
    PairOutcome out;

    const std::vector<Keypoint> kps_a = nms(s_a, cfg.nms_window, cfg.nms_threshold, cfg.max_kp);
    const std::vector<Keypoint> kps_b = nms(s_b, cfg.nms_window, cfg.nms_threshold, cfg.max_kp);
    out.n_kp_a = static_cast<int>(kps_a.size());
    out.n_kp_b = static_cast<int>(kps_b.size());

    const std::vector<Descriptor> desc_a = describe_all(pair.a, kps_a);
    const std::vector<Descriptor> desc_b = describe_all(pair.b, kps_b);
    const std::vector<Match> matches = cross_check_match(desc_a, desc_b);
    out.n_matches = static_cast<int>(matches.size());
    const std::vector<Verdict> verdicts = verify(matches, kps_a, kps_b, pair.h, cfg.eps);
    out.n_tp = count_true_positives(verdicts);
    out.n_fp = out.n_matches - out.n_tp;

    const int w = s_a.width, h = s_a.height;
    const RewardMap r_a = build_reward(kps_a, verdicts, PairSide::a, w, h);
    const MiningMask m_a = build_mask(kps_a, verdicts, PairSide::a, mine_rng, w, h);
    const RewardMap r_b = build_reward(kps_b, verdicts, PairSide::b, w, h);
    const MiningMask m_b = build_mask(kps_b, verdicts, PairSide::b, mine_rng, w, h);

    const auto ml_a = masked_loss(s_a, r_a, m_a);
    const auto ml_b = masked_loss(s_b, r_b, m_b);
    const int sides = (ml_a ? 1 : 0) + (ml_b ? 1 : 0);
    if (sides == 0) return out;

    out.contributed = true;
    auto add_grad = [&](int slot, const GrayImage& g) {
        double* dst = &dscore.data[dscore.idx(slot, 0, 0, 0)];
        for (size_t k = 0; k < g.pix.size(); ++k) dst[k] += g.pix[k] / sides;
    };
    if (ml_a) {
        out.loss += ml_a->loss / sides;
        add_grad(slot_a, ml_a->dL_dS);
    }
    if (ml_b) {
        out.loss += ml_b->loss / sides;
        add_grad(slot_b, ml_b->dL_dS);
    }
    return out;
}

// One forward/backward/update over a batch of pairs. Per-pair mining rngs
// are supplied by the caller so streams stay position-independent.
StepRecord batch_step(UnetParams& params, const std::vector<PairSample>& pairs,
                      const TrainConfig& cfg, AdamState& adam,
                      std::vector<Rng>& mine_rngs) {
    const int b = static_cast<int>(pairs.size());
    std::vector<const GrayImage*> imgs;
    imgs.reserve(2 * b);
    for (const PairSample& p : pairs) imgs.push_back(&p.a);
    for (const PairSample& p : pairs) imgs.push_back(&p.b);
    const Tensor4 input = images_to_tensor(imgs);

    UnetCache cache;
    const Tensor4 scores = unet_forward_train(params, input, cache);
    Tensor4 dscore(scores.n, scores.c, scores.h, scores.w);

    StepRecord rec;
    int contrib = 0;
    for (int k = 0; k < b; ++k) {
        const PairOutcome po =
            pair_losses(pairs[k], scores, k, b + k, cfg, mine_rngs[k], dscore);
        rec.n_kp_a += po.n_kp_a;
        rec.n_kp_b += po.n_kp_b;
        rec.n_matches += po.n_matches;
        rec.n_tp += po.n_tp;
        rec.n_fp += po.n_fp;
        if (po.contributed) {
            ++contrib;
            rec.loss += po.loss;
        }
    }
    rec.n_kp_a /= b;
    rec.n_kp_b /= b;
    rec.n_matches /= b;
    rec.n_tp /= b;
    rec.n_fp /= b;

    if (contrib > 0) {
        rec.updated = true;
        rec.loss /= contrib;
        for (double& v : dscore.data) v /= contrib;
        const UnetParams grads = unet_backward(params, cache, dscore);
        adam_step(params, grads, adam, cfg.adam);
    } else {
        rec.loss = 0.0;
    }
    return rec;
}

}  // namespace

StepRecord train_step(UnetParams& params, const PairSample& pair,
                      const TrainConfig& cfg, AdamState& adam, Rng& mine_rng) {
    cfg.validate();
    std::vector<PairSample> pairs{pair};
    std::vector<Rng> rngs{mine_rng};
    StepRecord rec = batch_step(params, pairs, cfg, adam, rngs);
    mine_rng = rngs[0];  // hand the advanced stream back
    return rec;
}

void train(const std::vector<GrayImage>& bases, const TrainConfig& cfg,
           UnetParams& params, AdamState& adam, uint64_t start_epoch,
           const TrainHooks& hooks) {
    cfg.validate();
    if (bases.empty()) throw std::invalid_argument("train: no base images");
    if (start_epoch > cfg.epochs)
        throw std::invalid_argument("train: checkpoint is ahead of requested epochs");

    const int n = static_cast<int>(bases.size());
    const int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                                              : (n + cfg.batch_size - 1) / cfg.batch_size;

    for (uint64_t e = start_epoch; e < cfg.epochs; ++e) {
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/" + std::to_string(e)));
        shuffle_rng.shuffle(perm);

        for (int s = 0; s < steps; ++s) {
            const std::string tag = std::to_string(e) + "/" + std::to_string(s);
            std::vector<PairSample> pairs;
            std::vector<Rng> mine_rngs;
            pairs.reserve(cfg.batch_size);
            for (int k = 0; k < cfg.batch_size; ++k) {
                Rng pair_rng(derive_seed(cfg.seed, "pair/" + tag + "/" + std::to_string(k)));
                const GrayImage& base =
                    bases[perm[(static_cast<size_t>(s) * cfg.batch_size + k) % n]];
                pairs.push_back(generate_pair(base, cfg.crop, cfg.ranges, cfg.aug, pair_rng));
                mine_rngs.emplace_back(derive_seed(cfg.seed, "mine/" + tag + "/" + std::to_string(k)));
            }
            StepRecord rec = batch_step(params, pairs, cfg, adam, mine_rngs);
            rec.epoch = e;
            rec.step = e * static_cast<uint64_t>(steps) + s;
            rec.seed = derive_seed(cfg.seed, "step/" + tag);
            if (hooks.on_step) hooks.on_step(rec);
        }
        if (hooks.on_checkpoint &&
            ((e + 1) % cfg.checkpoint_every == 0 || e + 1 == cfg.epochs))
            hooks.on_checkpoint(params, adam, e + 1);
    }
}

}  // namespace keyreg
