#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "keyreg/geometry.hpp"
#include "keyreg/imaging.hpp"
#include "keyreg/matching.hpp"
#include "keyreg/net.hpp"

namespace keyreg {

// 1 at true-positive keypoint pixels, 0 elsewhere.
using RewardMap = GrayImage;
// 1 at all TP keypoint pixels plus the mined FP keypoint pixels.
using MiningMask = GrayImage;

// Which image of a pair a verdict's keypoint indices refer to.
enum class PairSide { a, b };

RewardMap build_reward(const std::vector<Keypoint>& kps,
                       const std::vector<Verdict>& verdicts, PairSide side,
                       int w, int h);

// All TP pixels, plus n = |TP| false-positive pixels sampled uniformly
// without replacement (all of them when |FP| <= |TP|).
MiningMask build_mask(const std::vector<Keypoint>& kps,
                      const std::vector<Verdict>& verdicts, PairSide side,
                      Rng& rng, int w, int h);

struct MaskedLoss {
    double loss = 0.0;
    GrayImage dL_dS;  // 2(S-R)M / sum(M)
};

// loss = sum((S-R)^2 * M) / sum(M); empty mask -> nullopt (nothing to train).
std::optional<MaskedLoss> masked_loss(const ScoreMap& s, const RewardMap& r,
                                      const MiningMask& m);

struct PairSample {
    GrayImage a, b;
    Homography h;  // maps a-coordinates to b-coordinates
};

// Warps the base by two sampled homographies, crops the same random window
// from both, augments each side independently. The returned homography is
// conjugated by the crop translation so it maps crop coordinates.
PairSample generate_pair(const GrayImage& base, int crop_size,
                         const HomographySampleRanges& ranges,
                         const AugmentationConfig& aug, Rng& rng);

struct TrainConfig {
    UnetPlan plan;
    int batch_size = 5;
    int crop = 256;
    uint64_t epochs = 35;
    int steps_per_epoch = 0;  // 0 = ceil(n_bases / batch_size)
    AdamConfig adam;
    int nms_window = 10;
    double nms_threshold = 0.0;
    int max_kp = 1000;
    double eps = 3.0;  // true-positive reprojection tolerance, px
    uint64_t seed = 0;
    uint64_t checkpoint_every = 1;  // epochs between checkpoints
    HomographySampleRanges ranges;
    AugmentationConfig aug;

    void validate() const;
};

struct StepRecord {
    uint64_t epoch = 0;
    uint64_t step = 0;  // global step index
    bool updated = false;
    double loss = 0.0;  // mean over contributing pairs; valid iff updated
    // per-pair means within the step's batch
    double n_kp_a = 0.0, n_kp_b = 0.0, n_matches = 0.0, n_tp = 0.0, n_fp = 0.0;
    uint64_t seed = 0;  // this step's derived stream id
};

// Steps 1-5 on a single pair followed by one optimizer update; the mining
// rng drives FP sampling. Returns updated=false (and leaves params alone)
// when neither image yields a trainable mask.
StepRecord train_step(UnetParams& params, const PairSample& pair,
                      const TrainConfig& cfg, AdamState& adam, Rng& mine_rng);

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const UnetParams&, const AdamState&, uint64_t epoch)> on_checkpoint;
};

// Deterministic training loop: per-epoch base shuffles and all per-step
// randomness are derived from cfg.seed via labeled streams
// ("shuffle/<epoch>", "pair/<epoch>/<step>/<k>", "mine/<epoch>/<step>/<k>").
// Resumes cleanly from (params, adam, start_epoch) of a checkpoint.
void train(const std::vector<GrayImage>& bases, const TrainConfig& cfg,
           UnetParams& params, AdamState& adam, uint64_t start_epoch,
           const TrainHooks& hooks);

}  // namespace keyreg
