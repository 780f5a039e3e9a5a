// Command-line front end: synthetic pair generation, detector training,
// evaluation, pairwise registration, and mosaicking.

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "keyreg/mosaic.hpp"
#include "keyreg/registration.hpp"
#include "keyreg/training.hpp"
#include "keyreg/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace keyreg;

namespace {

// exit codes: 0 ok, 1 usage/config, 2 pipeline failure, 3 I/O
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPipeline = 2;
constexpr int kExitIo = 3;

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::cerr << msg << "\n";
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    const fs::path dir = fs::path(path).parent_path();
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const size_t e = line.find_last_not_of(" \t\r");
        std::string entry = line.substr(b, e - b + 1);
        fs::path p(entry);
        if (p.is_relative()) p = dir / p;  // paths resolve against the manifest
        out.push_back(p.string());
    }
    return out;
}

GrayImage load_gray_any(const std::string& path) {
    AnyImage img = load_image(path);
    if (std::holds_alternative<GrayImage>(img)) return std::get<GrayImage>(img);
    return green_channel(std::get<RgbImage>(img));
}

std::vector<GrayImage> load_bases(const std::string& manifest) {
    std::vector<GrayImage> bases;
    for (const std::string& p : read_manifest(manifest)) bases.push_back(load_gray_any(p));
    if (bases.empty()) throw std::runtime_error("manifest lists no images: " + manifest);
    return bases;
}

// ---------------------------------------------------------------------------
// Config plumbing

struct RangeFlags {
    HomographySampleRanges r;
    void attach(CLI::App* app) {
        app->add_option("--scale-min", r.scale_min, "min scaling factor");
        app->add_option("--scale-max", r.scale_max, "max scaling factor");
        app->add_option("--persp-min", r.persp_min, "min perspective magnitude");
        app->add_option("--persp-max", r.persp_max, "max perspective magnitude");
        app->add_option("--trans-x", r.trans_max_x, "max |x| translation, px");
        app->add_option("--trans-y", r.trans_max_y, "max |y| translation, px");
        app->add_option("--shear-min", r.shear_min, "min shear factor");
        app->add_option("--shear-max", r.shear_max, "max shear factor");
        app->add_option("--rot-max", r.rot_max_deg, "max |rotation|, degrees");
        app->add_flag_callback("--identity-ranges",
                               [this] { r = HomographySampleRanges::identity_only(); },
                               "collapse all ranges to the identity transform");
    }
};

struct AugFlags {
    AugmentationConfig a;
    bool off = false;
    void attach(CLI::App* app) {
        app->add_flag("--no-aug", off, "disable all appearance augmentations");
        app->add_option("--noise-max", a.noise_sigma_max, "max gaussian noise sigma");
        app->add_option("--invert-prob", a.invert_prob, "probability of intensity inversion");
        app->add_option("--blur-max", a.blur_len_max, "max blur kernel length (odd)");
    }
    AugmentationConfig resolve() const { return off ? AugmentationConfig::disabled() : a; }
};

json ranges_json(const HomographySampleRanges& r) {
    return json{{"scale_min", r.scale_min},   {"scale_max", r.scale_max},
                {"persp_min", r.persp_min},   {"persp_max", r.persp_max},
                {"trans_x", r.trans_max_x},   {"trans_y", r.trans_max_y},
                {"shear_min", r.shear_min},   {"shear_max", r.shear_max},
                {"rot_max_deg", r.rot_max_deg}};
}

json aug_json(const AugmentationConfig& a) {
    return json{{"noise", a.noise_enabled},       {"noise_sigma_max", a.noise_sigma_max},
                {"contrast", a.contrast_enabled}, {"illumination", a.illumination_enabled},
                {"gamma", a.gamma_enabled},       {"blur", a.blur_enabled},
                {"blur_len_max", a.blur_len_max}, {"invert", a.invert_enabled},
                {"invert_prob", a.invert_prob}};
}

void write_config(const fs::path& dir, const json& cfg) {
    fs::create_directories(dir);
    write_file_atomic((dir / "config.json").string(), cfg.dump(2) + "\n");
}

std::string pair_name(int i, const char* suffix) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pair_%06d_%s", i, suffix);
    return buf;
}

UnetParams load_detector(const std::string& checkpoint, const UnetPlan& plan, uint64_t seed) {
    if (!checkpoint.empty()) return load_checkpoint(checkpoint).params;
    log_info("no checkpoint given; using an untrained seeded detector");
    Rng rng(derive_seed(seed, "init"));
    return UnetParams::init(plan, rng);
}

// ---------------------------------------------------------------------------
// gen-pairs

struct GenPairsArgs {
    std::string bases, out;
    int count = 10;
    int crop = 256;
    uint64_t seed = 0;
    RangeFlags ranges;
    AugFlags aug;
};

int cmd_gen_pairs(const GenPairsArgs& args) {
    const std::vector<GrayImage> bases = load_bases(args.bases);
    const AugmentationConfig aug = args.aug.resolve();
    args.ranges.r.validate();
    aug.validate();

    const fs::path out(args.out);
    write_config(out, json{{"command", "gen-pairs"},
                           {"bases", args.bases},
                           {"count", args.count},
                           {"crop", args.crop},
                           {"seed", args.seed},
                           {"ranges", ranges_json(args.ranges.r)},
                           {"aug", aug_json(aug)}});

    for (int i = 0; i < args.count; ++i) {
        Rng rng(derive_seed(args.seed, "genpair/" + std::to_string(i)));
        const GrayImage& base = bases[rng.uniform_int(bases.size())];
        const PairSample pair = generate_pair(base, args.crop, args.ranges.r, aug, rng);
        save_image(pair.a, (out / pair_name(i, "a.pgm")).string());
        save_image(pair.b, (out / pair_name(i, "b.pgm")).string());
        write_homography(pair.h, (out / pair_name(i, "h.txt")).string());
    }
    log_info("wrote " + std::to_string(args.count) + " pairs to " + args.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string bases, out, resume;
    TrainConfig cfg;
    std::vector<int> plan;
    RangeFlags ranges;
    AugFlags aug;
};

int cmd_train(const TrainArgs& args) {
    TrainConfig cfg = args.cfg;
    cfg.ranges = args.ranges.r;
    cfg.aug = args.aug.resolve();
    if (!args.plan.empty()) {
        if (args.plan.size() != 4)
            throw std::invalid_argument("--plan needs exactly 4 channel counts");
        for (int i = 0; i < 4; ++i) cfg.plan.enc[i] = args.plan[i];
    }

    UnetParams params = UnetParams::build(cfg.plan);
    AdamState adam = AdamState::create(cfg.plan);
    uint64_t start_epoch = 0;
    if (!args.resume.empty()) {
        Checkpoint ck = load_checkpoint(args.resume);
        if (!args.plan.empty() && !(ck.params.plan == cfg.plan))
            throw std::invalid_argument("--plan disagrees with the resumed checkpoint");
        cfg.plan = ck.params.plan;
        params = std::move(ck.params);
        adam = std::move(ck.adam);
        start_epoch = ck.epoch;
    } else {
        Rng rng(derive_seed(cfg.seed, "init"));
        params = UnetParams::init(cfg.plan, rng);
    }
    cfg.validate();

    const std::vector<GrayImage> bases = load_bases(args.bases);
    const fs::path out(args.out);
    write_config(out, json{{"command", "train"},
                           {"bases", args.bases},
                           {"plan", cfg.plan.enc},
                           {"batch_size", cfg.batch_size},
                           {"crop", cfg.crop},
                           {"epochs", cfg.epochs},
                           {"steps_per_epoch", cfg.steps_per_epoch},
                           {"lr", cfg.adam.lr},
                           {"beta1", cfg.adam.beta1},
                           {"beta2", cfg.adam.beta2},
                           {"nms_window", cfg.nms_window},
                           {"nms_threshold", cfg.nms_threshold},
                           {"max_kp", cfg.max_kp},
                           {"eps", cfg.eps},
                           {"seed", cfg.seed},
                           {"checkpoint_every", cfg.checkpoint_every},
                           {"resume", args.resume},
                           {"ranges", ranges_json(cfg.ranges)},
                           {"aug", aug_json(cfg.aug)}});

    const std::string log_path = (out / "log.jsonl").string();
    const std::string log_tmp = log_path + ".tmp";
    std::ofstream log(log_tmp, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open log: " + log_tmp);

    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) {
        json j{{"step", r.step},
               {"epoch", r.epoch},
               {"loss", r.updated ? json(r.loss) : json(nullptr)},
               {"n_kp_a", r.n_kp_a},
               {"n_kp_b", r.n_kp_b},
               {"n_matches", r.n_matches},
               {"n_tp", r.n_tp},
               {"n_fp", r.n_fp},
               {"seed", r.seed}};
        log << j.dump() << "\n";
        if (g_log_level >= 2) std::cerr << j.dump() << "\n";
    };
    hooks.on_checkpoint = [&](const UnetParams& p, const AdamState& a, uint64_t epoch) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%04" PRIu64 ".bin", epoch);
        save_checkpoint((out / buf).string(), p, a, epoch);
        log_info(std::string("saved ") + buf);
    };

    train(bases, cfg, params, adam, start_epoch, hooks);

    log.flush();
    if (!log) throw std::runtime_error("log write failed: " + log_tmp);
    log.close();
    if (std::rename(log_tmp.c_str(), log_path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + log_tmp);
    save_checkpoint((out / "checkpoint_final.bin").string(), params, adam, cfg.epochs);
    log_info("training done: " + args.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string pairs, checkpoint, out;
    EvalConfig cfg;
    uint64_t seed = 0;
    std::vector<int> plan;
};

int cmd_eval(const EvalArgs& args) {
    UnetPlan plan;
    if (args.plan.size() == 4)
        for (int i = 0; i < 4; ++i) plan.enc[i] = args.plan[i];
    const UnetParams params = load_detector(args.checkpoint, plan, args.seed);

    // pairs are identified by their index in pair_######_{a,b,h} triplets
    std::vector<int> ids;
    for (const auto& entry : fs::directory_iterator(args.pairs)) {
        const std::string name = entry.path().filename().string();
        int idx;
        if (std::sscanf(name.c_str(), "pair_%d_a.pgm", &idx) == 1 &&
            name == pair_name(idx, "a.pgm"))
            ids.push_back(idx);
    }
    std::sort(ids.begin(), ids.end());

    json records = json::array();
    int n_failed = 0, n_inacc = 0, n_acc = 0;
    double sum_rep = 0, sum_ms = 0, sum_cov = 0, sum_auc = 0;
    const fs::path dir(args.pairs);
    for (int id : ids) {
        const GrayImage a = load_gray_any((dir / pair_name(id, "a.pgm")).string());
        const GrayImage b = load_gray_any((dir / pair_name(id, "b.pgm")).string());
        const Homography h = read_homography((dir / pair_name(id, "h.txt")).string());
        Rng rng(derive_seed(args.seed, "eval/ransac/" + std::to_string(id)));
        const PairMetrics pm = evaluate_pair(params, a, b, h, args.cfg, rng);

        switch (pm.reg.cls) {
            case RegClass::failed: ++n_failed; break;
            case RegClass::inaccurate: ++n_inacc; break;
            case RegClass::acceptable: ++n_acc; break;
        }
        sum_rep += pm.repeatability;
        sum_ms += pm.m_score;
        sum_cov += pm.coverage;
        sum_auc += pm.auc;
        records.push_back(json{{"pair_id", id},
                               {"class", reg_class_name(pm.reg.cls)},
                               {"mee", pm.reg.mee ? json(*pm.reg.mee) : json(nullptr)},
                               {"mae", pm.reg.mae ? json(*pm.reg.mae) : json(nullptr)},
                               {"repeatability", pm.repeatability},
                               {"m_score", pm.m_score},
                               {"coverage", pm.coverage},
                               {"auc", pm.auc},
                               {"n_kp", pm.n_kp_a + pm.n_kp_b},
                               {"n_matches", pm.n_matches},
                               {"n_tp", pm.n_tp}});
    }

    const double n = ids.empty() ? 1.0 : static_cast<double>(ids.size());
    json report{{"pairs", records},
                {"n_pairs", ids.size()},
                {"failed_pct", 100.0 * n_failed / n},
                {"inaccurate_pct", 100.0 * n_inacc / n},
                {"acceptable_pct", 100.0 * n_acc / n},
                {"means", json{{"repeatability", sum_rep / n},
                               {"m_score", sum_ms / n},
                               {"coverage", sum_cov / n},
                               {"auc", sum_auc / n}}}};
    write_file_atomic(args.out, report.dump(2) + "\n");
    log_info("evaluated " + std::to_string(ids.size()) + " pairs -> " + args.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// register

struct RegisterArgs {
    std::string a, b, checkpoint, out;
    EvalConfig cfg;
    uint64_t seed = 0;
    std::vector<int> plan;
};

int cmd_register(const RegisterArgs& args) {
    UnetPlan plan;
    if (args.plan.size() == 4)
        for (int i = 0; i < 4; ++i) plan.enc[i] = args.plan[i];
    const UnetParams params = load_detector(args.checkpoint, plan, args.seed);
    const GrayImage img_a = load_gray_any(args.a);
    const GrayImage img_b = load_gray_any(args.b);

    const ScoreMap s_a = unet_score_map(params, img_a);
    const ScoreMap s_b = unet_score_map(params, img_b);
    const std::vector<Keypoint> kps_a =
        nms(s_a, args.cfg.nms_window, args.cfg.nms_threshold, args.cfg.max_kp);
    const std::vector<Keypoint> kps_b =
        nms(s_b, args.cfg.nms_window, args.cfg.nms_threshold, args.cfg.max_kp);
    const std::vector<Match> matches = nndr_match(
        describe_all(img_a, kps_a), describe_all(img_b, kps_b), args.cfg.nndr_t);

    Rng rng(derive_seed(args.seed, "register/ransac"));
    const auto rr = ransac_homography(matches, kps_a, kps_b, args.cfg.ransac, rng);
    if (!rr) {
        std::cerr << "registration failed: " << matches.size()
                  << " matches, no admissible model\n";
        return kExitPipeline;
    }
    write_homography(rr->h, args.out);
    write_file_atomic(args.out + ".config.json",
                      json{{"command", "register"},
                           {"a", args.a},
                           {"b", args.b},
                           {"checkpoint", args.checkpoint},
                           {"seed", args.seed},
                           {"nndr_t", args.cfg.nndr_t},
                           {"ransac_iters", args.cfg.ransac.iters},
                           {"ransac_thresh", args.cfg.ransac.inlier_thresh},
                           {"n_matches", matches.size()},
                           {"n_inliers", rr->inliers.size()}}
                              .dump(2) +
                          "\n");
    log_info("registered with " + std::to_string(rr->inliers.size()) + " inliers -> " +
             args.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// mosaic

struct MosaicArgs {
    std::string frames, checkpoint, out;
    MosaicConfig cfg;
    std::vector<int> plan;
};

int cmd_mosaic(const MosaicArgs& args) {
    UnetPlan plan;
    if (args.plan.size() == 4)
        for (int i = 0; i < 4; ++i) plan.enc[i] = args.plan[i];
    const UnetParams params = load_detector(args.checkpoint, plan, args.cfg.seed);

    // frames: directory (lexicographic image files) or manifest file
    std::vector<std::string> paths;
    if (fs::is_directory(args.frames)) {
        for (const auto& entry : fs::directory_iterator(args.frames)) {
            const std::string ext = entry.path().extension().string();
            if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
                paths.push_back(entry.path().string());
        }
        std::sort(paths.begin(), paths.end());
    } else {
        paths = read_manifest(args.frames);
    }
    if (paths.empty()) throw std::runtime_error("no frames found in " + args.frames);

    std::vector<GrayImage> frames;
    for (size_t i = 0; i < paths.size(); ++i) {
        try {
            frames.push_back(load_gray_any(paths[i]));
        } catch (const std::exception& e) {
            throw std::runtime_error("frame " + std::to_string(i) + " (" + paths[i] +
                                     "): " + e.what());
        }
    }

    const MosaicState state = register_sequence(frames, params, args.cfg);
    const GrayImage canvas = render(state, frames);

    const fs::path out(args.out);
    write_config(out, json{{"command", "mosaic"},
                           {"frames", args.frames},
                           {"checkpoint", args.checkpoint},
                           {"seed", args.cfg.seed},
                           {"nms_window", args.cfg.nms_window},
                           {"max_kp", args.cfg.max_kp},
                           {"ransac_iters", args.cfg.ransac.iters},
                           {"ransac_thresh", args.cfg.ransac.inlier_thresh}});
    save_image(canvas, (out / "mosaic.pgm").string());
    write_file_atomic(
        (out / "summary.json").string(),
        json{{"frames_registered", state.frames_registered},
             {"failure_index",
              state.failure_index ? json(*state.failure_index) : json(nullptr)},
             {"canvas_w", state.canvas_w},
             {"canvas_h", state.canvas_h}}
                .dump(2) +
            "\n");
    log_info("registered " + std::to_string(state.frames_registered) + "/" +
             std::to_string(frames.size()) + " frames");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keyreg: learned keypoint detection, registration, and mosaicking"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker thread cap (0 = auto)");
    app.add_option("--log-level", g_log_level, "0 quiet, 1 info, 2 debug");

    GenPairsArgs gp;
    CLI::App* gen = app.add_subcommand("gen-pairs", "synthesize warped image pairs");
    gen->add_option("--bases", gp.bases, "manifest of base images")->required();
    gen->add_option("--out", gp.out, "output directory")->required();
    gen->add_option("--count", gp.count, "number of pairs");
    gen->add_option("--crop", gp.crop, "crop size, px");
    gen->add_option("--seed", gp.seed, "root seed");
    gp.ranges.attach(gen);
    gp.aug.attach(gen);

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train the detector");
    train_cmd->add_option("--bases", tr.bases, "manifest of base images")->required();
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_option("--plan", tr.plan, "4 encoder channel counts (default 8 16 32 64)")
        ->expected(4);
    train_cmd->add_option("--batch", tr.cfg.batch_size, "pairs per step (default 5)");
    train_cmd->add_option("--crop", tr.cfg.crop, "training crop (default 256)");
    train_cmd->add_option("--epochs", tr.cfg.epochs, "epochs (default 35)");
    train_cmd->add_option("--steps-per-epoch", tr.cfg.steps_per_epoch,
                          "steps per epoch (0 = cover all bases)");
    train_cmd->add_option("--lr", tr.cfg.adam.lr, "Adam learning rate (default 1e-3)");
    train_cmd->add_option("--nms-window", tr.cfg.nms_window, "NMS radius, px (default 10)");
    train_cmd->add_option("--nms-threshold", tr.cfg.nms_threshold, "NMS score threshold");
    train_cmd->add_option("--max-kp", tr.cfg.max_kp, "keypoint cap per image");
    train_cmd->add_option("--eps", tr.cfg.eps, "true-positive tolerance, px (default 3)");
    train_cmd->add_option("--seed", tr.cfg.seed, "root seed");
    train_cmd->add_option("--checkpoint-every", tr.cfg.checkpoint_every,
                          "epochs between checkpoints");
    train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
    tr.ranges.attach(train_cmd);
    tr.aug.attach(train_cmd);

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "run the metric suite on pairs");
    eval_cmd->add_option("--pairs", ev.pairs, "directory of pair_* triplets")->required();
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint");
    eval_cmd->add_option("--out", ev.out, "report JSON path")->required();
    eval_cmd->add_option("--plan", ev.plan, "channel plan when no checkpoint")->expected(4);
    eval_cmd->add_option("--nms-window", ev.cfg.nms_window, "NMS radius, px");
    eval_cmd->add_option("--nms-threshold", ev.cfg.nms_threshold, "NMS score threshold");
    eval_cmd->add_option("--max-kp", ev.cfg.max_kp, "keypoint cap per image");
    eval_cmd->add_option("--nndr-t", ev.cfg.nndr_t, "NNDR ratio threshold (default 0.8)");
    eval_cmd->add_option("--eps", ev.cfg.eps, "true-positive tolerance, px");
    eval_cmd->add_option("--ransac-iters", ev.cfg.ransac.iters, "RANSAC iterations");
    eval_cmd->add_option("--ransac-thresh", ev.cfg.ransac.inlier_thresh,
                         "RANSAC inlier threshold, px");
    eval_cmd->add_option("--seed", ev.seed, "root seed");

    RegisterArgs rg;
    CLI::App* reg_cmd = app.add_subcommand("register", "estimate a pairwise homography");
    reg_cmd->add_option("--a", rg.a, "reference image")->required();
    reg_cmd->add_option("--b", rg.b, "moving image")->required();
    reg_cmd->add_option("--checkpoint", rg.checkpoint, "trained checkpoint");
    reg_cmd->add_option("--out", rg.out, "output homography file")->required();
    reg_cmd->add_option("--plan", rg.plan, "channel plan when no checkpoint")->expected(4);
    reg_cmd->add_option("--nndr-t", rg.cfg.nndr_t, "NNDR ratio threshold");
    reg_cmd->add_option("--ransac-iters", rg.cfg.ransac.iters, "RANSAC iterations");
    reg_cmd->add_option("--ransac-thresh", rg.cfg.ransac.inlier_thresh,
                        "RANSAC inlier threshold, px");
    reg_cmd->add_option("--nms-window", rg.cfg.nms_window, "NMS radius, px");
    reg_cmd->add_option("--max-kp", rg.cfg.max_kp, "keypoint cap per image");
    reg_cmd->add_option("--seed", rg.seed, "root seed");

    MosaicArgs mo;
    CLI::App* mos_cmd = app.add_subcommand("mosaic", "register a frame sequence");
    mos_cmd->add_option("--frames", mo.frames, "frame directory or manifest")->required();
    mos_cmd->add_option("--checkpoint", mo.checkpoint, "trained checkpoint");
    mos_cmd->add_option("--out", mo.out, "output directory")->required();
    mos_cmd->add_option("--plan", mo.plan, "channel plan when no checkpoint")->expected(4);
    mos_cmd->add_option("--nms-window", mo.cfg.nms_window, "NMS radius, px");
    mos_cmd->add_option("--max-kp", mo.cfg.max_kp, "keypoint cap per image");
    mos_cmd->add_option("--ransac-iters", mo.cfg.ransac.iters, "RANSAC iterations");
    mos_cmd->add_option("--ransac-thresh", mo.cfg.ransac.inlier_thresh,
                        "RANSAC inlier threshold, px");
    mos_cmd->add_option("--seed", mo.cfg.seed, "root seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // help text, success
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    set_thread_limit(threads);

    try {
        if (gen->parsed()) return cmd_gen_pairs(gp);
        if (train_cmd->parsed()) return cmd_train(tr);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        if (reg_cmd->parsed()) return cmd_register(rg);
        if (mos_cmd->parsed()) return cmd_mosaic(mo);
    } catch (const PnmError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::runtime_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}
