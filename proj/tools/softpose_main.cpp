// softpose command-line tool.
//
// Subcommands:
//   train      fit a model on an annotation file, writing checkpoints + run log
//   eval       metric tables (PCK/PCKh/PCP) for a checkpoint or a pose-file pair
//   predict    pose file, skeleton overlay PNG and heat-map mosaic for one image
//   gradcheck  full finite-difference gradient suite
//   synth      generate a synthetic dataset in the annotation schema
//
// Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "softpose/checkpoint.hpp"
#include "softpose/data.hpp"
#include "softpose/gradcheck_suite.hpp"
#include "softpose/image.hpp"
#include "softpose/metrics.hpp"
#include "softpose/model.hpp"
#include "softpose/train.hpp"

namespace sp = softpose;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Shared model flags.
// ---------------------------------------------------------------------------

struct ModelFlags {
    std::string preset = "desk";
    std::optional<int> blocks, joints, context, input_size, base_resolution, resolutions, growth;
    std::optional<double> alpha, width;
    std::optional<uint64_t> seed;
    bool no_batch_norm = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--preset", mf.preset, "Model preset: desk (64px, K=2) or full (256px, K=8)")
        ->capture_default_str();
    cmd->add_option("--blocks", mf.blocks, "Prediction blocks K");
    cmd->add_option("--joints", mf.joints, "Number of joints N_J");
    cmd->add_option("--context", mf.context, "Context maps per joint N_c (0 disables)");
    cmd->add_option("--alpha", mf.alpha, "Detection/context mixing weight");
    cmd->add_option("--input-size", mf.input_size, "Square input size (8 x base resolution)");
    cmd->add_option("--base-resolution", mf.base_resolution, "Heat-map resolution");
    cmd->add_option("--width", mf.width, "Channel width multiplier");
    cmd->add_option("--resolutions", mf.resolutions, "Hourglass pyramid levels");
    cmd->add_option("--growth", mf.growth, "Extra channels per hourglass level");
    cmd->add_flag("--no-batch-norm", mf.no_batch_norm, "Disable batch normalization");
    cmd->add_option("--model-seed", mf.seed, "Weight initialization seed");
}

sp::ModelConfig resolve_model(const ModelFlags& mf) {
    sp::ModelConfig cfg;  // defaults match the full preset
    if (mf.preset == "desk") {
        cfg.K = 2;
        cfg.n_joints = 8;
        cfg.n_context = 2;
        cfg.input_size = 64;
        cfg.base_resolution = 8;
        cfg.width_multiplier = sp::real(0.25);
    } else if (mf.preset != "full") {
        throw sp::ConfigError("unknown preset '" + mf.preset + "' (expected desk or full)");
    }
    if (mf.blocks) cfg.K = *mf.blocks;
    if (mf.joints) cfg.n_joints = *mf.joints;
    if (mf.context) cfg.n_context = *mf.context;
    if (mf.alpha) cfg.alpha = static_cast<sp::real>(*mf.alpha);
    if (mf.input_size) cfg.input_size = *mf.input_size;
    if (mf.base_resolution) cfg.base_resolution = *mf.base_resolution;
    if (mf.width) cfg.width_multiplier = static_cast<sp::real>(*mf.width);
    if (mf.resolutions) cfg.num_resolutions = *mf.resolutions;
    if (mf.growth) cfg.growth = *mf.growth;
    if (mf.no_batch_norm) cfg.batch_norm = false;
    if (mf.seed) cfg.seed = *mf.seed;
    return cfg;
}

// ---------------------------------------------------------------------------
// Small parsers and metric plumbing.
// ---------------------------------------------------------------------------

std::pair<int, int> parse_pair(const std::string& text, const std::string& what) {
    const size_t comma = text.find(',');
    try {
        if (comma == std::string::npos) throw std::invalid_argument("");
        return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw sp::ConfigError(what + ": expected 'a,b', got '" + text + "'");
    }
}

std::vector<std::pair<int, int>> parse_limbs(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t dash = item.find('-');
        try {
            if (dash == std::string::npos) throw std::invalid_argument("");
            out.emplace_back(std::stoi(item.substr(0, dash)), std::stoi(item.substr(dash + 1)));
        } catch (const std::exception&) {
            throw sp::ConfigError("--limbs: expected 'a-b,c-d,...', got '" + text + "'");
        }
    }
    if (out.empty()) throw sp::ConfigError("--limbs: no limbs given");
    return out;
}

std::vector<std::string> joint_names_for(int n_joints) {
    std::vector<std::string> names;
    if (n_joints == sp::Skeleton::kJoints)
        for (const char* n : sp::Skeleton::joint_names()) names.push_back(n);
    else
        for (int j = 0; j < n_joints; ++j) names.push_back("joint_" + std::to_string(j));
    return names;
}

std::vector<std::pair<int, int>> default_limbs(int n_joints) {
    if (n_joints == sp::Skeleton::kJoints) return sp::Skeleton::limbs();
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j + 1 < n_joints; ++j) out.emplace_back(j, j + 1);
    return out;
}

sp::Pose pose_from_annotation(const sp::Annotation& ann) {
    sp::Pose p(ann.n_joints());
    for (int j = 0; j < ann.n_joints(); ++j) p.set(j, ann.x(j), ann.y(j));
    p.visible = ann.visible;
    for (int j = 0; j < ann.n_joints(); ++j)
        p.prob[static_cast<size_t>(j)] = ann.visible[static_cast<size_t>(j)] ? 1 : 0;
    return p;
}

std::string sibling_dir(const std::string& file_path) {
    const fs::path parent = fs::path(file_path).parent_path();
    return parent.empty() ? std::string(".") : parent.string();
}

struct MetricFlags {
    double pck_threshold = 0.2;
    double pckh_threshold = 0.5;
    double pcp_threshold = 0.5;
    std::string torso = "0,1";
    std::string head = "1,2";
    std::string limbs;
};

void add_metric_flags(CLI::App* cmd, MetricFlags& mf) {
    cmd->add_option("--pck-threshold", mf.pck_threshold, "PCK threshold (fraction of torso)")
        ->capture_default_str();
    cmd->add_option("--pckh-threshold", mf.pckh_threshold, "PCKh threshold (fraction of head)")
        ->capture_default_str();
    cmd->add_option("--pcp-threshold", mf.pcp_threshold, "PCP threshold (fraction of limb)")
        ->capture_default_str();
    cmd->add_option("--torso", mf.torso, "PCK normalizer joints 'a,b'")->capture_default_str();
    cmd->add_option("--head", mf.head, "PCKh normalizer joints 'a,b'")->capture_default_str();
    cmd->add_option("--limbs", mf.limbs, "PCP limbs 'a-b,c-d,...' (default: skeleton)");
}

void print_metric_tables(const std::vector<sp::Pose>& preds, const std::vector<sp::Pose>& truths,
                         const MetricFlags& mf) {
    if (truths.empty()) throw sp::ConfigError("eval: no samples to evaluate");
    const int nj = truths[0].n_joints();
    const auto names = joint_names_for(nj);

    sp::MetricConfig pck_cfg;
    pck_cfg.threshold = static_cast<sp::real>(mf.pck_threshold);
    pck_cfg.normalizer = parse_pair(mf.torso, "--torso");
    pck_cfg.joint_names = names;
    std::cout << sp::to_csv(sp::pck(preds, truths, pck_cfg), "pck");

    sp::MetricConfig pckh_cfg = pck_cfg;
    pckh_cfg.threshold = static_cast<sp::real>(mf.pckh_threshold);
    pckh_cfg.normalizer = parse_pair(mf.head, "--head");
    std::cout << "\n" << sp::to_csv(sp::pckh(preds, truths, pckh_cfg), "pckh");

    sp::MetricConfig pcp_cfg;
    pcp_cfg.threshold = static_cast<sp::real>(mf.pcp_threshold);
    pcp_cfg.limbs = mf.limbs.empty() ? default_limbs(nj) : parse_limbs(mf.limbs);
    for (const auto& [a, b] : pcp_cfg.limbs) {
        sp::detail::check(a >= 0 && a < nj && b >= 0 && b < nj, "eval: limb joint out of range");
        pcp_cfg.limb_names.push_back(names[static_cast<size_t>(a)] + "-" +
                                     names[static_cast<size_t>(b)]);
    }
    std::cout << "\n" << sp::to_csv(sp::pcp(preds, truths, pcp_cfg), "pcp");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    int count = 0;
    std::string out_dir;
    uint64_t seed = 1;
    int canvas = 96;
    double radius = 4;
    double noise = 0.25;
    double angle_range = 0.45;
    double length_jitter = 0.2;
    bool png = false;
};

int run_synth(const SynthArgs& args) {
    sp::SyntheticSpec spec;
    spec.canvas = args.canvas;
    spec.blob_radius = static_cast<sp::real>(args.radius);
    spec.noise_amplitude = static_cast<sp::real>(args.noise);
    spec.angle_range = static_cast<sp::real>(args.angle_range);
    spec.length_jitter = static_cast<sp::real>(args.length_jitter);
    spec.seed = args.seed;

    fs::create_directories(args.out_dir);
    std::vector<sp::SynthSample> samples = sp::synth_generate(spec, args.count);
    std::vector<sp::Annotation> anns;
    anns.reserve(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        sp::Annotation ann = samples[i].annotation;
        if (args.png) {
            char name[32];
            std::snprintf(name, sizeof(name), "img_%05zu.png", i);
            sp::write_png(args.out_dir + "/" + name, samples[i].image);
            ann.image_ref = name;
        }
        anns.push_back(std::move(ann));
    }
    const std::string path = args.out_dir + "/annotations.txt";
    sp::save_annotations(path, anns);
    std::cout << "wrote " << anns.size() << " samples to " << path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string annotations;
    std::string images;
    std::string val_annotations;
    std::string out_dir;
    int epochs = 30;
    int batch_size = 16;
    double lr = 1e-3;
    uint64_t seed = 1;
    double val_fraction = 0.1;
    bool augment = false;
    double rotation = 40;
    double scale_min = 0.7;
    double scale_max = 1.3;
    double lambda_p = 0.01;
    double pck_threshold = 0.2;
    std::string normalizer = "0,1";
    double target_pck = 0;
    int patience = 5;
    double factor = 0.4;
    bool resume = false;
};

int run_train(const TrainArgs& args, const ModelFlags& mflags) {
    // On resume the geometry comes from the checkpoint; model flags are ignored.
    const sp::ModelConfig mcfg = args.resume
        ? sp::load_checkpoint(args.out_dir + "/last").config()
        : resolve_model(mflags);
    const std::string base_dir = args.images.empty() ? sibling_dir(args.annotations) : args.images;

    const auto anns = sp::load_annotations(args.annotations);
    if (anns.empty()) throw sp::ConfigError("train: annotation file is empty");
    if (anns[0].n_joints() != mcfg.n_joints)
        throw sp::ConfigError("train: annotations have " + std::to_string(anns[0].n_joints()) +
                              " joints but the model expects " + std::to_string(mcfg.n_joints));

    std::vector<sp::Sample> train_set = sp::make_samples(anns, base_dir, mcfg.input_size);
    std::vector<sp::Sample> val_set;
    if (!args.val_annotations.empty()) {
        val_set = sp::make_samples(sp::load_annotations(args.val_annotations),
                                   sibling_dir(args.val_annotations), mcfg.input_size);
    } else {
        auto split = sp::split_validation(std::move(train_set),
                                          static_cast<sp::real>(args.val_fraction));
        train_set = std::move(split.first);
        val_set = std::move(split.second);
    }

    sp::TrainConfig tcfg;
    tcfg.epochs = args.epochs;
    tcfg.batch_size = args.batch_size;
    tcfg.initial_lr = static_cast<sp::real>(args.lr);
    tcfg.seed = args.seed;
    tcfg.lambda_p = static_cast<sp::real>(args.lambda_p);
    tcfg.augment = args.augment;
    tcfg.augment_params.rotation_range_deg = static_cast<sp::real>(args.rotation);
    tcfg.augment_params.scale_lo = static_cast<sp::real>(args.scale_min);
    tcfg.augment_params.scale_hi = static_cast<sp::real>(args.scale_max);
    tcfg.pck_threshold = static_cast<sp::real>(args.pck_threshold);
    tcfg.normalizer = parse_pair(args.normalizer, "--normalizer");
    tcfg.target_pck = static_cast<sp::real>(args.target_pck);
    tcfg.plateau.patience = args.patience;
    tcfg.plateau.factor = static_cast<sp::real>(args.factor);
    tcfg.out_dir = args.out_dir;
    tcfg.on_epoch = [](const sp::EpochLog& log) { std::cout << log.line() << "\n"; };

    std::cout << "training set: " << train_set.size() << " samples, validation: "
              << val_set.size() << "\n";
    sp::TrainOutcome outcome;
    if (args.resume) {
        sp::ResumedRun run = sp::resume_train(train_set, val_set, tcfg);
        outcome = std::move(run.outcome);
    } else {
        sp::PoseModel model(mcfg);
        std::cout << "model parameters: " << model.parameter_count() << "\n";
        outcome = sp::train(model, train_set, val_set, tcfg);
    }
    std::cout << "done: " << outcome.epochs_completed << " epochs, best val PCK "
              << sp::detail::real_str(outcome.best_val) << "; checkpoints in " << args.out_dir
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string annotations;
    std::string images;
    std::string poses;
    std::string truth;
    int batch_size = 16;
};

int run_eval(const EvalArgs& args, const MetricFlags& mflags) {
    std::vector<sp::Pose> preds, truths;
    if (!args.poses.empty()) {
        if (args.truth.empty())
            throw sp::ConfigError("eval: --poses requires --truth for comparison");
        for (const auto& a : sp::load_annotations(args.poses))
            preds.push_back(pose_from_annotation(a));
        for (const auto& a : sp::load_annotations(args.truth))
            truths.push_back(pose_from_annotation(a));
        if (preds.size() != truths.size())
            throw sp::ConfigError("eval: pose and truth files differ in sample count");
    } else {
        if (args.checkpoint.empty() || args.annotations.empty())
            throw sp::ConfigError(
                "eval: expected either --poses + --truth or --checkpoint + --annotations");
        sp::PoseModel model = sp::load_checkpoint(args.checkpoint);
        const std::string base_dir =
            args.images.empty() ? sibling_dir(args.annotations) : args.images;
        const auto samples = sp::make_samples(sp::load_annotations(args.annotations), base_dir,
                                              model.config().input_size);
        if (samples.empty()) throw sp::ConfigError("eval: no samples");
        preds = sp::predict_poses(model, samples, args.batch_size);
        for (const auto& s : samples) truths.push_back(s.pose);
    }
    print_metric_tables(preds, truths, mflags);
    return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint;
    std::string image;
    std::string annotations;
    std::string images;
    int index = 0;
    std::string center;
    double scale = 0;
    std::string out_dir;
};

int run_predict(const PredictArgs& args) {
    sp::PoseModel model = sp::load_checkpoint(args.checkpoint);
    const sp::ModelConfig& mcfg = model.config();

    // Resolve the source image and its crop frame.
    sp::Tensor source;
    sp::Annotation ann;
    if (!args.image.empty()) {
        source = sp::read_png(args.image);
        ann.image_ref = args.image;
        const int h = source.dim(1), w = source.dim(2);
        if (!args.center.empty()) {
            const auto [cx, cy] = parse_pair(args.center, "--center");
            ann.cx = static_cast<sp::real>(cx);
            ann.cy = static_cast<sp::real>(cy);
        } else {
            ann.cx = static_cast<sp::real>(w) / 2;
            ann.cy = static_cast<sp::real>(h) / 2;
        }
        ann.scale = args.scale > 0 ? static_cast<sp::real>(args.scale)
                                   : static_cast<sp::real>(std::min(h, w)) / sp::kCropReference;
    } else if (!args.annotations.empty()) {
        const auto anns = sp::load_annotations(args.annotations);
        if (args.index < 0 || args.index >= static_cast<int>(anns.size()))
            throw sp::ConfigError("predict: --index out of range");
        ann = anns[static_cast<size_t>(args.index)];
        const std::string base_dir =
            args.images.empty() ? sibling_dir(args.annotations) : args.images;
        source = sp::load_sample_image(ann, base_dir);
    } else {
        throw sp::ConfigError("predict: expected --image or --annotations");
    }

    const sp::CropFrame frame = sp::CropFrame::of(ann);
    sp::Affine out_to_in;
    out_to_in.a = frame.side / static_cast<sp::real>(mcfg.input_size);
    out_to_in.d = frame.side / static_cast<sp::real>(mcfg.input_size);
    out_to_in.tx = frame.left;
    out_to_in.ty = frame.top;
    sp::Tensor crop = sp::warp_affine(source, out_to_in, mcfg.input_size, mcfg.input_size);

    std::vector<const sp::Tensor*> one = {&crop};
    sp::PredictionSet set = model.forward(sp::stack_images(one), /*training=*/false);
    const sp::Pose pose = sp::PoseModel::extract_pose(set, 0);

    fs::create_directories(args.out_dir);

    // Pose file: normalized crop coordinates plus the frame that maps them
    // back to source pixels (px = left + x * side).
    sp::Annotation out_ann;
    out_ann.image_ref = ann.image_ref.empty() ? "-" : ann.image_ref;
    out_ann.cx = ann.cx;
    out_ann.cy = ann.cy;
    out_ann.scale = ann.scale;
    for (int j = 0; j < pose.n_joints(); ++j) {
        out_ann.joints.push_back(pose.x(j));
        out_ann.joints.push_back(pose.y(j));
        out_ann.visible.push_back(pose.prob[static_cast<size_t>(j)] >= sp::real(0.5));
    }
    sp::save_annotations(args.out_dir + "/pose.txt", {out_ann});

    // Overlay: limbs first, joint discs on top, in source-image pixels.
    sp::Tensor overlay = source;
    const auto limbs = default_limbs(pose.n_joints());
    const sp::real thickness = std::max<sp::real>(2, frame.side / 64);
    for (size_t l = 0; l < limbs.size(); ++l) {
        const auto [a, b] = limbs[l];
        const auto pa = frame.denormalize(pose.x(a), pose.y(a));
        const auto pb = frame.denormalize(pose.x(b), pose.y(b));
        sp::draw_line(overlay, pa[0], pa[1], pb[0], pb[1], thickness,
                      sp::limb_color(static_cast<int>(l)));
    }
    for (int j = 0; j < pose.n_joints(); ++j) {
        const auto p = frame.denormalize(pose.x(j), pose.y(j));
        sp::draw_disc(overlay, p[0], p[1], std::max<sp::real>(sp::real(2.5), frame.side / 48),
                      sp::joint_color(j));
    }
    sp::write_png(args.out_dir + "/overlay.png", overlay);

    // Heat-map mosaic of the final block (detection + context channels).
    const sp::Tensor maps = set.final_block().maps.all;
    const sp::Tensor flat =
        sp::reshape(maps, {maps.dim(1), maps.dim(2), maps.dim(3)});
    sp::write_png(args.out_dir + "/heatmaps.png", sp::heatmap_mosaic(flat));

    const auto names = joint_names_for(pose.n_joints());
    for (int j = 0; j < pose.n_joints(); ++j) {
        const auto p = frame.denormalize(pose.x(j), pose.y(j));
        std::printf("%-8s x=%8.2f y=%8.2f p=%.3f\n", names[static_cast<size_t>(j)].c_str(),
                    static_cast<double>(p[0]), static_cast<double>(p[1]),
                    static_cast<double>(pose.prob[static_cast<size_t>(j)]));
    }
    std::cout << "wrote pose.txt, overlay.png, heatmaps.png to " << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    int instances = 20;
    uint64_t seed = 811;
};

int run_gradcheck(const GradcheckArgs& args) {
    if (args.instances < 1) throw sp::ConfigError("gradcheck: --instances must be >= 1");
    const auto cases = sp::gradsuite::build_suite(args.instances, args.seed);
    int failures = 0;
    for (const auto& c : cases) {
        const sp::real err = c.run();
        const bool ok = err < c.tolerance;
        failures += ok ? 0 : 1;
        std::printf("%-32s max_rel_err=%10.3e tol=%7.1e %s\n", c.name.c_str(),
                    static_cast<double>(err), static_cast<double>(c.tolerance),
                    ok ? "PASS" : "FAIL");
    }
    std::cout << cases.size() - static_cast<size_t>(failures) << "/" << cases.size()
              << " gradient checks passed\n";
    if (failures > 0)
        throw sp::NumericError(std::to_string(failures) + " gradient checks failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"softpose: differentiable soft-argmax pose regression toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI file ([subcommand] sections)");

    ModelFlags train_model, grad_model;
    TrainArgs train_args;
    EvalArgs eval_args;
    PredictArgs predict_args;
    GradcheckArgs grad_args;
    SynthArgs synth_args;
    MetricFlags eval_metrics;

    CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--annotations", train_args.annotations, "Training annotation file")
        ->required()
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--images", train_args.images, "Image directory (default: annotation dir)");
    train_cmd->add_option("--val-annotations", train_args.val_annotations,
                          "Separate validation annotations")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--val-fraction", train_args.val_fraction,
                          "Validation carve when no --val-annotations (last fraction)")
        ->capture_default_str();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--epochs", train_args.epochs, "Training epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", train_args.batch_size, "Batch size")
        ->capture_default_str();
    train_cmd->add_option("--lr", train_args.lr, "Initial learning rate")->capture_default_str();
    train_cmd->add_option("--seed", train_args.seed, "Training seed (shuffle/augment)")
        ->capture_default_str();
    train_cmd->add_flag("--augment", train_args.augment, "Enable rotation/rescale augmentation");
    train_cmd->add_option("--rotation", train_args.rotation, "Augment rotation range (degrees)")
        ->capture_default_str();
    train_cmd->add_option("--scale-min", train_args.scale_min, "Augment rescale lower bound")
        ->capture_default_str();
    train_cmd->add_option("--scale-max", train_args.scale_max, "Augment rescale upper bound")
        ->capture_default_str();
    train_cmd->add_option("--lambda-p", train_args.lambda_p, "Probability-loss weight")
        ->capture_default_str();
    train_cmd->add_option("--pck-threshold", train_args.pck_threshold, "Validation PCK threshold")
        ->capture_default_str();
    train_cmd->add_option("--normalizer", train_args.normalizer,
                          "Validation PCK normalizer joints 'a,b'")
        ->capture_default_str();
    train_cmd->add_option("--target-pck", train_args.target_pck,
                          "Stop early at this validation PCK (0 = off)")
        ->capture_default_str();
    train_cmd->add_option("--patience", train_args.patience, "Plateau patience (epochs)")
        ->capture_default_str();
    train_cmd->add_option("--factor", train_args.factor, "Plateau learning-rate factor")
        ->capture_default_str();
    train_cmd->add_flag("--resume", train_args.resume,
                        "Continue from <out>/last up to --epochs total (model flags are ignored)");
    add_model_flags(train_cmd, train_model);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Print PCK/PCKh/PCP tables");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint,
                         "Checkpoint base path (expects .manifest/.blob)");
    eval_cmd->add_option("--annotations", eval_args.annotations, "Evaluation annotation file");
    eval_cmd->add_option("--images", eval_args.images, "Image directory");
    eval_cmd->add_option("--poses", eval_args.poses, "Predicted pose file (fixture mode)");
    eval_cmd->add_option("--truth", eval_args.truth, "Ground-truth pose file (fixture mode)");
    eval_cmd->add_option("--batch-size", eval_args.batch_size, "Inference batch size")
        ->capture_default_str();
    add_metric_flags(eval_cmd, eval_metrics);

    CLI::App* predict_cmd = app.add_subcommand("predict", "Predict one image");
    predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint base path")
        ->required();
    predict_cmd->add_option("--image", predict_args.image, "Input PNG");
    predict_cmd->add_option("--center", predict_args.center, "Crop center 'x,y' (default: middle)");
    predict_cmd->add_option("--scale", predict_args.scale, "Crop scale (side = scale * 200 px)");
    predict_cmd->add_option("--annotations", predict_args.annotations,
                            "Annotation file to pick the crop from");
    predict_cmd->add_option("--index", predict_args.index, "Annotation index")
        ->capture_default_str();
    predict_cmd->add_option("--images", predict_args.images, "Image directory");
    predict_cmd->add_option("--out", predict_args.out_dir, "Output directory")->required();

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Run the gradient-check suite");
    grad_cmd->add_option("--instances", grad_args.instances, "Random instances per case")
        ->capture_default_str();
    grad_cmd->add_option("--seed", grad_args.seed, "Suite seed")->capture_default_str();
    add_model_flags(grad_cmd, grad_model);  // accepted for interface symmetry

    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth_cmd->add_option("--count", synth_args.count, "Number of samples")->required();
    synth_cmd->add_option("--out", synth_args.out_dir, "Output directory")->required();
    synth_cmd->add_option("--seed", synth_args.seed, "Dataset seed")->capture_default_str();
    synth_cmd->add_option("--canvas", synth_args.canvas, "Canvas side (pixels)")
        ->capture_default_str();
    synth_cmd->add_option("--radius", synth_args.radius, "Blob radius (pixels)")
        ->capture_default_str();
    synth_cmd->add_option("--noise", synth_args.noise, "Background noise amplitude")
        ->capture_default_str();
    synth_cmd->add_option("--angle-range", synth_args.angle_range, "Bone angle wobble (radians)")
        ->capture_default_str();
    synth_cmd->add_option("--length-jitter", synth_args.length_jitter,
                          "Relative bone-length jitter")
        ->capture_default_str();
    synth_cmd->add_flag("--png", synth_args.png, "Write PNGs instead of inline references");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);  // prints help or the usage error
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return run_train(train_args, train_model);
        if (eval_cmd->parsed()) return run_eval(eval_args, eval_metrics);
        if (predict_cmd->parsed()) return run_predict(predict_args);
        if (grad_cmd->parsed()) return run_gradcheck(grad_args);
        if (synth_cmd->parsed()) return run_synth(synth_args);
    } catch (const sp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const sp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
