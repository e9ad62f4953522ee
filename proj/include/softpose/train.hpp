#pragma once

// Training loop: RMSProp over the intermediate-supervision loss, per-epoch
// validation PCK, plateau learning-rate schedule, best/last checkpoints, and
// a resumable optimizer-state sidecar.  Every random choice derives from
// (seed, epoch, sample), so a resumed run continues the exact trajectory of
// an unbroken one and two runs with equal inputs match bit for bit.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "softpose/checkpoint.hpp"
#include "softpose/data.hpp"
#include "softpose/losses.hpp"
#include "softpose/metrics.hpp"
#include "softpose/model.hpp"
#include "softpose/optim.hpp"

namespace softpose {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    real initial_lr = real(1e-3);
    real rho = real(0.9);
    real eps = real(1e-8);
    real lambda_p = real(0.01);
    uint64_t seed = 1;

    bool augment = false;          // rotation/rescale augmentation on training crops
    AugmentParams augment_params;  // seed field ignored; per-sample seeds are derived

    real pck_threshold = real(0.2);        // validation metric: PCK at this threshold
    std::pair<int, int> normalizer{0, 1};  // joints defining the PCK reference segment
    real target_pck = 0;                   // stop early once val PCK reaches this (0 = off)

    PlateauConfig plateau;
    std::string out_dir = "run";

    /// Optional progress hook, called once per completed epoch.  Must not
    /// perturb training state; it does not participate in determinism.
    std::function<void(const struct EpochLog&)> on_epoch;

    void validate() const {
        detail::check(epochs >= 0, "TrainConfig: epochs must be >= 0");
        detail::check(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        detail::check(initial_lr > 0, "TrainConfig: initial_lr must be positive");
        detail::check(rho > 0 && rho < 1 && eps >= 0, "TrainConfig: invalid RMSProp constants");
        detail::check(lambda_p >= 0, "TrainConfig: lambda_p must be >= 0");
        detail::check(pck_threshold > 0, "TrainConfig: pck_threshold must be positive");
        detail::check(target_pck >= 0 && target_pck <= 1,
                      "TrainConfig: target_pck must be in [0, 1]");
        detail::check(!out_dir.empty(), "TrainConfig: out_dir must be set");
        plateau.validate();
    }

    std::string last_base() const { return out_dir + "/last"; }
    std::string best_base() const { return out_dir + "/best"; }
    std::string state_base() const { return out_dir + "/last_state"; }
    std::string runlog_path() const { return out_dir + "/runlog.txt"; }
};

// ---------------------------------------------------------------------------
// Run log.
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;       // 1-based
    real loss = 0;       // sample-weighted mean total loss over the epoch
    real coord = 0;      // coordinate (elastic-net) part
    real prob = 0;       // probability (BCE) part, before lambda_p weighting
    real val_pck = 0;    // validation PCK fraction in [0, 1]
    real lr = 0;         // learning rate used during this epoch
    double seconds = 0;  // wall clock; excluded from determinism guarantees

    /// All deterministic fields, formatted losslessly.
    std::string deterministic_line() const {
        std::string s = "epoch=" + std::to_string(epoch);
        s += " loss=" + detail::real_str(loss);
        s += " coord=" + detail::real_str(coord);
        s += " prob=" + detail::real_str(prob);
        s += " val_pck=" + detail::real_str(val_pck);
        s += " lr=" + detail::real_str(lr);
        return s;
    }
    std::string line() const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", seconds);
        return deterministic_line() + " seconds=" + buf;
    }
};

struct RunLog {
    std::vector<EpochLog> epochs;

    std::string deterministic_text() const {
        std::string s;
        for (const EpochLog& e : epochs) s += e.deterministic_line() + "\n";
        return s;
    }
};

/// Strip the wall-clock field from a run-log line so files from different
/// runs can be compared for bit-identical trajectories.
inline std::string strip_seconds(const std::string& line) {
    const size_t pos = line.find(" seconds=");
    return pos == std::string::npos ? line : line.substr(0, pos);
}

// ---------------------------------------------------------------------------
// Optimizer-state sidecar (same manifest+blob format as checkpoints).
// ---------------------------------------------------------------------------

struct TrainState {
    RmsPropState opt;
    int epoch = 0;       // epochs completed so far
    real lr = 0;         // learning rate for the next epoch
    real sched_best = 0; // plateau scheduler's best score
    int sched_wait = 0;  // plateau scheduler's flat-epoch counter
    real best_val = -1;  // best validation PCK seen (checkpoint selection)
};

inline void save_train_state(const std::string& base, const ParamList& params,
                             const TrainState& st) {
    detail::check(st.opt.matches(params), "save_train_state: state/parameter mismatch");
    detail::Manifest m;
    m.header = {
        {"softpose_trainstate", "1"},
        {"elem_type", sizeof(real) == 8 ? "f64" : "f32"},
        {"endianness", "little"},
        {"epoch", std::to_string(st.epoch)},
        {"lr", detail::real_str(st.lr)},
        {"sched_best", detail::real_str(st.sched_best)},
        {"sched_wait", std::to_string(st.sched_wait)},
        {"best_val", detail::real_str(st.best_val)},
    };
    std::vector<const std::vector<real>*> data;
    for (size_t i = 0; i < params.size(); ++i) {
        m.arrays.push_back({"v." + params[i].name, params[i].tensor.shape(), 0});
        data.push_back(&st.opt.v[i]);
    }
    detail::write_manifest_blob(base, std::move(m), data);
}

inline TrainState load_train_state(const std::string& base, const ParamList& params) {
    detail::LoadedArrays loaded = detail::read_manifest_blob(base);
    if (loaded.manifest.value("softpose_trainstate") != "1")
        throw ConfigError(base + ": unsupported training-state format version");
    TrainState st;
    st.epoch = std::stoi(loaded.manifest.value("epoch"));
    st.lr = static_cast<real>(std::stod(loaded.manifest.value("lr")));
    st.sched_best = static_cast<real>(std::stod(loaded.manifest.value("sched_best")));
    st.sched_wait = std::stoi(loaded.manifest.value("sched_wait"));
    st.best_val = static_cast<real>(std::stod(loaded.manifest.value("best_val")));

    if (loaded.manifest.arrays.size() != params.size())
        throw ConfigError(base + ": optimizer state array count does not match the model");
    st.opt.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& a = loaded.manifest.arrays[i];
        if (a.name != "v." + params[i].name)
            throw ConfigError(base + ": unexpected state array '" + a.name + "'");
        if (a.shape != params[i].tensor.shape())
            throw ConfigError(base + ": shape mismatch for '" + a.name + "'");
        st.opt.v[i] = std::move(loaded.data[i]);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Batched helpers.
// ---------------------------------------------------------------------------

/// Stack sample crops (all 3 x S x S) into one B x 3 x S x S input tensor.
inline Tensor stack_images(const std::vector<const Tensor*>& crops) {
    detail::check(!crops.empty(), "stack_images: empty batch");
    const int S = crops[0]->dim(1);
    Tensor batch = Tensor::zeros({static_cast<int>(crops.size()), 3, S, S});
    const int64_t per = static_cast<int64_t>(3) * S * S;
    for (size_t n = 0; n < crops.size(); ++n) {
        detail::check((*crops[n]).rank() == 3 && crops[n]->dim(0) == 3 &&
                          crops[n]->dim(1) == S && crops[n]->dim(2) == S,
                      "stack_images: inconsistent crop shapes");
        std::copy(crops[n]->data(), crops[n]->data() + per,
                  batch.data() + static_cast<int64_t>(n) * per);
    }
    return batch;
}

/// Final-block poses for a whole sample set, evaluated in inference mode in
/// deterministic batches.
inline std::vector<Pose> predict_poses(PoseModel& model, const std::vector<Sample>& samples,
                                       int batch_size) {
    std::vector<Pose> out;
    out.reserve(samples.size());
    for (size_t b0 = 0; b0 < samples.size(); b0 += static_cast<size_t>(batch_size)) {
        const size_t b1 = std::min(samples.size(), b0 + static_cast<size_t>(batch_size));
        std::vector<const Tensor*> crops;
        for (size_t i = b0; i < b1; ++i) crops.push_back(&samples[i].image);
        PredictionSet set = model.forward(stack_images(crops), /*training=*/false);
        for (size_t i = b0; i < b1; ++i)
            out.push_back(PoseModel::extract_pose(set, static_cast<int>(i - b0)));
    }
    return out;
}

/// Validation PCK as a fraction in [0, 1].
inline real validation_pck(PoseModel& model, const std::vector<Sample>& val, real threshold,
                           std::pair<int, int> normalizer, int batch_size) {
    detail::check(!val.empty(), "validation_pck: empty validation set");
    const std::vector<Pose> preds = predict_poses(model, val, batch_size);
    std::vector<Pose> truths;
    truths.reserve(val.size());
    for (const Sample& s : val) truths.push_back(s.pose);
    MetricConfig mc;
    mc.threshold = threshold;
    mc.normalizer = normalizer;
    return pck(preds, truths, mc).mean / 100;
}

// ---------------------------------------------------------------------------
// The training loop.
// ---------------------------------------------------------------------------

struct TrainOutcome {
    RunLog log;          // epochs run by this call only
    real best_val = -1;  // best validation PCK over the whole run (incl. resumed-from part)
    int epochs_completed = 0;  // total epochs in the checkpoint after this call
};

namespace detail {

inline uint64_t shuffle_seed(uint64_t base, int epoch) {
    return derive_seed(base, static_cast<uint64_t>(epoch), 0xE0);
}
inline uint64_t augment_seed(uint64_t base, int epoch, size_t sample_index) {
    return derive_seed(base, static_cast<uint64_t>(epoch), 0xA0 + sample_index);
}

/// Epochs `start.epoch` .. cfg.epochs-1 (0-based).  `fresh` truncates the
/// run log and writes the initialization checkpoint; resume appends.
inline TrainOutcome train_loop(PoseModel& model, const std::vector<Sample>& train_set,
                               const std::vector<Sample>& val_set, const TrainConfig& cfg,
                               TrainState start, bool fresh) {
    cfg.validate();
    check(!train_set.empty(), "train: training set must be nonempty");
    check(!val_set.empty(), "train: validation set must be nonempty");
    const ModelConfig& mc = model.config();
    for (const Sample& s : train_set)
        check(s.pose.n_joints() == mc.n_joints && s.image.dim(1) == mc.input_size,
              "train: sample geometry does not match the model");

    std::filesystem::create_directories(cfg.out_dir);
    ParamList& params = model.parameters();
    if (start.opt.v.empty()) start.opt.init(params);
    check(start.opt.matches(params), "train: optimizer state does not match the model");

    PlateauScheduler sched(cfg.initial_lr, cfg.plateau);
    real lr = cfg.initial_lr;
    if (fresh) {
        start.lr = cfg.initial_lr;
        save_checkpoint(cfg.last_base(), model);  // epochs=0 leaves initialization
        save_train_state(cfg.state_base(), params, start);
        std::ofstream(cfg.runlog_path(), std::ios::trunc);
    } else {
        sched.restore(start.lr, start.sched_best, start.sched_wait);
        lr = start.lr;
    }

    TrainOutcome outcome;
    outcome.best_val = start.best_val;
    outcome.epochs_completed = start.epoch;

    for (int epoch = start.epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(shuffle_seed(cfg.seed, epoch));
        shuffle(order, shuffle_rng);

        real loss_sum = 0, coord_sum = 0, prob_sum = 0;
        const size_t n = order.size();
        for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(cfg.batch_size)) {
            const size_t b1 = std::min(n, b0 + static_cast<size_t>(cfg.batch_size));
            const int batch_index = static_cast<int>(b0 / static_cast<size_t>(cfg.batch_size));

            std::vector<Tensor> aug_storage;
            std::vector<const Tensor*> crops;
            std::vector<Pose> truths;
            for (size_t i = b0; i < b1; ++i) {
                const Sample& s = train_set[order[i]];
                if (cfg.augment) {
                    AugmentParams p = cfg.augment_params;
                    p.seed = augment_seed(cfg.seed, epoch, order[i]);
                    auto [img, pose] = augment(s.image, s.pose, p);
                    aug_storage.push_back(std::move(img));
                    truths.push_back(std::move(pose));
                } else {
                    crops.push_back(&s.image);
                    truths.push_back(s.pose);
                }
            }
            for (const Tensor& t : aug_storage) crops.push_back(&t);

            TrainingLoss tl;
            try {
                PredictionSet set = model.forward(stack_images(crops), /*training=*/true);
                const BatchTargets targets = make_targets(truths, mc.n_context);
                tl = training_loss(set, targets, cfg.lambda_p);
                if (!std::isfinite(tl.total.data()[0]))
                    throw NumericError("non-finite training loss");
                model.zero_grad();
                tl.total.backward();
                rmsprop_step(params, start.opt, lr, cfg.rho, cfg.eps);
            } catch (const NumericError& e) {
                throw NumericError("train: epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }

            const real w = static_cast<real>(b1 - b0);
            loss_sum += tl.report.total * w;
            coord_sum += tl.report.coordinate_loss * w;
            prob_sum += tl.report.probability_loss * w;
        }

        const real val =
            validation_pck(model, val_set, cfg.pck_threshold, cfg.normalizer, cfg.batch_size);

        EpochLog log;
        log.epoch = epoch + 1;
        log.loss = loss_sum / static_cast<real>(n);
        log.coord = coord_sum / static_cast<real>(n);
        log.prob = prob_sum / static_cast<real>(n);
        log.val_pck = val;
        log.lr = lr;
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        outcome.log.epochs.push_back(log);
        {
            std::ofstream rf(cfg.runlog_path(), std::ios::app);
            if (!rf) throw ConfigError("cannot write " + cfg.runlog_path());
            rf << log.line() << "\n";
        }
        if (cfg.on_epoch) cfg.on_epoch(log);

        lr = sched.observe(val);
        start.epoch = epoch + 1;
        start.lr = lr;
        start.sched_best = sched.best();
        start.sched_wait = sched.wait();
        if (val > outcome.best_val) {
            outcome.best_val = val;
            save_checkpoint(cfg.best_base(), model);
        }
        start.best_val = outcome.best_val;
        save_checkpoint(cfg.last_base(), model);
        save_train_state(cfg.state_base(), params, start);
        outcome.epochs_completed = epoch + 1;

        if (cfg.target_pck > 0 && val >= cfg.target_pck) break;
    }
    return outcome;
}

} // namespace detail

/// Train `model` from scratch, writing best/last checkpoints, optimizer
/// state and the run log under cfg.out_dir.
inline TrainOutcome train(PoseModel& model, const std::vector<Sample>& train_set,
                          const std::vector<Sample>& val_set, const TrainConfig& cfg) {
    return detail::train_loop(model, train_set, val_set, cfg, TrainState{}, /*fresh=*/true);
}

/// Continue a run from cfg.out_dir's last checkpoint + optimizer state up to
/// cfg.epochs total epochs.  The trajectory is bit-identical to an unbroken
/// run with the same seed and data.
struct ResumedRun {
    PoseModel model;
    TrainOutcome outcome;
};

inline ResumedRun resume_train(const std::vector<Sample>& train_set,
                               const std::vector<Sample>& val_set, const TrainConfig& cfg) {
    PoseModel model = load_checkpoint(cfg.last_base());
    TrainState st = load_train_state(cfg.state_base(), model.parameters());
    TrainOutcome outcome = detail::train_loop(model, train_set, val_set, cfg, std::move(st),
                                              /*fresh=*/false);
    return {std::move(model), std::move(outcome)};
}

} // namespace softpose
