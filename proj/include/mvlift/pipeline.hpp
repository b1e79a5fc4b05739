#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvlift/checkpoint.hpp"
#include "mvlift/config.hpp"
#include "mvlift/dataset.hpp"
#include "mvlift/diffusion.hpp"
#include "mvlift/lift3d.hpp"
#include "mvlift/manifest.hpp"
#include "mvlift/metrics.hpp"
#include "mvlift/motion.hpp"
#include "mvlift/mv_optimize.hpp"
#include "mvlift/render.hpp"
#include "mvlift/training.hpp"

namespace mvlift {

namespace detail {

inline std::string join_path(const std::string& root, const std::string& rel) {
    return (std::filesystem::path(root) / rel).string();
}

inline std::string resolve_under(const std::string& root, const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (std::filesystem::path(root) / fp).string();
}

inline void require_artifact(const std::string& path, const std::string& hint) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("missing artifact '" + path + "' (" + hint + ")");
}

inline std::string sequence_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%04d", prefix, i);
    return buf;
}

template <class F>
void timed_stage(RunManifest& man, const std::string& label, F&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    man.timings.emplace_back(
        label, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline Checkpoint load_model(const std::string& path, const std::string& kind,
                             const std::string& hint) {
    require_artifact(path, hint);
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.model_kind != kind)
        throw CheckpointError(path + ": expected a " + kind + " checkpoint, found '" +
                              ckpt.model_kind + "'");
    return ckpt;
}

inline double smoothed_tail_loss(const TrainLog& log) {
    if (log.steps.empty()) return 0.0;
    std::size_t w = std::min<std::size_t>(50, log.steps.size());
    double acc = 0.0;
    for (std::size_t i = log.steps.size() - w; i < log.steps.size(); ++i)
        acc += log.steps[i].total;
    return acc / static_cast<double>(w);
}

inline void training_metrics(RunManifest& man, const TrainResult& res) {
    man.metrics.emplace_back("steps_done", std::to_string(res.checkpoint.steps_done));
    if (!res.log.steps.empty()) {
        man.metrics.emplace_back("initial_loss", format_g17(res.log.steps.front().total));
        man.metrics.emplace_back("final_loss_smoothed", format_g17(smoothed_tail_loss(res.log)));
    }
}

inline std::function<void(std::uint64_t, const TrainingLossParts&)> progress_printer(
    const char* tag, int total_steps) {
    std::uint64_t every = std::max(1, total_steps / 20);
    return [tag, every, total_steps](std::uint64_t step, const TrainingLossParts& parts) {
        if (step % every == 0 || step + 1 == static_cast<std::uint64_t>(total_steps))
            std::fprintf(stderr, "%s step %llu loss %.6f (recon %.6f line %.6f)\n", tag,
                         static_cast<unsigned long long>(step), parts.total, parts.recon,
                         parts.line);
    };
}

// Rows of one multi-view sequence file, indexed by view; throws unless views
// are exactly 0..n_views-1 with a shared id and shape.
inline std::vector<Pose2DSequence> rows_by_view(const std::vector<Record2D>& recs, int n_views,
                                                const std::string& where) {
    if (static_cast<int>(recs.size()) != n_views)
        throw SchemaError(where + ": expected " + std::to_string(n_views) + " rows, found " +
                          std::to_string(recs.size()));
    std::vector<Pose2DSequence> views(n_views);
    std::vector<bool> seen(n_views, false);
    for (const auto& rec : recs) {
        if (!rec.view || *rec.view < 0 || *rec.view >= n_views)
            throw SchemaError(where + ": record '" + rec.id + "' has no usable 'view' field");
        if (seen[*rec.view]) throw SchemaError(where + ": duplicate view " + std::to_string(*rec.view));
        if (rec.id != recs[0].id) throw SchemaError(where + ": mixed sequence ids");
        seen[*rec.view] = true;
        views[*rec.view] = rec.seq;
    }
    for (int v = 0; v < n_views; ++v)
        if (views[v].frame_count() != views[0].frame_count() ||
            views[v].joint_count() != views[0].joint_count())
            throw SchemaError(where + ": view shape mismatch");
    return views;
}

}  // namespace detail

inline CameraRig rig_from_config(const PipelineConfig& cfg, int n_views, double angle_step_deg) {
    CameraIntrinsics K;
    K.fx = cfg.rig_fx;
    K.fy = cfg.rig_fy;
    K.cx = cfg.rig_cx;
    K.cy = cfg.rig_cy;
    return build_circular_rig(n_views, angle_step_deg, cfg.rig_radius, cfg.rig_height, K);
}

inline SyntheticMotionSpec motion_spec_for(const PipelineConfig& cfg, int index) {
    SyntheticMotionSpec spec = default_motion_spec();
    spec.frame_count = cfg.synth_frames;
    spec.fps = cfg.synth_fps;
    spec.amplitude = cfg.synth_amplitude;
    spec.freq_min = cfg.synth_freq_min;
    spec.freq_max = cfg.synth_freq_max;
    spec.root_path.speed = cfg.synth_path_speed;
    spec.root_path.scale = cfg.synth_path_scale;
    spec.root_z = cfg.synth_root_z;
    if (cfg.synth_path_kind == "line")
        spec.root_path.kind = RootPathSpec::Line;
    else if (cfg.synth_path_kind == "circle")
        spec.root_path.kind = RootPathSpec::Circle;
    else if (cfg.synth_path_kind == "figure8")
        spec.root_path.kind = RootPathSpec::FigureEight;
    else  // "mix": cycle through the three path families
        spec.root_path.kind = std::array<RootPathSpec::Kind, 3>{
            RootPathSpec::Line, RootPathSpec::Circle, RootPathSpec::FigureEight}[index % 3];
    return spec;
}

// Synthesizes the 3D oracle corpus and its single-view 2D projections. Each
// training sequence lands in one randomly drawn rig view; held-out sequences
// are always projected to view 0, the canonical input view.
inline RunManifest run_gen_synth(const PipelineConfig& cfg, const std::string& out_root) {
    RunManifest man;
    man.command = "gen-synth";
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    CameraRig rig = rig_from_config(cfg, 6, 60.0);
    save_rig(detail::join_path(out_root, "rig.txt"), rig);

    const int n_train = cfg.synth_train_count, n_hold = cfg.synth_holdout_count;
    std::vector<Record3D> train3(n_train), hold3(n_hold);
    std::vector<Record2D> train2(n_train), hold2(n_hold);
    const std::vector<int>& parents = default_skeleton().parent;

    detail::timed_stage(man, "generate", [&] {
        parallel_for(n_train, [&](int i) {
            Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(1 + i));
            Pose3DSequence s3 = generate_synthetic_motion(motion_spec_for(cfg, i), rng);
            int view = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(rig.view_count())));
            std::string id = detail::sequence_id("train", i);
            train3[i] = Record3D{id, cfg.synth_fps, parents, s3};
            train2[i] = Record2D{id, cfg.synth_fps, {}, {}, view, "rig6",
                                 project_sequence(s3, rig, view)};
        });
        parallel_for(n_hold, [&](int i) {
            Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(1 + n_train + i));
            Pose3DSequence s3 = generate_synthetic_motion(motion_spec_for(cfg, n_train + i), rng);
            std::string id = detail::sequence_id("holdout", i);
            hold3[i] = Record3D{id, cfg.synth_fps, parents, s3};
            hold2[i] = Record2D{id, cfg.synth_fps, {}, {}, 0, "rig6",
                                project_sequence(s3, rig, 0)};
        });
    });

    detail::timed_stage(man, "write", [&] {
        save_dataset3d(detail::join_path(out_root, "train3d.jsonl"), train3);
        save_dataset(detail::join_path(out_root, "train2d.jsonl"), train2);
        save_dataset3d(detail::join_path(out_root, "holdout3d.jsonl"), hold3);
        save_dataset(detail::join_path(out_root, "holdout2d.jsonl"), hold2);
    });

    // Every persisted 2D sequence must be the projection of its persisted 3D
    // source; verified on reloaded files so serialization is covered too.
    double max_err = 0.0;
    detail::timed_stage(man, "verify", [&] {
        CameraRig r = load_rig(detail::join_path(out_root, "rig.txt"));
        auto check = [&](const std::string& f3, const std::string& f2) {
            auto recs3 = load_dataset3d(detail::join_path(out_root, f3));
            auto recs2 = load_dataset(detail::join_path(out_root, f2));
            if (recs3.size() != recs2.size()) throw Error("gen-synth: dataset size mismatch");
            for (std::size_t i = 0; i < recs3.size(); ++i) {
                if (recs3[i].id != recs2[i].id) throw Error("gen-synth: dataset id mismatch");
                Pose2DSequence proj = project_sequence(recs3[i].seq, r, recs2[i].view.value());
                double err = (proj.data - recs2[i].seq.data).cwiseAbs().maxCoeff();
                max_err = std::max(max_err, err);
            }
        };
        if (n_train > 0) check("train3d.jsonl", "train2d.jsonl");
        if (n_hold > 0) check("holdout3d.jsonl", "holdout2d.jsonl");
        if (!(max_err < 1e-9))
            throw Error("gen-synth: re-projection check failed (max error " +
                        format_g17(max_err) + ")");
    });

    for (const char* f : {"rig.txt", "train3d.jsonl", "train2d.jsonl", "holdout3d.jsonl",
                          "holdout2d.jsonl"})
        man.add_artifact(out_root, f);
    man.metrics.emplace_back("train_sequences", std::to_string(n_train));
    man.metrics.emplace_back("holdout_sequences", std::to_string(n_hold));
    man.metrics.emplace_back("reprojection_max_abs_err", format_g17(max_err));
    save_run_manifest(out_root, man);
    return man;
}

inline RunManifest run_train_lcdm(const PipelineConfig& cfg, const std::string& out_root) {
    RunManifest man;
    man.command = "train-lcdm";
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    std::string data_path = detail::join_path(out_root, "train2d.jsonl");
    detail::require_artifact(data_path, "run gen-synth first");
    std::vector<Record2D> recs = load_dataset(data_path);
    if (recs.empty()) throw EmptyDatasetError("train-lcdm: " + data_path + " has no records");
    std::vector<Pose2DSequence> data;
    data.reserve(recs.size());
    for (const auto& r : recs) data.push_back(r.seq);

    LcdTrainOptions opts;
    opts.model.d_model = cfg.lcdm_d_model;
    opts.model.n_layers = cfg.lcdm_layers;
    opts.model.n_heads = cfg.lcdm_heads;
    opts.model.max_T = cfg.lcdm_window;
    opts.model.joint_count = data[0].joint_count();
    opts.model.view_count = 1;
    opts.model.n_steps = cfg.schedule_steps;
    opts.beta_start = cfg.schedule_beta_start;
    opts.beta_end = cfg.schedule_beta_end;
    opts.train.lambda_line = cfg.lcdm_lambda_line;
    opts.train.batch_size = cfg.lcdm_batch_size;
    opts.train.steps = cfg.lcdm_steps;
    opts.train.learning_rate = cfg.lcdm_learning_rate;
    opts.train.seed = cfg.seed;

    Checkpoint resumed;
    const Checkpoint* resume = nullptr;
    if (!cfg.lcdm_resume_from.empty()) {
        std::string p = detail::resolve_under(out_root, cfg.lcdm_resume_from);
        detail::require_artifact(p, "checkpoint named by lcdm.resume_from");
        resumed = load_checkpoint(p);
        resume = &resumed;
    }

    TrainResult res;
    detail::timed_stage(man, "train", [&] {
        res = train_lcdm(data, opts, resume,
                         detail::progress_printer("train-lcdm", opts.train.steps));
    });

    detail::timed_stage(man, "write", [&] {
        save_checkpoint(detail::join_path(out_root, "lcdm.ckpt"), res.checkpoint);
        write_text_file_atomic(detail::join_path(out_root, "train-lcdm.log.txt"),
                               res.log.to_text());
    });
    man.add_artifact(out_root, "lcdm.ckpt");
    man.add_artifact(out_root, "train-lcdm.log.txt");
    detail::training_metrics(man, res);
    save_run_manifest(out_root, man);
    return man;
}

inline RunManifest run_train_mvdm(const PipelineConfig& cfg, const std::string& out_root) {
    RunManifest man;
    man.command = "train-mvdm";
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    std::string data_path = detail::join_path(out_root, "mvdataset.jsonl");
    detail::require_artifact(data_path, "run build-mvdataset first");
    std::vector<Record2D> recs = load_dataset(data_path);
    std::map<std::string, std::vector<Record2D>> by_id;
    for (auto& r : recs) by_id[r.id].push_back(std::move(r));
    std::vector<MvGroup> groups;
    int max_T = 1;
    for (const auto& [id, rows] : by_id) {
        MvGroup g = detail::rows_by_view(rows, 4, data_path + " id '" + id + "'");
        max_T = std::max(max_T, g[0].frame_count());
        groups.push_back(std::move(g));
    }
    if (groups.empty()) throw EmptyDatasetError("train-mvdm: " + data_path + " has no records");

    MvTrainOptions opts;
    opts.model.d_model = cfg.mvdm_d_model;
    opts.model.n_layers = cfg.mvdm_layers;
    opts.model.n_heads = cfg.mvdm_heads;
    opts.model.max_T = max_T;
    opts.model.joint_count = groups[0][0].joint_count();
    opts.model.view_count = 4;
    opts.model.n_steps = cfg.schedule_steps;
    opts.beta_start = cfg.schedule_beta_start;
    opts.beta_end = cfg.schedule_beta_end;
    opts.train.lambda_line = 0.0;
    opts.train.batch_size = cfg.mvdm_batch_size;
    opts.train.steps = cfg.mvdm_steps;
    opts.train.learning_rate = cfg.mvdm_learning_rate;
    opts.train.seed = cfg.seed;

    Checkpoint resumed;
    const Checkpoint* resume = nullptr;
    if (!cfg.mvdm_resume_from.empty()) {
        std::string p = detail::resolve_under(out_root, cfg.mvdm_resume_from);
        detail::require_artifact(p, "checkpoint named by mvdm.resume_from");
        resumed = load_checkpoint(p);
        resume = &resumed;
    }

    TrainResult res;
    detail::timed_stage(man, "train", [&] {
        res = train_mvdm(groups, opts, resume,
                         detail::progress_printer("train-mvdm", opts.train.steps));
    });

    detail::timed_stage(man, "write", [&] {
        save_checkpoint(detail::join_path(out_root, "mvdm.ckpt"), res.checkpoint);
        write_text_file_atomic(detail::join_path(out_root, "train-mvdm.log.txt"),
                               res.log.to_text());
    });
    man.add_artifact(out_root, "mvdm.ckpt");
    man.add_artifact(out_root, "train-mvdm.log.txt");
    detail::training_metrics(man, res);
    save_run_manifest(out_root, man);
    return man;
}

// Stage 1 + Stage 2 for each selected input sequence: sample the five missing
// views from the line-conditioned model, then optimize them against the
// epipolar consistency objective. Artifacts are grouped by source split so a
// training-split run (feeding build-mvdataset) and a holdout run (feeding
// lift --mode stage2) never mix.
inline RunManifest run_optimize_mv(const PipelineConfig& cfg, const std::string& out_root) {
    RunManifest man;
    man.command = "optimize-mv";
    man.mode = cfg.stage2_source;
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    Checkpoint ckpt = detail::load_model(detail::join_path(out_root, "lcdm.ckpt"), "lcdm",
                                         "run train-lcdm first");
    NoiseSchedule sched = ckpt.schedule();
    DenoiserFn denoiser = [&](const Pose2DSequence& x_n, int n, const LineSet& L) {
        return lcd_forward(ckpt.config, ckpt.params, x_n, n, L);
    };

    std::string src_file = cfg.stage2_source == "train" ? "train2d.jsonl" : "holdout2d.jsonl";
    std::string src_path = detail::join_path(out_root, src_file);
    detail::require_artifact(src_path, "run gen-synth first");
    std::vector<Record2D> recs = load_dataset(src_path);

    std::vector<int> pick;
    if (!cfg.stage2_input_id.empty()) {
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (recs[i].id == cfg.stage2_input_id) pick.push_back(static_cast<int>(i));
        if (pick.empty())
            throw ArgumentError("optimize-mv: id '" + cfg.stage2_input_id + "' not found in " +
                                src_path);
    } else {
        int count = cfg.stage2_count == 0
                        ? static_cast<int>(recs.size())
                        : std::min<int>(cfg.stage2_count, static_cast<int>(recs.size()));
        for (int i = 0; i < count; ++i) pick.push_back(i);
    }
    if (pick.empty()) throw EmptyDatasetError("optimize-mv: no input sequences selected");

    CameraRig rig = rig_from_config(cfg, 6, 60.0);
    std::string stage1_dir = "stage1-" + cfg.stage2_source;
    std::string stage2_dir = "stage2-" + cfg.stage2_source;
    double mean_init = 0.0, mean_final = 0.0;

    detail::timed_stage(man, "optimize", [&] {
        for (int idx : pick) {
            const Record2D& rec = recs[idx];
            // Per-input stream; sub-streams 1..5 drive the five stage-1
            // samples and 6 seeds the optimizer, so results do not depend on
            // which other inputs were selected.
            Rng in = Rng(cfg.seed).fork(static_cast<std::uint64_t>(idx + 1));

            std::vector<Record2D> rows(6);
            rows[0] = Record2D{rec.id, rec.fps, {}, {}, 0, "rig6", rec.seq};
            std::vector<Pose2DSequence> init;
            init.reserve(5);
            for (int k = 1; k <= 5; ++k) {
                LineSet L = lines_from_input_view(rec.seq, rig, k);
                Rng r = in.fork(static_cast<std::uint64_t>(k));
                init.push_back(sample(denoiser, L, sched, r));
                rows[k] = Record2D{rec.id, rec.fps, {}, {}, k, "rig6", init.back()};
            }
            save_dataset(detail::join_path(out_root, stage1_dir + "/" + rec.id + ".jsonl"), rows);

            MVOptState st;
            st.phi = std::move(init);
            st.input_seq = rec.seq;
            st.rig = rig;
            st.iterations = cfg.stage2_iterations;
            st.step_size = cfg.stage2_step_size;
            st.w_sds = cfg.stage2_w_sds;
            st.w_mv = cfg.stage2_w_mv;
            st.n_min = cfg.stage2_n_min;
            st.n_max = cfg.stage2_n_max;
            st.seed = in.fork(6).seed();
            MVOptResult res = optimize_multiview(st, denoiser, sched);

            for (int k = 1; k <= 5; ++k)
                rows[k] = Record2D{rec.id, rec.fps, {}, {}, k, "rig6", res.phi[k - 1]};
            save_dataset(detail::join_path(out_root, stage2_dir + "/" + rec.id + ".jsonl"), rows);
            write_text_file_atomic(
                detail::join_path(out_root, stage2_dir + "/" + rec.id + ".trace.txt"),
                res.trace_to_text());

            man.add_artifact(out_root, stage1_dir + "/" + rec.id + ".jsonl");
            man.add_artifact(out_root, stage2_dir + "/" + rec.id + ".jsonl");
            man.add_artifact(out_root, stage2_dir + "/" + rec.id + ".trace.txt");
            mean_init += res.consistency_trace.front() / pick.size();
            mean_final += res.consistency_trace.back() / pick.size();
            std::fprintf(stderr, "optimize-mv %s consistency %.6g -> %.6g\n", rec.id.c_str(),
                         res.consistency_trace.front(), res.consistency_trace.back());
        }
    });

    man.metrics.emplace_back("inputs", std::to_string(pick.size()));
    man.metrics.emplace_back("mean_initial_consistency", format_g17(mean_init));
    man.metrics.emplace_back("mean_final_consistency", format_g17(mean_final));
    save_run_manifest(out_root, man);
    return man;
}

// Stage 3: triangulate every optimized training sequence to 3D, then project
// onto the 4-view rig to form the strictly consistent MVDM training set.
inline RunManifest run_build_mvdataset(const PipelineConfig& cfg, const std::string& out_root) {
    RunManifest man;
    man.command = "build-mvdataset";
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    namespace fs = std::filesystem;
    fs::path stage2_dir = fs::path(out_root) / "stage2-train";
    if (!fs::is_directory(stage2_dir))
        throw MissingArtifactError("missing artifact '" + stage2_dir.string() +
                                   "' (run optimize-mv with stage2.source = train first)");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(stage2_dir))
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw MissingArtifactError("no optimized sequences under '" + stage2_dir.string() +
                                   "' (run optimize-mv with stage2.source = train first)");

    CameraRig rig6 = rig_from_config(cfg, 6, 60.0);
    CameraRig rig4 = rig_from_config(cfg, 4, 90.0);
    SkeletonDef skeleton = default_skeleton();
    LiftOptions lopts;
    lopts.smoothness = cfg.lift_smoothness;
    lopts.bone_weight = cfg.lift_bone_weight;
    lopts.max_iterations = cfg.lift_max_iterations;
    lopts.tolerance = cfg.lift_tolerance;

    std::vector<Pose3DSequence> recovered;
    std::vector<std::string> ids;
    std::vector<Record3D> recs3;
    double fps = 20.0;
    detail::timed_stage(man, "recover", [&] {
        for (const std::string& f : files) {
            std::vector<Record2D> rows = load_dataset(f);
            std::vector<Pose2DSequence> views = detail::rows_by_view(rows, 6, f);
            fps = rows[0].fps;
            RecoverResult rr = recover_3d(views, rig6, lopts, &skeleton);
            Pose3DSequence s3 =
                cfg.lift_enforce_bones ? enforce_bone_lengths(rr.seq, skeleton) : rr.seq;
            recovered.push_back(s3);
            ids.push_back(rows[0].id);
            recs3.push_back(Record3D{rows[0].id, rows[0].fps, skeleton.parent, std::move(s3)});
            std::fprintf(stderr, "build-mvdataset %s recovered (reproj rms %.6g)\n",
                         rows[0].id.c_str(), rr.report.joint_residual_rms.mean());
        }
    });

    MVDataset ds;
    detail::timed_stage(man, "project", [&] { ds = build_mv_dataset(recovered, ids, rig4); });

    detail::timed_stage(man, "write", [&] {
        save_dataset3d(detail::join_path(out_root, "mvdataset3d.jsonl"), recs3);
        std::vector<Record2D> rows;
        rows.reserve(ds.entries.size() * 4);
        for (const auto& e : ds.entries)
            for (int v = 0; v < 4; ++v)
                rows.push_back(Record2D{e.id, fps, {}, {}, v, "rig4", e.views[v]});
        save_dataset(detail::join_path(out_root, "mvdataset.jsonl"), rows);
        std::string skipped = "id reason\n";
        for (const auto& [id, reason] : ds.skipped) skipped += id + " " + reason + "\n";
        write_text_file_atomic(detail::join_path(out_root, "mvdataset-skipped.txt"), skipped);
    });

    // Consistency must survive persistence: reload and re-check the epipolar
    // residual on the parsed values.
    double max_resid = 0.0;
    detail::timed_stage(man, "verify", [&] {
        std::vector<Record2D> back =
            load_dataset(detail::join_path(out_root, "mvdataset.jsonl"));
        std::map<std::string, std::vector<Record2D>> by_id;
        for (auto& r : back) by_id[r.id].push_back(std::move(r));
        for (const auto& [id, rows] : by_id) {
            std::vector<Pose2DSequence> views = detail::rows_by_view(rows, 4, "mvdataset '" + id + "'");
            max_resid = std::max(max_resid, max_pairwise_epipolar_residual(views, rig4));
        }
        if (!(max_resid < 1e-9))
            throw Error("build-mvdataset: persisted dataset violates consistency (residual " +
                        format_g17(max_resid) + ")");
    });

    for (const char* f : {"mvdataset3d.jsonl", "mvdataset.jsonl", "mvdataset-skipped.txt"})
        man.add_artifact(out_root, f);
    man.metrics.emplace_back("entries", std::to_string(ds.entries.size()));
    man.metrics.emplace_back("skipped", std::to_string(ds.skipped.size()));
    man.metrics.emplace_back("max_epipolar_residual", format_g17(max_resid));
    save_run_manifest(out_root, man);
    return man;
}

// End-to-end inference over the held-out inputs. stage1: sample the five
// missing views directly from the line-conditioned model. stage2: reuse the
// optimized views persisted by optimize-mv. full: generate three additional
// views with the cross-view model and lift the 4-view set.
inline RunManifest run_lift(const PipelineConfig& cfg, const std::string& out_root,
                            const std::string& mode) {
    if (mode != "stage1" && mode != "stage2" && mode != "full")
        throw ArgumentError("lift: mode must be stage1 | stage2 | full");
    RunManifest man;
    man.command = "lift";
    man.mode = mode;
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    std::string in_path = detail::join_path(out_root, "holdout2d.jsonl");
    detail::require_artifact(in_path, "run gen-synth first");
    std::vector<Record2D> inputs = load_dataset(in_path);
    if (inputs.empty()) throw EmptyDatasetError("lift: " + in_path + " has no records");

    SkeletonDef skeleton = default_skeleton();
    LiftOptions lopts;
    lopts.smoothness = cfg.lift_smoothness;
    lopts.bone_weight = cfg.lift_bone_weight;
    lopts.max_iterations = cfg.lift_max_iterations;
    lopts.tolerance = cfg.lift_tolerance;

    Checkpoint ckpt;
    if (mode == "stage1")
        ckpt = detail::load_model(detail::join_path(out_root, "lcdm.ckpt"), "lcdm",
                                  "run train-lcdm first");
    else if (mode == "full")
        ckpt = detail::load_model(detail::join_path(out_root, "mvdm.ckpt"), "mvdm",
                                  "run train-mvdm first");

    CameraRig rig = mode == "full" ? rig_from_config(cfg, 4, 90.0) : rig_from_config(cfg, 6, 60.0);
    std::vector<Record3D> preds(inputs.size());
    double mean_rms = 0.0;

    detail::timed_stage(man, "lift", [&] {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const Record2D& rec = inputs[i];
            std::vector<Pose2DSequence> views;
            if (mode == "stage1") {
                NoiseSchedule sched = ckpt.schedule();
                DenoiserFn denoiser = [&](const Pose2DSequence& x_n, int n, const LineSet& L) {
                    return lcd_forward(ckpt.config, ckpt.params, x_n, n, L);
                };
                Rng in = Rng(cfg.seed).fork(static_cast<std::uint64_t>(i + 1));
                views.push_back(rec.seq);
                for (int k = 1; k <= 5; ++k) {
                    LineSet L = lines_from_input_view(rec.seq, rig, k);
                    Rng r = in.fork(static_cast<std::uint64_t>(k));
                    views.push_back(sample(denoiser, L, sched, r));
                }
            } else if (mode == "stage2") {
                std::string f = detail::join_path(out_root, "stage2-holdout/" + rec.id + ".jsonl");
                detail::require_artifact(f, "run optimize-mv with stage2.source = holdout first");
                views = detail::rows_by_view(load_dataset(f), 6, f);
            } else {
                NoiseSchedule sched = ckpt.schedule();
                MvDenoiserFn denoiser = [&](const std::vector<Pose2DSequence>& x_n, int n) {
                    return mv_forward(ckpt.config, ckpt.params, x_n, n, rec.seq);
                };
                Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(i + 1));
                std::vector<Pose2DSequence> gen = mv_sample(
                    denoiser, 4, rec.seq.frame_count(), rec.seq.joint_count(), sched, rng);
                views.push_back(rec.seq);
                for (auto& g : gen) views.push_back(std::move(g));
            }

            RecoverResult rr = recover_3d(views, rig, lopts, &skeleton);
            Pose3DSequence s3 =
                cfg.lift_enforce_bones ? enforce_bone_lengths(rr.seq, skeleton) : rr.seq;
            preds[i] = Record3D{rec.id, rec.fps, skeleton.parent, std::move(s3)};
            mean_rms += rr.report.joint_residual_rms.mean() / inputs.size();
            std::fprintf(stderr, "lift[%s] %s done (reproj rms %.6g)\n", mode.c_str(),
                         rec.id.c_str(), rr.report.joint_residual_rms.mean());
        }
    });

    std::string out_file = "pred3d-" + mode + ".jsonl";
    detail::timed_stage(man, "write", [&] {
        save_dataset3d(detail::join_path(out_root, out_file), preds);
    });
    man.add_artifact(out_root, out_file);
    man.metrics.emplace_back("sequences", std::to_string(preds.size()));
    man.metrics.emplace_back("mean_reprojection_rms", format_g17(mean_rms));
    save_run_manifest(out_root, man);
    return man;
}

inline RunManifest run_eval(const PipelineConfig& cfg, const std::string& out_root,
                            const std::string& mode) {
    if (mode != "stage1" && mode != "stage2" && mode != "full")
        throw ArgumentError("eval: mode must be stage1 | stage2 | full");
    RunManifest man;
    man.command = "eval";
    man.mode = mode;
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    std::string pred_path = detail::join_path(out_root, "pred3d-" + mode + ".jsonl");
    detail::require_artifact(pred_path, "run lift --mode " + mode + " first");
    detail::require_artifact(detail::join_path(out_root, "holdout3d.jsonl"), "run gen-synth first");
    detail::require_artifact(detail::join_path(out_root, "rig.txt"), "run gen-synth first");
    std::vector<Record3D> preds = load_dataset3d(pred_path);
    std::vector<Record3D> gts = load_dataset3d(detail::join_path(out_root, "holdout3d.jsonl"));
    std::vector<Record2D> gt2s = load_dataset(detail::join_path(out_root, "holdout2d.jsonl"));
    CameraRig rig = load_rig(detail::join_path(out_root, "rig.txt"));

    std::map<std::string, const Record3D*> pred_by_id;
    for (const auto& p : preds) pred_by_id[p.id] = &p;
    std::map<std::string, const Record2D*> gt2_by_id;
    for (const auto& g : gt2s) gt2_by_id[g.id] = &g;

    std::string missing, extra;
    for (const auto& g : gts)
        if (!pred_by_id.count(g.id)) missing += (missing.empty() ? "" : ", ") + g.id;
    {
        std::map<std::string, bool> gt_ids;
        for (const auto& g : gts) gt_ids[g.id] = true;
        for (const auto& p : preds)
            if (!gt_ids.count(p.id)) extra += (extra.empty() ? "" : ", ") + p.id;
    }
    if (!missing.empty() || !extra.empty())
        throw ArgumentError("eval: id mismatch between predictions and ground truth" +
                            (missing.empty() ? "" : "; missing predictions for: " + missing) +
                            (extra.empty() ? "" : "; predictions without ground truth: " + extra));

    MetricReport rep;
    detail::timed_stage(man, "metrics", [&] {
        std::vector<SequenceMetrics> per_seq;
        per_seq.reserve(gts.size());
        for (const auto& gt : gts) {
            const Record3D& pred = *pred_by_id.at(gt.id);
            SequenceMetrics m;
            m.id = gt.id;
            m.t_root = 1000.0 * t_root(pred.seq, gt.seq);
            m.mpjpe = 1000.0 * mpjpe(pred.seq, gt.seq);
            m.pa_mpjpe = 1000.0 * pa_mpjpe(pred.seq, gt.seq);
            auto it = gt2_by_id.find(gt.id);
            if (it != gt2_by_id.end()) {
                int view = it->second->view.value_or(0);
                // A prediction with joints behind the camera has no 2D error
                // in this view; it drops out of the 2D columns instead of
                // aborting the evaluation.
                try {
                    m.j2d = 1000.0 * j2d(pred.seq, it->second->seq, rig, view);
                    m.j2d_centered =
                        1000.0 * j2d_centered(pred.seq, it->second->seq, rig, view);
                    m.has_2d = true;
                } catch (const BehindCameraError&) {
                }
            }
            per_seq.push_back(std::move(m));
        }
        rep = aggregate_metrics(std::move(per_seq));
        rep.validate();
    });

    detail::timed_stage(man, "write", [&] {
        write_text_file_atomic(detail::join_path(out_root, "metrics-" + mode + ".summary.txt"),
                               rep.summary_text());
        write_text_file_atomic(detail::join_path(out_root, "metrics-" + mode + ".detail.txt"),
                               rep.detail_text());
    });
    man.add_artifact(out_root, "metrics-" + mode + ".summary.txt");
    man.add_artifact(out_root, "metrics-" + mode + ".detail.txt");
    man.metrics.emplace_back("t_root", format_g17(rep.t_root));
    man.metrics.emplace_back("mpjpe", format_g17(rep.mpjpe));
    man.metrics.emplace_back("pa_mpjpe", format_g17(rep.pa_mpjpe));
    man.metrics.emplace_back("j2d", format_g17(rep.j2d));
    man.metrics.emplace_back("j2d_centered", format_g17(rep.j2d_centered));
    man.metrics.emplace_back("sequences", std::to_string(rep.per_sequence.size()));
    save_run_manifest(out_root, man);
    return man;
}

// Static plots: root-trajectory SVG plus a projected 2D overlay series per
// sequence. Renders ground truth when no mode is given.
inline RunManifest run_render(const PipelineConfig& cfg, const std::string& out_root,
                              const std::string& mode_in) {
    std::string mode = mode_in.empty() ? "gt" : mode_in;
    if (mode != "gt" && mode != "stage1" && mode != "stage2" && mode != "full")
        throw ArgumentError("render: mode must be gt | stage1 | stage2 | full");
    RunManifest man;
    man.command = "render";
    man.mode = mode;
    man.seed = cfg.seed;
    man.config_text = show_config_text(cfg);

    std::string src = mode == "gt" ? "holdout3d.jsonl" : "pred3d-" + mode + ".jsonl";
    std::string src_path = detail::join_path(out_root, src);
    detail::require_artifact(src_path, mode == "gt" ? "run gen-synth first"
                                                    : "run lift --mode " + mode + " first");
    detail::require_artifact(detail::join_path(out_root, "rig.txt"), "run gen-synth first");
    std::vector<Record3D> recs = load_dataset3d(src_path);
    if (recs.empty()) throw EmptyDatasetError("render: " + src_path + " has no records");
    CameraRig rig = load_rig(detail::join_path(out_root, "rig.txt"));

    std::string dir = "render-" + mode;
    detail::timed_stage(man, "render", [&] {
        for (const auto& rec : recs) {
            write_text_file_atomic(detail::join_path(out_root, dir + "/" + rec.id + ".svg"),
                                   svg_root_trajectory(rec.seq));
            write_text_file_atomic(
                detail::join_path(out_root, dir + "/" + rec.id + ".overlay.txt"),
                overlay_series_text(rec.seq, rig, 0));
            man.add_artifact(out_root, dir + "/" + rec.id + ".svg");
            man.add_artifact(out_root, dir + "/" + rec.id + ".overlay.txt");
        }
    });
    man.metrics.emplace_back("rendered", std::to_string(recs.size()));
    save_run_manifest(out_root, man);
    return man;
}

}  // namespace mvlift
