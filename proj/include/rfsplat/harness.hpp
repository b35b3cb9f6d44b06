// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/jointmodel.hpp"
#include "rfsplat/sampling.hpp"
#include "rfsplat/splat.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rfsplat::harness {

enum class ExperimentKind { SyncVsAsync, DeltaSweep, CameraCondEval, DecoderEval };

ExperimentKind parse_experiment(const std::string& name);
std::string to_string(ExperimentKind kind);

struct RunConfig {
    std::uint64_t seed = 0;
    ExperimentKind experiment = ExperimentKind::SyncVsAsync;
    std::filesystem::path output = "artifacts";
    /// When set, the joint model is loaded from here instead of trained.
    std::filesystem::path checkpoint;
    std::filesystem::path decoder_checkpoint;

    int scenes = 64;
    int held_out = 20;
    splat::SceneConfig scene;

    joint::DualStreamConfig model;
    joint::TrainConfig train;
    splat::DecoderConfig decoder;
    splat::DecoderTrainConfig decoder_train;

    sampling::SampleOptions sample;
    int sample_seeds = 50;
    std::vector<double> deltas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};

    /// Applies one `key = value` setting; unknown keys throw InvalidConfig.
    void set(const std::string& key, const std::string& value);
    /// Line-oriented `key = value` text; `#` starts a comment.
    static RunConfig parse(std::istream& in);
    static RunConfig load(const std::filesystem::path& path);
    /// Canonical text form, parseable by `parse`.
    std::string dump() const;
    /// Honors the ARTIFACT_OUT environment variable.
    std::filesystem::path output_root() const;
    void validate() const;

    /// Ray grid over the rendered image plane.
    geometry::PixelGrid ray_grid() const;
    /// Latent downsampling factor from render to model resolution.
    int latent_factor() const;
};

/// Scene i of a dataset; held-out scenes use a disjoint seed range.
splat::Scene make_scene(const RunConfig& config, int index, bool held_out = false);
std::vector<splat::Scene> make_scenes(const RunConfig& config, bool held_out = false);

/// Clean rays of a trajectory on the configured grid.
ViewTensor trajectory_rays(const geometry::Trajectory& trajectory, const geometry::PixelGrid& grid);
joint::JointExample joint_example(const RunConfig& config, const splat::Scene& scene);

/// Throws InvalidTrajectory unless every pose survives the ray round trip
/// within 1e-6.
void validate_round_trip(const geometry::Trajectory& trajectory, const geometry::PixelGrid& grid);

/// Writes one directory per scene (views, targets, trajectories, condition)
/// and a dataset manifest; returns the manifest path.
std::filesystem::path build_dataset(const RunConfig& config, const std::filesystem::path& dir);

/// Mean over consecutive recoveries and views of the center displacement,
/// divided by the path diameter of the last recovery.
double oscillation_metric(const sampling::StepLog& log);

struct MetricsRecord {
    double oscillation = 0.0;
    double trans_err = 0.0;
    double rot_err = 0.0;
    double novel_view_l1 = 0.0;
    double divergence_rate = 0.0;
    int runs = 0;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool diverged = false;
    double oscillation = 0.0;
    sampling::StepLog log;
};

/// Sync (delta = 0, text guidance) or async sampling for one seed; divergence
/// is caught and reported.
SeedOutcome sample_outcome(const sampling::JointField& field, const RunConfig& config, double delta,
                           const sampling::GuidanceConfig& guidance, bool synchronous, std::uint64_t seed);
int seed_condition(std::uint64_t seed);

/// Median oscillation over non-divergent runs and the divergence rate.
MetricsRecord summarize(const std::vector<SeedOutcome>& outcomes);

struct DeltaRow {
    std::string block;
    double delta = 0.0;
    MetricsRecord metrics;
};

inline constexpr const char* kPlainBlock = "w/o modified CFG";
inline constexpr const char* kAsyncBlock = "Asynchronous Sampling";

/// Both blocks over the delta grid and seeds.
std::vector<DeltaRow> delta_sweep(const sampling::JointField& field, const RunConfig& config,
                                  const std::vector<std::uint64_t>& seeds);
std::string delta_table_csv(const std::vector<DeltaRow>& rows);

struct PairedComparison {
    std::vector<SeedOutcome> sync;
    std::vector<SeedOutcome> async;
    MetricsRecord sync_metrics;
    MetricsRecord async_metrics;
    /// Fraction of seeds where async oscillation is strictly lower.
    double async_lower_fraction = 0.0;
};

PairedComparison compare_sync_async(const sampling::JointField& field, const RunConfig& config,
                                    const std::vector<std::uint64_t>& seeds);

struct CameraCondOutcome {
    int scene = 0;
    bool ok = false;
    geometry::PoseError error;
    std::string failure;
    geometry::Trajectory recovered;
    std::vector<splat::Image> renders;
};

/// Camera-conditioned images, decoded and re-rendered at the conditioning
/// poses, then image-conditioned ray sampling and camera recovery.
CameraCondOutcome camera_cond_loop(const sampling::JointField& field, const splat::SplatDecoder& decoder,
                                   const RunConfig& config, const splat::Scene& scene, std::uint64_t seed);

struct DecoderEval {
    double l1 = 0.0;
    double baseline_l1 = 0.0;
};

/// Novel-view L1 of decoded splats against a per-view mean-color image.
DecoderEval evaluate_decoder(const splat::SplatDecoder& decoder, const RunConfig& config,
                             std::span<const splat::Scene> scenes);

std::string step_log_csv(const sampling::StepLog& log);
std::string centers_csv(const sampling::StepLog& log);
/// Rebuilds a step log from its two CSV files.
sampling::StepLog parse_step_log(const std::string& steps_csv, const std::string& centers_csv);
std::string train_log_csv(const std::vector<joint::TrainLogEntry>& log);
std::string decoder_log_csv(const std::vector<splat::DecoderLogEntry>& log);

/// Trains (or loads) the joint model for a config.
joint::JointModel obtain_joint_model(const RunConfig& config, std::vector<joint::TrainLogEntry>* log = nullptr);
splat::SplatDecoder obtain_decoder(const RunConfig& config, std::vector<splat::DecoderLogEntry>* log = nullptr);

struct ManifestEntry {
    std::string path;
    std::string hash;
    std::string status;
};

/// Runs the configured experiment into output_root()/<experiment> and
/// returns that directory. Stage failures are recorded in manifest.txt.
std::filesystem::path run_experiment(const RunConfig& config);

}  // namespace rfsplat::harness
