// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/harness.hpp"
#include "rfsplat/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace rfsplat;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string output;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("-c,--config", opts.config_file, "key = value config file");
    cmd->add_option("-s,--set", opts.overrides, "override a config key, e.g. train.steps=100");
    cmd->add_option("-o,--output", opts.output, "output root (ARTIFACT_OUT takes precedence)");
}

harness::RunConfig load_config(const CommonOptions& opts) {
    harness::RunConfig config = opts.config_file.empty() ? harness::RunConfig{} : harness::RunConfig::load(opts.config_file);
    if (!opts.output.empty())
        config.output = opts.output;
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidConfig, "--set expects key=value, got '" + kv + "'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        config.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return config;
}

std::string ppm(const splat::Image& image) {
    std::ostringstream ss;
    splat::write_ppm(ss, image);
    return ss.str();
}

splat::Image latent_image(const ViewTensor& t, int view) {
    splat::Image img = splat::Image::filled(t.height, t.width, splat::Vec3::Zero());
    const std::size_t n = img.rgb.size();
    for (std::size_t i = 0; i < n; ++i)
        img.rgb[i] = std::clamp(0.5 * (t.values[static_cast<std::size_t>(view) * n + i] + 1.0), 0.0, 1.0);
    return img;
}

std::string trajectory_text(const geometry::Trajectory& t, const geometry::PixelGrid& grid) {
    std::ostringstream ss;
    geometry::write_trajectory(ss, t, grid.rows, grid.cols);
    return ss.str();
}

void print_manifest_status(const fs::path& dir) {
    std::cout << "artifacts: " << dir.string() << "\n";
    std::istringstream in(io::read_file(dir / "manifest.txt"));
    std::string line;
    while (std::getline(in, line))
        if (line.find(" stage:") != std::string::npos)
            std::cout << line << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint image and camera-ray flow sampling with Gaussian splat decoding"};
    app.require_subcommand(1);

    CommonOptions common;

    auto* build = app.add_subcommand("build-data", "generate the synthetic scene dataset");
    add_common(build, common);

    auto* train_joint = app.add_subcommand("train-joint", "train the dual-stream joint model");
    add_common(train_joint, common);

    auto* train_dec = app.add_subcommand("train-decoder", "train the splat decoder");
    add_common(train_dec, common);

    auto* sample = app.add_subcommand("sample", "sample images and camera rays from a trained model");
    add_common(sample, common);
    std::string mode = "async";
    std::optional<double> delta, cfg_text, cfg_pose;
    std::optional<int> steps;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    int condition = -1;
    int scene_index = 0;
    sample->add_option("--mode", mode, "sync, async or camera-cond")
        ->check(CLI::IsMember({"sync", "async", "camera-cond"}));
    sample->add_option("--delta", delta, "ray lead over images");
    sample->add_option("--cfg-text", cfg_text, "text guidance scale");
    sample->add_option("--cfg-pose", cfg_pose, "pose guidance scale");
    sample->add_option("--steps", steps, "integration steps");
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--checkpoint", checkpoint, "joint model checkpoint");
    sample->add_option("--condition", condition, "descriptor id (defaults to one drawn from the seed)");
    sample->add_option("--scene", scene_index, "held-out scene supplying the camera-cond trajectory");

    auto* recover = app.add_subcommand("recover-cameras", "recover a trajectory from a ray tensor");
    add_common(recover, common);
    std::string rays_path, recover_out;
    recover->add_option("--rays", rays_path, "ray tensor file")->required();
    recover->add_option("--out", recover_out, "trajectory file (stdout if omitted)");

    auto* render = app.add_subcommand("render", "render a splat file along a trajectory");
    add_common(render, common);
    std::string splats_path, trajectory_path, render_out = "renders";
    render->add_option("--splats", splats_path, "splat file")->required();
    render->add_option("--trajectory", trajectory_path, "trajectory file")->required();
    render->add_option("--out", render_out, "directory for PPM renders");

    auto* sweep = app.add_subcommand("sweep-delta", "oscillation and divergence over the delta grid");
    add_common(sweep, common);

    auto* eval_cc = app.add_subcommand("eval-camera-cond", "camera-conditioned generation and pose recovery");
    add_common(eval_cc, common);

    auto* run = app.add_subcommand("run", "run the experiment named in the config");
    add_common(run, common);

    CLI11_PARSE(app, argc, argv);

    try {
        harness::RunConfig config = load_config(common);
        if (*sample) {
            if (delta)
                config.sample.delta = *delta;
            if (cfg_text)
                config.sample.guidance.text_scale = *cfg_text;
            if (cfg_pose)
                config.sample.guidance.pose_scale = *cfg_pose;
            if (steps)
                config.sample.steps = *steps;
            if (seed)
                config.seed = *seed;
            if (!checkpoint.empty())
                config.checkpoint = checkpoint;
        }
        config.validate();
        const fs::path root = config.output_root();

        if (*build) {
            const auto manifest = harness::build_dataset(config, root / "dataset");
            std::cout << "wrote " << config.scenes << " scenes, manifest " << manifest.string() << "\n";
        } else if (*train_joint) {
            config.checkpoint.clear();
            std::vector<joint::TrainLogEntry> log;
            const auto model = harness::obtain_joint_model(config, &log);
            const fs::path dir = root / "joint";
            model.params().save(dir / "joint.bin");
            io::write_file(dir / "train_log.csv", harness::train_log_csv(log));
            if (!log.empty())
                std::cout << "final loss " << log.back().loss << "\n";
            std::cout << "checkpoint " << (dir / "joint.bin").string() << "\n";
        } else if (*train_dec) {
            config.decoder_checkpoint.clear();
            std::vector<splat::DecoderLogEntry> log;
            const auto decoder = harness::obtain_decoder(config, &log);
            const fs::path dir = root / "decoder";
            decoder.params().save(dir / "decoder.bin");
            io::write_file(dir / "decoder_log.csv", harness::decoder_log_csv(log));
            if (!log.empty())
                std::cout << "final loss " << log.back().loss << "\n";
            std::cout << "checkpoint " << (dir / "decoder.bin").string() << "\n";
        } else if (*sample) {
            if (config.checkpoint.empty())
                throw Error(ErrorCode::CheckpointNotFound, "sampling needs --checkpoint or a checkpoint key");
            const auto model = harness::obtain_joint_model(config);
            const sampling::ModelField field(model);
            const int cond = condition >= 0 ? condition : harness::seed_condition(config.seed);
            sampling::SampleOptions opts = config.sample;
            opts.ray_grid = config.ray_grid();
            sampling::SampleResult result;
            if (mode == "sync") {
                result = sampling::sample_sync(field, cond, opts, config.seed);
            } else if (mode == "async") {
                opts.guidance.mode = sampling::GuidanceMode::AsyncCfg;
                result = sampling::sample_async(field, cond, opts, config.seed);
            } else {
                const auto scene = harness::make_scene(config, scene_index, true);
                opts.guidance.mode = sampling::GuidanceMode::CameraCond;
                result = sampling::sample_camera_conditioned(field, scene.condition, scene.trajectory, opts,
                                                             config.seed);
            }
            const fs::path dir = root / "sample";
            io::save_tensor(dir / "image.tensor", result.image);
            io::save_tensor(dir / "rays.tensor", result.rays);
            io::write_file(dir / "steps.csv", harness::step_log_csv(result.log));
            io::write_file(dir / "centers.csv", harness::centers_csv(result.log));
            for (int v = 0; v < result.image.views; ++v)
                io::write_file(dir / ("latent_" + std::to_string(v) + ".ppm"), ppm(latent_image(result.image, v)));
            if (mode != "camera-cond") {
                const auto traj =
                    geometry::rays_to_trajectory(sampling::tensor_to_rays(result.rays, opts.ray_grid));
                io::write_file(dir / "trajectory.txt", trajectory_text(traj, opts.ray_grid));
                if (result.log.recoveries.size() >= 2)
                    std::cout << "oscillation " << harness::oscillation_metric(result.log) << "\n";
            }
            std::cout << "condition " << cond << " (" << splat::descriptor(cond) << ")\n"
                      << "wrote " << dir.string() << "\n";
        } else if (*recover) {
            const auto grid = config.ray_grid();
            const auto traj = geometry::rays_to_trajectory(sampling::tensor_to_rays(io::load_tensor(rays_path), grid));
            const std::string text = trajectory_text(traj, grid);
            if (recover_out.empty())
                std::cout << text;
            else
                io::write_file(recover_out, text);
        } else if (*render) {
            std::ifstream sf(splats_path);
            if (!sf)
                throw Error(ErrorCode::Io, "cannot open " + splats_path);
            const auto splats = splat::read_splats(sf);
            std::ifstream tf(trajectory_path);
            if (!tf)
                throw Error(ErrorCode::Io, "cannot open " + trajectory_path);
            const auto traj = geometry::read_trajectory(tf).trajectory;
            for (std::size_t v = 0; v < traj.poses.size(); ++v) {
                const auto r = splat::render(splats, traj.poses[v], config.scene.height, config.scene.width,
                                             config.decoder_train.render);
                io::write_file(fs::path(render_out) / ("view_" + std::to_string(v) + ".ppm"), ppm(r.image));
            }
            std::cout << "rendered " << traj.poses.size() << " views to " << render_out << "\n";
        } else if (*sweep) {
            config.experiment = harness::ExperimentKind::DeltaSweep;
            print_manifest_status(harness::run_experiment(config));
        } else if (*eval_cc) {
            config.experiment = harness::ExperimentKind::CameraCondEval;
            print_manifest_status(harness::run_experiment(config));
        } else if (*run) {
            print_manifest_status(harness::run_experiment(config));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
