// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/harness.hpp"

#include "rfsplat/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace rfsplat::harness {

namespace fs = std::filesystem;
using geometry::Trajectory;
using geometry::Vec3;

ExperimentKind parse_experiment(const std::string& name) {
    if (name == "sync_vs_async")
        return ExperimentKind::SyncVsAsync;
    if (name == "delta_sweep")
        return ExperimentKind::DeltaSweep;
    if (name == "camera_cond_eval")
        return ExperimentKind::CameraCondEval;
    if (name == "decoder_eval")
        return ExperimentKind::DecoderEval;
    throw Error(ErrorCode::InvalidConfig, "unknown experiment kind '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::SyncVsAsync: return "sync_vs_async";
    case ExperimentKind::DeltaSweep: return "delta_sweep";
    case ExperimentKind::CameraCondEval: return "camera_cond_eval";
    case ExperimentKind::DecoderEval: return "decoder_eval";
    }
    return "unknown";
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int x = std::stoi(v, &used);
        if (used == v.size())
            return x;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidConfig, key + ": expected an integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used == v.size())
            return x;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidConfig, key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw Error(ErrorCode::InvalidConfig, key + ": expected true or false, got '" + v + "'");
}

std::string mode_name(sampling::GuidanceMode m) {
    switch (m) {
    case sampling::GuidanceMode::Vanilla: return "vanilla";
    case sampling::GuidanceMode::AsyncCfg: return "async_cfg";
    case sampling::GuidanceMode::CameraCond: return "camera_cond";
    }
    return "vanilla";
}

sampling::GuidanceMode parse_mode(const std::string& v) {
    if (v == "vanilla")
        return sampling::GuidanceMode::Vanilla;
    if (v == "async_cfg")
        return sampling::GuidanceMode::AsyncCfg;
    if (v == "camera_cond")
        return sampling::GuidanceMode::CameraCond;
    throw Error(ErrorCode::InvalidConfig, "sample.mode: unknown guidance mode '" + v + "'");
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define RF_INT(member)                                                                                      \
    Field {                                                                                                 \
        [](RunConfig& c, const std::string& v) { c.member = to_int(#member, v); },                          \
            [](const RunConfig& c) { return std::to_string(c.member); }                                     \
    }
#define RF_DOUBLE(member)                                                                                   \
    Field {                                                                                                 \
        [](RunConfig& c, const std::string& v) { c.member = to_double(#member, v); },                       \
            [](const RunConfig& c) { return io::format_double(c.member); }                                  \
    }
#define RF_BOOL(member)                                                                                     \
    Field {                                                                                                 \
        [](RunConfig& c, const std::string& v) { c.member = to_bool(#member, v); },                         \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }                    \
    }

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"seed", {[](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"experiment", {[](RunConfig& c, const std::string& v) { c.experiment = parse_experiment(v); },
                        [](const RunConfig& c) { return to_string(c.experiment); }}},
        {"output", {[](RunConfig& c, const std::string& v) { c.output = v; },
                    [](const RunConfig& c) { return c.output.string(); }}},
        {"checkpoint", {[](RunConfig& c, const std::string& v) { c.checkpoint = v; },
                        [](const RunConfig& c) { return c.checkpoint.string(); }}},
        {"decoder_checkpoint", {[](RunConfig& c, const std::string& v) { c.decoder_checkpoint = v; },
                                [](const RunConfig& c) { return c.decoder_checkpoint.string(); }}},
        {"data.scenes", RF_INT(scenes)},
        {"data.held_out", RF_INT(held_out)},
        {"scene.views", RF_INT(scene.views)},
        {"scene.target_views", RF_INT(scene.target_views)},
        {"scene.height", RF_INT(scene.height)},
        {"scene.width", RF_INT(scene.width)},
        {"scene.focal", RF_DOUBLE(scene.focal)},
        {"model.views", RF_INT(model.views)},
        {"model.image_height", RF_INT(model.image_height)},
        {"model.image_width", RF_INT(model.image_width)},
        {"model.ray_height", RF_INT(model.ray_height)},
        {"model.ray_width", RF_INT(model.ray_width)},
        {"model.image.blocks", RF_INT(model.image.blocks)},
        {"model.image.hidden", RF_INT(model.image.hidden)},
        {"model.image.heads", RF_INT(model.image.heads)},
        {"model.image.patch_h", RF_INT(model.image.patch_h)},
        {"model.image.patch_w", RF_INT(model.image.patch_w)},
        {"model.image.mlp_ratio", RF_INT(model.image.mlp_ratio)},
        {"model.pose.blocks", RF_INT(model.pose.blocks)},
        {"model.pose.hidden", RF_INT(model.pose.hidden)},
        {"model.pose.heads", RF_INT(model.pose.heads)},
        {"model.pose.patch_h", RF_INT(model.pose.patch_h)},
        {"model.pose.patch_w", RF_INT(model.pose.patch_w)},
        {"model.pose.mlp_ratio", RF_INT(model.pose.mlp_ratio)},
        {"model.comm_period", RF_INT(model.image_comm_period)},
        {"model.final_layer_communicates", RF_BOOL(model.final_layer_communicates)},
        {"model.time_features", RF_INT(model.time_features)},
        {"model.view_encoding", RF_BOOL(model.view_encoding)},
        {"train.steps", RF_INT(train.steps)},
        {"train.batch", RF_INT(train.batch)},
        {"train.lr", RF_DOUBLE(train.learning_rate)},
        {"train.condition_dropout", RF_DOUBLE(train.condition_dropout)},
        {"train.clip_norm", RF_DOUBLE(train.clip_norm)},
        {"decoder.hidden", RF_INT(decoder.hidden)},
        {"decoder.layers", RF_INT(decoder.layers)},
        {"decoder.base_depth", RF_DOUBLE(decoder.base_depth)},
        {"decoder.base_scale", RF_DOUBLE(decoder.base_scale)},
        {"decoder_train.steps", RF_INT(decoder_train.steps)},
        {"decoder_train.lr", RF_DOUBLE(decoder_train.learning_rate)},
        {"decoder_train.target_views", RF_INT(decoder_train.target_views)},
        {"decoder_train.source_views", RF_INT(decoder_train.source_views)},
        {"decoder_train.clip_norm", RF_DOUBLE(decoder_train.clip_norm)},
        {"decoder_train.min_alpha", RF_DOUBLE(decoder_train.render.min_alpha)},
        {"sample.steps", RF_INT(sample.steps)},
        {"sample.delta", RF_DOUBLE(sample.delta)},
        {"sample.cfg_text", RF_DOUBLE(sample.guidance.text_scale)},
        {"sample.cfg_pose", RF_DOUBLE(sample.guidance.pose_scale)},
        {"sample.condition_noise_t", RF_DOUBLE(sample.guidance.condition_noise_t)},
        {"sample.mode", {[](RunConfig& c, const std::string& v) { c.sample.guidance.mode = parse_mode(v); },
                         [](const RunConfig& c) { return mode_name(c.sample.guidance.mode); }}},
        {"sample.warp", RF_DOUBLE(sample.warp_exponent)},
        {"sample.schedule",
         {[](RunConfig& c, const std::string& v) {
              if (v == "uniform")
                  c.sample.schedule = flow::ScheduleKind::Uniform;
              else if (v == "default")
                  c.sample.schedule = flow::ScheduleKind::Default;
              else
                  throw Error(ErrorCode::InvalidConfig, "sample.schedule: expected uniform or default");
          },
          [](const RunConfig& c) {
              return std::string(c.sample.schedule == flow::ScheduleKind::Uniform ? "uniform" : "default");
          }}},
        {"sample.recover_every", RF_INT(sample.recover_every)},
        {"sample.image_first", RF_BOOL(sample.image_first)},
        {"sample.seeds", RF_INT(sample_seeds)},
        {"sweep.deltas",
         {[](RunConfig& c, const std::string& v) {
              c.deltas.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ','))
                  c.deltas.push_back(to_double("sweep.deltas", trim(item)));
          },
          [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.deltas.size(); ++i)
                  s += (i ? "," : "") + io::format_double(c.deltas[i]);
              return s;
          }}},
    };
    return table;
}

#undef RF_INT
#undef RF_DOUBLE
#undef RF_BOOL

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& [name, field] : fields())
        if (name == key) {
            field.set(*this, value);
            return;
        }
    throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

RunConfig RunConfig::parse(std::istream& in) {
    RunConfig c;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(number) + ": expected key = value");
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open config " + path.string());
    return parse(in);
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& [name, field] : fields())
        out += name + " = " + field.get(*this) + "\n";
    return out;
}

fs::path RunConfig::output_root() const {
    if (const char* env = std::getenv("ARTIFACT_OUT"); env != nullptr && *env != '\0')
        return fs::path(env);
    return output;
}

void RunConfig::validate() const {
    model.validate();
    decoder.validate();
    RFSPLAT_CHECK(scenes > 0 && held_out >= 0 && sample_seeds > 0, ErrorCode::InvalidConfig,
                  "dataset and seed counts must be positive");
    RFSPLAT_CHECK(scene.views == model.views, ErrorCode::InvalidConfig, "scene and model view counts differ");
    RFSPLAT_CHECK(scene.height % model.image_height == 0 && scene.width % model.image_width == 0 &&
                      scene.height / model.image_height == scene.width / model.image_width,
                  ErrorCode::InvalidConfig, "render size must be an integer multiple of the latent size");
    RFSPLAT_CHECK(decoder.height == scene.height && decoder.width == scene.width &&
                      decoder.latent_height == model.image_height && decoder.latent_width == model.image_width &&
                      decoder.channels == model.image_channels && decoder.ray_height == model.ray_height &&
                      decoder.ray_width == model.ray_width,
                  ErrorCode::InvalidConfig, "decoder resolution does not match scene and model");
    RFSPLAT_CHECK(sample.steps > 0 && sample.delta >= 0.0 && sample.recover_every >= 0, ErrorCode::InvalidConfig,
                  "invalid sampling options");
    sample.guidance.validate();
    for (double d : deltas)
        RFSPLAT_CHECK(d >= 0.0 && std::isfinite(d), ErrorCode::InvalidConfig, "deltas must be >= 0");
}

geometry::PixelGrid RunConfig::ray_grid() const {
    return geometry::PixelGrid::over_image(model.ray_height, model.ray_width, scene.width, scene.height);
}

int RunConfig::latent_factor() const { return scene.height / model.image_height; }

splat::Scene make_scene(const RunConfig& config, int index, bool held_out) {
    const std::uint64_t stream = held_out ? 2 : 1;
    return splat::generate_scene(Rng(config.seed).split(stream).split(static_cast<std::uint64_t>(index)).key(),
                                 config.scene);
}

std::vector<splat::Scene> make_scenes(const RunConfig& config, bool held_out) {
    std::vector<splat::Scene> out;
    const int n = held_out ? config.held_out : config.scenes;
    for (int i = 0; i < n; ++i)
        out.push_back(make_scene(config, i, held_out));
    return out;
}

ViewTensor trajectory_rays(const Trajectory& trajectory, const geometry::PixelGrid& grid) {
    std::vector<geometry::RayBundle> bundles;
    for (const auto& pose : trajectory.poses)
        bundles.push_back(geometry::camera_to_rays(pose, grid));
    return sampling::rays_to_tensor(bundles);
}

joint::JointExample joint_example(const RunConfig& config, const splat::Scene& scene) {
    return {splat::encode_latents(scene.views, config.latent_factor()), trajectory_rays(scene.trajectory, config.ray_grid()),
            scene.condition};
}

void validate_round_trip(const Trajectory& trajectory, const geometry::PixelGrid& grid) {
    trajectory.validate();
    for (std::size_t v = 0; v < trajectory.size(); ++v) {
        const auto& truth = trajectory.poses[v];
        const auto rec = geometry::rays_to_camera(geometry::camera_to_rays(truth, grid));
        const double rot = geometry::geodesic_angle(rec.rotation, truth.rotation);
        const double trans = (rec.translation - truth.translation).norm();
        const double intr = (rec.intrinsics - truth.intrinsics).norm() / truth.intrinsics.norm();
        if (!(rot < 1e-6 && trans < 1e-6 && intr < 1e-6))
            throw Error(ErrorCode::InvalidTrajectory, "view " + std::to_string(v) + " fails the ray round trip");
    }
}

fs::path build_dataset(const RunConfig& config, const fs::path& dir) {
    config.validate();
    const auto grid = config.ray_grid();
    std::string manifest;
    auto emit = [&](const fs::path& rel, const std::string& contents) {
        io::write_file(dir / rel, contents);
        manifest += io::hex64(io::fnv1a64(contents)) + " " + rel.generic_string() + "\n";
    };
    auto ppm = [](const splat::Image& img) {
        std::ostringstream ss;
        splat::write_ppm(ss, img);
        return ss.str();
    };
    auto traj = [&](const Trajectory& t) {
        std::ostringstream ss;
        geometry::write_trajectory(ss, t, grid.rows, grid.cols);
        return ss.str();
    };
    for (int i = 0; i < config.scenes; ++i) {
        const auto scene = make_scene(config, i);
        validate_round_trip(scene.trajectory, grid);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%03d", i);
        const fs::path sd(name);
        for (std::size_t v = 0; v < scene.views.size(); ++v)
            emit(sd / ("view_" + std::to_string(v) + ".ppm"), ppm(scene.views[v]));
        for (std::size_t v = 0; v < scene.target_views.size(); ++v)
            emit(sd / ("target_" + std::to_string(v) + ".ppm"), ppm(scene.target_views[v]));
        emit(sd / "trajectory.txt", traj(scene.trajectory));
        emit(sd / "targets.txt", traj(scene.targets));
        emit(sd / "condition.txt", std::to_string(scene.condition) + " " + splat::descriptor(scene.condition) + "\n");
        std::ostringstream ss;
        splat::write_splats(ss, scene.splats);
        emit(sd / "splats.txt", ss.str());
    }
    io::write_file(dir / "dataset_manifest.txt", manifest);
    return dir / "dataset_manifest.txt";
}

double oscillation_metric(const sampling::StepLog& log) {
    const auto& rec = log.recoveries;
    RFSPLAT_CHECK(rec.size() >= 2, ErrorCode::InvalidArgument, "oscillation needs at least two recovery points");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 1; i < rec.size(); ++i) {
        RFSPLAT_CHECK(rec[i].centers.size() == rec[i - 1].centers.size(), ErrorCode::ShapeMismatch,
                      "recovery view counts differ");
        for (std::size_t v = 0; v < rec[i].centers.size(); ++v) {
            sum += (rec[i].centers[v] - rec[i - 1].centers[v]).norm();
            ++count;
        }
    }
    const double diameter = geometry::path_diameter(rec.back().centers);
    if (!(diameter > 1e-12) || !std::isfinite(diameter))
        throw Error(ErrorCode::UnnormalizableTrajectory, "final recovered centers coincide");
    return sum / static_cast<double>(count) / diameter;
}

int seed_condition(std::uint64_t seed) {
    Rng r = Rng(seed).split(99);
    return static_cast<int>(r.below(splat::kDescriptorCount));
}

SeedOutcome sample_outcome(const sampling::JointField& field, const RunConfig& config, double delta,
                           const sampling::GuidanceConfig& guidance, bool synchronous, std::uint64_t seed) {
    sampling::SampleOptions opt = config.sample;
    opt.ray_grid = config.ray_grid();
    opt.delta = delta;
    opt.guidance = guidance;
    SeedOutcome out;
    out.seed = seed;
    try {
        const int cond = seed_condition(seed);
        auto r = synchronous ? sampling::sample_sync(field, cond, opt, seed) : sampling::sample_async(field, cond, opt, seed);
        out.log = std::move(r.log);
        out.oscillation = oscillation_metric(out.log);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::SamplingDiverged && e.code() != ErrorCode::UnnormalizableTrajectory &&
            e.code() != ErrorCode::InvalidArgument)
            throw;
        out.diverged = true;
        out.oscillation = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

MetricsRecord summarize(const std::vector<SeedOutcome>& outcomes) {
    MetricsRecord m;
    m.runs = static_cast<int>(outcomes.size());
    std::vector<double> osc;
    int diverged = 0;
    for (const auto& o : outcomes) {
        if (o.diverged)
            ++diverged;
        else
            osc.push_back(o.oscillation);
    }
    m.divergence_rate = outcomes.empty() ? 0.0 : static_cast<double>(diverged) / outcomes.size();
    if (osc.empty()) {
        m.oscillation = std::numeric_limits<double>::quiet_NaN();
    } else {
        std::sort(osc.begin(), osc.end());
        const std::size_t n = osc.size();
        m.oscillation = n % 2 ? osc[n / 2] : 0.5 * (osc[n / 2 - 1] + osc[n / 2]);
    }
    return m;
}

std::vector<DeltaRow> delta_sweep(const sampling::JointField& field, const RunConfig& config,
                                  const std::vector<std::uint64_t>& seeds) {
    std::vector<DeltaRow> rows;
    for (const char* block : {kPlainBlock, kAsyncBlock}) {
        sampling::GuidanceConfig g = config.sample.guidance;
        g.mode = sampling::GuidanceMode::AsyncCfg;
        if (std::string(block) == kPlainBlock)
            g.pose_scale = 0.0;
        for (double delta : config.deltas) {
            std::vector<SeedOutcome> outcomes;
            for (auto seed : seeds)
                outcomes.push_back(sample_outcome(field, config, delta, g, false, seed));
            rows.push_back({block, delta, summarize(outcomes)});
        }
    }
    return rows;
}

std::string delta_table_csv(const std::vector<DeltaRow>& rows) {
    std::string out = "block,delta,oscillation,divergence_rate,runs\n";
    for (const auto& r : rows)
        out += r.block + "," + io::format_double(r.delta) + "," + io::format_double(r.metrics.oscillation) + "," +
               io::format_double(r.metrics.divergence_rate) + "," + std::to_string(r.metrics.runs) + "\n";
    return out;
}

PairedComparison compare_sync_async(const sampling::JointField& field, const RunConfig& config,
                                    const std::vector<std::uint64_t>& seeds) {
    PairedComparison pc;
    sampling::GuidanceConfig g = config.sample.guidance;
    g.mode = sampling::GuidanceMode::AsyncCfg;
    int lower = 0;
    for (auto seed : seeds) {
        pc.sync.push_back(sample_outcome(field, config, 0.0, g, true, seed));
        pc.async.push_back(sample_outcome(field, config, config.sample.delta, g, false, seed));
        const auto& s = pc.sync.back();
        const auto& a = pc.async.back();
        if (!a.diverged && (s.diverged || a.oscillation < s.oscillation))
            ++lower;
    }
    pc.sync_metrics = summarize(pc.sync);
    pc.async_metrics = summarize(pc.async);
    pc.async_lower_fraction = seeds.empty() ? 0.0 : static_cast<double>(lower) / seeds.size();
    return pc;
}

CameraCondOutcome camera_cond_loop(const sampling::JointField& field, const splat::SplatDecoder& decoder,
                                   const RunConfig& config, const splat::Scene& scene, std::uint64_t seed) {
    CameraCondOutcome out;
    const auto grid = config.ray_grid();
    sampling::SampleOptions opt = config.sample;
    opt.ray_grid = grid;
    opt.recover_every = 0;
    try {
        const auto images = sampling::sample_camera_conditioned(field, scene.condition, scene.trajectory, opt, seed);
        const auto splats = decoder.decode(images.image, trajectory_rays(scene.trajectory, grid));
        splat::RenderOptions ro = config.decoder_train.render;
        for (const auto& pose : scene.trajectory.poses)
            out.renders.push_back(splat::render(splats, pose, config.scene.height, config.scene.width, ro).image);
        const ViewTensor latents = splat::encode_latents(out.renders, config.latent_factor());
        const auto poses = sampling::sample_poses(field, scene.condition, latents, opt, Rng(seed).split(7).key());
        const auto bundles = sampling::tensor_to_rays(poses.rays, grid);
        out.recovered = geometry::rays_to_trajectory(bundles);
        out.error = geometry::pose_error(out.recovered, scene.trajectory);
        out.ok = out.error.rotation < 0.15 && out.error.translation < 0.15;
    } catch (const Error& e) {
        out.failure = e.what();
        out.ok = false;
        out.error = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    }
    return out;
}

DecoderEval evaluate_decoder(const splat::SplatDecoder& decoder, const RunConfig& config,
                             std::span<const splat::Scene> scenes) {
    DecoderEval ev;
    int count = 0;
    for (const auto& scene : scenes) {
        const auto ex = splat::make_decoder_example(scene, decoder.config());
        const auto splats = decoder.decode(ex.latents, ex.rays);
        for (const auto& view : ex.targets) {
            const auto r = splat::render(splats, view.pose, view.image.height, view.image.width,
                                         config.decoder_train.render);
            Vec3 mean = Vec3::Zero();
            const double npx = static_cast<double>(view.image.height) * view.image.width;
            for (std::size_t i = 0; i < view.image.rgb.size(); ++i)
                mean[static_cast<Eigen::Index>(i % 3)] += view.image.rgb[i] / npx;
            double l1 = 0.0, base = 0.0;
            for (std::size_t i = 0; i < view.image.rgb.size(); ++i) {
                l1 += std::abs(r.image.rgb[i] - view.image.rgb[i]);
                base += std::abs(mean[static_cast<Eigen::Index>(i % 3)] - view.image.rgb[i]);
            }
            ev.l1 += l1 / view.image.rgb.size();
            ev.baseline_l1 += base / view.image.rgb.size();
            ++count;
        }
    }
    RFSPLAT_CHECK(count > 0, ErrorCode::InvalidArgument, "no target views to evaluate");
    ev.l1 /= count;
    ev.baseline_l1 /= count;
    return ev;
}

std::string step_log_csv(const sampling::StepLog& log) {
    std::string out = "step,t_image,t_ray,field_norm_image,field_norm_ray,center_delta\n";
    for (const auto& s : log.steps)
        out += std::to_string(s.step) + "," + io::format_double(s.t_image) + "," + io::format_double(s.t_ray) + "," +
               io::format_double(s.field_norm_image) + "," + io::format_double(s.field_norm_ray) + "," +
               (std::isnan(s.center_delta) ? std::string() : io::format_double(s.center_delta)) + "\n";
    return out;
}

std::string centers_csv(const sampling::StepLog& log) {
    std::string out = "step,view,x,y,z\n";
    for (const auto& r : log.recoveries)
        for (std::size_t v = 0; v < r.centers.size(); ++v)
            out += std::to_string(r.step) + "," + std::to_string(v) + "," + io::format_double(r.centers[v].x()) + "," +
                   io::format_double(r.centers[v].y()) + "," + io::format_double(r.centers[v].z()) + "\n";
    return out;
}

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (!line.empty() && line.back() == ',')
            cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

sampling::StepLog parse_step_log(const std::string& steps, const std::string& centers) {
    sampling::StepLog log;
    for (const auto& c : csv_rows(steps)) {
        RFSPLAT_CHECK(c.size() == 6, ErrorCode::Io, "step log row needs 6 columns");
        log.steps.push_back({std::stoi(c[0]), std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]),
                             c[5].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(c[5])});
    }
    for (const auto& c : csv_rows(centers)) {
        RFSPLAT_CHECK(c.size() == 5, ErrorCode::Io, "centers row needs 5 columns");
        const int step = std::stoi(c[0]);
        if (log.recoveries.empty() || log.recoveries.back().step != step)
            log.recoveries.push_back({step, {}});
        log.recoveries.back().centers.emplace_back(std::stod(c[2]), std::stod(c[3]), std::stod(c[4]));
    }
    return log;
}

std::string train_log_csv(const std::vector<joint::TrainLogEntry>& log) {
    std::string out = "step,loss,loss_image,loss_ray\n";
    for (const auto& e : log)
        out += std::to_string(e.step) + "," + io::format_double(e.loss) + "," + io::format_double(e.loss_image) + "," +
               io::format_double(e.loss_ray) + "\n";
    return out;
}

std::string decoder_log_csv(const std::vector<splat::DecoderLogEntry>& log) {
    std::string out = "step,loss,loss_target,loss_source\n";
    for (const auto& e : log)
        out += std::to_string(e.step) + "," + io::format_double(e.loss) + "," + io::format_double(e.loss_target) +
               "," + io::format_double(e.loss_source) + "\n";
    return out;
}

joint::JointModel obtain_joint_model(const RunConfig& config, std::vector<joint::TrainLogEntry>* log) {
    config.validate();
    joint::JointModel model(config.model, Rng(config.seed).split(10).key());
    if (!config.checkpoint.empty()) {
        model.params().load(config.checkpoint);
        return model;
    }
    std::vector<joint::JointExample> data;
    for (const auto& scene : make_scenes(config))
        data.push_back(joint_example(config, scene));
    auto l = joint::train(model, data, config.train, Rng(config.seed).split(11).key());
    if (log)
        *log = std::move(l);
    return model;
}

splat::SplatDecoder obtain_decoder(const RunConfig& config, std::vector<splat::DecoderLogEntry>* log) {
    config.validate();
    splat::SplatDecoder decoder(config.decoder, Rng(config.seed).split(20).key());
    if (!config.decoder_checkpoint.empty()) {
        decoder.params().load(config.decoder_checkpoint);
        return decoder;
    }
    std::vector<splat::DecoderExample> data;
    for (const auto& scene : make_scenes(config))
        data.push_back(splat::make_decoder_example(scene, config.decoder));
    auto l = splat::train_decoder(decoder, data, config.decoder_train, Rng(config.seed).split(21).key());
    if (log)
        *log = std::move(l);
    return decoder;
}

namespace {

std::vector<std::uint64_t> sample_seeds(const RunConfig& config) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < config.sample_seeds; ++i)
        seeds.push_back(Rng(config.seed).split(30).split(static_cast<std::uint64_t>(i)).key());
    return seeds;
}

class ArtifactWriter {
public:
    explicit ArtifactWriter(fs::path dir) : m_dir(std::move(dir)) {}

    void text(const std::string& rel, const std::string& contents) {
        io::write_file(m_dir / rel, contents);
        m_entries.push_back({rel, io::hex64(io::fnv1a64(contents)), "ok"});
    }
    void existing(const std::string& rel) {
        m_entries.push_back({rel, io::hex64(io::hash_file(m_dir / rel)), "ok"});
    }
    void stage(const std::string& name, const std::function<void()>& fn) {
        try {
            fn();
            m_entries.push_back({"stage:" + name, "-", "ok"});
        } catch (const std::exception& e) {
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            m_entries.push_back({"stage:" + name, "-", "failed: " + msg});
            m_failed = true;
        }
    }
    bool failed() const { return m_failed; }
    const fs::path& dir() const { return m_dir; }

    void finish() {
        std::string out;
        for (const auto& e : m_entries)
            out += e.hash + " " + e.path + " " + e.status + "\n";
        io::write_file(m_dir / "manifest.txt", out);
    }

private:
    fs::path m_dir;
    std::vector<ManifestEntry> m_entries;
    bool m_failed = false;
};

std::string ppm_bytes(const splat::Image& img) {
    std::ostringstream ss;
    splat::write_ppm(ss, img);
    return ss.str();
}

}  // namespace

fs::path run_experiment(const RunConfig& config) {
    config.validate();
    const fs::path dir = config.output_root() / to_string(config.experiment);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw Error(ErrorCode::Io, "cannot create output directory " + dir.string());
    ArtifactWriter w(dir);
    w.text("config.txt", config.dump());

    std::optional<joint::JointModel> model;
    std::optional<splat::SplatDecoder> decoder;
    auto need_model = [&] {
        w.stage("joint_model", [&] {
            std::vector<joint::TrainLogEntry> log;
            model.emplace(obtain_joint_model(config, &log));
            if (config.checkpoint.empty()) {
                w.text("train_log.csv", train_log_csv(log));
                model->params().save(dir / "joint.bin");
                w.existing("joint.bin");
                w.existing("joint.bin.manifest");
            }
        });
    };
    auto need_decoder = [&] {
        w.stage("decoder", [&] {
            std::vector<splat::DecoderLogEntry> log;
            decoder.emplace(obtain_decoder(config, &log));
            if (config.decoder_checkpoint.empty()) {
                w.text("decoder_log.csv", decoder_log_csv(log));
                decoder->params().save(dir / "decoder.bin");
                w.existing("decoder.bin");
                w.existing("decoder.bin.manifest");
            }
        });
    };

    switch (config.experiment) {
    case ExperimentKind::SyncVsAsync: {
        need_model();
        if (!model)
            break;
        w.stage("sampling", [&] {
            const sampling::ModelField field(*model);
            const auto seeds = sample_seeds(config);
            const auto pc = compare_sync_async(field, config, seeds);
            std::string table = "seed,sync_oscillation,async_oscillation,sync_diverged,async_diverged\n";
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                const std::string tag = std::to_string(i);
                w.text("logs/sync_" + tag + ".csv", step_log_csv(pc.sync[i].log));
                w.text("logs/sync_" + tag + "_centers.csv", centers_csv(pc.sync[i].log));
                w.text("logs/async_" + tag + ".csv", step_log_csv(pc.async[i].log));
                w.text("logs/async_" + tag + "_centers.csv", centers_csv(pc.async[i].log));
                table += std::to_string(seeds[i]) + "," + io::format_double(pc.sync[i].oscillation) + "," +
                         io::format_double(pc.async[i].oscillation) + "," + (pc.sync[i].diverged ? "1" : "0") + "," +
                         (pc.async[i].diverged ? "1" : "0") + "\n";
            }
            w.text("oscillation.csv", table);
            w.text("metrics.csv", "method,median_oscillation,divergence_rate,runs,async_lower_fraction\nsync," +
                                      io::format_double(pc.sync_metrics.oscillation) + "," +
                                      io::format_double(pc.sync_metrics.divergence_rate) + "," +
                                      std::to_string(pc.sync_metrics.runs) + ",\nasync," +
                                      io::format_double(pc.async_metrics.oscillation) + "," +
                                      io::format_double(pc.async_metrics.divergence_rate) + "," +
                                      std::to_string(pc.async_metrics.runs) + "," +
                                      io::format_double(pc.async_lower_fraction) + "\n");
        });
        break;
    }
    case ExperimentKind::DeltaSweep: {
        need_model();
        if (!model)
            break;
        w.stage("sweep", [&] {
            const sampling::ModelField field(*model);
            const auto seeds = sample_seeds(config);
            std::vector<DeltaRow> rows;
            for (const char* block : {kPlainBlock, kAsyncBlock}) {
                sampling::GuidanceConfig g = config.sample.guidance;
                g.mode = sampling::GuidanceMode::AsyncCfg;
                const bool plain = std::string(block) == kPlainBlock;
                if (plain)
                    g.pose_scale = 0.0;
                for (double delta : config.deltas) {
                    std::vector<SeedOutcome> outcomes;
                    for (std::size_t i = 0; i < seeds.size(); ++i) {
                        outcomes.push_back(sample_outcome(field, config, delta, g, false, seeds[i]));
                        const std::string tag = std::string(plain ? "plain" : "async") + "_d" +
                                                io::format_double(delta) + "_" + std::to_string(i);
                        w.text("logs/" + tag + ".csv", step_log_csv(outcomes.back().log));
                        w.text("logs/" + tag + "_centers.csv", centers_csv(outcomes.back().log));
                    }
                    rows.push_back({block, delta, summarize(outcomes)});
                }
            }
            w.text("delta_sweep.csv", delta_table_csv(rows));
        });
        break;
    }
    case ExperimentKind::CameraCondEval: {
        need_model();
        need_decoder();
        if (!model || !decoder)
            break;
        w.stage("camera_cond", [&] {
            const sampling::ModelField field(*model);
            std::string table = "scene,trans_err,rot_err,ok,failure\n";
            int ok = 0;
            const auto scenes = make_scenes(config, true);
            for (std::size_t i = 0; i < scenes.size(); ++i) {
                const auto r = camera_cond_loop(field, *decoder, config, scenes[i],
                                                Rng(config.seed).split(40).split(i).key());
                ok += r.ok ? 1 : 0;
                std::string failure = r.failure;
                std::replace(failure.begin(), failure.end(), ',', ';');
                table += std::to_string(i) + "," + io::format_double(r.error.translation) + "," +
                         io::format_double(r.error.rotation) + "," + (r.ok ? "1" : "0") + "," + failure + "\n";
                for (std::size_t v = 0; v < r.renders.size(); ++v)
                    w.text("renders/scene_" + std::to_string(i) + "_view_" + std::to_string(v) + ".ppm",
                           ppm_bytes(r.renders[v]));
                if (!r.recovered.poses.empty()) {
                    std::ostringstream ss;
                    geometry::write_trajectory(ss, r.recovered, config.model.ray_height, config.model.ray_width);
                    w.text("recovered/scene_" + std::to_string(i) + ".txt", ss.str());
                }
            }
            w.text("camera_cond.csv", table);
            w.text("metrics.csv", "scenes,success\n" + std::to_string(scenes.size()) + "," + std::to_string(ok) + "\n");
        });
        break;
    }
    case ExperimentKind::DecoderEval: {
        need_decoder();
        if (!decoder)
            break;
        w.stage("decoder_eval", [&] {
            const auto scenes = make_scenes(config, true);
            const auto ev = evaluate_decoder(*decoder, config, scenes);
            w.text("decoder_eval.csv", "novel_view_l1,mean_color_l1,ratio\n" + io::format_double(ev.l1) + "," +
                                           io::format_double(ev.baseline_l1) + "," +
                                           io::format_double(ev.l1 / ev.baseline_l1) + "\n");
            if (!scenes.empty()) {
                const auto ex = splat::make_decoder_example(scenes.front(), decoder->config());
                const auto splats = decoder->decode(ex.latents, ex.rays);
                std::ostringstream ss;
                splat::write_splats(ss, splats);
                w.text("splats_scene_0.txt", ss.str());
                for (std::size_t t = 0; t < ex.targets.size(); ++t) {
                    const auto& v = ex.targets[t];
                    w.text("renders/target_" + std::to_string(t) + ".ppm",
                           ppm_bytes(splat::render(splats, v.pose, v.image.height, v.image.width,
                                                   config.decoder_train.render)
                                         .image));
                }
            }
        });
        break;
    }
    }
    w.finish();
    return dir;
}

}  // namespace rfsplat::harness
