// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails.

#include "rfsplat/error.hpp"
#include "rfsplat/flow.hpp"
#include "rfsplat/geometry.hpp"
#include "rfsplat/harness.hpp"
#include "rfsplat/jointmodel.hpp"
#include "rfsplat/sampling.hpp"
#include "rfsplat/splat.hpp"
#include "flow_fixtures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

using namespace rfsplat;
using geometry::CameraPose;
using geometry::Mat3;
using geometry::Vec3;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] C%d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass)
        ++g_failures;
}

// Runs one criterion; a thrown error counts as a failure.
void criterion(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    const auto start = Clock::now();
    try {
        auto [pass, detail] = body();
        char buf[64];
        std::snprintf(buf, sizeof buf, " (%.1fs)", seconds_since(start));
        report(id, name, pass, detail + buf);
    } catch (const std::exception& e) {
        report(id, name, false, std::string("error: ") + e.what());
    }
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Mat3 random_intrinsics(Rng& rng) {
    Mat3 k = Mat3::Identity();
    k(0, 0) = rng.uniform(20.0, 80.0);
    k(1, 1) = k(0, 0) * rng.uniform(0.9, 1.1);
    k(0, 1) = rng.uniform(-0.5, 0.5);
    k(0, 2) = rng.uniform(10.0, 40.0);
    k(1, 2) = rng.uniform(8.0, 30.0);
    return k;
}

CameraPose random_pose(Rng& rng, const Mat3& k) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    CameraPose pose;
    pose.intrinsics = k;
    pose.rotation = geometry::rotation_from_axis_angle(axis * rng.uniform(0.0, 3.1));
    const Vec3 center(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
    pose.translation = -pose.rotation * center;
    return pose;
}

flow::Vector scalar(double x) {
    flow::Vector v(1);
    v << x;
    return v;
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// Toy setting shared with the CLI through configs/toy.cfg.
harness::RunConfig toy_run_config() { return harness::RunConfig::load(RFSPLAT_TOY_CONFIG); }

joint::JointState random_state(const joint::DualStreamConfig& c, Rng& rng, int condition) {
    joint::JointState s;
    s.image = ViewTensor::normal(c.views, c.image_height, c.image_width, c.image_channels, rng);
    s.rays = ViewTensor::normal(c.views, c.ray_height, c.ray_width, 6, rng);
    s.t_image = rng.uniform();
    s.t_ray = rng.uniform();
    s.condition = condition;
    return s;
}

double collinearity_gap(const ViewTensor& f0, const ViewTensor& fh, const ViewTensor& f1) {
    return max_abs(fh.flat() - 0.5 * (f0.flat() + f1.flat()));
}

Eigen::Vector2d project(const Mat3& k, const Vec3& t) {
    const Vec3 h = k * t;
    return {h.x() / h.z(), h.y() / h.z()};
}

// Direct per-pixel evaluation of one splatted Gaussian.
splat::Image single_gaussian_oracle(const splat::Gaussian3D& g, const CameraPose& pose, int height, int width,
                                    const Vec3& bg) {
    const Vec3 t = pose.rotation * g.mean + pose.translation;
    Eigen::Matrix<double, 2, 3> j;
    for (int c = 0; c < 3; ++c) {
        const double h = 1e-6;
        Vec3 up = t, down = t;
        up[c] += h;
        down[c] -= h;
        j.col(c) = (project(pose.intrinsics, up) - project(pose.intrinsics, down)) / (2 * h);
    }
    const Eigen::Matrix2d cov = j * pose.rotation * g.covariance() * pose.rotation.transpose() * j.transpose();
    const Eigen::Vector2d uv = project(pose.intrinsics, t);
    splat::Image out = splat::Image::filled(height, width, bg);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector2d d = Eigen::Vector2d(x + 0.5, y + 0.5) - uv;
            const double a = std::min(g.opacity * std::exp(-0.5 * d.dot(cov.inverse() * d)), 0.999);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = g.color[c] * a + bg[c] * (1.0 - a);
        }
    return out;
}

splat::Gaussian3D random_gaussian(Rng& rng) {
    splat::Gaussian3D g;
    g.mean = Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5));
    g.opacity = rng.uniform(0.3, 0.8);
    splat::Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotation = q / q.norm();
    g.scale = Vec3(rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3));
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    return g;
}

CameraPose front_camera(double focal, double cx, double cy) {
    Mat3 k;
    k << focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0;
    return CameraPose::look_at(k, Vec3(0.0, 0.0, -3.0), Vec3::Zero());
}

double max_image_diff(const splat::Image& a, const splat::Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i)
        m = std::max(m, std::abs(a.rgb[i] - b.rgb[i]));
    return m;
}

}  // namespace

int main() {
    const auto total = Clock::now();

    criterion(1, "ray round trip on 1000 cameras", [] {
        // 125 trajectories of 8 views with shared intrinsics, through per-view
        // recovery and the shared-intrinsics refinement.
        Rng rng(101);
        const auto grid = geometry::PixelGrid::over_image(10, 16, 48.0, 32.0);
        double rot = 0.0, trans = 0.0, intr = 0.0;
        int cameras = 0;
        for (int t = 0; t < 125; ++t) {
            const Mat3 k = random_intrinsics(rng);
            geometry::Trajectory truth;
            std::vector<geometry::RayBundle> bundles;
            for (int v = 0; v < 8; ++v) {
                truth.poses.push_back(random_pose(rng, k));
                bundles.push_back(geometry::camera_to_rays(truth.poses.back(), grid));
            }
            const auto rec = geometry::rays_to_trajectory(bundles);
            for (int v = 0; v < 8; ++v, ++cameras) {
                const auto& a = rec.poses[static_cast<std::size_t>(v)];
                const auto& b = truth.poses[static_cast<std::size_t>(v)];
                rot = std::max(rot, geometry::geodesic_angle(a.rotation, b.rotation));
                trans = std::max(trans, (a.translation - b.translation).norm());
                intr = std::max(intr, (a.intrinsics - b.intrinsics).norm() / b.intrinsics.norm());
            }
        }
        const bool pass = cameras == 1000 && rot < 1e-6 && trans < 1e-6 && intr < 1e-6;
        return std::pair{pass, fmt("max rot %.2e rad, trans %.2e, rel K %.2e (tol 1e-6)", rot, trans, intr)};
    });

    criterion(2, "flow oracle transport", [] {
        const auto schedule = flow::timestep_schedule(64);
        const int n = 10000;
        flow::GaussianMixtureSpec single;
        single.components.push_back({1.0, scalar(2.0), scalar(0.25)});
        const flow::MixtureOracleField gauss(single);
        Rng rng(202);
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = flow::integrate(gauss, scalar(rng.normal()), schedule)(0);
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / n;
        const double sd = std::sqrt(sum2 / n - mean * mean);

        flow::GaussianMixtureSpec mix;
        mix.components.push_back({0.3, scalar(-2.0), scalar(0.25)});
        mix.components.push_back({0.7, scalar(2.0), scalar(0.25)});
        const flow::MixtureOracleField mixture(mix);
        int right = 0;
        for (int i = 0; i < n; ++i)
            right += flow::integrate(mixture, scalar(rng.normal()), schedule)(0) > 0.0;
        const double mass = static_cast<double>(right) / n;
        const double se = std::sqrt(0.7 * 0.3 / n);
        const bool pass = std::abs(mean - 2.0) <= 0.02 && std::abs(sd - 0.5) <= 0.02 && std::abs(mass - 0.7) <= 3 * se;
        return std::pair{pass, fmt("mean %.4f (2+-0.02), sd %.4f (0.5+-0.02), mixture mass %.4f vs 0.7 (3 SE = %.4f)",
                                   mean, sd, mass, 3 * se)};
    });

    criterion(3, "conditional vs marginal gradient", [] {
        testing::DiscreteInstance inst;
        Rng rng(303);
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            flow::Vector theta(10);
            for (int i = 0; i < 10; ++i)
                theta(i) = rng.normal();
            const testing::FeatureField model(theta);
            const auto cfm = inst.cfm_gradient(model);
            const auto fm = inst.fm_gradient(model);
            worst = std::max(worst, (cfm - fm).norm() / fm.norm());
        }
        return std::pair{worst <= 1e-4 && inst.collisions() > 0,
                         fmt("max relative difference %.2e over 20 parameter draws (tol 1e-4), %d colliding pairs",
                             worst, inst.collisions())};
    });

    const auto toy = toy_run_config();

    criterion(4, "zero-init communication is the identity", [&] {
        int mismatches = 0, trials = 0;
        for (std::uint64_t seed : {1, 2, 3, 4}) {
            const joint::JointModel m(toy.model, seed);
            Rng rng(400 + seed);
            for (int i = 0; i < 5; ++i, ++trials) {
                const auto s = random_state(m.config(), rng, static_cast<int>(rng.below(13)));
                const auto a = m.forward(s, true);
                const auto b = m.forward(s, false);
                mismatches += a.image.values != b.image.values || a.rays.values != b.rays.values;
            }
        }
        return std::pair{mismatches == 0, fmt("%d/%d forward passes differ bitwise", mismatches, trials)};
    });

    criterion(5, "asynchronous schedule", [&] {
        // Communication weights are perturbed so the streams interact.
        joint::JointModel m(toy.model, 5);
        Rng rng(505);
        for (int i = 0; i < m.params().size(); ++i)
            if (m.params().name(i).rfind("comm", 0) == 0)
                for (Eigen::Index k = 0; k < m.params()[i].size(); ++k)
                    m.params()[i].data()[k] = 0.05 * rng.normal();
        const sampling::ModelField field(m);
        sampling::SampleOptions o;
        o.steps = 16;
        o.recover_every = 0;
        o.delta = 0.0;
        o.guidance.mode = sampling::GuidanceMode::AsyncCfg;
        int identical = 0;
        for (std::uint64_t seed : {1, 2, 3}) {
            const auto s = sampling::sample_sync(field, 1, o, seed);
            const auto a = sampling::sample_async(field, 1, o, seed);
            identical += s.image.values == a.image.values && s.rays.values == a.rays.values;
        }
        int schedule_violations = 0;
        for (double delta : {0.1, 0.2, 0.3, 0.4, 0.5}) {
            o.delta = delta;
            const auto r = sampling::sample_async(field, 2, o, 9);
            for (const auto& row : r.log.steps)
                schedule_violations += row.t_ray != std::max(row.t_image - delta, 0.0);
            const auto knots = flow::timestep_schedule(64);
            const auto sch = sampling::AsyncSchedule::make(knots, delta);
            for (std::size_t i = 0; i < sch.image.size(); ++i)
                schedule_violations += sch.ray[i] != std::max(sch.image[i] - delta, 0.0);
        }
        return std::pair{identical == 3 && schedule_violations == 0,
                         fmt("delta=0 async bit-identical to sync in %d/3 seeds; %d schedule violations over "
                             "delta in {0.1..0.5}",
                             identical, schedule_violations)};
    });

    std::printf("training toy joint model (%d scenes, %d steps)...\n", toy.scenes, toy.train.steps);
    std::fflush(stdout);
    const auto train_start = Clock::now();
    std::optional<joint::JointModel> trained;
    try {
        trained.emplace(harness::obtain_joint_model(toy));
    } catch (const std::exception& e) {
        std::printf("joint model training failed: %s\n", e.what());
    }
    std::printf("trained in %.1fs\n", seconds_since(train_start));

    criterion(6, "async sampling reduces oscillation", [&] {
        if (!trained)
            return std::pair{false, std::string("no trained model")};
        const sampling::ModelField field(*trained);
        std::vector<std::uint64_t> seeds;
        Rng base = Rng(toy.seed).split(30);
        for (int i = 0; i < toy.sample_seeds; ++i)
            seeds.push_back(base.split(static_cast<std::uint64_t>(i)).key());
        const auto pc = harness::compare_sync_async(field, toy, seeds);
        const auto& s = pc.sync_metrics;
        const auto& a = pc.async_metrics;
        const bool pass = a.oscillation <= s.oscillation && a.divergence_rate <= s.divergence_rate &&
                          pc.async_lower_fraction >= 0.7;
        return std::pair{pass, fmt("median oscillation sync %.4f async %.4f; divergence sync %.2f async %.2f; "
                                   "async lower in %.0f%% of %zu pairs (need >= 70%%)",
                                   s.oscillation, a.oscillation, s.divergence_rate, a.divergence_rate,
                                   100.0 * pc.async_lower_fraction, seeds.size())};
    });

    criterion(7, "guidance algebra", [&] {
        const joint::JointModel m(toy.model, 7);
        const sampling::ModelField field(m);
        const auto& c = toy.model;
        Rng rng(707);
        const auto s = random_state(c, rng, 3);
        const auto frozen = ViewTensor::normal(c.views, c.ray_height, c.ray_width, 6, rng);
        const auto cond_rays = ViewTensor::normal(c.views, c.ray_height, c.ray_width, 6, rng);
        double gap = 0.0;
        for (auto mode : {sampling::GuidanceMode::Vanilla, sampling::GuidanceMode::AsyncCfg,
                          sampling::GuidanceMode::CameraCond})
            for (int which = 0; which < 2; ++which) {
                auto at = [&](double scale) {
                    sampling::GuidanceConfig g;
                    g.mode = mode;
                    g.text_scale = which == 0 ? scale : 0.8;
                    g.pose_scale = which == 1 ? scale : 0.6;
                    return sampling::guided_field(field, s, g, {&frozen, &cond_rays});
                };
                const auto f0 = at(0.0), fh = at(0.5), f1 = at(1.0);
                gap = std::max({gap, collinearity_gap(f0.image, fh.image, f1.image),
                                collinearity_gap(f0.rays, fh.rays, f1.rays)});
            }

        const auto plain = field.evaluate(s);
        bool collapse = true;
        for (auto mode : {sampling::GuidanceMode::Vanilla, sampling::GuidanceMode::AsyncCfg}) {
            sampling::GuidanceConfig g;
            g.mode = mode;
            const auto out = sampling::guided_field(field, s, g, {&frozen, nullptr});
            collapse = collapse && out.image.values == plain.image.values && out.rays.values == plain.rays.values;
        }
        auto held = s;
        held.rays = cond_rays;
        held.t_ray = 0.05;
        sampling::GuidanceConfig zero_cam;
        zero_cam.mode = sampling::GuidanceMode::CameraCond;
        const auto cam_zero = sampling::guided_field(field, held, zero_cam, {&frozen, &cond_rays});
        collapse = collapse && cam_zero.image.values == field.evaluate(held).image.values;

        auto null_state = s;
        null_state.condition = c.null_condition();
        auto cam_state = s;
        cam_state.rays = cond_rays;
        cam_state.t_ray = 0.05;
        auto free_state = s;
        free_state.rays = frozen;
        free_state.t_ray = 1.0;
        const Eigen::VectorXd u = plain.image.flat();
        const Eigen::VectorXd u_null = field.evaluate(null_state).image.flat();
        const Eigen::VectorXd u_cam = field.evaluate(cam_state).image.flat();
        const Eigen::VectorXd u_free = field.evaluate(free_state).image.flat();
        const Eigen::VectorXd four_zero = 0.5 * (u + u_cam);
        const double zero_err = max_abs(sampling::guided_field(field, s, zero_cam, {&frozen, &cond_rays}).image.flat() -
                                        four_zero);
        sampling::GuidanceConfig cam = zero_cam;
        cam.text_scale = 1.3;
        cam.pose_scale = 0.4;
        const Eigen::VectorXd four = 0.5 * ((1 + 1.3) * u - 1.3 * u_null + (1 + 0.4) * u_cam - 0.4 * u_free);
        const double four_err = max_abs(sampling::guided_field(field, s, cam, {&frozen, &cond_rays}).image.flat() - four);
        const bool pass = gap <= 1e-9 && collapse && zero_err <= 1e-12 && four_err <= 1e-12;
        return std::pair{pass, fmt("collinearity gap %.2e (tol 1e-9); s=0 collapse %s; four-term error %.2e at zero "
                                   "scales, %.2e at (1.3, 0.4)",
                                   gap, collapse ? "exact" : "BROKEN", zero_err, four_err)};
    });

    criterion(8, "rasterizer", [] {
        Rng rng(808);
        double oracle = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            splat::SplatSet s;
            s.gaussians.push_back(random_gaussian(rng));
            const auto pose = front_camera(rng.uniform(6.0, 14.0), rng.uniform(3.0, 5.0), rng.uniform(2.0, 4.0));
            splat::RenderOptions opt;
            opt.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            const auto r = splat::render(s, pose, 6, 8, opt);
            oracle = std::max(oracle,
                              max_image_diff(r.image, single_gaussian_oracle(s.gaussians[0], pose, 6, 8, opt.background)));
        }

        splat::SplatSet many;
        for (int i = 0; i < 8; ++i)
            many.gaussians.push_back(random_gaussian(rng));
        const auto pose = front_camera(10.0, 4.0, 3.0);
        const auto ref = splat::render(many, pose, 6, 8).image;
        bool order = true;
        for (int perm = 0; perm < 10; ++perm) {
            auto shuffled = many;
            for (std::size_t i = shuffled.gaussians.size() - 1; i > 0; --i)
                std::swap(shuffled.gaussians[i], shuffled.gaussians[rng.below(i + 1)]);
            order = order && splat::render(shuffled, pose, 6, 8).image == ref;
        }

        splat::SplatSet s;
        for (int i = 0; i < 3; ++i)
            s.gaussians.push_back(random_gaussian(rng));
        splat::RenderOptions opt;
        opt.background = Vec3(0.3, 0.1, 0.5);
        std::vector<double> w(6 * 8 * 3);
        for (double& v : w)
            v = rng.normal();
        auto loss = [&](const splat::SplatSet& x) {
            const auto r = splat::render(x, pose, 6, 8, opt);
            double sum = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i)
                sum += w[i] * r.image.rgb[i];
            return sum;
        };
        const auto grad = splat::render_backward(s, pose, 6, 8, w, opt);
        const double h = 1e-6;
        double worst = 0.0;
        auto check = [&](double analytic, auto mutate) {
            auto up = s, down = s;
            mutate(up, h);
            mutate(down, -h);
            const double fd = (loss(up) - loss(down)) / (2 * h);
            worst = std::max(worst, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-4));
        };
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (int c = 0; c < 3; ++c) {
                check(grad.mean[i][c], [&](splat::SplatSet& x, double d) { x.gaussians[i].mean[c] += d; });
                check(grad.color[i][c], [&](splat::SplatSet& x, double d) { x.gaussians[i].color[c] += d; });
                check(grad.scale[i][c], [&](splat::SplatSet& x, double d) { x.gaussians[i].scale[c] += d; });
            }
            check(grad.opacity[i], [&](splat::SplatSet& x, double d) { x.gaussians[i].opacity += d; });
            for (int c = 0; c < 4; ++c)
                check(grad.rotation[i][c], [&](splat::SplatSet& x, double d) { x.gaussians[i].rotation[c] += d; });
        }
        const bool pass = oracle <= 1e-6 && order && worst <= 1e-3;
        return std::pair{pass, fmt("single-Gaussian max error %.2e (tol 1e-6); order invariance %s; gradient max "
                                   "relative FD error %.2e (tol 1e-3)",
                                   oracle, order ? "exact" : "BROKEN", worst)};
    });

    std::printf("training splat decoder (%d steps)...\n", toy.decoder_train.steps);
    std::fflush(stdout);
    std::optional<splat::SplatDecoder> decoder;
    try {
        decoder.emplace(harness::obtain_decoder(toy));
    } catch (const std::exception& e) {
        std::printf("decoder training failed: %s\n", e.what());
    }
    const auto held_out = harness::make_scenes(toy, true);

    criterion(9, "camera-conditioned loop", [&] {
        if (!trained || !decoder)
            return std::pair{false, std::string("missing trained model or decoder")};
        const sampling::ModelField field(*trained);
        const auto start = Clock::now();
        Rng base = Rng(toy.seed).split(40);
        int ok = 0;
        double rot_sum = 0.0, trans_sum = 0.0;
        for (std::size_t i = 0; i < held_out.size(); ++i) {
            const auto r = harness::camera_cond_loop(field, *decoder, toy, held_out[i], base.split(i).key());
            ok += r.ok;
            rot_sum += r.error.rotation;
            trans_sum += r.error.translation;
        }
        const double minutes = seconds_since(start) / 60.0;
        const int need = static_cast<int>(std::ceil(0.8 * static_cast<double>(held_out.size())));
        const bool pass = ok >= need && minutes < 20.0;
        return std::pair{pass, fmt("%d/%zu scenes with rot_err < 0.15 and trans_err < 0.15 (need %d); mean rot %.3f "
                                   "trans %.3f; %.1f min (limit 20)",
                                   ok, held_out.size(), need, rot_sum / held_out.size(),
                                   trans_sum / held_out.size(), minutes)};
    });

    criterion(10, "decoder smoke run", [&] {
        if (!decoder)
            return std::pair{false, std::string("no trained decoder")};
        const auto ev = harness::evaluate_decoder(*decoder, toy, held_out);
        const double ratio = ev.l1 / ev.baseline_l1;
        return std::pair{ratio < 0.5, fmt("held-out L1 %.4f vs mean-color baseline %.4f, ratio %.3f (need < 0.5)",
                                          ev.l1, ev.baseline_l1, ratio)};
    });

    std::printf("%d/10 criteria passed in %.1fs\n", 10 - g_failures, seconds_since(total));
    return g_failures == 0 ? 0 : 1;
}
