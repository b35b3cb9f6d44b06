// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/sampling.hpp"
#include "rfsplat/splat.hpp"
#include "test_support.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace rfsplat;
using namespace rfsplat::splat;
using rfsplat::testing::expect_error;

namespace {

CameraPose front_camera(double focal = 10.0, double cx = 4.0, double cy = 3.0) {
    Mat3 k;
    k << focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0;
    return CameraPose::look_at(k, Vec3(0.0, 0.0, -3.0), Vec3::Zero());
}

Vec4 random_quaternion(Rng& rng) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q / q.norm();
}

Gaussian3D random_gaussian(Rng& rng) {
    Gaussian3D g;
    g.mean = Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5));
    g.opacity = rng.uniform(0.3, 0.8);
    g.rotation = random_quaternion(rng);
    g.scale = Vec3(rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3));
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    return g;
}

// Pixel projection of a camera-frame point.
Eigen::Vector2d project(const Mat3& k, const Vec3& t) {
    const Vec3 h = k * t;
    return {h.x() / h.z(), h.y() / h.z()};
}

// Direct evaluation of one Gaussian at every pixel; the Jacobian of the
// projection comes from central differences.
Image single_gaussian_oracle(const Gaussian3D& g, const CameraPose& pose, int height, int width, const Vec3& bg) {
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
    Image out = Image::filled(height, width, bg);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector2d d = Eigen::Vector2d(x + 0.5, y + 0.5) - uv;
            const double a = std::min(g.opacity * std::exp(-0.5 * d.dot(cov.inverse() * d)), 0.999);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = g.color[c] * a + bg[c] * (1.0 - a);
        }
    return out;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i)
        m = std::max(m, std::abs(a.rgb[i] - b.rgb[i]));
    return m;
}

Image random_image(int h, int w, Rng& rng) {
    Image img = Image::filled(h, w, Vec3::Zero());
    for (double& v : img.rgb)
        v = rng.uniform();
    return img;
}

void expect_gradient_close(double analytic, double fd, const std::string& what) {
    EXPECT_LE(std::abs(analytic - fd), 1e-3 * std::max(std::abs(fd), 1e-4)) << what << " analytic " << analytic
                                                                             << " fd " << fd;
}

DecoderConfig micro_decoder_config() {
    DecoderConfig c;
    c.height = 4;
    c.width = 4;
    c.latent_height = 2;
    c.latent_width = 2;
    c.ray_height = 2;
    c.ray_width = 2;
    c.hidden = 8;
    c.layers = 1;
    c.base_depth = 3.0;
    c.base_scale = 0.3;
    return c;
}

DecoderExample micro_example(const DecoderConfig& c, Rng& rng) {
    Mat3 k;
    k << 4.0, 0.0, 2.0, 0.0, 4.0, 2.0, 0.0, 0.0, 1.0;
    const auto source = CameraPose::look_at(k, Vec3(0.0, 0.0, -3.0), Vec3::Zero());
    const auto target = CameraPose::look_at(k, Vec3(0.6, 0.2, -2.9), Vec3::Zero());
    DecoderExample ex;
    ex.latents = ViewTensor::normal(1, c.latent_height, c.latent_width, c.channels, rng);
    const auto grid = geometry::PixelGrid::over_image(c.ray_height, c.ray_width, c.width, c.height);
    std::vector<geometry::RayBundle> bundles{geometry::camera_to_rays(source, grid)};
    ex.rays = sampling::rays_to_tensor(bundles);
    ex.sources.push_back({source, random_image(c.height, c.width, rng)});
    ex.targets.push_back({target, random_image(c.height, c.width, rng)});
    return ex;
}

}  // namespace

TEST(Gaussian3D, CovarianceAndValidation) {
    Rng rng(1);
    const auto g = random_gaussian(rng);
    const Mat3 cov = g.covariance();
    EXPECT_LT((cov - cov.transpose()).norm(), 1e-15);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues().minCoeff(), 0.0);
    g.validate();
    auto bad = g;
    bad.opacity = 1.2;
    expect_error(ErrorCode::InvalidArgument, [&] { bad.validate(); });
    bad = g;
    bad.rotation *= 1.1;
    expect_error(ErrorCode::InvalidArgument, [&] { bad.validate(); });
    bad = g;
    bad.scale.x() = 0.0;
    expect_error(ErrorCode::InvalidArgument, [&] { bad.validate(); });
}

TEST(Render, TransparentSplatsShowBackground) {
    Rng rng(2);
    SplatSet s;
    for (int i = 0; i < 5; ++i) {
        auto g = random_gaussian(rng);
        g.opacity = 0.0;
        s.gaussians.push_back(g);
    }
    RenderOptions opt;
    opt.background = Vec3(0.2, 0.4, 0.6);
    const auto r = render(s, front_camera(), 6, 8, opt);
    EXPECT_EQ(r.image, Image::filled(6, 8, opt.background));
    for (double a : r.alpha)
        EXPECT_EQ(a, 0.0);
}

TEST(Render, CenteredIsotropicGaussianHalfOpacity) {
    SplatSet s;
    Gaussian3D g;
    g.opacity = 0.5;
    g.scale = Vec3::Constant(0.2);
    g.color = Vec3::Ones();
    // The principal point sits on the center of pixel (3, 2).
    const auto pose = front_camera(10.0, 3.5, 2.5);
    g.mean = Vec3::Zero();
    s.gaussians.push_back(g);
    RenderOptions opt;
    opt.background = Vec3(0.1, 0.2, 0.3);
    const auto r = render(s, pose, 6, 8, opt);
    for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(r.image.at(2, 3, c), 0.5 + 0.5 * opt.background[c], 1e-6);
}

TEST(Render, SingleGaussianMatchesClosedForm) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        SplatSet s;
        s.gaussians.push_back(random_gaussian(rng));
        const auto pose = front_camera(rng.uniform(6.0, 14.0), rng.uniform(3.0, 5.0), rng.uniform(2.0, 4.0));
        RenderOptions opt;
        opt.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        const auto r = render(s, pose, 6, 8, opt);
        EXPECT_EQ(r.regularized, 0);
        EXPECT_LT(max_abs_diff(r.image, single_gaussian_oracle(s.gaussians[0], pose, 6, 8, opt.background)), 1e-6);
    }
}

TEST(Render, OrderInvariance) {
    Rng rng(4);
    SplatSet s;
    for (int i = 0; i < 6; ++i)
        s.gaussians.push_back(random_gaussian(rng));
    const auto pose = front_camera();
    const auto ref = render(s, pose, 6, 8);
    SplatSet rev = s;
    std::reverse(rev.gaussians.begin(), rev.gaussians.end());
    EXPECT_EQ(render(rev, pose, 6, 8).image, ref.image);
    SplatSet two;
    two.gaussians = {s.gaussians[0], s.gaussians[1]};
    SplatSet swapped;
    swapped.gaussians = {s.gaussians[1], s.gaussians[0]};
    EXPECT_EQ(render(two, pose, 6, 8).image, render(swapped, pose, 6, 8).image);
}

TEST(Render, AlphaAndWeightsBounded) {
    Rng rng(5);
    SplatSet s;
    for (int i = 0; i < 20; ++i) {
        auto g = random_gaussian(rng);
        g.opacity = 1.0;
        g.color = Vec3::Ones();
        s.gaussians.push_back(g);
    }
    const auto r = render(s, front_camera(), 6, 8);
    for (std::size_t p = 0; p < r.alpha.size(); ++p) {
        EXPECT_GE(r.alpha[p], 0.0);
        EXPECT_LT(r.alpha[p], 1.0);
        // With white splats on black, the color equals the summed weights.
        EXPECT_NEAR(r.image.rgb[p * 3], r.alpha[p], 1e-12);
    }
}

TEST(Render, BehindCameraCulled) {
    Gaussian3D g;
    g.mean = Vec3(0.0, 0.0, -4.0);
    g.scale = Vec3::Constant(0.3);
    g.color = Vec3::Ones();
    SplatSet s{{g}};
    const auto r = render(s, front_camera(), 6, 8);
    EXPECT_EQ(r.image, Image::filled(6, 8, Vec3::Zero()));
}

TEST(Render, DegenerateCovarianceRegularized) {
    Gaussian3D g;
    // A flat disk seen edge-on projects to a line.
    g.scale = Vec3(0.2, 1e-12, 0.2);
    g.color = Vec3::Ones();
    SplatSet s{{g}};
    const auto r = render(s, front_camera(10.0, 3.5, 2.5), 6, 8);
    EXPECT_EQ(r.regularized, 1);
    EXPECT_GT(r.image.at(2, 3, 0), 0.9);
}

TEST(RenderBackward, MatchesFiniteDifferences) {
    Rng rng(6);
    SplatSet s;
    for (int i = 0; i < 3; ++i)
        s.gaussians.push_back(random_gaussian(rng));
    const auto pose = front_camera();
    RenderOptions opt;
    opt.background = Vec3(0.3, 0.1, 0.5);
    std::vector<double> w(6 * 8 * 3);
    for (double& v : w)
        v = rng.normal();
    auto loss = [&](const SplatSet& x) {
        const auto r = render(x, pose, 6, 8, opt);
        double sum = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            sum += w[i] * r.image.rgb[i];
        return sum;
    };
    const auto grad = render_backward(s, pose, 6, 8, w, opt);
    const double h = 1e-6;
    auto fd = [&](auto mutate) {
        SplatSet up = s, down = s;
        mutate(up, h);
        mutate(down, -h);
        return (loss(up) - loss(down)) / (2 * h);
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            expect_gradient_close(grad.mean[i][c], fd([&](SplatSet& x, double d) { x.gaussians[i].mean[c] += d; }),
                                  "mean");
            expect_gradient_close(grad.color[i][c], fd([&](SplatSet& x, double d) { x.gaussians[i].color[c] += d; }),
                                  "color");
            expect_gradient_close(grad.scale[i][c], fd([&](SplatSet& x, double d) { x.gaussians[i].scale[c] += d; }),
                                  "scale");
        }
        expect_gradient_close(grad.opacity[i], fd([&](SplatSet& x, double d) { x.gaussians[i].opacity += d; }),
                              "opacity");
        for (int c = 0; c < 4; ++c)
            expect_gradient_close(grad.rotation[i][c],
                                  fd([&](SplatSet& x, double d) { x.gaussians[i].rotation[c] += d; }), "rotation");
    }
}

TEST(ImageLoss, IdenticalImagesGiveZero) {
    Rng rng(7);
    const auto a = random_image(6, 8, rng);
    const auto l = image_loss(a, a);
    EXPECT_EQ(l.l1, 0.0);
    EXPECT_EQ(l.perceptual, 0.0);
    EXPECT_EQ(l.total, 0.0);
}

TEST(ImageLoss, BlackVersusWhite) {
    const auto black = Image::filled(6, 8, Vec3::Zero());
    const auto white = Image::filled(6, 8, Vec3::Ones());
    const auto l = image_loss(black, white);
    EXPECT_EQ(l.l1, 1.0);
    EXPECT_DOUBLE_EQ(l.total, l.l1 + kPerceptualWeight * l.perceptual);
}

TEST(ImageLoss, PerceptualZeroOnlyForIdenticalImages) {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const auto a = random_image(4, 5, rng);
        EXPECT_EQ(gradient_difference(a, a), 0.0);
        for (std::size_t i = 0; i < a.rgb.size(); ++i)
            for (double d : {-0.25, 0.01}) {
                auto b = a;
                b.rgb[i] += d;
                EXPECT_GT(gradient_difference(a, b), 0.0) << "element " << i;
            }
    }
}

TEST(ImageLoss, GradientMatchesFiniteDifferences) {
    Rng rng(9);
    const auto truth = random_image(8, 8, rng);
    const auto rendered = random_image(8, 8, rng);
    const auto l = image_loss(rendered, truth);
    for (std::size_t i = 0; i < rendered.rgb.size(); i += 7) {
        auto up = rendered, down = rendered;
        up.rgb[i] += 1e-7;
        down.rgb[i] -= 1e-7;
        const double fd = (image_loss(up, truth).total - image_loss(down, truth).total) / 2e-7;
        EXPECT_NEAR(l.grad[i], fd, 1e-6);
    }
    expect_error(ErrorCode::ShapeMismatch, [&] { image_loss(rendered, random_image(4, 8, rng)); });
}

TEST(SplatLosses, PerfectSplatsGiveZeroLoss) {
    Rng rng(10);
    SplatSet s;
    for (int i = 0; i < 4; ++i)
        s.gaussians.push_back(random_gaussian(rng));
    const auto pose = front_camera();
    const std::vector<View> views{{pose, render(s, pose, 6, 8).image}};
    const auto l = splat_losses(s, views, views);
    EXPECT_EQ(l.target, 0.0);
    EXPECT_EQ(l.source, 0.0);
}

TEST(Decoder, ZeroOutputPlacesSplatsAtBaseDepth) {
    auto c = micro_decoder_config();
    c.base_depth = 1.0;
    Rng rng(11);
    const auto ex = micro_example(c, rng);
    const auto rays = upsample_rays(ex.rays, c.height, c.width);
    nn::Matrix raw = nn::Matrix::Zero(c.height * c.width, kDecoderChannels);
    raw.col(1).setConstant(40.0);
    const auto s = raw_to_splats(raw, rays, c);
    ASSERT_EQ(s.size(), static_cast<std::size_t>(c.height * c.width));
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& g = s.gaussians[i];
        EXPECT_NEAR((g.mean - rays.origin[i]).norm(), 1.0, 1e-12);
        EXPECT_LT(((g.mean - rays.origin[i]).cross(rays.direction[i])).norm(), 1e-12);
        EXPECT_EQ(g.rotation, Vec4(1.0, 0.0, 0.0, 0.0));
        EXPECT_NEAR(g.opacity, 1.0, 1e-15);
    }
}

TEST(Decoder, DecodedMeansArePixelAligned) {
    DecoderConfig c;
    c.height = 8;
    c.width = 12;
    c.latent_height = 4;
    c.latent_width = 6;
    c.ray_height = 4;
    c.ray_width = 6;
    c.hidden = 16;
    const SplatDecoder dec(c, 12);
    Rng rng(13);
    Mat3 k;
    k << 10.0, 0.0, 6.0, 0.0, 10.0, 4.0, 0.0, 0.0, 1.0;
    const auto grid = geometry::PixelGrid::over_image(c.ray_height, c.ray_width, c.width, c.height);
    std::vector<geometry::RayBundle> bundles;
    for (int v = 0; v < 2; ++v)
        bundles.push_back(geometry::camera_to_rays(rfsplat::testing::random_pose(rng, k), grid));
    const auto rays = sampling::rays_to_tensor(bundles);
    const auto latents = ViewTensor::normal(2, c.latent_height, c.latent_width, 3, rng);
    const auto s = dec.decode(latents, rays);
    ASSERT_EQ(s.size(), static_cast<std::size_t>(2 * c.height * c.width));
    const auto px = upsample_rays(rays, c.height, c.width);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s.gaussians[i].validate();
        EXPECT_LT(((s.gaussians[i].mean - px.origin[i]).cross(px.direction[i])).norm(), 1e-9);
        EXPECT_GT((s.gaussians[i].mean - px.origin[i]).dot(px.direction[i]), 0.0);
    }
}

TEST(Decoder, UpsampledRaysAreOrthogonalAndInterpolate) {
    Rng rng(14);
    Mat3 k;
    k << 10.0, 0.0, 6.0, 0.0, 10.0, 4.0, 0.0, 0.0, 1.0;
    const auto pose = rfsplat::testing::random_pose(rng, k);
    const auto grid = geometry::PixelGrid::over_image(4, 6, 12, 8);
    std::vector<geometry::RayBundle> bundles{geometry::camera_to_rays(pose, grid)};
    const auto px = upsample_rays(sampling::rays_to_tensor(bundles), 8, 12);
    ASSERT_EQ(px.direction.size(), 96u);
    for (std::size_t i = 0; i < px.direction.size(); ++i) {
        EXPECT_NEAR(px.direction[i].norm(), 1.0, 1e-12);
        EXPECT_NEAR(px.moment[i].dot(px.direction[i]), 0.0, 1e-12);
        EXPECT_LT((px.origin[i] - pose.center()).norm(), 1e-9);
    }
}

TEST(Decoder, ZeroDirectionRaysRejected) {
    auto rays = ViewTensor::zeros(1, 2, 2, 6);
    expect_error(ErrorCode::InvalidRays, [&] { upsample_rays(rays, 4, 4); });
}

TEST(Decoder, LossGradientMatchesFiniteDifferences) {
    const auto c = micro_decoder_config();
    SplatDecoder dec(c, 15);
    Rng rng(16);
    for (int i = 0; i < dec.params().size(); ++i)
        for (Eigen::Index j = 0; j < dec.params()[i].size(); ++j)
            dec.params()[i].data()[j] += 0.05 * rng.normal();
    const auto ex = micro_example(c, rng);
    const std::vector<int> src{0}, tgt{0};
    RenderOptions opt;
    auto grads = dec.params().zeros_like();
    decoder_step(dec, ex, src, tgt, opt, &grads);
    auto total = [&] {
        const auto l = decoder_step(dec, ex, src, tgt, opt, nullptr);
        return l.target + l.source;
    };
    int checked = 0;
    for (int i = 0; i < dec.params().size(); ++i)
        for (Eigen::Index j = 0; j < dec.params()[i].size(); j += 3) {
            double& p = dec.params()[i].data()[j];
            const double orig = p;
            const double h = 1e-6;
            p = orig + h;
            const double up = total();
            p = orig - h;
            const double down = total();
            p = orig;
            expect_gradient_close(grads[i].data()[j], (up - down) / (2 * h),
                                  dec.params().name(i) + "[" + std::to_string(j) + "]");
            ++checked;
        }
    EXPECT_GT(checked, 50);
}

TEST(Decoder, ZeroLearningRateKeepsParams) {
    const auto c = micro_decoder_config();
    SplatDecoder dec(c, 17);
    const auto before = dec.params();
    Rng rng(18);
    const std::vector<DecoderExample> data{micro_example(c, rng)};
    DecoderTrainConfig tc;
    tc.steps = 3;
    tc.learning_rate = 0.0;
    const auto log = train_decoder(dec, data, tc, 19);
    EXPECT_EQ(log.size(), 3u);
    EXPECT_TRUE(dec.params() == before);
}

TEST(Decoder, TrainingIsDeterministic) {
    const auto c = micro_decoder_config();
    Rng rng(20);
    const std::vector<DecoderExample> data{micro_example(c, rng)};
    DecoderTrainConfig tc;
    tc.steps = 5;
    SplatDecoder a(c, 21), b(c, 21);
    const auto la = train_decoder(a, data, tc, 22);
    const auto lb = train_decoder(b, data, tc, 22);
    for (std::size_t i = 0; i < la.size(); ++i)
        EXPECT_EQ(la[i].loss, lb[i].loss);
    EXPECT_TRUE(a.params() == b.params());
}

TEST(Decoder, TargetViewCountsAccepted) {
    for (int count : {13, 19}) {
        SceneConfig sc;
        sc.target_views = count;
        const auto scene = generate_scene(23, sc);
        EXPECT_EQ(scene.target_views.size(), static_cast<std::size_t>(count));
        DecoderConfig c;
        c.hidden = 8;
        const std::vector<DecoderExample> data{make_decoder_example(scene, c)};
        SplatDecoder dec(c, 24);
        DecoderTrainConfig tc;
        tc.steps = 1;
        tc.target_views = count;
        EXPECT_EQ(train_decoder(dec, data, tc, 25).size(), 1u);
    }
}

TEST(Scene, DeterministicPerSeed) {
    const auto a = generate_scene(26);
    const auto b = generate_scene(26);
    const auto c = generate_scene(27);
    std::ostringstream sa, sb, sc;
    write_splats(sa, a.splats);
    write_splats(sb, b.splats);
    write_splats(sc, c.splats);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NE(sa.str(), sc.str());
    ASSERT_EQ(a.views.size(), 8u);
    for (std::size_t v = 0; v < a.views.size(); ++v)
        EXPECT_EQ(a.views[v], b.views[v]);
    EXPECT_EQ(a.condition, b.condition);
}

TEST(Scene, TrajectoriesValidAndRecoverable) {
    const SceneConfig config;
    const auto grid = geometry::PixelGrid::over_image(10, 16, config.width, config.height);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = generate_scene(seed, config);
        ASSERT_EQ(s.trajectory.size(), 8u);
        s.trajectory.validate();
        EXPECT_GE(s.condition, 0);
        EXPECT_LT(s.condition, kDescriptorCount);
        EXPECT_FALSE(descriptor(s.condition).empty());
        std::vector<geometry::RayBundle> bundles;
        for (const auto& p : s.trajectory.poses) {
            EXPECT_EQ(p.intrinsics, s.trajectory.poses.front().intrinsics);
            bundles.push_back(geometry::camera_to_rays(p, grid));
        }
        const auto rec = geometry::rays_to_trajectory(bundles);
        for (std::size_t v = 0; v < bundles.size(); ++v) {
            EXPECT_LT(geometry::geodesic_angle(rec.poses[v].rotation, s.trajectory.poses[v].rotation), 1e-6);
            EXPECT_LT((rec.poses[v].translation - s.trajectory.poses[v].translation).norm(), 1e-6);
            EXPECT_LT(rfsplat::testing::relative_intrinsics_error(rec.poses[v].intrinsics,
                                                                  s.trajectory.poses[v].intrinsics),
                      1e-6);
        }
    }
}

TEST(SplatIo, RoundTrip) {
    Rng rng(28);
    SplatSet s;
    for (int i = 0; i < 4; ++i)
        s.gaussians.push_back(random_gaussian(rng));
    std::stringstream ss;
    write_splats(ss, s);
    EXPECT_EQ(ss.str().substr(0, 9), "SPLATS 4\n");
    const auto back = read_splats(ss);
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.gaussians[i].mean, s.gaussians[i].mean);
        EXPECT_EQ(back.gaussians[i].rotation, s.gaussians[i].rotation);
        EXPECT_EQ(back.gaussians[i].color, s.gaussians[i].color);
    }
    std::istringstream bad("SPLATS 2\n1 2 3\n");
    EXPECT_THROW(read_splats(bad), Error);
}

TEST(PpmIo, RoundTripQuantized) {
    Rng rng(29);
    const auto img = random_image(5, 7, rng);
    std::stringstream ss;
    write_ppm(ss, img);
    EXPECT_EQ(ss.str().substr(0, 2), "P6");
    const auto back = read_ppm(ss);
    ASSERT_EQ(back.height, 5);
    ASSERT_EQ(back.width, 7);
    EXPECT_LE(max_abs_diff(back, img), 0.5 / 255.0 + 1e-12);
}
