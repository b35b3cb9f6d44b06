// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/splat.hpp"

#include "rfsplat/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rfsplat::splat {

using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

constexpr double kDepthClamp = 3.0;
constexpr double kScaleLow = -4.0;
constexpr double kScaleHigh = 3.0;
constexpr int kLatentTaps = 9;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Bilinear {
    int i0 = 0;
    double w = 0.0;
};

// Source index and weight along one axis; weights outside [0, 1] extrapolate.
Bilinear axis_weight(int pixel, int pixels, int cells, bool clamp) {
    const double g = (pixel + 0.5) * cells / pixels - 0.5;
    if (cells == 1)
        return {0, 0.0};
    int i0 = std::clamp(static_cast<int>(std::floor(g)), 0, cells - 2);
    double w = g - i0;
    if (clamp)
        w = std::clamp(w, 0.0, 1.0);
    return {i0, w};
}

}  // namespace

void DecoderConfig::validate() const {
    RFSPLAT_CHECK(height > 0 && width > 0 && latent_height > 0 && latent_width > 0 && channels > 0 &&
                      ray_height > 1 && ray_width > 1 && hidden > 0 && layers > 0,
                  ErrorCode::InvalidConfig, "decoder sizes must be positive");
    RFSPLAT_CHECK(base_depth > 0.0 && base_scale > 0.0, ErrorCode::InvalidConfig, "decoder bases must be positive");
}

PixelRays upsample_rays(const ViewTensor& rays, int height, int width) {
    RFSPLAT_CHECK(rays.channels == 6 && rays.height > 1 && rays.width > 1, ErrorCode::ShapeMismatch,
                  "ray tensor must have 6 channels on a grid of at least 2 x 2");
    PixelRays out;
    const std::size_t per_view = static_cast<std::size_t>(height) * width;
    out.direction.reserve(per_view * rays.views);
    out.moment.reserve(per_view * rays.views);
    out.origin.reserve(per_view * rays.views);
    geometry::PixelGrid grid;
    grid.rows = rays.height;
    grid.cols = rays.width;
    grid.pixels.assign(static_cast<std::size_t>(rays.height) * rays.width, Vec3::UnitZ());
    const auto bundles = sampling::tensor_to_rays(rays, grid);
    for (int v = 0; v < rays.views; ++v) {
        Vec3 center;
        try {
            center = geometry::estimate_center(bundles[static_cast<std::size_t>(v)]);
        } catch (const Error& e) {
            throw Error(ErrorCode::InvalidRays, std::string("view ") + std::to_string(v) + ": " + e.what());
        }
        for (int y = 0; y < height; ++y) {
            const Bilinear by = axis_weight(y, height, rays.height, false);
            for (int x = 0; x < width; ++x) {
                const Bilinear bx = axis_weight(x, width, rays.width, false);
                Vec3 d = Vec3::Zero(), m = Vec3::Zero();
                const double wy[2] = {1.0 - by.w, by.w};
                const double wx[2] = {1.0 - bx.w, bx.w};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                        const double wt = wy[a] * wx[b];
                        for (int c = 0; c < 3; ++c) {
                            d[c] += wt * rays.at(v, by.i0 + a, bx.i0 + b, c);
                            m[c] += wt * rays.at(v, by.i0 + a, bx.i0 + b, 3 + c);
                        }
                    }
                const double n = d.norm();
                RFSPLAT_CHECK(n > 1e-12 && std::isfinite(n), ErrorCode::InvalidRays, "zero ray direction");
                const Vec3 dh = d / n;
                m /= n;
                m -= m.dot(dh) * dh;
                out.direction.push_back(dh);
                out.moment.push_back(m);
                out.origin.push_back(center);
            }
        }
    }
    return out;
}

SplatDecoder::SplatDecoder(DecoderConfig config, std::uint64_t seed) : m_config(std::move(config)) {
    m_config.validate();
    Rng rng(seed);
    auto uniform = [&rng] { return rng.uniform(); };
    int in = kLatentTaps * m_config.channels + kRayEmbedding;
    for (int l = 0; l < m_config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        m_params.add(p + ".w", nn::glorot(in, m_config.hidden, uniform));
        m_params.add(p + ".b", Matrix::Zero(1, m_config.hidden));
        in = m_config.hidden;
    }
    m_params.add("out.w", nn::glorot(in, kDecoderChannels, uniform) * 0.1);
    m_params.add("out.b", Matrix::Zero(1, kDecoderChannels));
}

Matrix SplatDecoder::features(const ViewTensor& latents, const PixelRays& rays) const {
    const auto& c = m_config;
    RFSPLAT_CHECK(latents.height == c.latent_height && latents.width == c.latent_width &&
                      latents.channels == c.channels,
                  ErrorCode::ShapeMismatch, "latents do not match the decoder");
    const std::size_t per_view = static_cast<std::size_t>(c.height) * c.width;
    RFSPLAT_CHECK(rays.direction.size() == per_view * latents.views, ErrorCode::ShapeMismatch,
                  "pixel rays do not match the latents");
    // Bilinear upsampling of the latents to pixel resolution.
    std::vector<double> up(per_view * latents.views * c.channels, 0.0);
    auto up_at = [&](int v, int y, int x, int ch) -> double& {
        return up[((static_cast<std::size_t>(v) * c.height + y) * c.width + x) * c.channels + ch];
    };
    for (int v = 0; v < latents.views; ++v)
        for (int y = 0; y < c.height; ++y) {
            const Bilinear by = axis_weight(y, c.height, c.latent_height, true);
            for (int x = 0; x < c.width; ++x) {
                const Bilinear bx = axis_weight(x, c.width, c.latent_width, true);
                const int y1 = std::min(by.i0 + 1, c.latent_height - 1);
                const int x1 = std::min(bx.i0 + 1, c.latent_width - 1);
                for (int ch = 0; ch < c.channels; ++ch)
                    up_at(v, y, x, ch) = (1 - by.w) * ((1 - bx.w) * latents.at(v, by.i0, bx.i0, ch) +
                                                       bx.w * latents.at(v, by.i0, x1, ch)) +
                                         by.w * ((1 - bx.w) * latents.at(v, y1, bx.i0, ch) +
                                                 bx.w * latents.at(v, y1, x1, ch));
            }
        }
    Matrix f(static_cast<Eigen::Index>(per_view * latents.views), kLatentTaps * c.channels + kRayEmbedding);
    for (int v = 0; v < latents.views; ++v)
        for (int y = 0; y < c.height; ++y)
            for (int x = 0; x < c.width; ++x) {
                const std::size_t row = static_cast<std::size_t>(v) * per_view + static_cast<std::size_t>(y) * c.width + x;
                Eigen::Index col = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, c.height - 1);
                        const int xx = std::clamp(x + dx, 0, c.width - 1);
                        for (int ch = 0; ch < c.channels; ++ch)
                            f(static_cast<Eigen::Index>(row), col++) = up_at(v, yy, xx, ch);
                    }
                for (int k = 0; k < 3; ++k)
                    f(static_cast<Eigen::Index>(row), col++) = rays.direction[row][k];
                for (int k = 0; k < 3; ++k)
                    f(static_cast<Eigen::Index>(row), col++) = rays.moment[row][k];
                for (int k = 0; k < 3; ++k)
                    f(static_cast<Eigen::Index>(row), col++) = rays.origin[row][k];
            }
    return f;
}

Var SplatDecoder::raw(Tape& tape, const Matrix& features) const {
    Var h = tape.constant(features);
    for (int l = 0; l < m_config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        h = tape.silu(tape.add_row(tape.matmul(h, tape.parameter(m_params, p + ".w")),
                                   tape.parameter(m_params, p + ".b")));
    }
    return tape.add_row(tape.matmul(h, tape.parameter(m_params, "out.w")), tape.parameter(m_params, "out.b"));
}

SplatSet SplatDecoder::decode(const ViewTensor& latents, const ViewTensor& rays) const {
    const PixelRays pr = upsample_rays(rays, m_config.height, m_config.width);
    Tape tape(false);
    Var out = raw(tape, features(latents, pr));
    return raw_to_splats(tape.value(out), pr, m_config);
}

SplatSet raw_to_splats(const Matrix& raw, const PixelRays& rays, const DecoderConfig& config) {
    RFSPLAT_CHECK(raw.cols() == kDecoderChannels && static_cast<std::size_t>(raw.rows()) == rays.direction.size(),
                  ErrorCode::ShapeMismatch, "raw decoder output does not match the pixel rays");
    SplatSet s;
    s.gaussians.resize(rays.direction.size());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        auto& g = s.gaussians[static_cast<std::size_t>(i)];
        const auto r = raw.row(i);
        const double depth = config.base_depth * std::exp(std::clamp(r(0), -kDepthClamp, kDepthClamp));
        g.mean = rays.origin[static_cast<std::size_t>(i)] + depth * rays.direction[static_cast<std::size_t>(i)];
        g.opacity = sigmoid(r(1));
        g.color = Vec3(sigmoid(r(2)), sigmoid(r(3)), sigmoid(r(4)));
        Vec4 q(1.0 + r(5), r(6), r(7), r(8));
        const double qn = q.norm();
        g.rotation = qn > 1e-12 ? Vec4(q / qn) : Vec4(1.0, 0.0, 0.0, 0.0);
        for (int k = 0; k < 3; ++k)
            g.scale[k] = config.base_scale * std::exp(std::clamp(r(9 + k), kScaleLow, kScaleHigh));
    }
    return s;
}

Matrix raw_backward(const Matrix& raw, const PixelRays& rays, const DecoderConfig& config,
                    const RenderGradient& grad) {
    Matrix d = Matrix::Zero(raw.rows(), kDecoderChannels);
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        const auto r = raw.row(i);
        if (r(0) > -kDepthClamp && r(0) < kDepthClamp) {
            const double depth = config.base_depth * std::exp(r(0));
            d(i, 0) = grad.mean[u].dot(rays.direction[u]) * depth;
        }
        const double a = sigmoid(r(1));
        d(i, 1) = grad.opacity[u] * a * (1.0 - a);
        for (int k = 0; k < 3; ++k) {
            const double c = sigmoid(r(2 + k));
            d(i, 2 + k) = grad.color[u][k] * c * (1.0 - c);
        }
        Vec4 q(1.0 + r(5), r(6), r(7), r(8));
        const double qn = q.norm();
        if (qn > 1e-12) {
            const Vec4 qh = q / qn;
            const Vec4 dq = (grad.rotation[u] - qh * qh.dot(grad.rotation[u])) / qn;
            for (int k = 0; k < 4; ++k)
                d(i, 5 + k) = dq[k];
        }
        for (int k = 0; k < 3; ++k)
            if (r(9 + k) > kScaleLow && r(9 + k) < kScaleHigh)
                d(i, 9 + k) = grad.scale[u][k] * config.base_scale * std::exp(r(9 + k));
    }
    return d;
}

DecoderExample make_decoder_example(const Scene& scene, const DecoderConfig& config) {
    config.validate();
    RFSPLAT_CHECK(!scene.views.empty() && scene.views.front().height % config.latent_height == 0,
                  ErrorCode::ShapeMismatch, "scene views do not match the decoder");
    const int factor = scene.views.front().height / config.latent_height;
    DecoderExample ex;
    ex.latents = encode_latents(scene.views, factor);
    const auto grid = geometry::PixelGrid::over_image(config.ray_height, config.ray_width, config.width, config.height);
    std::vector<geometry::RayBundle> bundles;
    for (const auto& pose : scene.trajectory.poses)
        bundles.push_back(geometry::camera_to_rays(pose, grid));
    ex.rays = sampling::rays_to_tensor(bundles);
    for (std::size_t v = 0; v < scene.views.size(); ++v)
        ex.sources.push_back({scene.trajectory.poses[v], scene.views[v]});
    for (std::size_t v = 0; v < scene.target_views.size(); ++v)
        ex.targets.push_back({scene.targets.poses[v], scene.target_views[v]});
    return ex;
}

SplatLosses decoder_step(const SplatDecoder& decoder, const DecoderExample& example, std::span<const int> sources,
                         std::span<const int> targets, const RenderOptions& options, nn::ParameterSet* grads) {
    const auto& cfg = decoder.config();
    const PixelRays pr = upsample_rays(example.rays, cfg.height, cfg.width);
    Tape tape(grads != nullptr);
    Var out = decoder.raw(tape, decoder.features(example.latents, pr));
    const Matrix& raw = tape.value(out);
    const SplatSet splats = raw_to_splats(raw, pr, cfg);

    RenderGradient total;
    total.resize(splats.size());
    SplatLosses losses;
    auto accumulate = [&](const View& view, double weight) {
        const auto r = render(splats, view.pose, view.image.height, view.image.width, options);
        ImageLoss l = image_loss(r.image, view.image);
        if (grads) {
            for (double& g : l.grad)
                g *= weight;
            total.add(render_backward(splats, view.pose, view.image.height, view.image.width, l.grad, options));
        }
        return weight * l.total;
    };
    for (int t : targets)
        losses.target += accumulate(example.targets.at(static_cast<std::size_t>(t)), 1.0 / targets.size());
    for (int s : sources)
        losses.source += accumulate(example.sources.at(static_cast<std::size_t>(s)), 1.0 / sources.size());
    if (!std::isfinite(losses.target) || !std::isfinite(losses.source))
        throw Error(ErrorCode::TrainingDiverged, "non-finite decoder loss");
    if (grads) {
        tape.backward(out, raw_backward(raw, pr, cfg, total));
        tape.accumulate_gradients(*grads);
    }
    return losses;
}

std::vector<DecoderLogEntry> train_decoder(SplatDecoder& decoder, std::span<const DecoderExample> dataset,
                                           const DecoderTrainConfig& config, std::uint64_t seed) {
    RFSPLAT_CHECK(!dataset.empty(), ErrorCode::InvalidArgument, "empty decoder dataset");
    RFSPLAT_CHECK(config.steps >= 0 && config.target_views >= 0 && config.source_views >= 0 &&
                      config.target_views + config.source_views > 0,
                  ErrorCode::InvalidConfig, "invalid decoder training config");
    nn::Adam opt(decoder.params(), {config.learning_rate, 0.9, 0.999, 1e-8, config.clip_norm});
    nn::ParameterSet grads = decoder.params().zeros_like();
    const Rng root(seed);
    std::vector<DecoderLogEntry> log;
    auto pick = [](Rng& rng, int available, int count) {
        std::vector<int> idx(static_cast<std::size_t>(available));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < std::min(count, available); ++i)
            std::swap(idx[static_cast<std::size_t>(i)],
                      idx[static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(available - i))]);
        idx.resize(static_cast<std::size_t>(std::min(count, available)));
        return idx;
    };
    for (int step = 0; step < config.steps; ++step) {
        Rng rng = root.split(static_cast<std::uint64_t>(step));
        const auto& ex = dataset[rng.below(dataset.size())];
        const auto targets = pick(rng, static_cast<int>(ex.targets.size()), config.target_views);
        const auto sources = pick(rng, static_cast<int>(ex.sources.size()), config.source_views);
        grads.set_zero();
        SplatLosses l;
        try {
            l = decoder_step(decoder, ex, sources, targets, config.render, &grads);
        } catch (const Error& e) {
            throw Error(ErrorCode::TrainingDiverged, e.what(), step);
        }
        opt.step(decoder.params(), grads);
        log.push_back({step, l.target + l.source, l.target, l.source});
    }
    return log;
}

}  // namespace rfsplat::splat
