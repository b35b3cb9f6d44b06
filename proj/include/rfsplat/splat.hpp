// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/geometry.hpp"
#include "rfsplat/nn.hpp"
#include "rfsplat/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rfsplat::splat {

using geometry::CameraPose;
using geometry::Mat3;
using geometry::Vec3;
using Vec4 = Eigen::Vector4d;

/// Rotation matrix of a quaternion stored as (w, x, y, z); assumes unit norm.
Mat3 quaternion_matrix(const Vec4& q);

struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    double opacity = 1.0;
    /// Unit quaternion (w, x, y, z).
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    Vec3 scale = Vec3::Ones();
    Vec3 color = Vec3::Zero();

    Mat3 covariance() const;
    void validate() const;
};

struct SplatSet {
    std::vector<Gaussian3D> gaussians;

    std::size_t size() const { return gaussians.size(); }
};

/// Row-major RGB image with values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> rgb;

    static Image filled(int height, int width, const Vec3& color);
    double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const Image& o) const { return height == o.height && width == o.width && rgb == o.rgb; }
};

struct RenderOptions {
    Vec3 background = Vec3::Zero();
    /// Contributions below this opacity are skipped.
    double min_alpha = 1e-9;
    double max_alpha = 0.999;
    /// Gaussians closer than this view-space depth are culled.
    double near = 1e-3;
    /// Added to singular projected covariances (pixels squared).
    double epsilon = 0.3;
};

struct RenderResult {
    Image image;
    /// 1 - final transmittance per pixel.
    std::vector<double> alpha;
    /// Number of projected covariances that needed regularization.
    int regularized = 0;
};

/// EWA splatting with exact per-pixel evaluation and front-to-back
/// compositing in view-space depth order. Pixel (x, y) samples the image
/// plane at (x + 0.5, y + 0.5).
RenderResult render(const SplatSet& splats, const CameraPose& pose, int height, int width,
                    const RenderOptions& options = {});

struct RenderGradient {
    std::vector<Vec3> mean;
    std::vector<double> opacity;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<Vec3> color;

    void resize(std::size_t n);
    void add(const RenderGradient& other);
};

/// Gradient of sum(d_rgb * render(...).image.rgb) with respect to every
/// Gaussian parameter. Quaternion gradients are taken with respect to the
/// stored components through quaternion_matrix.
RenderGradient render_backward(const SplatSet& splats, const CameraPose& pose, int height, int width,
                               std::span<const double> d_rgb, const RenderOptions& options = {});

struct ImageLoss {
    double l1 = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
    /// d total / d rendered, same layout as Image::rgb.
    std::vector<double> grad;
};

inline constexpr double kPerceptualWeight = 0.1;

/// Fixed-filter stand-in for a learned perceptual distance: mean absolute
/// difference of horizontal and vertical finite differences at three
/// average-pooled scales, plus the absolute difference of per-channel means.
double gradient_difference(const Image& a, const Image& b);

/// L1 + 0.1 * gradient_difference, with the gradient for `rendered`.
ImageLoss image_loss(const Image& rendered, const Image& truth);

struct View {
    CameraPose pose;
    Image image;
};

struct SplatLosses {
    double target = 0.0;
    double source = 0.0;
};

/// Mean image_loss over novel (target) views and over source views.
SplatLosses splat_losses(const SplatSet& splats, std::span<const View> sources, std::span<const View> targets,
                         const RenderOptions& options = {});

/// Box filter by an integer factor, mapped to [-1, 1] latents.
ViewTensor encode_latents(std::span<const Image> views, int factor);
Image average_pool(const Image& image, int factor);

struct DecoderConfig {
    int height = 32;
    int width = 48;
    int latent_height = 8;
    int latent_width = 12;
    int channels = 3;
    int ray_height = 10;
    int ray_width = 16;
    int hidden = 64;
    int layers = 2;
    /// Depth at zero output, in world units.
    double base_depth = 2.5;
    /// Scale at zero output, in world units.
    double base_scale = 0.04;

    void validate() const;
};

/// Raw per-pixel outputs: depth, opacity logit, RGB logits, quaternion,
/// log-scale.
inline constexpr int kDecoderChannels = 12;
/// Ray embedding per pixel: unit direction, moment, origin.
inline constexpr int kRayEmbedding = 9;

struct PixelRays {
    /// Per view, per pixel (row-major) unit direction and origin.
    std::vector<Vec3> direction;
    std::vector<Vec3> moment;
    std::vector<Vec3> origin;
};

/// Bilinear upsampling of a ray grid to pixel resolution (linear
/// extrapolation at the border), followed by m <- m - (m . d^) d^ and a
/// per-view center from the grid rays.
PixelRays upsample_rays(const ViewTensor& rays, int height, int width);

class SplatDecoder {
public:
    SplatDecoder(DecoderConfig config, std::uint64_t seed);

    const DecoderConfig& config() const { return m_config; }
    nn::ParameterSet& params() { return m_params; }
    const nn::ParameterSet& params() const { return m_params; }

    /// Constant per-pixel input features, views * height * width rows.
    nn::Matrix features(const ViewTensor& latents, const PixelRays& rays) const;
    /// Raw outputs on tape.
    nn::Var raw(nn::Tape& tape, const nn::Matrix& features) const;

    SplatSet decode(const ViewTensor& latents, const ViewTensor& rays) const;

private:
    DecoderConfig m_config;
    nn::ParameterSet m_params;
};

/// Maps raw outputs to Gaussians placed along the pixel rays.
SplatSet raw_to_splats(const nn::Matrix& raw, const PixelRays& rays, const DecoderConfig& config);
/// Chains a Gaussian gradient back to the raw outputs.
nn::Matrix raw_backward(const nn::Matrix& raw, const PixelRays& rays, const DecoderConfig& config,
                        const RenderGradient& grad);

struct Scene {
    SplatSet splats;
    geometry::Trajectory trajectory;
    std::vector<Image> views;
    geometry::Trajectory targets;
    std::vector<Image> target_views;
    int condition = 0;
};

struct SceneConfig {
    int views = 8;
    int target_views = 13;
    int height = 32;
    int width = 48;
    double focal = 40.0;
};

inline constexpr int kDescriptorCount = 12;
/// Descriptor text for a condition id ("red sphere left" style).
std::string descriptor(int condition);

Mat3 scene_intrinsics(const SceneConfig& config);

/// Procedural scene: 1-4 ellipsoidal Gaussian clusters, an orbit or dolly
/// trajectory looking at the origin, and renders of every view.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config = {});

struct DecoderTrainConfig {
    int steps = 5000;
    double learning_rate = 2e-3;
    /// Novel views rendered per step.
    int target_views = 13;
    /// Source views re-rendered per step.
    int source_views = 8;
    double clip_norm = 1.0;
    RenderOptions render;
};

struct DecoderLogEntry {
    long step = 0;
    double loss = 0.0;
    double loss_target = 0.0;
    double loss_source = 0.0;
};

struct DecoderExample {
    ViewTensor latents;
    ViewTensor rays;
    std::vector<View> sources;
    std::vector<View> targets;
};

/// Builds a decoder example from a scene using the ray grid in `config`.
DecoderExample make_decoder_example(const Scene& scene, const DecoderConfig& config);

/// One loss evaluation with gradient accumulation into `grads` when given.
SplatLosses decoder_step(const SplatDecoder& decoder, const DecoderExample& example, std::span<const int> sources,
                         std::span<const int> targets, const RenderOptions& options, nn::ParameterSet* grads);

std::vector<DecoderLogEntry> train_decoder(SplatDecoder& decoder, std::span<const DecoderExample> dataset,
                                           const DecoderTrainConfig& config, std::uint64_t seed);

void write_splats(std::ostream& out, const SplatSet& splats);
SplatSet read_splats(std::istream& in);
void write_ppm(std::ostream& out, const Image& image);
Image read_ppm(std::istream& in);

}  // namespace rfsplat::splat
