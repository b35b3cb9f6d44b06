// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace rfsplat::splat {

Image average_pool(const Image& image, int factor) {
    RFSPLAT_CHECK(factor > 0 && image.height % factor == 0 && image.width % factor == 0, ErrorCode::ShapeMismatch,
                  "pool factor must divide the image size");
    Image out = Image::filled(image.height / factor, image.width / factor, Vec3::Zero());
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y / factor, x / factor, c) += inv * image.at(y, x, c);
    return out;
}

ViewTensor encode_latents(std::span<const Image> views, int factor) {
    RFSPLAT_CHECK(!views.empty(), ErrorCode::InvalidArgument, "no views to encode");
    const Image first = average_pool(views.front(), factor);
    ViewTensor t = ViewTensor::zeros(static_cast<int>(views.size()), first.height, first.width, 3);
    for (int v = 0; v < t.views; ++v) {
        const Image pooled = average_pool(views[static_cast<std::size_t>(v)], factor);
        RFSPLAT_CHECK(pooled.height == t.height && pooled.width == t.width, ErrorCode::ShapeMismatch,
                      "views differ in size");
        for (std::size_t i = 0; i < pooled.rgb.size(); ++i)
            t.values[static_cast<std::size_t>(v) * pooled.rgb.size() + i] = 2.0 * pooled.rgb[i] - 1.0;
    }
    return t;
}

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Mean absolute finite-difference mismatch at one scale, accumulating the
// gradient with respect to `a` (scaled by `weight`) into `grad`.
double gradient_term(const Image& a, const Image& b, double weight, std::vector<double>* grad) {
    const int h = a.height, w = a.width;
    double sum_x = 0.0, sum_y = 0.0;
    const double nx = std::max(1, h * (w - 1) * 3);
    const double ny = std::max(1, (h - 1) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                if (x + 1 < w) {
                    const double d = (a.at(y, x + 1, c) - a.at(y, x, c)) - (b.at(y, x + 1, c) - b.at(y, x, c));
                    sum_x += std::abs(d);
                    if (grad) {
                        const double g = 0.5 * weight * sign(d) / nx;
                        (*grad)[(static_cast<std::size_t>(y) * w + x + 1) * 3 + c] += g;
                        (*grad)[(static_cast<std::size_t>(y) * w + x) * 3 + c] -= g;
                    }
                }
                if (y + 1 < h) {
                    const double d = (a.at(y + 1, x, c) - a.at(y, x, c)) - (b.at(y + 1, x, c) - b.at(y, x, c));
                    sum_y += std::abs(d);
                    if (grad) {
                        const double g = 0.5 * weight * sign(d) / ny;
                        (*grad)[(static_cast<std::size_t>(y + 1) * w + x) * 3 + c] += g;
                        (*grad)[(static_cast<std::size_t>(y) * w + x) * 3 + c] -= g;
                    }
                }
            }
    return 0.5 * (sum_x / nx + sum_y / ny);
}

double perceptual_with_grad(const Image& a, const Image& b, double weight, std::vector<double>* grad) {
    RFSPLAT_CHECK(a.height == b.height && a.width == b.width && a.rgb.size() == b.rgb.size(),
                  ErrorCode::ShapeMismatch, "image sizes differ");
    constexpr int kScales = 3;
    std::vector<Image> pa{a}, pb{b};
    while (static_cast<int>(pa.size()) < kScales && pa.back().height % 2 == 0 && pa.back().width % 2 == 0 &&
           pa.back().height >= 4 && pa.back().width >= 4) {
        pa.push_back(average_pool(pa.back(), 2));
        pb.push_back(average_pool(pb.back(), 2));
    }
    const double scale_weight = 1.0 / static_cast<double>(pa.size());
    double value = 0.0;
    std::vector<std::vector<double>> grads;
    for (std::size_t s = 0; s < pa.size(); ++s) {
        grads.emplace_back(grad ? pa[s].rgb.size() : 0, 0.0);
        value += scale_weight * gradient_term(pa[s], pb[s], weight * scale_weight, grad ? &grads.back() : nullptr);
    }
    // Per-channel mean difference pins down the constant offset that finite
    // differences cannot see.
    const double n = static_cast<double>(a.height) * a.width;
    for (int c = 0; c < 3; ++c) {
        double d = 0.0;
        for (std::size_t i = static_cast<std::size_t>(c); i < a.rgb.size(); i += 3)
            d += a.rgb[i] - b.rgb[i];
        d /= n;
        value += std::abs(d) / 3.0;
        if (grad)
            for (std::size_t i = static_cast<std::size_t>(c); i < a.rgb.size(); i += 3)
                grads[0][i] += weight * sign(d) / (3.0 * n);
    }
    if (grad) {
        // Pooling backward from the coarsest scale down.
        for (std::size_t s = pa.size() - 1; s > 0; --s) {
            const Image& fine = pa[s - 1];
            const int w = pa[s].width;
            for (int y = 0; y < fine.height; ++y)
                for (int x = 0; x < fine.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        grads[s - 1][(static_cast<std::size_t>(y) * fine.width + x) * 3 + c] +=
                            0.25 * grads[s][(static_cast<std::size_t>(y / 2) * w + x / 2) * 3 + c];
        }
        for (std::size_t i = 0; i < grad->size(); ++i)
            (*grad)[i] += grads[0][i];
    }
    return value;
}

}  // namespace

double gradient_difference(const Image& a, const Image& b) { return perceptual_with_grad(a, b, 1.0, nullptr); }

ImageLoss image_loss(const Image& rendered, const Image& truth) {
    RFSPLAT_CHECK(rendered.height == truth.height && rendered.width == truth.width &&
                      rendered.rgb.size() == truth.rgb.size(),
                  ErrorCode::ShapeMismatch, "image sizes differ");
    ImageLoss out;
    out.grad.assign(rendered.rgb.size(), 0.0);
    const double n = static_cast<double>(rendered.rgb.size());
    for (std::size_t i = 0; i < rendered.rgb.size(); ++i) {
        const double d = rendered.rgb[i] - truth.rgb[i];
        out.l1 += std::abs(d);
        out.grad[i] = sign(d) / n;
    }
    out.l1 /= n;
    out.perceptual = perceptual_with_grad(rendered, truth, kPerceptualWeight, &out.grad);
    out.total = out.l1 + kPerceptualWeight * out.perceptual;
    return out;
}

SplatLosses splat_losses(const SplatSet& splats, std::span<const View> sources, std::span<const View> targets,
                         const RenderOptions& options) {
    auto mean_loss = [&](std::span<const View> views) {
        if (views.empty())
            return 0.0;
        double sum = 0.0;
        for (const auto& v : views) {
            const auto r = render(splats, v.pose, v.image.height, v.image.width, options);
            sum += image_loss(r.image, v.image).total;
        }
        return sum / static_cast<double>(views.size());
    };
    return {mean_loss(targets), mean_loss(sources)};
}

void write_splats(std::ostream& out, const SplatSet& splats) {
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "SPLATS " << splats.size() << '\n';
    for (const auto& g : splats.gaussians) {
        out << g.mean.x() << ' ' << g.mean.y() << ' ' << g.mean.z() << ' ' << g.opacity;
        for (int i = 0; i < 4; ++i)
            out << ' ' << g.rotation[i];
        for (int i = 0; i < 3; ++i)
            out << ' ' << g.scale[i];
        for (int i = 0; i < 3; ++i)
            out << ' ' << g.color[i];
        out << '\n';
    }
    if (!out)
        throw Error(ErrorCode::Io, "failed to write splats");
}

SplatSet read_splats(std::istream& in) {
    std::string tag;
    std::size_t count = 0;
    RFSPLAT_CHECK(static_cast<bool>(in >> tag >> count) && tag == "SPLATS", ErrorCode::Io, "bad splat header");
    SplatSet s;
    s.gaussians.resize(count);
    for (auto& g : s.gaussians) {
        double v[14];
        for (double& x : v)
            RFSPLAT_CHECK(static_cast<bool>(in >> x), ErrorCode::Io, "truncated splat file");
        g.mean = Vec3(v[0], v[1], v[2]);
        g.opacity = v[3];
        g.rotation = Vec4(v[4], v[5], v[6], v[7]);
        g.scale = Vec3(v[8], v[9], v[10]);
        g.color = Vec3(v[11], v[12], v[13]);
    }
    return s;
}

void write_ppm(std::ostream& out, const Image& image) {
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::string bytes(image.rgb.size(), '\0');
    for (std::size_t i = 0; i < image.rgb.size(); ++i)
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image.rgb[i], 0.0, 1.0) * 255.0)));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error(ErrorCode::Io, "failed to write image");
}

Image read_ppm(std::istream& in) {
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    RFSPLAT_CHECK(static_cast<bool>(in >> magic >> w >> h >> maxval) && magic == "P6" && maxval == 255 && w > 0 &&
                      h > 0,
                  ErrorCode::Io, "unsupported PPM header");
    in.get();
    Image img = Image::filled(h, w, Vec3::Zero());
    std::string bytes(img.rgb.size(), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    RFSPLAT_CHECK(in.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorCode::Io, "truncated PPM data");
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.rgb[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
    return img;
}

}  // namespace rfsplat::splat
