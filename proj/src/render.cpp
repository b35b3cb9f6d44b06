// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace rfsplat::splat {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

Mat3 quaternion_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

namespace {

// Partial derivatives of quaternion_matrix with respect to w, x, y, z.
std::array<Mat3, 4> quaternion_partials(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Mat3, 4> d;
    d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return d;
}

}  // namespace

Mat3 Gaussian3D::covariance() const {
    Mat3 r = quaternion_matrix(rotation);
    return r * scale.array().square().matrix().asDiagonal() * r.transpose();
}

void Gaussian3D::validate() const {
    RFSPLAT_CHECK(mean.allFinite() && color.allFinite(), ErrorCode::InvalidArgument, "non-finite Gaussian");
    RFSPLAT_CHECK(opacity >= 0.0 && opacity <= 1.0, ErrorCode::InvalidArgument, "opacity outside [0, 1]");
    RFSPLAT_CHECK(std::abs(rotation.norm() - 1.0) <= 1e-6, ErrorCode::InvalidArgument, "quaternion is not unit");
    RFSPLAT_CHECK((scale.array() > 0.0).all(), ErrorCode::InvalidArgument, "scales must be positive");
}

Image Image::filled(int height, int width, const Vec3& color) {
    Image img{height, width, {}};
    img.rgb.resize(static_cast<std::size_t>(height) * width * 3);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = color[static_cast<Eigen::Index>(i % 3)];
    return img;
}

void RenderGradient::resize(std::size_t n) {
    mean.assign(n, Vec3::Zero());
    opacity.assign(n, 0.0);
    rotation.assign(n, Vec4::Zero());
    scale.assign(n, Vec3::Zero());
    color.assign(n, Vec3::Zero());
}

void RenderGradient::add(const RenderGradient& o) {
    if (mean.empty()) {
        *this = o;
        return;
    }
    RFSPLAT_CHECK(o.mean.size() == mean.size(), ErrorCode::ShapeMismatch, "gradient sizes differ");
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] += o.mean[i];
        opacity[i] += o.opacity[i];
        rotation[i] += o.rotation[i];
        scale[i] += o.scale[i];
        color[i] += o.color[i];
    }
}

namespace {

struct Projected {
    int index = 0;
    Vec3 t;
    Vec2 uv;
    Mat23 jacobian;
    Mat3 sigma;
    Mat2 inverse;
    bool regularized = false;
};

struct Contribution {
    int projected = 0;
    double alpha = 0.0;
    double falloff = 0.0;
    bool clamped = false;
};

Mat23 perspective_jacobian(const Mat3& k, const Vec3& t) {
    const double fx = k(0, 0), s = k(0, 1), fy = k(1, 1);
    const double z = t.z();
    Mat23 j;
    j << fx / z, s / z, -(fx * t.x() + s * t.y()) / (z * z), 0.0, fy / z, -fy * t.y() / (z * z);
    return j;
}

class Rasterizer {
public:
    Rasterizer(const SplatSet& splats, const CameraPose& pose, int height, int width, const RenderOptions& opt)
        : m_splats(splats), m_pose(pose), m_height(height), m_width(width), m_opt(opt) {
        RFSPLAT_CHECK(height > 0 && width > 0, ErrorCode::InvalidArgument, "image size must be positive");
        pose.validate();
        project();
        rasterize();
    }

    RenderResult composite() const {
        RenderResult out;
        out.image = Image::filled(m_height, m_width, Vec3::Zero());
        out.alpha.assign(static_cast<std::size_t>(m_height) * m_width, 0.0);
        out.regularized = m_regularized;
        for (std::size_t p = 0; p < m_pixels.size(); ++p) {
            Vec3 c = Vec3::Zero();
            double trans = 1.0;
            for (const auto& ct : m_pixels[p]) {
                const auto& g = m_splats.gaussians[static_cast<std::size_t>(m_proj[ct.projected].index)];
                c += g.color * (ct.alpha * trans);
                trans *= 1.0 - ct.alpha;
            }
            c += m_opt.background * trans;
            for (int ch = 0; ch < 3; ++ch)
                out.image.rgb[p * 3 + ch] = c[ch];
            out.alpha[p] = 1.0 - trans;
        }
        return out;
    }

    RenderGradient backward(std::span<const double> d_rgb) const {
        RFSPLAT_CHECK(d_rgb.size() == static_cast<std::size_t>(m_height) * m_width * 3, ErrorCode::ShapeMismatch,
                      "image gradient has the wrong size");
        const std::size_t np = m_proj.size();
        std::vector<Vec2> d_uv(np, Vec2::Zero());
        std::vector<Mat2> d_inv(np, Mat2::Zero());
        RenderGradient grad;
        grad.resize(m_splats.size());

        std::vector<double> trans;
        for (std::size_t p = 0; p < m_pixels.size(); ++p) {
            const auto& list = m_pixels[p];
            if (list.empty())
                continue;
            const Vec3 g(d_rgb[p * 3], d_rgb[p * 3 + 1], d_rgb[p * 3 + 2]);
            if (g.isZero(0.0))
                continue;
            trans.resize(list.size() + 1);
            trans[0] = 1.0;
            for (std::size_t i = 0; i < list.size(); ++i)
                trans[i + 1] = trans[i] * (1.0 - list[i].alpha);
            double tail = g.dot(m_opt.background) * trans.back();
            const int py = static_cast<int>(p) / m_width;
            const int px = static_cast<int>(p) % m_width;
            const Vec2 pixel(px + 0.5, py + 0.5);
            for (std::size_t ii = list.size(); ii-- > 0;) {
                const auto& ct = list[ii];
                const auto& pr = m_proj[static_cast<std::size_t>(ct.projected)];
                const auto gi = static_cast<std::size_t>(pr.index);
                const auto& gs = m_splats.gaussians[gi];
                const double gc = g.dot(gs.color);
                grad.color[gi] += g * (ct.alpha * trans[ii]);
                const double d_alpha = gc * trans[ii] - tail / (1.0 - ct.alpha);
                tail += gc * ct.alpha * trans[ii];
                if (ct.clamped)
                    continue;
                grad.opacity[gi] += d_alpha * ct.falloff;
                const double d_falloff = d_alpha * gs.opacity;
                const double d_q = -0.5 * ct.falloff * d_falloff;
                const Vec2 delta = pixel - pr.uv;
                d_uv[static_cast<std::size_t>(ct.projected)] -= 2.0 * d_q * (pr.inverse * delta);
                d_inv[static_cast<std::size_t>(ct.projected)] += d_q * delta * delta.transpose();
            }
        }

        const Mat3& w = m_pose.rotation;
        const Mat3& k = m_pose.intrinsics;
        const double fx = k(0, 0), s = k(0, 1), fy = k(1, 1);
        for (std::size_t i = 0; i < np; ++i) {
            const auto& pr = m_proj[i];
            const auto gi = static_cast<std::size_t>(pr.index);
            const auto& gs = m_splats.gaussians[gi];
            const Mat2 d_cov2 = -pr.inverse * d_inv[i] * pr.inverse;
            const Mat23 m = pr.jacobian * w;
            const Mat3 d_sigma = m.transpose() * d_cov2 * m;
            const Mat23 d_m = (d_cov2 + d_cov2.transpose()) * m * pr.sigma;
            const Mat23 d_j = d_m * w.transpose();

            const double x = pr.t.x(), y = pr.t.y(), z = pr.t.z();
            Vec3 d_t = pr.jacobian.transpose() * d_uv[i];
            d_t.x() += d_j(0, 2) * (-fx / (z * z));
            d_t.y() += d_j(0, 2) * (-s / (z * z)) + d_j(1, 2) * (-fy / (z * z));
            d_t.z() += d_j(0, 0) * (-fx / (z * z)) + d_j(0, 1) * (-s / (z * z)) +
                       d_j(0, 2) * (2.0 * (fx * x + s * y) / (z * z * z)) + d_j(1, 1) * (-fy / (z * z)) +
                       d_j(1, 2) * (2.0 * fy * y / (z * z * z));
            grad.mean[gi] += w.transpose() * d_t;

            const Mat3 r = quaternion_matrix(gs.rotation);
            const Vec3 s2 = gs.scale.array().square().matrix();
            const Mat3 d_r = (d_sigma + d_sigma.transpose()) * r * s2.asDiagonal();
            const auto partials = quaternion_partials(gs.rotation);
            for (int c = 0; c < 4; ++c)
                grad.rotation[gi][c] += d_r.cwiseProduct(partials[static_cast<std::size_t>(c)]).sum();
            const Mat3 rs = r.transpose() * d_sigma * r;
            for (int c = 0; c < 3; ++c)
                grad.scale[gi][c] += 2.0 * gs.scale[c] * rs(c, c);
        }
        return grad;
    }

private:
    void project() {
        const auto& gs = m_splats.gaussians;
        const Mat3& w = m_pose.rotation;
        std::vector<Projected> proj;
        proj.reserve(gs.size());
        for (std::size_t i = 0; i < gs.size(); ++i) {
            const auto& g = gs[i];
            if (g.opacity <= m_opt.min_alpha)
                continue;
            Vec3 t = w * g.mean + m_pose.translation;
            if (!(t.z() > m_opt.near))
                continue;
            Projected p;
            p.index = static_cast<int>(i);
            p.t = t;
            const Vec3 hom = m_pose.intrinsics * t;
            p.uv = Vec2(hom.x() / hom.z(), hom.y() / hom.z());
            p.jacobian = perspective_jacobian(m_pose.intrinsics, t);
            p.sigma = g.covariance();
            const Mat23 m = p.jacobian * w;
            Mat2 cov = m * p.sigma * m.transpose();
            cov = 0.5 * (cov + cov.transpose());
            const double det = cov.determinant();
            const double tr = cov.trace();
            if (!(det > 1e-14 * tr * tr) || !(tr > 0.0)) {
                cov += m_opt.epsilon * Mat2::Identity();
                p.regularized = true;
                ++m_regularized;
            }
            p.inverse = cov.inverse();
            m_cov.push_back(cov);
            proj.push_back(p);
        }
        // Depth order with ties broken by content, so input order never matters.
        std::vector<std::size_t> order(proj.size());
        std::iota(order.begin(), order.end(), 0);
        auto key = [&](std::size_t i) {
            const auto& g = gs[static_cast<std::size_t>(proj[i].index)];
            return std::make_tuple(proj[i].t.z(), g.mean.x(), g.mean.y(), g.mean.z(), g.opacity, g.color.x(),
                                   g.color.y(), g.color.z(), g.scale.x(), g.scale.y(), g.scale.z(), g.rotation[0],
                                   g.rotation[1], g.rotation[2], g.rotation[3]);
        };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
        std::vector<Mat2> cov_sorted;
        for (std::size_t i : order) {
            m_proj.push_back(proj[i]);
            cov_sorted.push_back(m_cov[i]);
        }
        m_cov = std::move(cov_sorted);
    }

    void rasterize() {
        m_pixels.assign(static_cast<std::size_t>(m_height) * m_width, {});
        for (std::size_t i = 0; i < m_proj.size(); ++i) {
            const auto& pr = m_proj[i];
            const double opacity = m_splats.gaussians[static_cast<std::size_t>(pr.index)].opacity;
            const Mat2& cov = m_cov[i];
            const double half_tr = 0.5 * cov.trace();
            const double disc = std::sqrt(std::max(half_tr * half_tr - cov.determinant(), 0.0));
            const double lambda = half_tr + disc;
            const double reach = std::sqrt(2.0 * std::log(opacity / m_opt.min_alpha) * lambda);
            if (!std::isfinite(reach) || !pr.uv.allFinite())
                continue;
            const double xlo = std::ceil(pr.uv.x() - reach - 0.5);
            const double xhi = std::floor(pr.uv.x() + reach - 0.5);
            const double ylo = std::ceil(pr.uv.y() - reach - 0.5);
            const double yhi = std::floor(pr.uv.y() + reach - 0.5);
            if (xhi < 0 || yhi < 0 || xlo > m_width - 1 || ylo > m_height - 1)
                continue;
            const int x0 = static_cast<int>(std::max(xlo, 0.0));
            const int x1 = static_cast<int>(std::min(xhi, m_width - 1.0));
            const int y0 = static_cast<int>(std::max(ylo, 0.0));
            const int y1 = static_cast<int>(std::min(yhi, m_height - 1.0));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const Vec2 d = Vec2(x + 0.5, y + 0.5) - pr.uv;
                    const double falloff = std::exp(-0.5 * d.dot(pr.inverse * d));
                    double a = opacity * falloff;
                    if (a < m_opt.min_alpha)
                        continue;
                    bool clamped = false;
                    if (a > m_opt.max_alpha) {
                        a = m_opt.max_alpha;
                        clamped = true;
                    }
                    m_pixels[static_cast<std::size_t>(y) * m_width + x].push_back(
                        {static_cast<int>(i), a, falloff, clamped});
                }
        }
    }

    const SplatSet& m_splats;
    const CameraPose& m_pose;
    int m_height;
    int m_width;
    RenderOptions m_opt;
    std::vector<Projected> m_proj;
    std::vector<Mat2> m_cov;
    std::vector<std::vector<Contribution>> m_pixels;
    int m_regularized = 0;
};

}  // namespace

RenderResult render(const SplatSet& splats, const CameraPose& pose, int height, int width,
                    const RenderOptions& options) {
    return Rasterizer(splats, pose, height, width, options).composite();
}

RenderGradient render_backward(const SplatSet& splats, const CameraPose& pose, int height, int width,
                               std::span<const double> d_rgb, const RenderOptions& options) {
    return Rasterizer(splats, pose, height, width, options).backward(d_rgb);
}

}  // namespace rfsplat::splat
