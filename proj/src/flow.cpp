// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/flow.hpp"

#include "rfsplat/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace rfsplat::flow {

FlowSample interpolate(const Vector& y0, const Vector& y1, double t) {
    RFSPLAT_CHECK(y0.size() == y1.size(), ErrorCode::ShapeMismatch, "interpolation endpoints differ in size");
    RFSPLAT_CHECK(t >= 0.0 && t <= 1.0, ErrorCode::InvalidArgument, "t must lie in [0, 1]");
    return {t * y1 + (1.0 - t) * y0, t};
}

namespace {

void check_batch(std::span<const TrainingPair> batch, std::span<const double> t) {
    RFSPLAT_CHECK(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
    RFSPLAT_CHECK(batch.size() == t.size(), ErrorCode::ShapeMismatch, "one timestep per pair required");
}

}  // namespace

double cfm_loss(const FieldModel& model, std::span<const TrainingPair> batch, std::span<const double> t) {
    check_batch(batch, t);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& pair = batch[i];
        Vector yt = interpolate(pair.noise, pair.data, t[i]).data;
        Vector u = model.evaluate(yt, t[i]);
        if (!u.allFinite())
            throw Error(ErrorCode::NonFiniteField, "at batch element " + std::to_string(i));
        RFSPLAT_CHECK(u.size() == yt.size(), ErrorCode::ShapeMismatch, "field has wrong size");
        total += (u - (pair.data - pair.noise)).squaredNorm() / static_cast<double>(u.size());
    }
    return total / static_cast<double>(batch.size());
}

LossGradient cfm_loss_gradient(const ParametricField& model, std::span<const TrainingPair> batch,
                               std::span<const double> t) {
    check_batch(batch, t);
    LossGradient out;
    out.gradient = Vector::Zero(model.num_parameters());
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& pair = batch[i];
        Vector yt = interpolate(pair.noise, pair.data, t[i]).data;
        Vector u = model.evaluate(yt, t[i]);
        if (!u.allFinite())
            throw Error(ErrorCode::NonFiniteField, "at batch element " + std::to_string(i));
        Vector residual = u - (pair.data - pair.noise);
        const double inv_dim = 1.0 / static_cast<double>(u.size());
        out.loss += inv_batch * inv_dim * residual.squaredNorm();
        out.gradient += (2.0 * inv_batch * inv_dim) * model.parameter_jacobian(yt, t[i]).transpose() * residual;
    }
    return out;
}

void GaussianMixtureSpec::validate() const {
    RFSPLAT_CHECK(!components.empty(), ErrorCode::InvalidArgument, "mixture has no components");
    double total = 0.0;
    const Eigen::Index dim = dimension();
    for (const auto& c : components) {
        RFSPLAT_CHECK(c.weight > 0.0, ErrorCode::InvalidArgument, "mixture weights must be positive");
        RFSPLAT_CHECK(c.mean.size() == dim && c.variance.size() == dim, ErrorCode::ShapeMismatch,
                      "component dimensions differ");
        RFSPLAT_CHECK((c.variance.array() > 0.0).all(), ErrorCode::InvalidArgument,
                      "variances must be positive");
        total += c.weight;
    }
    RFSPLAT_CHECK(std::abs(total - 1.0) <= 1e-12, ErrorCode::InvalidArgument, "mixture weights must sum to 1");
}

Vector GaussianMixtureSpec::sample(Rng& rng) const {
    double u = rng.uniform();
    std::size_t k = 0;
    double acc = components[0].weight;
    while (u >= acc && k + 1 < components.size())
        acc += components[++k].weight;
    const auto& c = components[k];
    Vector out(c.mean.size());
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out(i) = c.mean(i) + std::sqrt(c.variance(i)) * rng.normal();
    return out;
}

Vector marginal_field_oracle(const GaussianMixtureSpec& spec, const Vector& x, double t) {
    RFSPLAT_CHECK(x.size() == spec.dimension(), ErrorCode::ShapeMismatch, "point has wrong dimension");
    if (!(t >= 0.0 && t <= 1.0) || !x.allFinite())
        throw Error(ErrorCode::OracleUndefined, "t outside [0, 1] or non-finite point");

    // Under component k, Y_t ~ N(t mu, t^2 s^2 + (1-t)^2) per axis and
    // Cov(Y1 - Y0, Y_t) = t s^2 - (1 - t), which gives the conditional mean of
    // Y1 - Y0 directly and stays finite at both ends of [0, 1].
    const std::size_t n = spec.components.size();
    std::vector<double> log_w(n);
    std::vector<Vector> cond(n);
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        const auto& c = spec.components[k];
        Vector var = (t * t) * c.variance.array() + (1.0 - t) * (1.0 - t);
        Vector resid = x - t * c.mean;
        double lw = std::log(c.weight);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            lw += -0.5 * (resid(i) * resid(i) / var(i) + std::log(2.0 * std::numbers::pi * var(i)));
        log_w[k] = lw;
        max_log = std::max(max_log, lw);
        Vector cov = t * c.variance.array() - (1.0 - t);
        cond[k] = c.mean.array() + cov.array() / var.array() * resid.array();
    }
    if (!std::isfinite(max_log))
        throw Error(ErrorCode::OracleUndefined, "posterior weights vanished");
    double norm = 0.0;
    Vector field = Vector::Zero(x.size());
    for (std::size_t k = 0; k < n; ++k) {
        double w = std::exp(log_w[k] - max_log);
        norm += w;
        field += w * cond[k];
    }
    return field / norm;
}

MixtureOracleField::MixtureOracleField(GaussianMixtureSpec spec) : m_spec(std::move(spec)) {
    m_spec.validate();
}

Vector MixtureOracleField::evaluate(const Vector& x, double t) const {
    return marginal_field_oracle(m_spec, x, t);
}

std::vector<double> timestep_schedule(int steps, ScheduleKind kind, double warp_exponent) {
    if (steps < 1)
        throw Error(ErrorCode::InvalidSchedule, "steps must be at least 1");
    if (kind == ScheduleKind::Default && !(warp_exponent > 0.0))
        throw Error(ErrorCode::InvalidSchedule, "warp exponent must be positive");
    std::vector<double> knots(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        double u = static_cast<double>(k) / steps;
        knots[static_cast<std::size_t>(k)] =
            (kind == ScheduleKind::Default && warp_exponent != 1.0) ? std::pow(u, warp_exponent) : u;
    }
    knots.front() = 0.0;
    knots.back() = 1.0;
    return knots;
}

void validate_schedule(std::span<const double> schedule) {
    if (schedule.size() < 2 || schedule.front() != 0.0 || schedule.back() != 1.0)
        throw Error(ErrorCode::InvalidSchedule, "schedule must run from 0 to 1 with at least one step");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (!(schedule[i] > schedule[i - 1]))
            throw Error(ErrorCode::InvalidSchedule, "schedule must be strictly increasing");
}

Vector integrate(const FieldModel& model, Vector x0, std::span<const double> schedule) {
    validate_schedule(schedule);
    Vector x = std::move(x0);
    for (std::size_t n = 0; n + 1 < schedule.size(); ++n) {
        const double dt = schedule[n + 1] - schedule[n];
        Vector u = model.evaluate(x, schedule[n]);
        RFSPLAT_CHECK(u.size() == x.size(), ErrorCode::ShapeMismatch, "field has wrong size");
        x += dt * u;
        if (!x.allFinite())
            throw Error(ErrorCode::IntegrationDiverged, "non-finite state", static_cast<long>(n));
    }
    return x;
}

}  // namespace rfsplat::flow
