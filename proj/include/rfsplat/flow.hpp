// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/rng.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

// Rectified-flow core.
//
// Path time runs from t = 0 (noise Y0 ~ N(0, I)) to t = 1 (data Y1) along
// Y_t = t Y1 + (1 - t) Y0, and a FieldModel predicts the conditional target
// Y1 - Y0. Integrating dX/dt = u(X, t) forward from t = 0 is the same ODE as
// dX = -u'(X, 1 - t) dt written for a model u' that is indexed by noise level
// and predicts Y0 - Y1.
namespace rfsplat::flow {

using Vector = Eigen::VectorXd;

struct FlowSample {
    Vector data;
    double t = 0.0;
};

class FieldModel {
public:
    virtual ~FieldModel() = default;
    virtual Vector evaluate(const Vector& x, double t) const = 0;
};

/// A field with a flat parameter vector and an analytic Jacobian of its
/// output with respect to those parameters.
class ParametricField : public FieldModel {
public:
    virtual Eigen::Index num_parameters() const = 0;
    virtual Vector parameters() const = 0;
    virtual void set_parameters(const Vector& params) = 0;
    /// d evaluate(x, t) / d params, shape (dim x num_parameters).
    virtual Eigen::MatrixXd parameter_jacobian(const Vector& x, double t) const = 0;
};

FlowSample interpolate(const Vector& y0, const Vector& y1, double t);

/// One training pair: `data` is Y1, `noise` is Y0.
struct TrainingPair {
    Vector data;
    Vector noise;
};

/// Mean over the batch of the per-element mean squared error between
/// model(Y_t, t) and Y1 - Y0.
double cfm_loss(const FieldModel& model, std::span<const TrainingPair> batch, std::span<const double> t);

struct LossGradient {
    double loss = 0.0;
    Vector gradient;
};

LossGradient cfm_loss_gradient(const ParametricField& model, std::span<const TrainingPair> batch,
                               std::span<const double> t);

struct GaussianComponent {
    double weight = 1.0;
    Vector mean;
    /// Diagonal covariance.
    Vector variance;
};

struct GaussianMixtureSpec {
    std::vector<GaussianComponent> components;

    Eigen::Index dimension() const { return components.empty() ? 0 : components.front().mean.size(); }
    void validate() const;
    Vector sample(Rng& rng) const;
};

/// Closed-form E[Y1 - Y0 | Y_t = x] for Y1 drawn from the mixture.
Vector marginal_field_oracle(const GaussianMixtureSpec& spec, const Vector& x, double t);

class MixtureOracleField final : public FieldModel {
public:
    explicit MixtureOracleField(GaussianMixtureSpec spec);
    Vector evaluate(const Vector& x, double t) const override;

private:
    GaussianMixtureSpec m_spec;
};

enum class ScheduleKind { Uniform, Default };

/// steps + 1 strictly increasing knots from 0 to 1. `Default` applies the
/// power warp t_k = (k / steps)^warp_exponent.
std::vector<double> timestep_schedule(int steps, ScheduleKind kind = ScheduleKind::Uniform,
                                      double warp_exponent = 1.0);

void validate_schedule(std::span<const double> schedule);

/// Explicit Euler over the schedule knots; returns X at t = 1.
Vector integrate(const FieldModel& model, Vector x0, std::span<const double> schedule);

}  // namespace rfsplat::flow
