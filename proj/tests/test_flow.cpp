// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/flow.hpp"
#include "flow_fixtures.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace rfsplat;
using namespace rfsplat::flow;
using rfsplat::testing::DiscreteInstance;
using rfsplat::testing::expect_error;
using rfsplat::testing::FeatureField;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v)
        out(i++) = x;
    return out;
}

GaussianMixtureSpec gaussian(double mean, double variance) {
    GaussianMixtureSpec s;
    s.components.push_back({1.0, vec({mean}), vec({variance})});
    return s;
}

class ConstantField final : public FieldModel {
public:
    explicit ConstantField(Vector value) : m_value(std::move(value)) {}
    Vector evaluate(const Vector&, double) const override { return m_value; }

private:
    Vector m_value;
};

class ExplodingField final : public FieldModel {
public:
    Vector evaluate(const Vector& x, double) const override { return x * 1e200; }
};

// E[Y1 - Y0 | Y_t = x] for Y1 ~ N(mu, var) by direct quadrature over y1.
double quadrature_field(double mu, double var, double x, double t) {
    const int n = 20000;
    const double sd = std::sqrt(var);
    const double lo = mu - 12.0 * sd, hi = mu + 12.0 * sd;
    const double h = (hi - lo) / n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double y1 = lo + i * h;
        const double y0 = (x - t * y1) / (1.0 - t);
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double p = std::exp(-0.5 * (y1 - mu) * (y1 - mu) / var) * std::exp(-0.5 * y0 * y0);
        num += w * p * (y1 - y0);
        den += w * p;
    }
    return num / den;
}

}  // namespace

TEST(Interpolate, Endpoints) {
    const Vector a = vec({1.0, -2.0}), b = vec({3.0, 5.0});
    EXPECT_EQ(interpolate(a, b, 0.0).data, a);
    EXPECT_EQ(interpolate(a, b, 1.0).data, b);
}

TEST(Interpolate, Midpoint) { EXPECT_EQ(interpolate(vec({0, 0}), vec({2, 4}), 0.5).data, vec({1, 2})); }

TEST(Interpolate, SymmetryIdentity) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        Vector a(5), b(5);
        for (int i = 0; i < 5; ++i) {
            a(i) = rng.normal();
            b(i) = rng.normal();
        }
        const double t = rng.uniform();
        EXPECT_LT((interpolate(a, b, t).data - interpolate(b, a, 1.0 - t).data).norm(), 1e-14);
    }
}

TEST(Interpolate, ShapeMismatchRejected) {
    expect_error(ErrorCode::ShapeMismatch, [] { interpolate(vec({1}), vec({1, 2}), 0.5); });
}

TEST(CfmLoss, ExactModelHasZeroLoss) {
    const Vector y1 = vec({3.0, 1.0}), y0 = vec({-1.0, 0.5});
    const ConstantField model(y1 - y0);
    std::vector<TrainingPair> batch{{y1, y0}};
    std::vector<double> t{0.3};
    EXPECT_EQ(cfm_loss(model, batch, t), 0.0);
}

TEST(CfmLoss, ZeroModelArithmetic) {
    const ConstantField model(vec({0.0, 0.0}));
    std::vector<TrainingPair> batch{{vec({3.0, 4.0}), vec({0.0, 0.0})}};
    std::vector<double> t{0.5};
    EXPECT_DOUBLE_EQ(cfm_loss(model, batch, t), 12.5);
}

TEST(CfmLoss, NonNegativeAndNonFiniteRejected) {
    Rng rng(2);
    FeatureField model(Vector::Random(10));
    std::vector<TrainingPair> batch;
    std::vector<double> t;
    for (int i = 0; i < 8; ++i) {
        batch.push_back({vec({rng.normal()}), vec({rng.normal()})});
        t.push_back(rng.uniform());
    }
    EXPECT_GE(cfm_loss(model, batch, t), 0.0);
    const ConstantField bad(vec({std::nan("")}));
    expect_error(ErrorCode::NonFiniteField, [&] { cfm_loss(bad, batch, t); });
    expect_error(ErrorCode::InvalidArgument, [&] { cfm_loss(model, {}, {}); });
}

TEST(CfmLoss, GradientMatchesFiniteDifferences) {
    Rng rng(3);
    Vector theta(10);
    for (int i = 0; i < 10; ++i)
        theta(i) = rng.normal();
    FeatureField model(theta);
    std::vector<TrainingPair> batch;
    std::vector<double> t;
    for (int i = 0; i < 6; ++i) {
        batch.push_back({vec({rng.normal(), rng.normal()}), vec({rng.normal(), rng.normal()})});
        t.push_back(rng.uniform());
    }
    const auto analytic = cfm_loss_gradient(model, batch, t);
    EXPECT_NEAR(analytic.loss, cfm_loss(model, batch, t), 1e-12);
    for (int i = 0; i < 10; ++i) {
        const double h = 1e-6;
        Vector p = theta;
        p(i) += h;
        model.set_parameters(p);
        const double up = cfm_loss(model, batch, t);
        p(i) -= 2 * h;
        model.set_parameters(p);
        const double down = cfm_loss(model, batch, t);
        model.set_parameters(theta);
        const double fd = (up - down) / (2 * h);
        EXPECT_NEAR(analytic.gradient(i), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "param " << i;
    }
}

TEST(CfmLoss, GradientMatchesMarginalFlowMatching) {
    DiscreteInstance inst;
    ASSERT_GT(inst.collisions(), 0);
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Vector theta(10);
        for (int i = 0; i < 10; ++i)
            theta(i) = rng.normal();
        const FeatureField model(theta);
        const Vector cfm = inst.cfm_gradient(model);
        const Vector fm = inst.fm_gradient(model);
        EXPECT_LT((cfm - fm).norm() / fm.norm(), 1e-4);
    }
}

TEST(MarginalOracle, SingleGaussianMatchesQuadrature) {
    const double mu = 1.3, var = 0.4;
    const auto spec = gaussian(mu, var);
    for (double t : {0.1, 0.35, 0.6, 0.9})
        for (double x : {-1.5, 0.0, 0.7, 2.2}) {
            const double oracle = marginal_field_oracle(spec, vec({x}), t)(0);
            EXPECT_NEAR(oracle, quadrature_field(mu, var, x, t), 1e-6) << "t=" << t << " x=" << x;
        }
}

TEST(MarginalOracle, SingleGaussianPosteriorMeanForm) {
    // (E[Y1 | Y_t = x] - x) / (1 - t) with the Gaussian posterior mean.
    const double mu = -0.4, var = 2.0;
    const auto spec = gaussian(mu, var);
    for (double t : {0.2, 0.5, 0.8})
        for (double x : {-1.0, 0.3, 1.7}) {
            const double s = t * t * var + (1 - t) * (1 - t);
            const double post = mu + t * var / s * (x - t * mu);
            EXPECT_NEAR(marginal_field_oracle(spec, vec({x}), t)(0), (post - x) / (1.0 - t), 1e-12);
        }
}

TEST(MarginalOracle, SymmetricMixtureVanishesAtOrigin) {
    GaussianMixtureSpec spec;
    spec.components.push_back({0.5, vec({2.0, -1.0}), vec({0.3, 0.3})});
    spec.components.push_back({0.5, vec({-2.0, 1.0}), vec({0.3, 0.3})});
    for (double t : {0.1, 0.5, 0.9})
        EXPECT_LT(marginal_field_oracle(spec, vec({0.0, 0.0}), t).norm(), 1e-14);
}

TEST(MarginalOracle, MatchesMonteCarloPosterior) {
    GaussianMixtureSpec spec;
    spec.components.push_back({0.3, vec({-1.5}), vec({0.2})});
    spec.components.push_back({0.7, vec({1.0}), vec({0.5})});
    const double x = 0.4, t = 0.6;
    // Self-normalized importance sampling of E[Y1 - Y0 | Y_t = x] with Y1
    // drawn from the data distribution.
    Rng rng(5);
    const int n = 1000000;
    double sw = 0.0, swf = 0.0, swf2 = 0.0, sw2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y1 = spec.sample(rng)(0);
        const double y0 = (x - t * y1) / (1.0 - t);
        const double w = std::exp(-0.5 * y0 * y0);
        const double f = y1 - y0;
        sw += w;
        sw2 += w * w;
        swf += w * f;
        swf2 += w * f * f;
    }
    const double est = swf / sw;
    // Delta-method standard error of the ratio estimator.
    const double var_f = swf2 / sw - est * est;
    const double ess = sw * sw / sw2;
    const double se = std::sqrt(var_f / ess);
    const double oracle = marginal_field_oracle(spec, vec({x}), t)(0);
    EXPECT_LT(std::abs(oracle - est), 3.0 * se) << "oracle " << oracle << " mc " << est << " se " << se;
}

TEST(MarginalOracle, UndefinedInputsRejected) {
    const auto spec = gaussian(0.0, 1.0);
    expect_error(ErrorCode::OracleUndefined, [&] { marginal_field_oracle(spec, vec({std::nan("")}), 0.0); });
    expect_error(ErrorCode::OracleUndefined, [&] { marginal_field_oracle(spec, vec({0.0}), 1.5); });
}

TEST(MixtureSpec, ValidationRejectsBadWeights) {
    GaussianMixtureSpec s;
    s.components.push_back({0.5, vec({0.0}), vec({1.0})});
    EXPECT_THROW(s.validate(), Error);
    s.components.push_back({0.5, vec({0.0}), vec({-1.0})});
    EXPECT_THROW(s.validate(), Error);
    s.components.back().variance = vec({1.0});
    s.validate();
}

TEST(Schedule, UniformFourSteps) {
    const auto s = timestep_schedule(4);
    EXPECT_EQ(s, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
}

TEST(Schedule, SixtyFourStepsHasSixtyFiveKnots) {
    const auto s = timestep_schedule(64);
    ASSERT_EQ(s.size(), 65u);
    EXPECT_EQ(s.front(), 0.0);
    EXPECT_EQ(s.back(), 1.0);
    validate_schedule(s);
}

TEST(Schedule, UnitWarpIsUniform) {
    EXPECT_EQ(timestep_schedule(37, ScheduleKind::Default, 1.0), timestep_schedule(37));
    const auto warped = timestep_schedule(16, ScheduleKind::Default, 2.0);
    validate_schedule(warped);
    EXPECT_DOUBLE_EQ(warped[8], 0.25);
}

TEST(Schedule, InvalidInputsRejected) {
    expect_error(ErrorCode::InvalidSchedule, [] { timestep_schedule(0); });
    expect_error(ErrorCode::InvalidSchedule, [] { timestep_schedule(4, ScheduleKind::Default, 0.0); });
    const std::vector<double> bad{0.0, 0.5, 0.5, 1.0};
    expect_error(ErrorCode::InvalidSchedule, [&] { validate_schedule(bad); });
}

TEST(Integrate, ZeroFieldKeepsState) {
    const ConstantField zero(vec({0.0, 0.0, 0.0}));
    const Vector x0 = vec({1.0, -2.0, 3.0});
    EXPECT_EQ(integrate(zero, x0, timestep_schedule(10)), x0);
}

TEST(Integrate, TransportsGaussianMoments) {
    const MixtureOracleField field(gaussian(2.0, 0.25));
    const auto schedule = timestep_schedule(64);
    Rng rng(6);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = integrate(field, vec({rng.normal()}), schedule)(0);
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    EXPECT_NEAR(mean, 2.0, 0.02);
    EXPECT_NEAR(sd, 0.5, 0.02);
}

TEST(Integrate, EulerIsFirstOrder) {
    // Gaussian-to-Gaussian transport is the affine map x -> mu + sigma x.
    const MixtureOracleField field(gaussian(2.0, 0.25));
    for (double x0 : {-1.2, 0.3, 1.5}) {
        const double exact = 2.0 + 0.5 * x0;
        const double e64 = std::abs(integrate(field, vec({x0}), timestep_schedule(64))(0) - exact);
        const double e32 = std::abs(integrate(field, vec({x0}), timestep_schedule(32))(0) - exact);
        EXPECT_NEAR(e32 / e64, 2.0, 0.5) << "x0 " << x0;
    }
}

TEST(Integrate, Deterministic) {
    GaussianMixtureSpec spec;
    spec.components.push_back({0.5, vec({-1.0, 1.0}), vec({0.1, 0.2})});
    spec.components.push_back({0.5, vec({1.0, 0.0}), vec({0.3, 0.1})});
    const MixtureOracleField field(spec);
    const auto s = timestep_schedule(64);
    EXPECT_EQ(integrate(field, vec({0.3, -0.2}), s), integrate(field, vec({0.3, -0.2}), s));
}

TEST(Integrate, DivergenceReportsStep) {
    const ExplodingField field;
    try {
        integrate(field, vec({1.0}), timestep_schedule(8));
        ADD_FAILURE() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::IntegrationDiverged);
        ASSERT_TRUE(e.step().has_value());
        EXPECT_EQ(*e.step(), 1);
    }
}
