// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace rfsplat {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    DegenerateCamera,
    AmbiguousCenter,
    DegenerateRayField,
    RefinementDiverged,
    UnnormalizableTrajectory,
    NonFiniteField,
    IntegrationDiverged,
    OracleUndefined,
    InvalidSchedule,
    InvalidRays,
    InvalidTrajectory,
    SamplingDiverged,
    TrainingDiverged,
    CheckpointNotFound,
    Io,
    InvalidConfig,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-checkable code and, for iterative
/// procedures, the step at which the failure was detected.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::optional<long> step = std::nullopt)
        : std::runtime_error(format(code, message, step)), m_code(code), m_step(step) {}

    ErrorCode code() const noexcept { return m_code; }
    std::optional<long> step() const noexcept { return m_step; }

private:
    static std::string format(ErrorCode code, const std::string& message, std::optional<long> step) {
        std::string out = std::string(to_string(code)) + ": " + message;
        if (step)
            out += " (step " + std::to_string(*step) + ")";
        return out;
    }

    ErrorCode m_code;
    std::optional<long> m_step;
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::DegenerateCamera: return "degenerate camera";
    case ErrorCode::AmbiguousCenter: return "ambiguous center";
    case ErrorCode::DegenerateRayField: return "degenerate ray field";
    case ErrorCode::RefinementDiverged: return "refinement diverged";
    case ErrorCode::UnnormalizableTrajectory: return "unnormalizable trajectory";
    case ErrorCode::NonFiniteField: return "model produced non-finite field";
    case ErrorCode::IntegrationDiverged: return "integration diverged";
    case ErrorCode::OracleUndefined: return "oracle undefined";
    case ErrorCode::InvalidSchedule: return "invalid schedule";
    case ErrorCode::InvalidRays: return "invalid rays";
    case ErrorCode::InvalidTrajectory: return "invalid trajectory";
    case ErrorCode::SamplingDiverged: return "sampling diverged";
    case ErrorCode::TrainingDiverged: return "training diverged";
    case ErrorCode::CheckpointNotFound: return "checkpoint not found";
    case ErrorCode::Io: return "io error";
    case ErrorCode::InvalidConfig: return "invalid config";
    }
    return "unknown error";
}

#define RFSPLAT_CHECK(cond, code, msg)                      \
    do {                                                    \
        if (!(cond))                                        \
            throw ::rfsplat::Error((code), (msg));          \
    } while (0)

}  // namespace rfsplat
