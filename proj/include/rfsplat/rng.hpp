// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

namespace rfsplat {

/// Counter-based generator. Every draw is a pure function of (key, counter),
/// and `split` derives independent child streams from a label, so results do
/// not depend on the order in which sibling streams are consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_key(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    Rng split(std::uint64_t label) const;

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    void fill_normal(std::span<double> out);

    std::uint64_t key() const noexcept { return m_key; }

    static std::uint64_t mix(std::uint64_t x);

private:
    Rng(std::uint64_t key, int) : m_key(key) {}

    std::uint64_t m_key;
    std::uint64_t m_counter = 0;
};

}  // namespace rfsplat
