// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

using rfsplat::Rng;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitIsIndependentOfParentConsumption) {
    Rng a(7);
    const Rng child_before = a.split(3);
    for (int i = 0; i < 10; ++i)
        a.uniform();
    Rng child_after = a.split(3);
    Rng copy = child_before;
    for (int i = 0; i < 20; ++i)
        EXPECT_EQ(copy.next_u64(), child_after.next_u64());
}

TEST(Rng, SiblingsDiffer) {
    const Rng root(1);
    std::set<std::uint64_t> keys;
    for (std::uint64_t i = 0; i < 1000; ++i)
        keys.insert(root.split(i).key());
    EXPECT_EQ(keys.size(), 1000u);
}

TEST(Rng, UniformRangeAndMoments) {
    Rng r(9);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sum2 += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(sum2 / n - (sum / n) * (sum / n), 1.0 / 12.0, 2e-3);
}

TEST(Rng, NormalMoments) {
    Rng r(10);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sum2 += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

TEST(Rng, BelowCoversRange) {
    Rng r(11);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto k = r.below(7);
        ASSERT_LT(k, 7u);
        ++counts[k];
    }
    for (int c : counts)
        EXPECT_NEAR(c, 10000, 500);
}
