// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "oodcert/rng.hpp"

using oodcert::Rng;

TEST(Rng, SameSeedSameStream)
{
    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer)
{
    Rng a(7), b(8);
    int same = 0;
    for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
    EXPECT_EQ(same, 0);
}

TEST(Rng, AtIsCounterAddressed)
{
    Rng a(3);
    std::vector<std::uint64_t> seq;
    for (int i = 0; i < 10; ++i) seq.push_back(a.next_u64());
    Rng b(3);
    for (int i = 9; i >= 0; --i) EXPECT_EQ(b.at(static_cast<std::uint64_t>(i)), seq[static_cast<std::size_t>(i)]);
    EXPECT_EQ(a.counter(), 10u);
}

TEST(Rng, SplitIsIndependentOfParentPosition)
{
    Rng a(11), b(11);
    for (int i = 0; i < 5; ++i) b.next_u64();
    Rng ca = a.split(4), cb = b.split(4);
    EXPECT_EQ(ca.next_u64(), cb.next_u64());
    EXPECT_NE(a.split(4).next_u64(), a.split(5).next_u64());
}

TEST(Rng, SplitChildrenDoNotCollide)
{
    Rng root(1);
    std::set<std::uint64_t> firsts;
    for (std::uint64_t id = 0; id < 2000; ++id) firsts.insert(root.split(id).next_u64());
    EXPECT_EQ(firsts.size(), 2000u);
}

TEST(Rng, UniformMoments)
{
    Rng r(5);
    const int n = 200000;
    double s = 0, q = 0;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        q += u * u;
    }
    double m = s / n, v = q / n - m * m;
    EXPECT_NEAR(m, 0.5, 4 * std::sqrt(1.0 / 12 / n));
    EXPECT_NEAR(v, 1.0 / 12, 0.002);
}

TEST(Rng, UniformIntCoversClosedRange)
{
    Rng r(9);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) {
        auto k = r.uniform_int(3, 7);
        ASSERT_GE(k, 3);
        ASSERT_LE(k, 7);
        ++hits[static_cast<std::size_t>(k - 3)];
    }
    for (int h : hits) EXPECT_NEAR(h, 1000, 5 * std::sqrt(1000 * 0.8));
}

TEST(Rng, NormalMoments)
{
    Rng r(13);
    const int n = 200000;
    double s = 0, q = 0, k4 = 0;
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        s += z;
        q += z * z;
        k4 += z * z * z * z;
    }
    double m = s / n;
    EXPECT_NEAR(m, 0.0, 4 / std::sqrt(n));
    EXPECT_NEAR(q / n, 1.0, 4 * std::sqrt(2.0 / n));
    EXPECT_NEAR(k4 / n, 3.0, 0.08);
}

TEST(Rng, RademacherSigns)
{
    Rng r(17);
    int plus = 0;
    for (int i = 0; i < 10000; ++i) {
        double v = r.rademacher();
        ASSERT_TRUE(v == 1.0 || v == -1.0);
        plus += v > 0;
    }
    EXPECT_NEAR(plus, 5000, 4 * 50);
}
