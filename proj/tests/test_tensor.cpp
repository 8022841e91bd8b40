// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include <gtest/gtest.h>

#include "oodcert/io.hpp"
#include "oodcert/tensor.hpp"

using namespace oodcert;

TEST(Tensor, ShapeAndFill)
{
    Tensor<double> t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.dim(1), 3u);
    for (double v : t.data()) EXPECT_EQ(v, 1.5);
    EXPECT_EQ(shape_str(t.shape()), "[2,3]");
}

TEST(Tensor, DataLengthMismatchThrows)
{
    EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ReshapeKeepsData)
{
    Tensor<double> t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    auto r = t.reshaped({3, 2});
    EXPECT_EQ(r.shape(), (Shape{3, 2}));
    EXPECT_EQ(r[5], 5.0);
    EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, RowsAndRow)
{
    Tensor<double> t({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
    auto r = t.row(1);
    EXPECT_EQ(r.shape(), (Shape{2}));
    EXPECT_EQ(r[0], 2.0);
    auto rs = t.rows(1, 3);
    EXPECT_EQ(rs.dim(0), 2u);
    EXPECT_EQ(rs[3], 5.0);
    EXPECT_THROW(t.rows(2, 4), ShapeError);
}

TEST(Tensor, StackAndConcat)
{
    std::vector<Tensor<double>> items{Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4})};
    auto s = stack<double>(items);
    EXPECT_EQ(s.shape(), (Shape{2, 2}));
    EXPECT_EQ(s[2], 3.0);
    auto c = concat0(Tensor<double>({1, 2}, {1, 2}), Tensor<double>({2, 2}, {3, 4, 5, 6}));
    EXPECT_EQ(c.shape(), (Shape{3, 2}));
    EXPECT_EQ(c[5], 6.0);
    EXPECT_THROW(concat0(Tensor<double>({1, 2}), Tensor<double>({1, 3})), ShapeError);
}

TEST(Tensor, Reductions)
{
    Tensor<double> a({3}, {1, -4, 2});
    Tensor<double> b({3}, {2, 1, 0.5});
    EXPECT_EQ(max_abs(a), 4.0);
    EXPECT_EQ(dot(a, b), 2 - 4 + 1);
    EXPECT_EQ(squared_norm(a), 21.0);
}

TEST(Tensor, CastAndFinite)
{
    Tensor<double> a({2}, {1.25, -2});
    auto f = a.cast<float>();
    EXPECT_EQ(f[0], 1.25f);
    EXPECT_TRUE(a.all_finite());
    a[1] = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(a.all_finite());
}

TEST(Io, AtomicWriteAndRead)
{
    auto dir = std::filesystem::temp_directory_path() / "oodcert-io-test";
    std::filesystem::remove_all(dir);
    auto p = dir / "nested" / "x.bin";
    io::write_atomic(p, std::string("abc\0def", 7));
    EXPECT_EQ(io::read_text(p), std::string("abc\0def", 7));
    EXPECT_FALSE(std::filesystem::exists(p.string() + ".tmp"));
    EXPECT_THROW(io::read_text(dir / "missing"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(Io, WriterReaderRoundTrip)
{
    io::Writer w;
    w.pod<std::uint32_t>(7);
    w.pod<double>(2.5);
    w.str("hi");
    const std::string& b = w.buffer();
    io::Reader r(b.data(), b.size(), "buf");
    EXPECT_EQ(r.pod<std::uint32_t>(), 7u);
    EXPECT_EQ(r.pod<double>(), 2.5);
    EXPECT_EQ(r.str(2), "hi");
    EXPECT_THROW(r.pod<char>(), ConfigError);
}
