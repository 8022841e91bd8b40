// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>

#include "oodcert/datagen.hpp"
#include "oodcert/dataset.hpp"

using namespace oodcert;

TEST(Dataset, NormalizationGivesZeroMeanUnitVariance)
{
    auto d = gen_wave_dataset(DistSpec::wave("train", true, 50, 3));
    Tensor<double> x = d.norm.norm_x(d.inputs), y = d.norm.norm_y(d.outputs);
    for (const auto* t : {&x, &y}) {
        double m = 0, q = 0;
        for (double v : t->data()) m += v;
        m /= t->size();
        for (double v : t->data()) q += (v - m) * (v - m);
        EXPECT_NEAR(m, 0, 1e-6);
        EXPECT_NEAR(q / t->size(), 1, 1e-6);
    }
}

TEST(Dataset, SaveLoadRoundTrip)
{
    auto dir = std::filesystem::temp_directory_path() / "oodcert-test-dataset";
    std::filesystem::create_directories(dir);
    auto d = gen_wave_dataset(DistSpec::wave("test", true, 7, 1));
    d.save(dir / "w.oodd");
    auto back = Dataset::load(dir / "w.oodd");
    EXPECT_EQ(back.tag, d.tag);
    EXPECT_TRUE(back.inputs == d.inputs);
    EXPECT_TRUE(back.outputs == d.outputs);
    EXPECT_EQ(back.metadata, d.metadata);
    EXPECT_EQ(back.norm.x_std, d.norm.x_std);
    EXPECT_EQ(back.norm.y_mean, d.norm.y_mean);
    std::filesystem::remove_all(dir);
}

TEST(Dataset, SubsetKeepsNormalization)
{
    DistSpec spec;
    spec.tag = "toy-bimodal";
    auto d = generate(spec);
    std::vector<std::size_t> idx{3, 0, 5};
    auto s = d.subset(idx);
    EXPECT_EQ(s.size(), 3u);
    EXPECT_EQ(s.inputs[0], d.inputs[3]);
    EXPECT_EQ(s.metadata[2], d.metadata[5]);
    EXPECT_EQ(s.norm.x_mean, d.norm.x_mean);
}

TEST(Dataset, JointConcatenatesNormalizedChannels)
{
    auto d = gen_wave_dataset(DistSpec::wave("train", true, 3, 0));
    auto j = d.joint(1);
    EXPECT_EQ(j.shape(), (Shape{2, 32, 32}));
    EXPECT_DOUBLE_EQ(j[0], (d.inputs[1024] - d.norm.x_mean) / d.norm.x_std);
    EXPECT_DOUBLE_EQ(j[1024], (d.outputs[1024] - d.norm.y_mean) / d.norm.y_std);
    EXPECT_EQ(d.joint_all().shape(), (Shape{3, 2, 32, 32}));
}
