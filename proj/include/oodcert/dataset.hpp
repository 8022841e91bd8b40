// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodcert/io.hpp"
#include "oodcert/models.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
/*!
 * Paired input/output fields.
 *
 * inputs is [N, Cx, ...], outputs is [N, Cy, ...] with identical trailing
 * axes, so each pair concatenates into a joint field [Cx + Cy, ...] along
 * the channel axis. The file format stores exactly that joint array:
 *
 *   "OODD" | u32 version | u32 dtype | u32 ndim | u32 dims[ndim] | data
 *
 * dtype 1 is f64 and 0 is f32, little-endian. A JSON sidecar at
 * "<path>.json" records the channel split, per-sample metadata and the
 * normalization statistics.
 */
struct Dataset {
    static constexpr std::uint32_t format_version = 1;

    std::string tag;
    Tensor<double> inputs;
    Tensor<double> outputs;
    std::vector<json> metadata;
    Normalization norm;

    std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
    Shape input_shape() const { return {inputs.shape().begin() + 1, inputs.shape().end()}; }
    Shape output_shape() const { return {outputs.shape().begin() + 1, outputs.shape().end()}; }
    Shape joint_shape() const
    {
        Shape s = input_shape();
        s[0] += output_shape()[0];
        return s;
    }

    Tensor<double> input(std::size_t i) const { return inputs.row(i); }
    Tensor<double> output(std::size_t i) const { return outputs.row(i); }

    /// Normalized joint field of sample i.
    Tensor<double> joint(std::size_t i) const { return concat0(norm.norm_x(input(i)), norm.norm_y(output(i))); }

    /// Normalized joint fields [N, Cx + Cy, ...].
    Tensor<double> joint_all() const
    {
        std::vector<Tensor<double>> rows;
        rows.reserve(size());
        for (std::size_t i = 0; i < size(); ++i) rows.push_back(joint(i));
        return stack<double>(rows);
    }

    /// Set norm so that inputs and outputs each have zero mean and unit
    /// population variance.
    void fit_normalization()
    {
        auto stats = [](const Tensor<double>& t, double& mean, double& sd) {
            double s = 0;
            for (double v : t.data()) s += v;
            mean = s / static_cast<double>(t.size());
            double q = 0;
            for (double v : t.data()) q += (v - mean) * (v - mean);
            sd = std::sqrt(q / static_cast<double>(t.size()));
            if (!(sd > 0)) sd = 1;
        };
        stats(inputs, norm.x_mean, norm.x_std);
        stats(outputs, norm.y_mean, norm.y_std);
    }

    /// Keep the listed samples, in order.
    Dataset subset(std::span<const std::size_t> idx) const
    {
        std::vector<Tensor<double>> xs, ys;
        Dataset d;
        d.tag = tag;
        d.norm = norm;
        for (std::size_t i : idx) {
            xs.push_back(input(i));
            ys.push_back(output(i));
            if (i < metadata.size()) d.metadata.push_back(metadata[i]);
        }
        d.inputs = stack<double>(xs);
        d.outputs = stack<double>(ys);
        return d;
    }

    std::string serialize_data() const;
    json sidecar() const;
    void save(const std::filesystem::path& path) const
    {
        io::write_atomic(path, serialize_data());
        auto side = path;
        side += ".json";
        io::write_atomic(side, sidecar().dump(2) + "\n");
    }
    static Dataset load(const std::filesystem::path& path);
};

/// Raw array file in the dataset format (used for sampler output too).
inline std::string serialize_array(const Tensor<double>& t)
{
    io::Writer w;
    w.str("OODD");
    w.pod<std::uint32_t>(Dataset::format_version);
    w.pod<std::uint32_t>(1);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.pod<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.bytes(t.ptr(), t.size() * sizeof(double));
    return w.buffer();
}

inline Tensor<double> deserialize_array(const std::string& bytes, const std::string& what)
{
    io::Reader r(bytes.data(), bytes.size(), what);
    if (r.str(4) != "OODD") throw ConfigError(what + ": bad magic (not a dataset file)");
    if (auto v = r.pod<std::uint32_t>(); v != Dataset::format_version) {
        throw ConfigError(what + ": unsupported version " + std::to_string(v));
    }
    auto dtype = r.pod<std::uint32_t>();
    auto ndim = r.pod<std::uint32_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.pod<std::uint32_t>();
    Tensor<double> t(shape);
    if (dtype == 1) {
        r.bytes(t.ptr(), t.size() * sizeof(double));
    } else if (dtype == 0) {
        for (double& v : t.data()) v = r.pod<float>();
    } else {
        throw ConfigError(what + ": unknown dtype " + std::to_string(dtype));
    }
    return t;
}

inline std::string Dataset::serialize_data() const
{
    std::size_t n = size();
    std::vector<Tensor<double>> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rows.push_back(concat0(input(i), output(i)));
    return serialize_array(stack<double>(rows));
}

inline json Dataset::sidecar() const
{
    return json{{"tag", tag},
                {"input_shape", input_shape()},
                {"output_shape", output_shape()},
                {"metadata", metadata},
                {"normalization", norm}};
}

inline Dataset Dataset::load(const std::filesystem::path& path)
{
    auto side_path = path;
    side_path += ".json";
    if (!std::filesystem::exists(path)) throw ConfigError("dataset not found: " + path.string());
    if (!std::filesystem::exists(side_path)) throw ConfigError("dataset sidecar not found: " + side_path.string());
    json side = json::parse(io::read_text(side_path));
    Tensor<double> joint = deserialize_array(io::read_text(path), path.string());

    Dataset d;
    d.tag = side.at("tag").get<std::string>();
    Shape xs = side.at("input_shape").get<Shape>();
    Shape ys = side.at("output_shape").get<Shape>();
    d.metadata = side.at("metadata").get<std::vector<json>>();
    d.norm = side.at("normalization").get<Normalization>();

    std::size_t n = joint.dim(0);
    std::size_t nx = shape_size(xs), ny = shape_size(ys);
    if (joint.size() != n * (nx + ny)) throw ConfigError(path.string() + ": sidecar shapes do not match data");
    Shape full_x = xs, full_y = ys;
    full_x.insert(full_x.begin(), n);
    full_y.insert(full_y.begin(), n);
    d.inputs = Tensor<double>(full_x);
    d.outputs = Tensor<double>(full_y);
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = joint.ptr() + i * (nx + ny);
        std::copy_n(src, nx, d.inputs.ptr() + i * nx);
        std::copy_n(src + nx, ny, d.outputs.ptr() + i * ny);
    }
    return d;
}

}  // namespace oodcert
