// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "oodcert/autodiff.hpp"
#include "oodcert/io.hpp"

namespace oodcert {

using nlohmann::json;

//---------------------------------------------------------------------------//
/*!
 * Trained parameters, their EMA shadow, and provenance metadata.
 *
 * On disk:
 *   "OODC" | u32 version | u64 header length | header JSON | raw data
 * The header lists every tensor of the "params" and "ema" tables with its
 * name, shape, dtype ("f32" or "f64") and byte offset into the data section.
 * All integers and tensor values are little-endian.
 */
struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    ParamSet<double> params;
    ParamSet<double> ema;
    json meta = json::object();
    std::string dtype = "f64";

    /// EMA weights when present, otherwise the raw ones.
    const ParamSet<double>& inference_params() const { return ema.empty() ? params : ema; }

    std::string serialize() const;
    static Checkpoint deserialize(const std::string& bytes, const std::string& what = "checkpoint");

    void save(const std::filesystem::path& path) const { io::write_atomic(path, serialize()); }
    static Checkpoint load(const std::filesystem::path& path)
    {
        return deserialize(io::read_text(path), path.string());
    }
};

namespace detail {

inline void write_table(const ParamSet<double>& table, const std::string& dtype, json& index,
                        io::Writer& data)
{
    index = json::array();
    for (const auto& [name, t] : table) {
        std::size_t offset = data.size();
        if (dtype == "f32") {
            for (double v : t.data()) data.pod(static_cast<float>(v));
        } else {
            data.bytes(t.ptr(), t.size() * sizeof(double));
        }
        index.push_back({{"name", name},
                         {"shape", t.shape()},
                         {"dtype", dtype},
                         {"offset", offset},
                         {"nbytes", data.size() - offset}});
    }
}

inline ParamSet<double> read_table(const json& index, const io::Reader& data, std::size_t base)
{
    ParamSet<double> out;
    for (const auto& e : index) {
        Shape shape = e.at("shape").get<Shape>();
        std::string dtype = e.at("dtype").get<std::string>();
        std::size_t n = shape_size(shape);
        std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
        if (!width) throw ConfigError("checkpoint: unknown dtype " + dtype);
        if (e.at("nbytes").get<std::size_t>() != n * width) throw ConfigError("checkpoint: size mismatch");
        const char* p = data.at(base + e.at("offset").get<std::size_t>(), n * width);
        Tensor<double> t(shape);
        for (std::size_t i = 0; i < n; ++i) {
            if (width == 4) {
                float f;
                std::memcpy(&f, p + 4 * i, 4);
                t[i] = f;
            } else {
                std::memcpy(&t[i], p + 8 * i, 8);
            }
        }
        out.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

}  // namespace detail

inline std::string Checkpoint::serialize() const
{
    io::Writer data;
    json header;
    header["meta"] = meta;
    detail::write_table(params, dtype, header["params"], data);
    detail::write_table(ema, dtype, header["ema"], data);
    std::string text = header.dump();

    io::Writer out;
    out.str("OODC");
    out.pod<std::uint32_t>(format_version);
    out.pod<std::uint64_t>(text.size());
    out.str(text);
    out.str(data.buffer());
    return out.buffer();
}

inline Checkpoint Checkpoint::deserialize(const std::string& bytes, const std::string& what)
{
    io::Reader in(bytes.data(), bytes.size(), what);
    if (in.str(4) != "OODC") throw ConfigError(what + ": bad magic (not a checkpoint)");
    auto version = in.pod<std::uint32_t>();
    if (version != format_version) throw ConfigError(what + ": unsupported version " + std::to_string(version));
    auto len = in.pod<std::uint64_t>();
    json header = json::parse(in.str(len));
    std::size_t base = in.pos();

    Checkpoint ck;
    ck.meta = header.value("meta", json::object());
    ck.params = detail::read_table(header.at("params"), in, base);
    ck.ema = detail::read_table(header.at("ema"), in, base);
    if (!header.at("params").empty()) ck.dtype = header.at("params")[0].at("dtype").get<std::string>();
    return ck;
}

}  // namespace oodcert
