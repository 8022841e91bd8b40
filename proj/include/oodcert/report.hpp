// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "oodcert/decision.hpp"
#include "oodcert/io.hpp"
#include "oodcert/record.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
// Hashing

inline std::string sha256_hex(std::string_view bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& p)
{
    return sha256_hex(io::read_text(p));
}

//---------------------------------------------------------------------------//
// Records

/// Shortest round-trip decimal form.
inline std::string format_double(double v)
{
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline const char* csv_header = "sample_id,dataset,method,certificate,error,label,fine_label";

inline std::string records_csv(const std::vector<CertificateRecord>& records)
{
    std::string out = std::string(csv_header) + "\n";
    for (const auto& r : records) {
        if (r.dataset.find_first_of(",\n\"") != std::string::npos || r.method.find_first_of(",\n\"") != std::string::npos) {
            throw ConfigError("dataset and method tags must not contain commas, quotes or newlines");
        }
        out += std::to_string(r.sample_id) + "," + r.dataset + "," + r.method + "," + format_double(r.certificate) + ","
               + (r.error ? format_double(*r.error) : "") + "," + r.label.value_or("") + ","
               + r.fine_label.value_or("") + "\n";
    }
    return out;
}

inline std::vector<CertificateRecord> parse_records_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != csv_header) throw ConfigError("records CSV: unexpected header");
    std::vector<CertificateRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t pos = 0;
        for (;;) {
            std::size_t c = line.find(',', pos);
            f.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        if (f.size() != 7) throw ConfigError("records CSV: expected 7 columns in '" + line + "'");
        CertificateRecord r;
        try {
            r.sample_id = std::stoull(f[0]);
            r.dataset = f[1];
            r.method = f[2];
            r.certificate = std::stod(f[3]);
            if (!f[4].empty()) r.error = std::stod(f[4]);
        } catch (const std::logic_error&) {
            throw ConfigError("records CSV: malformed number in '" + line + "'");
        }
        if (!f[5].empty()) r.label = f[5];
        if (!f[6].empty()) r.fine_label = f[6];
        out.push_back(std::move(r));
    }
    return out;
}

inline json records_json(const std::vector<CertificateRecord>& records)
{
    return json{{"records", records}};
}

inline void save_records(const std::filesystem::path& p, const std::vector<CertificateRecord>& records)
{
    if (p.extension() == ".csv")
        io::write_atomic(p, records_csv(records));
    else
        io::write_atomic(p, records_json(records).dump(1) + "\n");
}

inline std::vector<CertificateRecord> load_records(const std::filesystem::path& p)
{
    std::string text = io::read_text(p);
    if (p.extension() == ".csv") return parse_records_csv(text);
    json j;
    try {
        j = json::parse(text);
        return j.at("records").get<std::vector<CertificateRecord>>();
    } catch (const json::exception& e) {
        throw ConfigError("cannot read records from " + p.string() + ": " + e.what());
    }
}

/// Records with the given method tag, in input order.
inline std::vector<CertificateRecord> select_method(const std::vector<CertificateRecord>& records,
                                                    const std::string& method)
{
    std::vector<CertificateRecord> out;
    for (const auto& r : records)
        if (r.method == method) out.push_back(r);
    return out;
}

//---------------------------------------------------------------------------//
// Reports

/// Per-method results of one run.
struct MethodReport {
    std::string method;
    DecisionBoundary boundary;
    Metrics metrics;
    double spearman = 0;
    std::optional<ErrorFit> fit;
    std::optional<double> band_coverage;
};

inline void to_json(json& j, const MethodReport& m)
{
    j = json{{"method", m.method}, {"boundary", m.boundary}, {"metrics", m.metrics}, {"spearman", m.spearman}};
    if (m.fit) j["fit"] = *m.fit;
    if (m.band_coverage) j["band_coverage"] = *m.band_coverage;
}

struct Report {
    std::string dataset;
    std::vector<MethodReport> methods;
    json provenance = json::object();
};

inline void to_json(json& j, const Report& r)
{
    j = json{{"dataset", r.dataset}, {"methods", r.methods}, {"provenance", r.provenance}};
}

/// One CSV row per (dataset, method) with the quadrant metrics.
inline std::string metrics_csv(const Report& r)
{
    std::string out = "dataset,method,ACC,FPR,FNR,FDR,ARCB,spearman\n";
    for (const auto& m : r.methods) {
        out += r.dataset + "," + m.method + "," + format_double(m.metrics.acc) + "," + format_double(m.metrics.fpr)
               + "," + format_double(m.metrics.fnr) + "," + format_double(m.metrics.fdr) + ","
               + (m.metrics.arcb ? format_double(*m.metrics.arcb) : "") + "," + format_double(m.spearman) + "\n";
    }
    return out;
}

}  // namespace oodcert
