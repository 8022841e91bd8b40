// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace oodcert {

using nlohmann::json;

/// One certificate evaluation. error/relative_error are present only when
/// ground truth was available; labels are filled in by classification.
struct CertificateRecord {
    std::size_t sample_id = 0;
    std::string dataset;
    std::string method;
    double certificate = 0;
    std::optional<double> error;
    std::optional<double> relative_error;
    std::optional<std::string> label;
    std::optional<std::string> fine_label;
};

inline void to_json(json& j, const CertificateRecord& r)
{
    j = json{{"sample_id", r.sample_id}, {"dataset", r.dataset}, {"method", r.method}, {"certificate", r.certificate}};
    j["error"] = r.error ? json(*r.error) : json(nullptr);
    j["relative_error"] = r.relative_error ? json(*r.relative_error) : json(nullptr);
    j["label"] = r.label ? json(*r.label) : json(nullptr);
    j["fine_label"] = r.fine_label ? json(*r.fine_label) : json(nullptr);
}

inline void from_json(const json& j, CertificateRecord& r)
{
    j.at("sample_id").get_to(r.sample_id);
    j.at("dataset").get_to(r.dataset);
    j.at("method").get_to(r.method);
    j.at("certificate").get_to(r.certificate);
    auto opt_d = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    auto opt_s = [&](const char* k) -> std::optional<std::string> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<std::string>();
    };
    r.error = opt_d("error");
    r.relative_error = opt_d("relative_error");
    r.label = opt_s("label");
    r.fine_label = opt_s("fine_label");
}

}  // namespace oodcert
