// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodcert/error.hpp"
#include "oodcert/io.hpp"

namespace oodcert {

using nlohmann::json;

namespace toml {

namespace detail {

inline std::string trim(std::string_view s)
{
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

/// Drop a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& line)
{
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '\\' && in_str) {
            ++i;
            continue;
        }
        if (c == '"') in_str = !in_str;
        if (c == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline bool valid_key(const std::string& k)
{
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return k.front() != '.' && k.back() != '.' && k.find("..") == std::string::npos;
}

}  // namespace detail

/// Scalar or flat array value: "string", integer, float, true/false, [a, b].
inline json parse_value(const std::string& raw, const std::string& where = "value")
{
    std::string v = detail::trim(raw);
    if (v.empty()) throw ConfigError(where + ": missing value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw ConfigError(where + ": unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            char c = v[i];
            if (c == '\\' && i + 2 < v.size()) {
                char e = v[++i];
                out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
            } else {
                out.push_back(c);
            }
        }
        return out;
    }
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError(where + ": unterminated array");
        json arr = json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string item;
        bool in_str = false;
        for (char c : body) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                if (!detail::trim(item).empty()) arr.push_back(parse_value(item, where));
                item.clear();
            } else {
                item.push_back(c);
            }
        }
        if (!detail::trim(item).empty()) arr.push_back(parse_value(item, where));
        return arr;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    std::string num;
    for (char c : v)
        if (c != '_') num.push_back(c);
    bool is_float = num.find_first_of(".eE") != std::string::npos || num == "inf" || num == "nan";
    const char* b = num.data();
    const char* e = b + num.size();
    if (!is_float) {
        std::int64_t i = 0;
        auto r = std::from_chars(b, e, i);
        if (r.ec == std::errc() && r.ptr == e) return i;
    } else {
        double d = 0;
        auto r = std::from_chars(b, e, d);
        if (r.ec == std::errc() && r.ptr == e) return d;
    }
    throw ConfigError(where + ": cannot parse '" + v + "'");
}

/// Parse a TOML subset into a flat object keyed by dotted names. Supports
/// [table] headers, dotted keys and the values of parse_value.
inline json parse(const std::string& text, const std::string& source = "config")
{
    json out = json::object();
    std::string prefix;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string where = source + ":" + std::to_string(lineno);
        std::string s = detail::trim(detail::strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']' || s.size() < 3) throw ConfigError(where + ": malformed table header");
            std::string name = detail::trim(s.substr(1, s.size() - 2));
            if (!detail::valid_key(name)) throw ConfigError(where + ": invalid table name '" + name + "'");
            prefix = name + ".";
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = detail::trim(s.substr(0, eq));
        if (!detail::valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
        std::string full = prefix + key;
        if (out.contains(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
        out[full] = parse_value(s.substr(eq + 1), where);
    }
    return out;
}

/// Flat object back to TOML text, one key per line, sorted.
inline std::string dump(const json& flat)
{
    std::string out;
    for (const auto& [k, v] : flat.items()) out += k + " = " + v.dump() + "\n";
    return out;
}

}  // namespace toml

//---------------------------------------------------------------------------//
/*!
 * Flat key/value configuration with a fixed schema. Every key has a default
 * and a type; unknown keys and type mismatches are rejected.
 */
class FlatConfig {
  public:
    explicit FlatConfig(json defaults) : values_(std::move(defaults)) {}

    /// Overlay a flat object (file contents or overrides).
    void merge(const json& flat, const std::string& source)
    {
        for (const auto& [k, v] : flat.items()) {
            if (!values_.contains(k)) throw ConfigError(source + ": unknown config key '" + k + "'");
            const json& d = values_.at(k);
            bool ok = (d.is_number() && v.is_number()) || d.type() == v.type();
            if (d.is_number_integer() && !v.is_number_integer()) ok = false;
            if (d.is_array() && v.is_array()) ok = true;
            if (!ok) throw ConfigError(source + ": wrong type for '" + k + "' (expected " + d.type_name() + ")");
            if (d.is_number_unsigned() && v.is_number_integer() && v.get<std::int64_t>() < 0) {
                throw ConfigError(source + ": '" + k + "' must be non-negative");
            }
            values_[k] = d.is_number_unsigned() ? json(v.get<std::uint64_t>()) : v;
        }
    }

    void merge_file(const std::filesystem::path& p)
    {
        merge(toml::parse(io::read_text(p), p.string()), p.string());
    }

    /// "key=value" override as given on the command line.
    void set(const std::string& assignment)
    {
        auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
        std::string key = toml::detail::trim(assignment.substr(0, eq));
        std::string raw = toml::detail::trim(assignment.substr(eq + 1));
        json v;
        try {
            v = toml::parse_value(raw, "override " + key);
        } catch (const ConfigError&) {
            v = raw;  // bare word taken as a string
        }
        merge(json{{key, v}}, "override");
    }

    template<class T>
    T get(const std::string& key) const
    {
        if (!values_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        return values_.at(key).get<T>();
    }

    const json& values() const { return values_; }

  private:
    json values_;
};

}  // namespace oodcert
