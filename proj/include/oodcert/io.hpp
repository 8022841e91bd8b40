// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "oodcert/error.hpp"

namespace oodcert::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::vector<char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& path)
{
    auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

/// Write via a sibling temporary and rename, so readers never observe a
/// partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ConfigError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

class Writer {
  public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template<class T>
    void pod(T v)
    {
        bytes(&v, sizeof(T));
    }
    void str(const std::string& s) { buf_ += s; }
    const std::string& buffer() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(const char* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what))
    {
    }

    void bytes(void* dst, std::size_t n)
    {
        if (pos_ + n > size_) throw ConfigError(what_ + ": truncated file");
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }
    template<class T>
    T pod()
    {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::string str(std::size_t n)
    {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    std::size_t pos() const { return pos_; }
    const char* at(std::size_t offset, std::size_t n) const
    {
        if (offset + n > size_) throw ConfigError(what_ + ": data section out of range");
        return data_ + offset;
    }

  private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

}  // namespace oodcert::io
