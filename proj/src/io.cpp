// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rfsplat::io {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    auto [end, ec] = std::to_chars(buf, buf + 16, value, 16);
    std::string s(buf, end);
    return std::string(16 - s.size(), '0') + s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    std::error_code ec;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out)
        throw Error(ErrorCode::Io, "failed writing " + path.string());
}

std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a64(read_file(path)); }

void save_tensor(const std::filesystem::path& path, const ViewTensor& t) {
    std::ostringstream out;
    out << "VIEWTENSOR " << t.views << ' ' << t.height << ' ' << t.width << ' ' << t.channels << '\n';
    std::string raw(t.values.size() * sizeof(double), '\0');
    std::memcpy(raw.data(), t.values.data(), raw.size());
    out << raw;
    write_file(path, out.str());
}

ViewTensor load_tensor(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    std::istringstream in(data);
    std::string tag;
    int v = 0, h = 0, w = 0, c = 0;
    RFSPLAT_CHECK(static_cast<bool>(in >> tag >> v >> h >> w >> c) && tag == "VIEWTENSOR" && v > 0 && h > 0 &&
                      w > 0 && c > 0,
                  ErrorCode::Io, "bad tensor header in " + path.string());
    in.get();
    ViewTensor t = ViewTensor::zeros(v, h, w, c);
    const auto offset = static_cast<std::size_t>(in.tellg());
    RFSPLAT_CHECK(data.size() == offset + t.values.size() * sizeof(double), ErrorCode::Io,
                  "truncated tensor file " + path.string());
    std::memcpy(t.values.data(), data.data() + offset, t.values.size() * sizeof(double));
    return t;
}

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, end);
}

}  // namespace rfsplat::io
