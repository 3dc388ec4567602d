// SPDX-License-Identifier: Apache-2.0
//
// Named-array archive used for checkpoints:
//
//   "RLFCKPT1"
//   u64 header length, header text (key=value lines)
//   u64 array count, then per array:
//     u32 name length, name, u8 dtype (0 = f32, 1 = f64), u32 rank, i32 dims[rank], raw little-endian data
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "rlfseg/errors.hpp"
#include "rlfseg/image_io.hpp"
#include "rlfseg/nn.hpp"

namespace rlfseg {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

struct Archive {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, std::variant<Tensor<float>, Tensor<double>>>> arrays;

    const std::string& at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw DataError("checkpoint: missing header key '" + key + "'");
        return it->second;
    }

    template <class T>
    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, a] : arrays)
            if (n == name) {
                if (const auto* t = std::get_if<Tensor<T>>(&a)) return t;
                throw DataError("checkpoint: array '" + name + "' has an unexpected dtype");
            }
        return nullptr;
    }
};

namespace detail {

template <class V>
void put(std::string& out, V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;
    std::string path;

    template <class V>
    V get() {
        V v;
        bytes(&v, sizeof(V));
        return v;
    }
    void bytes(void* dst, std::size_t n) {
        if (pos + n > s.size()) throw DataError(path + ": checkpoint truncated");
        std::memcpy(dst, s.data() + pos, n);
        pos += n;
    }
    std::string str(std::size_t n) {
        std::string out(n, '\0');
        bytes(out.data(), n);
        return out;
    }
};

template <class T>
void put_array(std::string& out, const std::string& name, const Tensor<T>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, std::is_same_v<T, float> ? 0 : 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
}

template <class T>
Tensor<T> get_array(Reader& r, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DataError(r.path + ": negative dimension in checkpoint");
        n *= static_cast<std::size_t>(d);
    }
    if (r.pos + n * sizeof(T) > r.s.size()) throw DataError(r.path + ": checkpoint truncated");
    Tensor<T> t(std::move(shape));
    r.bytes(t.data(), n * sizeof(T));
    return t;
}

} // namespace detail

inline void save_archive(const std::filesystem::path& path, const Archive& a) {
    std::string out = "RLFCKPT1";
    std::string header;
    for (const auto& [k, v] : a.meta) {
        require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos && v.find('\n') == std::string::npos,
                "checkpoint: header keys and values must be single-line and keys free of '='");
        header += k + "=" + v + "\n";
    }
    detail::put<std::uint64_t>(out, header.size());
    out += header;
    detail::put<std::uint64_t>(out, a.arrays.size());
    for (const auto& [name, arr] : a.arrays)
        std::visit([&](const auto& t) { detail::put_array(out, name, t); }, arr);
    io::write_atomic(path, out);
}

inline Archive load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    const std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::Reader r{s, 0, path.string()};
    if (r.str(8) != "RLFCKPT1") throw DataError(path.string() + ": not a checkpoint (bad magic)");
    Archive a;
    std::istringstream header(r.str(r.get<std::uint64_t>()));
    for (std::string line; std::getline(header, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(path.string() + ": malformed header line '" + line + "'");
        a.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str(r.get<std::uint32_t>());
        const auto dtype = r.get<std::uint8_t>();
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw DataError(path.string() + ": implausible rank for array " + name);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = r.get<std::int32_t>();
        if (dtype == 0)
            a.arrays.emplace_back(std::move(name), detail::get_array<float>(r, std::move(shape)));
        else if (dtype == 1)
            a.arrays.emplace_back(std::move(name), detail::get_array<double>(r, std::move(shape)));
        else
            throw DataError(path.string() + ": unknown dtype for array " + name);
    }
    if (r.pos != s.size()) throw DataError(path.string() + ": trailing bytes after last array");
    return a;
}

/// Adds every slot of `p` as "<prefix><slot name>".
template <class T>
void add_params(Archive& a, const nn::ParamStore<T>& p, const std::string& prefix = "") {
    for (int s = 0; s < p.size(); ++s) a.arrays.emplace_back(prefix + p.names[static_cast<std::size_t>(s)], p[s]);
}

/// Fills a store laid out like `like` from "<prefix><slot name>" arrays.
template <class T>
nn::ParamStore<T> read_params(const Archive& a, const nn::ParamStore<T>& like, const std::string& prefix = "") {
    nn::ParamStore<T> out = like;
    for (int s = 0; s < out.size(); ++s) {
        const std::string name = prefix + out.names[static_cast<std::size_t>(s)];
        const auto* t = a.find<T>(name);
        if (!t) throw DataError("checkpoint: missing array '" + name + "'");
        if (t->shape() != out[s].shape())
            throw DataError("checkpoint: array '" + name + "' has shape " + t->shape_string() + ", expected " +
                            out[s].shape_string());
        out[s] = *t;
    }
    return out;
}

} // namespace rlfseg
