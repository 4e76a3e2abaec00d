#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vidcap/errors.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

// Binary container: magic, version, JSON header, named float64 arrays with
// shape descriptors, FNV-1a checksum trailer. All integers and floats are
// little-endian regardless of host order.
struct CheckpointData {
    nlohmann::json header;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

constexpr char kCkptMagic[8] = {'V', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<std::uint64_t>(v)); }

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const CheckpointData& ckpt, const std::string& path) {
    std::string buf;
    buf.append(detail::kCkptMagic, 8);
    detail::put_u32(buf, detail::kCkptVersion);
    const std::string header = ckpt.header.dump();
    detail::put_u64(buf, header.size());
    buf.append(header);
    detail::put_u64(buf, ckpt.arrays.size());
    for (const auto& [name, t] : ckpt.arrays) {
        detail::put_u64(buf, name.size());
        buf.append(name);
        detail::put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put_u64(buf, static_cast<std::uint64_t>(d));
        for (double v : t.data) detail::put_f64(buf, v);
    }
    detail::put_u64(buf, fnv1a64(buf.data(), buf.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw DataError("short write on checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 4 + 8) throw DataError("checkpoint truncated");

    const std::uint64_t stored = [&] {
        detail::ByteReader tail{buf, buf.size() - 8};
        return tail.u64();
    }();
    if (stored != fnv1a64(buf.data(), buf.size() - 8)) throw DataError("checkpoint checksum mismatch in " + path);

    detail::ByteReader r{buf};
    if (r.bytes(8) != std::string(detail::kCkptMagic, 8)) throw DataError("not a checkpoint file: " + path);
    const std::uint32_t version = r.u32();
    if (version != detail::kCkptVersion)
        throw DataError("checkpoint version " + std::to_string(version) + " unsupported");

    CheckpointData ckpt;
    const std::uint64_t header_len = r.u64();
    const std::string header = r.bytes(header_len);
    try {
        ckpt.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header unreadable: ") + e.what());
    }
    const std::uint64_t count = r.u64();
    for (std::uint64_t a = 0; a < count; ++a) {
        std::string name = r.bytes(r.u64());
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::int64_t>(r.u64()));
        check_shape_valid(shape);
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& v : data) v = r.f64();
        ckpt.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

}  // namespace vidcap
