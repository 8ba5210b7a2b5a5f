#include "hyperlora/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace hyperlora {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 | static_cast<uint32_t>(p[2]) << 16 |
           static_cast<uint32_t>(p[3]) << 24;
}
uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

uint32_t payload_crc(const std::string& bytes) {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

void save_container(const std::string& path, const Container& c) {
    if (c.magic.size() != 4) throw IoError("container magic must be 4 bytes");
    std::string header = c.header.dump();
    std::string payload;
    payload.reserve(c.payload.size() * 4);
    for (float f : c.payload) put_u32(payload, std::bit_cast<uint32_t>(f));

    std::string buf;
    buf.reserve(16 + header.size() + payload.size() + 4);
    buf += c.magic;
    put_u32(buf, c.version);
    put_u64(buf, header.size());
    buf += header;
    buf += payload;
    put_u32(buf, payload_crc(payload));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

Container load_container(const std::string& path, const std::string& expected_magic, uint32_t expected_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());

    if (buf.size() < 16) throw IoError("truncated container '" + path + "'");
    Container c;
    c.magic = buf.substr(0, 4);
    if (c.magic != expected_magic)
        throw IoError("bad magic in '" + path + "': got '" + c.magic + "', want '" + expected_magic + "'");
    c.version = get_u32(p + 4);
    if (c.version != expected_version)
        throw IoError("version mismatch in '" + path + "': got " + std::to_string(c.version) + ", want " +
                      std::to_string(expected_version));
    const uint64_t hlen = get_u64(p + 8);
    if (buf.size() < 16 + hlen + 4) throw IoError("truncated container '" + path + "'");
    try {
        c.header = nlohmann::json::parse(buf.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad container header in '" + path + "': " + e.what());
    }
    const size_t payload_bytes = buf.size() - 16 - hlen - 4;
    if (payload_bytes % 4 != 0) throw IoError("payload not a whole number of floats in '" + path + "'");
    const std::string payload = buf.substr(16 + hlen, payload_bytes);
    const uint32_t want_crc = get_u32(p + buf.size() - 4);
    if (payload_crc(payload) != want_crc) throw IoError("checksum failure in '" + path + "'");
    c.payload.resize(payload_bytes / 4);
    for (size_t i = 0; i < c.payload.size(); ++i)
        c.payload[i] = std::bit_cast<float>(get_u32(reinterpret_cast<const unsigned char*>(payload.data()) + 4 * i));
    return c;
}

void pack_params(Container& c, const std::string& key, const ParamStore& params) {
    nlohmann::json index = nlohmann::json::object();
    for (const auto& [name, t] : params.map()) {
        index[name] = {{"shape", t.shape().dims()}, {"offset", c.payload.size()}};
        c.payload.insert(c.payload.end(), t.vec().begin(), t.vec().end());
    }
    c.header[key] = index;
}

ParamStore unpack_params(const Container& c, const std::string& key) {
    if (!c.header.contains(key)) throw IoError("container header missing '" + key + "'");
    ParamStore store;
    for (const auto& [name, entry] : c.header.at(key).items()) {
        Shape shape = Shape::of(entry.at("shape").get<std::vector<int64_t>>());
        const size_t offset = entry.at("offset").get<size_t>();
        if (offset + static_cast<size_t>(shape.numel()) > c.payload.size())
            throw IoError("tensor '" + name + "' exceeds payload");
        std::vector<float> data(c.payload.begin() + static_cast<int64_t>(offset),
                                c.payload.begin() + static_cast<int64_t>(offset) + shape.numel());
        store.add(name, Tensor(shape, std::move(data)));
    }
    return store;
}

}  // namespace hyperlora
