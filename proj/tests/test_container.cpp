#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hyperlora/container.hpp"
#include "hyperlora/rng.hpp"

using namespace hyperlora;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}
void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}
}  // namespace

TEST_CASE("container round-trip is bit-exact for all magics") {
    Rng rng(123);
    for (const std::string magic : {"LDBC", "LDBA", "LDBH"}) {
        Container c;
        c.magic = magic;
        c.header = {{"kind", "test"}, {"note", magic}};
        for (int i = 0; i < 257; ++i) c.payload.push_back(rng.normal());
        const std::string path = tmp_path("cont_" + magic + ".bin");
        save_container(path, c);
        Container d = load_container(path, magic, 1);
        CHECK(d.header == c.header);
        REQUIRE(d.payload.size() == c.payload.size());
        for (size_t i = 0; i < c.payload.size(); ++i) {
            CHECK(std::bit_cast<uint32_t>(d.payload[i]) == std::bit_cast<uint32_t>(c.payload[i]));
        }
        // saving the loaded container reproduces the file byte for byte
        const std::string path2 = tmp_path("cont2_" + magic + ".bin");
        save_container(path2, d);
        CHECK(read_bytes(path) == read_bytes(path2));
        std::remove(path.c_str());
        std::remove(path2.c_str());
    }
}

TEST_CASE("container rejects bad magic, version, truncation and corruption") {
    Container c;
    c.magic = "LDBA";
    c.header = {{"x", 1}};
    c.payload = {1.0f, 2.0f, 3.0f};
    const std::string path = tmp_path("cont_err.bin");
    save_container(path, c);
    const std::string good = read_bytes(path);

    CHECK_THROWS_WITH_AS(load_container(path, "LDBC", 1), doctest::Contains("bad magic"), IoError);
    CHECK_THROWS_WITH_AS(load_container(path, "LDBA", 2), doctest::Contains("version mismatch"), IoError);

    write_bytes(path, good.substr(0, good.size() - 6));
    CHECK_THROWS_AS(load_container(path, "LDBA", 1), IoError);

    std::string corrupt = good;
    corrupt[corrupt.size() - 6] ^= 0x40;  // flip a payload bit
    write_bytes(path, corrupt);
    CHECK_THROWS_WITH_AS(load_container(path, "LDBA", 1), doctest::Contains("checksum"), IoError);
    std::remove(path.c_str());
}

TEST_CASE("payload corruption fuzz is always detected") {
    Container c;
    c.magic = "LDBH";
    c.header = {{"k", "fuzz"}};
    Rng rng(7);
    for (int i = 0; i < 64; ++i) c.payload.push_back(rng.normal());
    const std::string path = tmp_path("cont_fuzz.bin");
    save_container(path, c);
    const std::string good = read_bytes(path);
    const size_t header_len = good.size() - 4 - c.payload.size() * 4 - 16;
    const size_t payload_off = 16 + header_len;

    Rng fuzz(99);
    int detected = 0;
    const int kCases = 500;  // the acceptance suite runs the full 10,000
    for (int i = 0; i < kCases; ++i) {
        std::string bad = good;
        size_t pos = payload_off + fuzz.next_below(c.payload.size() * 4);
        unsigned char delta = static_cast<unsigned char>(1 + fuzz.next_below(255));
        bad[pos] = static_cast<char>(static_cast<unsigned char>(bad[pos]) ^ delta);
        write_bytes(path, bad);
        try {
            load_container(path, "LDBH", 1);
        } catch (const IoError&) {
            ++detected;
        }
    }
    CHECK(detected == kCases);
    std::remove(path.c_str());
}

TEST_CASE("param pack/unpack preserves tensors") {
    ParamStore store;
    Rng rng(5);
    store.add("b.weight", Tensor::randn(Shape{3, 4}, rng));
    store.add("a.bias", Tensor::randn(Shape{7}, rng));
    Container c;
    c.magic = "LDBC";
    pack_params(c, "tensors", store);
    const std::string path = tmp_path("cont_params.bin");
    save_container(path, c);
    Container d = load_container(path, "LDBC", 1);
    ParamStore out = unpack_params(d, "tensors");
    CHECK(out.size() == 2);
    CHECK(out.at("b.weight").vec() == store.at("b.weight").vec());
    CHECK(out.at("a.bias").vec() == store.at("a.bias").vec());
    CHECK(out.at("a.bias").shape() == Shape{7});
    std::remove(path.c_str());
}
