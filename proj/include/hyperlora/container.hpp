#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlora/common.hpp"
#include "hyperlora/optim.hpp"

namespace hyperlora {

// On-disk checkpoint container shared by every artifact kind:
//   magic (4 bytes) | version u32 LE | header length u64 LE |
//   UTF-8 JSON header | payload float32 LE | CRC-32 of payload u32 LE
// Known magics: "LDBC" (model/probe checkpoints), "LDBA" (adapters),
// "LDBH" (hypernetwork).
struct Container {
    std::string magic;
    uint32_t version = 1;
    nlohmann::json header;
    std::vector<float> payload;
};

void save_container(const std::string& path, const Container& c);

// Verifies magic, version and payload CRC; throws IoError on any of bad
// magic, version mismatch, truncation or checksum failure.
Container load_container(const std::string& path, const std::string& expected_magic, uint32_t expected_version);

// Helpers for storing a ParamStore in a container: the header gains a
// "tensors" index {name: {shape, offset}} under `key` and the payload is
// extended with values in name order.
void pack_params(Container& c, const std::string& key, const ParamStore& params);
ParamStore unpack_params(const Container& c, const std::string& key);

}  // namespace hyperlora
