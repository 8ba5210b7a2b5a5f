#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlora/common.hpp"

namespace hyperlora {

// Resolved configuration tree. Precedence: built-in defaults, then the file,
// then dotted command-line overrides. Keys or types not present in the
// defaults are rejected with the offending key path.
class Config {
  public:
    static nlohmann::json defaults();

    // path may be empty (defaults only); overrides are "a.b.c=value" pairs.
    static Config load(const std::string& path, const std::vector<std::string>& overrides = {});
    static Config from_json(const nlohmann::json& resolved);  // trusts the tree (provenance round-trip)

    const nlohmann::json& tree() const { return tree_; }

    int64_t geti(const std::string& dotted) const;
    double getf(const std::string& dotted) const;
    bool getb(const std::string& dotted) const;
    std::string gets(const std::string& dotted) const;
    std::vector<std::string> get_list(const std::string& dotted) const;

    uint64_t seed() const { return static_cast<uint64_t>(geti("seed")); }
    int jobs() const;  // resolves 0 to hardware concurrency

  private:
    const nlohmann::json& node(const std::string& dotted) const;
    nlohmann::json tree_;
};

}  // namespace hyperlora
