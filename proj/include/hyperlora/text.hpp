#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyperlora/common.hpp"

namespace hyperlora {

// Closed vocabulary: tokenization is exact whitespace-split lookup; anything
// outside the list is an error. "[V]" is the rare subject identifier.
class Vocab {
  public:
    static const Vocab& builtin();
    explicit Vocab(std::vector<std::string> tokens);

    std::vector<int32_t> encode(const std::string& text) const;  // ValidationError on OOV
    std::string decode(const std::vector<int32_t>& ids) const;
    int32_t id(const std::string& token) const;
    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
};

}  // namespace hyperlora
