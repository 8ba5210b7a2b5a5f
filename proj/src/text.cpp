#include "hyperlora/text.hpp"

#include <sstream>

namespace hyperlora {

namespace {

// 64 tokens: prompt grammar words, the [V] identifier, style names, and
// attribute/filler vocabulary for prompt variations.
const std::vector<std::string> kBuiltinTokens = {
    "a",      "the",    "in",     "of",      "with",  "face",   "style",  "portrait", "person", "[V]",
    "photo",  "sketch", "invert", "sepia",   "red",   "green",  "blue",   "dark",     "light",  "bright",
    "soft",   "bold",   "warm",   "cool",    "young", "old",    "happy",  "calm",     "serious", "gentle",
    "wild",   "round",  "oval",   "square",  "short", "long",   "bald",   "curly",    "hair",   "eyes",
    "skin",   "smile",  "look",   "view",    "art",   "image",  "picture", "classic", "modern", "simple",
    "fine",   "clean",  "sharp",  "smooth",  "deep",  "pale",   "vivid",  "plain",    "rich",   "quiet",
    "strong", "small",  "big",    "drawing",
};

}  // namespace

const Vocab& Vocab::builtin() {
    static const Vocab v(kBuiltinTokens);
    return v;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw ValidationError("vocabulary must not be empty");
}

int32_t Vocab::id(const std::string& token) const {
    for (size_t i = 0; i < tokens_.size(); ++i)
        if (tokens_[i] == token) return static_cast<int32_t>(i);
    throw ValidationError("token '" + token + "' is not in the vocabulary");
}

std::vector<int32_t> Vocab::encode(const std::string& text) const {
    std::vector<int32_t> ids;
    std::istringstream in(text);
    std::string word;
    while (in >> word) ids.push_back(id(word));
    if (ids.empty()) throw ValidationError("prompt '" + text + "' has no tokens");
    return ids;
}

std::string Vocab::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= size()) throw ValidationError("token id out of range");
        if (i) out += ' ';
        out += tokens_[static_cast<size_t>(ids[i])];
    }
    return out;
}

}  // namespace hyperlora
