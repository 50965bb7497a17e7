#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "crlab/errors.hpp"

namespace crlab {

using TokenId = std::int32_t;

// Byte-level vocabulary: ids 0..255 are raw byte values, followed by four
// reserved special ids. No training step is needed and token counts are
// reproducible across machines, which keeps length metrics comparable.
struct Vocab {
    static constexpr TokenId kByteCount = 256;
    static constexpr TokenId kBos = 256;
    static constexpr TokenId kEos = 257;
    static constexpr TokenId kPad = 258;
    static constexpr TokenId kAnswerMark = 259;
    static constexpr TokenId kSize = 260;

    static constexpr bool is_special(TokenId id) { return id >= kByteCount && id < kSize; }
    static constexpr bool is_valid(TokenId id) { return id >= 0 && id < kSize; }
};

// Total function: every byte maps to its own id. Output never contains PAD.
inline std::vector<TokenId> encode(std::string_view text) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        ids.push_back(static_cast<TokenId>(c));
    }
    return ids;
}

// Inverse of encode on encode's image. Special tokens render as empty text.
inline std::string decode(const std::vector<TokenId>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (!Vocab::is_valid(id)) {
            throw MalformedTokenError("token id " + std::to_string(id) + " out of range [0, " +
                                      std::to_string(Vocab::kSize) + ")");
        }
        if (id < Vocab::kByteCount) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
    }
    return out;
}

// Debug rendering with visible sentinels for the special ids.
inline std::string decode_debug(const std::vector<TokenId>& ids) {
    std::string out;
    out.reserve(ids.size() + 16);
    for (TokenId id : ids) {
        if (!Vocab::is_valid(id)) {
            throw MalformedTokenError("token id " + std::to_string(id) + " out of range [0, " +
                                      std::to_string(Vocab::kSize) + ")");
        }
        switch (id) {
            case Vocab::kBos: out += "<bos>"; break;
            case Vocab::kEos: out += "<eos>"; break;
            case Vocab::kPad: out += "<pad>"; break;
            case Vocab::kAnswerMark: out += "<ans>"; break;
            default: out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
    }
    return out;
}

}  // namespace crlab
