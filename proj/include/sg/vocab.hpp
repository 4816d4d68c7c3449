#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sg/error.hpp"

namespace sg {

using TokenId = std::int32_t;

// Token id sequence under some backend's vocabulary; the object the
// optimizer mutates.
struct TokenSequence {
    std::vector<TokenId> ids;

    std::size_t size() const noexcept { return ids.size(); }
    bool empty() const noexcept { return ids.empty(); }
    TokenId& operator[](std::size_t i) noexcept { return ids[i]; }
    TokenId operator[](std::size_t i) const noexcept { return ids[i]; }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline TokenSequence concat(const TokenSequence& a, const TokenSequence& b) {
    TokenSequence out = a;
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
    return out;
}

struct Vocabulary {
    std::vector<std::string> token_strings;
    TokenId end_token_id = 0;

    TokenId size() const noexcept { return static_cast<TokenId>(token_strings.size()); }

    // Stable identity hash (FNV-1a over size, entries and end id). Two
    // backends may exchange token sequences only when fingerprints agree.
    std::uint64_t fingerprint() const noexcept {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        auto mix_byte = [&h](unsigned char b) {
            h ^= b;
            h *= 0x100000001B3ULL;
        };
        auto mix_u64 = [&](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>(v >> (8 * i)));
        };
        mix_u64(token_strings.size());
        for (const auto& s : token_strings) {
            mix_u64(s.size());
            for (char c : s) mix_byte(static_cast<unsigned char>(c));
        }
        mix_u64(static_cast<std::uint64_t>(end_token_id));
        return h;
    }
};

// Byte-level vocabulary: ids 0..255 are the raw bytes, then begin and end
// markers. 258 entries total.
inline Vocabulary byte_vocabulary() {
    Vocabulary v;
    v.token_strings.reserve(258);
    for (int b = 0; b < 256; ++b) v.token_strings.push_back(std::string(1, static_cast<char>(b)));
    v.token_strings.emplace_back("<s>");
    v.token_strings.emplace_back("</s>");
    v.end_token_id = 257;
    return v;
}

// Small synthetic vocabulary for oracle-scale tests: ids 0..V-3 are the
// single characters 'a', 'b', ..., then begin and end markers.
inline Vocabulary alpha_vocabulary(TokenId size) {
    if (size < 3 || size > 128)
        throw ConfigError("alpha vocabulary size must be in [3, 128], got " + std::to_string(size));
    Vocabulary v;
    v.token_strings.reserve(static_cast<std::size_t>(size));
    for (TokenId i = 0; i + 2 < size; ++i)
        v.token_strings.push_back(std::string(1, static_cast<char>('a' + i)));
    v.token_strings.emplace_back("<s>");
    v.token_strings.emplace_back("</s>");
    v.end_token_id = size - 1;
    return v;
}

// Greedy single-character tokenizer over a vocabulary whose text tokens are
// one-byte strings (both toy vocabularies above). Multi-byte entries such as
// the begin/end markers never match input text.
class CharTokenizer {
public:
    explicit CharTokenizer(const Vocabulary& vocab) : vocab_(&vocab) {
        for (TokenId id = 0; id < vocab.size(); ++id) {
            const std::string& s = vocab.token_strings[static_cast<std::size_t>(id)];
            if (s.size() == 1) byte_to_id_.emplace(static_cast<unsigned char>(s[0]), id);
        }
    }

    TokenSequence encode(std::string_view text) const {
        if (text.empty()) throw EmptyInput("cannot encode empty text");
        TokenSequence seq;
        seq.ids.reserve(text.size());
        for (char c : text) {
            const auto it = byte_to_id_.find(static_cast<unsigned char>(c));
            if (it == byte_to_id_.end())
                throw UnrepresentableText("no token for byte 0x" + hex_byte(c));
            seq.ids.push_back(it->second);
        }
        return seq;
    }

    std::string decode(const TokenSequence& seq) const {
        std::string out;
        for (TokenId id : seq.ids) {
            if (id < 0 || id >= vocab_->size())
                throw InvalidTokenId("token id " + std::to_string(id) + " out of range [0, " +
                                     std::to_string(vocab_->size()) + ")");
            out += vocab_->token_strings[static_cast<std::size_t>(id)];
        }
        return out;
    }

private:
    static std::string hex_byte(char c) {
        static const char* digits = "0123456789abcdef";
        const auto b = static_cast<unsigned char>(c);
        return {digits[b >> 4], digits[b & 0xF]};
    }

    const Vocabulary* vocab_;
    std::unordered_map<unsigned char, TokenId> byte_to_id_;
};

} // namespace sg
