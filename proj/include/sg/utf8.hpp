#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace sg {

// Decodes UTF-8 into code points. Lenient: each byte of an invalid sequence
// becomes its own code point, so arbitrary byte strings still get a stable
// length. Edit-distance metrics count code points, not bytes, because
// protected texts routinely swap ASCII for visually similar multi-byte
// characters and those must count as single-character edits.
inline std::vector<char32_t> utf8_codepoints(std::string_view text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto b0 = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        char32_t cp = b0;
        if ((b0 & 0x80U) == 0x00U) {
            len = 1;
        } else if ((b0 & 0xE0U) == 0xC0U) {
            len = 2;
            cp = b0 & 0x1FU;
        } else if ((b0 & 0xF0U) == 0xE0U) {
            len = 3;
            cp = b0 & 0x0FU;
        } else if ((b0 & 0xF8U) == 0xF0U) {
            len = 4;
            cp = b0 & 0x07U;
        } else {
            out.push_back(b0);
            ++i;
            continue;
        }
        if (i + len > text.size()) {
            out.push_back(b0);
            ++i;
            continue;
        }
        bool valid = true;
        char32_t acc = cp;
        for (std::size_t k = 1; k < len; ++k) {
            const auto bk = static_cast<unsigned char>(text[i + k]);
            if ((bk & 0xC0U) != 0x80U) {
                valid = false;
                break;
            }
            acc = (acc << 6) | (bk & 0x3FU);
        }
        // reject overlong encodings, surrogates and out-of-range values so
        // distinct byte strings never collapse to the same code points
        static constexpr char32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (valid && (acc < min_for_len[len] || acc > 0x10FFFF ||
                      (acc >= 0xD800 && acc <= 0xDFFF)))
            valid = false;
        if (!valid) {
            out.push_back(b0);
            ++i;
            continue;
        }
        out.push_back(acc);
        i += len;
    }
    return out;
}

inline std::size_t codepoint_length(std::string_view text) {
    return utf8_codepoints(text).size();
}

} // namespace sg
