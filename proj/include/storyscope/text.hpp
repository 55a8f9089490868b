#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace storyscope {

// Word segmentation shared by corpus length statistics and the n-gram audit.
// Rule: decode UTF-8, lowercase, and split on every non-alphanumeric code
// point. ASCII digits/letters and non-ASCII letters are token characters;
// whitespace, ASCII punctuation, Latin-1 punctuation, the General Punctuation
// block (em/en dashes, curly quotes), and CJK punctuation separate tokens.
// Hyphens and dashes therefore split words. Invalid UTF-8 bytes act as
// separators.

namespace detail {

struct Utf8Decoder {
    std::string_view s;
    std::size_t i = 0;

    bool next(char32_t& cp) {
        if (i >= s.size()) return false;
        unsigned char b0 = static_cast<unsigned char>(s[i]);
        if (b0 < 0x80) {
            cp = b0;
            ++i;
            return true;
        }
        int len = 0;
        char32_t v = 0;
        if ((b0 & 0xE0) == 0xC0) { len = 2; v = b0 & 0x1F; }
        else if ((b0 & 0xF0) == 0xE0) { len = 3; v = b0 & 0x0F; }
        else if ((b0 & 0xF8) == 0xF0) { len = 4; v = b0 & 0x07; }
        else { cp = 0xFFFD; ++i; return true; }
        if (i + static_cast<std::size_t>(len) > s.size()) { cp = 0xFFFD; ++i; return true; }
        for (int k = 1; k < len; ++k) {
            unsigned char b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
            if ((b & 0xC0) != 0x80) { cp = 0xFFFD; ++i; return true; }
            v = (v << 6) | (b & 0x3F);
        }
        i += static_cast<std::size_t>(len);
        cp = v;
        return true;
    }
};

inline bool is_token_char(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    }
    if (cp < 0xC0) return false;                    // Latin-1 punctuation + C1 controls
    if (cp == 0xD7 || cp == 0xF7) return false;     // multiplication / division signs
    if (cp >= 0x2000 && cp <= 0x2BFF) return false; // general punctuation, symbols, arrows
    if (cp >= 0x3000 && cp <= 0x303F) return false; // CJK punctuation
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false; // CJK compatibility forms
    if (cp >= 0xFF01 && cp <= 0xFF0F) return false; // fullwidth punctuation
    if (cp >= 0xFF1A && cp <= 0xFF20) return false;
    if (cp >= 0xFF3B && cp <= 0xFF40) return false;
    if (cp >= 0xFF5B && cp <= 0xFF65) return false;
    if (cp == 0xFFFD) return false;
    return true;
}

inline char32_t to_lower(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20; // Latin-1 uppercase
    return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

} // namespace detail

/// Lowercased word tokens of `text` under the segmentation rule above.
inline std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    detail::Utf8Decoder dec{text};
    char32_t cp = 0;
    while (dec.next(cp)) {
        if (detail::is_token_char(cp)) {
            detail::append_utf8(cur, detail::to_lower(cp));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

/// Number of word tokens in `text`.
inline std::size_t count_words(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    detail::Utf8Decoder dec{text};
    char32_t cp = 0;
    while (dec.next(cp)) {
        bool tok = detail::is_token_char(cp);
        if (tok && !in_token) ++n;
        in_token = tok;
    }
    return n;
}

} // namespace storyscope
