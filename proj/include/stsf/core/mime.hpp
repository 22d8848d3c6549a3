#pragma once
// Header decoding helpers: base64, quoted-printable, RFC 2047 encoded words.

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace stsf::mime {

inline std::optional<std::string> base64_decode(std::string_view in) {
    static constexpr auto table = [] {
        std::array<std::int8_t, 256> t{};
        t.fill(-1);
        constexpr std::string_view alphabet =
            "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (std::size_t i = 0; i < alphabet.size(); ++i) t[static_cast<unsigned char>(alphabet[i])] = static_cast<std::int8_t>(i);
        return t;
    }();
    std::string out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : in) {
        if (c == '=') break;
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        int v = table[static_cast<unsigned char>(c)];
        if (v < 0) return std::nullopt;
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

inline std::string base64_encode(std::string_view in) {
    constexpr std::string_view alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                          static_cast<unsigned char>(in[i + 2]);
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += alphabet[n & 63];
    }
    if (i + 1 == in.size()) {
        std::uint32_t n = static_cast<unsigned char>(in[i]) << 16;
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8);
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

namespace detail {
inline int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
}

inline void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string latin1_to_utf8(std::string_view in) {
    std::string out;
    for (unsigned char c : in) append_utf8(out, c);
    return out;
}

// Code points of bytes 0x80-0x9F in windows-1252 (undefined bytes map to themselves).
inline constexpr unsigned k_cp1252_high[32] = {
    0x20AC, 0x0081, 0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021, 0x02C6, 0x2030, 0x0160, 0x2039, 0x0152, 0x008D, 0x017D, 0x008F, 0x0090, 0x2018, 0x2019, 0x201C, 0x201D, 0x2022, 0x2013, 0x2014, 0x02DC, 0x2122, 0x0161, 0x203A, 0x0153, 0x009D, 0x017E, 0x0178};

inline std::string cp1252_to_utf8(std::string_view in) {
    std::string out;
    for (unsigned char c : in) append_utf8(out, c >= 0x80 && c < 0xA0 ? k_cp1252_high[c - 0x80] : c);
    return out;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string to_utf8(std::string_view bytes, std::string_view charset) {
    std::string cs = lower(charset);
    if (auto star = cs.find('*'); star != std::string::npos) cs.resize(star);  // RFC 2231 language tag
    if (cs == "iso-8859-1" || cs == "latin1" || cs == "iso-8859-15") return latin1_to_utf8(bytes);
    if (cs == "windows-1252" || cs == "cp1252") return cp1252_to_utf8(bytes);
    return std::string(bytes);
}
}  // namespace detail

/// Body quoted-printable decoding (soft line breaks removed).
inline std::string quoted_printable_decode(std::string_view in) {
    std::string out;
    for (std::size_t i = 0; i < in.size(); ++i) {
        char c = in[i];
        if (c != '=') {
            out.push_back(c);
            continue;
        }
        if (i + 1 < in.size() && in[i + 1] == '\n') {
            i += 1;
        } else if (i + 2 < in.size() && in[i + 1] == '\r' && in[i + 2] == '\n') {
            i += 2;
        } else if (i + 2 < in.size() && detail::hex_value(in[i + 1]) >= 0 && detail::hex_value(in[i + 2]) >= 0) {
            out.push_back(static_cast<char>(detail::hex_value(in[i + 1]) * 16 + detail::hex_value(in[i + 2])));
            i += 2;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

/// Decodes one encoded-word payload. Returns nullopt when the word is not well formed.
inline std::optional<std::string> decode_encoded_word(std::string_view word) {
    // word is "=?charset?X?text?="
    if (word.size() < 8 || word.substr(0, 2) != "=?" || word.substr(word.size() - 2) != "?=") return std::nullopt;
    std::string_view inner = word.substr(2, word.size() - 4);
    auto q1 = inner.find('?');
    if (q1 == std::string_view::npos) return std::nullopt;
    auto q2 = inner.find('?', q1 + 1);
    if (q2 == std::string_view::npos || q2 != q1 + 2) return std::nullopt;
    std::string_view charset = inner.substr(0, q1);
    char enc = static_cast<char>(std::toupper(static_cast<unsigned char>(inner[q1 + 1])));
    std::string_view text = inner.substr(q2 + 1);
    std::string bytes;
    if (enc == 'B') {
        auto decoded = base64_decode(text);
        if (!decoded) return std::nullopt;
        bytes = std::move(*decoded);
    } else if (enc == 'Q') {
        for (std::size_t i = 0; i < text.size(); ++i) {
            char c = text[i];
            if (c == '_') {
                bytes.push_back(' ');
            } else if (c == '=' && i + 2 < text.size() && detail::hex_value(text[i + 1]) >= 0 &&
                       detail::hex_value(text[i + 2]) >= 0) {
                bytes.push_back(static_cast<char>(detail::hex_value(text[i + 1]) * 16 + detail::hex_value(text[i + 2])));
                i += 2;
            } else {
                bytes.push_back(c);
            }
        }
    } else {
        return std::nullopt;
    }
    return detail::to_utf8(bytes, charset);
}

/// Decodes every RFC 2047 encoded word in an unstructured header value.
/// Linear whitespace between two adjacent encoded words is dropped.
inline std::string decode_header(std::string_view value) {
    std::string out;
    std::size_t i = 0;
    bool prev_encoded = false;
    std::string pending_ws;
    while (i < value.size()) {
        if (value.compare(i, 2, "=?") == 0) {
            // An encoded word has exactly three '?' after the leading "=?" before "?=".
            std::size_t q1 = value.find('?', i + 2);
            std::size_t q2 = q1 == std::string_view::npos ? q1 : value.find('?', q1 + 1);
            std::size_t end = q2 == std::string_view::npos ? q2 : value.find("?=", q2 + 1);
            if (end != std::string_view::npos) {
                std::string_view word = value.substr(i, end + 2 - i);
                if (auto decoded = decode_encoded_word(word)) {
                    if (!prev_encoded) out += pending_ws;
                    pending_ws.clear();
                    out += *decoded;
                    prev_encoded = true;
                    i = end + 2;
                    continue;
                }
            }
        }
        char c = value[i];
        if (c == ' ' || c == '\t') {
            pending_ws.push_back(c);
            ++i;
            continue;
        }
        out += pending_ws;
        pending_ws.clear();
        out.push_back(c);
        prev_encoded = false;
        ++i;
    }
    out += pending_ws;
    return out;
}

}  // namespace stsf::mime
