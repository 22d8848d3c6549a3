#pragma once
// Minimal RFC 4180 CSV reading/writing plus round-trip number formatting.

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace stsf {

struct CsvError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, p);
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// Reads one logical record; quoted fields may span lines. Returns false at EOF.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& row) {
    row.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    for (int ci = in.get(); ci != std::char_traits<char>::eof(); ci = in.get()) {
        any = true;
        char c = static_cast<char>(ci);
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            row.push_back(std::move(field));
            return true;
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (!any) return false;
    row.push_back(std::move(field));
    return true;
}

/// Header-addressed CSV reader.
class CsvReader {
public:
    explicit CsvReader(std::istream& in) : in_(in) {
        if (!read_csv_row(in_, header_)) return;
        if (!header_.empty() && header_[0].size() >= 3 && header_[0].compare(0, 3, "\xEF\xBB\xBF") == 0)
            header_[0].erase(0, 3);
    }

    const std::vector<std::string>& header() const { return header_; }

    std::optional<std::size_t> find_column(std::string_view name) const {
        for (std::size_t i = 0; i < header_.size(); ++i)
            if (header_[i] == name) return i;
        return std::nullopt;
    }

    std::size_t require_column(std::string_view name) const {
        auto idx = find_column(name);
        if (!idx) throw CsvError("missing CSV column '" + std::string(name) + "'");
        return *idx;
    }

    /// Skips blank lines. Rows shorter than the header are padded with empty fields.
    bool next(std::vector<std::string>& row) {
        while (read_csv_row(in_, row)) {
            ++line_;
            if (row.size() == 1 && row[0].empty()) continue;
            if (row.size() < header_.size()) row.resize(header_.size());
            return true;
        }
        return false;
    }

    std::size_t line() const { return line_ + 1; }

private:
    std::istream& in_;
    std::vector<std::string> header_;
    std::size_t line_ = 0;
};

inline std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << csv_escape(fields[i]);
    }
    out << '\n';
}

}  // namespace stsf
