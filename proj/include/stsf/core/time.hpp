#pragma once
// UTC timestamps, RFC 5322 / RFC 3339 parsing, calendar-month arithmetic.

#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace stsf {

using Timestamp = std::chrono::sys_seconds;

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
    Int v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<Timestamp> make_utc(int y, unsigned mo, unsigned d, int h, int mi, int sec) {
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 60) return std::nullopt;
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
}

inline constexpr std::array<std::string_view, 12> k_month_names = {
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"};
inline constexpr std::array<std::string_view, 7> k_weekday_names = {
    "Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"};

// Parse "+hhmm" / "-hhmm" or an RFC 822 zone name into an offset in minutes.
inline std::optional<int> parse_zone(std::string_view z) {
    if (z.empty()) return 0;
    if ((z[0] == '+' || z[0] == '-') && z.size() >= 5) {
        auto hh = parse_int<int>(z.substr(1, 2));
        auto mm = parse_int<int>(z.substr(3, 2));
        if (!hh || !mm) return std::nullopt;
        int off = *hh * 60 + *mm;
        return z[0] == '-' ? -off : off;
    }
    struct Named { std::string_view name; int minutes; };
    static constexpr Named named[] = {
        {"UT", 0}, {"UTC", 0}, {"GMT", 0}, {"Z", 0},
        {"EST", -300}, {"EDT", -240}, {"CST", -360}, {"CDT", -300},
        {"MST", -420}, {"MDT", -360}, {"PST", -480}, {"PDT", -420},
        {"CET", 60}, {"CEST", 120}, {"BST", 60}, {"IST", 330}, {"JST", 540}};
    for (const auto& n : named)
        if (iequals(z, n.name)) return n.minutes;
    return 0;  // unknown military zones are treated as UTC (RFC 5322 4.3)
}

inline int month_from_name(std::string_view m) {
    for (std::size_t i = 0; i < k_month_names.size(); ++i)
        if (m.size() >= 3 && iequals(m.substr(0, 3), k_month_names[i])) return static_cast<int>(i) + 1;
    return 0;
}

}  // namespace detail

/// Parses an RFC 5322 date such as "Mon, 5 Jan 2009 12:00:00 +0100 (CET)".
/// Day-of-week, seconds and the zone are optional; two-digit years follow RFC 5322 4.3.
inline std::optional<Timestamp> parse_rfc5322_date(std::string_view text) {
    std::string_view s = detail::trim(text);
    if (auto comment = s.find('('); comment != std::string_view::npos) s = detail::trim(s.substr(0, comment));
    if (auto comma = s.find(','); comma != std::string_view::npos && comma <= 9) s = detail::trim(s.substr(comma + 1));

    std::array<std::string_view, 6> tok{};
    std::size_t n = 0;
    while (!s.empty() && n < tok.size()) {
        auto end = s.find_first_of(" \t");
        tok[n++] = s.substr(0, end);
        if (end == std::string_view::npos) break;
        s = detail::trim(s.substr(end));
    }
    if (n < 4) return std::nullopt;

    auto day = detail::parse_int<unsigned>(tok[0]);
    int mon = detail::month_from_name(tok[1]);
    auto yr = detail::parse_int<int>(tok[2]);
    if (!day || mon == 0 || !yr) return std::nullopt;
    int year = *yr;
    if (tok[2].size() <= 2) year += (year < 50) ? 2000 : 1900;
    else if (tok[2].size() == 3) year += 1900;

    std::string_view hms = tok[3];
    int h = 0, mi = 0, sec = 0;
    {
        auto c1 = hms.find(':');
        if (c1 == std::string_view::npos) return std::nullopt;
        auto c2 = hms.find(':', c1 + 1);
        auto hh = detail::parse_int<int>(hms.substr(0, c1));
        auto mm = detail::parse_int<int>(hms.substr(c1 + 1, c2 == std::string_view::npos ? std::string_view::npos : c2 - c1 - 1));
        if (!hh || !mm) return std::nullopt;
        h = *hh;
        mi = *mm;
        if (c2 != std::string_view::npos) {
            auto ss = detail::parse_int<int>(hms.substr(c2 + 1));
            if (!ss) return std::nullopt;
            sec = *ss;
        }
    }
    auto zone = detail::parse_zone(n > 4 ? tok[4] : std::string_view{});
    if (!zone) return std::nullopt;
    auto local = detail::make_utc(year, static_cast<unsigned>(mon), *day, h, mi, sec);
    if (!local) return std::nullopt;
    return *local - std::chrono::minutes{*zone};
}

/// Parses RFC 3339 ("2009-01-05T12:00:00Z", "2009-01-05 12:00:00+01:00", fractional seconds ignored)
/// and plain dates ("2009-01-05", taken as midnight UTC).
inline std::optional<Timestamp> parse_rfc3339(std::string_view text) {
    std::string_view s = detail::trim(text);
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto y = detail::parse_int<int>(s.substr(0, 4));
    auto mo = detail::parse_int<unsigned>(s.substr(5, 2));
    auto d = detail::parse_int<unsigned>(s.substr(8, 2));
    if (!y || !mo || !d) return std::nullopt;
    if (s.size() == 10) return detail::make_utc(*y, *mo, *d, 0, 0, 0);
    if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return std::nullopt;
    if (s.size() < 19 || s[13] != ':' || s[16] != ':') return std::nullopt;
    auto h = detail::parse_int<int>(s.substr(11, 2));
    auto mi = detail::parse_int<int>(s.substr(14, 2));
    auto sec = detail::parse_int<int>(s.substr(17, 2));
    if (!h || !mi || !sec) return std::nullopt;
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    int offset = 0;
    std::string_view zone = s.substr(pos);
    if (zone.empty() || zone == "Z" || zone == "z") {
        offset = 0;
    } else if ((zone[0] == '+' || zone[0] == '-') && zone.size() == 6 && zone[3] == ':') {
        auto zh = detail::parse_int<int>(zone.substr(1, 2));
        auto zm = detail::parse_int<int>(zone.substr(4, 2));
        if (!zh || !zm) return std::nullopt;
        offset = *zh * 60 + *zm;
        if (zone[0] == '-') offset = -offset;
    } else {
        return std::nullopt;
    }
    auto local = detail::make_utc(*y, *mo, *d, *h, *mi, *sec);
    if (!local) return std::nullopt;
    return *local - std::chrono::minutes{offset};
}

namespace detail {
struct Civil {
    int year;
    unsigned month, day;
    int hour, minute, second;
    unsigned weekday;
};
inline Civil to_civil(Timestamp t) {
    using namespace std::chrono;
    auto days = floor<std::chrono::days>(t);
    year_month_day ymd{days};
    hh_mm_ss hms{t - days};
    return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
            static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
            static_cast<int>(hms.seconds().count()), weekday{days}.c_encoding()};
}
inline void put2(std::string& out, int v) {
    out.push_back(static_cast<char>('0' + (v / 10) % 10));
    out.push_back(static_cast<char>('0' + v % 10));
}
}  // namespace detail

/// "2009-01-05T12:00:00Z"
inline std::string format_rfc3339(Timestamp t) {
    auto c = detail::to_civil(t);
    std::string out = std::to_string(c.year);
    out += '-';
    detail::put2(out, static_cast<int>(c.month));
    out += '-';
    detail::put2(out, static_cast<int>(c.day));
    out += 'T';
    detail::put2(out, c.hour);
    out += ':';
    detail::put2(out, c.minute);
    out += ':';
    detail::put2(out, c.second);
    out += 'Z';
    return out;
}

/// "Mon, 05 Jan 2009 12:00:00 +0000"
inline std::string format_rfc5322(Timestamp t) {
    auto c = detail::to_civil(t);
    std::string out{detail::k_weekday_names[c.weekday]};
    out += ", ";
    detail::put2(out, static_cast<int>(c.day));
    out += ' ';
    std::string_view mon = detail::k_month_names[c.month - 1];
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(mon[0])));
    out += mon.substr(1);
    out += ' ';
    out += std::to_string(c.year);
    out += ' ';
    detail::put2(out, c.hour);
    out += ':';
    detail::put2(out, c.minute);
    out += ':';
    detail::put2(out, c.second);
    out += " +0000";
    return out;
}

/// asctime-style date used on mbox "From " separator lines.
inline std::string format_asctime(Timestamp t) {
    auto c = detail::to_civil(t);
    std::string out{detail::k_weekday_names[c.weekday]};
    out += ' ';
    std::string_view mon = detail::k_month_names[c.month - 1];
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(mon[0])));
    out += mon.substr(1);
    out += ' ';
    if (c.day < 10) out += ' ';
    out += std::to_string(c.day);
    out += ' ';
    detail::put2(out, c.hour);
    out += ':';
    detail::put2(out, c.minute);
    out += ':';
    detail::put2(out, c.second);
    out += ' ';
    out += std::to_string(c.year);
    return out;
}

/// First instant of the UTC calendar month containing t.
inline Timestamp month_floor(Timestamp t) {
    using namespace std::chrono;
    year_month_day ymd{floor<days>(t)};
    return sys_days{ymd.year() / ymd.month() / day{1}};
}

/// First instant of the calendar month `offset` months after the month containing t.
inline Timestamp add_months(Timestamp t, int offset) {
    using namespace std::chrono;
    year_month_day ymd{floor<days>(t)};
    year_month ym = ymd.year() / ymd.month();
    ym += months{offset};
    return sys_days{ym / day{1}};
}

/// Number of calendar-month boundaries between the months of `from` and `to` (negative if to < from).
inline int calendar_month_index(Timestamp from, Timestamp to) {
    using namespace std::chrono;
    year_month_day a{floor<days>(from)};
    year_month_day b{floor<days>(to)};
    return (static_cast<int>(b.year()) - static_cast<int>(a.year())) * 12 +
           (static_cast<int>(static_cast<unsigned>(b.month())) - static_cast<int>(static_cast<unsigned>(a.month())));
}

}  // namespace stsf
