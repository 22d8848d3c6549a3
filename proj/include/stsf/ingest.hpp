#pragma once
// Mailing-list (mbox) and commit-record ingestion with bot/broadcast and
// non-source-file filtering.

#include <algorithm>
#include <cctype>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/core/mime.hpp"
#include "stsf/core/time.hpp"

namespace stsf {

struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawMessage {
    std::string message_id;
    std::optional<std::string> in_reply_to;
    std::vector<std::string> references;
    std::string sender_name;
    std::string sender_email;
    Timestamp timestamp{};
    std::string subject;
    std::string body;

    bool operator==(const RawMessage&) const = default;
};

struct CommitRecord {
    std::string author_name;
    std::string author_email;
    Timestamp timestamp{};
    std::vector<std::string> files;  // repository-relative paths

    bool operator==(const CommitRecord&) const = default;
};

struct IngestReport {
    std::size_t messages_parsed = 0;
    std::size_t messages_dropped_broadcast = 0;
    std::size_t messages_dropped_malformed = 0;  // bad date, missing Message-ID or sender
    std::size_t messages_dropped_duplicate = 0;  // repeated Message-ID, first occurrence kept
    std::size_t commits_parsed = 0;
    std::size_t commits_dropped_nonsource = 0;
    std::size_t commits_dropped_malformed = 0;   // notification without a file list, bad CSV row

    std::size_t messages_kept() const { return messages_parsed - messages_dropped_broadcast; }
    std::size_t commits_kept() const { return commits_parsed - commits_dropped_nonsource; }

    IngestReport& operator+=(const IngestReport& o) {
        messages_parsed += o.messages_parsed;
        messages_dropped_broadcast += o.messages_dropped_broadcast;
        messages_dropped_malformed += o.messages_dropped_malformed;
        messages_dropped_duplicate += o.messages_dropped_duplicate;
        commits_parsed += o.commits_parsed;
        commits_dropped_nonsource += o.commits_dropped_nonsource;
        commits_dropped_malformed += o.commits_dropped_malformed;
        return *this;
    }
};

inline void to_json(nlohmann::json& j, const IngestReport& r) {
    j = nlohmann::json{{"messages_parsed", r.messages_parsed},
                       {"messages_dropped_broadcast", r.messages_dropped_broadcast},
                       {"messages_dropped_malformed", r.messages_dropped_malformed},
                       {"messages_dropped_duplicate", r.messages_dropped_duplicate},
                       {"commits_parsed", r.commits_parsed},
                       {"commits_dropped_nonsource", r.commits_dropped_nonsource},
                       {"commits_dropped_malformed", r.commits_dropped_malformed}};
}

inline void from_json(const nlohmann::json& j, IngestReport& r) {
    r.messages_parsed = j.at("messages_parsed").get<std::size_t>();
    r.messages_dropped_broadcast = j.at("messages_dropped_broadcast").get<std::size_t>();
    r.messages_dropped_malformed = j.at("messages_dropped_malformed").get<std::size_t>();
    r.messages_dropped_duplicate = j.value("messages_dropped_duplicate", std::size_t{0});
    r.commits_parsed = j.at("commits_parsed").get<std::size_t>();
    r.commits_dropped_nonsource = j.at("commits_dropped_nonsource").get<std::size_t>();
    r.commits_dropped_malformed = j.value("commits_dropped_malformed", std::size_t{0});
}

namespace detail {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

/// All "<...>" tokens in a header value, brackets stripped.
inline std::vector<std::string> angle_tokens(std::string_view v) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = v.find('<', pos)) != std::string_view::npos) {
        auto end = v.find('>', pos + 1);
        if (end == std::string_view::npos) break;
        auto tok = trim(v.substr(pos + 1, end - pos - 1));
        if (!tok.empty()) out.emplace_back(tok);
        pos = end + 1;
    }
    return out;
}

inline std::string first_message_id(std::string_view v) {
    auto toks = angle_tokens(v);
    if (!toks.empty()) return toks.front();
    auto t = trim(v);
    auto sp = t.find_first_of(" \t");
    return std::string(t.substr(0, sp));
}

inline std::string unquote(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) ++i;
            out.push_back(s[i]);
        }
        return out;
    }
    return std::string(s);
}

}  // namespace detail

struct Address {
    std::string name;
    std::string email;
};

/// Parses a From header value: `Name <a@b>`, `"Last, First" <a@b>`, `a@b (Name)` or bare `a@b`.
/// Encoded words in the display name are decoded; obfuscated "a at b.org" forms are normalized.
inline Address parse_address(std::string_view value) {
    using detail::trim;
    Address out;
    std::string_view v = trim(value);
    if (auto lt = v.rfind('<'); lt != std::string_view::npos && v.find('>', lt) != std::string_view::npos) {
        auto gt = v.find('>', lt);
        out.email = std::string(trim(v.substr(lt + 1, gt - lt - 1)));
        out.name = mime::decode_header(detail::unquote(v.substr(0, lt)));
    } else if (auto lp = v.find('('); lp != std::string_view::npos && v.rfind(')') > lp) {
        auto rp = v.rfind(')');
        out.email = std::string(trim(v.substr(0, lp)));
        out.name = mime::decode_header(detail::unquote(v.substr(lp + 1, rp - lp - 1)));
    } else {
        out.email = std::string(v);
    }
    if (out.email.find('@') == std::string::npos) {
        if (auto at = out.email.find(" at "); at != std::string::npos) {
            out.email = out.email.substr(0, at) + "@" + out.email.substr(at + 4);
            for (std::size_t d; (d = out.email.find(" dot ")) != std::string::npos;)
                out.email = out.email.substr(0, d) + "." + out.email.substr(d + 5);
        }
    }
    out.name = std::string(trim(out.name));
    return out;
}

struct MboxParseResult {
    std::vector<RawMessage> messages;
    std::size_t malformed = 0;
    std::size_t duplicates = 0;
};

namespace detail {

struct HeaderBlock {
    std::vector<std::pair<std::string, std::string>> fields;  // lowercased name, unfolded value

    std::optional<std::string_view> get(std::string_view name) const {
        for (const auto& [k, v] : fields)
            if (k == name) return std::string_view(v);
        return std::nullopt;
    }
};

inline bool is_mboxrd_escaped_from(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size() && line[i] == '>') ++i;
    return i > 0 && line.substr(i).substr(0, 5) == "From ";
}

inline std::optional<RawMessage> parse_one_message(const std::vector<std::string_view>& lines) {
    HeaderBlock headers;
    std::size_t i = 0;
    for (; i < lines.size(); ++i) {
        std::string_view line = lines[i];
        if (line.empty()) {
            ++i;
            break;
        }
        if ((line[0] == ' ' || line[0] == '\t') && !headers.fields.empty()) {
            headers.fields.back().second += line;  // unfold: drop the line break, keep the whitespace
            continue;
        }
        auto colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0) continue;  // stray non-header line
        headers.fields.emplace_back(to_lower(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    }

    std::vector<std::string_view> body_lines(lines.begin() + static_cast<std::ptrdiff_t>(std::min(i, lines.size())), lines.end());
    if (!body_lines.empty() && body_lines.back().empty()) body_lines.pop_back();  // separator blank line

    RawMessage msg;
    auto mid = headers.get("message-id");
    if (!mid) return std::nullopt;
    msg.message_id = first_message_id(*mid);
    if (msg.message_id.empty()) return std::nullopt;

    auto date = headers.get("date");
    if (!date) return std::nullopt;
    auto ts = parse_rfc5322_date(*date);
    if (!ts) return std::nullopt;
    msg.timestamp = *ts;

    auto from = headers.get("from");
    if (!from) return std::nullopt;
    Address addr = parse_address(*from);
    if (addr.email.empty() && addr.name.empty()) return std::nullopt;
    msg.sender_name = std::move(addr.name);
    msg.sender_email = std::move(addr.email);

    if (auto subj = headers.get("subject")) msg.subject = mime::decode_header(trim(*subj));
    if (auto refs = headers.get("references")) msg.references = angle_tokens(*refs);
    if (auto irt = headers.get("in-reply-to")) {
        std::string id = first_message_id(*irt);
        if (!id.empty()) msg.in_reply_to = std::move(id);
    }
    if (!msg.in_reply_to && !msg.references.empty()) msg.in_reply_to = msg.references.back();

    std::string body;
    for (auto line : body_lines) {
        if (is_mboxrd_escaped_from(line)) line.remove_prefix(1);
        body.append(line);
        body.push_back('\n');
    }
    std::string cte = to_lower(trim(headers.get("content-transfer-encoding").value_or("")));
    std::string ctype = to_lower(headers.get("content-type").value_or(""));
    bool multipart = ctype.find("multipart/") != std::string::npos;
    if (!multipart && cte == "quoted-printable") {
        body = mime::quoted_printable_decode(body);
    } else if (!multipart && cte == "base64") {
        if (auto decoded = mime::base64_decode(body)) body = std::move(*decoded);
    }
    msg.body = std::move(body);
    return msg;
}

}  // namespace detail

/// Splits an mbox (RFC 4155, mboxrd escaping) into messages. A line starting with "From "
/// separates messages when it begins the stream or follows a blank line. Malformed messages
/// and repeated Message-IDs are counted and dropped; the first occurrence of an id wins.
inline MboxParseResult parse_mbox(std::string_view text) {
    MboxParseResult result;
    std::vector<std::string_view> lines;
    {
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto nl = text.find('\n', pos);
            std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            lines.push_back(line);
            if (nl == std::string_view::npos) break;
            pos = nl + 1;
        }
    }

    std::unordered_set<std::string> seen;
    std::vector<std::string_view> current;
    bool in_message = false;
    auto flush = [&] {
        if (!in_message) return;
        auto msg = detail::parse_one_message(current);
        if (!msg) {
            ++result.malformed;
        } else if (!seen.insert(msg->message_id).second) {
            ++result.duplicates;
        } else {
            result.messages.push_back(std::move(*msg));
        }
        current.clear();
    };

    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = lines[i];
        bool separator = line.substr(0, 5) == "From " && (i == 0 || lines[i - 1].empty());
        if (separator) {
            flush();
            in_message = true;
            continue;
        }
        if (in_message) current.push_back(line);
    }
    flush();
    return result;
}

inline MboxParseResult parse_mbox(std::istream& in) {
    if (!in) throw IngestError("mbox stream is not readable");
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw IngestError("error while reading mbox stream");
    return parse_mbox(std::string_view(text));
}

namespace detail {
inline bool is_ascii_printable(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return u >= 0x20 && u < 0x7F;
    });
}

inline std::string encode_header_text(std::string_view s) {
    if (is_ascii_printable(s) && s.find("=?") == std::string_view::npos) return std::string(s);
    return "=?UTF-8?B?" + mime::base64_encode(s) + "?=";
}

inline std::string encode_display_name(std::string_view s) {
    if (!is_ascii_printable(s) || s.find("=?") != std::string_view::npos) return encode_header_text(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}
}  // namespace detail

/// Writes messages as an mboxrd stream that parse_mbox reads back unchanged.
inline std::string serialize_mbox(std::span<const RawMessage> messages) {
    std::string out;
    for (const auto& m : messages) {
        out += "From ";
        out += m.sender_email.empty() ? std::string("MAILER-DAEMON") : m.sender_email;
        out += ' ';
        out += format_asctime(m.timestamp);
        out += '\n';
        out += "Message-ID: <" + m.message_id + ">\n";
        if (m.in_reply_to) out += "In-Reply-To: <" + *m.in_reply_to + ">\n";
        if (!m.references.empty()) {
            out += "References:";
            for (const auto& r : m.references) out += " <" + r + ">";
            out += '\n';
        }
        out += "From: ";
        if (!m.sender_name.empty()) out += detail::encode_display_name(m.sender_name) + " ";
        out += "<" + m.sender_email + ">\n";
        out += "Date: " + format_rfc5322(m.timestamp) + "\n";
        out += "Subject: " + detail::encode_header_text(m.subject) + "\n";
        out += "\n";
        std::string_view body = m.body;
        std::size_t pos = 0;
        while (pos < body.size()) {
            auto nl = body.find('\n', pos);
            std::string_view line = body.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            if (detail::is_mboxrd_escaped_from(line) || line.substr(0, 5) == "From ") out += '>';
            out += line;
            out += '\n';
            if (nl == std::string_view::npos) break;
            pos = nl + 1;
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bot / broadcast classification

struct BotPatterns {
    std::vector<std::string> subject_prefixes = {"svn commit:", "[jira]", "git commit:"};
    std::vector<std::string> sender_local_parts = {"jira", "buildbot", "hudson", "jenkins", "noreply"};
    std::vector<std::string> commit_subject_prefixes = {"svn commit:", "git commit:"};
};

using ReplyIndex = std::unordered_map<std::string, std::size_t>;

/// Reply counts keyed by parent message id, over one project's full archive.
inline ReplyIndex build_reply_index(std::span<const RawMessage> messages) {
    ReplyIndex index;
    for (const auto& m : messages)
        if (m.in_reply_to) ++index[*m.in_reply_to];
    return index;
}

namespace detail {
/// Drops leading "[n/m]" series counters from a subject.
inline std::string_view strip_series_counter(std::string_view s) {
    s = trim(s);
    while (s.size() > 2 && s[0] == '[') {
        auto close = s.find(']');
        if (close == std::string_view::npos) break;
        auto inner = s.substr(1, close - 1);
        bool counter = !inner.empty() && std::all_of(inner.begin(), inner.end(), [](char c) {
            return std::isdigit(static_cast<unsigned char>(c)) || c == '/';
        });
        if (!counter) break;
        s = trim(s.substr(close + 1));
    }
    return s;
}

inline bool subject_has_prefix(std::string_view subject, const std::vector<std::string>& prefixes) {
    std::string_view s = strip_series_counter(subject);
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return starts_with_ci(s, p); });
}
}  // namespace detail

inline bool is_automated_sender(const RawMessage& msg, const BotPatterns& patterns = {}) {
    if (detail::subject_has_prefix(msg.subject, patterns.subject_prefixes)) return true;
    std::string email = detail::to_lower(msg.sender_email);
    std::string local = email.substr(0, email.find('@'));
    return std::find(patterns.sender_local_parts.begin(), patterns.sender_local_parts.end(), local) !=
           patterns.sender_local_parts.end();
}

/// True for automated broadcast messages that nobody replied to.
inline bool classify_bot_message(const RawMessage& msg, const ReplyIndex& reply_index, const BotPatterns& patterns = {}) {
    auto it = reply_index.find(msg.message_id);
    if (it != reply_index.end() && it->second > 0) return false;
    return is_automated_sender(msg, patterns);
}

// ---------------------------------------------------------------------------
// Source-file filter

/// Final dot-suffix blacklist, case-insensitive. The default list covers data, text/config and image files.
struct ExtensionFilter {
    std::set<std::string> blacklist = {".json", ".xml", ".yml", ".yaml", ".jar", ".config", ".info",
                                       ".ini",  ".txt", ".md",  ".jpg",  ".gif", ".pdf",    ".png"};

    static std::string extension(std::string_view path) {
        auto slash = path.find_last_of('/');
        std::string_view base = slash == std::string_view::npos ? path : path.substr(slash + 1);
        auto dot = base.find_last_of('.');
        if (dot == std::string_view::npos || dot == 0) return {};
        return detail::to_lower(base.substr(dot));
    }

    bool is_blacklisted(std::string_view path) const {
        auto ext = extension(path);
        return !ext.empty() && blacklist.count(ext) > 0;
    }

    /// Removes blacklisted paths in place; returns the number removed.
    std::size_t apply(std::vector<std::string>& files) const {
        auto before = files.size();
        std::erase_if(files, [&](const std::string& f) { return is_blacklisted(f); });
        return before - files.size();
    }
};

struct CommitExtraction {
    std::vector<CommitRecord> commits;
    std::size_t parsed = 0;             // records recognised, before the extension filter
    std::size_t dropped_nonsource = 0;  // records left without files after filtering
    std::size_t dropped_malformed = 0;
};

inline bool is_commit_notification(const RawMessage& msg, const BotPatterns& patterns = {}) {
    return detail::subject_has_prefix(msg.subject, patterns.commit_subject_prefixes);
}

/// Changed paths listed in a commit-notification body. Understands svn mailer sections
/// ("Added:", "Modified:", "Removed:", ... followed by indented paths) and git diffstat lines
/// (" path | 12 +++--"). Directories (trailing '/') are ignored.
inline std::vector<std::string> commit_paths_from_body(std::string_view body) {
    using detail::trim;
    static constexpr std::string_view sections[] = {"Added:", "Modified:", "Removed:", "Deleted:", "Replaced:", "Copied:"};
    std::vector<std::string> paths;
    std::set<std::string> seen;
    auto add = [&](std::string_view p) {
        p = trim(p);
        if (auto paren = p.find(" ("); paren != std::string_view::npos) p = trim(p.substr(0, paren));
        if (p.empty() || p.back() == '/') return;
        if (seen.insert(std::string(p)).second) paths.emplace_back(p);
    };

    bool in_section = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto nl = body.find('\n', pos);
        std::string_view line = body.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? body.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        // Diff bodies start here; everything after is patch text.
        if (line.substr(0, 11) == "diff --git " || line.substr(0, 7) == "Index: " || line.substr(0, 13) == "Propchange: ")
            break;

        bool header = false;
        for (auto s : sections) {
            if (line.substr(0, s.size()) == s) {
                header = true;
                in_section = true;
                auto rest = trim(line.substr(s.size()));
                if (!rest.empty()) add(rest);
                break;
            }
        }
        if (header) continue;
        if (in_section) {
            if (!line.empty() && (line[0] == ' ' || line[0] == '\t')) {
                add(line);
                continue;
            }
            in_section = false;
        }
        // git diffstat: " path/to/file | 10 ++--" or " path | Bin 0 -> 12 bytes"
        if (auto bar = line.find(" | "); bar != std::string_view::npos && !line.empty() && line[0] == ' ') {
            auto stat = trim(line.substr(bar + 3));
            if (!stat.empty() && (std::isdigit(static_cast<unsigned char>(stat[0])) || stat.substr(0, 3) == "Bin")) {
                auto p = trim(line.substr(0, bar));
                if (auto arrow = p.find(" => "); arrow != std::string_view::npos) {
                    // "{old => new}" renames: keep the new side
                    auto open = p.find('{');
                    auto close = p.find('}');
                    if (open != std::string_view::npos && close != std::string_view::npos && open < arrow && close > arrow) {
                        std::string renamed = std::string(p.substr(0, open)) +
                                              std::string(trim(p.substr(arrow + 4, close - arrow - 4))) +
                                              std::string(p.substr(close + 1));
                        std::string cleaned;
                        for (std::size_t k = 0; k < renamed.size(); ++k)
                            if (!(renamed[k] == '/' && !cleaned.empty() && cleaned.back() == '/')) cleaned.push_back(renamed[k]);
                        add(cleaned);
                    } else {
                        add(trim(p.substr(arrow + 4)));
                    }
                } else {
                    add(p);
                }
            }
        }
    }
    return paths;
}

/// Turns commit-notification messages into CommitRecords (author = sender, time = message date).
inline CommitExtraction extract_commits(std::span<const RawMessage> messages, const ExtensionFilter& filter = {},
                                        const BotPatterns& patterns = {}) {
    CommitExtraction out;
    for (const auto& m : messages) {
        if (!is_commit_notification(m, patterns)) continue;
        auto files = commit_paths_from_body(m.body);
        if (files.empty()) {
            ++out.dropped_malformed;
            continue;
        }
        ++out.parsed;
        filter.apply(files);
        if (files.empty()) {
            ++out.dropped_nonsource;
            continue;
        }
        out.commits.push_back(CommitRecord{m.sender_name, m.sender_email, m.timestamp, std::move(files)});
    }
    return out;
}

/// Reads `timestamp,author_name,author_email,file_path` rows (one per touched file) and groups
/// them by (timestamp, author) in order of first appearance.
inline CommitExtraction load_commit_table(std::istream& in, const ExtensionFilter& filter = {}) {
    if (!in) throw IngestError("commit table stream is not readable");
    CsvReader reader(in);
    if (reader.header().empty()) return {};
    std::size_t c_ts, c_name, c_email, c_path;
    try {
        c_ts = reader.require_column("timestamp");
        c_name = reader.require_column("author_name");
        c_email = reader.require_column("author_email");
        c_path = reader.require_column("file_path");
    } catch (const CsvError& e) {
        throw IngestError(std::string("commit table: ") + e.what());
    }

    CommitExtraction out;
    std::vector<CommitRecord> groups;
    std::map<std::tuple<Timestamp, std::string, std::string>, std::size_t> index;
    std::vector<std::string> row;
    while (reader.next(row)) {
        auto ts = parse_rfc3339(row[c_ts]);
        if (!ts || row[c_path].empty()) {
            ++out.dropped_malformed;
            continue;
        }
        auto key = std::make_tuple(*ts, row[c_name], row[c_email]);
        auto [it, inserted] = index.emplace(key, groups.size());
        if (inserted) groups.push_back(CommitRecord{row[c_name], row[c_email], *ts, {}});
        auto& files = groups[it->second].files;
        if (std::find(files.begin(), files.end(), row[c_path]) == files.end()) files.push_back(row[c_path]);
    }
    out.parsed = groups.size();
    for (auto& g : groups) {
        filter.apply(g.files);
        if (g.files.empty()) {
            ++out.dropped_nonsource;
            continue;
        }
        out.commits.push_back(std::move(g));
    }
    return out;
}

inline void write_commit_table(std::ostream& out, std::span<const CommitRecord> commits) {
    out << "timestamp,author_name,author_email,file_path\n";
    for (const auto& c : commits)
        for (const auto& f : c.files) write_csv_row(out, {format_rfc3339(c.timestamp), c.author_name, c.author_email, f});
}

// ---------------------------------------------------------------------------
// Per-project ingestion

struct ProjectActivity {
    std::vector<RawMessage> messages;  // kept emails (broadcasts removed)
    std::vector<CommitRecord> commits;
    IngestReport report;
};

/// Parses every archive of one project, de-duplicates across archives, removes unanswered
/// broadcasts, extracts commit notifications and merges any commit tables.
inline ProjectActivity ingest_project(std::span<const std::string> mbox_texts, std::span<const std::string> commit_tables,
                                      const ExtensionFilter& filter = {}, const BotPatterns& patterns = {}) {
    ProjectActivity out;
    std::vector<RawMessage> all;
    std::unordered_set<std::string> seen;
    for (const auto& text : mbox_texts) {
        auto parsed = parse_mbox(text);
        out.report.messages_dropped_malformed += parsed.malformed;
        out.report.messages_dropped_duplicate += parsed.duplicates;
        for (auto& m : parsed.messages) {
            if (!seen.insert(m.message_id).second) {
                ++out.report.messages_dropped_duplicate;
                continue;
            }
            all.push_back(std::move(m));
        }
    }
    out.report.messages_parsed = all.size();

    auto commits = extract_commits(all, filter, patterns);
    out.report.commits_parsed += commits.parsed;
    out.report.commits_dropped_nonsource += commits.dropped_nonsource;
    out.report.commits_dropped_malformed += commits.dropped_malformed;
    out.commits = std::move(commits.commits);

    auto replies = build_reply_index(all);
    for (auto& m : all) {
        if (classify_bot_message(m, replies, patterns)) {
            ++out.report.messages_dropped_broadcast;
            continue;
        }
        out.messages.push_back(std::move(m));
    }

    for (const auto& table : commit_tables) {
        std::istringstream in(table);
        auto loaded = load_commit_table(in, filter);
        out.report.commits_parsed += loaded.parsed;
        out.report.commits_dropped_nonsource += loaded.dropped_nonsource;
        out.report.commits_dropped_malformed += loaded.dropped_malformed;
        for (auto& c : loaded.commits) out.commits.push_back(std::move(c));
    }
    return out;
}

}  // namespace stsf
