#pragma once
// Contributor de-aliasing: name normalization, comma-swapped name variants and
// union-find merging over shared emails and shared name variants.

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "stsf/core/csv.hpp"

namespace stsf {

using ContributorId = int;

struct Contributor {
    ContributorId id = 0;
    std::string canonical_name;
    std::set<std::string> emails;         // lowercased
    std::set<std::string> name_variants;  // normalized variants with at least two tokens
};

/// One observed (name, email) pair and how often it occurred.
struct RawIdentity {
    std::string name;
    std::string email;

    auto operator<=>(const RawIdentity&) const = default;
};

namespace identity_detail {

inline const std::set<std::string, std::less<>>& dropped_words() {
    static const std::set<std::string, std::less<>> words = {"jr", "sr", "dr", "mr", "ms", "admin", "lists", "group"};
    return words;
}

inline std::vector<std::string> tokens(std::string_view raw) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char c : raw) {
        auto u = static_cast<unsigned char>(c);
        if (std::isspace(u) || c == '.' || c == ',' || c == '"' || c == '\'' || c == '(' || c == ')' || c == '<' ||
            c == '>' || c == ';' || c == ':') {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    flush();
    return out;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::size_t token_count(std::string_view normalized) {
    std::size_t n = 0;
    bool in_tok = false;
    for (char c : normalized) {
        if (c == ' ') in_tok = false;
        else if (!in_tok) {
            in_tok = true;
            ++n;
        }
    }
    return n;
}

}  // namespace identity_detail

/// Lowercases, drops titles (jr, sr, dr, mr, ms) and common words (admin, lists, group),
/// strips punctuation and collapses whitespace.
inline std::string normalize_name(std::string_view raw) {
    std::string out;
    for (const auto& t : identity_detail::tokens(raw)) {
        if (identity_detail::dropped_words().count(t)) continue;
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

/// Normalized name, plus the first/last swapped variant when the raw name has exactly one comma.
inline std::set<std::string> comma_swap_candidates(std::string_view raw) {
    std::set<std::string> out;
    if (std::count(raw.begin(), raw.end(), ',') == 1) {
        auto comma = raw.find(',');
        std::string_view before = raw.substr(0, comma);
        std::string_view after = raw.substr(comma + 1);
        out.insert(normalize_name(std::string(before) + " " + std::string(after)));
        out.insert(normalize_name(std::string(after) + " " + std::string(before)));
    } else {
        out.insert(normalize_name(raw));
    }
    return out;
}

/// Disjoint-set forest with path halving and union by size.
class UnionFind {
public:
    explicit UnionFind(std::size_t n = 0) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (size_[a] < size_[b]) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

    std::size_t size() const { return parent_.size(); }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> size_;
};

struct IdentityConfig {
    std::size_t min_name_tokens = 2;     // shorter normalized names never merge by name
    std::size_t flag_email_threshold = 5;  // classes with more emails are flagged for review
};

struct IdentityResolution {
    std::vector<Contributor> contributors;  // index == id
    std::map<RawIdentity, ContributorId> assignment;
    std::vector<ContributorId> flagged;  // classes with more than flag_email_threshold emails

    ContributorId lookup(std::string_view name, std::string_view email) const {
        auto it = assignment.find(RawIdentity{std::string(name), std::string(email)});
        return it == assignment.end() ? -1 : it->second;
    }
};

/// Manual corrections: raw_email -> contributor_key. Emails sharing a key are merged first.
using IdentityOverrides = std::map<std::string, std::string>;

inline IdentityOverrides load_identity_overrides(std::istream& in) {
    CsvReader reader(in);
    IdentityOverrides out;
    if (reader.header().empty()) return out;
    auto c_email = reader.require_column("raw_email");
    auto c_key = reader.require_column("contributor_key");
    std::vector<std::string> row;
    while (reader.next(row))
        if (!row[c_email].empty()) out[identity_detail::lower(row[c_email])] = row[c_key];
    return out;
}

/// Merges raw (name, email) observations into contributors. Two observations unify when they
/// share an email (case-insensitive) or a normalized/comma-swapped name variant with at least
/// `min_name_tokens` tokens. The canonical name is the most frequent raw name in the class.
/// Ids are assigned in order of each class's smallest (email, name) key, so the result does
/// not depend on input order.
inline IdentityResolution resolve_identities(std::span<const std::pair<RawIdentity, std::size_t>> observations,
                                             const IdentityOverrides& overrides = {}, const IdentityConfig& config = {}) {
    // Collapse duplicates and sort so index assignment is order-independent.
    std::map<RawIdentity, std::size_t> counts;
    for (const auto& [raw, n] : observations) counts[raw] += n;
    std::vector<std::pair<RawIdentity, std::size_t>> records(counts.begin(), counts.end());

    UnionFind uf(records.size());
    std::unordered_map<std::string, std::size_t> by_email, by_variant, by_override;
    std::vector<std::set<std::string>> variants(records.size());

    for (std::size_t i = 0; i < records.size(); ++i) {
        std::string email = identity_detail::lower(records[i].first.email);
        if (auto ov = overrides.find(email); ov != overrides.end()) {
            auto [it, fresh] = by_override.emplace(ov->second, i);
            if (!fresh) uf.unite(it->second, i);
        }
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::string email = identity_detail::lower(records[i].first.email);
        if (!email.empty()) {
            auto [it, fresh] = by_email.emplace(email, i);
            if (!fresh) uf.unite(it->second, i);
        }
        for (auto& v : comma_swap_candidates(records[i].first.name)) {
            if (identity_detail::token_count(v) < config.min_name_tokens) continue;
            variants[i].insert(v);
            auto [it, fresh] = by_variant.emplace(v, i);
            if (!fresh) uf.unite(it->second, i);
        }
    }

    // Group members by root; order classes by their smallest record index (records are sorted).
    std::map<std::size_t, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < records.size(); ++i) classes[uf.find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> ordered;
    for (auto& [root, members] : classes) ordered.push_back(std::move(members));
    std::sort(ordered.begin(), ordered.end(), [&](const auto& a, const auto& b) {
        auto key = [&](const std::vector<std::size_t>& m) {
            std::string best_email;
            std::string best_name;
            bool first = true;
            for (auto i : m) {
                auto e = identity_detail::lower(records[i].first.email);
                if (first || std::tie(e, records[i].first.name) < std::tie(best_email, best_name)) {
                    best_email = e;
                    best_name = records[i].first.name;
                    first = false;
                }
            }
            return std::make_pair(best_email, best_name);
        };
        return key(a) < key(b);
    });

    IdentityResolution out;
    for (std::size_t cid = 0; cid < ordered.size(); ++cid) {
        Contributor c;
        c.id = static_cast<ContributorId>(cid);
        std::map<std::string, std::size_t> name_freq;
        for (auto i : ordered[cid]) {
            const auto& raw = records[i].first;
            if (!raw.email.empty()) c.emails.insert(identity_detail::lower(raw.email));
            if (!raw.name.empty()) name_freq[raw.name] += records[i].second;
            c.name_variants.insert(variants[i].begin(), variants[i].end());
            out.assignment[raw] = c.id;
        }
        std::size_t best = 0;
        for (const auto& [name, n] : name_freq)
            if (n > best) {  // strict: ties keep the lexicographically smallest name
                best = n;
                c.canonical_name = name;
            }
        if (c.canonical_name.empty() && !c.emails.empty()) c.canonical_name = *c.emails.begin();
        if (c.emails.size() > config.flag_email_threshold) out.flagged.push_back(c.id);
        out.contributors.push_back(std::move(c));
    }
    return out;
}

}  // namespace stsf
