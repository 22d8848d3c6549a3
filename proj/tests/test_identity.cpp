#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "stsf/identity.hpp"

using namespace stsf;

namespace {

using Observations = std::vector<std::pair<RawIdentity, std::size_t>>;

Observations load_fixture() {
    std::ifstream in(std::string(STSF_TEST_DATA) + "/identities.csv");
    CsvReader r(in);
    auto cn = r.require_column("name"), ce = r.require_column("email"), cc = r.require_column("count");
    Observations out;
    std::vector<std::string> row;
    while (r.next(row)) out.push_back({RawIdentity{row[cn], row[ce]}, std::stoul(row[cc])});
    return out;
}

// Partition as sets of raw keys, independent of id numbering.
std::set<std::set<RawIdentity>> partition(const IdentityResolution& r) {
    std::map<ContributorId, std::set<RawIdentity>> groups;
    for (const auto& [raw, id] : r.assignment) groups[id].insert(raw);
    std::set<std::set<RawIdentity>> out;
    for (auto& [id, g] : groups) out.insert(g);
    return out;
}

}  // namespace

TEST(NormalizeName, Examples) {
    EXPECT_EQ(normalize_name("John Smith Jr."), "john smith");
    EXPECT_EQ(normalize_name(""), "");
    EXPECT_EQ(normalize_name("ASF Lists Admin"), "asf");
    EXPECT_EQ(normalize_name("  Dr.   Jane\tDoe "), "jane doe");
}

TEST(CommaSwap, Examples) {
    EXPECT_EQ(comma_swap_candidates("Smith, John"), (std::set<std::string>{"smith john", "john smith"}));
    EXPECT_EQ(comma_swap_candidates("John Smith"), (std::set<std::string>{"john smith"}));
    EXPECT_EQ(comma_swap_candidates("a, b, c"), (std::set<std::string>{"a b c"}));
}

TEST(ResolveIdentities, NameVariantAndSharedEmail) {
    Observations obs{{{"John Smith", "a@x"}, 1}, {{"Smith, John", "b@y"}, 1}};
    auto r = resolve_identities(obs);
    EXPECT_EQ(r.contributors.size(), 1u);
    EXPECT_EQ(r.lookup("John Smith", "a@x"), r.lookup("Smith, John", "b@y"));

    Observations obs2{{{"J S", "a@x"}, 1}, {{"Jane Smith", "A@X"}, 3}};
    auto r2 = resolve_identities(obs2);
    ASSERT_EQ(r2.contributors.size(), 1u);
    EXPECT_EQ(r2.contributors[0].canonical_name, "Jane Smith");
    EXPECT_EQ(r2.contributors[0].emails, std::set<std::string>{"a@x"});
}

TEST(ResolveIdentities, SingleTokenNamesDoNotMerge) {
    Observations obs{{{"admin", "a@x"}, 1}, {{"Admin", "b@x"}, 1}, {{"Smith", "c@x"}, 1}, {{"smith", "d@x"}, 1}};
    EXPECT_EQ(resolve_identities(obs).contributors.size(), 4u);
}

// Partition computed with networkx connected components over the same merge rule.
TEST(ResolveIdentities, FixtureMatchesUnionFindOracle) {
    auto obs = load_fixture();
    ASSERT_EQ(obs.size(), 12u);
    auto r = resolve_identities(obs);
    ASSERT_EQ(r.contributors.size(), 3u);
    EXPECT_EQ(r.contributors[0].canonical_name, "John Smith");
    EXPECT_EQ(r.contributors[0].emails, (std::set<std::string>{"john@b.org", "js@a.org"}));
    EXPECT_EQ(r.contributors[1].canonical_name, "Maria Garcia");
    EXPECT_EQ(r.contributors[1].emails, (std::set<std::string>{"maria@apache.org", "mg@c.org", "mgarcia@d.org"}));
    EXPECT_EQ(r.contributors[2].canonical_name, "Wei Chen");
    EXPECT_EQ(r.contributors[2].emails, (std::set<std::string>{"wchen@f.org", "wei.chen@g.org", "wei@e.org"}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.lookup(obs[i].first.name, obs[i].first.email), 0);
    for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(r.lookup(obs[i].first.name, obs[i].first.email), 1);
    for (std::size_t i = 8; i < 12; ++i) EXPECT_EQ(r.lookup(obs[i].first.name, obs[i].first.email), 2);
    EXPECT_TRUE(r.flagged.empty());
}

TEST(ResolveIdentities, ShuffledInputGivesSameResult) {
    std::mt19937 rng(13);
    std::vector<std::string> first = {"Ann", "Bo", "Cy", "Di", "Ed"};
    std::vector<std::string> last = {"Lee", "Ng", "Ortiz", "Park"};
    Observations obs;
    for (int i = 0; i < 80; ++i) {
        std::string f = first[rng() % first.size()], l = last[rng() % last.size()];
        std::string name = rng() % 4 == 0 ? l + ", " + f : f + " " + l;
        if (rng() % 6 == 0) name = f;
        std::string email = "u" + std::to_string(rng() % 30) + (rng() % 2 ? "@X.org" : "@x.org");
        obs.push_back({RawIdentity{name, email}, 1 + rng() % 3});
    }
    auto base = resolve_identities(obs);
    for (int k = 0; k < 10; ++k) {
        std::shuffle(obs.begin(), obs.end(), rng);
        auto again = resolve_identities(obs);
        EXPECT_EQ(again.assignment, base.assignment);
        EXPECT_EQ(partition(again), partition(base));
    }

    // Partition and email disjointness.
    std::set<std::string> seen;
    for (const auto& c : base.contributors)
        for (const auto& e : c.emails) EXPECT_TRUE(seen.insert(e).second) << e;
    for (const auto& [raw, id] : base.assignment) {
        ASSERT_GE(id, 0);
        ASSERT_LT(static_cast<std::size_t>(id), base.contributors.size());
    }
}

TEST(ResolveIdentities, OverridesAndFlagging) {
    std::istringstream csv("raw_email,contributor_key\nx1@a,K\nX2@B,K\n");
    auto ov = load_identity_overrides(csv);
    Observations obs{{{"Xa", "x1@a"}, 1}, {{"Yb", "x2@b"}, 1}, {{"Zc", "z@c"}, 1}};
    auto r = resolve_identities(obs, ov);
    EXPECT_EQ(r.contributors.size(), 2u);
    EXPECT_EQ(r.lookup("Xa", "x1@a"), r.lookup("Yb", "x2@b"));

    Observations many;
    for (int i = 0; i < 7; ++i) many.push_back({RawIdentity{"Pat Doe", "p" + std::to_string(i) + "@x"}, 1});
    IdentityConfig cfg;
    auto rf = resolve_identities(many, {}, cfg);
    ASSERT_EQ(rf.contributors.size(), 1u);
    EXPECT_EQ(rf.flagged, std::vector<ContributorId>{0});
}
