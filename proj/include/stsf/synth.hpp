#pragma once
// Synthetic labeled project traces (mailing-list mboxes, commit tables, labels) with a tunable
// sustainability signal. Graduated projects get more email, larger communities, fewer silent
// months and shorter incubations as the signal strength grows; at strength 0 both labels share
// one distribution.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/core/time.hpp"
#include "stsf/ingest.hpp"
#include "stsf/seqmodel.hpp"

namespace stsf {

struct SynthConfig {
    int n_projects = 200;
    int min_months = 6;
    int max_months = 30;
    double label_prior = 0.79;
    double signal = 1.0;  // 0 = labels independent of activity, 1 = cleanly separable
    std::uint64_t seed = 42;

    void validate() const {
        if (n_projects < 0) throw std::invalid_argument("n_projects must be >= 0");
        if (min_months < 1 || max_months < min_months) throw std::invalid_argument("need 1 <= min_months <= max_months");
        if (!(label_prior > 0.0 && label_prior < 1.0)) throw std::invalid_argument("label_prior must be in (0, 1)");
        if (!(signal >= 0.0 && signal <= 1.0)) throw std::invalid_argument("signal must be in [0, 1]");
    }
};

/// Counts that ingesting the project must reproduce.
struct SynthDeclared {
    std::size_t messages_kept = 0;       // human emails
    std::size_t broadcasts = 0;          // unanswered bot and commit-notification messages
    std::size_t duplicates = 0;          // cross-posted copies of human emails
    std::size_t commits_kept = 0;        // commits touching at least one source file
    std::size_t commits_nonsource = 0;   // commits touching only filtered files
    std::size_t contributors = 0;        // distinct people behind kept emails and commits
};

inline void to_json(nlohmann::json& j, const SynthDeclared& d) {
    j = nlohmann::json{{"messages_kept", d.messages_kept}, {"broadcasts", d.broadcasts},
                       {"duplicates", d.duplicates},       {"commits_kept", d.commits_kept},
                       {"commits_nonsource", d.commits_nonsource}, {"contributors", d.contributors}};
}

inline void from_json(const nlohmann::json& j, SynthDeclared& d) {
    j.at("messages_kept").get_to(d.messages_kept);
    j.at("broadcasts").get_to(d.broadcasts);
    j.at("duplicates").get_to(d.duplicates);
    j.at("commits_kept").get_to(d.commits_kept);
    j.at("commits_nonsource").get_to(d.commits_nonsource);
    j.at("contributors").get_to(d.contributors);
}

struct SynthProject {
    std::string id;
    int label = 0;
    Timestamp start{};  // first day of the first incubation month
    int months = 0;
    std::string dev_mbox;
    std::string commits_mbox;
    std::string commits_csv;
    SynthDeclared declared;
};

struct SynthCorpus {
    SynthConfig config;
    std::vector<SynthProject> projects;
};

namespace synth_detail {

inline constexpr const char* k_first[] = {"Alice", "Bruno", "Chen",  "Dana",  "Emeka", "Fatima", "Goran", "Hana",
                                          "Ivan",  "José",  "Kiri",  "Lena",  "Mateo", "Nadia",  "Omar",  "Priya",
                                          "Quinn", "Rosa",  "Sven",  "Tariq", "Ursula", "Viktor", "Wen",  "Zoë"};
inline constexpr const char* k_last[] = {"Abbott",  "Brandt", "Castro", "Dubois",  "Eriksen", "Fischer", "García",
                                         "Horvath", "Ito",    "Jansen", "Kowalski", "Larsen", "Moreau",  "Nakamura",
                                         "Okafor",  "Petrov", "Quist",  "Rossi",   "Silva",   "Tanaka",  "Umar",
                                         "Varga",   "Weber",  "Yilmaz"};

struct Person {
    std::string first, last;
    std::string name() const { return first + " " + last; }
    std::string swapped() const { return last + ", " + first; }
    std::string primary_email(const std::string& project) const {
        return ascii(first) + "." + ascii(last) + "@" + project + ".example.org";
    }
    std::string apache_email() const { return ascii(first.substr(0, 1)) + ascii(last) + "@apache.org"; }

    static std::string ascii(const std::string& s) {
        std::string out;
        for (unsigned char c : s)
            if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
        return out.empty() ? std::string("x") : out;
    }
};

inline int poisson(std::mt19937_64& rng, double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<int>(mean)(rng);
}

/// Index drawn with weight 1 / (k + 1).
inline std::size_t zipf(std::mt19937_64& rng, std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k) w[k] = 1.0 / static_cast<double>(k + 1);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
}

inline Timestamp random_instant(std::mt19937_64& rng, Timestamp from, Timestamp to) {
    auto span = (to - from).count();
    std::uniform_int_distribution<long long> d(0, span - 1);
    return from + std::chrono::seconds{d(rng)};
}

inline SynthProject generate_project(const SynthConfig& config, std::size_t index, int label) {
    std::mt19937_64 rng(derive_seed(config.seed, index));
    SynthProject p;
    {
        char buf[16];
        std::snprintf(buf, sizeof buf, "p%03zu", index + 1);
        p.id = buf;
    }
    p.label = label;
    const double q = config.signal * (label ? 1.0 : -1.0);

    // Incubation length: graduated projects shift toward the short end as the signal grows.
    const double range = config.max_months - config.min_months;
    double lo = config.min_months + config.signal * (label ? 0.0 : 0.4 * range);
    double hi = config.max_months - config.signal * (label ? 0.4 * range : 0.0);
    p.months = static_cast<int>(std::lround(std::uniform_real_distribution<double>(lo, hi)(rng)));
    p.months = std::clamp(p.months, config.min_months, config.max_months);
    auto base = *detail::make_utc(2004, 1, 1, 0, 0, 0);
    p.start = add_months(base, std::uniform_int_distribution<int>(0, 96)(rng));

    // Community.
    int n_people = 6 + static_cast<int>(std::lround(6.0 * std::exp(0.6 * q))) + std::uniform_int_distribution<int>(0, 3)(rng);
    std::vector<Person> people;
    std::set<std::string> used;
    while (static_cast<int>(people.size()) < n_people) {
        Person person{k_first[std::uniform_int_distribution<std::size_t>(0, std::size(k_first) - 1)(rng)],
                      k_last[std::uniform_int_distribution<std::size_t>(0, std::size(k_last) - 1)(rng)]};
        // Unique by name and by every derived address.
        if (!used.insert(person.name()).second) continue;
        if (!used.insert(person.apache_email()).second) {
            used.erase(person.name());
            continue;
        }
        people.push_back(person);
    }
    const std::size_t n_committers = std::max<std::size_t>(2, people.size() / 3);

    std::vector<std::string> sources;
    for (int k = 0; k < 30; ++k) sources.push_back("src/main/java/org/" + p.id + "/Module" + std::to_string(k) + ".java");

    std::vector<RawMessage> dev, commit_mail;
    std::vector<CommitRecord> csv_commits;
    std::vector<std::size_t> history;  // indices into dev of human messages, for threading
    std::vector<std::size_t> dev_sender;
    std::set<std::size_t> active_people;
    int msg_counter = 0, revision = 1000 + static_cast<int>(index) * 7919 % 5000;
    auto next_id = [&] { return p.id + ".m" + std::to_string(++msg_counter) + "@synth.example"; };

    const double email_rate = 25.0 * std::exp(0.7 * q);
    const double commit_rate = 12.0 * std::exp(0.4 * q);
    const double silent_prob = 0.15 * (1.0 - 0.8 * q);

    for (int m = 0; m < p.months; ++m) {
        Timestamp from = add_months(p.start, m), to = add_months(p.start, m + 1);
        bool silent = std::bernoulli_distribution(silent_prob)(rng);
        int n_emails = silent ? 0 : std::max(1, poisson(rng, email_rate));
        int n_commits = silent ? 0 : poisson(rng, commit_rate);
        int n_jira = poisson(rng, 3.0);

        // Human emails in time order; replies point at recent earlier human messages.
        std::vector<Timestamp> times;
        for (int k = 0; k < n_emails; ++k) times.push_back(random_instant(rng, from, to));
        std::sort(times.begin(), times.end());
        for (auto t : times) {
            std::size_t who = zipf(rng, people.size());
            const Person& person = people[who];
            RawMessage msg;
            msg.message_id = next_id();
            msg.timestamp = t;
            double variant = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            msg.sender_name = variant < 0.1 ? person.swapped() : person.name();
            msg.sender_email = (variant > 0.9 && who < n_committers) ? person.apache_email() : person.primary_email(p.id);
            if (!history.empty() && std::bernoulli_distribution(0.6)(rng)) {
                std::size_t window = std::min<std::size_t>(history.size(), 30);
                auto parent = history[history.size() - 1 - std::uniform_int_distribution<std::size_t>(0, window - 1)(rng)];
                msg.in_reply_to = dev[parent].message_id;
                msg.references = dev[parent].references;
                msg.references.push_back(dev[parent].message_id);
                msg.subject = "Re: " + dev[parent].subject.substr(dev[parent].subject.rfind("Re: ", 0) == 0 ? 4 : 0);
            } else {
                msg.subject = "Discussion " + std::to_string(msg_counter) + " on the " + p.id + " roadmap";
            }
            msg.body = "Message from " + person.name() + ".\nFrom the archive of " + p.id + ".\n";
            history.push_back(dev.size());
            dev_sender.push_back(who);
            active_people.insert(who);
            ++p.declared.messages_kept;
            if (std::bernoulli_distribution(0.02)(rng)) {
                commit_mail.push_back(msg);  // cross-posted copy; ingest keeps the first
                ++p.declared.duplicates;
            }
            dev.push_back(std::move(msg));
        }

        for (int k = 0; k < n_jira; ++k) {
            RawMessage msg;
            msg.message_id = next_id();
            msg.timestamp = random_instant(rng, from, to);
            msg.sender_name = "ASF JIRA";
            msg.sender_email = "jira@apache.org";
            msg.subject = "[jira] Created: (" + p.id + "-" + std::to_string(msg_counter) + ") Tracking issue";
            msg.body = "Issue created by the tracker.\n";
            dev.push_back(std::move(msg));
            ++p.declared.broadcasts;
        }

        for (int k = 0; k < n_commits; ++k) {
            std::size_t who = zipf(rng, n_committers);
            const Person& person = people[who];
            Timestamp t = random_instant(rng, from, to);
            std::vector<std::string> files;
            bool nonsource = std::bernoulli_distribution(0.08)(rng);
            std::string prefix = std::bernoulli_distribution(0.15)(rng) ? "incubator/" + p.id + "/branches/dev/"
                                                                         : "incubator/" + p.id + "/trunk/";
            if (nonsource) {
                files.push_back(prefix + "pom.xml");
                if (std::bernoulli_distribution(0.5)(rng)) files.push_back(prefix + "README.md");
            } else {
                int n_files = std::uniform_int_distribution<int>(1, 3)(rng);
                std::set<std::size_t> picks;
                while (static_cast<int>(picks.size()) < n_files) picks.insert(zipf(rng, sources.size()));
                for (auto f : picks) files.push_back(prefix + sources[f]);
                if (std::bernoulli_distribution(0.2)(rng)) files.push_back(prefix + "pom.xml");
            }
            if (nonsource) ++p.declared.commits_nonsource;
            else {
                ++p.declared.commits_kept;
                active_people.insert(who);
            }

            ++revision;
            if (std::bernoulli_distribution(0.7)(rng)) {
                RawMessage msg;
                msg.message_id = next_id();
                msg.timestamp = t;
                msg.sender_name = person.name();
                msg.sender_email = person.apache_email();
                msg.subject = "svn commit: r" + std::to_string(revision) + " - " + files.front();
                std::string body = "Author: " + Person::ascii(person.first.substr(0, 1)) + Person::ascii(person.last) +
                                   "\nDate: " + format_rfc5322(t) + "\nNew Revision: " + std::to_string(revision) +
                                   "\n\nLog:\nChange " + std::to_string(revision) + "\n\nModified:\n";
                for (const auto& f : files) body += "    " + f + "\n";
                msg.body = std::move(body);
                commit_mail.push_back(std::move(msg));
                ++p.declared.broadcasts;
            } else {
                csv_commits.push_back(CommitRecord{person.name(), person.apache_email(), t, files});
            }
        }
    }
    p.declared.contributors = active_people.size();

    auto by_time = [](const RawMessage& a, const RawMessage& b) { return a.timestamp < b.timestamp; };
    std::stable_sort(dev.begin(), dev.end(), by_time);
    std::stable_sort(commit_mail.begin(), commit_mail.end(), by_time);
    p.dev_mbox = serialize_mbox(dev);
    p.commits_mbox = serialize_mbox(commit_mail);
    std::ostringstream csv;
    write_commit_table(csv, csv_commits);
    p.commits_csv = csv.str();
    return p;
}

}  // namespace synth_detail

/// Generates the corpus; round(label_prior * n) projects are graduated, assigned at random.
inline SynthCorpus generate(const SynthConfig& config) {
    config.validate();
    SynthCorpus corpus;
    corpus.config = config;
    auto n = static_cast<std::size_t>(config.n_projects);
    auto n_grad = static_cast<std::size_t>(std::lround(config.label_prior * static_cast<double>(n)));
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_grad), 1);
    std::mt19937_64 rng(config.seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    corpus.projects.resize(n);
    parallel_for(n, default_thread_count(), [&](std::size_t i) {
        corpus.projects[i] = synth_detail::generate_project(config, i, labels[i]);
    });
    return corpus;
}

/// `YYYY-MM-DD` of a timestamp.
inline std::string format_date(Timestamp t) { return format_rfc3339(t).substr(0, 10); }

/// Writes <dir>/<id>/{dev.mbox, commits.mbox, commits.csv}, labels.csv, manifest.json (the
/// corpus manifest read by ingest) and generator_manifest.json (config and declared counts).
inline void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write = [](const fs::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << text;
    };
    std::ostringstream labels;
    labels << "project_id,grad_status,incubation_start,incubation_end\n";
    nlohmann::json projects = nlohmann::json::array(), declared = nlohmann::json::array();
    for (const auto& p : corpus.projects) {
        fs::create_directories(dir / p.id);
        write(dir / p.id / "dev.mbox", p.dev_mbox);
        write(dir / p.id / "commits.mbox", p.commits_mbox);
        write(dir / p.id / "commits.csv", p.commits_csv);
        auto last_day = add_months(p.start, p.months) - std::chrono::days{1};
        labels << p.id << ',' << (p.label ? "graduated" : "retired") << ',' << format_date(p.start) << ','
               << format_date(last_day) << '\n';
        projects.push_back({{"id", p.id},
                            {"mbox", {p.id + "/dev.mbox", p.id + "/commits.mbox"}},
                            {"commits_csv", {p.id + "/commits.csv"}}});
        declared.push_back({{"id", p.id}, {"label", p.label}, {"months", p.months}, {"declared", p.declared}});
    }
    write(dir / "labels.csv", labels.str());
    nlohmann::json manifest{{"corpus_root", "."}, {"labels", "labels.csv"}, {"projects", projects}};
    write(dir / "manifest.json", manifest.dump(2) + "\n");
    const auto& c = corpus.config;
    nlohmann::json gen{{"config",
                        {{"n_projects", c.n_projects},
                         {"min_months", c.min_months},
                         {"max_months", c.max_months},
                         {"label_prior", c.label_prior},
                         {"signal", c.signal},
                         {"seed", c.seed}}},
                       {"projects", declared}};
    write(dir / "generator_manifest.json", gen.dump(2) + "\n");
}

}  // namespace stsf
