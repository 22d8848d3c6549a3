#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <unistd.h>

#include "stsf/pipeline.hpp"
#include "stsf/synth.hpp"

using namespace stsf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("stsf_test_synth_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthConfig small(double signal, int n = 24, std::uint64_t seed = 5) {
    SynthConfig c;
    c.n_projects = n;
    c.signal = signal;
    c.seed = seed;
    return c;
}

struct Summary {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
};

Summary read_summary(const fs::path& p) {
    std::ifstream in(p);
    CsvReader r(in);
    auto c_label = r.require_column("label");
    Summary s;
    std::vector<std::string> row;
    while (r.next(row)) {
        s.y.push_back(std::stoi(row[c_label]));
        std::vector<double> v;
        for (auto name : k_feature_names) v.push_back(*parse_double(row[r.require_column(name)]));
        s.x.push_back(std::move(v));
    }
    return s;
}

}  // namespace

TEST(Synth, ConfigValidation) {
    EXPECT_NO_THROW(SynthConfig{}.validate());
    auto c = small(1.0);
    c.label_prior = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small(1.5);
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small(0.5);
    c.min_months = 10;
    c.max_months = 9;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Synth, LabelPriorAndMonthRange) {
    auto corpus = generate(small(0.5, 100));
    int grad = 0;
    for (const auto& p : corpus.projects) {
        grad += p.label;
        EXPECT_GE(p.months, 6);
        EXPECT_LE(p.months, 30);
    }
    EXPECT_EQ(grad, 79);
    EXPECT_TRUE(generate(small(1.0, 0)).projects.empty());
}

TEST(Synth, SameSeedIsByteIdentical) {
    auto a = scratch("a"), b = scratch("b");
    write_corpus(generate(small(1.0)), a);
    write_corpus(generate(small(1.0)), b);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, 3u + 3u * 24u);
    auto c = scratch("c");
    write_corpus(generate(small(1.0, 24, 6)), c);
    EXPECT_NE(slurp(a / "p001" / "dev.mbox"), slurp(c / "p001" / "dev.mbox"));
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST(Synth, IngestReproducesDeclaredCounts) {
    auto corpus = generate(small(0.7, 30, 9));
    for (const auto& p : corpus.projects) {
        std::vector<std::string> mboxes{p.dev_mbox, p.commits_mbox}, tables{p.commits_csv};
        auto act = ingest_project(mboxes, tables);
        const auto& r = act.report;
        EXPECT_EQ(r.messages_dropped_malformed, 0u) << p.id;
        EXPECT_EQ(r.commits_dropped_malformed, 0u) << p.id;
        EXPECT_EQ(r.messages_kept(), p.declared.messages_kept) << p.id;
        EXPECT_EQ(r.messages_dropped_broadcast, p.declared.broadcasts) << p.id;
        EXPECT_EQ(r.messages_dropped_duplicate, p.declared.duplicates) << p.id;
        EXPECT_EQ(r.commits_kept(), p.declared.commits_kept) << p.id;
        EXPECT_EQ(r.commits_dropped_nonsource, p.declared.commits_nonsource) << p.id;

        std::map<RawIdentity, std::size_t> seen;
        for (const auto& m : act.messages) ++seen[RawIdentity{m.sender_name, m.sender_email}];
        for (const auto& c : act.commits) ++seen[RawIdentity{c.author_name, c.author_email}];
        std::vector<std::pair<RawIdentity, std::size_t>> obs(seen.begin(), seen.end());
        EXPECT_EQ(resolve_identities(obs).contributors.size(), p.declared.contributors) << p.id;
    }
}

// Runs synth -> ingest -> features in process and fits a logistic-regression oracle on the
// per-project summaries: at full signal the labels are linearly separable out of sample.
TEST(Synth, FullSignalIsSeparableZeroSignalIsNot) {
    pipeline::Log quiet;
    for (double signal : {1.0, 0.0}) {
        auto dir = scratch("sig" + std::to_string(static_cast<int>(signal)));
        pipeline::Options o;
        o.set("n_projects", "200");
        o.set("signal", format_double(signal));
        o.set("seed", "21");
        pipeline::cmd_synth(o, dir / "corpus", quiet);
        pipeline::WorkDir w{dir / "work"};
        pipeline::cmd_ingest(dir / "corpus" / "manifest.json", w, {}, quiet);
        pipeline::cmd_features(w, {}, quiet);
        auto s = read_summary(w.features() / "project_summary.csv");
        ASSERT_EQ(s.y.size(), 200u);

        // Standardize with the training rows, gradient descent on the mean log loss.
        const std::size_t n_train = 150, d = k_feature_count + 1;
        std::vector<double> mu(k_feature_count, 0.0), sd(k_feature_count, 0.0);
        for (std::size_t i = 0; i < n_train; ++i)
            for (std::size_t f = 0; f < k_feature_count; ++f) mu[f] += s.x[i][f] / n_train;
        for (std::size_t i = 0; i < n_train; ++i)
            for (std::size_t f = 0; f < k_feature_count; ++f) sd[f] += std::pow(s.x[i][f] - mu[f], 2) / n_train;
        auto row = [&](std::size_t i) {
            Eigen::VectorXd x(static_cast<Eigen::Index>(d));
            x[0] = 1.0;
            for (std::size_t f = 0; f < k_feature_count; ++f)
                x[static_cast<Eigen::Index>(f + 1)] = sd[f] > 0 ? (s.x[i][f] - mu[f]) / std::sqrt(sd[f]) : 0.0;
            return x;
        };
        Eigen::VectorXd w_lr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        for (int it = 0; it < 2000; ++it) {
            Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
            for (std::size_t i = 0; i < n_train; ++i) {
                auto x = row(i);
                g += (1.0 / (1.0 + std::exp(-w_lr.dot(x))) - s.y[i]) * x;
            }
            w_lr -= 0.5 * g / static_cast<double>(n_train);
        }
        int correct = 0;
        for (std::size_t i = n_train; i < 200; ++i) correct += (w_lr.dot(row(i)) >= 0) == (s.y[i] == 1);
        double acc = correct / 50.0;

        std::ifstream stats(w.features() / "group_stats.csv");
        CsvReader r(stats);
        std::vector<std::string> line;
        double p_emails = -1.0;
        while (r.next(line))
            if (line[r.require_column("feature")] == "num_emails") p_emails = *parse_double(line[r.require_column("p")]);
        if (signal == 1.0) {
            EXPECT_GE(acc, 0.95);
            EXPECT_LT(p_emails, 0.01);
        } else {
            // 47 or more of 50 correct has upper binomial tail 0.0036 under the 0.79 prior.
            EXPECT_LE(acc, 0.92);
            EXPECT_GT(p_emails, 0.001);
        }
        fs::remove_all(dir);
    }
}
