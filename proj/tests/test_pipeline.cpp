#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "stsf/pipeline.hpp"

using namespace stsf;
using namespace stsf::pipeline;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("stsf_test_pipeline_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Run cli(const std::string& args, const fs::path& dir) {
    auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    std::string cmd = std::string("'") + STSF_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

// One small synthetic corpus pushed through every stage, shared by the end-to-end tests.
class EndToEnd : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new fs::path(scratch("e2e"));
        auto& d = *dir_;
        ASSERT_EQ(cli("synth --out '" + (d / "corpus").string() + "' --projects 30 --seed 4", d).code, 0);
        std::string common = " --repeats 2 --set explain.num_samples=200 --seed 9";
        auto r1 = cli("run '" + (d / "corpus" / "manifest.json").string() + "' --out '" + (d / "w1").string() + "'" + common, d);
        first_stdout_ = new std::string(r1.out);
        code1_ = r1.code;
        code2_ = cli("run '" + (d / "corpus" / "manifest.json").string() + "' --out '" + (d / "w2").string() + "'" + common, d).code;
    }
    static void TearDownTestSuite() {
        fs::remove_all(*dir_);
        delete dir_;
        delete first_stdout_;
    }
    static fs::path* dir_;
    static std::string* first_stdout_;
    static int code1_, code2_;
};
fs::path* EndToEnd::dir_ = nullptr;
std::string* EndToEnd::first_stdout_ = nullptr;
int EndToEnd::code1_ = -1;
int EndToEnd::code2_ = -1;

}  // namespace

TEST(Config, ParsesSectionsQuotesAndComments) {
    auto s = parse_config_text("# top\nseed = 7\n[explain]\nnum_samples = 300  # fewer\nridge=\"0.5\"\n");
    EXPECT_EQ(s.at("seed"), "7");
    EXPECT_EQ(s.at("explain.num_samples"), "300");
    EXPECT_EQ(s.at("explain.ridge"), "0.5");
    EXPECT_THROW(parse_config_text("novalue\n"), UsageError);
    EXPECT_THROW(parse_config_text("[open\n"), UsageError);

    Options o(s);
    EXPECT_EQ(explainer_config(o).num_samples, 300);
    EXPECT_DOUBLE_EQ(explainer_config(o).ridge, 0.5);
    o.set("explain.num_samples", "ten");
    EXPECT_THROW(explainer_config(o), UsageError);
    o.set("explain.num_samples", "10");
    EXPECT_THROW(explainer_config(o), UsageError);
    o.set("milestones", "3, 12,20");
    EXPECT_EQ(o.get_list("milestones"), (std::vector<std::size_t>{3, 12, 20}));
}

TEST(Cli, UsageErrorsExitTwo) {
    auto d = scratch("usage");
    EXPECT_EQ(cli("", d).code, 2);
    EXPECT_EQ(cli("frobnicate", d).code, 2);
    EXPECT_EQ(cli("train", d).code, 2);  // --out is required

    auto missing = cli("train --out '" + (d / "empty").string() + "'", d);
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("features"), std::string::npos) << missing.err;
    auto no_model = cli("explain --out '" + (d / "empty").string() + "'", d);
    EXPECT_EQ(no_model.code, 2);
    fs::remove_all(d);
}

TEST(Cli, EmptyCorpusAndMissingLabels) {
    auto d = scratch("empty_corpus");
    write_file(d / "corpus" / "labels.csv", "project_id,grad_status,incubation_start,incubation_end\n");
    write_file(d / "corpus" / "manifest.json", R"({"corpus_root": ".", "labels": "labels.csv", "projects": []})");
    auto ok = cli("ingest '" + (d / "corpus" / "manifest.json").string() + "' --out '" + (d / "w").string() + "'", d);
    EXPECT_EQ(ok.code, 0) << ok.err;
    auto store = nlohmann::json::parse(slurp(d / "w" / "events" / "store.json"));
    EXPECT_TRUE(store["projects"].empty());

    write_file(d / "corpus2" / "manifest.json", R"({"corpus_root": ".", "labels": "nope.csv", "projects": []})");
    auto bad = cli("ingest '" + (d / "corpus2" / "manifest.json").string() + "' --out '" + (d / "w2").string() + "'", d);
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("nope.csv"), std::string::npos) << bad.err;
    fs::remove_all(d);
}

TEST(Cli, SingleProjectSkipsGroupStats) {
    auto d = scratch("single");
    ASSERT_EQ(cli("synth --out '" + (d / "c").string() + "' --projects 1 --seed 2", d).code, 0);
    ASSERT_EQ(cli("ingest '" + (d / "c" / "manifest.json").string() + "' --out '" + (d / "w").string() + "'", d).code, 0);
    auto r = cli("features --out '" + (d / "w").string() + "'", d);
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("group statistics skipped"), std::string::npos) << r.err;
    EXPECT_EQ(slurp(d / "w" / "features" / "group_stats.csv"), "feature,mean_grad,mean_ret,t,p\n");
    std::string header = "month";
    for (auto n : k_feature_names) header += "," + std::string(n);
    auto csv = slurp(d / "w" / "features" / "p001.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), header);
    fs::remove_all(d);
}

TEST(Cli, FlatTrajectoryGivesNoAlerts) {
    auto d = scratch("flat");
    write_file(d / "flat.csv", "project_id,month,forecast\nq,1,0.6\nq,2,0.6\nq,3,0.6\nq,4,0.6\n");
    auto r = cli("monitor --out '" + (d / "w").string() + "' --trajectories '" + (d / "flat.csv").string() + "'", d);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(d / "w" / "monitor" / "alerts.jsonl"), "");

    write_file(d / "drop.csv", "project_id,month,forecast\nq,1,0.9\nq,2,0.8\n");
    r = cli("monitor --out '" + (d / "w").string() + "' --trajectories '" + (d / "drop.csv").string() + "'", d);
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(count_lines(slurp(d / "w" / "monitor" / "alerts.jsonl")), 1u);
    r = cli("monitor --out '" + (d / "w").string() + "' --threshold 0.2 --trajectories '" + (d / "drop.csv").string() + "'", d);
    EXPECT_EQ(slurp(d / "w" / "monitor" / "alerts.jsonl"), "");
    r = cli("monitor --out '" + (d / "w").string() + "' --trajectories '" + (d / "missing.csv").string() + "'", d);
    EXPECT_EQ(r.code, 2);
    fs::remove_all(d);
}

TEST_F(EndToEnd, RunsAndPrintsMonthTable) {
    ASSERT_EQ(code1_, 0);
    EXPECT_NE(first_stdout_->find("month 8: accuracy"), std::string::npos) << *first_stdout_;
    EXPECT_NE(first_stdout_->find("final: accuracy"), std::string::npos);
}

TEST_F(EndToEnd, IngestCountsEqualDeclaredCounts) {
    ASSERT_EQ(code1_, 0);
    auto gen = nlohmann::json::parse(slurp(*dir_ / "corpus" / "generator_manifest.json"));
    auto store = nlohmann::json::parse(slurp(*dir_ / "w1" / "events" / "store.json"));
    std::map<std::string, nlohmann::json> by_id;
    for (const auto& p : store["projects"]) by_id[p["id"]] = p;
    ASSERT_EQ(by_id.size(), 30u);
    for (const auto& g : gen["projects"]) {
        const auto& p = by_id.at(g["id"]);
        auto d = g["declared"].get<SynthDeclared>();
        auto r = p["report"].get<IngestReport>();
        EXPECT_EQ(r.messages_kept(), d.messages_kept);
        EXPECT_EQ(r.messages_dropped_broadcast, d.broadcasts);
        EXPECT_EQ(r.messages_dropped_duplicate, d.duplicates);
        EXPECT_EQ(r.commits_kept(), d.commits_kept);
        EXPECT_EQ(r.commits_dropped_nonsource, d.commits_nonsource);
        EXPECT_EQ(r.messages_dropped_malformed + r.commits_dropped_malformed, 0u);
        EXPECT_EQ(p["contributors"].get<std::size_t>(), d.contributors);
        EXPECT_EQ(p["label"].get<int>(), g["label"].get<int>());
    }
}

TEST_F(EndToEnd, ExplanationsValidate) {
    ASSERT_EQ(code1_, 0);
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(*dir_ / "w1" / "explain")) {
        if (e.path().extension() != ".json") continue;
        auto j = nlohmann::json::parse(slurp(e.path()));
        EXPECT_FALSE(validate_explanation_json(j).has_value()) << e.path();
        ++n;
    }
    EXPECT_EQ(n, 30u);
}

TEST_F(EndToEnd, ReportBundles) {
    ASSERT_EQ(code1_, 0);
    WorkDir w{*dir_ / "w1"};
    auto acc = slurp(w.report() / "accuracy_by_month.csv");
    std::istringstream acc_in(acc);
    CsvReader acc_csv(acc_in);
    std::vector<std::string> row;
    std::size_t expected_month = 1;
    while (acc_csv.next(row)) {
        EXPECT_EQ(row[0], std::to_string(expected_month++));
        EXPECT_NO_THROW(acc_csv.require_column("accuracy_se"));
    }
    EXPECT_GT(expected_month, 6u);

    // Trajectory bundle: every project exactly once, under its own label.
    auto entries = nlohmann::json::parse(slurp(w.feature_manifest())).get<std::vector<CorpusEntry>>();
    std::ifstream tin(w.report() / "trajectories_by_label.csv");
    CsvReader tcsv(tin);
    std::map<std::string, std::string> label_of;
    while (tcsv.next(row)) {
        auto [it, fresh] = label_of.emplace(row[1], row[0]);
        EXPECT_EQ(it->second, row[0]);
    }
    ASSERT_EQ(label_of.size(), entries.size());
    for (const auto& e : entries) EXPECT_EQ(label_of.at(e.project_id), e.label ? "graduated" : "retired");

    // Bounce-up medians recomputed from the monitor's per-drop records.
    std::ifstream bin(w.report() / "bounceup_distribution.csv");
    CsvReader bcsv(bin);
    std::vector<BounceUpRecord> records;
    while (bcsv.next(row)) {
        BounceUpRecord r;
        r.project_id = row[bcsv.require_column("project_id")];
        r.label = std::stoi(row[bcsv.require_column("label")]);
        r.bucket = row[bcsv.require_column("bucket")];
        auto m = row[bcsv.require_column("months_to_recover")];
        if (!m.empty()) r.months_to_recover = *parse_double(m);
        records.push_back(r);
    }
    std::ostringstream want;
    write_bounceup_summary_csv(want, bounceup_summary(records));
    EXPECT_EQ(slurp(w.report() / "bounceup_medians.csv"), want.str());
    EXPECT_TRUE(fs::exists(w.report() / "quarter_coefficients.csv"));
}

TEST_F(EndToEnd, RerunIsByteIdentical) {
    ASSERT_EQ(code1_, 0);
    ASSERT_EQ(code2_, 0);
    auto a = tree(*dir_ / "w1"), b = tree(*dir_ / "w2");
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [path, text] : a) {
        ASSERT_TRUE(b.count(path)) << path;
        EXPECT_EQ(text, b.at(path)) << path;
    }
    EXPECT_TRUE(a.count("model/model.ckpt"));
    EXPECT_TRUE(a.count("monitor/alerts.jsonl"));
}
