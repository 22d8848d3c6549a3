#pragma once
// Monthly socio-technical feature sequences, min-max scaling, Lasso variable
// selection and graduated-vs-retired group comparisons.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/core/time.hpp"
#include "stsf/networks.hpp"
#include "stsf/stats.hpp"

namespace stsf {

inline constexpr std::size_t k_feature_count = 18;

/// Frozen column order of every feature vector, CSV file, checkpoint and explanation.
inline constexpr std::array<std::string_view, k_feature_count> k_feature_names = {
    "num_act_devs",  "num_commits", "num_emails",  "num_files",     "c_interruption", "e_interruption",
    "top_c_fract",   "top_e_fract", "c_nodes",     "c_edges",       "c_c_coef",       "c_long_tail",
    "c_mean_degree", "e_nodes",     "e_edges",     "e_c_coef",      "e_long_tail",    "e_mean_degree"};

enum Feature : std::size_t {
    num_act_devs, num_commits, num_emails, num_files, c_interruption, e_interruption,
    top_c_fract, top_e_fract, c_nodes, c_edges, c_c_coef, c_long_tail,
    c_mean_degree, e_nodes, e_edges, e_c_coef, e_long_tail, e_mean_degree
};

inline std::optional<std::size_t> feature_index(std::string_view name) {
    for (std::size_t i = 0; i < k_feature_count; ++i)
        if (k_feature_names[i] == name) return i;
    return std::nullopt;
}

using FeatureVector = std::array<double, k_feature_count>;

struct FeatureSequence {
    std::string project_id;
    int label = 0;  // 1 = graduated, 0 = retired
    std::vector<FeatureVector> months;

    bool operator==(const FeatureSequence&) const = default;
};

// ---------------------------------------------------------------------------
// Per-activity scores

/// Share of the window covered by the three longest gaps between successive events, counting
/// the lead gap (window start to first event) and the trail gap (last event to window end).
/// Events outside the window are ignored; no events gives 1.
inline double interruption_score(std::span<const Timestamp> events, Timestamp start, Timestamp end) {
    if (!(end > start)) throw std::invalid_argument("interruption_score: window end must be after start");
    std::vector<Timestamp> in_window;
    for (auto t : events)
        if (t >= start && t <= end) in_window.push_back(t);
    if (in_window.empty()) return 1.0;
    std::sort(in_window.begin(), in_window.end());
    std::vector<double> gaps;
    gaps.reserve(in_window.size() + 1);
    gaps.push_back(static_cast<double>((in_window.front() - start).count()));
    for (std::size_t i = 1; i < in_window.size(); ++i)
        gaps.push_back(static_cast<double>((in_window[i] - in_window[i - 1]).count()));
    gaps.push_back(static_cast<double>((end - in_window.back()).count()));
    std::size_t k = std::min<std::size_t>(3, gaps.size());
    std::partial_sort(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(k), gaps.end(), std::greater<>());
    double top = 0.0;
    for (std::size_t i = 0; i < k; ++i) top += gaps[i];
    return std::min(1.0, top / static_cast<double>((end - start).count()));
}

struct TopFraction {
    double value = 0.0;
    bool undefined = false;  // zero total activity
};

/// Fraction of activity by the top ceil(10%) of contributors.
inline TopFraction top_fraction(std::span<const double> counts) {
    std::vector<double> v;
    double total = 0.0;
    for (double c : counts)
        if (c > 0.0) {
            v.push_back(c);
            total += c;
        }
    if (total <= 0.0) return {0.0, true};
    std::size_t k = (v.size() + 9) / 10;  // ceil(0.1 n)
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
    double top = 0.0;
    for (std::size_t i = 0; i < k; ++i) top += v[i];
    return {top / total, false};
}

// ---------------------------------------------------------------------------
// Assembly

/// Resolved activity of one project over its incubation window [start, end).
struct ProjectEvents {
    std::string project_id;
    int label = 0;
    Timestamp start{};
    Timestamp end{};  // exclusive
    std::vector<EmailEvent> emails;
    std::vector<CommitEvent> commits;
};

inline int incubation_months(const ProjectEvents& p) {
    if (!(p.end > p.start)) return 0;
    return calendar_month_index(p.start, p.end - std::chrono::seconds{1}) + 1;
}

struct MonthWindow {
    Timestamp start{};
    Timestamp end{};  // exclusive
};

/// Calendar month `m` of the incubation, clipped to the incubation window.
inline MonthWindow month_window(const ProjectEvents& p, int m) {
    MonthWindow w;
    w.start = std::max(p.start, add_months(p.start, m));
    w.end = std::min(p.end, add_months(p.start, m + 1));
    return w;
}

struct MonthlyNetworks {
    std::string project_id;
    int month_index = 0;  // 0-based since incubation start
    Graph social;
    Graph technical;
};

struct NetworkBuild {
    std::vector<MonthlyNetworks> months;
    std::size_t unknown_parents = 0;
};

namespace features_detail {
template <typename Event>
std::vector<std::vector<const Event*>> bucket_by_month(const ProjectEvents& p, const std::vector<Event>& events, int months) {
    std::vector<std::vector<const Event*>> out(static_cast<std::size_t>(std::max(months, 0)));
    for (const auto& e : events) {
        if (e.timestamp < p.start || e.timestamp >= p.end) continue;
        int m = calendar_month_index(p.start, e.timestamp);
        if (m >= 0 && m < months) out[static_cast<std::size_t>(m)].push_back(&e);
    }
    return out;
}
}  // namespace features_detail

inline NetworkBuild build_monthly_networks(const ProjectEvents& p) {
    NetworkBuild out;
    int months = incubation_months(p);
    std::unordered_map<std::string, ContributorId> sender_of;
    for (const auto& e : p.emails) sender_of.emplace(e.message_id, e.sender);
    auto email_buckets = features_detail::bucket_by_month(p, p.emails, months);
    auto commit_buckets = features_detail::bucket_by_month(p, p.commits, months);
    for (int m = 0; m < months; ++m) {
        std::vector<EmailEvent> emails;
        for (auto* e : email_buckets[static_cast<std::size_t>(m)]) emails.push_back(*e);
        std::vector<CommitEvent> commits;
        for (auto* c : commit_buckets[static_cast<std::size_t>(m)]) commits.push_back(*c);
        auto social = build_social(emails, sender_of);
        out.unknown_parents += social.unknown_parents;
        out.months.push_back(MonthlyNetworks{p.project_id, m, std::move(social.graph), build_technical(commits)});
    }
    return out;
}

struct AssembleConfig {
    ClusteringMode clustering = ClusteringMode::transitivity;
    bool cumulative_active_devs = false;
};

struct AssembleResult {
    FeatureSequence sequence;
    std::size_t undefined_top_fractions = 0;  // months with no commits or no emails
};

/// Monthly feature vectors for one project. Returns nullopt when the project has no activity
/// inside its incubation window (such projects are excluded and reported by the caller).
inline std::optional<AssembleResult> assemble(const ProjectEvents& p, std::span<const MonthlyNetworks> networks,
                                              const AssembleConfig& config = {}) {
    int months = incubation_months(p);
    if (months <= 0) return std::nullopt;
    if (static_cast<int>(networks.size()) != months)
        throw std::invalid_argument("assemble: network count does not match incubation length for " + p.project_id);

    auto email_buckets = features_detail::bucket_by_month(p, p.emails, months);
    auto commit_buckets = features_detail::bucket_by_month(p, p.commits, months);
    std::size_t total_events = 0;
    for (int m = 0; m < months; ++m)
        total_events += email_buckets[static_cast<std::size_t>(m)].size() + commit_buckets[static_cast<std::size_t>(m)].size();
    if (total_events == 0) return std::nullopt;

    AssembleResult out;
    out.sequence.project_id = p.project_id;
    out.sequence.label = p.label;
    std::set<ContributorId> ever_active;
    for (int m = 0; m < months; ++m) {
        const auto& emails = email_buckets[static_cast<std::size_t>(m)];
        const auto& commits = commit_buckets[static_cast<std::size_t>(m)];
        auto window = month_window(p, m);
        FeatureVector v{};

        std::set<ContributorId> active;
        std::map<ContributorId, double> email_counts, commit_counts;
        std::set<std::string> files;
        std::vector<Timestamp> email_times, commit_times;
        for (auto* e : emails) {
            active.insert(e->sender);
            email_counts[e->sender] += 1.0;
            email_times.push_back(e->timestamp);
        }
        for (auto* c : commits) {
            active.insert(c->author);
            commit_counts[c->author] += 1.0;
            commit_times.push_back(c->timestamp);
            for (const auto& f : c->files) files.insert(strip_branch(f));
        }
        ever_active.insert(active.begin(), active.end());

        v[num_act_devs] = static_cast<double>(config.cumulative_active_devs ? ever_active.size() : active.size());
        v[num_commits] = static_cast<double>(commits.size());
        v[num_emails] = static_cast<double>(emails.size());
        v[num_files] = static_cast<double>(files.size());
        v[c_interruption] = interruption_score(commit_times, window.start, window.end);
        v[e_interruption] = interruption_score(email_times, window.start, window.end);

        std::vector<double> cc, ec;
        for (auto& [id, n] : commit_counts) cc.push_back(n);
        for (auto& [id, n] : email_counts) ec.push_back(n);
        auto tc = top_fraction(cc);
        auto te = top_fraction(ec);
        out.undefined_top_fractions += tc.undefined + te.undefined;
        v[top_c_fract] = tc.value;
        v[top_e_fract] = te.value;

        auto cm = metrics(networks[static_cast<std::size_t>(m)].technical, config.clustering);
        auto em = metrics(networks[static_cast<std::size_t>(m)].social, config.clustering);
        v[c_nodes] = static_cast<double>(cm.nodes);
        v[c_edges] = static_cast<double>(cm.edges);
        v[c_c_coef] = cm.clustering_coef;
        v[c_long_tail] = static_cast<double>(cm.long_tail);
        v[c_mean_degree] = cm.mean_degree;
        v[e_nodes] = static_cast<double>(em.nodes);
        v[e_edges] = static_cast<double>(em.edges);
        v[e_c_coef] = em.clustering_coef;
        v[e_long_tail] = static_cast<double>(em.long_tail);
        v[e_mean_degree] = em.mean_degree;
        out.sequence.months.push_back(v);
    }
    return out;
}

/// Whole-incubation values for one project, in feature-column order: totals for the four
/// counts, whole-window interruption and top-fraction scores, monthly means for network metrics.
inline FeatureVector project_summary(const ProjectEvents& p, const FeatureSequence& seq) {
    FeatureVector v{};
    std::set<ContributorId> devs;
    std::set<std::string> files;
    std::map<ContributorId, double> ec, cc;
    std::vector<Timestamp> et, ct;
    for (const auto& e : p.emails) {
        if (e.timestamp < p.start || e.timestamp >= p.end) continue;
        devs.insert(e.sender);
        ec[e.sender] += 1.0;
        et.push_back(e.timestamp);
    }
    for (const auto& c : p.commits) {
        if (c.timestamp < p.start || c.timestamp >= p.end) continue;
        devs.insert(c.author);
        cc[c.author] += 1.0;
        ct.push_back(c.timestamp);
        for (const auto& f : c.files) files.insert(strip_branch(f));
    }
    v[num_act_devs] = static_cast<double>(devs.size());
    v[num_commits] = static_cast<double>(ct.size());
    v[num_emails] = static_cast<double>(et.size());
    v[num_files] = static_cast<double>(files.size());
    v[c_interruption] = interruption_score(ct, p.start, p.end);
    v[e_interruption] = interruption_score(et, p.start, p.end);
    std::vector<double> cv, ev;
    for (auto& [id, n] : cc) cv.push_back(n);
    for (auto& [id, n] : ec) ev.push_back(n);
    v[top_c_fract] = top_fraction(cv).value;
    v[top_e_fract] = top_fraction(ev).value;
    for (std::size_t f = c_nodes; f < k_feature_count; ++f) {
        double s = 0.0;
        for (const auto& mv : seq.months) s += mv[f];
        v[f] = seq.months.empty() ? 0.0 : s / static_cast<double>(seq.months.size());
    }
    return v;
}

/// Mean of each feature over the months of one sequence.
inline FeatureVector mean_over_months(const FeatureSequence& seq) {
    FeatureVector v{};
    for (const auto& m : seq.months)
        for (std::size_t f = 0; f < k_feature_count; ++f) v[f] += m[f];
    if (!seq.months.empty())
        for (auto& x : v) x /= static_cast<double>(seq.months.size());
    return v;
}

// ---------------------------------------------------------------------------
// Min-max scaling

struct Scaler {
    FeatureVector min{};
    FeatureVector max{};

    double transform_value(std::size_t f, double x) const {
        double range = max[f] - min[f];
        if (range <= 0.0) return 0.0;
        return std::clamp((x - min[f]) / range, 0.0, 1.0);
    }

    FeatureVector transform(const FeatureVector& v) const {
        FeatureVector out{};
        for (std::size_t f = 0; f < k_feature_count; ++f) out[f] = transform_value(f, v[f]);
        return out;
    }

    FeatureVector inverse_transform(const FeatureVector& v) const {
        FeatureVector out{};
        for (std::size_t f = 0; f < k_feature_count; ++f) out[f] = min[f] + v[f] * (max[f] - min[f]);
        return out;
    }

    bool operator==(const Scaler&) const = default;
};

/// Per-feature min and max over every month of every training sequence.
inline Scaler fit_scaler(std::span<const FeatureSequence> training) {
    Scaler s;
    s.min.fill(std::numeric_limits<double>::infinity());
    s.max.fill(-std::numeric_limits<double>::infinity());
    bool any = false;
    for (const auto& seq : training)
        for (const auto& m : seq.months) {
            any = true;
            for (std::size_t f = 0; f < k_feature_count; ++f) {
                s.min[f] = std::min(s.min[f], m[f]);
                s.max[f] = std::max(s.max[f], m[f]);
            }
        }
    if (!any) throw std::invalid_argument("fit_scaler: training set has no months");
    return s;
}

inline FeatureSequence apply_scaler(const Scaler& s, const FeatureSequence& seq) {
    FeatureSequence out = seq;
    for (auto& m : out.months) m = s.transform(m);
    return out;
}

// ---------------------------------------------------------------------------
// Variable selection and group comparison

struct LassoSelection {
    LassoResult fit;
    std::vector<std::string> selected_features;
};

/// Lasso of the label on per-project mean features, min-max scaled across projects.
inline LassoSelection lasso_select_features(std::span<const FeatureSequence> corpus, const LassoConfig& config = {}) {
    std::vector<FeatureSequence> aggregated;
    for (const auto& seq : corpus) aggregated.push_back(FeatureSequence{seq.project_id, seq.label, {mean_over_months(seq)}});
    Scaler s = fit_scaler(aggregated);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(k_feature_count));
    Eigen::VectorXd y(static_cast<Eigen::Index>(corpus.size()));
    for (std::size_t i = 0; i < aggregated.size(); ++i) {
        auto v = s.transform(aggregated[i].months[0]);
        for (std::size_t f = 0; f < k_feature_count; ++f) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = v[f];
        y[static_cast<Eigen::Index>(i)] = aggregated[i].label;
    }
    LassoSelection out;
    out.fit = lasso_select(x, y, config);
    for (auto j : out.fit.selected) out.selected_features.emplace_back(k_feature_names[j]);
    return out;
}

struct GroupComparison {
    std::string feature;
    double mean_grad = 0.0;
    double mean_ret = 0.0;
    TTestResult test;
};

/// Welch t-test per column of the given per-project values, graduated (label 1) vs retired.
inline std::vector<GroupComparison> compare_groups(std::span<const std::string> names,
                                                   std::span<const std::vector<double>> rows, std::span<const int> labels) {
    std::vector<GroupComparison> out;
    for (std::size_t f = 0; f < names.size(); ++f) {
        std::vector<double> grad, ret;
        for (std::size_t i = 0; i < rows.size(); ++i) (labels[i] == 1 ? grad : ret).push_back(rows[i][f]);
        GroupComparison g{names[f], mean(grad), mean(ret), welch_t_test(grad, ret)};
        out.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline void write_feature_csv(std::ostream& out, const FeatureSequence& seq) {
    out << "month";
    for (auto n : k_feature_names) out << ',' << n;
    out << '\n';
    for (std::size_t m = 0; m < seq.months.size(); ++m) {
        out << m;
        for (double x : seq.months[m]) out << ',' << format_double(x);
        out << '\n';
    }
}

inline std::vector<FeatureVector> read_feature_csv(std::istream& in) {
    CsvReader reader(in);
    std::array<std::size_t, k_feature_count> cols{};
    for (std::size_t f = 0; f < k_feature_count; ++f) cols[f] = reader.require_column(k_feature_names[f]);
    auto c_month = reader.require_column("month");
    std::vector<FeatureVector> months;
    std::vector<std::string> row;
    while (reader.next(row)) {
        auto m = parse_double(row[c_month]);
        if (!m || *m != static_cast<double>(months.size()))
            throw CsvError("feature CSV: months must be 0,1,2,... (line " + std::to_string(reader.line()) + ")");
        FeatureVector v{};
        for (std::size_t f = 0; f < k_feature_count; ++f) {
            auto x = parse_double(row[cols[f]]);
            if (!x) throw CsvError("feature CSV: bad value in column " + std::string(k_feature_names[f]));
            v[f] = *x;
        }
        months.push_back(v);
    }
    return months;
}

struct CorpusEntry {
    std::string project_id;
    int label = 0;
    std::size_t months = 0;
    std::string csv_path;  // relative to the manifest directory
};

inline void to_json(nlohmann::json& j, const CorpusEntry& e) {
    j = nlohmann::json{{"project_id", e.project_id}, {"label", e.label}, {"months", e.months}, {"csv_path", e.csv_path}};
}

inline void from_json(const nlohmann::json& j, CorpusEntry& e) {
    j.at("project_id").get_to(e.project_id);
    j.at("label").get_to(e.label);
    j.at("months").get_to(e.months);
    j.at("csv_path").get_to(e.csv_path);
}

/// Loads every sequence listed in a corpus manifest (JSON array of CorpusEntry).
inline std::vector<FeatureSequence> load_feature_corpus(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open feature manifest " + manifest_path.string());
    auto entries = nlohmann::json::parse(in).get<std::vector<CorpusEntry>>();
    std::vector<FeatureSequence> out;
    for (const auto& e : entries) {
        auto path = manifest_path.parent_path() / e.csv_path;
        std::ifstream csv(path);
        if (!csv) throw std::runtime_error("cannot open feature CSV " + path.string());
        FeatureSequence seq{e.project_id, e.label, read_feature_csv(csv)};
        if (seq.months.size() != e.months)
            throw std::runtime_error("feature CSV " + path.string() + " has " + std::to_string(seq.months.size()) +
                                     " months, manifest says " + std::to_string(e.months));
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace stsf
