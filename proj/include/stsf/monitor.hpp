#pragma once
// Forecast monitoring: downturn detection, bounce-up statistics, and action recommendations.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/explain.hpp"
#include "stsf/features.hpp"
#include "stsf/seqmodel.hpp"
#include "stsf/stats.hpp"

namespace stsf {

struct DownturnConfig {
    double threshold = 0.05;
    bool relative = false;  // drop measured as a fraction of the earlier forecast
};

struct DownturnEvent {
    std::string project_id;
    std::size_t month = 0;  // 1-based month whose forecast fell
    double drop = 0.0;
    int span = 1;  // 1 or 2 months

    bool operator==(const DownturnEvent&) const = default;
};

inline double forecast_drop(double before, double after, bool relative) {
    double d = before - after;
    if (!relative) return d;
    return before > 0.0 ? d / before : 0.0;
}

/// Event at month m (1-based, m >= 2) when the forecast fell by more than the threshold since
/// month m-1 or month m-2. Both triggers at one month collapse to the larger drop (span 1 on ties).
inline std::vector<DownturnEvent> detect_downturns(const ForecastTrajectory& t, const DownturnConfig& config = {}) {
    std::vector<DownturnEvent> out;
    const auto& f = t.forecasts;
    for (std::size_t i = 1; i < f.size(); ++i) {
        std::optional<DownturnEvent> best;
        double d1 = forecast_drop(f[i - 1], f[i], config.relative);
        if (d1 > config.threshold) best = DownturnEvent{t.project_id, i + 1, d1, 1};
        if (i >= 2) {
            double d2 = forecast_drop(f[i - 2], f[i], config.relative);
            if (d2 > config.threshold && (!best || d2 > best->drop)) best = DownturnEvent{t.project_id, i + 1, d2, 2};
        }
        if (best) out.push_back(*best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bounce-up

inline constexpr std::string_view k_small_drop_bucket = "0-5%";
inline constexpr std::string_view k_large_drop_bucket = ">5%";

struct BounceUpRecord {
    std::string project_id;
    int label = 0;
    std::size_t month = 0;  // 1-based month of the lower forecast
    double drop = 0.0;
    std::string bucket;
    std::optional<double> months_to_recover;  // nullopt = censored
};

/// Every one-month decrease is a drop. Recovery is the first later month whose forecast is at
/// least the pre-drop value; drops that never recover are censored.
inline std::vector<BounceUpRecord> bounceup_records(const ForecastTrajectory& t, int label, double bucket_threshold = 0.05) {
    std::vector<BounceUpRecord> out;
    const auto& f = t.forecasts;
    for (std::size_t i = 1; i < f.size(); ++i) {
        double drop = f[i - 1] - f[i];
        if (!(drop > 0.0)) continue;
        BounceUpRecord r;
        r.project_id = t.project_id;
        r.label = label;
        r.month = i + 1;
        r.drop = drop;
        r.bucket = std::string(drop > bucket_threshold ? k_large_drop_bucket : k_small_drop_bucket);
        for (std::size_t k = i + 1; k < f.size(); ++k)
            if (f[k] >= f[i - 1]) {
                r.months_to_recover = static_cast<double>(k - i);
                break;
            }
        out.push_back(std::move(r));
    }
    return out;
}

struct BounceUpSummary {
    std::string bucket;
    int label = 0;
    std::size_t recovered = 0;
    std::size_t censored = 0;
    double median_months = std::numeric_limits<double>::quiet_NaN();  // over recovered drops
};

/// Medians per (bucket, label), in the order small/large bucket then retired/graduated.
inline std::vector<BounceUpSummary> bounceup_summary(std::span<const BounceUpRecord> records) {
    std::vector<BounceUpSummary> out;
    for (auto bucket : {k_small_drop_bucket, k_large_drop_bucket})
        for (int label : {0, 1}) {
            BounceUpSummary s;
            s.bucket = std::string(bucket);
            s.label = label;
            std::vector<double> months;
            for (const auto& r : records) {
                if (r.bucket != bucket || r.label != label) continue;
                if (r.months_to_recover) months.push_back(*r.months_to_recover);
                else ++s.censored;
            }
            s.recovered = months.size();
            s.median_months = median(months);
            out.push_back(std::move(s));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Actions

enum class Direction { increase, decrease };

inline std::string_view to_string(Direction d) { return d == Direction::increase ? "increase" : "decrease"; }

/// Feature -> action that raises the feature.
struct ActionTable {
    std::map<std::string, std::string, std::less<>> positive;
};

inline ActionTable default_action_table() {
    ActionTable t;
    t.positive = {
        {"num_act_devs", "Contribute frequently; Advertise, Recruit."},
        {"num_emails", "Reach out; Ask questions; Encourage communication."},
        {"num_commits", "Commit frequently; commit smaller; use CI."},
        {"num_files", "Split files; refactor code; encourage modularity."},
        {"c_interruption", "Go on vacation often; contribute in bursts."},
        {"e_interruption", "Email seldom; discourage discussion."},
        {"top_e_fract", "Encourage core emailers to respond more."},
        {"top_c_fract", "Core contributors commit exclusively."},
        {"c_nodes", "Establish technical mentorship; encourage commits."},
        {"c_edges", "Commit to same files as others; document code well."},
        {"c_c_coef", "Encourage collaborations, pair programming."},
        {"c_mean_degree", "Encourage commits by minor contributors."},
        {"c_long_tail", "Mentor collaborations with newcomers."},
        {"e_nodes", "Mentor low communicators."},
        {"e_edges", "Reply to questions; ask questions."},
        {"e_c_coef", "Encourage non-hierarchical communications."},
        {"e_mean_degree", "Communicate with minor emailers."},
        {"e_long_tail", "Foster communication-heavy culture."},
    };
    return t;
}

/// TSV with header `feature<TAB>positive_action`; must cover all 18 features.
inline ActionTable read_action_table_tsv(std::istream& in) {
    ActionTable t;
    std::string line;
    bool header = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            if (line.rfind("feature\t", 0) == 0) continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("action table line " + std::to_string(lineno) + ": missing tab");
        std::string feature = line.substr(0, tab);
        if (!feature_index(feature)) throw std::runtime_error("action table: unknown feature '" + feature + "'");
        t.positive[feature] = line.substr(tab + 1);
    }
    for (auto name : k_feature_names)
        if (!t.positive.count(name)) throw std::runtime_error("action table: no action for feature '" + std::string(name) + "'");
    return t;
}

inline void write_action_table_tsv(std::ostream& out, const ActionTable& t) {
    out << "feature\tpositive_action\n";
    for (auto name : k_feature_names) out << name << '\t' << t.positive.at(std::string(name)) << '\n';
}

inline std::string action_lookup(const ActionTable& table, std::string_view feature, Direction direction) {
    auto it = table.positive.find(feature);
    if (it == table.positive.end()) throw std::out_of_range("no action for feature '" + std::string(feature) + "'");
    return direction == Direction::increase ? it->second : "Reverse of: " + it->second;
}

struct RecommendedAction {
    std::string feature;
    Direction direction = Direction::increase;
    std::string text;
};

struct Recommendation {
    std::string project_id;
    std::size_t month = 0;
    std::vector<std::string> top_positive;
    std::vector<std::string> top_negative;
    std::vector<RecommendedAction> actions;
    std::optional<std::string> warning;
};

/// The three largest positive and three most negative project-level medians (ties by feature
/// column order), with the action to increase each positive and decrease each negative feature.
inline Recommendation recommend(const DownturnEvent& event, const ProjectCoefficients& coefficients,
                                const ActionTable& table, std::size_t per_side = 3) {
    const auto& med = coefficients.median;
    if (med.size() != k_feature_count) throw std::invalid_argument("recommend: expected 18 project-level medians");
    Recommendation r;
    r.project_id = event.project_id;
    r.month = event.month;
    std::vector<std::size_t> pos, neg;
    for (std::size_t f = 0; f < med.size(); ++f) {
        if (med[f] > 0.0) pos.push_back(f);
        else if (med[f] < 0.0) neg.push_back(f);
    }
    std::stable_sort(pos.begin(), pos.end(), [&](auto a, auto b) { return med[a] > med[b]; });
    std::stable_sort(neg.begin(), neg.end(), [&](auto a, auto b) { return med[a] < med[b]; });
    if (pos.size() > per_side) pos.resize(per_side);
    if (neg.size() > per_side) neg.resize(per_side);
    for (auto f : pos) {
        r.top_positive.emplace_back(k_feature_names[f]);
        r.actions.push_back({std::string(k_feature_names[f]), Direction::increase,
                             action_lookup(table, k_feature_names[f], Direction::increase)});
    }
    for (auto f : neg) {
        r.top_negative.emplace_back(k_feature_names[f]);
        r.actions.push_back({std::string(k_feature_names[f]), Direction::decrease,
                             action_lookup(table, k_feature_names[f], Direction::decrease)});
    }
    if (pos.size() + neg.size() < 2 * per_side)
        r.warning = "only " + std::to_string(pos.size() + neg.size()) + " nonzero feature medians available";
    return r;
}

// ---------------------------------------------------------------------------
// Milestone cadence

/// Months (1-based) checked twice instead of once because they lie within one month of a
/// declared milestone or release month.
inline bool in_milestone_window(std::size_t month, std::span<const std::size_t> milestones) {
    return std::any_of(milestones.begin(), milestones.end(), [&](std::size_t m) {
        return (month >= m ? month - m : m - month) <= 1;
    });
}

/// Number of monitoring checks per month (1, or 2 around milestones) for an n-month trajectory.
inline std::vector<int> monitoring_schedule(std::size_t months, std::span<const std::size_t> milestones) {
    std::vector<int> out;
    for (std::size_t m = 1; m <= months; ++m) out.push_back(in_milestone_window(m, milestones) ? 2 : 1);
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json to_json(const Recommendation& r) {
    nlohmann::json actions = nlohmann::json::array();
    for (const auto& a : r.actions)
        actions.push_back({{"feature", a.feature}, {"direction", to_string(a.direction)}, {"text", a.text}});
    nlohmann::json j{{"top_positive", r.top_positive}, {"top_negative", r.top_negative}, {"actions", std::move(actions)}};
    j["warning"] = r.warning ? nlohmann::json(*r.warning) : nlohmann::json(nullptr);
    return j;
}

/// One JSON object per line.
inline std::string alert_line(const DownturnEvent& e, const std::optional<Recommendation>& r, bool milestone_window) {
    nlohmann::json j{{"project_id", e.project_id},
                     {"month", e.month},
                     {"drop", e.drop},
                     {"span", e.span},
                     {"milestone_window", milestone_window}};
    j["recommendation"] = r ? to_json(*r) : nlohmann::json(nullptr);
    return j.dump();
}

inline void write_bounceup_csv(std::ostream& out, std::span<const BounceUpRecord> records) {
    out << "project_id,label,month,drop,bucket,months_to_recover,censored\n";
    for (const auto& r : records)
        out << csv_escape(r.project_id) << ',' << r.label << ',' << r.month << ',' << format_double(r.drop) << ','
            << csv_escape(r.bucket) << ',' << (r.months_to_recover ? format_double(*r.months_to_recover) : "") << ','
            << (r.months_to_recover ? 0 : 1) << '\n';
}

inline void write_bounceup_summary_csv(std::ostream& out, std::span<const BounceUpSummary> rows) {
    out << "bucket,label,recovered,censored,median_months\n";
    for (const auto& s : rows)
        out << csv_escape(s.bucket) << ',' << s.label << ',' << s.recovered << ',' << s.censored << ','
            << (std::isnan(s.median_months) ? "" : format_double(s.median_months)) << '\n';
}

}  // namespace stsf
