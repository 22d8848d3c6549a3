#pragma once
// Local linear surrogate explanations of sequence forecasts: each month-feature cell is an
// interpretable binary feature (kept vs. replaced by a draw from the training marginal).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/core/parallel.hpp"
#include "stsf/features.hpp"
#include "stsf/seqmodel.hpp"
#include "stsf/stats.hpp"

namespace stsf {

struct ExplainerConfig {
    int num_samples = 5000;
    std::optional<double> kernel_width;  // default 0.75 * sqrt(months * features)
    double ridge = 1.0;
    std::uint64_t seed = 42;
    std::optional<std::size_t> bucket_months;  // truncate to n months; shorter projects are skipped
    unsigned threads = 0;

    void validate() const {
        if (num_samples < 100) throw std::invalid_argument("num_samples must be >= 100");
        if (kernel_width && !(*kernel_width > 0.0)) throw std::invalid_argument("kernel_width must be > 0");
        if (!(ridge >= 0.0)) throw std::invalid_argument("ridge must be >= 0");
        if (bucket_months && *bucket_months == 0) throw std::invalid_argument("bucket_months must be >= 1");
    }

    double width_for(Eigen::Index cells) const {
        return kernel_width ? *kernel_width : 0.75 * std::sqrt(static_cast<double>(cells));
    }
};

/// Pool of observed (scaled) values per feature column, drawn from uniformly when a cell is replaced.
struct TrainingMarginals {
    std::vector<std::vector<double>> values;
};

inline TrainingMarginals marginals_from(std::span<const FeatureSequence> scaled_training) {
    TrainingMarginals m;
    m.values.resize(k_feature_count);
    for (const auto& s : scaled_training)
        for (const auto& v : s.months)
            for (std::size_t f = 0; f < k_feature_count; ++f) m.values[f].push_back(v[f]);
    return m;
}

struct PerturbationSet {
    std::vector<Eigen::MatrixXd> samples;  // each months x features
    Eigen::MatrixXd masks;                 // samples x cells, 1 = kept; cell index = month * features + feature
};

namespace explain_detail {
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}
}  // namespace explain_detail

/// Sample 0 is the instance itself. Every other sample keeps each cell with probability 0.5 and
/// otherwise replaces it by a uniform draw from that feature's training values. Sample i uses its
/// own random stream, so the result does not depend on evaluation order.
inline PerturbationSet perturb(const Eigen::MatrixXd& instance, const TrainingMarginals& marginals, int count,
                               std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("perturb: count must be >= 1");
    const Eigen::Index months = instance.rows(), features = instance.cols();
    if (static_cast<std::size_t>(features) != marginals.values.size())
        throw std::invalid_argument("perturb: marginals do not match the instance width");
    for (std::size_t f = 0; f < marginals.values.size(); ++f)
        if (marginals.values[f].empty())
            throw std::invalid_argument("perturb: empty training marginal for feature " + std::to_string(f));
    PerturbationSet out;
    out.masks = Eigen::MatrixXd::Ones(count, months * features);
    out.samples.push_back(instance);
    for (int i = 1; i < count; ++i) {
        auto rng = explain_detail::stream(seed, static_cast<std::uint64_t>(i));
        std::bernoulli_distribution keep(0.5);
        Eigen::MatrixXd s = instance;
        for (Eigen::Index m = 0; m < months; ++m)
            for (Eigen::Index f = 0; f < features; ++f) {
                if (keep(rng)) continue;
                const auto& pool = marginals.values[static_cast<std::size_t>(f)];
                std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                s(m, f) = pool[pick(rng)];
                out.masks(i, m * features + f) = 0.0;
            }
        out.samples.push_back(std::move(s));
    }
    return out;
}

/// exp(-d^2 / width^2) with d the Euclidean distance from the mask to the all-ones mask.
inline double kernel_weight(const Eigen::Ref<const Eigen::RowVectorXd>& mask, double width) {
    double d2 = (1.0 - mask.array()).square().sum();
    return std::exp(-d2 / (width * width));
}

struct ExplanationSet {
    std::string project_id;
    Eigen::MatrixXd coefficients;  // months x features
    double intercept = 0.0;
    double r2 = 0.0;  // weighted coefficient of determination of the surrogate
    double ridge_used = 0.0;
};

/// Weighted ridge regression of `outputs` on the mask columns with an unpenalized intercept
/// (weighted centering, then a Cholesky solve). A singular system is retried once with ten
/// times the penalty before failing.
inline ExplanationSet fit_surrogate(const Eigen::MatrixXd& masks, const Eigen::VectorXd& outputs,
                                    const Eigen::VectorXd& weights, double ridge, Eigen::Index months,
                                    Eigen::Index features) {
    if (masks.rows() != outputs.size() || masks.rows() != weights.size())
        throw std::invalid_argument("fit_surrogate: sample count mismatch");
    if (masks.cols() != months * features) throw std::invalid_argument("fit_surrogate: mask width mismatch");
    if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0))
        throw std::invalid_argument("fit_surrogate: weights must be non-negative with a positive sum");
    const double wsum = weights.sum();
    Eigen::RowVectorXd x_mean = (weights.transpose() * masks) / wsum;
    double y_mean = weights.dot(outputs) / wsum;
    Eigen::MatrixXd xc = masks.rowwise() - x_mean;
    Eigen::VectorXd yc = outputs.array() - y_mean;
    Eigen::MatrixXd xw = xc.array().colwise() * weights.array();
    Eigen::MatrixXd gram = xw.transpose() * xc;
    Eigen::VectorXd rhs = xw.transpose() * yc;

    ExplanationSet out;
    out.ridge_used = ridge;
    Eigen::VectorXd beta;
    for (int attempt = 0;; ++attempt) {
        Eigen::MatrixXd a = gram;
        a.diagonal().array() += out.ridge_used;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() == Eigen::Success) {
            beta = llt.solve(rhs);
            if (beta.allFinite()) break;
        }
        if (attempt == 1) throw NumericError("fit_surrogate: singular normal equations");
        out.ridge_used = out.ridge_used > 0.0 ? out.ridge_used * 10.0 : 1e-8;
    }

    out.intercept = y_mean - x_mean.dot(beta);
    out.coefficients = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        beta.data(), months, features);
    Eigen::VectorXd resid = yc - xc * beta;
    double ss_res = weights.dot(resid.cwiseProduct(resid));
    double ss_tot = weights.dot(yc.cwiseProduct(yc));
    out.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res <= 1e-24 ? 1.0 : 0.0);
    return out;
}

using BlackBox = std::function<double(const Eigen::MatrixXd&)>;

/// Black box for a trained model: P(graduate) from a full forward pass over the (scaled) sample.
inline BlackBox model_black_box(const LstmParams& params) {
    return [&params](const Eigen::MatrixXd& x) { return final_probability(params, x); };
}

/// Explains one scaled instance (months x features).
inline ExplanationSet explain_instance(const std::string& project_id, const Eigen::MatrixXd& instance,
                                       const TrainingMarginals& marginals, const BlackBox& black_box,
                                       const ExplainerConfig& config) {
    config.validate();
    auto set = perturb(instance, marginals, config.num_samples, config.seed);
    const auto n = static_cast<Eigen::Index>(set.samples.size());
    Eigen::VectorXd outputs(n), weights(n);
    const double width = config.width_for(set.masks.cols());
    parallel_for(static_cast<std::size_t>(n), config.threads ? config.threads : default_thread_count(), [&](std::size_t i) {
        auto k = static_cast<Eigen::Index>(i);
        outputs[k] = black_box(set.samples[i]);
        weights[k] = kernel_weight(set.masks.row(k), width);
    });
    auto out = fit_surrogate(set.masks, outputs, weights, config.ridge, instance.rows(), instance.cols());
    out.project_id = project_id;
    return out;
}

/// Explains a project with a trained model: scales the raw sequence, truncates to the bucket
/// length, and explains. nullopt when the project is shorter than the bucket.
inline std::optional<ExplanationSet> explain_project(const TrainedModel& model, const FeatureSequence& raw,
                                                     const TrainingMarginals& marginals, const ExplainerConfig& config) {
    std::size_t months = raw.months.size();
    if (config.bucket_months) {
        if (months < *config.bucket_months) return std::nullopt;
        months = *config.bucket_months;
    }
    if (months == 0) return std::nullopt;
    Eigen::MatrixXd x = to_matrix(apply_scaler(model.scaler, raw), months);
    return explain_instance(raw.project_id, x, marginals, model_black_box(model.params), config);
}

// ---------------------------------------------------------------------------
// Aggregation

/// Linear-interpolation quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ProjectCoefficients {
    std::string project_id;
    std::vector<double> median;  // per feature, across months
    std::vector<double> iqr;
};

inline ProjectCoefficients project_level(const ExplanationSet& e) {
    if (e.coefficients.rows() < 1) throw std::invalid_argument("project_level: explanation has no months");
    ProjectCoefficients p;
    p.project_id = e.project_id;
    for (Eigen::Index f = 0; f < e.coefficients.cols(); ++f) {
        std::vector<double> col(e.coefficients.col(f).data(), e.coefficients.col(f).data() + e.coefficients.rows());
        p.median.push_back(median(col));
        p.iqr.push_back(quantile(col, 0.75) - quantile(col, 0.25));
    }
    return p;
}

struct OverallSigns {
    std::vector<std::size_t> positive;
    std::vector<std::size_t> negative;
};

/// Per feature, the number of projects whose median is > 0 and < 0.
inline OverallSigns overall_level(std::span<const ProjectCoefficients> projects) {
    if (projects.empty()) throw std::invalid_argument("overall_level: no projects");
    std::size_t f_count = projects.front().median.size();
    OverallSigns s{std::vector<std::size_t>(f_count, 0), std::vector<std::size_t>(f_count, 0)};
    for (const auto& p : projects) {
        if (p.median.size() != f_count) throw std::invalid_argument("overall_level: inconsistent feature counts");
        for (std::size_t f = 0; f < f_count; ++f) {
            if (p.median[f] > 0.0) ++s.positive[f];
            else if (p.median[f] < 0.0) ++s.negative[f];
        }
    }
    return s;
}

/// Month ranges [begin, end) of the four quarters of an n-month incubation; the remainder
/// months go to the last quarter.
inline std::array<std::pair<std::size_t, std::size_t>, 4> quarter_ranges(std::size_t n) {
    std::size_t q = n / 4;
    return {{{0, q}, {q, 2 * q}, {2 * q, 3 * q}, {3 * q, n}}};
}

/// Median across projects of each project's median coefficient of `feature` in each quarter.
/// Projects with fewer than 4 months are excluded; NaN when no project qualifies.
inline std::array<double, 4> quarter_coefficients(std::span<const ExplanationSet> sets, std::size_t feature) {
    std::array<std::vector<double>, 4> per_quarter;
    for (const auto& e : sets) {
        auto n = static_cast<std::size_t>(e.coefficients.rows());
        if (n < 4) continue;
        if (feature >= static_cast<std::size_t>(e.coefficients.cols()))
            throw std::invalid_argument("quarter_coefficients: feature out of range");
        auto ranges = quarter_ranges(n);
        for (std::size_t q = 0; q < 4; ++q) {
            std::vector<double> vals;
            for (std::size_t m = ranges[q].first; m < ranges[q].second; ++m)
                vals.push_back(e.coefficients(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(feature)));
            per_quarter[q].push_back(median(vals));
        }
    }
    std::array<double, 4> out{};
    for (std::size_t q = 0; q < 4; ++q) out[q] = median(per_quarter[q]);
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json to_json(const ExplanationSet& e) {
    nlohmann::json coeffs = nlohmann::json::array();
    for (Eigen::Index m = 0; m < e.coefficients.rows(); ++m) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index f = 0; f < e.coefficients.cols(); ++f) row.push_back(e.coefficients(m, f));
        coeffs.push_back(std::move(row));
    }
    return {{"project_id", e.project_id},
            {"months", e.coefficients.rows()},
            {"features", std::vector<std::string>(k_feature_names.begin(), k_feature_names.end())},
            {"intercept", e.intercept},
            {"coefficients", std::move(coeffs)},
            {"r2", e.r2}};
}

/// Checks the explanation dump layout; returns an error message or nullopt.
inline std::optional<std::string> validate_explanation_json(const nlohmann::json& j) {
    if (!j.is_object()) return "not an object";
    for (const char* key : {"project_id", "months", "intercept", "coefficients", "r2"})
        if (!j.contains(key)) return std::string("missing key ") + key;
    if (!j["project_id"].is_string()) return "project_id must be a string";
    if (!j["months"].is_number_integer() || j["months"].get<long long>() < 1) return "months must be a positive integer";
    if (!j["intercept"].is_number() || !j["r2"].is_number()) return "intercept and r2 must be numbers";
    const auto& c = j["coefficients"];
    if (!c.is_array() || c.size() != j["months"].get<std::size_t>()) return "coefficients must have one row per month";
    for (const auto& row : c) {
        if (!row.is_array() || row.size() != k_feature_count) return "each coefficient row must have 18 entries";
        for (const auto& x : row)
            if (!x.is_number()) return "coefficients must be numbers";
    }
    return std::nullopt;
}

inline ExplanationSet explanation_from_json(const nlohmann::json& j) {
    if (auto err = validate_explanation_json(j)) throw std::runtime_error("invalid explanation JSON: " + *err);
    ExplanationSet e;
    e.project_id = j["project_id"].get<std::string>();
    e.intercept = j["intercept"].get<double>();
    e.r2 = j["r2"].get<double>();
    auto months = j["months"].get<Eigen::Index>();
    e.coefficients.resize(months, static_cast<Eigen::Index>(k_feature_count));
    for (Eigen::Index m = 0; m < months; ++m)
        for (Eigen::Index f = 0; f < static_cast<Eigen::Index>(k_feature_count); ++f)
            e.coefficients(m, f) = j["coefficients"][static_cast<std::size_t>(m)][static_cast<std::size_t>(f)].get<double>();
    return e;
}

/// Long format: project_id,feature,median,iqr.
inline void write_project_coefficients_csv(std::ostream& out, std::span<const ProjectCoefficients> projects) {
    out << "project_id,feature,median,iqr\n";
    for (const auto& p : projects)
        for (std::size_t f = 0; f < p.median.size(); ++f)
            out << csv_escape(p.project_id) << ',' << k_feature_names[f] << ',' << format_double(p.median[f]) << ','
                << format_double(p.iqr[f]) << '\n';
}

inline std::vector<ProjectCoefficients> read_project_coefficients_csv(std::istream& in) {
    CsvReader reader(in);
    auto c_id = reader.require_column("project_id");
    auto c_feat = reader.require_column("feature");
    auto c_med = reader.require_column("median");
    auto c_iqr = reader.require_column("iqr");
    std::vector<ProjectCoefficients> out;
    std::vector<std::string> row;
    while (reader.next(row)) {
        auto f = feature_index(row[c_feat]);
        if (!f) throw CsvError("unknown feature '" + row[c_feat] + "' in coefficient CSV");
        if (out.empty() || out.back().project_id != row[c_id])
            out.push_back({row[c_id], std::vector<double>(k_feature_count, 0.0), std::vector<double>(k_feature_count, 0.0)});
        out.back().median[*f] = parse_double(row[c_med]).value_or(0.0);
        out.back().iqr[*f] = parse_double(row[c_iqr]).value_or(0.0);
    }
    return out;
}

inline void write_overall_signs_csv(std::ostream& out, const OverallSigns& s) {
    out << "feature,positive,negative\n";
    for (std::size_t f = 0; f < s.positive.size(); ++f)
        out << k_feature_names[f] << ',' << s.positive[f] << ',' << s.negative[f] << '\n';
}

}  // namespace stsf
