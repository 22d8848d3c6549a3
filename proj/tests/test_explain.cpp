#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "stsf/explain.hpp"

using namespace stsf;

namespace {

TrainingMarginals uniform_marginals(std::mt19937& rng, int per_feature = 50) {
    TrainingMarginals m;
    m.values.resize(k_feature_count);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& col : m.values)
        for (int i = 0; i < per_feature; ++i) col.push_back(u(rng));
    return m;
}

Eigen::MatrixXd random_instance(std::mt19937& rng, Eigen::Index months) {
    Eigen::MatrixXd x(months, static_cast<Eigen::Index>(k_feature_count));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    return x;
}

Eigen::VectorXd weights_of(const Eigen::MatrixXd& masks, double width) {
    Eigen::VectorXd w(masks.rows());
    for (Eigen::Index i = 0; i < masks.rows(); ++i) w[i] = kernel_weight(masks.row(i), width);
    return w;
}

ExplanationSet with_coefficients(std::string id, Eigen::MatrixXd c) {
    ExplanationSet e;
    e.project_id = std::move(id);
    e.coefficients = std::move(c);
    return e;
}

ProjectCoefficients medians(std::string id, std::vector<double> m) {
    return ProjectCoefficients{std::move(id), m, std::vector<double>(m.size(), 0.0)};
}

}  // namespace

TEST(Perturb, FirstSampleIsInstance) {
    std::mt19937 rng(1);
    auto marg = uniform_marginals(rng);
    auto x = random_instance(rng, 3);
    auto one = perturb(x, marg, 1, 42);
    ASSERT_EQ(one.samples.size(), 1u);
    EXPECT_EQ(one.samples[0], x);
    EXPECT_TRUE((one.masks.array() == 1.0).all());
    EXPECT_THROW(perturb(x, marg, 0, 42), std::invalid_argument);
}

TEST(Perturb, KeepRateAndReplacementRange) {
    std::mt19937 rng(2);
    auto marg = uniform_marginals(rng);
    auto x = random_instance(rng, 2);
    x.setConstant(5.0);  // outside every marginal, so replaced cells are recognizable
    auto set = perturb(x, marg, 5000, 7);
    Eigen::VectorXd rate = set.masks.bottomRows(4999).colwise().mean();
    EXPECT_GE(rate.minCoeff(), 0.46);
    EXPECT_LE(rate.maxCoeff(), 0.54);
    for (std::size_t i = 1; i < set.samples.size(); ++i) {
        const auto& s = set.samples[i];
        for (Eigen::Index m = 0; m < s.rows(); ++m)
            for (Eigen::Index f = 0; f < s.cols(); ++f) {
                bool kept = set.masks(static_cast<Eigen::Index>(i), m * s.cols() + f) == 1.0;
                if (kept) {
                    ASSERT_EQ(s(m, f), 5.0);
                } else {
                    const auto& pool = marg.values[static_cast<std::size_t>(f)];
                    ASSERT_GE(s(m, f), *std::min_element(pool.begin(), pool.end()));
                    ASSERT_LE(s(m, f), *std::max_element(pool.begin(), pool.end()));
                }
            }
    }
}

TEST(Perturb, DeterministicForSeed) {
    std::mt19937 rng(3);
    auto marg = uniform_marginals(rng);
    auto x = random_instance(rng, 4);
    auto a = perturb(x, marg, 300, 11), b = perturb(x, marg, 300, 11), c = perturb(x, marg, 300, 12);
    EXPECT_EQ(a.masks, b.masks);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_NE(a.masks, c.masks);
    // A longer run shares its prefix with a shorter one.
    auto longer = perturb(x, marg, 400, 11);
    EXPECT_EQ(longer.masks.topRows(300), a.masks);
}

TEST(Kernel, Weights) {
    ExplainerConfig cfg;
    double w = cfg.width_for(18);
    EXPECT_DOUBLE_EQ(w, 0.75 * std::sqrt(18.0));
    Eigen::RowVectorXd mask = Eigen::RowVectorXd::Ones(18);
    EXPECT_DOUBLE_EQ(kernel_weight(mask, w), 1.0);
    double prev = 1.0;
    for (int k = 1; k <= 18; ++k) {
        mask[k - 1] = 0.0;
        double cur = kernel_weight(mask, w);
        EXPECT_LT(cur, prev);
        prev = cur;
    }
    // All perturbed: exp(-1 / 0.75^2).
    EXPECT_NEAR(prev, 0.1690133154060661, 1e-15);
    cfg.kernel_width = 2.0;
    EXPECT_DOUBLE_EQ(cfg.width_for(18), 2.0);
}

TEST(Surrogate, ConstantModel) {
    std::mt19937 rng(4);
    auto marg = uniform_marginals(rng);
    auto x = random_instance(rng, 2);
    ExplainerConfig cfg;
    cfg.num_samples = 1000;
    auto e = explain_instance("c", x, marg, [](const Eigen::MatrixXd&) { return 0.7; }, cfg);
    EXPECT_EQ(e.coefficients.rows(), 2);
    EXPECT_EQ(e.coefficients.cols(), static_cast<Eigen::Index>(k_feature_count));
    EXPECT_LT(e.coefficients.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(e.intercept, 0.7, 1e-8);
}

TEST(Surrogate, RecoversLinearModelAndMatchesWlsOracle) {
    std::mt19937 rng(5);
    auto marg = uniform_marginals(rng);
    const Eigen::Index months = 3, feats = static_cast<Eigen::Index>(k_feature_count);
    auto x = random_instance(rng, months);
    // Linear in the masks of three cells: the model reads indicators of "cell unchanged".
    struct Term {
        Eigen::Index m, f;
        double beta;
    };
    std::vector<Term> terms{{0, 2, 0.30}, {1, 9, -0.15}, {2, 17, 0.25}};
    BlackBox bb = [&](const Eigen::MatrixXd& s) {
        double y = 0.2;
        for (auto t : terms) y += t.beta * (s(t.m, t.f) == x(t.m, t.f) ? 1.0 : 0.0);
        return y;
    };
    ExplainerConfig cfg;
    cfg.num_samples = 2000;
    auto e = explain_instance("lin", x, marg, bb, cfg);
    for (Eigen::Index m = 0; m < months; ++m)
        for (Eigen::Index f = 0; f < feats; ++f) {
            auto it = std::find_if(terms.begin(), terms.end(), [&](Term t) { return t.m == m && t.f == f; });
            if (it != terms.end()) {
                EXPECT_NEAR(e.coefficients(m, f), it->beta, 0.05 * std::abs(it->beta));
            } else {
                EXPECT_LT(std::abs(e.coefficients(m, f)), 0.01);
            }
        }
    EXPECT_GE(e.r2, 0.9);

    auto set = perturb(x, marg, cfg.num_samples, cfg.seed);
    Eigen::VectorXd y(set.masks.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = bb(set.samples[static_cast<std::size_t>(i)]);
    auto w = weights_of(set.masks, cfg.width_for(set.masks.cols()));
    Eigen::VectorXd ref = oracle::weighted_ridge(set.masks, y, w, cfg.ridge);
    EXPECT_NEAR(e.intercept, ref[0], 1e-8);
    for (Eigen::Index c = 0; c < set.masks.cols(); ++c)
        EXPECT_NEAR(e.coefficients(c / feats, c % feats), ref[c + 1], 1e-8);
}

TEST(Surrogate, DuplicationAndWeightScaleInvariance) {
    std::mt19937 rng(6);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> g(0.0, 1.0);
    const Eigen::Index n = 200, p = 6;
    Eigen::MatrixXd masks(n, p);
    Eigen::VectorXd y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) masks(i, j) = coin(rng) ? 1.0 : 0.0;
        y[i] = masks(i, 0) - 0.5 * masks(i, 3) + 0.1 * g(rng);
        w[i] = kernel_weight(masks.row(i), 1.5);
    }
    auto base = fit_surrogate(masks, y, w, 0.0, 2, 3);

    Eigen::MatrixXd m2(2 * n, p);
    m2 << masks, masks;
    Eigen::VectorXd y2(2 * n), w2(2 * n);
    y2 << y, y;
    w2 << w, w;
    auto dup = fit_surrogate(m2, y2, w2, 0.0, 2, 3);
    EXPECT_LT((dup.coefficients - base.coefficients).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(dup.intercept, base.intercept, 1e-10);

    auto scaled = fit_surrogate(masks, y, w * 3.5, 0.0, 2, 3);
    EXPECT_LT((scaled.coefficients - base.coefficients).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(scaled.r2, base.r2, 1e-10);

    Eigen::VectorXd ref = oracle::weighted_ridge(masks, y, w, 0.0);
    EXPECT_NEAR(base.intercept, ref[0], 1e-10);
    for (Eigen::Index c = 0; c < p; ++c) EXPECT_NEAR(base.coefficients(c / 3, c % 3), ref[c + 1], 1e-10);

    EXPECT_THROW(fit_surrogate(masks, y.head(n - 1), w, 1.0, 2, 3), std::invalid_argument);
    Eigen::VectorXd bad = w;
    bad[0] = -1.0;
    EXPECT_THROW(fit_surrogate(masks, y, bad, 1.0, 2, 3), std::invalid_argument);
}

TEST(Aggregate, ProjectLevel) {
    Eigen::MatrixXd one(1, 2);
    one << 0.3, -0.2;
    auto p1 = project_level(with_coefficients("one", one));
    EXPECT_EQ(p1.median, (std::vector<double>{0.3, -0.2}));
    EXPECT_EQ(p1.iqr, (std::vector<double>{0.0, 0.0}));

    Eigen::MatrixXd three(3, 1);
    three << -1, 0, 5;
    auto p3 = project_level(with_coefficients("three", three));
    EXPECT_DOUBLE_EQ(p3.median[0], 0.0);
    EXPECT_DOUBLE_EQ(p3.iqr[0], 2.5 - (-0.5));

    std::mt19937 rng(9);
    std::normal_distribution<double> g(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd c(1 + trial, 4);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = g(rng);
        auto p = project_level(with_coefficients("r", c));
        for (Eigen::Index f = 0; f < 4; ++f) {
            std::vector<double> col(c.col(f).data(), c.col(f).data() + c.rows());
            std::sort(col.begin(), col.end());
            std::size_t n = col.size();
            double want = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
            EXPECT_DOUBLE_EQ(p.median[static_cast<std::size_t>(f)], want);
        }
    }
    EXPECT_THROW(project_level(with_coefficients("empty", Eigen::MatrixXd(0, 3))), std::invalid_argument);
}

// Signs counted by hand: feature 0 has 3 positive, 2 negative, 2 zero medians.
TEST(Aggregate, OverallLevel) {
    std::vector<ProjectCoefficients> ps{medians("a", {1, 0.1}),   medians("b", {-1, 0.2}), medians("c", {0, 0.3}),
                                        medians("d", {2, 0.4}),   medians("e", {3, 0.5}),  medians("f", {-0.5, 0.6}),
                                        medians("g", {0, 0.7})};
    auto s = overall_level(ps);
    EXPECT_EQ(s.positive, (std::vector<std::size_t>{3, 7}));
    EXPECT_EQ(s.negative, (std::vector<std::size_t>{2, 0}));

    std::vector<ProjectCoefficients> zero{medians("z", {0.0})};
    auto sz = overall_level(zero);
    EXPECT_EQ(sz.positive[0], 0u);
    EXPECT_EQ(sz.negative[0], 0u);
    EXPECT_THROW(overall_level(std::vector<ProjectCoefficients>{}), std::invalid_argument);
}

TEST(Aggregate, QuarterRanges) {
    using R = std::array<std::pair<std::size_t, std::size_t>, 4>;
    EXPECT_EQ(quarter_ranges(8), (R{{{0, 2}, {2, 4}, {4, 6}, {6, 8}}}));
    EXPECT_EQ(quarter_ranges(5), (R{{{0, 1}, {1, 2}, {2, 3}, {3, 5}}}));
    EXPECT_EQ(quarter_ranges(4), (R{{{0, 1}, {1, 2}, {2, 3}, {3, 4}}}));
}

// Project A (8 months, coefficient = m) gives quarter medians 0.5, 2.5, 4.5, 6.5.
// Project B (5 months, coefficient = 10 m) gives 0, 10, 20, 35. Project C (3 months) is excluded.
TEST(Aggregate, QuarterCoefficientsFixture) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(8, 3), b = Eigen::MatrixXd::Zero(5, 3), c = Eigen::MatrixXd::Ones(3, 3);
    for (int m = 0; m < 8; ++m) a(m, 1) = m;
    for (int m = 0; m < 5; ++m) b(m, 1) = 10 * m;
    std::vector<ExplanationSet> sets{with_coefficients("a", a), with_coefficients("b", b), with_coefficients("c", c)};
    auto q = quarter_coefficients(sets, 1);
    EXPECT_DOUBLE_EQ(q[0], 0.25);
    EXPECT_DOUBLE_EQ(q[1], 6.25);
    EXPECT_DOUBLE_EQ(q[2], 12.25);
    EXPECT_DOUBLE_EQ(q[3], 20.75);

    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(8, 3, 0.4);
    std::vector<ExplanationSet> constant{with_coefficients("k", flat)};
    for (double v : quarter_coefficients(constant, 2)) EXPECT_DOUBLE_EQ(v, 0.4);

    std::vector<ExplanationSet> short_only{with_coefficients("c", c)};
    for (double v : quarter_coefficients(short_only, 0)) EXPECT_TRUE(std::isnan(v));
}

TEST(Files, JsonRoundTripAndValidation) {
    ExplanationSet e;
    e.project_id = "P";
    e.coefficients = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(k_feature_count));
    e.coefficients(1, 4) = -0.125;
    e.intercept = 0.5;
    e.r2 = 0.93;
    e.ridge_used = 1.0;
    auto j = to_json(e);
    EXPECT_FALSE(validate_explanation_json(j).has_value());
    auto back = explanation_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.project_id, "P");
    EXPECT_EQ(back.coefficients, e.coefficients);
    EXPECT_DOUBLE_EQ(back.intercept, 0.5);

    auto missing = j;
    missing.erase("project_id");
    EXPECT_TRUE(validate_explanation_json(missing).has_value());
    auto ragged = j;
    ragged["coefficients"][0].erase(0);
    EXPECT_TRUE(validate_explanation_json(ragged).has_value());
    auto wrong_months = j;
    wrong_months["months"] = 3;
    EXPECT_TRUE(validate_explanation_json(wrong_months).has_value());
}

TEST(Files, ProjectCoefficientsCsvRoundTrip) {
    std::vector<ProjectCoefficients> ps(2);
    for (std::size_t i = 0; i < 2; ++i) {
        ps[i].project_id = "p" + std::to_string(i);
        for (std::size_t f = 0; f < k_feature_count; ++f) {
            ps[i].median.push_back(0.1 * static_cast<double>(f) - static_cast<double>(i) / 3.0);
            ps[i].iqr.push_back(1.0 / static_cast<double>(f + 1));
        }
    }
    std::stringstream csv;
    write_project_coefficients_csv(csv, ps);
    auto back = read_project_coefficients_csv(csv);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].project_id, ps[i].project_id);
        EXPECT_EQ(back[i].median, ps[i].median);
        EXPECT_EQ(back[i].iqr, ps[i].iqr);
    }
}

TEST(Explain, DeterministicAcrossThreadCounts) {
    std::mt19937 rng(10);
    auto marg = uniform_marginals(rng);
    auto x = random_instance(rng, 2);
    BlackBox bb = [](const Eigen::MatrixXd& s) { return std::tanh(s.sum()); };
    ExplainerConfig cfg;
    cfg.num_samples = 500;
    cfg.threads = 1;
    auto a = explain_instance("d", x, marg, bb, cfg);
    cfg.threads = 4;
    auto b = explain_instance("d", x, marg, bb, cfg);
    EXPECT_EQ(a.coefficients, b.coefficients);
    EXPECT_EQ(a.intercept, b.intercept);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Explain, ConfigValidation) {
    ExplainerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.num_samples = 99;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.ridge = -1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.kernel_width = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
