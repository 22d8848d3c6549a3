#pragma once
// Statistical tools: descriptive helpers, Welch's t-test, coordinate-descent Lasso.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

namespace stsf {

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator); 0 for fewer than two values.
inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

/// Median; the mean of the two middle values for even sizes. NaN for an empty input.
inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    auto n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    double hi = *mid;
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

/// Standard error of the mean; 0 for fewer than two values.
inline double standard_error(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    return std::sqrt(sample_variance(v) / static_cast<double>(v.size()));
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

/// Two-sided Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.
inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test needs at least two samples per group");
    double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
    double m1 = mean(a), m2 = mean(b);
    double s1 = sample_variance(a) / n1, s2 = sample_variance(b) / n2;
    TTestResult r;
    double se2 = s1 + s2;
    if (se2 == 0.0) {
        r.df = n1 + n2 - 2.0;
        if (m1 == m2) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = m1 > m2 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = (m1 - m2) / std::sqrt(se2);
    r.df = se2 * se2 / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
    boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(dist, -std::abs(r.t)));
    return r;
}

struct LassoConfig {
    double lambda = 0.001;
    int max_iter = 100000;
    double tolerance = 1e-10;
};

struct LassoResult {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    std::vector<std::size_t> selected;  // indices with nonzero coefficient
    int iterations = 0;
    bool converged = false;
};

/// Cyclic coordinate descent for
///   (1 / 2n) * ||y - b0 - X beta||^2 + lambda * ||beta||_1
/// with an unpenalized intercept (columns and response are centered first).
/// Stops when the largest coefficient change in a sweep is below `tolerance`.
inline LassoResult lasso_select(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const LassoConfig& config = {}) {
    if (config.lambda < 0.0) throw std::invalid_argument("lasso lambda must be >= 0");
    if (design.rows() != response.size()) throw std::invalid_argument("lasso: design/response size mismatch");
    const auto n = static_cast<double>(design.rows());
    const Eigen::Index p = design.cols();

    Eigen::RowVectorXd x_mean = design.colwise().mean();
    double y_mean = response.mean();
    Eigen::MatrixXd x = design.rowwise() - x_mean;
    Eigen::VectorXd r = response.array() - y_mean;  // residual with beta = 0
    Eigen::VectorXd col_sq = x.colwise().squaredNorm().transpose() / n;

    LassoResult out;
    out.coefficients = Eigen::VectorXd::Zero(p);
    auto soft = [](double z, double g) { return z > g ? z - g : (z < -g ? z + g : 0.0); };

    for (out.iterations = 1; out.iterations <= config.max_iter; ++out.iterations) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) continue;
            double old = out.coefficients[j];
            double rho = x.col(j).dot(r) / n + col_sq[j] * old;
            double updated = soft(rho, config.lambda) / col_sq[j];
            if (updated != old) {
                r -= x.col(j) * (updated - old);
                out.coefficients[j] = updated;
                max_delta = std::max(max_delta, std::abs(updated - old));
            }
        }
        if (max_delta < config.tolerance) {
            out.converged = true;
            break;
        }
    }
    if (out.iterations > config.max_iter) out.iterations = config.max_iter;
    out.intercept = y_mean - x_mean.dot(out.coefficients);
    for (Eigen::Index j = 0; j < p; ++j)
        if (out.coefficients[j] != 0.0) out.selected.push_back(static_cast<std::size_t>(j));
    return out;
}

/// Smallest lambda at which every coefficient is zero.
inline double lasso_lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
    const auto n = static_cast<double>(design.rows());
    Eigen::MatrixXd x = design.rowwise() - design.colwise().mean();
    Eigen::VectorXd y = response.array() - response.mean();
    return (x.transpose() * y).cwiseAbs().maxCoeff() / n;
}

}  // namespace stsf
