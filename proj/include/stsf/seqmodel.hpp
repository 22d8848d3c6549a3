#pragma once
// Single-layer LSTM sequence classifier (last hidden state -> dropout -> dense -> softmax),
// trained one sequence at a time with Adam on the cross-entropy of the 2-way softmax.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
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
#include "stsf/stats.hpp"

namespace stsf {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// LSTM + dense head parameters. Gate blocks are stacked in the order input, forget, cell, output.
struct LstmParams {
    Eigen::MatrixXd w;        // 4H x D, input -> gates
    Eigen::MatrixXd u;        // 4H x H, recurrent
    Eigen::VectorXd b;        // 4H
    Eigen::MatrixXd dense_w;  // C x H
    Eigen::VectorXd dense_b;  // C

    Eigen::Index input_dim() const { return w.cols(); }
    Eigen::Index hidden() const { return u.cols(); }
    Eigen::Index classes() const { return dense_w.rows(); }

    static LstmParams zeros(Eigen::Index input_dim, Eigen::Index hidden, Eigen::Index classes = 2) {
        LstmParams p;
        p.w = Eigen::MatrixXd::Zero(4 * hidden, input_dim);
        p.u = Eigen::MatrixXd::Zero(4 * hidden, hidden);
        p.b = Eigen::VectorXd::Zero(4 * hidden);
        p.dense_w = Eigen::MatrixXd::Zero(classes, hidden);
        p.dense_b = Eigen::VectorXd::Zero(classes);
        return p;
    }

    /// Applies fn(name, tensor) to each parameter tensor in checkpoint order.
    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("w", w);
        fn("u", u);
        fn("b", b);
        fn("dense_w", dense_w);
        fn("dense_b", dense_b);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        fn("w", w);
        fn("u", u);
        fn("b", b);
        fn("dense_w", dense_w);
        fn("dense_b", dense_b);
    }

    bool all_finite() const {
        return w.allFinite() && u.allFinite() && b.allFinite() && dense_w.allFinite() && dense_b.allFinite();
    }

    bool operator==(const LstmParams& o) const {
        auto same = [](const auto& a, const auto& b) {
            return a.rows() == b.rows() && a.cols() == b.cols() &&
                   std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
        };
        return same(w, o.w) && same(u, o.u) && same(b, o.b) && same(dense_w, o.dense_w) && same(dense_b, o.dense_b);
    }
};

using LstmGradients = LstmParams;

/// Glorot-uniform input and dense weights, orthogonal recurrent blocks, forget-gate bias 1.
inline LstmParams init_params(Eigen::Index input_dim, Eigen::Index hidden, Eigen::Index classes, std::mt19937_64& rng) {
    LstmParams p = LstmParams::zeros(input_dim, hidden, classes);
    auto glorot = [&](Eigen::MatrixXd& m, double fan_in, double fan_out) {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = limit * dist(rng);
    };
    glorot(p.w, static_cast<double>(input_dim), static_cast<double>(4 * hidden));
    glorot(p.dense_w, static_cast<double>(hidden), static_cast<double>(classes));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int gate = 0; gate < 4; ++gate) {
        Eigen::MatrixXd g(hidden, hidden);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(hidden, hidden);
        p.u.block(gate * hidden, 0, hidden, hidden) = q;
    }
    p.b.segment(hidden, hidden).setOnes();
    return p;
}

enum class Mode { train, infer };

/// Activations of one forward pass, kept for backpropagation.
struct ForwardCache {
    Eigen::MatrixXd inputs;               // T x D
    std::vector<Eigen::VectorXd> gates;   // per step, 4H post-activation [i; f; g; o]
    std::vector<Eigen::VectorXd> cells;   // per step c_t
    std::vector<Eigen::VectorXd> hidden;  // per step h_t
    Eigen::VectorXd dropout_mask;         // scaled keep mask applied to h_T (ones in inference)
    Eigen::VectorXd dropped;              // h_T after dropout
    Eigen::VectorXd logits;
    Eigen::VectorXd probabilities;
};

namespace lstm_detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One recurrence step; writes gate activations, c_t and h_t.
inline void step(const LstmParams& p, const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::VectorXd& h_prev,
                 const Eigen::VectorXd& c_prev, Eigen::VectorXd& gates, Eigen::VectorXd& c, Eigen::VectorXd& h) {
    const Eigen::Index H = p.hidden();
    gates.noalias() = p.w * x;
    gates.noalias() += p.u * h_prev;
    gates += p.b;
    for (Eigen::Index k = 0; k < H; ++k) {
        gates[k] = sigmoid(gates[k]);
        gates[H + k] = sigmoid(gates[H + k]);
        gates[2 * H + k] = std::tanh(gates[2 * H + k]);
        gates[3 * H + k] = sigmoid(gates[3 * H + k]);
    }
    c = gates.segment(H, H).cwiseProduct(c_prev) + gates.segment(0, H).cwiseProduct(gates.segment(2 * H, H));
    h = gates.segment(3 * H, H).cwiseProduct(c.array().tanh().matrix());
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

inline void check_finite(const Eigen::VectorXd& v, const char* what, Eigen::Index step) {
    if (!v.allFinite())
        throw NumericError(std::string("non-finite ") + what + " at step " + std::to_string(step + 1));
}

}  // namespace lstm_detail

/// Scaled inverted-dropout keep mask: each unit kept with probability 1 - rate and scaled by 1 / (1 - rate).
inline Eigen::VectorXd make_dropout_mask(Eigen::Index hidden, double rate, std::mt19937_64& rng) {
    Eigen::VectorXd mask(hidden);
    if (rate <= 0.0) return mask.setOnes();
    std::bernoulli_distribution keep(1.0 - rate);
    for (Eigen::Index k = 0; k < hidden; ++k) mask[k] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    return mask;
}

/// Runs the LSTM over all rows of `sequence` (T x D) from zero initial state. In train mode the
/// given dropout mask (if any) multiplies the final hidden state; inference ignores it.
inline ForwardCache forward(const LstmParams& p, const Eigen::MatrixXd& sequence, Mode mode = Mode::infer,
                            const Eigen::VectorXd* dropout_mask = nullptr) {
    if (sequence.rows() == 0) throw std::invalid_argument("forward: empty sequence");
    if (sequence.cols() != p.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
    const Eigen::Index H = p.hidden();
    ForwardCache cache;
    cache.inputs = sequence;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd gates(4 * H), c_next(H), h_next(H);
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
        lstm_detail::step(p, sequence.row(t).transpose(), h, c, gates, c_next, h_next);
        lstm_detail::check_finite(c_next, "cell state", t);
        lstm_detail::check_finite(h_next, "hidden state", t);
        cache.gates.push_back(gates);
        cache.cells.push_back(c_next);
        cache.hidden.push_back(h_next);
        h = h_next;
        c = c_next;
    }
    if (mode == Mode::train && dropout_mask) {
        if (dropout_mask->size() != H) throw std::invalid_argument("forward: dropout mask size mismatch");
        cache.dropout_mask = *dropout_mask;
    } else {
        cache.dropout_mask = Eigen::VectorXd::Ones(H);
    }
    cache.dropped = h.cwiseProduct(cache.dropout_mask);
    cache.logits = p.dense_w * cache.dropped + p.dense_b;
    lstm_detail::check_finite(cache.logits, "logits", sequence.rows() - 1);
    cache.probabilities = lstm_detail::softmax(cache.logits);
    return cache;
}

/// P(class 1) for the whole sequence (inference mode) without keeping activations. The input
/// projection of all months is one matrix product.
inline double final_probability(const LstmParams& p, const Eigen::MatrixXd& sequence) {
    if (sequence.rows() == 0) throw std::invalid_argument("final_probability: empty sequence");
    if (sequence.cols() != p.input_dim()) throw std::invalid_argument("final_probability: input dimension mismatch");
    const Eigen::Index H = p.hidden();
    Eigen::MatrixXd projected = p.w * sequence.transpose();
    projected.colwise() += p.b;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H), gates(4 * H);
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
        gates.noalias() = projected.col(t);
        gates.noalias() += p.u * h;
        for (Eigen::Index k = 0; k < H; ++k) {
            double i = lstm_detail::sigmoid(gates[k]), f = lstm_detail::sigmoid(gates[H + k]);
            double g = std::tanh(gates[2 * H + k]), o = lstm_detail::sigmoid(gates[3 * H + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * std::tanh(c[k]);
        }
    }
    lstm_detail::check_finite(h, "hidden state", sequence.rows() - 1);
    return lstm_detail::softmax(p.dense_w * h + p.dense_b)[1];
}

/// P(class 1) after each prefix of the sequence (inference mode). Entry t uses rows 0..t only.
inline std::vector<double> prefix_probabilities(const LstmParams& p, const Eigen::MatrixXd& sequence) {
    if (sequence.cols() != p.input_dim()) throw std::invalid_argument("prefix_probabilities: input dimension mismatch");
    const Eigen::Index H = p.hidden();
    std::vector<double> out;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd gates(4 * H), c_next(H), h_next(H);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(H);
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
        lstm_detail::step(p, sequence.row(t).transpose(), h, c, gates, c_next, h_next);
        lstm_detail::check_finite(h_next, "hidden state", t);
        h = h_next;
        c = c_next;
        Eigen::VectorXd dropped = h.cwiseProduct(ones);
        Eigen::VectorXd logits = p.dense_w * dropped + p.dense_b;
        out.push_back(lstm_detail::softmax(logits)[1]);
    }
    return out;
}

/// Cross-entropy of the softmax output against the one-hot label.
inline double loss(const ForwardCache& cache, int label) {
    return -std::log(std::max(cache.probabilities[label], std::numeric_limits<double>::min()));
}

/// Exact gradients of loss_weight * loss(label) by backpropagation through time.
inline LstmGradients backward(const LstmParams& p, const ForwardCache& cache, int label, double loss_weight = 1.0) {
    const Eigen::Index H = p.hidden();
    const Eigen::Index T = cache.inputs.rows();
    LstmGradients g = LstmParams::zeros(p.input_dim(), H, p.classes());

    Eigen::VectorXd dlogits = cache.probabilities;
    dlogits[label] -= 1.0;
    dlogits *= loss_weight;
    g.dense_w.noalias() = dlogits * cache.dropped.transpose();
    g.dense_b = dlogits;

    Eigen::VectorXd dh = (p.dense_w.transpose() * dlogits).cwiseProduct(cache.dropout_mask);
    Eigen::VectorXd dc = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd da(4 * H);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const auto& gt = cache.gates[static_cast<std::size_t>(t)];
        const auto& ct = cache.cells[static_cast<std::size_t>(t)];
        const Eigen::VectorXd& c_prev = t > 0 ? cache.cells[static_cast<std::size_t>(t - 1)] : zero;
        const Eigen::VectorXd& h_prev = t > 0 ? cache.hidden[static_cast<std::size_t>(t - 1)] : zero;
        auto i = gt.segment(0, H).array();
        auto f = gt.segment(H, H).array();
        auto gg = gt.segment(2 * H, H).array();
        auto o = gt.segment(3 * H, H).array();
        Eigen::ArrayXd tc = ct.array().tanh();

        Eigen::ArrayXd dct = dc.array() + dh.array() * o * (1.0 - tc * tc);
        da.segment(0, H) = (dct * gg * i * (1.0 - i)).matrix();
        da.segment(H, H) = (dct * c_prev.array() * f * (1.0 - f)).matrix();
        da.segment(2 * H, H) = (dct * i * (1.0 - gg * gg)).matrix();
        da.segment(3 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();

        g.w.noalias() += da * cache.inputs.row(t);
        g.u.noalias() += da * h_prev.transpose();
        g.b += da;
        dh.noalias() = p.u.transpose() * da;
        dc = (dct * f).matrix();
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient");
    return g;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(const LstmParams& shape, AdamConfig config) : config_(config) {
        m_ = LstmParams::zeros(shape.input_dim(), shape.hidden(), shape.classes());
        v_ = m_;
    }

    void step(LstmParams& params, const LstmGradients& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
            m = config_.beta1 * m + (1.0 - config_.beta1) * g;
            v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
            theta.array() -= config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
        };
        update(params.w, grads.w, m_.w, v_.w);
        update(params.u, grads.u, m_.u, v_.u);
        update(params.b, grads.b, m_.b, v_.b);
        update(params.dense_w, grads.dense_w, m_.dense_w, v_.dense_w);
        update(params.dense_b, grads.dense_b, m_.dense_b, v_.dense_b);
    }

private:
    AdamConfig config_;
    LstmParams m_, v_;
    long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    AdamConfig adam;
    double dropout_rate = 0.3;
    int epochs = 50;
    int patience = 5;                  // epochs without validation improvement before stopping
    std::uint64_t seed = 42;
    double train_fraction = 0.8;       // project-level train/test split
    double validation_fraction = 0.1;  // share of the training projects held out for early stopping
    int repeats = 10;
    Eigen::Index hidden = 64;
    bool class_weighting = false;
    unsigned threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must be in [0, 1)");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must be in (0, 1)");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw std::invalid_argument("validation_fraction must be in [0, 1)");
        if (epochs < 1 || repeats < 1 || hidden < 1) throw std::invalid_argument("epochs, repeats and hidden must be >= 1");
    }
};

/// Trained network plus the scaler fitted on its training projects.
struct TrainedModel {
    LstmParams params;
    Scaler scaler;
};

inline Eigen::MatrixXd to_matrix(const FeatureSequence& seq, std::size_t max_months = std::numeric_limits<std::size_t>::max()) {
    std::size_t T = std::min(seq.months.size(), max_months);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(k_feature_count));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t f = 0; f < k_feature_count; ++f)
            m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) = seq.months[t][f];
    return m;
}

struct FitLog {
    std::vector<double> train_loss;       // mean per-sample loss during each epoch
    std::vector<double> validation_loss;  // empty when no validation set
    int best_epoch = 0;                   // 1-based epoch whose parameters were kept
};

struct FitResult {
    TrainedModel model;
    FitLog log;
};

inline double mean_loss(const LstmParams& p, std::span<const Eigen::MatrixXd> xs, std::span<const int> ys) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += loss(forward(p, xs[i]), ys[i]);
    return s / static_cast<double>(xs.size());
}

/// Fits one model: scaler on `train`, per-sample Adam updates in a seeded shuffled order,
/// early stopping on `validation` loss (skipped when validation is empty).
inline FitResult fit_model(std::span<const FeatureSequence> train, std::span<const FeatureSequence> validation,
                           const TrainConfig& config, std::uint64_t seed) {
    config.validate();
    if (train.empty()) throw ModelError("fit_model: empty training set");
    std::mt19937_64 rng(seed);
    FitResult out;
    out.model.scaler = fit_scaler(train);
    out.model.params = init_params(static_cast<Eigen::Index>(k_feature_count), config.hidden, 2, rng);

    std::vector<Eigen::MatrixXd> xs, vx;
    std::vector<int> ys, vy;
    for (const auto& s : train) {
        xs.push_back(to_matrix(apply_scaler(out.model.scaler, s)));
        ys.push_back(s.label);
    }
    for (const auto& s : validation) {
        vx.push_back(to_matrix(apply_scaler(out.model.scaler, s)));
        vy.push_back(s.label);
    }

    std::array<double, 2> class_weight{1.0, 1.0};
    if (config.class_weighting) {
        std::array<double, 2> n{0.0, 0.0};
        for (int y : ys) n[static_cast<std::size_t>(y)] += 1.0;
        for (std::size_t k = 0; k < 2; ++k)
            class_weight[k] = n[k] > 0 ? static_cast<double>(ys.size()) / (2.0 * n[k]) : 1.0;
    }

    Adam adam(out.model.params, config.adam);
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    LstmParams best = out.model.params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (auto idx : order) {
            Eigen::VectorXd mask = make_dropout_mask(config.hidden, config.dropout_rate, rng);
            auto cache = forward(out.model.params, xs[idx], Mode::train, &mask);
            epoch_loss += loss(cache, ys[idx]);
            auto grads = backward(out.model.params, cache, ys[idx], class_weight[static_cast<std::size_t>(ys[idx])]);
            adam.step(out.model.params, grads);
        }
        out.log.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        if (vx.empty()) {
            out.log.best_epoch = epoch;
            continue;
        }
        double val = mean_loss(out.model.params, vx, vy);
        out.log.validation_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = out.model.params;
            out.log.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    if (!vx.empty()) out.model.params = best;
    return out;
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Stratified project-level split: per class, round(train_fraction * n) projects train (at
/// least one), the rest test; validation_fraction of each class's training share is held out
/// for early stopping when that leaves at least one training project of the class.
inline Split stratified_split(std::span<const FeatureSequence> corpus, const TrainConfig& config, std::mt19937_64& rng) {
    Split s;
    for (int cls = 0; cls <= 1; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (corpus[i].label == cls) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_train = static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(idx.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size());
        auto n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(n_train)));
        if (n_val >= n_train) n_val = n_train - 1;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (k < n_val) s.validation.push_back(idx[k]);
            else if (k < n_train) s.train.push_back(idx[k]);
            else s.test.push_back(idx[k]);
        }
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// ---------------------------------------------------------------------------
// Forecasting and evaluation

struct ForecastTrajectory {
    std::string project_id;
    std::vector<double> forecasts;  // entry m-1 = P(graduate | first m months)
};

/// Monthly graduation forecasts with capped history, one per incubation month.
inline ForecastTrajectory forecast_trajectory(const TrainedModel& model, const FeatureSequence& seq) {
    ForecastTrajectory t;
    t.project_id = seq.project_id;
    if (seq.months.empty()) return t;
    t.forecasts = prefix_probabilities(model.params, to_matrix(apply_scaler(model.scaler, seq)));
    return t;
}

struct ClassificationMetrics {
    std::size_t n = 0;
    double accuracy = 0.0;
    double precision = 0.0;  // 0 when nothing is predicted positive
    double recall = 0.0;     // 0 when there are no positives
    double f1 = 0.0;
};

/// Positive-class metrics with predictions p >= threshold. nullopt for an empty set.
inline std::optional<ClassificationMetrics> classification_metrics(std::span<const double> probabilities,
                                                                   std::span<const int> labels, double threshold = 0.5) {
    if (probabilities.empty()) return std::nullopt;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        bool pred = probabilities[i] >= threshold;
        bool pos = labels[i] == 1;
        if (pred && pos) ++tp;
        else if (pred) ++fp;
        else if (pos) ++fn;
        else ++tn;
    }
    ClassificationMetrics m;
    m.n = probabilities.size();
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.n);
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

/// Metrics of the month-m forecasts over test projects whose incubation lasts at least m months.
inline std::optional<ClassificationMetrics> evaluate(const TrainedModel& model, std::span<const FeatureSequence> test,
                                                     std::size_t month, double threshold = 0.5) {
    if (month < 1) throw std::invalid_argument("evaluate: month must be >= 1");
    std::vector<double> probs;
    std::vector<int> labels;
    for (const auto& seq : test) {
        if (seq.months.size() < month) continue;
        FeatureSequence capped{seq.project_id, seq.label, {seq.months.begin(), seq.months.begin() + static_cast<std::ptrdiff_t>(month)}};
        auto cache = forward(model.params, to_matrix(apply_scaler(model.scaler, capped)));
        probs.push_back(cache.probabilities[1]);
        labels.push_back(seq.label);
    }
    return classification_metrics(probs, labels, threshold);
}

/// Metrics using each project's forecast at its own final month.
inline std::optional<ClassificationMetrics> evaluate_final(const TrainedModel& model, std::span<const FeatureSequence> test,
                                                           double threshold = 0.5) {
    std::vector<double> probs;
    std::vector<int> labels;
    for (const auto& seq : test) {
        if (seq.months.empty()) continue;
        probs.push_back(forward(model.params, to_matrix(apply_scaler(model.scaler, seq))).probabilities[1]);
        labels.push_back(seq.label);
    }
    return classification_metrics(probs, labels, threshold);
}

struct MetricSummary {
    std::size_t repeats = 0;  // repeats with a non-empty eligible set
    double accuracy_mean = 0, accuracy_se = 0;
    double precision_mean = 0, precision_se = 0;
    double recall_mean = 0, recall_se = 0;
    double f1_mean = 0, f1_se = 0;
};

inline MetricSummary summarize(std::span<const ClassificationMetrics> runs) {
    MetricSummary s;
    s.repeats = runs.size();
    std::vector<double> a, p, r, f;
    for (const auto& m : runs) {
        a.push_back(m.accuracy);
        p.push_back(m.precision);
        r.push_back(m.recall);
        f.push_back(m.f1);
    }
    s.accuracy_mean = mean(a);
    s.accuracy_se = standard_error(a);
    s.precision_mean = mean(p);
    s.precision_se = standard_error(p);
    s.recall_mean = mean(r);
    s.recall_se = standard_error(r);
    s.f1_mean = mean(f);
    s.f1_se = standard_error(f);
    return s;
}

struct EvalReport {
    std::vector<std::optional<MetricSummary>> by_month;  // index m-1; nullopt when no repeat had eligible projects
    MetricSummary final_month;                           // each test project at its own last month
};

struct RepeatRun {
    std::uint64_t seed = 0;
    FitResult fit;
    std::vector<std::string> train_ids, validation_ids, test_ids;
    std::vector<std::optional<ClassificationMetrics>> by_month;
    std::optional<ClassificationMetrics> final_month;
};

struct TrainOutcome {
    TrainedModel model;  // the first repeat's model
    EvalReport report;
    std::vector<RepeatRun> repeats;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Repeated train/test evaluation. Each repeat draws a fresh stratified split from its own
/// derived seed, so results do not depend on how repeats are scheduled across threads.
inline TrainOutcome train(std::span<const FeatureSequence> corpus, const TrainConfig& config) {
    config.validate();
    bool has0 = false, has1 = false;
    for (const auto& s : corpus) {
        if (s.months.empty()) throw ModelError("train: project " + s.project_id + " has no months");
        (s.label == 1 ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw ModelError("train: corpus must contain both graduated and retired projects");

    std::size_t max_len = 0;
    for (const auto& s : corpus) max_len = std::max(max_len, s.months.size());

    TrainOutcome out;
    out.repeats.resize(static_cast<std::size_t>(config.repeats));
    unsigned threads = config.threads ? config.threads : default_thread_count();
    parallel_for(out.repeats.size(), threads, [&](std::size_t r) {
        RepeatRun run;
        run.seed = derive_seed(config.seed, r);
        std::mt19937_64 rng(run.seed);
        Split split = stratified_split(corpus, config, rng);
        std::vector<FeatureSequence> tr, va, te;
        for (auto i : split.train) {
            tr.push_back(corpus[i]);
            run.train_ids.push_back(corpus[i].project_id);
        }
        for (auto i : split.validation) {
            va.push_back(corpus[i]);
            run.validation_ids.push_back(corpus[i].project_id);
        }
        for (auto i : split.test) {
            te.push_back(corpus[i]);
            run.test_ids.push_back(corpus[i].project_id);
        }
        run.fit = fit_model(tr, va, config, derive_seed(run.seed, 1));
        for (std::size_t m = 1; m <= max_len; ++m) run.by_month.push_back(evaluate(run.fit.model, te, m));
        run.final_month = evaluate_final(run.fit.model, te);
        out.repeats[r] = std::move(run);
    });

    out.model = out.repeats.front().fit.model;
    for (std::size_t m = 0; m < max_len; ++m) {
        std::vector<ClassificationMetrics> runs;
        for (const auto& r : out.repeats)
            if (r.by_month[m]) runs.push_back(*r.by_month[m]);
        out.report.by_month.push_back(runs.empty() ? std::nullopt : std::optional(summarize(runs)));
    }
    std::vector<ClassificationMetrics> finals;
    for (const auto& r : out.repeats)
        if (r.final_month) finals.push_back(*r.final_month);
    out.report.final_month = summarize(finals);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic line, little-endian u64 header length, JSON header, then every tensor as
// row-major little-endian float64 in the order w, u, b, dense_w, dense_b.

inline constexpr int k_checkpoint_format_version = 1;
inline constexpr std::string_view k_checkpoint_magic = "STSF-LSTM-CHECKPOINT\n";

namespace checkpoint_detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}
inline std::uint64_t get_u64(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw ModelError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}
inline void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

template <typename Tensor>
void write_row_major(std::ostream& out, const Tensor& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) put_f64(out, t(r, c));
}
template <typename Tensor>
void read_row_major(std::istream& in, Tensor& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = get_f64(in);
}
}  // namespace checkpoint_detail

inline void save_checkpoint(std::ostream& out, const TrainedModel& model) {
    nlohmann::json header;
    header["format_version"] = k_checkpoint_format_version;
    header["input_dim"] = model.params.input_dim();
    header["hidden"] = model.params.hidden();
    header["classes"] = model.params.classes();
    header["columns"] = std::vector<std::string>(k_feature_names.begin(), k_feature_names.end());
    header["scaler"] = {{"min", std::vector<double>(model.scaler.min.begin(), model.scaler.min.end())},
                        {"max", std::vector<double>(model.scaler.max.begin(), model.scaler.max.end())}};
    nlohmann::json tensors = nlohmann::json::array();
    model.params.for_each([&](const char* name, const auto& t) {
        tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    });
    header["tensors"] = tensors;
    std::string text = header.dump();
    out.write(k_checkpoint_magic.data(), static_cast<std::streamsize>(k_checkpoint_magic.size()));
    checkpoint_detail::put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    model.params.for_each([&](const char*, const auto& t) { checkpoint_detail::write_row_major(out, t); });
    if (!out) throw ModelError("failed to write checkpoint");
}

/// Rejects a different format_version or feature column order.
inline TrainedModel load_checkpoint(std::istream& in) {
    std::string magic(k_checkpoint_magic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || magic != k_checkpoint_magic) throw ModelError("not a checkpoint file");
    auto len = checkpoint_detail::get_u64(in);
    if (len > (1u << 24)) throw ModelError("checkpoint header too large");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ModelError("checkpoint truncated");
    auto header = nlohmann::json::parse(text);
    if (header.at("format_version").get<int>() != k_checkpoint_format_version)
        throw ModelError("unsupported checkpoint format_version " + header.at("format_version").dump());
    auto columns = header.at("columns").get<std::vector<std::string>>();
    if (columns != std::vector<std::string>(k_feature_names.begin(), k_feature_names.end()))
        throw ModelError("checkpoint feature column order does not match this build");
    auto d = header.at("input_dim").get<Eigen::Index>();
    auto h = header.at("hidden").get<Eigen::Index>();
    auto c = header.at("classes").get<Eigen::Index>();
    if (d != static_cast<Eigen::Index>(k_feature_count) || c != 2 || h < 1) throw ModelError("checkpoint shape mismatch");
    TrainedModel model;
    auto mn = header.at("scaler").at("min").get<std::vector<double>>();
    auto mx = header.at("scaler").at("max").get<std::vector<double>>();
    if (mn.size() != k_feature_count || mx.size() != k_feature_count) throw ModelError("checkpoint scaler size mismatch");
    std::copy(mn.begin(), mn.end(), model.scaler.min.begin());
    std::copy(mx.begin(), mx.end(), model.scaler.max.begin());
    model.params = LstmParams::zeros(d, h, c);
    model.params.for_each([&](const char*, auto& t) { checkpoint_detail::read_row_major(in, t); });
    if (!model.params.all_finite()) throw ModelError("checkpoint contains non-finite parameters");
    return model;
}

inline void write_trajectories_csv(std::ostream& out, std::span<const ForecastTrajectory> trajectories) {
    out << "project_id,month,forecast\n";
    for (const auto& t : trajectories)
        for (std::size_t m = 0; m < t.forecasts.size(); ++m)
            out << csv_escape(t.project_id) << ',' << (m + 1) << ',' << format_double(t.forecasts[m]) << '\n';
}

/// Reads `project_id,month,forecast`; months of a project must be 1, 2, ... in order.
inline std::vector<ForecastTrajectory> read_trajectories_csv(std::istream& in) {
    CsvReader reader(in);
    auto c_id = reader.require_column("project_id");
    auto c_month = reader.require_column("month");
    auto c_val = reader.require_column("forecast");
    std::vector<ForecastTrajectory> out;
    std::vector<std::string> row;
    while (reader.next(row)) {
        auto month = parse_double(row[c_month]);
        auto val = parse_double(row[c_val]);
        if (!month || !val) throw CsvError("trajectory CSV: bad row at line " + std::to_string(reader.line()));
        if (out.empty() || out.back().project_id != row[c_id]) out.push_back(ForecastTrajectory{row[c_id], {}});
        if (*month != static_cast<double>(out.back().forecasts.size() + 1))
            throw CsvError("trajectory CSV: months out of order for " + row[c_id]);
        out.back().forecasts.push_back(*val);
    }
    return out;
}

}  // namespace stsf
