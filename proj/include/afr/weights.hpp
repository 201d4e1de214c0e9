#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afr/error.hpp"
#include "afr/matrix.hpp"

namespace afr {

// Functional form of the per-example reweighting coefficients. All forms
// are normalized to sum to one and stay fixed through retraining.
enum class WeightKind {
    AfrExponential,      // mu ~ beta_y * exp(-gamma * p_hat)
    Focal,               // mu ~ beta_y * (1 - p_hat)^gamma
    Power,               // mu ~ beta_y * p_hat^(-gamma)
    ClassBalancedOnly,   // mu ~ beta_y (the gamma = 0 case)
    JttBinary,           // mu ~ upweight_lambda if misclassified, else 1
    OracleGroupBalanced  // mu ~ 1 / |G_{g_i}| (requires group labels)
};

inline const char* weight_kind_name(WeightKind k) {
    switch (k) {
        case WeightKind::AfrExponential: return "afr-exponential";
        case WeightKind::Focal: return "focal";
        case WeightKind::Power: return "power";
        case WeightKind::ClassBalancedOnly: return "class-balanced";
        case WeightKind::JttBinary: return "jtt-binary";
        case WeightKind::OracleGroupBalanced: return "oracle-group-balanced";
    }
    return "?";
}

struct WeightScheme {
    WeightKind kind = WeightKind::AfrExponential;
    double gamma = 0.0;            // unused for ClassBalancedOnly / OracleGroupBalanced
    double upweight_lambda = 1.0;  // JttBinary only
};

struct WeightVector {
    std::vector<double> mu;  // nonnegative, sums to 1
};

// p_hat_i = probs[i, labels[i]], the probability assigned to the correct
// class.
inline std::vector<double> correct_class_probs(const Matrix& probs,
                                               std::span<const std::uint32_t> labels) {
    if (labels.size() != probs.rows())
        throw InvalidInput("correct_class_probs: label count does not match rows");
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto row = probs.row(i);
        double sum = 0.0;
        for (double v : row) sum += v;
        if (!std::isfinite(sum) || std::abs(sum - 1.0) > 1e-9)
            throw InvalidInput("correct_class_probs: row " + std::to_string(i) +
                               " is not a probability distribution");
    }
    std::vector<double> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (labels[i] >= probs.cols())
            throw InvalidInput("correct_class_probs: label index out of range at row " +
                               std::to_string(i));
        out[i] = probs(i, labels[i]);
    }
    return out;
}

namespace detail {

// Counts per label value; beta_y = 1 / count_y uses these.
inline std::vector<double> class_counts(std::span<const std::uint32_t> labels) {
    std::uint32_t max_label = 0;
    for (std::uint32_t y : labels) max_label = std::max(max_label, y);
    std::vector<double> counts(max_label + 1, 0.0);
    for (std::uint32_t y : labels) counts[y] += 1.0;
    return counts;
}

inline WeightVector normalize(std::vector<double> w) {
    double sum = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw InvalidInput("weights: non-finite or negative unnormalized weight");
        sum += v;
    }
    if (!(sum > 0.0)) throw InvalidInput("weights: unnormalized weights sum to zero");
    for (double& v : w) v /= sum;
    return WeightVector{std::move(w)};
}

// exp(log_w - max(log_w)) then normalize; keeps very large gamma usable.
inline WeightVector normalize_log(std::vector<double> log_w) {
    double m = *std::max_element(log_w.begin(), log_w.end());
    for (double& v : log_w) v = std::exp(v - m);
    return normalize(std::move(log_w));
}

}  // namespace detail

/**
 * Per-example weights from the stage-1 correct-class probabilities. The
 * weights are a function of fixed inputs only; nothing here depends on the
 * retraining state. p_hat values are clamped into [1e-12, 1 - 1e-12] before
 * any exponentiation: stage-1 softmax output legitimately rounds to 0 or 1
 * in double precision, and the power form diverges at the boundary.
 */
inline WeightVector compute_weights(const WeightScheme& scheme, std::span<const double> p_hat,
                                    std::span<const std::uint32_t> labels,
                                    const std::vector<std::uint8_t>* correct = nullptr,
                                    const std::vector<std::uint32_t>* groups = nullptr) {
    const std::size_t m = p_hat.size();
    if (m == 0) throw InvalidInput("compute_weights: empty input");
    if (labels.size() != m) throw InvalidInput("compute_weights: label count mismatch");
    if (scheme.gamma < 0.0) throw InvalidInput("compute_weights: gamma must be nonnegative");

    std::vector<double> p(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(p_hat[i]) || p_hat[i] < 0.0 || p_hat[i] > 1.0)
            throw InvalidInput("compute_weights: p_hat outside [0, 1] at index " +
                               std::to_string(i));
        p[i] = std::clamp(p_hat[i], 1e-12, 1.0 - 1e-12);
    }

    switch (scheme.kind) {
        case WeightKind::AfrExponential:
        case WeightKind::ClassBalancedOnly: {
            double gamma = scheme.kind == WeightKind::ClassBalancedOnly ? 0.0 : scheme.gamma;
            auto counts = detail::class_counts(labels);
            std::vector<double> log_w(m);
            for (std::size_t i = 0; i < m; ++i)
                log_w[i] = -gamma * p[i] - std::log(counts[labels[i]]);
            return detail::normalize_log(std::move(log_w));
        }
        case WeightKind::Focal: {
            auto counts = detail::class_counts(labels);
            std::vector<double> log_w(m);
            for (std::size_t i = 0; i < m; ++i)
                log_w[i] = scheme.gamma * std::log1p(-p[i]) - std::log(counts[labels[i]]);
            return detail::normalize_log(std::move(log_w));
        }
        case WeightKind::Power: {
            auto counts = detail::class_counts(labels);
            std::vector<double> log_w(m);
            for (std::size_t i = 0; i < m; ++i)
                log_w[i] = -scheme.gamma * std::log(p[i]) - std::log(counts[labels[i]]);
            return detail::normalize_log(std::move(log_w));
        }
        case WeightKind::JttBinary: {
            if (!correct || correct->size() != m)
                throw InvalidInput("compute_weights: JttBinary requires a correctness vector");
            if (!(scheme.upweight_lambda > 0.0))
                throw InvalidInput("compute_weights: upweight_lambda must be positive");
            std::vector<double> w(m);
            for (std::size_t i = 0; i < m; ++i)
                w[i] = (*correct)[i] ? 1.0 : scheme.upweight_lambda;
            return detail::normalize(std::move(w));
        }
        case WeightKind::OracleGroupBalanced: {
            if (!groups || groups->size() != m)
                throw InvalidInput("compute_weights: OracleGroupBalanced requires group labels");
            std::uint32_t max_g = 0;
            for (std::uint32_t g : *groups) max_g = std::max(max_g, g);
            std::vector<double> group_counts(max_g + 1, 0.0);
            for (std::uint32_t g : *groups) group_counts[g] += 1.0;
            std::vector<double> w(m);
            for (std::size_t i = 0; i < m; ++i) w[i] = 1.0 / group_counts[(*groups)[i]];
            return detail::normalize(std::move(w));
        }
    }
    throw InvalidInput("compute_weights: unknown scheme");
}

// Total weight mass per group: entry g = sum of mu_i over i with g_i = g.
inline std::vector<double> group_aggregated_weights(const WeightVector& mu,
                                                    std::span<const std::uint32_t> groups,
                                                    std::uint32_t num_groups) {
    if (groups.size() != mu.mu.size())
        throw InvalidInput("group_aggregated_weights: group count mismatch");
    std::vector<double> agg(num_groups, 0.0);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] >= num_groups)
            throw InvalidInput("group_aggregated_weights: group index out of range");
        agg[groups[i]] += mu.mu[i];
    }
    return agg;
}

// Kish effective sample size 1 / sum(mu_i^2); equals M for uniform weights
// and 1 for a one-hot vector.
inline double effective_sample_size(const WeightVector& mu) {
    if (mu.mu.empty()) throw InvalidInput("effective_sample_size: empty weight vector");
    double acc = 0.0;
    for (double v : mu.mu) acc += v * v;
    return 1.0 / acc;
}

}  // namespace afr
