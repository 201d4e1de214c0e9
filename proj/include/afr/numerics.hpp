#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "afr/error.hpp"
#include "afr/matrix.hpp"

namespace afr {

// log(sum_i exp(v_i)) with max-shift; exact for a single element.
inline double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw InvalidInput("log_sum_exp: empty input");
    double m = *std::max_element(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - m);
    return m + std::log(acc);
}

namespace detail {

// Max-shifted row softmax without input validation: propagates NaN instead
// of throwing, for gradient internals that gate on loss finiteness first.
inline Matrix softmax_rows_unvalidated(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        auto o = out.row(i);
        double m = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - m);
            sum += o[j];
        }
        for (std::size_t j = 0; j < in.size(); ++j) o[j] /= sum;
    }
    return out;
}

}  // namespace detail

// Row-wise softmax, shifted by the row max so large logits do not overflow.
inline Matrix softmax_rows(const Matrix& logits) {
    if (!logits.all_finite()) throw InvalidInput("softmax_rows: non-finite input");
    return detail::softmax_rows_unvalidated(logits);
}

inline double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// Rescales g to max_norm when its l2 norm exceeds max_norm; otherwise
// returns it unchanged. Rescaling repeats if rounding left the norm a hair
// above the bound, which makes the operation exactly idempotent.
inline std::vector<double> clip_gradient_norm(std::vector<double> gradient, double max_norm) {
    if (max_norm <= 0.0) throw InvalidInput("clip_gradient_norm: max_norm must be positive");
    double norm = l2_norm(gradient);
    while (norm > max_norm) {
        double scale = max_norm / norm;
        bool changed = false;
        for (double& g : gradient) {
            double next = g * scale;
            if (next != g) changed = true;
            g = next;
        }
        if (!changed) break;
        norm = l2_norm(gradient);
    }
    return gradient;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double softplus(double x) {
    // log(1 + e^x), split at 0 so neither branch overflows
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace afr
