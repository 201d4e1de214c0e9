#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afr/error.hpp"
#include "afr/matrix.hpp"

#include "json.hpp"

namespace afr {

struct GroupDiagnostics {
    std::vector<double> per_group_accuracy;
    double worst_group_accuracy = 0.0;
    double mean_accuracy = 0.0;  // prevalence-weighted
    std::vector<std::size_t> group_counts;
    std::vector<double> prevalence;
};

// argmax per row, ties to the lowest class index.
inline std::vector<std::uint32_t> argmax_rows(const Matrix& scores) {
    std::vector<std::uint32_t> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out[i] = static_cast<std::uint32_t>(best);
    }
    return out;
}

/**
 * Per-group accuracy, worst-group accuracy (the minimum) and the
 * prevalence-weighted mean. prevalence carries the group fractions of the
 * training distribution and must cover every group.
 */
inline GroupDiagnostics evaluate_groups(std::span<const std::uint32_t> predictions,
                                        std::span<const std::uint32_t> labels,
                                        std::span<const std::uint32_t> groups,
                                        std::uint32_t num_groups,
                                        std::span<const double> prevalence) {
    const std::size_t n = predictions.size();
    if (labels.size() != n || groups.size() != n)
        throw InvalidInput("evaluate_groups: input sizes do not match");
    if (n == 0) throw InvalidInput("evaluate_groups: empty evaluation set");
    if (prevalence.size() != num_groups)
        throw InvalidInput("evaluate_groups: prevalence must have one entry per group");
    double psum = 0.0;
    for (double p : prevalence) {
        if (!(p >= 0.0)) throw InvalidInput("evaluate_groups: negative prevalence entry");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-9)
        throw InvalidInput("evaluate_groups: prevalence must sum to 1");

    GroupDiagnostics diag;
    diag.group_counts.assign(num_groups, 0);
    std::vector<double> correct(num_groups, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (groups[i] >= num_groups)
            throw InvalidInput("evaluate_groups: group index out of range");
        diag.group_counts[groups[i]] += 1;
        if (predictions[i] == labels[i]) correct[groups[i]] += 1.0;
    }

    std::string missing;
    for (std::uint32_t g = 0; g < num_groups; ++g) {
        if (diag.group_counts[g] != 0) continue;
        if (!missing.empty()) missing += ", ";
        missing += std::to_string(g);
    }
    if (!missing.empty())
        throw InvalidInput("evaluate_groups: groups absent from evaluation set: " + missing);

    diag.per_group_accuracy.resize(num_groups);
    diag.worst_group_accuracy = 1.0;
    diag.mean_accuracy = 0.0;
    for (std::uint32_t g = 0; g < num_groups; ++g) {
        diag.per_group_accuracy[g] = correct[g] / static_cast<double>(diag.group_counts[g]);
        diag.worst_group_accuracy = std::min(diag.worst_group_accuracy, diag.per_group_accuracy[g]);
        diag.mean_accuracy += prevalence[g] * diag.per_group_accuracy[g];
    }
    diag.prevalence.assign(prevalence.begin(), prevalence.end());
    return diag;
}

inline GroupDiagnostics evaluate_probs(const Matrix& probs, std::span<const std::uint32_t> labels,
                                       std::span<const std::uint32_t> groups,
                                       std::uint32_t num_groups,
                                       std::span<const double> prevalence) {
    auto predictions = argmax_rows(probs);
    return evaluate_groups(predictions, labels, groups, num_groups, prevalence);
}

inline nlohmann::json diagnostics_json(const GroupDiagnostics& diag) {
    return nlohmann::json{
        {"per_group_accuracy", diag.per_group_accuracy},
        {"worst_group_accuracy", diag.worst_group_accuracy},
        {"mean_accuracy", diag.mean_accuracy},
        {"group_counts", diag.group_counts},
        {"prevalence", diag.prevalence},
    };
}

}  // namespace afr
