#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afr/error.hpp"
#include "afr/matrix.hpp"
#include "afr/random.hpp"

namespace afr {

enum class Split : std::uint8_t { Erm = 0, Rw = 1, Val = 2, Test = 3 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Erm: return "ERM";
        case Split::Rw: return "RW";
        case Split::Val: return "VAL";
        case Split::Test: return "TEST";
    }
    return "?";
}

/**
 * A set of feature vectors with class labels, optional group labels and a
 * split tag per row. Group indices encode (class, spurious attribute) pairs
 * as g = y * |S| + s.
 */
struct EmbeddingDataset {
    Matrix features;                                    // N x D
    std::vector<std::uint32_t> labels;                  // in [0, num_classes)
    std::optional<std::vector<std::uint32_t>> groups;   // in [0, num_groups)
    std::vector<Split> split_tags;
    std::uint32_t num_classes = 0;
    std::uint32_t num_groups = 0;                       // 0 when groups are absent

    std::size_t n() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }

    void validate() const {
        if (labels.size() != n() || split_tags.size() != n())
            throw InvalidInput("dataset: labels/split_tags length does not match feature rows");
        if (groups && groups->size() != n())
            throw InvalidInput("dataset: groups length does not match feature rows");
        if (groups.has_value() != (num_groups > 0))
            throw InvalidInput("dataset: num_groups inconsistent with group presence");
        if (num_classes == 0) throw InvalidInput("dataset: num_classes must be positive");
        for (std::uint32_t y : labels)
            if (y >= num_classes) throw InvalidInput("dataset: class index out of range");
        if (groups)
            for (std::uint32_t g : *groups)
                if (g >= num_groups) throw InvalidInput("dataset: group index out of range");
        if (!features.all_finite()) throw InvalidInput("dataset: non-finite feature value");
    }

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < split_tags.size(); ++i)
            if (split_tags[i] == s) out.push_back(i);
        return out;
    }

    // Gathers the given rows into a new dataset, preserving order.
    EmbeddingDataset subset(std::span<const std::size_t> rows) const {
        EmbeddingDataset out;
        out.features = Matrix(rows.size(), dim());
        out.labels.resize(rows.size());
        out.split_tags.resize(rows.size());
        if (groups) out.groups.emplace(rows.size());
        out.num_classes = num_classes;
        out.num_groups = num_groups;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            std::size_t i = rows[k];
            std::copy(features.row(i).begin(), features.row(i).end(), out.features.row(k).begin());
            out.labels[k] = labels[i];
            out.split_tags[k] = split_tags[i];
            if (groups) (*out.groups)[k] = (*groups)[i];
        }
        return out;
    }

    Matrix features_of(Split s) const {
        auto idx = indices_of(s);
        Matrix out(idx.size(), dim());
        for (std::size_t k = 0; k < idx.size(); ++k)
            std::copy(features.row(idx[k]).begin(), features.row(idx[k]).end(), out.row(k).begin());
        return out;
    }

    std::vector<std::uint32_t> labels_of(Split s) const {
        std::vector<std::uint32_t> out;
        for (std::size_t i = 0; i < n(); ++i)
            if (split_tags[i] == s) out.push_back(labels[i]);
        return out;
    }

    std::vector<std::uint32_t> groups_of(Split s) const {
        if (!groups) throw InvalidInput("dataset: no group labels");
        std::vector<std::uint32_t> out;
        for (std::size_t i = 0; i < n(); ++i)
            if (split_tags[i] == s) out.push_back((*groups)[i]);
        return out;
    }

    // Group fractions over the train portion (ERM + RW rows).
    std::vector<double> train_group_prevalence() const {
        if (!groups) throw InvalidInput("dataset: no group labels");
        std::vector<double> counts(num_groups, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < n(); ++i) {
            if (split_tags[i] == Split::Erm || split_tags[i] == Split::Rw) {
                counts[(*groups)[i]] += 1.0;
                total += 1.0;
            }
        }
        if (total == 0.0) throw InvalidInput("dataset: empty train portion");
        for (double& c : counts) c /= total;
        return counts;
    }
};

/**
 * Parameters of the synthetic spurious-correlation problem: two classes,
 * two spurious attributes, four groups. Feature 0 carries the class signal
 * (+-core_separation), feature 1 carries the spurious signal
 * (+-spurious_separation), the remaining dims are pure noise. Group
 * proportions control how strongly the spurious attribute correlates with
 * the class.
 */
struct SyntheticSpec {
    std::size_t n_total = 5000;
    std::size_t dims = 10;
    std::vector<double> group_proportions = {0.73, 0.04, 0.01, 0.22};
    double core_separation = 1.2;
    double spurious_separation = 3.0;
    double noise_std = 1.0;
    std::uint64_t seed = 0;
};

// Integer counts from fractional targets: floor everything, then hand the
// remaining units to the largest fractional remainders (lowest index wins
// ties).
inline std::vector<std::size_t> largest_remainder_counts(std::span<const double> fractions,
                                                         std::size_t total) {
    std::vector<std::size_t> counts(fractions.size());
    std::vector<double> remainders(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        double exact = fractions[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainders[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(fractions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[order[k % order.size()]] += 1;
    return counts;
}

inline EmbeddingDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.group_proportions.size() != 4)
        throw InvalidInput("generate_synthetic: exactly 4 group proportions required");
    double sum = 0.0;
    for (double p : spec.group_proportions) {
        if (!(p > 0.0)) throw InvalidInput("generate_synthetic: group proportions must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidInput("generate_synthetic: group proportions must sum to 1");
    if (spec.dims < 2) throw InvalidInput("generate_synthetic: dims must be at least 2");
    if (!(spec.core_separation > 0.0) || !(spec.spurious_separation > 0.0) || !(spec.noise_std > 0.0))
        throw InvalidInput("generate_synthetic: separations and noise_std must be positive");

    auto counts = largest_remainder_counts(spec.group_proportions, spec.n_total);
    for (std::size_t g = 0; g < 4; ++g)
        if (counts[g] == 0)
            throw InvalidInput("generate_synthetic: n_total too small, group " + std::to_string(g) +
                               " would be empty");

    EmbeddingDataset ds;
    ds.num_classes = 2;
    ds.num_groups = 4;
    ds.features = Matrix(spec.n_total, spec.dims);
    ds.labels.resize(spec.n_total);
    ds.groups.emplace(spec.n_total);
    ds.split_tags.assign(spec.n_total, Split::Erm);

    Rng rng(spec.seed);
    std::size_t row = 0;
    for (std::uint32_t g = 0; g < 4; ++g) {
        std::uint32_t y = g / 2;
        std::uint32_t s = g % 2;
        double core_mean = (y == 0 ? -1.0 : 1.0) * spec.core_separation;
        double spur_mean = (s == 0 ? -1.0 : 1.0) * spec.spurious_separation;
        for (std::size_t k = 0; k < counts[g]; ++k, ++row) {
            auto x = ds.features.row(row);
            x[0] = core_mean + spec.noise_std * rng.normal();
            x[1] = spur_mean + spec.noise_std * rng.normal();
            for (std::size_t d = 2; d < spec.dims; ++d) x[d] = spec.noise_std * rng.normal();
            ds.labels[row] = y;
            (*ds.groups)[row] = g;
        }
    }

    // shuffle rows so split order carries no group structure
    std::vector<std::size_t> perm(spec.n_total);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    return ds.subset(perm);
}

namespace detail {

// Per-stratum allocation over the four splits. Strata of at least 4 rows
// are guaranteed a row in every split: missing splits borrow from the
// largest allocation.
inline std::vector<std::size_t> allocate_splits(std::span<const double> fractions, std::size_t n) {
    auto counts = largest_remainder_counts(fractions, n);
    if (n >= counts.size()) {
        for (std::size_t k = 0; k < counts.size(); ++k) {
            if (counts[k] > 0) continue;
            std::size_t donor = static_cast<std::size_t>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
            counts[donor] -= 1;
            counts[k] += 1;
        }
    }
    return counts;
}

}  // namespace detail

/**
 * Assigns split tags by seeded shuffle. val_fraction and test_fraction are
 * carved from the whole set first; the remaining train portion is divided
 * ERM : RW as erm_fraction : (1 - erm_fraction). When stratified, the
 * shuffle and allocation run per group (per class when group labels are
 * absent), which preserves group proportions in every split.
 */
inline EmbeddingDataset split(const EmbeddingDataset& dataset, double erm_fraction,
                              double val_fraction, double test_fraction, Rng& rng,
                              bool stratified = true) {
    dataset.validate();
    for (double f : {erm_fraction, val_fraction, test_fraction})
        if (!(f > 0.0) || !(f < 1.0))
            throw InvalidInput("split: fractions must lie in (0, 1)");
    if (!(val_fraction + test_fraction < 1.0))
        throw InvalidInput("split: val_fraction + test_fraction must leave room for training data");

    double train_fraction = 1.0 - val_fraction - test_fraction;
    const std::vector<double> fractions = {train_fraction * erm_fraction,
                                           train_fraction * (1.0 - erm_fraction), val_fraction,
                                           test_fraction};
    const Split order[4] = {Split::Erm, Split::Rw, Split::Val, Split::Test};

    // stratum key per row: group if present, else class; one stratum when
    // unstratified
    std::size_t num_strata = 1;
    std::vector<std::uint32_t> key(dataset.n(), 0);
    if (stratified) {
        if (dataset.groups) {
            key = *dataset.groups;
            num_strata = dataset.num_groups;
        } else {
            key = dataset.labels;
            num_strata = dataset.num_classes;
        }
    }

    std::vector<std::vector<std::size_t>> strata(num_strata);
    for (std::size_t i = 0; i < dataset.n(); ++i) strata[key[i]].push_back(i);

    EmbeddingDataset out = dataset;
    for (auto& stratum : strata) {
        if (stratum.empty()) continue;
        rng.shuffle(stratum);
        auto counts = detail::allocate_splits(fractions, stratum.size());
        std::size_t pos = 0;
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t c = 0; c < counts[k]; ++c) out.split_tags[stratum[pos++]] = order[k];
    }
    return out;
}

// Keeps ceil(fraction * N_val) validation rows chosen uniformly without
// replacement; all other rows are untouched. fraction 1 is the identity.
inline EmbeddingDataset subsample_validation(const EmbeddingDataset& dataset, double fraction,
                                             Rng& rng) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw InvalidInput("subsample_validation: fraction must lie in (0, 1]");
    auto val_idx = dataset.indices_of(Split::Val);
    if (val_idx.empty())
        throw InvalidInput("subsample_validation: validation split is empty");
    if (fraction == 1.0) return dataset;

    std::size_t keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(val_idx.size())));
    rng.shuffle(val_idx);
    val_idx.resize(keep);
    std::sort(val_idx.begin(), val_idx.end());

    std::vector<std::size_t> rows;
    rows.reserve(dataset.n() - (dataset.indices_of(Split::Val).size() - keep));
    std::size_t next_kept = 0;
    for (std::size_t i = 0; i < dataset.n(); ++i) {
        if (dataset.split_tags[i] != Split::Val) {
            rows.push_back(i);
        } else if (next_kept < val_idx.size() && val_idx[next_kept] == i) {
            rows.push_back(i);
            ++next_kept;
        }
    }
    return dataset.subset(rows);
}

}  // namespace afr
