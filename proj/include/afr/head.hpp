#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afr/dataset_io.hpp"
#include "afr/error.hpp"
#include "afr/matrix.hpp"
#include "afr/numerics.hpp"
#include "afr/weights.hpp"

namespace afr {

/**
 * Multinomial logistic last layer. The anchor holds the parameter values
 * the head had at the end of stage 1; retraining is regularized toward it
 * and the anchor itself never changes.
 */
class LinearHead {
public:
    Matrix weights;             // C x D
    std::vector<double> bias;   // C

    LinearHead(Matrix w, std::vector<double> b)
        : weights(std::move(w)), bias(std::move(b)), anchor_weights_(weights), anchor_bias_(bias) {
        check_dims();
    }

    LinearHead(Matrix w, std::vector<double> b, Matrix anchor_w, std::vector<double> anchor_b)
        : weights(std::move(w)),
          bias(std::move(b)),
          anchor_weights_(std::move(anchor_w)),
          anchor_bias_(std::move(anchor_b)) {
        check_dims();
        if (anchor_weights_.rows() != weights.rows() || anchor_weights_.cols() != weights.cols() ||
            anchor_bias_.size() != bias.size())
            throw InvalidInput("LinearHead: anchor dimensions do not match parameters");
    }

    const Matrix& anchor_weights() const { return anchor_weights_; }
    const std::vector<double>& anchor_bias() const { return anchor_bias_; }

    std::size_t num_classes() const { return weights.rows(); }
    std::size_t dim() const { return weights.cols(); }
    std::size_t num_params() const { return weights.size() + bias.size(); }

    double anchor_distance() const {
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            double d = weights.data()[i] - anchor_weights_.data()[i];
            acc += d * d;
        }
        for (std::size_t c = 0; c < bias.size(); ++c) {
            double d = bias[c] - anchor_bias_[c];
            acc += d * d;
        }
        return std::sqrt(acc);
    }

private:
    void check_dims() const {
        if (bias.size() != weights.rows())
            throw InvalidInput("LinearHead: bias length does not match class count");
        if (weights.rows() == 0 || weights.cols() == 0)
            throw InvalidInput("LinearHead: empty parameter matrix");
    }

    Matrix anchor_weights_;
    std::vector<double> anchor_bias_;
};

enum class Objective { Erm, Afr, Gdro };

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t max_epochs = 100;
    double lambda = 0.0;          // anchor regularization strength (AFR objective)
    double grad_clip_norm = 1.0;
    bool early_stopping = true;
    Objective objective = Objective::Afr;
};

inline Matrix head_logits(const LinearHead& head, const Matrix& features) {
    if (features.cols() != head.dim())
        throw InvalidInput("head: feature dimension does not match head");
    return affine(features, head.weights, head.bias);
}

inline Matrix predict_probs(const LinearHead& head, const Matrix& features) {
    return softmax_rows(head_logits(head, features));
}

namespace detail {

// Per-row cross-entropy -log p_y via log-sum-exp.
inline std::vector<double> row_cross_entropy(const Matrix& logits,
                                             std::span<const std::uint32_t> labels) {
    if (labels.size() != logits.rows())
        throw InvalidInput("cross_entropy: label count does not match rows");
    std::vector<double> ce(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (labels[i] >= logits.cols())
            throw InvalidInput("cross_entropy: label index out of range at row " +
                               std::to_string(i));
        ce[i] = log_sum_exp(logits.row(i)) - logits(i, labels[i]);
    }
    return ce;
}

inline std::vector<double> group_sizes_checked(std::span<const std::uint32_t> groups,
                                               std::uint32_t num_groups) {
    std::vector<double> sizes(num_groups, 0.0);
    for (std::uint32_t g : groups) {
        if (g >= num_groups) throw InvalidInput("gdro: group index out of range");
        sizes[g] += 1.0;
    }
    for (std::uint32_t g = 0; g < num_groups; ++g)
        if (sizes[g] == 0.0)
            throw InvalidInput("gdro: group " + std::to_string(g) + " is empty in this batch");
    return sizes;
}

}  // namespace detail

// Mean cross-entropy over the batch. Accumulated as sum of (1/N) * ce_i so
// the value is bit-identical to the weighted loss under uniform weights.
inline double loss_erm(const LinearHead& head, const Matrix& features,
                       std::span<const std::uint32_t> labels) {
    auto ce = detail::row_cross_entropy(head_logits(head, features), labels);
    double inv_n = 1.0 / static_cast<double>(ce.size());
    double acc = 0.0;
    for (double v : ce) acc += inv_n * v;
    return acc;
}

// Weighted cross-entropy plus anchor penalty lambda * ||phi - phi_hat||^2
// (weights and bias jointly).
inline double loss_afr(const LinearHead& head, const Matrix& features,
                       std::span<const std::uint32_t> labels, const WeightVector& mu,
                       double lambda) {
    if (mu.mu.size() != features.rows())
        throw InvalidInput("loss_afr: weight count does not match rows");
    auto ce = detail::row_cross_entropy(head_logits(head, features), labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < ce.size(); ++i) acc += mu.mu[i] * ce[i];
    double d = head.anchor_distance();
    return acc + lambda * d * d;
}

// Worst-group loss: max over groups of the within-group mean cross-entropy.
inline double loss_gdro(const LinearHead& head, const Matrix& features,
                        std::span<const std::uint32_t> labels,
                        std::span<const std::uint32_t> groups, std::uint32_t num_groups) {
    if (groups.size() != features.rows())
        throw InvalidInput("loss_gdro: group count does not match rows");
    auto sizes = detail::group_sizes_checked(groups, num_groups);
    auto ce = detail::row_cross_entropy(head_logits(head, features), labels);
    std::vector<double> group_loss(num_groups, 0.0);
    for (std::size_t i = 0; i < ce.size(); ++i) group_loss[groups[i]] += ce[i];
    double worst = -std::numeric_limits<double>::infinity();
    for (std::uint32_t g = 0; g < num_groups; ++g)
        worst = std::max(worst, group_loss[g] / sizes[g]);
    return worst;
}

// ---------------------------------------------------------------------------
// Analytic gradients, flattened as [weights row-major, bias]. The softmax
// cross-entropy gradient in the logits is (p - onehot(y)) times the
// per-example coefficient; parameter gradients follow by the chain rule.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> grad_from_coefficients(const LinearHead& head, const Matrix& features,
                                                  std::span<const std::uint32_t> labels,
                                                  std::span<const double> coeff) {
    if (labels.size() != features.rows())
        throw InvalidInput("gradient: label count does not match rows");
    // unvalidated softmax: a diverging training loop must surface a
    // non-finite loss, not an input error from its own gradient
    Matrix dlogits = detail::softmax_rows_unvalidated(head_logits(head, features));
    for (std::size_t i = 0; i < dlogits.rows(); ++i) {
        if (labels[i] >= dlogits.cols())
            throw InvalidInput("gradient: label index out of range at row " + std::to_string(i));
        auto row = dlogits.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= coeff[i];
        row[labels[i]] -= coeff[i];
    }
    Matrix dw = matmul_tn(dlogits, features);  // C x D
    std::vector<double> grad(head.num_params(), 0.0);
    std::copy(dw.data().begin(), dw.data().end(), grad.begin());
    for (std::size_t i = 0; i < dlogits.rows(); ++i) {
        auto row = dlogits.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) grad[head.weights.size() + c] += row[c];
    }
    return grad;
}

}  // namespace detail

inline std::vector<double> grad_erm(const LinearHead& head, const Matrix& features,
                                    std::span<const std::uint32_t> labels) {
    std::vector<double> coeff(features.rows(), 1.0 / static_cast<double>(features.rows()));
    return detail::grad_from_coefficients(head, features, labels, coeff);
}

inline std::vector<double> grad_afr(const LinearHead& head, const Matrix& features,
                                    std::span<const std::uint32_t> labels, const WeightVector& mu,
                                    double lambda) {
    if (mu.mu.size() != features.rows())
        throw InvalidInput("grad_afr: weight count does not match rows");
    auto grad = detail::grad_from_coefficients(head, features, labels, mu.mu);
    if (lambda != 0.0) {
        for (std::size_t i = 0; i < head.weights.size(); ++i)
            grad[i] += 2.0 * lambda * (head.weights.data()[i] - head.anchor_weights().data()[i]);
        for (std::size_t c = 0; c < head.bias.size(); ++c)
            grad[head.weights.size() + c] +=
                2.0 * lambda * (head.bias[c] - head.anchor_bias()[c]);
    }
    return grad;
}

// Subgradient through the max: the gradient of the argmax group's mean
// loss, lowest group index on ties.
inline std::vector<double> grad_gdro(const LinearHead& head, const Matrix& features,
                                     std::span<const std::uint32_t> labels,
                                     std::span<const std::uint32_t> groups,
                                     std::uint32_t num_groups) {
    if (groups.size() != features.rows())
        throw InvalidInput("grad_gdro: group count does not match rows");
    auto sizes = detail::group_sizes_checked(groups, num_groups);
    auto ce = detail::row_cross_entropy(head_logits(head, features), labels);
    std::vector<double> group_loss(num_groups, 0.0);
    for (std::size_t i = 0; i < ce.size(); ++i) group_loss[groups[i]] += ce[i];
    std::uint32_t worst = 0;
    double worst_loss = group_loss[0] / sizes[0];
    for (std::uint32_t g = 1; g < num_groups; ++g) {
        double gl = group_loss[g] / sizes[g];
        if (gl > worst_loss) {
            worst_loss = gl;
            worst = g;
        }
    }
    std::vector<double> coeff(features.rows(), 0.0);
    for (std::size_t i = 0; i < features.rows(); ++i)
        if (groups[i] == worst) coeff[i] = 1.0 / sizes[worst];
    return detail::grad_from_coefficients(head, features, labels, coeff);
}

// ---------------------------------------------------------------------------
// Full-batch training loop
// ---------------------------------------------------------------------------

struct TrainReport {
    std::vector<double> train_loss;                       // per recorded epoch 0..max_epochs
    std::vector<std::vector<double>> val_group_accuracy;  // NaN for groups absent from val
    std::vector<double> val_wga;                          // min over groups present in val
    std::size_t selected_epoch = 0;
    std::optional<LinearHead> head;                       // parameters at selected_epoch

    // Recomputable check: with early stopping the selected epoch attains
    // the best recorded validation WGA.
    bool selection_consistent() const {
        for (double w : val_wga)
            if (w > val_wga[selected_epoch]) return false;
        return true;
    }
};

namespace detail {

struct ValRecord {
    std::vector<double> group_accuracy;
    double wga;
};

inline ValRecord validation_record(const LinearHead& head, const Matrix& val_x,
                                   std::span<const std::uint32_t> val_y,
                                   std::span<const std::uint32_t> val_groups,
                                   std::uint32_t num_groups) {
    Matrix logits = head_logits(head, val_x);
    std::vector<double> correct(num_groups, 0.0), total(num_groups, 0.0);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        std::size_t pred = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[pred]) pred = c;
        if (val_groups[i] >= num_groups)
            throw InvalidInput("validation: group index out of range");
        total[val_groups[i]] += 1.0;
        if (pred == val_y[i]) correct[val_groups[i]] += 1.0;
    }
    ValRecord rec;
    rec.group_accuracy.assign(num_groups, std::numeric_limits<double>::quiet_NaN());
    rec.wga = std::numeric_limits<double>::infinity();
    for (std::uint32_t g = 0; g < num_groups; ++g) {
        if (total[g] == 0.0) continue;
        rec.group_accuracy[g] = correct[g] / total[g];
        rec.wga = std::min(rec.wga, rec.group_accuracy[g]);
    }
    if (!std::isfinite(rec.wga)) throw InvalidInput("validation: empty validation set");
    return rec;
}

}  // namespace detail

/**
 * Full-batch gradient descent without momentum: g <- grad(loss), g <- clip
 * to grad_clip_norm, phi <- phi - lr * g. Epoch 0 is the initial state, so
 * with early stopping the returned parameters attain the best validation
 * worst-group accuracy over epochs 0..max_epochs (first epoch on ties);
 * without it the final parameters are returned. Deterministic given its
 * inputs.
 */
inline TrainReport train_head(const LinearHead& init, const Matrix& train_x,
                              std::span<const std::uint32_t> train_y,
                              const std::vector<std::uint32_t>* train_groups,
                              const WeightVector* mu, const TrainConfig& cfg, const Matrix& val_x,
                              std::span<const std::uint32_t> val_y,
                              std::span<const std::uint32_t> val_groups,
                              std::uint32_t num_groups) {
    if (cfg.learning_rate <= 0.0) throw InvalidInput("train_head: learning_rate must be positive");
    if (cfg.max_epochs < 1) throw InvalidInput("train_head: max_epochs must be at least 1");
    if (cfg.lambda < 0.0) throw InvalidInput("train_head: lambda must be nonnegative");
    if (cfg.objective == Objective::Afr && !mu)
        throw InvalidInput("train_head: AFR objective requires a weight vector");
    if (cfg.objective == Objective::Gdro && !train_groups)
        throw InvalidInput("train_head: GDRO objective requires group labels");
    if (val_y.size() != val_x.rows() || val_groups.size() != val_x.rows())
        throw InvalidInput("train_head: validation arrays do not match");
    if (init.weights != init.anchor_weights() || init.bias != init.anchor_bias())
        throw InvalidInput("train_head: head must start at its anchor parameters");

    LinearHead head = init;

    auto loss_of = [&](const LinearHead& h) {
        switch (cfg.objective) {
            case Objective::Erm: return loss_erm(h, train_x, train_y);
            case Objective::Afr: return loss_afr(h, train_x, train_y, *mu, cfg.lambda);
            case Objective::Gdro:
                return loss_gdro(h, train_x, train_y, *train_groups, num_groups);
        }
        throw InvalidInput("train_head: unknown objective");
    };
    auto grad_of = [&](const LinearHead& h) {
        switch (cfg.objective) {
            case Objective::Erm: return grad_erm(h, train_x, train_y);
            case Objective::Afr: return grad_afr(h, train_x, train_y, *mu, cfg.lambda);
            case Objective::Gdro:
                return grad_gdro(h, train_x, train_y, *train_groups, num_groups);
        }
        throw InvalidInput("train_head: unknown objective");
    };

    TrainReport report;
    std::size_t best_epoch = 0;
    double best_wga = -1.0;
    Matrix best_w = head.weights;
    std::vector<double> best_b = head.bias;

    for (std::size_t epoch = 0; epoch <= cfg.max_epochs; ++epoch) {
        double loss = loss_of(head);
        if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss", epoch);
        report.train_loss.push_back(loss);

        auto val = detail::validation_record(head, val_x, val_y, val_groups, num_groups);
        report.val_group_accuracy.push_back(std::move(val.group_accuracy));
        report.val_wga.push_back(val.wga);
        if (val.wga > best_wga) {
            best_wga = val.wga;
            best_epoch = epoch;
            best_w = head.weights;
            best_b = head.bias;
        }

        if (epoch == cfg.max_epochs) break;
        auto grad = clip_gradient_norm(grad_of(head), cfg.grad_clip_norm);
        for (std::size_t i = 0; i < head.weights.size(); ++i)
            head.weights.data()[i] -= cfg.learning_rate * grad[i];
        for (std::size_t c = 0; c < head.bias.size(); ++c)
            head.bias[c] -= cfg.learning_rate * grad[head.weights.size() + c];
    }

    if (cfg.early_stopping) {
        report.selected_epoch = best_epoch;
        report.head.emplace(std::move(best_w), std::move(best_b), init.anchor_weights(),
                            init.anchor_bias());
    } else {
        report.selected_epoch = cfg.max_epochs;
        report.head.emplace(head.weights, head.bias, init.anchor_weights(), init.anchor_bias());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   magic "AFRH" | version u32 | C u32 | D u32 | weights, bias,
//   anchor_weights, anchor_bias as f64 little-endian
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kHeadFormatVersion = 1;

inline void write_head_file(const LinearHead& head, const std::string& path) {
    io::Writer w(path);
    w.bytes("AFRH", 4);
    w.u32(kHeadFormatVersion);
    w.u32(static_cast<std::uint32_t>(head.num_classes()));
    w.u32(static_cast<std::uint32_t>(head.dim()));
    for (double v : head.weights.data()) w.f64(v);
    for (double v : head.bias) w.f64(v);
    for (double v : head.anchor_weights().data()) w.f64(v);
    for (double v : head.anchor_bias()) w.f64(v);
    w.close(path);
}

inline LinearHead read_head_file(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("AFRH");
    std::uint64_t version_at = r.offset();
    std::uint32_t version = r.u32("format version");
    if (version != kHeadFormatVersion)
        throw ParseError("unsupported format version " + std::to_string(version), version_at);
    std::uint64_t dims_at = r.offset();
    std::uint32_t c = r.u32("class count");
    std::uint32_t d = r.u32("feature dimension");
    if (c == 0 || d == 0) throw ParseError("degenerate head dimensions", dims_at);
    if ((r.remaining() / 8) / 2 / c < d)
        throw ParseError("truncated payload while reading head parameters", r.offset());

    auto read_matrix = [&](const char* what) {
        Matrix m(c, d);
        for (std::size_t i = 0; i < m.size(); ++i) {
            std::uint64_t at = r.offset();
            double v = r.f64(what);
            if (!std::isfinite(v)) throw ParseError("non-finite parameter value", at);
            m.data()[i] = v;
        }
        return m;
    };
    auto read_vector = [&](const char* what) {
        std::vector<double> v(c);
        for (std::size_t i = 0; i < c; ++i) {
            std::uint64_t at = r.offset();
            v[i] = r.f64(what);
            if (!std::isfinite(v[i])) throw ParseError("non-finite parameter value", at);
        }
        return v;
    };

    Matrix weights = read_matrix("weights");
    std::vector<double> bias = read_vector("bias");
    Matrix anchor_w = read_matrix("anchor weights");
    std::vector<double> anchor_b = read_vector("anchor bias");
    r.expect_end();
    return LinearHead(std::move(weights), std::move(bias), std::move(anchor_w),
                      std::move(anchor_b));
}

}  // namespace afr
