#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "afr/dataset.hpp"
#include "afr/dataset_io.hpp"
#include "afr/error.hpp"
#include "afr/head.hpp"
#include "afr/matrix.hpp"
#include "afr/numerics.hpp"
#include "afr/random.hpp"

namespace afr {

enum class OutputTransform : std::uint8_t {
    Logits,    // identity; feeds a softmax loss
    Relu,      // used when the network is the body of a larger one
    Softplus,  // strictly positive outputs
};

/**
 * Small fully connected network with ReLU hidden units. weights[l] maps
 * layer_sizes[l] -> layer_sizes[l+1] (stored out x in); the output transform
 * applies to the last layer only.
 */
struct Mlp {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    OutputTransform output = OutputTransform::Logits;

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }

    std::size_t num_params() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < num_layers(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    std::vector<double> params_flat() const {
        std::vector<double> out;
        out.reserve(num_params());
        for (std::size_t l = 0; l < num_layers(); ++l) {
            out.insert(out.end(), weights[l].data().begin(), weights[l].data().end());
            out.insert(out.end(), biases[l].begin(), biases[l].end());
        }
        return out;
    }

    void set_params_flat(std::span<const double> flat) {
        if (flat.size() != num_params()) throw InvalidInput("mlp: flat parameter size mismatch");
        std::size_t pos = 0;
        for (std::size_t l = 0; l < num_layers(); ++l) {
            std::copy(flat.begin() + pos, flat.begin() + pos + weights[l].size(),
                      weights[l].data().begin());
            pos += weights[l].size();
            std::copy(flat.begin() + pos, flat.begin() + pos + biases[l].size(),
                      biases[l].begin());
            pos += biases[l].size();
        }
    }
};

// He-scaled normal initialization; biases start at zero.
inline Mlp make_mlp(std::span<const std::size_t> sizes, OutputTransform output, Rng& rng) {
    if (sizes.size() < 2) throw InvalidInput("make_mlp: need at least input and output sizes");
    for (std::size_t s : sizes)
        if (s == 0) throw InvalidInput("make_mlp: zero layer size");
    Mlp mlp;
    mlp.layer_sizes.assign(sizes.begin(), sizes.end());
    mlp.output = output;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Matrix w(sizes[l + 1], sizes[l]);
        double scale = std::sqrt(2.0 / static_cast<double>(sizes[l]));
        for (double& v : w.data()) v = scale * rng.normal();
        mlp.weights.push_back(std::move(w));
        mlp.biases.emplace_back(sizes[l + 1], 0.0);
    }
    return mlp;
}

struct ForwardCache {
    std::vector<Matrix> pre;  // pre-activation per layer
    std::vector<Matrix> act;  // act[0] = input, act[l+1] = output of layer l
};

inline ForwardCache forward_cached(const Mlp& mlp, const Matrix& input) {
    if (input.cols() != mlp.input_dim())
        throw InvalidInput("mlp forward: input dimension mismatch");
    ForwardCache cache;
    cache.act.push_back(input);
    for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
        Matrix z = affine(cache.act.back(), mlp.weights[l], mlp.biases[l]);
        Matrix h = z;
        bool last = l + 1 == mlp.num_layers();
        if (!last || mlp.output == OutputTransform::Relu) {
            for (double& v : h.data()) v = relu(v);
        } else if (mlp.output == OutputTransform::Softplus) {
            for (double& v : h.data()) v = softplus(v);
        }
        cache.pre.push_back(std::move(z));
        cache.act.push_back(std::move(h));
    }
    return cache;
}

inline Matrix forward(const Mlp& mlp, const Matrix& input) {
    return forward_cached(mlp, input).act.back();
}

struct MlpGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    std::vector<double> flat() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.insert(out.end(), weights[l].data().begin(), weights[l].data().end());
            out.insert(out.end(), biases[l].begin(), biases[l].end());
        }
        return out;
    }
};

// Reverse pass from d(loss)/d(transformed output). The output transform's
// derivative is applied here, then each layer peels off its affine map and
// the upstream ReLU mask.
inline MlpGrads backprop(const Mlp& mlp, const ForwardCache& cache, const Matrix& d_output) {
    const std::size_t layers = mlp.num_layers();
    Matrix delta = d_output;  // becomes d(loss)/d(pre-activation) per layer
    if (mlp.output == OutputTransform::Relu) {
        const Matrix& z = cache.pre.back();
        for (std::size_t i = 0; i < delta.size(); ++i)
            if (z.data()[i] <= 0.0) delta.data()[i] = 0.0;
    } else if (mlp.output == OutputTransform::Softplus) {
        const Matrix& z = cache.pre.back();
        for (std::size_t i = 0; i < delta.size(); ++i) delta.data()[i] *= sigmoid(z.data()[i]);
    }

    MlpGrads grads;
    grads.weights.resize(layers);
    grads.biases.resize(layers);
    for (std::size_t l = layers; l-- > 0;) {
        grads.weights[l] = matmul_tn(delta, cache.act[l]);  // out x in
        grads.biases[l].assign(mlp.biases[l].size(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            auto row = delta.row(i);
            for (std::size_t c = 0; c < row.size(); ++c) grads.biases[l][c] += row[c];
        }
        if (l == 0) break;
        Matrix prev = matmul_nn(delta, mlp.weights[l]);  // N x in
        const Matrix& z = cache.pre[l - 1];
        for (std::size_t i = 0; i < prev.size(); ++i)
            if (z.data()[i] <= 0.0) prev.data()[i] = 0.0;
        delta = std::move(prev);
    }
    return grads;
}

// Mean softmax cross-entropy and its gradient in one pass (Logits output).
inline std::pair<double, MlpGrads> ce_loss_and_grad(const Mlp& mlp, const Matrix& input,
                                                    std::span<const std::uint32_t> labels) {
    if (mlp.output != OutputTransform::Logits)
        throw InvalidInput("ce_loss_and_grad: network must produce logits");
    auto cache = forward_cached(mlp, input);
    const Matrix& logits = cache.act.back();
    auto ce = detail::row_cross_entropy(logits, labels);
    double loss = std::accumulate(ce.begin(), ce.end(), 0.0) / static_cast<double>(ce.size());
    Matrix d_out = detail::softmax_rows_unvalidated(logits);
    double inv_n = 1.0 / static_cast<double>(input.rows());
    for (std::size_t i = 0; i < d_out.rows(); ++i) {
        auto row = d_out.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= inv_n;
        row[labels[i]] -= inv_n;
    }
    return {loss, backprop(mlp, cache, d_out)};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    explicit AdamState(std::size_t num_params, AdamConfig config = {})
        : cfg(config), m(num_params, 0.0), v(num_params, 0.0) {}

    AdamConfig cfg;
    std::vector<double> m, v;
    std::uint64_t step = 0;

    void update(std::span<double> params, std::span<const double> grad) {
        if (params.size() != m.size() || grad.size() != m.size())
            throw InvalidInput("adam: parameter size mismatch");
        ++step;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
};

// ---------------------------------------------------------------------------
// Stage 1: ERM feature extractor
// ---------------------------------------------------------------------------

struct Stage1Config {
    std::vector<std::size_t> hidden_sizes = {32, 32};
    std::size_t epochs = 60;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
};

struct Stage1Result {
    Mlp extractor;    // body network; output = penultimate ReLU activations
    LinearHead head;  // last layer, anchored at its final stage-1 values
    double train_accuracy = 0.0;
    double final_loss = 0.0;
};

namespace detail {

inline double accuracy(const Matrix& logits, std::span<const std::uint32_t> labels) {
    double correct = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        std::size_t pred = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[pred]) pred = c;
        if (pred == labels[i]) correct += 1.0;
    }
    return correct / static_cast<double>(logits.rows());
}

}  // namespace detail

/**
 * Trains body + last layer jointly with minibatch SGD on the mean
 * cross-entropy over the ERM split, then separates the body (embedding
 * extractor) from the last layer. The returned head is anchored at its own
 * final parameters, i.e. the stage-1 checkpoint.
 */
inline Stage1Result train_erm_extractor(const EmbeddingDataset& dataset,
                                        const Stage1Config& cfg, Rng& rng) {
    dataset.validate();
    auto erm_idx = dataset.indices_of(Split::Erm);
    if (erm_idx.empty()) throw InvalidInput("train_erm_extractor: ERM split is empty");
    if (cfg.hidden_sizes.empty())
        throw InvalidInput("train_erm_extractor: at least one hidden layer required");
    if (cfg.batch_size == 0) throw InvalidInput("train_erm_extractor: batch_size must be positive");

    std::vector<std::size_t> sizes;
    sizes.push_back(dataset.dim());
    sizes.insert(sizes.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
    sizes.push_back(dataset.num_classes);
    Mlp net = make_mlp(sizes, OutputTransform::Logits, rng);

    Matrix x = dataset.features_of(Split::Erm);
    std::vector<std::uint32_t> y = dataset.labels_of(Split::Erm);
    const std::size_t n = x.rows();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double last_loss = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t stop = std::min(n, start + cfg.batch_size);
            Matrix bx(stop - start, x.cols());
            std::vector<std::uint32_t> by(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                std::copy(x.row(order[k]).begin(), x.row(order[k]).end(),
                          bx.row(k - start).begin());
                by[k - start] = y[order[k]];
            }
            auto [loss, grads] = ce_loss_and_grad(net, bx, by);
            if (!std::isfinite(loss)) throw DivergenceError("non-finite stage-1 loss", epoch);
            auto flat_g = grads.flat();
            auto flat_p = net.params_flat();
            for (std::size_t i = 0; i < flat_p.size(); ++i)
                flat_p[i] -= cfg.learning_rate * flat_g[i];
            net.set_params_flat(flat_p);
        }
        last_loss = ce_loss_and_grad(net, x, y).first;
        if (!std::isfinite(last_loss)) throw DivergenceError("non-finite stage-1 loss", epoch);
    }

    Stage1Result result{
        .extractor = Mlp{},
        .head = LinearHead(net.weights.back(), net.biases.back()),
        .train_accuracy = detail::accuracy(forward(net, x), y),
        .final_loss = last_loss,
    };
    result.extractor.layer_sizes.assign(net.layer_sizes.begin(), net.layer_sizes.end() - 1);
    result.extractor.weights.assign(net.weights.begin(), net.weights.end() - 1);
    result.extractor.biases.assign(net.biases.begin(), net.biases.end() - 1);
    result.extractor.output = OutputTransform::Relu;
    return result;
}

// Replaces features with the extractor's activations; labels, groups and
// split tags carry over.
inline EmbeddingDataset cache_embeddings(const Mlp& extractor, const EmbeddingDataset& dataset) {
    EmbeddingDataset out = dataset;
    out.features = forward(extractor, dataset.features);
    return out;
}

// ---------------------------------------------------------------------------
// Balance learner: can a network of the stage-1 predictions and the class
// label alone produce group-balanced weights?
// ---------------------------------------------------------------------------

struct BalanceConfig {
    std::vector<std::size_t> hidden_sizes = {128, 128};
    std::size_t steps = 2000;
    AdamConfig adam = {};
};

struct BalanceResult {
    Mlp net;
    // trajectory[k] = group-aggregated weights after k optimizer steps,
    // k = 0..steps
    std::vector<std::vector<double>> trajectory;
    double final_loss = 0.0;
};

/**
 * Trains f(p, onehot(y)) -> softplus -> normalize-to-sum-1 with Adam on the
 * mean absolute deviation of the group-aggregated weights from 1/G. The
 * normalization is part of the computation graph. Subgradient of |.| at 0
 * is taken as 0.
 */
inline BalanceResult train_balance_learner(const Matrix& stage1_probs,
                                           std::span<const std::uint32_t> labels,
                                           std::span<const std::uint32_t> groups,
                                           std::uint32_t num_groups, const BalanceConfig& cfg,
                                           Rng& rng, const Mlp* initial = nullptr) {
    const std::size_t n = stage1_probs.rows();
    const std::size_t c = stage1_probs.cols();
    if (labels.size() != n || groups.size() != n)
        throw InvalidInput("train_balance_learner: input sizes do not match");
    if (num_groups == 0) throw InvalidInput("train_balance_learner: no groups");
    for (std::uint32_t g : groups)
        if (g >= num_groups) throw InvalidInput("train_balance_learner: group index out of range");

    // input row = stage-1 probability vector concatenated with one-hot label
    Matrix input(n, 2 * c);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = input.row(i);
        for (std::size_t j = 0; j < c; ++j) row[j] = stage1_probs(i, j);
        if (labels[i] >= c) throw InvalidInput("train_balance_learner: label index out of range");
        row[c + labels[i]] = 1.0;
    }

    std::vector<std::size_t> sizes;
    sizes.push_back(2 * c);
    sizes.insert(sizes.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
    sizes.push_back(1);
    Mlp net;
    if (initial) {
        if (initial->input_dim() != 2 * c || initial->output_dim() != 1 ||
            initial->output != OutputTransform::Softplus)
            throw InvalidInput("train_balance_learner: initial network has the wrong shape");
        net = *initial;
    } else {
        net = make_mlp(sizes, OutputTransform::Softplus, rng);
    }
    AdamState adam(net.num_params(), cfg.adam);

    const double target = 1.0 / static_cast<double>(num_groups);
    BalanceResult result;
    result.net = std::move(net);

    for (std::size_t step = 0;; ++step) {
        auto cache = forward_cached(result.net, input);
        const Matrix& raw = cache.act.back();  // n x 1, strictly positive
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += raw(i, 0);
        std::vector<double> mu(n);
        for (std::size_t i = 0; i < n; ++i) mu[i] = raw(i, 0) / total;

        std::vector<double> agg(num_groups, 0.0);
        for (std::size_t i = 0; i < n; ++i) agg[groups[i]] += mu[i];
        result.trajectory.push_back(agg);

        double loss = 0.0;
        for (std::uint32_t g = 0; g < num_groups; ++g) loss += std::abs(agg[g] - target);
        loss /= static_cast<double>(num_groups);
        if (!std::isfinite(loss)) throw DivergenceError("non-finite balance loss", step);
        result.final_loss = loss;
        if (step == cfg.steps) break;

        // dL/d agg_g, then through mu_i = raw_i / total
        std::vector<double> d_agg(num_groups, 0.0);
        for (std::uint32_t g = 0; g < num_groups; ++g) {
            double dev = agg[g] - target;
            if (dev > 0.0) d_agg[g] = 1.0;
            else if (dev < 0.0) d_agg[g] = -1.0;
            d_agg[g] /= static_cast<double>(num_groups);
        }
        double weighted = 0.0;  // sum_i dL/dmu_i * mu_i
        for (std::size_t i = 0; i < n; ++i) weighted += d_agg[groups[i]] * mu[i];
        Matrix d_out(n, 1);
        for (std::size_t i = 0; i < n; ++i) d_out(i, 0) = (d_agg[groups[i]] - weighted) / total;

        auto grads = backprop(result.net, cache, d_out);
        auto flat_p = result.net.params_flat();
        adam.update(flat_p, grads.flat());
        result.net.set_params_flat(flat_p);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   magic "AFRM" | version u32 | layer count u32 | per-layer (in u32, out
//   u32) | parameters f64 little-endian (weights row-major then bias, per
//   layer)
// The output transform is not stored; the caller knows what role the
// network plays and sets it after loading.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kMlpFormatVersion = 1;

inline void write_mlp_file(const Mlp& mlp, const std::string& path) {
    io::Writer w(path);
    w.bytes("AFRM", 4);
    w.u32(kMlpFormatVersion);
    w.u32(static_cast<std::uint32_t>(mlp.num_layers()));
    for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
        w.u32(static_cast<std::uint32_t>(mlp.layer_sizes[l]));
        w.u32(static_cast<std::uint32_t>(mlp.layer_sizes[l + 1]));
    }
    for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
        for (double v : mlp.weights[l].data()) w.f64(v);
        for (double v : mlp.biases[l]) w.f64(v);
    }
    w.close(path);
}

inline Mlp read_mlp_file(const std::string& path,
                         OutputTransform output = OutputTransform::Logits) {
    io::Reader r(path);
    r.expect_magic("AFRM");
    std::uint64_t version_at = r.offset();
    std::uint32_t version = r.u32("format version");
    if (version != kMlpFormatVersion)
        throw ParseError("unsupported format version " + std::to_string(version), version_at);
    std::uint32_t layers = r.u32("layer count");
    if (layers == 0) throw ParseError("layer count must be positive", r.offset() - 4);

    Mlp mlp;
    mlp.output = output;
    for (std::uint32_t l = 0; l < layers; ++l) {
        std::uint64_t at = r.offset();
        std::uint32_t in = r.u32("layer dims");
        std::uint32_t out = r.u32("layer dims");
        if (in == 0 || out == 0) throw ParseError("zero layer dimension", at);
        if (l == 0) mlp.layer_sizes.push_back(in);
        else if (mlp.layer_sizes.back() != in)
            throw ParseError("layer dimensions do not chain", at);
        mlp.layer_sizes.push_back(out);
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        std::size_t in = mlp.layer_sizes[l], out = mlp.layer_sizes[l + 1];
        if ((r.remaining() / 8) / out < in)
            throw ParseError("truncated payload while reading layer parameters", r.offset());
        Matrix w(out, in);
        for (std::size_t i = 0; i < w.size(); ++i) {
            std::uint64_t at = r.offset();
            w.data()[i] = r.f64("layer weights");
            if (!std::isfinite(w.data()[i])) throw ParseError("non-finite parameter value", at);
        }
        std::vector<double> b(out);
        for (std::size_t i = 0; i < out; ++i) {
            std::uint64_t at = r.offset();
            b[i] = r.f64("layer bias");
            if (!std::isfinite(b[i])) throw ParseError("non-finite parameter value", at);
        }
        mlp.weights.push_back(std::move(w));
        mlp.biases.push_back(std::move(b));
    }
    r.expect_end();
    return mlp;
}

}  // namespace afr
