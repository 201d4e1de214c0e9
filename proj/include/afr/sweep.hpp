#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "afr/dataset.hpp"
#include "afr/error.hpp"
#include "afr/head.hpp"
#include "afr/metrics.hpp"
#include "afr/random.hpp"
#include "afr/weights.hpp"

namespace afr {

/**
 * Grid over (gamma, lambda, learning rate) x seeds, selected by validation
 * worst-group accuracy. The train config acts as a template; each trial
 * overrides lambda and the learning rate from its grid point. For the
 * jtt-binary scheme the gamma grid parameterizes the upweight factor, the
 * only scalar that scheme has.
 */
struct SweepSpec {
    std::vector<double> gamma_grid = {0.0};
    std::vector<double> lambda_grid = {0.0};
    std::vector<double> learning_rate_grid = {0.1};
    WeightKind scheme = WeightKind::AfrExponential;
    double jtt_upweight = 20.0;  // ignored unless scheme == JttBinary
    TrainConfig train;
    double validation_fraction = 1.0;
    std::vector<std::uint64_t> seeds = {0};
};

struct TrialRecord {
    double gamma = 0.0;
    double lambda = 0.0;
    double learning_rate = 0.0;
    std::uint64_t seed = 0;
    double val_wga = 0.0;
    double test_wga = 0.0;
    double test_mean_acc = 0.0;
    std::size_t selected_epoch = 0;
    std::string status;  // ok | degraded | diverged | invalid
};

struct SweepResult {
    std::vector<TrialRecord> trials;
    std::size_t best_index = 0;
    std::string selection_rule = "max-validation-wga-first-on-ties";
};

namespace detail {

// Inputs shared by every trial: stage-1 correct-class probabilities on the
// reweighting split, plus the frozen evaluation views.
struct TrialInputs {
    Matrix rw_x;
    std::vector<std::uint32_t> rw_y;
    std::vector<std::uint32_t> rw_groups;
    std::vector<double> p_hat;
    std::vector<std::uint8_t> stage1_correct;
    Matrix val_x;
    std::vector<std::uint32_t> val_y;
    std::vector<std::uint32_t> val_groups;
    Matrix test_x;
    std::vector<std::uint32_t> test_y;
    std::vector<std::uint32_t> test_groups;
    std::vector<double> prevalence;
    std::uint32_t num_groups = 0;
    bool val_covers_all_groups = true;
};

inline TrialInputs prepare_trial_inputs(const EmbeddingDataset& dataset,
                                        const LinearHead& stage1_head) {
    dataset.validate();
    if (!dataset.groups) throw InvalidInput("sweep: dataset has no group labels");
    TrialInputs in;
    in.num_groups = dataset.num_groups;
    in.rw_x = dataset.features_of(Split::Rw);
    in.rw_y = dataset.labels_of(Split::Rw);
    in.rw_groups = dataset.groups_of(Split::Rw);
    in.val_x = dataset.features_of(Split::Val);
    in.val_y = dataset.labels_of(Split::Val);
    in.val_groups = dataset.groups_of(Split::Val);
    in.test_x = dataset.features_of(Split::Test);
    in.test_y = dataset.labels_of(Split::Test);
    in.test_groups = dataset.groups_of(Split::Test);
    in.prevalence = dataset.train_group_prevalence();
    if (in.rw_x.rows() == 0) throw InvalidInput("sweep: reweighting split is empty");
    if (in.val_x.rows() == 0) throw InvalidInput("sweep: validation split is empty");
    if (in.test_x.rows() == 0) throw InvalidInput("sweep: test split is empty");

    Matrix probs = predict_probs(stage1_head, in.rw_x);
    in.p_hat = correct_class_probs(probs, in.rw_y);
    auto preds = argmax_rows(probs);
    in.stage1_correct.resize(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        in.stage1_correct[i] = preds[i] == in.rw_y[i] ? 1 : 0;

    std::set<std::uint32_t> seen(in.val_groups.begin(), in.val_groups.end());
    in.val_covers_all_groups = seen.size() == in.num_groups;
    return in;
}

inline TrialRecord run_trial(const TrialInputs& in, const LinearHead& stage1_head,
                             const SweepSpec& spec, double gamma, double lambda,
                             double learning_rate, std::uint64_t seed) {
    TrialRecord rec;
    rec.gamma = gamma;
    rec.lambda = lambda;
    rec.learning_rate = learning_rate;
    rec.seed = seed;

    WeightScheme scheme{.kind = spec.scheme, .gamma = gamma, .upweight_lambda = spec.jtt_upweight};
    if (spec.scheme == WeightKind::JttBinary) scheme.upweight_lambda = gamma;

    TrainConfig cfg = spec.train;
    cfg.lambda = lambda;
    cfg.learning_rate = learning_rate;
    // a validation set that misses groups cannot drive early stopping
    if (!in.val_covers_all_groups) cfg.early_stopping = false;

    WeightVector mu;
    try {
        mu = compute_weights(scheme, in.p_hat, in.rw_y, &in.stage1_correct, &in.rw_groups);
    } catch (const InvalidInput&) {
        // a grid point can parameterize the scheme out of its domain
        // (e.g. a zero jtt upweight); record it instead of killing the sweep
        rec.status = "invalid";
        rec.val_wga = -1.0;
        return rec;
    }
    try {
        auto report = train_head(stage1_head, in.rw_x, in.rw_y, &in.rw_groups, &mu, cfg, in.val_x,
                                 in.val_y, in.val_groups, in.num_groups);
        rec.val_wga = report.val_wga[report.selected_epoch];
        rec.selected_epoch = report.selected_epoch;
        auto test = evaluate_probs(predict_probs(*report.head, in.test_x), in.test_y,
                                   in.test_groups, in.num_groups, in.prevalence);
        rec.test_wga = test.worst_group_accuracy;
        rec.test_mean_acc = test.mean_accuracy;
        rec.status = in.val_covers_all_groups ? "ok" : "degraded";
    } catch (const DivergenceError&) {
        rec.status = "diverged";
        rec.val_wga = -1.0;
    }
    return rec;
}

}  // namespace detail

/**
 * Runs every grid point. Trials are independent and may run on up to `jobs`
 * threads; records land in a pre-sized vector by trial index, so the thread
 * schedule cannot affect the outcome. Diverged trials are recorded but
 * never selected. Test diagnostics are recorded per trial and play no part
 * in selection.
 */
inline SweepResult run_sweep(const EmbeddingDataset& dataset, const LinearHead& stage1_head,
                             const SweepSpec& spec, std::size_t jobs = 1) {
    if (spec.gamma_grid.empty() || spec.lambda_grid.empty() || spec.learning_rate_grid.empty() ||
        spec.seeds.empty())
        throw InvalidInput("run_sweep: empty grid");
    for (double g : spec.gamma_grid)
        if (g < 0.0) throw InvalidInput("run_sweep: gamma grid entries must be nonnegative");
    for (double l : spec.lambda_grid)
        if (l < 0.0) throw InvalidInput("run_sweep: lambda grid entries must be nonnegative");

    const EmbeddingDataset* working = &dataset;
    EmbeddingDataset subsampled;
    SweepSpec effective = spec;
    if (spec.validation_fraction < 1.0) {
        Rng rng(derive_seed(spec.seeds.front(), 1));
        subsampled = subsample_validation(dataset, spec.validation_fraction, rng);
        working = &subsampled;
        // early stopping is tied to the full validation set
        effective.train.early_stopping = false;
    }

    auto inputs = detail::prepare_trial_inputs(*working, stage1_head);

    struct Point {
        double gamma, lambda, lr;
        std::uint64_t seed;
    };
    std::vector<Point> points;
    for (double g : spec.gamma_grid)
        for (double l : spec.lambda_grid)
            for (double lr : spec.learning_rate_grid)
                for (std::uint64_t s : spec.seeds) points.push_back({g, l, lr, s});

    SweepResult result;
    result.trials.resize(points.size());

    auto worker_body = [&](std::atomic<std::size_t>& next) {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            const auto& p = points[i];
            result.trials[i] =
                detail::run_trial(inputs, stage1_head, effective, p.gamma, p.lambda, p.lr,
                                  p.seed);
        }
    };

    if (jobs <= 1) {
        std::atomic<std::size_t> next{0};
        worker_body(next);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (std::size_t t = 0; t < std::min(jobs, points.size()); ++t) {
            pool.emplace_back([&] {
                try {
                    worker_body(next);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    result.best_index = 0;
    double best = -2.0;
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
        const auto& t = result.trials[i];
        if (t.status != "ok" && t.status != "degraded") continue;
        if (t.val_wga > best) {
            best = t.val_wga;
            result.best_index = i;
        }
    }
    if (best < -1.5) throw InvalidInput("run_sweep: no trial completed");
    return result;
}

struct LabelEfficiencyPoint {
    double fraction = 0.0;
    double mean_test_wga = 0.0;
    double std_test_wga = 0.0;
};

struct LabelEfficiencyRun {
    double fraction = 0.0;
    std::uint64_t subsample_seed = 0;
    TrialRecord selected;
};

struct LabelEfficiencyResult {
    std::vector<LabelEfficiencyRun> runs;
    std::vector<LabelEfficiencyPoint> curve;
};

/**
 * For each validation fraction and subsample seed: shrink the validation
 * split, re-tune the whole grid on what remains, and score the selected
 * model on the untouched test split. Early stopping is disabled whenever
 * the validation set is subsampled, so degraded runs fall back to
 * final-epoch parameters.
 */
inline LabelEfficiencyResult label_efficiency_curve(const EmbeddingDataset& dataset,
                                                    const LinearHead& stage1_head,
                                                    const SweepSpec& spec,
                                                    std::span<const double> fractions,
                                                    std::span<const std::uint64_t> subsample_seeds,
                                                    std::size_t jobs = 1) {
    if (fractions.empty() || subsample_seeds.empty())
        throw InvalidInput("label_efficiency_curve: empty fractions or seeds");
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0)
            throw InvalidInput("label_efficiency_curve: fractions must lie in (0, 1]");

    LabelEfficiencyResult result;
    for (double fraction : fractions) {
        std::vector<double> wgas;
        for (std::uint64_t seed : subsample_seeds) {
            Rng rng(seed);
            EmbeddingDataset working = subsample_validation(dataset, fraction, rng);
            SweepSpec trial_spec = spec;
            trial_spec.validation_fraction = 1.0;  // already applied
            if (fraction < 1.0) trial_spec.train.early_stopping = false;
            auto sweep = run_sweep(working, stage1_head, trial_spec, jobs);
            LabelEfficiencyRun run;
            run.fraction = fraction;
            run.subsample_seed = seed;
            run.selected = sweep.trials[sweep.best_index];
            wgas.push_back(run.selected.test_wga);
            result.runs.push_back(std::move(run));
        }
        double mean = 0.0;
        for (double w : wgas) mean += w;
        mean /= static_cast<double>(wgas.size());
        double var = 0.0;
        for (double w : wgas) var += (w - mean) * (w - mean);
        var /= static_cast<double>(wgas.size());
        result.curve.push_back({fraction, mean, std::sqrt(var)});
    }
    return result;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot open file for writing: " + path);
    out << "gamma,lambda,learning_rate,seed,val_wga,test_wga,test_mean_acc,selected_epoch,status\n";
    for (const auto& t : result.trials) {
        out << detail::fmt_double(t.gamma) << "," << detail::fmt_double(t.lambda) << ","
            << detail::fmt_double(t.learning_rate) << "," << t.seed << ","
            << detail::fmt_double(t.val_wga) << "," << detail::fmt_double(t.test_wga) << ","
            << detail::fmt_double(t.test_mean_acc) << "," << t.selected_epoch << "," << t.status
            << "\n";
    }
    if (!out) throw InvalidInput("write failed: " + path);
}

inline void write_label_efficiency_csv(const LabelEfficiencyResult& result,
                                       const std::string& detail_path,
                                       const std::string& summary_path) {
    std::ofstream out(detail_path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot open file for writing: " + detail_path);
    out << "fraction,seed,gamma,lambda,learning_rate,val_wga,test_wga,test_mean_acc,status\n";
    for (const auto& r : result.runs) {
        out << detail::fmt_double(r.fraction) << "," << r.subsample_seed << ","
            << detail::fmt_double(r.selected.gamma) << "," << detail::fmt_double(r.selected.lambda)
            << "," << detail::fmt_double(r.selected.learning_rate) << ","
            << detail::fmt_double(r.selected.val_wga) << ","
            << detail::fmt_double(r.selected.test_wga) << ","
            << detail::fmt_double(r.selected.test_mean_acc) << "," << r.selected.status << "\n";
    }
    if (!out) throw InvalidInput("write failed: " + detail_path);

    std::ofstream summary(summary_path, std::ios::trunc);
    if (!summary) throw InvalidInput("cannot open file for writing: " + summary_path);
    summary << "fraction,mean_test_wga,std_test_wga\n";
    for (const auto& p : result.curve)
        summary << detail::fmt_double(p.fraction) << "," << detail::fmt_double(p.mean_test_wga)
                << "," << detail::fmt_double(p.std_test_wga) << "\n";
    if (!summary) throw InvalidInput("write failed: " + summary_path);
}

}  // namespace afr
