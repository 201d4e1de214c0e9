// Command-line pipeline: generate synthetic data, train the stage-1 ERM
// model, retrain the last layer with per-example weights, sweep
// hyperparameters, and export plot data. Every command is reproducible from
// its echoed config plus the seed; artifacts use fixed filenames inside the
// run directory.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "afr/config.hpp"
#include "afr/dataset.hpp"
#include "afr/dataset_io.hpp"
#include "afr/error.hpp"
#include "afr/head.hpp"
#include "afr/metrics.hpp"
#include "afr/mlp.hpp"
#include "afr/sweep.hpp"
#include "afr/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// fixed artifact names inside the run directory
constexpr const char* kDatasetFile = "dataset.afre";
constexpr const char* kEmbeddingsFile = "embeddings.afre";
constexpr const char* kStage1File = "stage1.afrm";
constexpr const char* kStage1HeadFile = "stage1_head.afrh";
constexpr const char* kAfrHeadFile = "head_afr.afrh";
constexpr const char* kDiagnosticsFile = "diagnostics.json";
constexpr const char* kStage1DiagnosticsFile = "stage1_diagnostics.json";
constexpr const char* kWeightsFile = "weights.csv";
constexpr const char* kSweepFile = "sweep.csv";
constexpr const char* kLabelEffFile = "label_efficiency.csv";
constexpr const char* kLabelEffSummaryFile = "label_efficiency_summary.csv";
constexpr const char* kBalanceTrajectoryFile = "balance_learner_trajectory.csv";
constexpr const char* kGammaGroupWeightFile = "gamma_vs_group_weight.csv";
constexpr const char* kGammaWgaNeffFile = "gamma_vs_wga_neff.csv";
constexpr const char* kResolvedConfigFile = "config.resolved";

// seed stream purposes
constexpr std::uint64_t kSplitPurpose = 2;
constexpr std::uint64_t kStage1Purpose = 3;
constexpr std::uint64_t kBalancePurpose = 4;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Cli {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t jobs = 1;
};

afr::RunConfig load_config(const Cli& cli) {
    afr::RunConfig cfg;
    if (!cli.config_path.empty()) cfg.load_file(cli.config_path);
    if (cli.seed_given) cfg.set("seed", std::to_string(cli.seed));
    return cfg;
}

void echo_config(const afr::RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    std::ofstream f(out / kResolvedConfigFile, std::ios::trunc);
    if (!f) throw afr::InvalidInput("cannot write " + (out / kResolvedConfigFile).string());
    f << cfg.resolved_text();
}

fs::path input_path(const afr::RunConfig& cfg, const std::string& key, const fs::path& out,
                    const char* fallback) {
    std::string configured = cfg.raw(key);
    return configured.empty() ? out / fallback : fs::path(configured);
}

void require_artifacts(const std::vector<fs::path>& paths) {
    std::string missing;
    for (const auto& p : paths) {
        if (fs::exists(p)) continue;
        if (!missing.empty()) missing += ", ";
        missing += p.string();
    }
    if (!missing.empty()) throw afr::InvalidInput("missing run artifacts: " + missing);
}

afr::WeightKind parse_kind(const std::string& name) {
    if (name == "afr-exponential") return afr::WeightKind::AfrExponential;
    if (name == "focal") return afr::WeightKind::Focal;
    if (name == "power") return afr::WeightKind::Power;
    if (name == "class-balanced") return afr::WeightKind::ClassBalancedOnly;
    if (name == "jtt-binary") return afr::WeightKind::JttBinary;
    if (name == "oracle-group-balanced") return afr::WeightKind::OracleGroupBalanced;
    throw afr::ConfigError("scheme.kind: unknown scheme \"" + name + "\"");
}

afr::Objective parse_objective(const std::string& name) {
    if (name == "afr") return afr::Objective::Afr;
    if (name == "erm") return afr::Objective::Erm;
    if (name == "gdro") return afr::Objective::Gdro;
    throw afr::ConfigError("train.objective: unknown objective \"" + name + "\"");
}

afr::TrainConfig train_config_from(const afr::RunConfig& cfg) {
    afr::TrainConfig tc;
    tc.learning_rate = cfg.get_double("train.learning_rate");
    tc.max_epochs = cfg.get_u64("train.max_epochs");
    tc.lambda = cfg.get_double("train.lambda");
    tc.grad_clip_norm = cfg.get_double("train.grad_clip_norm");
    tc.early_stopping = cfg.get_bool("train.early_stopping");
    tc.objective = parse_objective(cfg.raw("train.objective"));
    return tc;
}

afr::WeightScheme scheme_from(const afr::RunConfig& cfg) {
    return afr::WeightScheme{
        .kind = parse_kind(cfg.raw("scheme.kind")),
        .gamma = cfg.get_double("scheme.gamma"),
        .upweight_lambda = cfg.get_double("scheme.upweight_lambda"),
    };
}

afr::SweepSpec sweep_spec_from(const afr::RunConfig& cfg) {
    afr::SweepSpec spec;
    spec.gamma_grid = cfg.get_double_list("sweep.gamma_grid");
    spec.lambda_grid = cfg.get_double_list("sweep.lambda_grid");
    spec.learning_rate_grid = cfg.get_double_list("sweep.learning_rate_grid");
    spec.seeds = cfg.get_u64_list("sweep.seeds");
    spec.scheme = parse_kind(cfg.raw("scheme.kind"));
    spec.jtt_upweight = cfg.get_double("scheme.upweight_lambda");
    spec.train = train_config_from(cfg);
    spec.validation_fraction = cfg.get_double("sweep.validation_fraction");
    return spec;
}

std::vector<std::size_t> sizes_from(const afr::RunConfig& cfg, const std::string& key) {
    std::vector<std::size_t> out;
    for (auto v : cfg.get_u64_list(key)) out.push_back(static_cast<std::size_t>(v));
    return out;
}

struct LoadedRun {
    afr::EmbeddingDataset embeddings;
    afr::LinearHead stage1_head;
};

LoadedRun load_run_inputs(const afr::RunConfig& cfg, const fs::path& out) {
    fs::path emb = input_path(cfg, "io.embeddings", out, kEmbeddingsFile);
    fs::path head = input_path(cfg, "io.stage1_head", out, kStage1HeadFile);
    require_artifacts({emb, head});
    return LoadedRun{afr::read_embedding_file(emb.string()), afr::read_head_file(head.string())};
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

void cmd_generate(const afr::RunConfig& cfg, const fs::path& out) {
    auto proportions = cfg.get_double_list("data.group_proportions");
    double sum = 0.0;
    for (double p : proportions) {
        if (!(p > 0.0))
            throw afr::ConfigError("data.group_proportions: entries must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw afr::ConfigError("data.group_proportions: entries must sum to 1");
    for (const char* key : {"split.erm_fraction", "split.val_fraction", "split.test_fraction"}) {
        double f = cfg.get_double(key);
        if (!(f > 0.0) || !(f < 1.0))
            throw afr::ConfigError(std::string(key) + ": must lie in (0, 1)");
    }

    afr::SyntheticSpec spec;
    spec.n_total = cfg.get_u64("data.n_total");
    spec.dims = cfg.get_u64("data.dims");
    spec.group_proportions = proportions;
    spec.core_separation = cfg.get_double("data.core_separation");
    spec.spurious_separation = cfg.get_double("data.spurious_separation");
    spec.noise_std = cfg.get_double("data.noise_std");
    spec.seed = cfg.get_u64("seed");

    afr::EmbeddingDataset ds = afr::generate_synthetic(spec);
    afr::Rng split_rng(afr::derive_seed(spec.seed, kSplitPurpose));
    ds = afr::split(ds, cfg.get_double("split.erm_fraction"), cfg.get_double("split.val_fraction"),
                    cfg.get_double("split.test_fraction"), split_rng,
                    cfg.get_bool("split.stratified"));
    afr::write_embedding_file(ds, (out / kDatasetFile).string());

    std::cout << "generate: wrote " << (out / kDatasetFile).string() << " (" << ds.n() << " x "
              << ds.dim() << ", ERM " << ds.indices_of(afr::Split::Erm).size() << ", RW "
              << ds.indices_of(afr::Split::Rw).size() << ", VAL "
              << ds.indices_of(afr::Split::Val).size() << ", TEST "
              << ds.indices_of(afr::Split::Test).size() << ")\n";
}

// ---------------------------------------------------------------------------
// train-base
// ---------------------------------------------------------------------------

void cmd_train_base(const afr::RunConfig& cfg, const fs::path& out) {
    fs::path dataset_path = input_path(cfg, "io.dataset", out, kDatasetFile);
    require_artifacts({dataset_path});
    afr::EmbeddingDataset ds = dataset_path.extension() == ".csv"
                                   ? afr::read_embedding_csv(dataset_path.string())
                                   : afr::read_embedding_file(dataset_path.string());

    afr::Stage1Config stage1;
    stage1.hidden_sizes = sizes_from(cfg, "stage1.hidden_sizes");
    stage1.epochs = cfg.get_u64("stage1.epochs");
    stage1.learning_rate = cfg.get_double("stage1.learning_rate");
    stage1.batch_size = cfg.get_u64("stage1.batch_size");

    afr::Rng rng(afr::derive_seed(cfg.get_u64("seed"), kStage1Purpose));
    afr::Stage1Result result = afr::train_erm_extractor(ds, stage1, rng);

    afr::write_mlp_file(result.extractor, (out / kStage1File).string());
    afr::write_head_file(result.head, (out / kStage1HeadFile).string());
    afr::EmbeddingDataset embeddings = afr::cache_embeddings(result.extractor, ds);
    afr::write_embedding_file(embeddings, (out / kEmbeddingsFile).string());

    json diag{{"train_accuracy", result.train_accuracy}, {"final_loss", result.final_loss}};
    if (embeddings.groups) {
        auto test = afr::evaluate_probs(
            afr::predict_probs(result.head, embeddings.features_of(afr::Split::Test)),
            embeddings.labels_of(afr::Split::Test), embeddings.groups_of(afr::Split::Test),
            embeddings.num_groups, embeddings.train_group_prevalence());
        diag["test"] = afr::diagnostics_json(test);
        std::cout << "train-base: ERM train accuracy " << fmt(result.train_accuracy)
                  << ", test WGA " << fmt(test.worst_group_accuracy) << "\n";
    } else {
        std::cout << "train-base: ERM train accuracy " << fmt(result.train_accuracy) << "\n";
    }
    std::ofstream f(out / kStage1DiagnosticsFile, std::ios::trunc);
    f << diag.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// reweight
// ---------------------------------------------------------------------------

void cmd_reweight(const afr::RunConfig& cfg, const fs::path& out) {
    LoadedRun run = load_run_inputs(cfg, out);
    const auto& ds = run.embeddings;
    if (!ds.groups) throw afr::InvalidInput("reweight: dataset has no group labels");

    afr::Matrix rw_x = ds.features_of(afr::Split::Rw);
    auto rw_y = ds.labels_of(afr::Split::Rw);
    auto rw_groups = ds.groups_of(afr::Split::Rw);
    if (rw_x.rows() == 0) throw afr::InvalidInput("reweight: reweighting split is empty");

    afr::Matrix probs = afr::predict_probs(run.stage1_head, rw_x);
    auto p_hat = afr::correct_class_probs(probs, rw_y);
    auto preds = afr::argmax_rows(probs);
    std::vector<std::uint8_t> correct(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) correct[i] = preds[i] == rw_y[i] ? 1 : 0;

    afr::WeightScheme scheme = scheme_from(cfg);
    afr::WeightVector mu = afr::compute_weights(scheme, p_hat, rw_y, &correct, &rw_groups);

    afr::TrainConfig tc = train_config_from(cfg);
    auto val_y = ds.labels_of(afr::Split::Val);
    auto val_groups = ds.groups_of(afr::Split::Val);
    afr::TrainReport report =
        afr::train_head(run.stage1_head, rw_x, rw_y, &rw_groups, &mu, tc,
                        ds.features_of(afr::Split::Val), val_y, val_groups, ds.num_groups);

    afr::write_head_file(*report.head, (out / kAfrHeadFile).string());

    auto prevalence = ds.train_group_prevalence();
    auto test = afr::evaluate_probs(
        afr::predict_probs(*report.head, ds.features_of(afr::Split::Test)),
        ds.labels_of(afr::Split::Test), ds.groups_of(afr::Split::Test), ds.num_groups, prevalence);
    auto aggregated = afr::group_aggregated_weights(mu, rw_groups, ds.num_groups);

    json diag{
        {"scheme", afr::weight_kind_name(scheme.kind)},
        {"gamma", scheme.gamma},
        {"lambda", tc.lambda},
        {"selected_epoch", report.selected_epoch},
        {"val_wga", report.val_wga[report.selected_epoch]},
        {"n_eff", afr::effective_sample_size(mu)},
        {"group_aggregated_weights", aggregated},
        {"test", afr::diagnostics_json(test)},
    };
    std::ofstream f(out / kDiagnosticsFile, std::ios::trunc);
    f << diag.dump(2) << "\n";

    std::ofstream w(out / kWeightsFile, std::ios::trunc);
    w << "index,label,group,p_hat,mu\n";
    for (std::size_t i = 0; i < mu.mu.size(); ++i)
        w << i << "," << rw_y[i] << "," << rw_groups[i] << "," << fmt(p_hat[i]) << ","
          << fmt(mu.mu[i]) << "\n";

    std::cout << "reweight: selected epoch " << report.selected_epoch << ", val WGA "
              << fmt(report.val_wga[report.selected_epoch]) << ", test WGA "
              << fmt(test.worst_group_accuracy) << "\n";
}

// ---------------------------------------------------------------------------
// sweep / label-efficiency
// ---------------------------------------------------------------------------

void cmd_sweep(const afr::RunConfig& cfg, const fs::path& out, std::size_t jobs) {
    LoadedRun run = load_run_inputs(cfg, out);
    afr::SweepSpec spec = sweep_spec_from(cfg);
    afr::SweepResult result = afr::run_sweep(run.embeddings, run.stage1_head, spec, jobs);
    afr::write_sweep_csv(result, (out / kSweepFile).string());
    const auto& best = result.trials[result.best_index];
    std::cout << "sweep: " << result.trials.size() << " trials, best gamma " << fmt(best.gamma)
              << " lambda " << fmt(best.lambda) << " lr " << fmt(best.learning_rate)
              << " val WGA " << fmt(best.val_wga) << " test WGA " << fmt(best.test_wga) << "\n";
}

void cmd_label_efficiency(const afr::RunConfig& cfg, const fs::path& out, std::size_t jobs) {
    LoadedRun run = load_run_inputs(cfg, out);
    afr::SweepSpec spec = sweep_spec_from(cfg);
    auto fractions = cfg.get_double_list("label_efficiency.fractions");
    auto seeds = cfg.get_u64_list("label_efficiency.seeds");
    afr::LabelEfficiencyResult result =
        afr::label_efficiency_curve(run.embeddings, run.stage1_head, spec, fractions, seeds, jobs);
    afr::write_label_efficiency_csv(result, (out / kLabelEffFile).string(),
                                    (out / kLabelEffSummaryFile).string());
    for (const auto& p : result.curve)
        std::cout << "label-efficiency: fraction " << fmt(p.fraction) << " mean test WGA "
                  << fmt(p.mean_test_wga) << " std " << fmt(p.std_test_wga) << "\n";
}

// ---------------------------------------------------------------------------
// balance-learner
// ---------------------------------------------------------------------------

afr::BalanceResult run_balance_learner(const afr::RunConfig& cfg, const LoadedRun& run) {
    const auto& ds = run.embeddings;
    if (!ds.groups) throw afr::InvalidInput("balance-learner: dataset has no group labels");
    afr::Matrix rw_x = ds.features_of(afr::Split::Rw);
    auto rw_y = ds.labels_of(afr::Split::Rw);
    auto rw_groups = ds.groups_of(afr::Split::Rw);
    afr::Matrix p_erm = afr::predict_probs(run.stage1_head, rw_x);

    afr::BalanceConfig bc;
    bc.hidden_sizes = sizes_from(cfg, "balance.hidden_sizes");
    bc.steps = cfg.get_u64("balance.steps");
    bc.adam.learning_rate = cfg.get_double("balance.learning_rate");
    afr::Rng rng(afr::derive_seed(cfg.get_u64("seed"), kBalancePurpose));
    return afr::train_balance_learner(p_erm, rw_y, rw_groups, ds.num_groups, bc, rng);
}

void write_trajectory_csv(const afr::BalanceResult& result, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw afr::InvalidInput("cannot open file for writing: " + path.string());
    out << "step,group,aggregated_weight\n";
    for (std::size_t step = 0; step < result.trajectory.size(); ++step)
        for (std::size_t g = 0; g < result.trajectory[step].size(); ++g)
            out << step << "," << g << "," << fmt(result.trajectory[step][g]) << "\n";
}

void cmd_balance_learner(const afr::RunConfig& cfg, const fs::path& out) {
    LoadedRun run = load_run_inputs(cfg, out);
    afr::BalanceResult result = run_balance_learner(cfg, run);
    write_trajectory_csv(result, out / kBalanceTrajectoryFile);
    std::cout << "balance-learner: final loss " << fmt(result.final_loss) << ", aggregates";
    for (double a : result.trajectory.back()) std::cout << " " << fmt(a);
    std::cout << "\n";
}

// ---------------------------------------------------------------------------
// plots
// ---------------------------------------------------------------------------

void cmd_plots(const afr::RunConfig& cfg, const fs::path& out, std::size_t jobs) {
    LoadedRun run = load_run_inputs(cfg, out);
    const auto& ds = run.embeddings;
    if (!ds.groups) throw afr::InvalidInput("plots: dataset has no group labels");

    afr::Matrix rw_x = ds.features_of(afr::Split::Rw);
    auto rw_y = ds.labels_of(afr::Split::Rw);
    auto rw_groups = ds.groups_of(afr::Split::Rw);
    afr::Matrix probs = afr::predict_probs(run.stage1_head, rw_x);
    auto p_hat = afr::correct_class_probs(probs, rw_y);
    auto preds = afr::argmax_rows(probs);
    std::vector<std::uint8_t> correct(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) correct[i] = preds[i] == rw_y[i] ? 1 : 0;

    afr::SweepSpec spec = sweep_spec_from(cfg);

    // (a) group-aggregated weight per gamma
    {
        std::ofstream f(out / kGammaGroupWeightFile, std::ios::trunc);
        f << "gamma,group,aggregated_weight\n";
        for (double gamma : spec.gamma_grid) {
            afr::WeightScheme scheme{.kind = spec.scheme, .gamma = gamma,
                                     .upweight_lambda = spec.scheme == afr::WeightKind::JttBinary
                                                            ? gamma
                                                            : spec.jtt_upweight};
            auto mu = afr::compute_weights(scheme, p_hat, rw_y, &correct, &rw_groups);
            auto agg = afr::group_aggregated_weights(mu, rw_groups, ds.num_groups);
            for (std::size_t g = 0; g < agg.size(); ++g)
                f << fmt(gamma) << "," << g << "," << fmt(agg[g]) << "\n";
        }
    }

    // (b) test WGA and effective sample size per gamma, at the configured
    // lambda and learning rate
    {
        afr::SweepSpec per_gamma = spec;
        per_gamma.lambda_grid = {spec.train.lambda};
        per_gamma.learning_rate_grid = {spec.train.learning_rate};
        std::ofstream f(out / kGammaWgaNeffFile, std::ios::trunc);
        f << "gamma,test_wga_mean,test_wga_std,n_eff\n";
        for (double gamma : spec.gamma_grid) {
            afr::WeightScheme scheme{.kind = spec.scheme, .gamma = gamma,
                                     .upweight_lambda = spec.scheme == afr::WeightKind::JttBinary
                                                            ? gamma
                                                            : spec.jtt_upweight};
            auto mu = afr::compute_weights(scheme, p_hat, rw_y, &correct, &rw_groups);
            double n_eff = afr::effective_sample_size(mu);
            per_gamma.gamma_grid = {gamma};
            auto result = afr::run_sweep(ds, run.stage1_head, per_gamma, jobs);
            double mean = 0.0;
            for (const auto& t : result.trials) mean += t.test_wga;
            mean /= static_cast<double>(result.trials.size());
            double var = 0.0;
            for (const auto& t : result.trials) var += (t.test_wga - mean) * (t.test_wga - mean);
            var /= static_cast<double>(result.trials.size());
            f << fmt(gamma) << "," << fmt(mean) << "," << fmt(std::sqrt(var)) << "," << fmt(n_eff)
              << "\n";
        }
    }

    // (c) balance-learner trajectory; reuse the file when the
    // balance-learner command already produced it
    fs::path traj = out / kBalanceTrajectoryFile;
    if (fs::exists(traj)) {
        std::ifstream f(traj);
        std::string header;
        std::getline(f, header);
        if (!header.empty() && header.back() == '\r') header.pop_back();
        if (header != "step,group,aggregated_weight")
            throw afr::ParseError("unexpected trajectory header \"" + header + "\"", 1);
    } else {
        afr::BalanceResult result = run_balance_learner(cfg, run);
        write_trajectory_csv(result, traj);
    }

    std::cout << "plots: wrote " << kGammaGroupWeightFile << ", " << kGammaWgaNeffFile << ", "
              << kBalanceTrajectoryFile << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage group-robust training on cached embeddings"};
    app.require_subcommand(1);

    Cli cli;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", cli.config_path, "config file (key = value lines)");
        sub->add_option("--out", cli.out_dir, "run directory for artifacts")->required();
        sub->add_option("--seed", cli.seed, "override the config seed")
            ->each([&](const std::string&) { cli.seed_given = true; });
        sub->add_option("--jobs", cli.jobs, "parallel trials (default 1)");
    };

    auto* generate = app.add_subcommand("generate", "generate a synthetic dataset and split it");
    auto* train_base = app.add_subcommand("train-base", "train the stage-1 ERM model and cache embeddings");
    auto* reweight = app.add_subcommand("reweight", "retrain the last layer with a weighted loss");
    auto* sweep = app.add_subcommand("sweep", "grid-search gamma/lambda/lr on validation WGA");
    auto* label_eff = app.add_subcommand("label-efficiency", "sweep under subsampled validation sets");
    auto* balance = app.add_subcommand("balance-learner", "train a network to balance group weights");
    auto* plots = app.add_subcommand("plots", "export plot-data CSVs from run artifacts");
    for (auto* sub : {generate, train_base, reweight, sweep, label_eff, balance, plots})
        add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        afr::RunConfig cfg = load_config(cli);
        fs::path out(cli.out_dir);
        echo_config(cfg, out);
        if (generate->parsed()) cmd_generate(cfg, out);
        else if (train_base->parsed()) cmd_train_base(cfg, out);
        else if (reweight->parsed()) cmd_reweight(cfg, out);
        else if (sweep->parsed()) cmd_sweep(cfg, out, cli.jobs);
        else if (label_eff->parsed()) cmd_label_efficiency(cfg, out, cli.jobs);
        else if (balance->parsed()) cmd_balance_learner(cfg, out);
        else if (plots->parsed()) cmd_plots(cfg, out, cli.jobs);
        return 0;
    } catch (const afr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const afr::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const afr::ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const afr::InvalidInput& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
