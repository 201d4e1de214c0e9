#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "afr/config.hpp"
#include "afr/dataset_io.hpp"
#include "afr/head.hpp"

using namespace afr;
namespace fs = std::filesystem;

namespace {

// Small, fast configuration shared by the pipeline tests.
const char* kSmallConfig = R"(
data.n_total = 600
data.dims = 4
data.group_proportions = 0.6,0.1,0.05,0.25
split.val_fraction = 0.2
split.test_fraction = 0.2
stage1.hidden_sizes = 8,8
stage1.epochs = 25
stage1.batch_size = 16
scheme.gamma = 2.0
train.max_epochs = 80
train.learning_rate = 0.05
sweep.gamma_grid = 0,2
balance.steps = 150
balance.hidden_sizes = 16,16
label_efficiency.fractions = 0.5,1.0
label_efficiency.seeds = 1,2
)";

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "afr_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    auto path = dir / "run.cfg";
    std::ofstream f(path);
    f << text;
    return path;
}

int run_cli(const std::string& args, const fs::path& stderr_to = {}) {
    std::string cmd = std::string(AFR_CLI_PATH) + " " + args + " >/dev/null";
    if (!stderr_to.empty()) cmd += " 2>" + stderr_to.string();
    else cmd += " 2>/dev/null";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void build_pipeline(const fs::path& dir, const fs::path& cfg, const std::string& seed = "5") {
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + dir.string() +
                      " --seed " + seed),
              0);
    ASSERT_EQ(run_cli("train-base --config " + cfg.string() + " --out " + dir.string() +
                      " --seed " + seed),
              0);
}

}  // namespace

TEST(CliGenerate, DefaultConfigProducesReadableFile) {
    auto dir = fresh_dir("gen_default");
    ASSERT_EQ(run_cli("generate --out " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "config.resolved"));
    auto ds = read_embedding_file((dir / "dataset.afre").string());
    EXPECT_EQ(ds.n(), 5000u);
    EXPECT_EQ(ds.num_groups, 4u);
}

TEST(CliGenerate, SameSeedGivesBitIdenticalFiles) {
    auto a = fresh_dir("gen_a");
    auto b = fresh_dir("gen_b");
    auto cfg = write_config(a, kSmallConfig);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + a.string() + " --seed 9"),
              0);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + b.string() + " --seed 9"),
              0);
    EXPECT_EQ(slurp(a / "dataset.afre"), slurp(b / "dataset.afre"));
    EXPECT_EQ(slurp(a / "config.resolved"), slurp(b / "config.resolved"));
}

TEST(CliGenerate, BadProportionsExitTwoNamingField) {
    auto dir = fresh_dir("gen_bad");
    auto cfg = write_config(dir, "data.group_proportions = 0.5,0.2,0.2,0.2\n");
    auto errfile = dir / "stderr.txt";
    EXPECT_EQ(run_cli("generate --config " + cfg.string() + " --out " + dir.string(), errfile), 2);
    EXPECT_NE(slurp(errfile).find("data.group_proportions"), std::string::npos);
}

TEST(CliGenerate, UnknownConfigKeyExitTwoNamingKey) {
    auto dir = fresh_dir("gen_unknown");
    auto cfg = write_config(dir, "data.bogus_knob = 1\n");
    auto errfile = dir / "stderr.txt";
    EXPECT_EQ(run_cli("generate --config " + cfg.string() + " --out " + dir.string(), errfile), 2);
    EXPECT_NE(slurp(errfile).find("data.bogus_knob"), std::string::npos);
}

TEST(CliTrainBase, RerunIsBitIdentical) {
    auto dir = fresh_dir("tb_a");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    auto stage1 = slurp(dir / "stage1.afrm");
    auto head = slurp(dir / "stage1_head.afrh");
    auto emb = slurp(dir / "embeddings.afre");
    ASSERT_EQ(run_cli("train-base --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);
    EXPECT_EQ(slurp(dir / "stage1.afrm"), stage1);
    EXPECT_EQ(slurp(dir / "stage1_head.afrh"), head);
    EXPECT_EQ(slurp(dir / "embeddings.afre"), emb);
    EXPECT_TRUE(fs::exists(dir / "stage1_diagnostics.json"));
}

TEST(CliTrainBase, AcceptsCsvDatasetByExtension) {
    auto dir = fresh_dir("tb_csv");
    auto cfg = write_config(dir, kSmallConfig);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);
    auto ds = read_embedding_file((dir / "dataset.afre").string());
    write_embedding_csv(ds, (dir / "dataset.csv").string());
    write_config(dir, std::string(kSmallConfig) + "io.dataset = " +
                          (dir / "dataset.csv").string() + "\n");
    ASSERT_EQ(run_cli("train-base --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);
    EXPECT_TRUE(fs::exists(dir / "embeddings.afre"));
}

TEST(CliTrainBase, CorruptDatasetExitsThree) {
    auto dir = fresh_dir("tb_corrupt");
    auto cfg = write_config(dir, kSmallConfig);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + dir.string()), 0);
    {
        std::fstream f(dir / "dataset.afre", std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    auto errfile = dir / "stderr.txt";
    EXPECT_EQ(run_cli("train-base --config " + cfg.string() + " --out " + dir.string(), errfile),
              3);
    EXPECT_NE(slurp(errfile).find("magic"), std::string::npos);
}

TEST(CliReweight, EmitsDiagnosticsAndNormalizedWeightDump) {
    auto dir = fresh_dir("rw_main");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("reweight --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);

    auto head = read_head_file((dir / "head_afr.afrh").string());
    EXPECT_GT(head.num_classes(), 0u);

    auto diag = slurp(dir / "diagnostics.json");
    EXPECT_NE(diag.find("n_eff"), std::string::npos);
    EXPECT_NE(diag.find("group_aggregated_weights"), std::string::npos);
    EXPECT_NE(diag.find("worst_group_accuracy"), std::string::npos);

    std::ifstream w(dir / "weights.csv");
    std::string header;
    std::getline(w, header);
    EXPECT_EQ(header, "index,label,group,p_hat,mu");
    double sum = 0.0;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(w, line)) {
        if (line.empty()) continue;
        auto last_comma = line.rfind(',');
        sum += std::stod(line.substr(last_comma + 1));
        ++rows;
    }
    EXPECT_GT(rows, 0u);
    EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(CliReweight, GammaZeroMatchesClassBalancedScheme) {
    auto dir = fresh_dir("rw_equiv");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);

    std::string base = kSmallConfig;
    std::string gamma0 = base;
    gamma0.replace(gamma0.find("scheme.gamma = 2.0"), 18, "scheme.gamma = 0.0");
    write_config(dir, gamma0);
    fs::rename(dir / "run.cfg", dir / "gamma0.cfg");
    ASSERT_EQ(run_cli("reweight --config " + (dir / "gamma0.cfg").string() + " --out " +
                      dir.string() + " --seed 5"),
              0);
    auto head_gamma0 = slurp(dir / "head_afr.afrh");

    write_config(dir, base + "scheme.kind = class-balanced\n");
    fs::rename(dir / "run.cfg", dir / "cb.cfg");
    ASSERT_EQ(run_cli("reweight --config " + (dir / "cb.cfg").string() + " --out " +
                      dir.string() + " --seed 5"),
              0);
    EXPECT_EQ(slurp(dir / "head_afr.afrh"), head_gamma0);
}

TEST(CliSweep, EmitsSchemaStableCsvAndIsDeterministic) {
    auto dir = fresh_dir("sweep_main");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("sweep --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5 --jobs 2"),
              0);
    auto first = slurp(dir / "sweep.csv");
    ASSERT_EQ(run_cli("sweep --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5 --jobs 1"),
              0);
    EXPECT_EQ(slurp(dir / "sweep.csv"), first);

    std::istringstream in(first);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header,
              "gamma,lambda,learning_rate,seed,val_wga,test_wga,test_mean_acc,selected_epoch,"
              "status");
}

TEST(CliLabelEfficiency, EmitsDetailAndSummary) {
    auto dir = fresh_dir("le_main");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("label-efficiency --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);
    std::ifstream detail(dir / "label_efficiency.csv");
    std::string header;
    std::getline(detail, header);
    EXPECT_EQ(header,
              "fraction,seed,gamma,lambda,learning_rate,val_wga,test_wga,test_mean_acc,status");
    std::ifstream summary(dir / "label_efficiency_summary.csv");
    std::getline(summary, header);
    EXPECT_EQ(header, "fraction,mean_test_wga,std_test_wga");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(summary, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 2u);  // one per fraction
}

TEST(CliBalanceLearner, TrajectoryRowsArePerStepAndNormalized) {
    auto dir = fresh_dir("bl_main");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("balance-learner --config " + cfg.string() + " --out " + dir.string() +
                      " --seed 5"),
              0);
    std::ifstream f(dir / "balance_learner_trajectory.csv");
    std::string header;
    std::getline(f, header);
    EXPECT_EQ(header, "step,group,aggregated_weight");

    // per-step sums over groups must be 1
    std::map<int, double> sums;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        int step = std::stoi(line.substr(0, line.find(',')));
        sums[step] += std::stod(line.substr(line.rfind(',') + 1));
    }
    EXPECT_EQ(sums.size(), 151u);  // steps 0..150
    for (const auto& [step, sum] : sums) EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(CliReweight, DivergenceExitsFour) {
    auto dir = fresh_dir("rw_diverge");
    std::string text = kSmallConfig;
    text.replace(text.find("train.learning_rate = 0.05"), 26, "train.learning_rate = 1e308");
    auto cfg = write_config(dir, text);
    build_pipeline(dir, cfg);
    auto errfile = dir / "stderr.txt";
    EXPECT_EQ(run_cli("reweight --config " + cfg.string() + " --out " + dir.string() +
                          " --seed 5",
                      errfile),
              4);
    EXPECT_NE(slurp(errfile).find("divergence"), std::string::npos);
}

TEST(CliPlots, MissingArtifactsExitThreeListingFiles) {
    auto dir = fresh_dir("plots_missing");
    auto errfile = dir / "stderr.txt";
    EXPECT_EQ(run_cli("plots --out " + dir.string(), errfile), 3);
    auto err = slurp(errfile);
    EXPECT_NE(err.find("missing run artifacts"), std::string::npos);
    EXPECT_NE(err.find("embeddings.afre"), std::string::npos);
    EXPECT_NE(err.find("stage1_head.afrh"), std::string::npos);
}

TEST(CliPlots, EmitsAllThreeCsvsWithValidInvariants) {
    auto dir = fresh_dir("plots_main");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("plots --config " + cfg.string() + " --out " + dir.string() + " --seed 5"),
              0);

    // (a) per-gamma aggregated weights sum to 1
    {
        std::ifstream f(dir / "gamma_vs_group_weight.csv");
        std::string header;
        std::getline(f, header);
        EXPECT_EQ(header, "gamma,group,aggregated_weight");
        std::map<std::string, double> sums;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto first_comma = line.find(',');
            sums[line.substr(0, first_comma)] += std::stod(line.substr(line.rfind(',') + 1));
        }
        EXPECT_EQ(sums.size(), 2u);  // two grid points in the small config
        for (const auto& [gamma, sum] : sums) EXPECT_NEAR(sum, 1.0, 1e-9);
    }

    // (b) n_eff bounded by the reweighting split size
    {
        auto ds = read_embedding_file((dir / "embeddings.afre").string());
        double rw_size = static_cast<double>(ds.indices_of(Split::Rw).size());
        std::ifstream f(dir / "gamma_vs_wga_neff.csv");
        std::string header;
        std::getline(f, header);
        EXPECT_EQ(header, "gamma,test_wga_mean,test_wga_std,n_eff");
        std::string line;
        std::size_t rows = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            double n_eff = std::stod(line.substr(line.rfind(',') + 1));
            EXPECT_LE(n_eff, rw_size + 1e-9);
            EXPECT_GE(n_eff, 1.0 - 1e-9);
            ++rows;
        }
        EXPECT_EQ(rows, 2u);
    }

    // (c) trajectory emitted by plots itself when absent
    EXPECT_TRUE(fs::exists(dir / "balance_learner_trajectory.csv"));
}

TEST(CliPlots, MinorityGroupWeightRisesWithGamma) {
    auto dir = fresh_dir("plots_monotone");
    auto cfg = write_config(dir, kSmallConfig);
    build_pipeline(dir, cfg);
    ASSERT_EQ(run_cli("plots --config " + cfg.string() + " --out " + dir.string() + " --seed 5"),
              0);

    // group 2 is the rarest; its aggregate at gamma=2 must exceed gamma=0
    std::ifstream f(dir / "gamma_vs_group_weight.csv");
    std::string header, line;
    std::getline(f, header);
    std::map<std::pair<std::string, std::string>, double> table;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        table[{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1)}] =
            std::stod(line.substr(c2 + 1));
    }
    EXPECT_GT((table[{"2", "2"}]), (table[{"0", "2"}]));
}

TEST(CliConfig, EchoedConfigReproducesTheRun) {
    auto a = fresh_dir("echo_a");
    auto b = fresh_dir("echo_b");
    auto cfg = write_config(a, kSmallConfig);
    ASSERT_EQ(run_cli("generate --config " + cfg.string() + " --out " + a.string() + " --seed 3"),
              0);
    // rerun from the echoed config alone, with no --seed flag
    ASSERT_EQ(run_cli("generate --config " + (a / "config.resolved").string() + " --out " +
                      b.string()),
              0);
    EXPECT_EQ(slurp(a / "dataset.afre"), slurp(b / "dataset.afre"));
}

TEST(CliConfig, ResolvedEchoContainsEveryKey) {
    auto dir = fresh_dir("cfg_echo");
    ASSERT_EQ(run_cli("generate --out " + dir.string() + " --seed 77"), 0);
    auto text = slurp(dir / "config.resolved");
    for (const auto& [key, value] : RunConfig::defaults())
        EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
    EXPECT_NE(text.find("seed = 77"), std::string::npos);
}

TEST(CliConfig, DuplicateKeyRejected) {
    RunConfig cfg;
    auto dir = fresh_dir("cfg_dup");
    auto path = write_config(dir, "seed = 1\nseed = 2\n");
    EXPECT_THROW(cfg.load_file(path.string()), ConfigError);
}

TEST(CliConfig, TypedAccessorsValidate) {
    RunConfig cfg;
    cfg.set("train.learning_rate", "abc");
    EXPECT_THROW(cfg.get_double("train.learning_rate"), ConfigError);
    cfg.set("train.early_stopping", "yes");
    EXPECT_THROW(cfg.get_bool("train.early_stopping"), ConfigError);
    cfg.set("sweep.gamma_grid", "1,,2");
    EXPECT_THROW(cfg.get_double_list("sweep.gamma_grid"), ConfigError);
    EXPECT_THROW(cfg.set("nonsense.key", "1"), ConfigError);
}
