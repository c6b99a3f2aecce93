#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "odmixer/od_data.hpp"
#include "odmixer/run_config.hpp"

namespace fs = std::filesystem;
using namespace odmixer;

namespace {

const char* kTinyConfig = R"(n = 4
days = 9
intervals_per_day = 10
demand_scale = 3
horizon = 2
d = 4
layers = 1
max_epochs = 2
train_days = 6
val_days = 1
test_days = 2
grid = n=4,6;L=1;d=4
)";

fs::path scratch(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("odmixer_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_file(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
    return p;
}

int run_cli(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + " " + ODMIXER_CLI + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST(RunConfig, UnknownKeyRejected)
{
    RunConfig c;
    std::istringstream is("n = 5\nnot_a_key = 3\n");
    EXPECT_THROW(apply_config(c, is), ConfigError);
}

TEST(RunConfig, ParsesAndValidates)
{
    RunConfig c;
    std::istringstream is("# comment\nn = 5  # stations\nactivation = relu\nmask_ratios = 0, 0.25\nvariant = no_btl\n");
    apply_config(c, is);
    c.finalize();
    EXPECT_EQ(c.model.n, 5u);
    EXPECT_EQ(c.model.activation, Activation::relu);
    EXPECT_EQ(c.mask_ratios, (std::vector<double>{0.0, 0.25}));
    EXPECT_FALSE(c.model.ablation.btl);

    RunConfig bad;
    std::istringstream v("batch_size = -1\n");
    EXPECT_THROW(apply_config(bad, v), ConfigError);
    RunConfig variant;
    variant.variant = "no_such";
    EXPECT_THROW(variant.finalize(), ConfigError);
    EXPECT_THROW(parse_pairs("1-2"), ConfigError);
    EXPECT_EQ(parse_pairs("0:1, 3:2"), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {3, 2}}));
}

TEST(RunConfig, HelpListsEveryKeyWithDefault)
{
    const auto text = describe_config();
    for (const auto& k : config_schema()) EXPECT_NE(text.find("  " + k.key + " = "), std::string::npos) << k.key;
    EXPECT_NE(text.find("batch_size = 32"), std::string::npos);
}

TEST(Cli, PipelineSmoke)
{
    const auto dir = scratch("pipeline");
    const auto cfg = write_file(dir / "tiny.cfg", kTinyConfig);
    const std::string common = "--config " + cfg.string() + " --out " + (dir / "out").string();
    for (const char* sub : {"synth", "ingest", "train", "eval", "robust", "perf", "export-series"})
        EXPECT_EQ(run_cli(std::string(sub) + " " + common), 0) << sub;
    auto ds = load_dataset(dir / "out" / "dataset.odds");
    EXPECT_EQ(ds.n(), 4u);
    EXPECT_EQ(ds.identity_residual(), 0.0);
    for (const char* f : {"model.odmx", "history.csv", "eval.csv", "robustness.csv", "perf.csv", "series.csv"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    EXPECT_EQ(run_cli("ablate --variants all " + common), 0);
    const auto ablation = slurp(dir / "out" / "ablation.csv");
    EXPECT_EQ(std::count(ablation.begin(), ablation.end(), '\n'), 10);  // header, 8 variants, ha
}

TEST(Cli, TrainTwiceSameCheckpoint)
{
    const auto dir = scratch("determinism");
    const auto cfg = write_file(dir / "tiny.cfg", kTinyConfig);
    const std::string common = "--config " + cfg.string() + " --out " + (dir / "out").string();
    ASSERT_EQ(run_cli("synth " + common), 0);
    ASSERT_EQ(run_cli("ingest " + common), 0);
    ASSERT_EQ(run_cli("train " + common), 0);
    const auto first = slurp(dir / "out" / "model.odmx");
    ASSERT_EQ(run_cli("train " + common), 0);
    EXPECT_EQ(slurp(dir / "out" / "model.odmx"), first);
    ASSERT_EQ(run_cli("train --seed 7 " + common), 0);
    EXPECT_NE(slurp(dir / "out" / "model.odmx"), first);
}

TEST(Cli, SeedPrecedence)
{
    const auto dir = scratch("seed");
    const auto cfg = write_file(dir / "tiny.cfg", std::string(kTinyConfig) + "seed = 3\n");
    const std::string common = "--config " + cfg.string() + " --out " + (dir / "out").string();
    ASSERT_EQ(run_cli("synth " + common), 0);
    const auto from_config = slurp(dir / "out" / "transactions.csv");
    ASSERT_EQ(run_cli("synth --seed 3 " + common), 0);
    EXPECT_EQ(slurp(dir / "out" / "transactions.csv"), from_config);
    ASSERT_EQ(run_cli("synth --seed 4 " + common), 0);
    const auto from_flag = slurp(dir / "out" / "transactions.csv");
    EXPECT_NE(from_flag, from_config);
    ASSERT_EQ(run_cli("synth " + common, "ODMIXER_SEED=4"), 0);
    EXPECT_EQ(slurp(dir / "out" / "transactions.csv"), from_flag);
    ASSERT_EQ(run_cli("synth --seed 3 " + common, "ODMIXER_SEED=9"), 0);
    EXPECT_EQ(slurp(dir / "out" / "transactions.csv"), from_config);
}

TEST(Cli, ExitCodes)
{
    const auto dir = scratch("exit");
    const auto bad = write_file(dir / "bad.cfg", "bogus = 1\n");
    EXPECT_EQ(run_cli("train --config " + bad.string() + " --out " + dir.string()), 1);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("eval --out " + (dir / "empty").string()), 2);
    EXPECT_EQ(run_cli("--help"), 0);

    const auto cfg = write_file(dir / "nan.cfg", std::string(kTinyConfig) + "learning_rate = 1e30\n");
    const std::string common = "--config " + cfg.string() + " --out " + (dir / "out").string();
    ASSERT_EQ(run_cli("synth " + common), 0);
    ASSERT_EQ(run_cli("ingest " + common), 0);
    EXPECT_EQ(run_cli("train " + common), 3);
}
