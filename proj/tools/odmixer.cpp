// odmixer: command-line front end for data generation, training and the
// evaluation suites. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odmixer/evaluation.hpp"
#include "odmixer/ingestion.hpp"
#include "odmixer/run_config.hpp"

namespace fs = std::filesystem;
using namespace odmixer;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::string variants = "all";
    std::optional<double> noise_sigma;
    std::optional<double> mask_ratio;
    std::optional<std::string> grid;
    std::optional<std::string> pairs;
};

struct Context {
    RunConfig cfg;
    fs::path out;

    fs::path path(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : out / p; }

    std::ofstream open(const std::string& name) const
    {
        std::ofstream os(path(name));
        if (!os) throw DataError("cannot write " + path(name).string());
        return os;
    }
};

Context make_context(const Options& opt)
{
    Context ctx;
    if (!opt.config.empty()) apply_config(ctx.cfg, fs::path(opt.config));
    if (const char* env = std::getenv("ODMIXER_SEED")) set_config_key(ctx.cfg, "seed", env);
    if (opt.seed) ctx.cfg.train.seed = *opt.seed;
    if (opt.noise_sigma) ctx.cfg.noise_sigma = *opt.noise_sigma;
    if (opt.mask_ratio) ctx.cfg.mask_ratios = {*opt.mask_ratio};
    if (opt.grid) ctx.cfg.grid = *opt.grid;
    if (opt.pairs) ctx.cfg.pairs = *opt.pairs;
    ctx.cfg.finalize();
    ctx.out = opt.out;
    fs::create_directories(ctx.out);
    return ctx;
}

ODDataset load(const Context& ctx) { return load_dataset(ctx.path(ctx.cfg.dataset)); }

TrainResult load_trained(const Context& ctx, const ODDataset& ds)
{
    const auto path = ctx.path(ctx.cfg.checkpoint);
    if (!fs::exists(path)) throw DataError("no checkpoint at " + path.string() + "; run `odmixer train` first");
    return restore(load_checkpoint(path), ds, ctx.cfg.train);
}

void cmd_synth(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto records = generate_synthetic(desk_hz_spec(c.train.seed, c.schedule, c.demand_scale));
    write_transactions(records, ctx.path(c.transactions));
    std::cout << "wrote " << records.size() << " transactions to " << ctx.path(c.transactions).string() << '\n';
}

void cmd_ingest(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto result = build_dataset(read_transactions(ctx.path(c.transactions)), c.schedule);
    save_dataset(result.dataset, ctx.path(c.dataset));
    auto os = ctx.open("ingest_report.txt");
    result.report.write(os);
    result.report.write(std::cout);
}

void cmd_train(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto ds = load(ctx);
    auto cfg = c.train;
    cfg.verbose = true;
    auto ex = run_experiment(c.model, ds, cfg, c.ha_by_weekday);
    save_checkpoint(ex.trained.model, ctx.path(c.checkpoint));
    {
        auto os = ctx.open(c.history);
        write_history(ex.trained.history, os);
    }
    std::vector<NamedReport> rows{{c.variant, ex.model_test}, {"ha", ex.ha_test}};
    auto os = ctx.open("train_report.csv");
    write_reports(rows, os);
    write_reports(rows, std::cout);
}

void cmd_eval(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto ds = load(ctx);
    auto tr = load_trained(ctx, ds);
    auto test = test_samples(tr, ds, ds, c.train.require_week_history);
    HistoricalAverage ha(ds, tr.split.train_begin, tr.split.train_end, c.ha_by_weekday);
    std::vector<NamedReport> rows{{c.variant, evaluate_model(tr.model, test, tr.normalizer)},
                                  {"ha", evaluate_ha(ha, test)}};
    auto os = ctx.open("eval.csv");
    write_reports(rows, os);
    write_reports(rows, std::cout);
}

std::vector<std::string> variant_list(const std::string& text)
{
    std::vector<std::string> out;
    if (text == "all") {
        for (const auto& [name, _] : ablation_variants()) out.push_back(name);
        return out;
    }
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    if (out.empty()) throw ConfigError("--variants is empty");
    return out;
}

void cmd_ablate(const Context& ctx, const Options& opt)
{
    const auto& c = ctx.cfg;
    auto ds = load(ctx);
    auto rows = run_ablation(c.model, ds, c.train, variant_list(opt.variants));
    auto os = ctx.open("ablation.csv");
    write_reports(rows, os);
    write_reports(rows, std::cout);
}

void cmd_robust(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto ds = load(ctx);
    auto tr = load_trained(ctx, ds);
    auto rep = run_robustness(tr, ds, {c.noise_sigma}, c.mask_ratios, c.train.seed);
    auto os = ctx.open("robustness.csv");
    write_robustness(rep, os);
    write_robustness(rep, std::cout);
}

void cmd_perf(const Context& ctx)
{
    PerfOptions opt;
    opt.horizon = ctx.cfg.model.horizon;
    opt.batch = ctx.cfg.perf_batch;
    opt.seed = ctx.cfg.train.seed;
    auto points = perf_report(PerfGrid::parse(ctx.cfg.grid), opt);
    auto os = ctx.open("perf.csv");
    write_perf(points, opt, os);
    write_perf(points, opt, std::cout);
}

void cmd_export(const Context& ctx)
{
    const auto& c = ctx.cfg;
    auto ds = load(ctx);
    auto tr = load_trained(ctx, ds);
    auto test = test_samples(tr, ds, ds, c.train.require_week_history);
    auto rows = series_rows(test, predict_raw(tr.model, test, tr.normalizer), parse_pairs(c.pairs));
    auto os = ctx.open("series.csv");
    write_series(rows, os);
    std::cout << "wrote " << rows.size() << " rows to " << ctx.path("series.csv").string() << '\n';
}

int run(const std::function<void()>& body)
{
    try {
        body();
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ODMixer origin-destination forecasting: data, training and evaluation"};
    app.footer("\n" + describe_config() +
               "\nSeed precedence: --seed, then ODMIXER_SEED, then the config file.\n"
               "Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.");
    app.require_subcommand(1);
    Options opt;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--seed", opt.seed, "random seed");
        return sub;
    };
    auto* synth = common(app.add_subcommand("synth", "generate a synthetic transaction log"));
    auto* ingest = common(app.add_subcommand("ingest", "aggregate transactions into a dataset"));
    auto* train = common(app.add_subcommand("train", "train a model and save the checkpoint"));
    auto* eval = common(app.add_subcommand("eval", "evaluate a checkpoint and the HA baseline on the test days"));
    auto* ablate = common(app.add_subcommand("ablate", "train and evaluate model variants"));
    ablate->add_option("--variants", opt.variants, "all, or a comma list of variant names")->capture_default_str();
    auto* robust = common(app.add_subcommand("robust", "evaluate a checkpoint on noisy and masked inputs"));
    robust->add_option("--noise-sigma", opt.noise_sigma, "Gaussian noise sigma");
    robust->add_option("--mask-ratio", opt.mask_ratio, "single mask ratio (overrides mask_ratios)");
    auto* perf = common(app.add_subcommand("perf", "time forward and training steps over a grid"));
    perf->add_option("--grid", opt.grid, "grid such as n=16,32,64;L=5;d=16");
    auto* exp = common(app.add_subcommand("export-series", "write per-pair truth and prediction series"));
    exp->add_option("--pairs", opt.pairs, "pairs as i:j,i:j");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    const auto* sub = app.get_subcommands().front();
    return run([&] {
        const auto ctx = make_context(opt);
        if (sub == synth) cmd_synth(ctx);
        else if (sub == ingest) cmd_ingest(ctx);
        else if (sub == train) cmd_train(ctx);
        else if (sub == eval) cmd_eval(ctx);
        else if (sub == ablate) cmd_ablate(ctx, opt);
        else if (sub == robust) cmd_robust(ctx);
        else if (sub == perf) cmd_perf(ctx);
        else cmd_export(ctx);
    });
}
