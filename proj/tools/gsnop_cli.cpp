// Command-line driver: train / eval / ablate / sparsity / bench.
//
// Every command resolves its configuration (file, then flag overrides),
// writes it to <out>/config.resolved, and is bit-reproducible from that file.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsnop/runner.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides
    std::string out_dir;
    long long seed = -1;
};

gsnop::RunConfig resolve(const CommonOpts& o) {
    gsnop::RunConfig cfg;
    if (!o.config_path.empty()) cfg = gsnop::RunConfig::parse_file(o.config_path);
    for (const auto& kv : o.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw gsnop::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "key = value config file");
    cmd->add_option("--set", o.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--out", o.out_dir, "output directory");
}

std::vector<std::uint64_t> parse_seeds(const std::string& s, std::uint64_t fallback) {
    if (s.empty()) return {fallback};
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Link prediction on continuous-time dynamic graphs"};
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, ablate_o, sparsity_o, bench_o;
    std::string eval_checkpoint;
    std::string ablate_variants = "gsnop,snp,np,cnp";
    std::string ablate_seeds, sparsity_seeds;
    std::string sparsity_ratios = "1.0,0.5,0.1";
    std::string bench_sizes = "250,500,1000,2000,4000";

    CLI::App* ctrain = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(ctrain, train_o);

    CLI::App* ceval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ceval, eval_o);
    ceval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();

    CLI::App* cablate = app.add_subcommand("ablate", "train + eval every model variant");
    add_common(cablate, ablate_o);
    cablate->add_option("--variants", ablate_variants, "comma-separated variant list");
    cablate->add_option("--seeds", ablate_seeds, "comma-separated seed list");

    CLI::App* csparsity = app.add_subcommand("sparsity", "sweep the training sample ratio");
    add_common(csparsity, sparsity_o);
    csparsity->add_option("--ratios", sparsity_ratios, "comma-separated sample ratios");
    csparsity->add_option("--seeds", sparsity_seeds, "comma-separated seed list");

    CLI::App* cbench = app.add_subcommand("bench", "forward-pass wall time vs event count");
    add_common(cbench, bench_o);
    cbench->add_option("--sizes", bench_sizes, "comma-separated event counts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (ctrain->parsed()) {
            gsnop::TrainResult r = gsnop::run_train(resolve(train_o));
            std::cout << "checkpoint: " << r.checkpoint_path << "\n";
            if (!r.losses.empty())
                std::cout << "final_loss: " << gsnop::format_double(r.losses.back()) << "\n";
            if (r.best_valid_mrr >= 0.0)
                std::cout << "best_valid_mrr: " << gsnop::format_double(r.best_valid_mrr) << "\n";
        } else if (ceval->parsed()) {
            gsnop::MetricReport rep = gsnop::run_eval(resolve(eval_o), eval_checkpoint);
            std::cout << "ap: " << gsnop::format_double(rep.ap) << "\n"
                      << "mrr: " << gsnop::format_double(rep.mrr) << "\n"
                      << "n_queries: " << rep.n_queries << "\n";
        } else if (cablate->parsed()) {
            gsnop::RunConfig cfg = resolve(ablate_o);
            std::vector<std::string> variants;
            std::stringstream ss(ablate_variants);
            std::string v;
            while (std::getline(ss, v, ',')) variants.push_back(v);
            auto rows = gsnop::run_ablate(cfg, variants, parse_seeds(ablate_seeds, cfg.seed));
            for (const auto& r : rows)
                std::cout << r.variant << " seed=" << r.seed
                          << " ap=" << gsnop::format_double(r.report.ap)
                          << " mrr=" << gsnop::format_double(r.report.mrr) << "\n";
        } else if (csparsity->parsed()) {
            gsnop::RunConfig cfg = resolve(sparsity_o);
            std::vector<double> ratios;
            std::stringstream ss(sparsity_ratios);
            std::string r;
            while (std::getline(ss, r, ',')) ratios.push_back(std::stod(r));
            auto rows = gsnop::run_sparsity(cfg, ratios, parse_seeds(sparsity_seeds, cfg.seed));
            for (const auto& row : rows)
                std::cout << row.variant << " ratio=" << gsnop::format_double(row.sample_ratio)
                          << " seed=" << row.seed << " ap=" << gsnop::format_double(row.report.ap)
                          << " mrr=" << gsnop::format_double(row.report.mrr) << "\n";
        } else if (cbench->parsed()) {
            gsnop::RunConfig cfg = resolve(bench_o);
            std::vector<std::size_t> sizes;
            std::stringstream ss(bench_sizes);
            std::string s;
            while (std::getline(ss, s, ',')) sizes.push_back(std::stoull(s));
            gsnop::BenchResult b = gsnop::run_bench(cfg, sizes);
            for (std::size_t i = 0; i < b.sizes.size(); ++i)
                std::cout << b.sizes[i] << "," << gsnop::format_double(b.seconds[i]) << "\n";
            std::cout << "slope: " << gsnop::format_double(b.slope) << "\n"
                      << "r_squared: " << gsnop::format_double(b.r_squared) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
