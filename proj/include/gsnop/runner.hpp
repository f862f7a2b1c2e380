#pragma once

// Command implementations behind the CLI: data loading, training loop,
// evaluation, ablation / sparsity sweeps and the scaling benchmark. Every
// command writes its fully resolved config next to its outputs and is
// reproducible bit-for-bit from that file.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsnop/config.hpp"
#include "gsnop/ctdg.hpp"
#include "gsnop/model.hpp"

namespace gsnop {

struct DataBundle {
    CtdgStore full;
    Splits splits;
    double time_scale = 1.0;
};

inline DataBundle load_data(const RunConfig& cfg) {
    DataBundle d;
    if (cfg.data_source == "synthetic") {
        SyntheticSpec spec = cfg.synth;
        spec.seed = derive_seed(cfg.seed, 0xda7a);
        d.full = generate_synthetic(spec);
    } else if (cfg.data_source == "csv") {
        CsvSchema schema;
        schema.edge_dim = cfg.csv_edge_dim;
        d.full = ingest_csv(cfg.csv_path, schema, cfg.seed);
    } else {
        throw ConfigError("unknown data source '" + cfg.data_source + "'");
    }
    d.splits = chrono_split(d.full, cfg.split, cfg.seed);
    d.time_scale = d.splits.t_train_end > 0.0 ? d.splits.t_train_end : std::max(d.full.max_t(), 1.0);
    return d;
}

inline void init_model(GsnopModel& model, const RunConfig& cfg, const DataBundle& data) {
    model.init(cfg, data.full.node_count(), data.full.edge_dim(), data.time_scale);
}

/// Chronological fixed-size training windows (last partial window kept if it
/// is large enough to split).
inline std::vector<std::span<const TemporalEvent>> make_windows(
    const std::vector<TemporalEvent>& events, std::size_t window) {
    std::vector<std::span<const TemporalEvent>> out;
    for (std::size_t i = 0; i < events.size(); i += window) {
        std::size_t n = std::min(window, events.size() - i);
        if (n >= 2) out.push_back(std::span<const TemporalEvent>(events.data() + i, n));
    }
    if (out.empty()) throw DataError("training split too small for one window");
    return out;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
    nlohmann::json j;
    j["ap"] = r.ap;
    j["mrr"] = r.mrr;
    j["n_queries"] = r.n_queries;
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : r.time_group_loss) {
        if (b.has_value())
            buckets.push_back(*b);
        else
            buckets.push_back(nullptr);
    }
    j["time_group_loss"] = buckets;
    return j;
}

struct TrainResult {
    std::vector<double> losses;
    double best_valid_mrr = -1.0;
    std::string checkpoint_path;
};

/// Train on the chronological training split; writes config.resolved,
/// loss.csv and checkpoint.json into out_dir. Best checkpoint by validation
/// MRR (checked periodically) when a validation split exists.
inline TrainResult run_train(const RunConfig& cfg, GsnopModel* model_out = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    cfg.write_file(cfg.out_dir + "/config.resolved");

    DataBundle data = load_data(cfg);
    GsnopModel model;
    init_model(model, cfg, data);

    Adam optimizer(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, 5.0});
    auto windows = make_windows(data.splits.train.events(), cfg.train_window);

    std::ofstream loss_csv(cfg.out_dir + "/loss.csv");
    loss_csv << "step,loss,reconstruction,kl\n";

    // periodic validation on a capped subset, best-MRR checkpoint selection
    const std::size_t valid_cap = 100;
    std::size_t check_every = std::max<std::size_t>(1, cfg.train_steps / 5);
    std::vector<TemporalEvent> valid_events = data.splits.valid.events();
    if (valid_events.size() > valid_cap) valid_events.resize(valid_cap);

    TrainResult result;
    auto best_params = model.params().snapshot_values();
    auto last_good = model.params().snapshot_values();
    auto validate = [&]() {
        if (valid_events.empty()) return;
        GsnopModel::EvalOptions opt;
        opt.n_negatives = cfg.eval_negatives;
        opt.n_samples = cfg.eval_samples;
        opt.seed = derive_seed(cfg.seed, 0x7a11);
        MetricReport rep =
            model.evaluate(data.splits.all, data.splits.train.events(), valid_events, opt);
        if (rep.mrr > result.best_valid_mrr) {
            result.best_valid_mrr = rep.mrr;
            best_params = model.params().snapshot_values();
        }
    };

    for (std::size_t step = 0; step < cfg.train_steps; ++step) {
        auto window = windows[step % windows.size()];
        GsnopModel::ElboBreakdown bd;
        try {
            double loss = model.train_step(data.splits.train, window, optimizer,
                                           derive_seed(cfg.seed, 0x57e0 + step), &bd);
            result.losses.push_back(loss);
        } catch (const DomainError&) {
            // divergence: persist the last good parameters and abort
            model.params().restore_values(last_good);
            model.save_checkpoint(cfg.out_dir + "/checkpoint.json");
            throw;
        }
        last_good = model.params().snapshot_values();
        loss_csv << step << "," << format_double(bd.loss) << "," << format_double(bd.reconstruction)
                 << "," << format_double(bd.kl) << "\n";
        if ((step + 1) % check_every == 0) validate();
    }
    if (result.best_valid_mrr >= 0.0 && cfg.train_steps > 0)
        model.params().restore_values(best_params);

    result.checkpoint_path = cfg.out_dir + "/checkpoint.json";
    model.save_checkpoint(result.checkpoint_path);
    if (model_out) *model_out = std::move(model);
    return result;
}

/// Evaluate a checkpoint on the test split; writes metrics.json and appends
/// a row to results.csv. Context = train(+valid) events; history for
/// temporal neighbors = everything before each query time.
inline MetricReport run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                             GsnopModel* preloaded = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    cfg.write_file(cfg.out_dir + "/config.resolved");

    DataBundle data = load_data(cfg);
    GsnopModel local;
    GsnopModel* model = preloaded;
    if (!model) {
        init_model(local, cfg, data);
        local.load_checkpoint(checkpoint_path);
        model = &local;
    }

    std::vector<TemporalEvent> context = data.splits.train.events();
    context.insert(context.end(), data.splits.valid.events().begin(),
                   data.splits.valid.events().end());

    GsnopModel::EvalOptions opt;
    opt.n_negatives = cfg.eval_negatives;
    opt.n_samples = cfg.eval_samples;
    opt.seed = derive_seed(cfg.seed, 0xe0a1);
    MetricReport report = model->evaluate(data.splits.all, context, data.splits.test.events(), opt);

    std::ofstream mj(cfg.out_dir + "/metrics.json");
    mj << report_to_json(report).dump(2) << "\n";

    bool fresh = !fs::exists(cfg.out_dir + "/results.csv");
    std::ofstream rc(cfg.out_dir + "/results.csv", std::ios::app);
    if (fresh) rc << "variant,seed,split,sample_ratio,ap,mrr\n";
    rc << cfg.variant << "," << cfg.seed << "," << "test" << ","
       << format_double(cfg.split.sample_ratio) << "," << format_double(report.ap) << ","
       << format_double(report.mrr) << "\n";
    return report;
}

struct SweepRow {
    std::string variant;
    std::uint64_t seed;
    double sample_ratio;
    MetricReport report;
};

/// Train + eval each variant under identical data and seed; one row per
/// variant, written to results.csv in out_dir.
inline std::vector<SweepRow> run_ablate(const RunConfig& base,
                                        const std::vector<std::string>& variants,
                                        const std::vector<std::uint64_t>& seeds) {
    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);
    base.write_file(base.out_dir + "/config.resolved");
    std::ofstream rc(base.out_dir + "/results.csv");
    rc << "variant,seed,split,sample_ratio,ap,mrr\n";
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : seeds) {
        for (const auto& v : variants) {
            RunConfig cfg = base;
            cfg.variant = v;
            cfg.seed = seed;
            cfg.out_dir = base.out_dir + "/" + v + "_s" + std::to_string(seed);
            GsnopModel model;
            run_train(cfg, &model);
            MetricReport rep = run_eval(cfg, cfg.out_dir + "/checkpoint.json", &model);
            rc << v << "," << seed << "," << "test" << ","
               << format_double(cfg.split.sample_ratio) << "," << format_double(rep.ap) << ","
               << format_double(rep.mrr) << "\n";
            rows.push_back(SweepRow{v, seed, cfg.split.sample_ratio, rep});
        }
    }
    return rows;
}

/// One train+eval cycle per training sample ratio (masking applied to the
/// training split only).
inline std::vector<SweepRow> run_sparsity(const RunConfig& base, const std::vector<double>& ratios,
                                          const std::vector<std::uint64_t>& seeds) {
    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);
    base.write_file(base.out_dir + "/config.resolved");
    std::ofstream rc(base.out_dir + "/results.csv");
    rc << "variant,seed,split,sample_ratio,ap,mrr\n";
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : seeds) {
        for (double ratio : ratios) {
            if (ratio <= 0.0 || ratio > 1.0) throw ConfigError("sample ratio must be in (0, 1]");
            RunConfig cfg = base;
            cfg.split.sample_ratio = ratio;
            cfg.seed = seed;
            cfg.out_dir = base.out_dir + "/r" + format_double(ratio) + "_s" + std::to_string(seed);
            GsnopModel model;
            run_train(cfg, &model);
            MetricReport rep = run_eval(cfg, cfg.out_dir + "/checkpoint.json", &model);
            rc << cfg.variant << "," << seed << "," << "test" << ","
               << format_double(ratio) << "," << format_double(rep.ap) << ","
               << format_double(rep.mrr) << "\n";
            rows.push_back(SweepRow{cfg.variant, seed, ratio, rep});
        }
    }
    return rows;
}

struct BenchResult {
    std::vector<std::size_t> sizes;  // n + m per run
    VecD seconds;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Wall-clock of one full forward pass (context encoding + target scoring)
/// against n+m, with a least-squares linear fit.
inline BenchResult run_bench(const RunConfig& base, const std::vector<std::size_t>& event_counts) {
    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);
    base.write_file(base.out_dir + "/config.resolved");
    BenchResult res;
    for (std::size_t n_events : event_counts) {
        RunConfig cfg = base;
        cfg.data_source = "synthetic";
        cfg.synth.events = std::max<std::size_t>(n_events, 4);
        DataBundle data = load_data(cfg);
        GsnopModel model;
        init_model(model, cfg, data);

        std::vector<TemporalEvent> context = data.splits.train.events();
        context.insert(context.end(), data.splits.valid.events().begin(),
                       data.splits.valid.events().end());
        std::vector<TemporalEvent> targets = data.splits.test.events();

        auto t0 = std::chrono::steady_clock::now();
        auto ctx = model.build_context_state(data.splits.all, context);
        double acc = 0.0;
        for (std::size_t i = 0; i < targets.size(); ++i)
            acc += model.predict(data.splits.all, targets[i], ctx, 1, derive_seed(cfg.seed, i));
        auto t1 = std::chrono::steady_clock::now();
        (void)acc;
        res.sizes.push_back(context.size() + targets.size());
        res.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    // least squares y = a x + b
    double n = static_cast<double>(res.sizes.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < res.sizes.size(); ++i) {
        double x = static_cast<double>(res.sizes[i]), y = res.seconds[i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double denom = n * sxx - sx * sx;
    res.slope = (n * sxy - sx * sy) / denom;
    res.intercept = (sy - res.slope * sx) / n;
    double ss_res = 0, ss_tot = 0, ybar = sy / n;
    for (std::size_t i = 0; i < res.sizes.size(); ++i) {
        double y = res.seconds[i];
        double yhat = res.slope * static_cast<double>(res.sizes[i]) + res.intercept;
        ss_res += (y - yhat) * (y - yhat);
        ss_tot += (y - ybar) * (y - ybar);
    }
    res.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;

    std::ofstream out(base.out_dir + "/bench.csv");
    out << "n_plus_m,seconds\n";
    for (std::size_t i = 0; i < res.sizes.size(); ++i)
        out << res.sizes[i] << "," << format_double(res.seconds[i]) << "\n";
    std::ofstream fit(base.out_dir + "/bench_fit.json");
    nlohmann::json j{{"slope", res.slope}, {"intercept", res.intercept}, {"r_squared", res.r_squared}};
    fit << j.dump(2) << "\n";
    return res;
}

}  // namespace gsnop
