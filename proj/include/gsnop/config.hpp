#pragma once

// Flat key-value run configuration: parsing, validation and byte-stable
// serialization (the resolved config written next to every command's
// outputs).

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsnop/common.hpp"
#include "gsnop/ctdg.hpp"
#include "gsnop/decoder_loss.hpp"
#include "gsnop/odeint.hpp"

namespace gsnop {

inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

struct RunConfig {
    // data
    std::string data_source = "synthetic";  // synthetic | csv
    std::string csv_path;
    std::size_t csv_edge_dim = 0;
    SyntheticSpec synth;

    // split
    SplitSpec split{0.3, 0.2, 0.5, 1.0};

    // model
    std::string variant = "gsnop";
    std::size_t latent_dim = 256;
    std::size_t node_dim = 100;
    std::size_t layers = 2;
    std::size_t k_neighbors = 10;
    double dropout = 0.1;
    std::string solver_method = "dopri5";  // euler | rk4 | dopri5
    double solver_rtol = 1e-5;
    double solver_atol = 1e-7;
    double solver_initial_step = 0.05;
    std::size_t solver_max_steps = 100000;
    std::string ode_grad = "auto";  // auto | steps | adjoint

    // objective
    std::size_t mc_samples = 10;
    double kl_weight = 1.0;

    // training
    std::size_t train_steps = 200;
    std::size_t train_window = 200;
    std::size_t train_negatives = 1;
    double learning_rate = 1e-5;

    // evaluation
    std::size_t eval_negatives = 50;
    std::size_t eval_samples = 10;

    std::uint64_t seed = 0;
    std::string out_dir = "out";

    OdeMethod solver_method_enum() const {
        if (solver_method == "euler") return OdeMethod::Euler;
        if (solver_method == "rk4") return OdeMethod::RK4;
        if (solver_method == "dopri5") return OdeMethod::Dopri5;
        throw ConfigError("unknown solver method '" + solver_method + "'");
    }

    SolverConfig solver() const {
        SolverConfig s;
        s.method = solver_method_enum();
        s.rtol = solver_rtol;
        s.atol = solver_atol;
        s.initial_step = solver_initial_step;
        s.max_steps = solver_max_steps;
        s.validate();
        return s;
    }

    static std::string serialize_spikes(const std::vector<SpikeWindow>& spikes) {
        std::string out;
        for (const auto& s : spikes) {
            if (!out.empty()) out += ";";
            out += format_double(s.t_start) + ":" + format_double(s.t_end) + ":" +
                   format_double(s.rate);
        }
        return out;
    }

    static std::vector<SpikeWindow> parse_spikes(const std::string& s) {
        std::vector<SpikeWindow> out;
        if (s.empty()) return out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ';')) {
            SpikeWindow w;
            if (std::sscanf(item.c_str(), "%lf:%lf:%lf", &w.t_start, &w.t_end, &w.rate) != 3)
                throw ConfigError("malformed spike window '" + item + "'");
            out.push_back(w);
        }
        return out;
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        m["data.source"] = data_source;
        m["data.csv_path"] = csv_path;
        m["data.csv_edge_dim"] = std::to_string(csv_edge_dim);
        m["synth.nodes"] = std::to_string(synth.nodes);
        m["synth.events"] = std::to_string(synth.events);
        m["synth.communities"] = std::to_string(synth.communities);
        m["synth.base_rate"] = format_double(synth.base_rate);
        m["synth.spikes"] = serialize_spikes(synth.spikes);
        m["synth.p_intra"] = format_double(synth.p_intra);
        m["synth.p_triadic"] = format_double(synth.p_triadic);
        m["synth.recent_window"] = std::to_string(synth.recent_window);
        m["synth.drift_period"] = format_double(synth.drift_period);
        m["split.train"] = format_double(split.train_ratio);
        m["split.valid"] = format_double(split.valid_ratio);
        m["split.test"] = format_double(split.test_ratio);
        m["split.sample_ratio"] = format_double(split.sample_ratio);
        m["model.variant"] = variant;
        m["model.latent_dim"] = std::to_string(latent_dim);
        m["model.node_dim"] = std::to_string(node_dim);
        m["model.layers"] = std::to_string(layers);
        m["model.k_neighbors"] = std::to_string(k_neighbors);
        m["model.dropout"] = format_double(dropout);
        m["solver.method"] = solver_method;
        m["solver.rtol"] = format_double(solver_rtol);
        m["solver.atol"] = format_double(solver_atol);
        m["solver.initial_step"] = format_double(solver_initial_step);
        m["solver.max_steps"] = std::to_string(solver_max_steps);
        m["solver.ode_grad"] = ode_grad;
        m["elbo.mc_samples"] = std::to_string(mc_samples);
        m["elbo.kl_weight"] = format_double(kl_weight);
        m["train.steps"] = std::to_string(train_steps);
        m["train.window"] = std::to_string(train_window);
        m["train.negatives"] = std::to_string(train_negatives);
        m["train.learning_rate"] = format_double(learning_rate);
        m["eval.negatives"] = std::to_string(eval_negatives);
        m["eval.samples"] = std::to_string(eval_samples);
        m["seed"] = std::to_string(seed);
        m["out_dir"] = out_dir;
        return m;
    }

    void apply(const std::string& key, const std::string& value) {
        auto to_size = [&](const std::string& v) -> std::size_t {
            return static_cast<std::size_t>(std::stoull(v));
        };
        if (key == "data.source") data_source = value;
        else if (key == "data.csv_path") csv_path = value;
        else if (key == "data.csv_edge_dim") csv_edge_dim = to_size(value);
        else if (key == "synth.nodes") synth.nodes = to_size(value);
        else if (key == "synth.events") synth.events = to_size(value);
        else if (key == "synth.communities") synth.communities = to_size(value);
        else if (key == "synth.base_rate") synth.base_rate = std::stod(value);
        else if (key == "synth.spikes") synth.spikes = parse_spikes(value);
        else if (key == "synth.p_intra") synth.p_intra = std::stod(value);
        else if (key == "synth.p_triadic") synth.p_triadic = std::stod(value);
        else if (key == "synth.recent_window") synth.recent_window = to_size(value);
        else if (key == "synth.drift_period") synth.drift_period = std::stod(value);
        else if (key == "split.train") split.train_ratio = std::stod(value);
        else if (key == "split.valid") split.valid_ratio = std::stod(value);
        else if (key == "split.test") split.test_ratio = std::stod(value);
        else if (key == "split.sample_ratio") split.sample_ratio = std::stod(value);
        else if (key == "model.variant") variant = value;
        else if (key == "model.latent_dim") latent_dim = to_size(value);
        else if (key == "model.node_dim") node_dim = to_size(value);
        else if (key == "model.layers") layers = to_size(value);
        else if (key == "model.k_neighbors") k_neighbors = to_size(value);
        else if (key == "model.dropout") dropout = std::stod(value);
        else if (key == "solver.method") solver_method = value;
        else if (key == "solver.rtol") solver_rtol = std::stod(value);
        else if (key == "solver.atol") solver_atol = std::stod(value);
        else if (key == "solver.initial_step") solver_initial_step = std::stod(value);
        else if (key == "solver.max_steps") solver_max_steps = to_size(value);
        else if (key == "solver.ode_grad") ode_grad = value;
        else if (key == "elbo.mc_samples") mc_samples = to_size(value);
        else if (key == "elbo.kl_weight") kl_weight = std::stod(value);
        else if (key == "train.steps") train_steps = to_size(value);
        else if (key == "train.window") train_window = to_size(value);
        else if (key == "train.negatives") train_negatives = to_size(value);
        else if (key == "train.learning_rate") learning_rate = std::stod(value);
        else if (key == "eval.negatives") eval_negatives = to_size(value);
        else if (key == "eval.samples") eval_samples = to_size(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "out_dir") out_dir = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        RunConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto strip = [](std::string s) {
                auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = strip(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key = value at line " + std::to_string(lineno));
            cfg.apply(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
        }
        return cfg;
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write " + path);
        for (const auto& [k, v] : to_map()) out << k << " = " << v << "\n";
    }
};

}  // namespace gsnop
