#pragma once

// Continuous-time dynamic graph storage: chronological event log with
// per-node time-indexed adjacency, CSV ingestion, chronological splits,
// negative sampling and a seeded synthetic generator.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gsnop/common.hpp"

namespace gsnop {

struct TemporalEvent {
    int src = 0;
    int dst = 0;
    double t = 0.0;
    VecD edge_feat;  // may be empty
    int label = 1;   // 0 only for sampled negatives
};

struct NeighborHit {
    int neighbor;
    double t;                 // interaction time, strictly before the query time
    const VecD* edge_feat;    // owned by the store
};

class CtdgStore {
   public:
    CtdgStore() = default;

    /// Build a store from events (sorted stably by timestamp). node_count 0
    /// means "derive from the max node id seen".
    static CtdgStore from_events(std::vector<TemporalEvent> events, std::size_t node_count = 0) {
        CtdgStore s;
        std::stable_sort(events.begin(), events.end(),
                         [](const TemporalEvent& a, const TemporalEvent& b) { return a.t < b.t; });
        int max_node = -1;
        for (const auto& e : events) {
            if (e.src == e.dst) throw DataError("self-loop event rejected");
            if (e.t < 0.0) throw DataError("negative timestamp");
            max_node = std::max(max_node, std::max(e.src, e.dst));
        }
        s.events_ = std::move(events);
        s.node_count_ = node_count > 0 ? node_count : static_cast<std::size_t>(max_node + 1);
        s.max_t_ = s.events_.empty() ? 0.0 : s.events_.back().t;
        s.adj_.assign(s.node_count_, {});
        for (std::size_t i = 0; i < s.events_.size(); ++i) {
            const auto& e = s.events_[i];
            s.adj_[e.src].push_back(i);
            s.adj_[e.dst].push_back(i);
        }
        return s;
    }

    const std::vector<TemporalEvent>& events() const { return events_; }
    std::size_t node_count() const { return node_count_; }
    double max_t() const { return max_t_; }
    std::size_t edge_dim() const { return events_.empty() ? 0 : events_.front().edge_feat.size(); }

    /// The k most recent interactions of v strictly before t, most recent
    /// first.
    std::vector<NeighborHit> neighbors_before(int v, double t, std::size_t k) const {
        std::vector<NeighborHit> out;
        if (v < 0 || static_cast<std::size_t>(v) >= node_count_) return out;
        const auto& idx = adj_[v];
        // adjacency indices are in chronological order; binary search the
        // first event with time >= t, then walk backward.
        auto it = std::lower_bound(idx.begin(), idx.end(), t, [this](std::size_t i, double tt) {
            return events_[i].t < tt;
        });
        while (it != idx.begin() && out.size() < k) {
            --it;
            const TemporalEvent& e = events_[*it];
            int nb = e.src == v ? e.dst : e.src;
            out.push_back(NeighborHit{nb, e.t, &e.edge_feat});
        }
        return out;
    }

   private:
    std::vector<TemporalEvent> events_;
    std::vector<std::vector<std::size_t>> adj_;  // event indices per node, chronological
    std::size_t node_count_ = 0;
    double max_t_ = 0.0;
};

/// Graph density 2|E| / (|V| (|V|-1)) over the store's events, counting only
/// nodes that appear in them.
inline double density_score(const CtdgStore& store) {
    std::set<int> nodes;
    for (const auto& e : store.events()) {
        nodes.insert(e.src);
        nodes.insert(e.dst);
    }
    double v = static_cast<double>(nodes.size());
    if (v < 2.0) throw DomainError("density undefined for fewer than 2 nodes");
    return 2.0 * static_cast<double>(store.events().size()) / (v * (v - 1.0));
}

struct CsvSchema {
    bool has_header = true;
    std::size_t edge_dim = 0;  // pad with seeded random features when columns are missing
};

struct IngestReport {
    std::size_t rows = 0;
    std::size_t rejected_self_loops = 0;
};

/// CSV format: src,dst,t[,f1..fd]. Node ids densified to [0, |V|).
inline CtdgStore ingest_csv(const std::string& path, const CsvSchema& schema, std::uint64_t seed,
                            IngestReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    std::unordered_map<std::string, int> ids;
    auto densify = [&ids](const std::string& raw) {
        auto [it, inserted] = ids.try_emplace(raw, static_cast<int>(ids.size()));
        return it->second;
    };
    Rng rng(derive_seed(seed, 0x5eed));
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::vector<TemporalEvent> events;
    IngestReport rep;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (first && schema.has_header) {
            first = false;
            continue;
        }
        first = false;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 3)
            throw DataError("malformed row at line " + std::to_string(lineno));
        TemporalEvent e;
        try {
            e.src = densify(cells[0]);
            e.dst = densify(cells[1]);
            e.t = std::stod(cells[2]);
        } catch (const std::exception&) {
            throw DataError("malformed row at line " + std::to_string(lineno));
        }
        ++rep.rows;
        if (e.src == e.dst) {
            ++rep.rejected_self_loops;
            continue;
        }
        if (cells.size() >= 3 + schema.edge_dim && schema.edge_dim > 0) {
            for (std::size_t j = 0; j < schema.edge_dim; ++j) {
                try {
                    e.edge_feat.push_back(std::stod(cells[3 + j]));
                } catch (const std::exception&) {
                    throw DataError("malformed feature at line " + std::to_string(lineno));
                }
            }
        } else if (schema.edge_dim > 0) {
            // missing link features: seeded random vector
            e.edge_feat.resize(schema.edge_dim);
            for (double& x : e.edge_feat) x = unif(rng);
        }
        events.push_back(std::move(e));
    }
    if (report) *report = rep;
    return CtdgStore::from_events(std::move(events), ids.size());
}

struct SplitSpec {
    double train_ratio = 0.3;
    double valid_ratio = 0.2;
    double test_ratio = 0.5;
    double sample_ratio = 1.0;  // training-set masking

    void validate() const {
        double s = train_ratio + valid_ratio + test_ratio;
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
        if (train_ratio <= 0.0 || test_ratio <= 0.0) throw ConfigError("train/test ratios must be > 0");
        if (sample_ratio <= 0.0 || sample_ratio > 1.0) throw ConfigError("sample_ratio must be in (0, 1]");
    }
};

struct Splits {
    CtdgStore train;  // masked by sample_ratio
    CtdgStore valid;
    CtdgStore test;
    CtdgStore all;  // masked train + valid + test, for evaluation-time history
    double t_train_end = 0.0;
    double t_valid_end = 0.0;
};

/// Split by timestamp fraction of the total duration; sample_ratio masks
/// training events uniformly at random (exact floor count).
inline Splits chrono_split(const CtdgStore& store, const SplitSpec& spec, std::uint64_t seed) {
    spec.validate();
    double tmax = store.max_t();
    Splits out;
    out.t_train_end = spec.train_ratio * tmax;
    out.t_valid_end = (spec.train_ratio + spec.valid_ratio) * tmax;
    std::vector<TemporalEvent> train, valid, test;
    for (const auto& e : store.events()) {
        if (e.t <= out.t_train_end)
            train.push_back(e);
        else if (e.t <= out.t_valid_end)
            valid.push_back(e);
        else
            test.push_back(e);
    }
    if (spec.sample_ratio < 1.0) {
        std::size_t keep = static_cast<std::size_t>(
            std::floor(spec.sample_ratio * static_cast<double>(train.size())));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(seed, 0x3a5c));
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(keep);
        std::sort(order.begin(), order.end());
        std::vector<TemporalEvent> masked;
        masked.reserve(keep);
        for (std::size_t i : order) masked.push_back(train[i]);
        train = std::move(masked);
    }
    std::vector<TemporalEvent> all = train;
    all.insert(all.end(), valid.begin(), valid.end());
    all.insert(all.end(), test.begin(), test.end());
    std::size_t n = store.node_count();
    out.train = CtdgStore::from_events(std::move(train), n);
    out.valid = CtdgStore::from_events(std::move(valid), n);
    out.test = CtdgStore::from_events(std::move(test), n);
    out.all = CtdgStore::from_events(std::move(all), n);
    return out;
}

/// n corrupted copies of the positive (same src and t, distinct sampled dst
/// not equal to src or the true dst), label 0.
inline std::vector<TemporalEvent> sample_negatives(const CtdgStore& store,
                                                   const TemporalEvent& positive, std::size_t n,
                                                   Rng& rng) {
    std::size_t universe = store.node_count();
    if (universe < n + 2) throw DataError("node universe too small for negative sampling");
    std::uniform_int_distribution<int> pick(0, static_cast<int>(universe) - 1);
    std::set<int> used;
    std::vector<TemporalEvent> out;
    out.reserve(n);
    while (out.size() < n) {
        int cand = pick(rng);
        if (cand == positive.src || cand == positive.dst || used.count(cand)) continue;
        used.insert(cand);
        TemporalEvent e = positive;
        e.dst = cand;
        e.label = 0;
        out.push_back(std::move(e));
    }
    return out;
}

struct SpikeWindow {
    double t_start = 0.0;
    double t_end = 0.0;
    double rate = 0.0;  // events per unit time inside the window
};

struct SyntheticSpec {
    std::size_t nodes = 40;
    std::size_t events = 2000;
    std::size_t communities = 2;
    double base_rate = 1.0;          // homogeneous Poisson intensity
    std::vector<SpikeWindow> spikes;  // empty = homogeneous profile
    double p_intra = 0.85;   // probability an interaction stays inside a community
    double p_triadic = 0.3;  // probability of closing over a recent co-neighbor
    std::size_t recent_window = 50;  // events considered "recent" for triadic closure
    double drift_period = 0.0;  // > 0: community affinity flips with this period
    std::uint64_t seed = 0;

    void validate() const {
        if (nodes < 4) throw ConfigError("synthetic: need at least 4 nodes");
        if (communities < 1 || communities > nodes) throw ConfigError("synthetic: bad community count");
        if (events == 0) throw ConfigError("synthetic: need at least 1 event");
        if (base_rate <= 0.0 && spikes.empty()) throw ConfigError("synthetic: nonpositive intensity");
    }
};

/// Expected fraction of events inside [t0, t1) under the spec's intensity
/// profile over a total horizon; used by tests as the generator's own oracle.
inline double synthetic_intensity_fraction(const SyntheticSpec& spec, double horizon, double t0,
                                           double t1) {
    auto mass = [&](double a, double b) {
        double m = spec.base_rate * std::max(0.0, b - a);
        for (const auto& s : spec.spikes) {
            double lo = std::max(a, s.t_start), hi = std::min(b, s.t_end);
            if (hi > lo) m += s.rate * (hi - lo);
        }
        return m;
    };
    double total = mass(0.0, horizon);
    if (total <= 0.0) return 0.0;
    return mass(t0, t1) / total;
}

/// Deterministic-under-seed community event stream. Event times follow an
/// inhomogeneous Poisson profile (base rate plus spike windows, sampled by
/// thinning); pairs prefer intra-community partners and recent co-neighbors.
inline CtdgStore generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0xc7d6));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    auto community = [&spec](int v) { return static_cast<std::size_t>(v) % spec.communities; };
    auto intensity = [&spec](double t) {
        double lam = spec.base_rate;
        for (const auto& s : spec.spikes)
            if (t >= s.t_start && t < s.t_end) lam += s.rate;
        return lam;
    };
    double lam_max = spec.base_rate;
    for (const auto& s : spec.spikes) lam_max += s.rate;

    // Whether intra-community interaction is currently preferred; drift flips
    // the preference periodically so the link-formation function itself moves
    // over time.
    auto intra_preferred = [&spec](double t) {
        if (spec.drift_period <= 0.0) return true;
        return static_cast<long long>(std::floor(t / spec.drift_period)) % 2 == 0;
    };

    std::vector<TemporalEvent> events;
    events.reserve(spec.events);
    double t = 0.0;
    std::exponential_distribution<double> exp_dist(lam_max);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.nodes) - 1);
    while (events.size() < spec.events) {
        t += exp_dist(rng);
        if (unif(rng) * lam_max > intensity(t)) continue;  // thinning rejection
        int src = pick(rng);
        int dst = -1;
        // triadic closure over a recent co-neighbor of src
        if (unif(rng) < spec.p_triadic && !events.empty()) {
            std::size_t lo = events.size() > spec.recent_window ? events.size() - spec.recent_window : 0;
            std::vector<int> partners, second_hop;
            for (std::size_t i = lo; i < events.size(); ++i) {
                const auto& e = events[i];
                if (e.src == src) partners.push_back(e.dst);
                if (e.dst == src) partners.push_back(e.src);
            }
            for (std::size_t i = lo; i < events.size(); ++i) {
                const auto& e = events[i];
                for (int p : partners) {
                    if (e.src == p && e.dst != src) second_hop.push_back(e.dst);
                    if (e.dst == p && e.src != src) second_hop.push_back(e.src);
                }
            }
            if (!second_hop.empty()) {
                std::uniform_int_distribution<std::size_t> pick2(0, second_hop.size() - 1);
                dst = second_hop[pick2(rng)];
            }
        }
        if (dst < 0) {
            bool want_intra = (unif(rng) < spec.p_intra) == intra_preferred(t);
            for (int attempt = 0; attempt < 64 && dst < 0; ++attempt) {
                int cand = pick(rng);
                if (cand == src) continue;
                if ((community(cand) == community(src)) == want_intra) dst = cand;
            }
            if (dst < 0) {
                do {
                    dst = pick(rng);
                } while (dst == src);
            }
        }
        if (dst == src) continue;
        TemporalEvent e;
        e.src = src;
        e.dst = dst;
        e.t = t;
        events.push_back(std::move(e));
    }
    return CtdgStore::from_events(std::move(events), spec.nodes);
}

}  // namespace gsnop
