#pragma once

// Ranking metrics over one positive and n sampled negatives per query, plus
// time-bucketed loss aggregation.

#include <algorithm>
#include <optional>
#include <vector>

#include "gsnop/common.hpp"

namespace gsnop {

struct RankedQuery {
    double positive_score = 0.0;
    VecD negative_scores;
};

/// Mean of 1/rank with pessimistic ties: rank = 1 + #(negatives >= positive).
inline double mrr(const std::vector<RankedQuery>& queries) {
    if (queries.empty()) throw UsageError("mrr: empty query list");
    double total = 0.0;
    for (const auto& q : queries) {
        std::size_t rank = 1;
        for (double s : q.negative_scores)
            if (s >= q.positive_score) ++rank;
        total += 1.0 / static_cast<double>(rank);
    }
    return total / static_cast<double>(queries.size());
}

/// Average precision over the pooled scored set (all candidates from all
/// queries together). Ties are pessimistic: negatives order before positives
/// at equal score.
inline double average_precision(const std::vector<RankedQuery>& queries) {
    std::vector<std::pair<double, int>> pool;  // (score, label)
    std::size_t positives = 0;
    for (const auto& q : queries) {
        pool.emplace_back(q.positive_score, 1);
        ++positives;
        for (double s : q.negative_scores) pool.emplace_back(s, 0);
    }
    if (positives == 0) throw UsageError("average_precision: no positives");
    std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // negatives first on ties
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].second == 1) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return ap / static_cast<double>(positives);
}

struct MetricReport {
    double ap = 0.0;
    double mrr = 0.0;
    std::size_t n_queries = 0;
    // per-bucket mean loss; empty buckets are absent (nullopt)
    std::vector<std::optional<double>> time_group_loss;
};

/// Mean of per-event losses grouped by fractional position of the event time
/// within [t_lo, t_hi]; edges are fractions covering [0, 1].
inline std::vector<std::optional<double>> time_group_mean(const VecD& event_times,
                                                          const VecD& event_losses, double t_lo,
                                                          double t_hi, const VecD& bucket_edges) {
    if (bucket_edges.size() < 2 || bucket_edges.front() != 0.0 || bucket_edges.back() != 1.0)
        throw ConfigError("bucket edges must span [0, 1]");
    std::size_t nb = bucket_edges.size() - 1;
    std::vector<double> sums(nb, 0.0);
    std::vector<std::size_t> counts(nb, 0);
    double span = std::max(t_hi - t_lo, 1e-300);
    for (std::size_t i = 0; i < event_times.size(); ++i) {
        double frac = (event_times[i] - t_lo) / span;
        frac = std::clamp(frac, 0.0, 1.0);
        std::size_t b = nb - 1;
        for (std::size_t j = 0; j < nb; ++j) {
            if (frac < bucket_edges[j + 1] || j == nb - 1) {
                b = j;
                break;
            }
        }
        sums[b] += event_losses[i];
        counts[b] += 1;
    }
    std::vector<std::optional<double>> out(nb);
    for (std::size_t b = 0; b < nb; ++b)
        if (counts[b] > 0) out[b] = sums[b] / static_cast<double>(counts[b]);
    return out;
}

}  // namespace gsnop
