#pragma once

// Full model wiring: encoder -> aggregator -> (ODE) -> head -> decoder, the
// ELBO training step, variant-aware prediction and JSON checkpointing.

#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gsnop/adam.hpp"
#include "gsnop/autodiff.hpp"
#include "gsnop/config.hpp"
#include "gsnop/ctdg.hpp"
#include "gsnop/decoder_loss.hpp"
#include "gsnop/encoder.hpp"
#include "gsnop/latent.hpp"
#include "gsnop/metrics.hpp"
#include "gsnop/odeint.hpp"

namespace gsnop {

constexpr int kCheckpointVersion = 1;

class GsnopModel {
   public:
    GsnopModel() = default;
    // submodules hold pointers into params_'s map nodes: moving a std::map
    // keeps node addresses, copying would not
    GsnopModel(const GsnopModel&) = delete;
    GsnopModel& operator=(const GsnopModel&) = delete;
    GsnopModel(GsnopModel&&) = default;
    GsnopModel& operator=(GsnopModel&&) = default;

    /// Create and initialize all parameters. Every variant creates the same
    /// parameter set in the same order, so identical seeds give identical
    /// weights across variants.
    void init(const RunConfig& cfg, std::size_t n_nodes, std::size_t edge_dim, double time_scale) {
        variant_ = parse_variant(cfg.variant);
        elbo_.mc_samples = cfg.mc_samples;
        elbo_.kl_weight = cfg.kl_weight;
        elbo_.validate();
        train_negatives_ = cfg.train_negatives;

        EncoderConfig ec;
        ec.layers = cfg.layers;
        ec.k_neighbors = cfg.k_neighbors;
        ec.node_dim = cfg.node_dim;
        ec.time_dim = cfg.latent_dim;
        ec.edge_dim = edge_dim;
        ec.dropout = cfg.dropout;
        ec.time_scale = time_scale;
        encoder_ = TemporalEncoder::create(params_, "encoder", ec, n_nodes);
        pair_enc_ = PairEncoder::create(params_, "pair", cfg.node_dim, cfg.latent_dim);

        LatentConfig lc;
        lc.latent_dim = cfg.latent_dim;
        lc.ode_hidden = cfg.latent_dim;
        lc.solver = cfg.solver();
        lc.time_scale = time_scale;
        if (cfg.ode_grad == "auto")
            lc.grad_mode = OdeGradMode::Auto;
        else if (cfg.ode_grad == "steps")
            lc.grad_mode = OdeGradMode::BackpropSteps;
        else if (cfg.ode_grad == "adjoint")
            lc.grad_mode = OdeGradMode::Adjoint;
        else
            throw ConfigError("unknown ode_grad '" + cfg.ode_grad + "'");
        latent_ = LatentModule::create(params_, "latent", lc, encoder_.time_encoding());

        decoder_ = LinkDecoder::create(params_, "decoder", cfg.node_dim, cfg.latent_dim);

        Rng rng(derive_seed(cfg.seed, 0x1717));
        params_.init_uniform(rng);
        encoder_.time_encoding().init_frequencies();
    }

    ParamStore& params() { return params_; }
    const TemporalEncoder& encoder() const { return encoder_; }
    const LatentModule& latent() const { return latent_; }
    const LinkDecoder& decoder() const { return decoder_; }
    LatentModule& latent() { return latent_; }
    Variant variant() const { return variant_; }
    void set_variant(Variant v) { variant_ = v; }
    const ElboConfig& elbo_config() const { return elbo_; }

    /// r^t for one (event, y) pair.
    Tensor encode_rep(Tape& tape, const CtdgStore& history, const TemporalEvent& e, double y,
                      bool train_mode, Rng& rng) const {
        Tensor hi = encoder_.node_state(tape, history, e.src, e.t, train_mode, rng);
        Tensor hj = encoder_.node_state(tape, history, e.dst, e.t, train_mode, rng);
        Tensor t_emb = encoder_.encode_time(tape, e.t);
        return pair_enc_.encode(tape, hi, hj, y, t_emb);
    }

    struct PriorState {
        Tensor r;          // aggregated (and, for GSNOP, evolved) representation
        double t_ref = 0;  // time r is current at
        Tensor mu, sigma;  // present unless CNP
        bool has_dist = false;
        Tensor r_pre_ode;      // aggregate before ODE evolution (== r unless GSNOP evolved)
        double t_pre_ode = 0;  // time of r_pre_ode
    };

    /// Prior pathway from chronologically ordered context reps.
    PriorState build_prior(Tape& tape, const std::vector<std::pair<double, Tensor>>& context_reps,
                           double target_t) const {
        PriorState out;
        switch (variant_) {
            case Variant::NP:
            case Variant::CNP: {
                std::vector<Tensor> flat;
                for (const auto& [t, r] : context_reps) flat.push_back(r);
                out.r = latent_.aggregate_mean(tape, flat);
                out.t_ref = context_reps.empty() ? 0.0 : context_reps.back().first;
                break;
            }
            case Variant::SNP:
            case Variant::GSNOP: {
                auto buckets = bucket_by_time(context_reps);
                auto [r, t_ref] = latent_.aggregate_sequential(tape, buckets);
                out.r = r;
                out.t_ref = t_ref;
                out.r_pre_ode = r;
                out.t_pre_ode = t_ref;
                if (variant_ == Variant::GSNOP && target_t > t_ref) {
                    out.r = latent_.evolve(tape, out.r, t_ref, target_t);
                    out.t_ref = target_t;
                }
                break;
            }
        }
        if (!out.r_pre_ode.valid()) {
            out.r_pre_ode = out.r;
            out.t_pre_ode = out.t_ref;
        }
        if (variant_ != Variant::CNP) {
            auto [mu, sigma] = latent_.head(tape, out.r);
            out.mu = mu;
            out.sigma = sigma;
            out.has_dist = true;
        }
        return out;
    }

    /// Variational posterior: fold target reps (true labels) into the
    /// context aggregate, then apply the head. CNP has no posterior.
    PriorState build_posterior(Tape& tape, const PriorState& context_state,
                               const std::vector<std::pair<double, Tensor>>& context_reps,
                               const std::vector<std::pair<double, Tensor>>& target_reps) const {
        PriorState out;
        switch (variant_) {
            case Variant::CNP:
                throw UsageError("CNP has no variational posterior");
            case Variant::NP: {
                std::vector<Tensor> flat;
                for (const auto& [t, r] : context_reps) flat.push_back(r);
                for (const auto& [t, r] : target_reps) flat.push_back(r);
                out.r = latent_.aggregate_mean(tape, flat);
                break;
            }
            case Variant::SNP:
            case Variant::GSNOP: {
                // continue the recurrent state from r_T (before any ODE
                // evolution) over the target buckets
                auto buckets = bucket_by_time(target_reps);
                out.r = latent_.continue_sequential(tape, context_state.r_pre_ode,
                                                    context_state.t_pre_ode, buckets);
                break;
            }
        }
        auto [mu, sigma] = latent_.head(tape, out.r);
        out.mu = mu;
        out.sigma = sigma;
        out.has_dist = true;
        return out;
    }

    struct ElboBreakdown {
        double loss = 0.0;
        double reconstruction = 0.0;
        double kl = 0.0;
    };

    /// Build the negative-ELBO loss for one chronological window of training
    /// events. Deterministic given step_seed.
    Tensor elbo_loss_tape(Tape& tape, const CtdgStore& history,
                          std::span<const TemporalEvent> window, std::uint64_t step_seed,
                          bool train_mode, ElboBreakdown* breakdown = nullptr) const {
        if (window.empty()) throw UsageError("empty training window");
        Rng rng(derive_seed(step_seed, 0xe1b0));

        // split the window at its mid time into context and target
        double t_lo = window.front().t, t_hi = window.back().t;
        double t_mid = 0.5 * (t_lo + t_hi);
        std::vector<TemporalEvent> context, positives;
        for (const auto& e : window) (e.t <= t_mid ? context : positives).push_back(e);
        if (context.empty() || positives.empty()) {
            // degenerate window (all equal timestamps): split by count
            context.assign(window.begin(), window.begin() + window.size() / 2);
            positives.assign(window.begin() + window.size() / 2, window.end());
            if (context.empty() || positives.empty())
                throw UsageError("window too small to split into context and target");
        }

        std::vector<TemporalEvent> targets;
        for (const auto& pos : positives) {
            targets.push_back(pos);
            for (auto& neg : sample_negatives(history, pos, train_negatives_, rng))
                targets.push_back(std::move(neg));
        }

        std::vector<std::pair<double, Tensor>> context_reps, target_reps;
        for (const auto& e : context)
            context_reps.emplace_back(e.t, encode_rep(tape, history, e, 1.0, train_mode, rng));
        for (const auto& e : targets)
            target_reps.emplace_back(e.t,
                                     encode_rep(tape, history, e, static_cast<double>(e.label),
                                                train_mode, rng));

        double target_t = positives.back().t;
        PriorState prior = build_prior(tape, context_reps, target_t);

        // precompute node states for the decoder once per target
        std::vector<std::pair<Tensor, Tensor>> target_states;
        for (const auto& e : targets)
            target_states.emplace_back(
                encoder_.node_state(tape, history, e.src, e.t, train_mode, rng),
                encoder_.node_state(tape, history, e.dst, e.t, train_mode, rng));

        std::vector<Tensor> nll_terms;
        Tensor kl_term;
        bool has_kl = false;

        if (variant_ == Variant::CNP) {
            for (std::size_t i = 0; i < targets.size(); ++i) {
                Tensor y_hat = decoder_.decode(tape, target_states[i].first,
                                               target_states[i].second, prior.r);
                nll_terms.push_back(
                    bernoulli_nll(tape, y_hat, static_cast<double>(targets[i].label)));
            }
        } else {
            PriorState posterior = build_posterior(tape, prior, context_reps, target_reps);
            kl_term = kl_diag_gaussians(tape, posterior.mu, posterior.sigma, prior.mu, prior.sigma);
            has_kl = true;
            for (std::size_t l = 0; l < elbo_.mc_samples; ++l) {
                VecD eps = draw_standard_normal(latent_.config().latent_dim, rng);
                Tensor z = sample_reparam(tape, posterior.mu, posterior.sigma, eps);
                for (std::size_t i = 0; i < targets.size(); ++i) {
                    Tensor y_hat = decoder_.decode(tape, target_states[i].first,
                                                   target_states[i].second, z);
                    nll_terms.push_back(scale(
                        bernoulli_nll(tape, y_hat, static_cast<double>(targets[i].label)),
                        1.0 / static_cast<double>(elbo_.mc_samples)));
                }
            }
        }

        Tensor recon = sum(tape.stack_rows(nll_terms));
        Tensor loss = recon;
        if (has_kl && elbo_.kl_weight != 0.0)
            loss = add(loss, scale(kl_term, elbo_.kl_weight));
        if (breakdown) {
            breakdown->reconstruction = recon.scalar();
            breakdown->kl = has_kl ? kl_term.scalar() : 0.0;
            breakdown->loss = loss.scalar();
        }
        if (!std::isfinite(loss.scalar()))
            throw DomainError("non-finite ELBO loss (recon=" + format_double(recon.scalar()) +
                              ", kl=" + format_double(has_kl ? kl_term.scalar() : 0.0) + ")");
        return loss;
    }

    /// One optimizer step over a window; returns the loss value.
    double train_step(const CtdgStore& history, std::span<const TemporalEvent> window,
                      Adam& optimizer, std::uint64_t step_seed, ElboBreakdown* breakdown = nullptr) {
        Tape tape;
        Tensor loss = elbo_loss_tape(tape, history, window, step_seed, /*train_mode=*/true,
                                     breakdown);
        double value = loss.scalar();
        tape.backward(loss);
        optimizer.step(params_);
        return value;
    }

    struct ContextState {
        VecD r;            // value of the aggregate at t_ref (pre-ODE)
        double t_ref = 0;  // last context time
    };

    /// Aggregate the (chronological) context events into the value-level
    /// latent state used by evaluation.
    ContextState build_context_state(const CtdgStore& history,
                                     const std::vector<TemporalEvent>& context_events) const {
        Tape tape;
        Rng rng(0);  // train_mode=false: no dropout, rng unused
        std::vector<std::pair<double, Tensor>> reps;
        for (const auto& e : context_events)
            reps.emplace_back(e.t, encode_rep(tape, history, e, 1.0, false, rng));
        ContextState out;
        switch (variant_) {
            case Variant::NP:
            case Variant::CNP: {
                std::vector<Tensor> flat;
                for (auto& [t, r] : reps) flat.push_back(r);
                out.r = latent_.aggregate_mean(tape, flat).value();
                out.t_ref = context_events.empty() ? 0.0 : context_events.back().t;
                break;
            }
            case Variant::SNP:
            case Variant::GSNOP: {
                auto [r, t_ref] = latent_.aggregate_sequential(tape, bucket_by_time(reps));
                out.r = r.value();
                out.t_ref = t_ref;
                break;
            }
        }
        return out;
    }

    /// Mean predicted probability for one event given the context state.
    /// GSNOP evolves the state to the event time first (callers doing bulk
    /// evaluation should use `evaluate`, which evolves incrementally).
    double predict(const CtdgStore& history, const TemporalEvent& e, const ContextState& ctx,
                   std::size_t n_samples, std::uint64_t seed) const {
        ContextState local = ctx;
        if (variant_ == Variant::GSNOP && e.t > ctx.t_ref) {
            local.r = latent_.evolve_value(ctx.r, ctx.t_ref, e.t);
            local.t_ref = e.t;
        }
        Rng rng(derive_seed(seed, 0x9ced));
        return predict_with_state(history, e, local.r, draw_eps(n_samples, rng));
    }

    struct EvalOptions {
        std::size_t n_negatives = 50;
        std::size_t n_samples = 10;
        std::uint64_t seed = 0;
        VecD bucket_edges = {0.0, 0.25, 0.5, 0.75, 1.0};
    };

    /// Score every target positive against sampled negatives; returns AP,
    /// MRR and time-bucketed mean NLL. Target events must be chronological.
    /// The context streams forward: once a target event has been scored it
    /// becomes an observation and is folded into the latent state before any
    /// strictly later target is scored, so evaluation is online (and still
    /// causal — an event never informs its own score or a simultaneous one).
    MetricReport evaluate(const CtdgStore& history, const std::vector<TemporalEvent>& context_events,
                          const std::vector<TemporalEvent>& target_events,
                          const EvalOptions& opt) const {
        ContextState ctx = build_context_state(history, context_events);
        VecD r_now = ctx.r;
        double t_now = ctx.t_ref;
        // running mean state for NP/CNP (sequential variants use the GRU)
        std::size_t mean_count =
            (variant_ == Variant::NP || variant_ == Variant::CNP) ? context_events.size() : 0;
        // scored-but-not-yet-folded observations, chronological
        std::vector<std::pair<double, VecD>> pending;

        auto fold_pending_before = [&](double t) {
            std::size_t k = 0;
            while (k < pending.size() && pending[k].first < t) {
                // group simultaneous observations into one bucket
                std::size_t k2 = k + 1;
                while (k2 < pending.size() && pending[k2].first == pending[k].first) ++k2;
                VecD x = pending[k].second;
                for (std::size_t j = k + 1; j < k2; ++j)
                    for (std::size_t d = 0; d < x.size(); ++d) x[d] += pending[j].second[d];
                double inv = 1.0 / static_cast<double>(k2 - k);
                for (double& v : x) v *= inv;
                if (variant_ == Variant::NP || variant_ == Variant::CNP) {
                    // incremental mean over the grown context set
                    std::size_t n_new = mean_count + (k2 - k);
                    for (std::size_t d = 0; d < r_now.size(); ++d)
                        r_now[d] = mean_count == 0
                                       ? x[d]
                                       : (r_now[d] * static_cast<double>(mean_count) +
                                          x[d] * static_cast<double>(k2 - k)) /
                                             static_cast<double>(n_new);
                    mean_count = n_new;
                } else {
                    Tape tape;
                    Tensor r = gru_value_step(tape, x, r_now);
                    r_now = r.value();
                }
                t_now = std::max(t_now, pending[k].first);
                k = k2;
            }
            pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(k));
        };

        std::vector<RankedQuery> queries;
        VecD times, losses;
        for (std::size_t qi = 0; qi < target_events.size(); ++qi) {
            const TemporalEvent& pos = target_events[qi];
            fold_pending_before(pos.t);
            if (variant_ == Variant::GSNOP && pos.t > t_now) {
                r_now = latent_.evolve_value(r_now, t_now, pos.t);
                t_now = pos.t;
            }
            Rng rng(derive_seed(opt.seed, 0xe7a0 + qi));
            auto negatives = sample_negatives(history, pos, opt.n_negatives, rng);
            // one shared set of z draws per query: scores of the positive and
            // its negatives are compared under identical latent samples
            auto eps_list = draw_eps(opt.n_samples, rng);
            RankedQuery q;
            q.positive_score = predict_with_state(history, pos, r_now, eps_list);
            for (const auto& neg : negatives)
                q.negative_scores.push_back(predict_with_state(history, neg, r_now, eps_list));
            times.push_back(pos.t);
            losses.push_back(-std::log(std::max(q.positive_score, kLogEps)));
            queries.push_back(std::move(q));
            {
                Tape tape;
                Rng dummy(0);
                pending.emplace_back(pos.t,
                                     encode_rep(tape, history, pos, 1.0, false, dummy).value());
            }
        }

        MetricReport report;
        report.n_queries = queries.size();
        if (!queries.empty()) {
            report.ap = average_precision(queries);
            report.mrr = mrr(queries);
            double t_lo = target_events.front().t, t_hi = target_events.back().t;
            report.time_group_loss = time_group_mean(times, losses, t_lo, t_hi, opt.bucket_edges);
        }
        return report;
    }

    void save_checkpoint(const std::string& path) const {
        nlohmann::json j;
        j["format_version"] = kCheckpointVersion;
        nlohmann::json jp = nlohmann::json::object();
        for (const auto& [name, p] : params_) {
            jp[name] = {{"rows", p.rows}, {"cols", p.cols}, {"values", p.value}};
        }
        j["params"] = jp;
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write checkpoint " + path);
        out << j.dump();
    }

    void load_checkpoint(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open checkpoint " + path);
        nlohmann::json j;
        in >> j;
        if (j.value("format_version", -1) != kCheckpointVersion)
            throw ConfigError("unsupported checkpoint version");
        for (auto& [name, jp] : j.at("params").items()) {
            Param& p = params_.at(name);
            if (jp.at("rows").get<std::size_t>() != p.rows ||
                jp.at("cols").get<std::size_t>() != p.cols)
                throw ConfigError("checkpoint shape mismatch for " + name);
            p.value = jp.at("values").get<VecD>();
        }
    }

   private:
    /// One value-level GRU step: observation x into state r.
    Tensor gru_value_step(Tape& tape, const VecD& x, const VecD& r) const {
        Tensor xt = tape.constant(1, x.size(), x);
        Tensor rt = tape.constant(1, r.size(), r);
        return latent_.gru().step(tape, xt, rt);
    }

    std::vector<VecD> draw_eps(std::size_t n_samples, Rng& rng) const {
        std::vector<VecD> eps(n_samples);
        for (VecD& e : eps) e = draw_standard_normal(latent_.config().latent_dim, rng);
        return eps;
    }

    double predict_with_state(const CtdgStore& history, const TemporalEvent& e, const VecD& r,
                              const std::vector<VecD>& eps_list) const {
        Tape tape;
        Rng dummy(0);
        Tensor hi = encoder_.node_state(tape, history, e.src, e.t, false, dummy);
        Tensor hj = encoder_.node_state(tape, history, e.dst, e.t, false, dummy);
        Tensor rt = tape.constant(1, r.size(), r);
        if (variant_ == Variant::CNP) {
            return decoder_.decode(tape, hi, hj, rt).scalar();
        }
        auto [mu, sigma] = latent_.head(tape, rt);
        double acc = 0.0;
        for (const VecD& eps : eps_list) {
            Tensor z = sample_reparam(tape, mu, sigma, eps);
            acc += decoder_.decode(tape, hi, hj, z).scalar();
        }
        return acc / static_cast<double>(eps_list.size());
    }

    ParamStore params_;
    TemporalEncoder encoder_;
    PairEncoder pair_enc_;
    LatentModule latent_;
    LinkDecoder decoder_;
    Variant variant_ = Variant::GSNOP;
    ElboConfig elbo_;
    std::size_t train_negatives_ = 1;
};

}  // namespace gsnop
