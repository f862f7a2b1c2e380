#pragma once

// Dynamic-graph encoder: learnable cosine time embedding, temporal
// mean-aggregation message passing over the k most recent neighbors, and the
// per-link pair encoder producing r^t.

#include <string>
#include <vector>

#include "gsnop/autodiff.hpp"
#include "gsnop/ctdg.hpp"
#include "gsnop/nn.hpp"

namespace gsnop {

/// encode(t)[i] = cos(omega_i * t + phi_i); entries always in [-1, 1].
struct TimeEncoding {
    Param* omega = nullptr;
    Param* phi = nullptr;
    std::size_t dim = 0;

    static TimeEncoding create(ParamStore& ps, const std::string& name, std::size_t dim) {
        TimeEncoding te;
        te.dim = dim;
        te.omega = &ps.create(name + ".omega", 1, dim);
        te.phi = &ps.create(name + ".phi", 1, dim);
        te.init_frequencies();
        return te;
    }

    /// Geometric frequency ladder so different entries resolve different time
    /// scales; phases start at zero. Called again after global weight init.
    void init_frequencies() {
        for (std::size_t i = 0; i < dim; ++i)
            omega->value[i] =
                std::pow(10.0, 1.0 - 3.0 * static_cast<double>(i) / static_cast<double>(dim));
        std::fill(phi->value.begin(), phi->value.end(), 0.0);
    }

    static TimeEncoding attach(ParamStore& ps, const std::string& name) {
        TimeEncoding te;
        te.omega = &ps.at(name + ".omega");
        te.phi = &ps.at(name + ".phi");
        te.dim = te.omega->cols;
        return te;
    }

    Tensor encode(Tape& tape, double t) const {
        Tensor w = tape.param(*omega);
        Tensor p = tape.param(*phi);
        return cos(add(scale(w, t), p));
    }

    std::vector<Param*> params() const { return {omega, phi}; }
};

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t k_neighbors = 10;
    std::size_t node_dim = 100;
    std::size_t time_dim = 256;   // matches the latent dimension
    std::size_t edge_dim = 0;
    double dropout = 0.0;
    double time_scale = 1.0;  // raw timestamps are divided by this before encoding
};

/// Temporal message-passing encoder. h^t(v) depends only on events strictly
/// before t; isolated nodes return their learnable base embedding exactly.
class TemporalEncoder {
   public:
    TemporalEncoder() = default;

    static TemporalEncoder create(ParamStore& ps, const std::string& name, const EncoderConfig& cfg,
                                  std::size_t n_nodes) {
        TemporalEncoder enc;
        enc.cfg_ = cfg;
        enc.name_ = name;
        enc.base_ = &ps.create(name + ".base_embed", n_nodes, cfg.node_dim);
        enc.time_enc_ = TimeEncoding::create(ps, name + ".time", cfg.time_dim);
        std::size_t msg_dim = cfg.node_dim + cfg.edge_dim + cfg.time_dim;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            enc.layer_w_.push_back(&ps.create(name + ".layer" + std::to_string(l) + ".w",
                                              cfg.node_dim + msg_dim, cfg.node_dim));
            enc.layer_b_.push_back(&ps.create(name + ".layer" + std::to_string(l) + ".b", 1,
                                              cfg.node_dim));
        }
        return enc;
    }

    const EncoderConfig& config() const { return cfg_; }
    const TimeEncoding& time_encoding() const { return time_enc_; }
    TimeEncoding& time_encoding() { return time_enc_; }

    Tensor encode_time(Tape& tape, double t) const {
        return time_enc_.encode(tape, t / cfg_.time_scale);
    }

    /// h^t for node v using only events of `store` strictly before t.
    Tensor node_state(Tape& tape, const CtdgStore& store, int v, double t, bool train_mode,
                      Rng& rng) const {
        return state_at_layer(tape, store, v, t, cfg_.layers, train_mode, rng);
    }

   private:
    Tensor state_at_layer(Tape& tape, const CtdgStore& store, int v, double t, std::size_t layer,
                          bool train_mode, Rng& rng) const {
        if (layer == 0) return tape.param_row(*base_, static_cast<std::size_t>(v));
        auto hits = store.neighbors_before(v, t, cfg_.k_neighbors);
        if (hits.empty()) return tape.param_row(*base_, static_cast<std::size_t>(v));
        std::vector<Tensor> messages;
        messages.reserve(hits.size());
        for (const auto& hit : hits) {
            Tensor nb = state_at_layer(tape, store, hit.neighbor, hit.t, layer - 1, train_mode, rng);
            Tensor msg = nb;
            if (cfg_.edge_dim > 0) {
                VecD feat = *hit.edge_feat;
                feat.resize(cfg_.edge_dim, 0.0);
                msg = concat(msg, tape.constant_row(std::move(feat)), 1);
            }
            msg = concat(msg, encode_time(tape, t - hit.t), 1);
            messages.push_back(msg);
        }
        Tensor agg = messages.size() == 1 ? messages[0] : mean_rows(tape.stack_rows(messages));
        Tensor self = state_at_layer(tape, store, v, t, layer - 1, train_mode, rng);
        Tensor h = relu(add(matmul(concat(self, agg, 1), tape.param(*layer_w_[layer - 1])),
                            tape.param(*layer_b_[layer - 1])));
        return dropout(tape, h, cfg_.dropout, train_mode, rng);
    }

    EncoderConfig cfg_;
    std::string name_;
    Param* base_ = nullptr;
    TimeEncoding time_enc_;
    std::vector<Param*> layer_w_;
    std::vector<Param*> layer_b_;
};

/// r^t = MLP(h_i || h_j || y) + t_emb.
struct PairEncoder {
    Mlp mlp;
    std::size_t latent_dim = 0;

    static PairEncoder create(ParamStore& ps, const std::string& name, std::size_t node_dim,
                              std::size_t latent_dim) {
        PairEncoder pe;
        pe.latent_dim = latent_dim;
        pe.mlp = Mlp::create(ps, name + ".mlp", 2 * node_dim + 1, latent_dim, latent_dim);
        return pe;
    }

    Tensor encode(Tape& tape, Tensor h_i, Tensor h_j, double y, Tensor t_emb) const {
        Tensor x = concat(concat(h_i, h_j, 1), tape.scalar_const(y), 1);
        return add(mlp.apply(tape, x), t_emb);
    }
};

}  // namespace gsnop
