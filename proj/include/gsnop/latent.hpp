#pragma once

// Global latent pathway: aggregation of per-link representations into r_T,
// neural-ODE evolution of r through time, and the Gaussian distribution
// head.

#include <string>
#include <utility>
#include <vector>

#include "gsnop/autodiff.hpp"
#include "gsnop/encoder.hpp"
#include "gsnop/nn.hpp"
#include "gsnop/odeint.hpp"

namespace gsnop {

enum class Variant { NP, CNP, SNP, GSNOP };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::NP: return "np";
        case Variant::CNP: return "cnp";
        case Variant::SNP: return "snp";
        case Variant::GSNOP: return "gsnop";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "np") return Variant::NP;
    if (s == "cnp") return Variant::CNP;
    if (s == "snp") return Variant::SNP;
    if (s == "gsnop") return Variant::GSNOP;
    throw ConfigError("unknown variant '" + s + "' (expected np|cnp|snp|gsnop)");
}

enum class OdeGradMode { Auto, BackpropSteps, Adjoint };

/// chi = ReLU(W r + b); mu = ReLU(W_mu chi); sigma = 0.1 + 0.9 sigmoid(W_s chi).
struct DistHead {
    Param *w_chi = nullptr, *b_chi = nullptr;
    Param *w_mu = nullptr, *b_mu = nullptr;
    Param *w_sigma = nullptr, *b_sigma = nullptr;

    static DistHead create(ParamStore& ps, const std::string& name, std::size_t dim) {
        DistHead h;
        h.w_chi = &ps.create(name + ".w_chi", dim, dim);
        h.b_chi = &ps.create(name + ".b_chi", 1, dim);
        h.w_mu = &ps.create(name + ".w_mu", dim, dim);
        h.b_mu = &ps.create(name + ".b_mu", 1, dim);
        h.w_sigma = &ps.create(name + ".w_sigma", dim, dim);
        h.b_sigma = &ps.create(name + ".b_sigma", 1, dim);
        return h;
    }

    std::pair<Tensor, Tensor> apply(Tape& tape, Tensor r) const {
        Tensor chi = relu(linear(tape, r, *w_chi, *b_chi));
        Tensor mu = relu(linear(tape, chi, *w_mu, *b_mu));
        // pre-activation clamp keeps sigma strictly inside (0.1, 1.0) even when
        // the sigmoid would saturate to 0.0 or 1.0 in double precision
        Tensor pre = clamp(linear(tape, chi, *w_sigma, *b_sigma), -30.0, 30.0);
        Tensor sigma = affine(sigmoid(pre), 0.9, 0.1);
        return {mu, sigma};
    }
};

/// f_ode(r, t) = tanh(MLP(r + t_emb(t))) in normalized time.
struct OdeDynamics {
    Mlp mlp;
    TimeEncoding temb;  // shared with the encoder
    std::size_t dim = 0;

    std::vector<Param*> params() const {
        std::vector<Param*> out = mlp.params();
        out.push_back(temb.omega);
        out.push_back(temb.phi);
        return out;
    }

    /// Evaluate with explicit parameter leaves (bound or constant), in the
    /// order returned by params(). t is already normalized.
    Tensor apply(Tape& tape, Tensor r, double t, const std::vector<Tensor>& leaves) const {
        Tensor t_emb = cos(add(scale(leaves[4], t), leaves[5]));
        Tensor x = add(r, t_emb);
        Tensor h = relu(add(matmul(x, leaves[0]), leaves[1]));
        return tanh(add(matmul(h, leaves[2]), leaves[3]));
    }

    std::vector<Tensor> bind(Tape& tape) const {
        std::vector<Tensor> leaves;
        for (Param* p : params()) leaves.push_back(tape.param(*p));
        return leaves;
    }

    std::vector<Tensor> freeze(Tape& tape) const {
        std::vector<Tensor> leaves;
        for (Param* p : params()) leaves.push_back(tape.constant(p->rows, p->cols, p->value));
        return leaves;
    }
};

/// Value-level OdeFunc view of OdeDynamics; vector-Jacobian products run a
/// small local tape per call.
class LatentOdeFunc : public OdeFunc {
   public:
    explicit LatentOdeFunc(const OdeDynamics& dyn) : dyn_(dyn) {
        np_ = 0;
        for (Param* p : dyn_.params()) np_ += p->size();
    }

    std::size_t dim() const override { return dyn_.dim; }
    std::size_t param_count() const override { return np_; }

    VecD eval(const VecD& z, double t) const override {
        Tape tape;
        Tensor r = tape.constant(1, dyn_.dim, z);
        Tensor out = dyn_.apply(tape, r, t, dyn_.freeze(tape));
        return out.value();
    }

    void vjp(const VecD& z, double t, const VecD& a, VecD& grad_z, VecD& grad_params) const override {
        Tape tape;
        Tensor r = tape.constant(1, dyn_.dim, z);
        std::vector<Tensor> leaves = dyn_.freeze(tape);
        Tensor out = dyn_.apply(tape, r, t, leaves);
        tape.backward_seed(out, a);
        const VecD& gr = tape.slot(r.id).grad;
        for (std::size_t i = 0; i < gr.size(); ++i) grad_z[i] += gr[i];
        std::size_t off = 0;
        for (Tensor leaf : leaves) {
            const VecD& g = tape.slot(leaf.id).grad;
            for (std::size_t i = 0; i < g.size(); ++i) grad_params[off + i] += g[i];
            off += g.size();
        }
    }

   private:
    const OdeDynamics& dyn_;
    std::size_t np_;
};

struct LatentConfig {
    std::size_t latent_dim = 256;
    std::size_t ode_hidden = 256;
    SolverConfig solver;
    OdeGradMode grad_mode = OdeGradMode::Auto;
    double time_scale = 1.0;
};

struct RepBucket {
    double t = 0.0;
    std::vector<Tensor> reps;
};

/// Group representations (already chronological) into buckets of identical
/// timestamp.
inline std::vector<RepBucket> bucket_by_time(const std::vector<std::pair<double, Tensor>>& reps) {
    std::vector<RepBucket> out;
    for (const auto& [t, r] : reps) {
        if (!out.empty() && out.back().t == t) {
            out.back().reps.push_back(r);
        } else {
            if (!out.empty() && t < out.back().t)
                throw UsageError("sequential aggregation requires ascending time buckets");
            out.push_back(RepBucket{t, {r}});
        }
    }
    return out;
}

class LatentModule {
   public:
    LatentModule() = default;

    static LatentModule create(ParamStore& ps, const std::string& name, const LatentConfig& cfg,
                               const TimeEncoding& shared_temb) {
        LatentModule m;
        m.cfg_ = cfg;
        m.gru_ = GruCell::create(ps, name + ".gru", cfg.latent_dim);
        m.r0_ = &ps.create(name + ".r0", 1, cfg.latent_dim);
        m.head_ = DistHead::create(ps, name + ".head", cfg.latent_dim);
        m.dyn_.mlp = Mlp::create(ps, name + ".ode_mlp", cfg.latent_dim, cfg.ode_hidden, cfg.latent_dim);
        m.dyn_.temb = shared_temb;
        m.dyn_.dim = cfg.latent_dim;
        return m;
    }

    const LatentConfig& config() const { return cfg_; }
    LatentConfig& config() { return cfg_; }
    const OdeDynamics& dynamics() const { return dyn_; }
    const GruCell& gru() const { return gru_; }

    Tensor prior_seed(Tape& tape) const { return tape.param(*r0_); }

    Tensor aggregate_mean(Tape& tape, const std::vector<Tensor>& reps) const {
        if (reps.empty()) return prior_seed(tape);
        if (reps.size() == 1) return reps[0];
        return mean_rows(tape.stack_rows(reps));
    }

    /// GRU over ascending time buckets; the first bucket initializes the
    /// state as the mean of its representations. Returns (r, t of last
    /// bucket).
    std::pair<Tensor, double> aggregate_sequential(Tape& tape,
                                                   const std::vector<RepBucket>& buckets) const {
        if (buckets.empty()) return {prior_seed(tape), 0.0};
        Tensor r = aggregate_mean(tape, buckets.front().reps);
        double t_ref = buckets.front().t;
        for (std::size_t i = 1; i < buckets.size(); ++i) {
            if (buckets[i].t < t_ref) throw UsageError("out-of-order time bucket");
            Tensor x = aggregate_mean(tape, buckets[i].reps);
            r = gru_.step(tape, x, r);
            t_ref = buckets[i].t;
        }
        return {r, t_ref};
    }

    /// Continue an existing sequential state over further buckets (used for
    /// the variational posterior).
    Tensor continue_sequential(Tape& tape, Tensor r, double t_ref,
                               const std::vector<RepBucket>& buckets) const {
        for (const auto& b : buckets) {
            if (b.t < t_ref) throw UsageError("out-of-order time bucket");
            Tensor x = aggregate_mean(tape, b.reps);
            r = gru_.step(tape, x, r);
            t_ref = b.t;
        }
        return r;
    }

    std::pair<Tensor, Tensor> head(Tape& tape, Tensor r) const { return head_.apply(tape, r); }

    /// Evolve r from raw time t0 to raw time t1 on the tape, with gradients
    /// either by replaying the accepted solver steps as tape operations or
    /// by the adjoint method (the default for DOPRI5).
    Tensor evolve(Tape& tape, Tensor r, double t0, double t1) const {
        if (t1 < t0) throw UsageError("evolve: target time before state time");
        if (t1 == t0) return r;
        double u0 = t0 / cfg_.time_scale, u1 = t1 / cfg_.time_scale;
        LatentOdeFunc f(dyn_);
        bool adjoint = cfg_.grad_mode == OdeGradMode::Adjoint ||
                       (cfg_.grad_mode == OdeGradMode::Auto &&
                        cfg_.solver.method == OdeMethod::Dopri5);
        if (!adjoint) {
            StepSequence steps;
            ode_solve_record(f, r.value(), u0, u1, cfg_.solver, steps);
            return replay_steps(tape, r, steps);
        }
        VecD z1 = ode_solve(f, r.value(), u0, u1, cfg_.solver);
        Tape* tp = &tape;
        std::size_t rid = r.id;
        const LatentConfig* cfg = &cfg_;
        const OdeDynamics* dyn = &dyn_;
        return tape.custom(1, cfg_.latent_dim, z1,
                           [tp, rid, cfg, dyn, z1, u0, u1](const VecD& out_grad) {
                               LatentOdeFunc fb(*dyn);
                               AdjointResult adj =
                                   ode_solve_adjoint(fb, z1, u0, u1, cfg->solver, out_grad);
                               VecD& gr = tp->slot(rid).grad;
                               for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += adj.grad_z0[i];
                               std::size_t off = 0;
                               for (Param* p : dyn->params()) {
                                   for (std::size_t i = 0; i < p->size(); ++i)
                                       p->grad[i] += adj.grad_params[off + i];
                                   off += p->size();
                               }
                           });
    }

    /// Value-only evolution for evaluation.
    VecD evolve_value(const VecD& r, double t0, double t1) const {
        if (t1 < t0) throw UsageError("evolve: target time before state time");
        if (t1 == t0) return r;
        LatentOdeFunc f(dyn_);
        return ode_solve(f, r, t0 / cfg_.time_scale, t1 / cfg_.time_scale, cfg_.solver);
    }

   private:
    Tensor replay_steps(Tape& tape, Tensor z, const StepSequence& steps) const {
        std::vector<Tensor> leaves = dyn_.bind(tape);
        auto f = [this, &tape, &leaves](Tensor zz, double t) {
            return dyn_.apply(tape, zz, t, leaves);
        };
        using Tab = detail::Dopri5Tab;
        for (const auto& [t, h] : steps) {
            switch (cfg_.solver.method) {
                case OdeMethod::Euler: {
                    z = add(z, scale(f(z, t), h));
                    break;
                }
                case OdeMethod::RK4: {
                    Tensor k1 = f(z, t);
                    Tensor k2 = f(add(z, scale(k1, h / 2)), t + h / 2);
                    Tensor k3 = f(add(z, scale(k2, h / 2)), t + h / 2);
                    Tensor k4 = f(add(z, scale(k3, h)), t + h);
                    Tensor incr = add(add(k1, scale(add(k2, k3), 2.0)), k4);
                    z = add(z, scale(incr, h / 6));
                    break;
                }
                case OdeMethod::Dopri5: {
                    Tensor k[7];
                    k[0] = f(z, t);
                    for (int s = 1; s < 7; ++s) {
                        Tensor zs = z;
                        for (int j = 0; j < s; ++j)
                            if (Tab::a[s][j] != 0.0) zs = add(zs, scale(k[j], h * Tab::a[s][j]));
                        k[s] = f(zs, t + Tab::c[s] * h);
                    }
                    for (int s = 0; s < 7; ++s)
                        if (Tab::b5[s] != 0.0) z = add(z, scale(k[s], h * Tab::b5[s]));
                    break;
                }
            }
        }
        return z;
    }

    LatentConfig cfg_;
    GruCell gru_;
    Param* r0_ = nullptr;
    DistHead head_;
    OdeDynamics dyn_;
};

}  // namespace gsnop
