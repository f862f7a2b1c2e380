#pragma once

// Link-prediction decoder conditioned on a sampled latent z, Gaussian
// reparameterization, diagonal-Gaussian KL and the ELBO objective.

#include <string>
#include <utility>
#include <vector>

#include "gsnop/autodiff.hpp"
#include "gsnop/nn.hpp"

namespace gsnop {

struct GaussianDiag {
    VecD mu;
    VecD sigma;
};

struct ElboConfig {
    std::size_t mc_samples = 10;
    double kl_weight = 1.0;

    void validate() const {
        if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    }
};

/// z = mu + sigma * eps with an externally supplied standard-normal draw, so
/// gradients flow to mu and sigma.
inline Tensor sample_reparam(Tape& tape, Tensor mu, Tensor sigma, const VecD& eps) {
    if (eps.size() != mu.size()) throw ShapeError("reparameterization noise size mismatch");
    return add(mu, mul(sigma, tape.constant(1, eps.size(), eps)));
}

inline VecD draw_standard_normal(std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    VecD eps(n);
    for (double& e : eps) e = normal(rng);
    return eps;
}

/// Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions.
inline Tensor kl_diag_gaussians(Tape& tape, Tensor q_mu, Tensor q_sigma, Tensor p_mu,
                                Tensor p_sigma) {
    Tensor log_ratio = sub(log(p_sigma), log(q_sigma));
    Tensor diff = sub(q_mu, p_mu);
    Tensor num = add(mul(q_sigma, q_sigma), mul(diff, diff));
    Tensor den = scale(mul(p_sigma, p_sigma), 2.0);
    Tensor terms = affine(add(log_ratio, div(num, den)), 1.0, -0.5);
    return sum(terms);
}

/// Value-level KL for evaluation and oracle checks.
inline double kl_diag_gaussians_value(const GaussianDiag& q, const GaussianDiag& p) {
    double kl = 0.0;
    for (std::size_t i = 0; i < q.mu.size(); ++i) {
        double sq = q.sigma[i], sp = p.sigma[i];
        double d = q.mu[i] - p.mu[i];
        kl += std::log(sp / sq) + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    return kl;
}

/// h~_i = ReLU(MLP(h_i || z)), h~_j likewise with the same MLP;
/// y^ = Sigmoid(MLP(h~_i || h~_j)).
struct LinkDecoder {
    Mlp proj;  // shared projection for both endpoints
    Mlp out;

    static LinkDecoder create(ParamStore& ps, const std::string& name, std::size_t node_dim,
                              std::size_t latent_dim) {
        LinkDecoder d;
        d.proj = Mlp::create(ps, name + ".proj", node_dim + latent_dim, node_dim, node_dim);
        d.out = Mlp::create(ps, name + ".out", 2 * node_dim, node_dim, 1);
        return d;
    }

    Tensor decode(Tape& tape, Tensor h_i, Tensor h_j, Tensor z) const {
        Tensor hi = relu(proj.apply(tape, concat(h_i, z, 1)));
        Tensor hj = relu(proj.apply(tape, concat(h_j, z, 1)));
        return sigmoid(out.apply(tape, concat(hi, hj, 1)));
    }
};

constexpr double kLogEps = 1e-12;

/// -[y log y^ + (1-y) log(1 - y^)] with probabilities clamped at 1e-12.
inline Tensor bernoulli_nll(Tape& tape, Tensor y_hat, double y) {
    Tensor p = clamp(y_hat, kLogEps, 1.0 - kLogEps);
    if (y >= 0.5) return scale(log(p), -1.0);
    return scale(log(affine(p, -1.0, 1.0)), -1.0);
}

}  // namespace gsnop
