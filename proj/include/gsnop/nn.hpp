#pragma once

// Small feed-forward building blocks on top of the autodiff tape.

#include <string>
#include <vector>

#include "gsnop/autodiff.hpp"

namespace gsnop {

/// Two-layer perceptron: Linear -> ReLU -> Linear.
struct Mlp {
    Param* w1 = nullptr;
    Param* b1 = nullptr;
    Param* w2 = nullptr;
    Param* b2 = nullptr;

    static Mlp create(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
                      std::size_t out) {
        Mlp m;
        m.w1 = &ps.create(name + ".w1", in, hidden);
        m.b1 = &ps.create(name + ".b1", 1, hidden);
        m.w2 = &ps.create(name + ".w2", hidden, out);
        m.b2 = &ps.create(name + ".b2", 1, out);
        return m;
    }

    static Mlp attach(ParamStore& ps, const std::string& name) {
        Mlp m;
        m.w1 = &ps.at(name + ".w1");
        m.b1 = &ps.at(name + ".b1");
        m.w2 = &ps.at(name + ".w2");
        m.b2 = &ps.at(name + ".b2");
        return m;
    }

    Tensor apply(Tape& tape, Tensor x) const {
        Tensor h = relu(linear(tape, x, *w1, *b1));
        return linear(tape, h, *w2, *b2);
    }

    std::vector<Param*> params() const { return {w1, b1, w2, b2}; }
};

/// GRU cell over 1 x n rows.
struct GruCell {
    Param *wz = nullptr, *uz = nullptr, *bz = nullptr;
    Param *wr = nullptr, *ur = nullptr, *br = nullptr;
    Param *wc = nullptr, *uc = nullptr, *bc = nullptr;

    static GruCell create(ParamStore& ps, const std::string& name, std::size_t dim) {
        GruCell g;
        g.wz = &ps.create(name + ".wz", dim, dim);
        g.uz = &ps.create(name + ".uz", dim, dim);
        g.bz = &ps.create(name + ".bz", 1, dim);
        g.wr = &ps.create(name + ".wr", dim, dim);
        g.ur = &ps.create(name + ".ur", dim, dim);
        g.br = &ps.create(name + ".br", 1, dim);
        g.wc = &ps.create(name + ".wc", dim, dim);
        g.uc = &ps.create(name + ".uc", dim, dim);
        g.bc = &ps.create(name + ".bc", 1, dim);
        return g;
    }

    /// h' = (1 - u) * h + u * c with reset gate r on the candidate input.
    Tensor step(Tape& tape, Tensor x, Tensor h) const {
        Tensor u = sigmoid(add(add(matmul(x, tape.param(*wz)), matmul(h, tape.param(*uz))),
                               tape.param(*bz)));
        Tensor r = sigmoid(add(add(matmul(x, tape.param(*wr)), matmul(h, tape.param(*ur))),
                               tape.param(*br)));
        Tensor c = tanh(add(add(matmul(x, tape.param(*wc)), matmul(mul(r, h), tape.param(*uc))),
                            tape.param(*bc)));
        Tensor one_minus_u = affine(u, -1.0, 1.0);
        return add(mul(one_minus_u, h), mul(u, c));
    }

    std::vector<Param*> params() const { return {wz, uz, bz, wr, ur, br, wc, uc, bc}; }
};

/// Inverted dropout: scales kept entries by 1/(1-rate). Identity when rate
/// is 0 or train_mode is false.
inline Tensor dropout(Tape& tape, Tensor x, double rate, bool train_mode, Rng& rng) {
    if (!train_mode || rate <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    VecD mask(x.size());
    double inv = 1.0 / (1.0 - rate);
    for (double& m : mask) m = keep(rng) ? inv : 0.0;
    return mul(x, tape.constant(x.rows(), x.cols(), std::move(mask)));
}

}  // namespace gsnop
