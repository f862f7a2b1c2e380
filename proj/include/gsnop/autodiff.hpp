#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// Tensors are 2-D (rows x cols) double arrays; vectors are 1 x n. A Tape owns
// all intermediate storage; a Tensor is a cheap handle (tape pointer + slot
// id). Parameters live outside the tape in a ParamStore and are brought onto
// a tape through leaf nodes whose backward pass accumulates into the
// parameter's persistent grad buffer.

#include <algorithm>
#include <cassert>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gsnop/common.hpp"

namespace gsnop {

/// Persistent named parameter: value plus accumulated gradient.
struct Param {
    std::string name;
    std::size_t rows = 0, cols = 0;
    VecD value;
    VecD grad;

    std::size_t size() const { return rows * cols; }
};

class ParamStore {
   public:
    Param& create(const std::string& name, std::size_t rows, std::size_t cols) {
        auto [it, inserted] = params_.try_emplace(name);
        if (!inserted) throw ConfigError("duplicate parameter " + name);
        Param& p = it->second;
        p.name = name;
        p.rows = rows;
        p.cols = cols;
        p.value.assign(rows * cols, 0.0);
        p.grad.assign(rows * cols, 0.0);
        return p;
    }

    Param& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    /// He-uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)], fan_in = rows.
    /// The sqrt(6) factor keeps activation variance stable through stacked
    /// ReLU layers; smaller scales let the decoder's rectified units die
    /// collectively early in training.
    void init_uniform(Rng& rng) {
        for (auto& [name, p] : params_) {
            double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(p.rows, 1)));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& x : p.value) x = dist(rng);
        }
    }

    /// Copy of all parameter values (for checkpoint selection / rollback).
    std::map<std::string, VecD> snapshot_values() const {
        std::map<std::string, VecD> snap;
        for (const auto& [name, p] : params_) snap[name] = p.value;
        return snap;
    }

    /// Restore values from a snapshot without touching node addresses.
    void restore_values(const std::map<std::string, VecD>& snap) {
        for (const auto& [name, v] : snap) {
            Param& p = at(name);
            if (v.size() != p.size()) throw ShapeError("snapshot size mismatch for " + name);
            p.value = v;
        }
    }

    void zero_grads() {
        for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& [name, p] : params_)
            for (double g : p.grad) s += g * g;
        return std::sqrt(s);
    }

    // std::map keeps iteration order stable, which the determinism contract
    // relies on (checkpoints, Adam moments, grad clipping).
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t count() const { return params_.size(); }

   private:
    std::map<std::string, Param> params_;
};

class Tape;

struct Tensor {
    Tape* tape = nullptr;
    std::size_t id = 0;

    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const { return rows() * cols(); }
    const VecD& value() const;
    const VecD& grad() const;
    double scalar() const;
    bool valid() const { return tape != nullptr; }
};

class Tape {
   public:
    struct Slot {
        std::size_t rows, cols;
        VecD val;
        VecD grad;
    };

    Tensor constant(std::size_t rows, std::size_t cols, VecD values) {
        if (values.size() != rows * cols) throw ShapeError("constant data size mismatch");
        return make(rows, cols, std::move(values), nullptr);
    }

    Tensor constant_row(VecD values) {
        std::size_t n = values.size();
        return constant(1, n, std::move(values));
    }

    Tensor scalar_const(double x) { return constant(1, 1, {x}); }

    Tensor zeros(std::size_t rows, std::size_t cols) { return constant(rows, cols, VecD(rows * cols, 0.0)); }

    /// Leaf bound to a parameter; backward accumulates into p.grad.
    Tensor param(Param& p) {
        Param* pp = &p;
        Tensor t = make(p.rows, p.cols, p.value, [this, pp](std::size_t id) {
            const VecD& g = slots_[id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
        });
        return t;
    }

    /// Single row of a parameter matrix as a 1 x cols leaf.
    Tensor param_row(Param& p, std::size_t row) {
        if (row >= p.rows) throw ShapeError("param_row index out of range for " + p.name);
        Param* pp = &p;
        VecD v(p.value.begin() + row * p.cols, p.value.begin() + (row + 1) * p.cols);
        return make(1, p.cols, std::move(v), [this, pp, row](std::size_t id) {
            const VecD& g = slots_[id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) pp->grad[row * pp->cols + i] += g[i];
        });
    }

    /// Reverse sweep from an arbitrary output with an explicit seed gradient.
    void backward_seed(Tensor out, const VecD& seed) {
        if (out.tape != this) throw UsageError("backward_seed: tensor not on this tape");
        Slot& s = slots_[out.id];
        if (seed.size() != s.val.size()) throw ShapeError("backward_seed: seed size mismatch");
        for (std::size_t i = 0; i < seed.size(); ++i) s.grad[i] += seed[i];
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i]) nodes_[i](i);
        }
    }

    /// Node with a caller-supplied backward rule; the callback receives the
    /// output gradient and is responsible for all accumulation.
    Tensor custom(std::size_t rows, std::size_t cols, VecD val,
                  std::function<void(const VecD&)> bw) {
        return make(rows, cols, std::move(val),
                    [this, bw = std::move(bw)](std::size_t id) { bw(slots_[id].grad); });
    }

    void backward(Tensor loss) {
        if (loss.tape != this) throw UsageError("backward: tensor not on this tape");
        if (slots_[loss.id].rows != 1 || slots_[loss.id].cols != 1)
            throw UsageError("backward requires a scalar loss");
        slots_[loss.id].grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i]) nodes_[i](i);
        }
    }

    std::size_t size() const { return slots_.size(); }
    const Slot& slot(std::size_t id) const { return slots_[id]; }
    Slot& slot(std::size_t id) { return slots_[id]; }

    // --- primitive ops -----------------------------------------------------

    Tensor matmul(Tensor a, Tensor b) {
        check(a, b);
        const Slot &sa = slots_[a.id], &sb = slots_[b.id];
        if (sa.cols != sb.rows) throw ShapeError("matmul inner dimensions differ");
        std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
        VecD out(m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = sa.val[i * k + p];
                if (av == 0.0) continue;
                const double* brow = &sb.val[p * n];
                double* orow = &out[i * n];
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        std::size_t ia = a.id, ib = b.id;
        return make(m, n, std::move(out), [this, ia, ib, m, k, n](std::size_t id) {
            const VecD& g = slots_[id].grad;
            Slot &ga = slots_[ia], &gb = slots_[ib];
            // dA += g * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * gb.val[p * n + j];
                    ga.grad[i * k + p] += s;
                }
            // dB += A^T * g
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += ga.val[i * k + p] * g[i * n + j];
                    gb.grad[p * n + j] += s;
                }
        });
    }

    Tensor add(Tensor a, Tensor b) { return binary(a, b, /*sign=*/+1.0, /*mul=*/false, /*div=*/false); }
    Tensor sub(Tensor a, Tensor b) { return binary(a, b, /*sign=*/-1.0, /*mul=*/false, /*div=*/false); }
    Tensor mul(Tensor a, Tensor b) { return binary(a, b, /*sign=*/+1.0, /*mul=*/true, /*div=*/false); }
    Tensor div(Tensor a, Tensor b) { return binary(a, b, /*sign=*/+1.0, /*mul=*/false, /*div=*/true); }

    Tensor concat(Tensor a, Tensor b, int axis) {
        check(a, b);
        const Slot &sa = slots_[a.id], &sb = slots_[b.id];
        std::size_t ia = a.id, ib = b.id;
        if (axis == 1) {
            if (sa.rows != sb.rows) throw ShapeError("concat axis=1 needs equal rows");
            std::size_t m = sa.rows, ca = sa.cols, cb = sb.cols;
            VecD out(m * (ca + cb));
            for (std::size_t i = 0; i < m; ++i) {
                std::copy_n(&sa.val[i * ca], ca, &out[i * (ca + cb)]);
                std::copy_n(&sb.val[i * cb], cb, &out[i * (ca + cb) + ca]);
            }
            return make(m, ca + cb, std::move(out), [this, ia, ib, m, ca, cb](std::size_t id) {
                const VecD& g = slots_[id].grad;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < ca; ++j) slots_[ia].grad[i * ca + j] += g[i * (ca + cb) + j];
                    for (std::size_t j = 0; j < cb; ++j) slots_[ib].grad[i * cb + j] += g[i * (ca + cb) + ca + j];
                }
            });
        } else if (axis == 0) {
            if (sa.cols != sb.cols) throw ShapeError("concat axis=0 needs equal cols");
            std::size_t n = sa.cols, ra = sa.rows, rb = sb.rows;
            VecD out;
            out.reserve((ra + rb) * n);
            out.insert(out.end(), sa.val.begin(), sa.val.end());
            out.insert(out.end(), sb.val.begin(), sb.val.end());
            return make(ra + rb, n, std::move(out), [this, ia, ib, ra, rb, n](std::size_t id) {
                const VecD& g = slots_[id].grad;
                for (std::size_t i = 0; i < ra * n; ++i) slots_[ia].grad[i] += g[i];
                for (std::size_t i = 0; i < rb * n; ++i) slots_[ib].grad[i] += g[ra * n + i];
            });
        }
        throw ShapeError("concat axis must be 0 or 1");
    }

    /// Stack a list of 1 x n rows into an m x n matrix.
    Tensor stack_rows(const std::vector<Tensor>& rows) {
        if (rows.empty()) throw ShapeError("stack_rows: empty list");
        std::size_t n = slots_[rows[0].id].cols;
        std::vector<std::size_t> ids;
        VecD out;
        out.reserve(rows.size() * n);
        for (Tensor t : rows) {
            check1(t);
            const Slot& s = slots_[t.id];
            if (s.rows != 1 || s.cols != n) throw ShapeError("stack_rows: rows must be 1 x n with equal n");
            out.insert(out.end(), s.val.begin(), s.val.end());
            ids.push_back(t.id);
        }
        std::size_t m = rows.size();
        return make(m, n, std::move(out), [this, ids, n](std::size_t id) {
            const VecD& g = slots_[id].grad;
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < n; ++j) slots_[ids[i]].grad[j] += g[i * n + j];
        });
    }

    Tensor mean_rows(Tensor a) {
        check1(a);
        const Slot& sa = slots_[a.id];
        std::size_t m = sa.rows, n = sa.cols;
        VecD out(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[j] += sa.val[i * n + j];
        for (double& x : out) x /= static_cast<double>(m);
        std::size_t ia = a.id;
        return make(1, n, std::move(out), [this, ia, m, n](std::size_t id) {
            const VecD& g = slots_[id].grad;
            double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) slots_[ia].grad[i * n + j] += g[j] * inv;
        });
    }

    Tensor sum(Tensor a) {
        check1(a);
        const Slot& sa = slots_[a.id];
        double s = std::accumulate(sa.val.begin(), sa.val.end(), 0.0);
        std::size_t ia = a.id;
        return make(1, 1, {s}, [this, ia](std::size_t id) {
            double g = slots_[id].grad[0];
            for (double& x : slots_[ia].grad) x += g;
        });
    }

    Tensor scale(Tensor a, double c) { return affine(a, c, 0.0); }

    /// Elementwise k * a + c.
    Tensor affine(Tensor a, double k, double c) {
        check1(a);
        const Slot& sa = slots_[a.id];
        VecD out(sa.val);
        for (double& x : out) x = k * x + c;
        std::size_t ia = a.id;
        return make(sa.rows, sa.cols, std::move(out), [this, ia, k](std::size_t id) {
            const VecD& g = slots_[id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) slots_[ia].grad[i] += k * g[i];
        });
    }

    Tensor tanh_(Tensor a) {
        return unary(a, [](double x) { return std::tanh(x); },
                     [](double x, double y) { (void)x; return 1.0 - y * y; });
    }

    Tensor relu(Tensor a) {
        return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double y) { (void)y; return x > 0.0 ? 1.0 : 0.0; });
    }

    Tensor sigmoid(Tensor a) {
        return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                     [](double x, double y) { (void)x; return y * (1.0 - y); });
    }

    Tensor log_(Tensor a) {
        const Slot& sa = slots_[a.id];
        for (double x : sa.val)
            if (!(x > 0.0)) throw DomainError("log of non-positive value");
        return unary(a, [](double x) { return std::log(x); },
                     [](double x, double y) { (void)y; return 1.0 / x; });
    }

    Tensor cos_(Tensor a) {
        return unary(a, [](double x) { return std::cos(x); },
                     [](double x, double y) { (void)y; return -std::sin(x); });
    }

    /// Clamp with pass-through gradient strictly inside [lo, hi].
    Tensor clamp(Tensor a, double lo, double hi) {
        check1(a);
        const Slot& sa = slots_[a.id];
        VecD out(sa.val);
        for (double& x : out) x = std::min(std::max(x, lo), hi);
        std::size_t ia = a.id;
        VecD in = sa.val;
        return make(sa.rows, sa.cols, std::move(out), [this, ia, lo, hi, in](std::size_t id) {
            const VecD& g = slots_[id].grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (in[i] > lo && in[i] < hi) slots_[ia].grad[i] += g[i];
        });
    }

   private:
    Tensor make(std::size_t rows, std::size_t cols, VecD val, std::function<void(std::size_t)> bw) {
        Slot s;
        s.rows = rows;
        s.cols = cols;
        s.val = std::move(val);
        s.grad.assign(rows * cols, 0.0);
        slots_.push_back(std::move(s));
        nodes_.push_back(std::move(bw));
        return Tensor{this, slots_.size() - 1};
    }

    void check1(Tensor a) const {
        if (a.tape != this) throw UsageError("tensor belongs to a different tape");
    }
    void check(Tensor a, Tensor b) const {
        check1(a);
        check1(b);
    }

    template <typename F, typename DF>
    Tensor unary(Tensor a, F f, DF df) {
        check1(a);
        const Slot& sa = slots_[a.id];
        VecD out(sa.val.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(sa.val[i]);
        std::size_t ia = a.id;
        return make(sa.rows, sa.cols, std::move(out), [this, ia, df, id_self = slots_.size()](std::size_t id) {
            (void)id_self;
            const Slot& so = slots_[id];
            Slot& si = slots_[ia];
            for (std::size_t i = 0; i < so.grad.size(); ++i)
                si.grad[i] += so.grad[i] * df(si.val[i], so.val[i]);
        });
    }

    // add/sub/mul/div with broadcast of the second operand over rows (1 x n)
    // or as a scalar (1 x 1).
    Tensor binary(Tensor a, Tensor b, double sign, bool is_mul, bool is_div) {
        check(a, b);
        const Slot &sa = slots_[a.id], &sb = slots_[b.id];
        std::size_t m = sa.rows, n = sa.cols;
        enum class Bc { None, Row, Scalar } bc;
        if (sb.rows == m && sb.cols == n)
            bc = Bc::None;
        else if (sb.rows == 1 && sb.cols == n)
            bc = Bc::Row;
        else if (sb.rows == 1 && sb.cols == 1)
            bc = Bc::Scalar;
        else
            throw ShapeError("elementwise op: shapes do not conform");

        auto bidx = [bc, n](std::size_t i, std::size_t j) -> std::size_t {
            switch (bc) {
                case Bc::None: return i * n + j;
                case Bc::Row: return j;
                default: return 0;
            }
        };

        VecD out(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double av = sa.val[i * n + j], bv = sb.val[bidx(i, j)];
                if (is_mul)
                    out[i * n + j] = av * bv;
                else if (is_div)
                    out[i * n + j] = av / bv;
                else
                    out[i * n + j] = av + sign * bv;
            }
        std::size_t ia = a.id, ib = b.id;
        return make(m, n, std::move(out), [this, ia, ib, m, n, sign, is_mul, is_div, bidx](std::size_t id) {
            const VecD& g = slots_[id].grad;
            Slot &ga = slots_[ia], &gb = slots_[ib];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double gv = g[i * n + j];
                    std::size_t jb = bidx(i, j);
                    if (is_mul) {
                        ga.grad[i * n + j] += gv * gb.val[jb];
                        gb.grad[jb] += gv * ga.val[i * n + j];
                    } else if (is_div) {
                        double bv = gb.val[jb];
                        ga.grad[i * n + j] += gv / bv;
                        gb.grad[jb] += -gv * ga.val[i * n + j] / (bv * bv);
                    } else {
                        ga.grad[i * n + j] += gv;
                        gb.grad[jb] += sign * gv;
                    }
                }
        });
    }

    std::vector<Slot> slots_;
    std::vector<std::function<void(std::size_t)>> nodes_;
};

inline std::size_t Tensor::rows() const { return tape->slot(id).rows; }
inline std::size_t Tensor::cols() const { return tape->slot(id).cols; }
inline const VecD& Tensor::value() const { return tape->slot(id).val; }
inline const VecD& Tensor::grad() const { return tape->slot(id).grad; }
inline double Tensor::scalar() const {
    if (rows() != 1 || cols() != 1) throw UsageError("scalar() on non-scalar tensor");
    return value()[0];
}

// Free-function spellings used throughout the model code.
inline Tensor matmul(Tensor a, Tensor b) { return a.tape->matmul(a, b); }
inline Tensor add(Tensor a, Tensor b) { return a.tape->add(a, b); }
inline Tensor sub(Tensor a, Tensor b) { return a.tape->sub(a, b); }
inline Tensor mul(Tensor a, Tensor b) { return a.tape->mul(a, b); }
inline Tensor div(Tensor a, Tensor b) { return a.tape->div(a, b); }
inline Tensor concat(Tensor a, Tensor b, int axis) { return a.tape->concat(a, b, axis); }
inline Tensor mean_rows(Tensor a) { return a.tape->mean_rows(a); }
inline Tensor sum(Tensor a) { return a.tape->sum(a); }
inline Tensor scale(Tensor a, double c) { return a.tape->scale(a, c); }
inline Tensor affine(Tensor a, double k, double c) { return a.tape->affine(a, k, c); }
inline Tensor tanh(Tensor a) { return a.tape->tanh_(a); }
inline Tensor relu(Tensor a) { return a.tape->relu(a); }
inline Tensor sigmoid(Tensor a) { return a.tape->sigmoid(a); }
inline Tensor log(Tensor a) { return a.tape->log_(a); }
inline Tensor cos(Tensor a) { return a.tape->cos_(a); }
inline Tensor clamp(Tensor a, double lo, double hi) { return a.tape->clamp(a, lo, hi); }

/// x @ W + b for a 1 x in (or m x in) input.
inline Tensor linear(Tape& tape, Tensor x, Param& w, Param& b) {
    return add(matmul(x, tape.param(w)), tape.param(b));
}

}  // namespace gsnop
