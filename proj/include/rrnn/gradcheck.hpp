#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/cells.hpp"
#include "rrnn/ops.hpp"
#include "rrnn/restriction.hpp"

namespace rrnn {

using StepFn = std::function<CellState(const CellSpec&, const CellWeights&, const ad::Var&, const CellState&)>;

struct GradcheckOptions {
    CellFamily family = CellFamily::lstm;
    std::size_t hidden = 4;
    std::size_t input = 4;
    double rate = 0.5;
    std::uint64_t seed = 1;
    std::size_t steps = 3;
    std::size_t batch = 2;
    double h = 1e-5;
    double tolerance = 1e-4;
    // Relative errors divide by max(|analytic|, |numeric|, floor).
    double floor = 1e-6;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    bool worst_in_bias = false;
    std::size_t worst_row = 0;
    std::size_t worst_col = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    // max |pool gradient - sum of per-view gradients scattered into the pool|
    double path_sum_error = 0.0;
    std::size_t entries_checked = 0;
    bool passed = false;
};

namespace detail {

struct UnrolledProblem {
    CellSpec spec;
    RestrictionPlan plan;
    ParameterPool pool;
    std::vector<Tensor> xs;       // input x batch per step
    std::vector<Tensor> weights;  // hidden x batch per step, loss = sum_t <w_t, h_t>
    Tensor h0;
    Tensor c0;

    ad::Var loss(ad::Tape& tape, const CellWeights& cw, const StepFn& step) const {
        CellState st{tape.constant(h0), std::nullopt};
        if (spec.family == CellFamily::lstm) st.c = tape.constant(c0);
        ad::Var total;
        for (std::size_t t = 0; t < xs.size(); ++t) {
            st = step(spec, cw, tape.constant(xs[t]), st);
            auto term = ad::sum(ad::mul(st.h, tape.constant(weights[t])));
            total = t == 0 ? term : ad::add(total, term);
        }
        return total;
    }
};

inline UnrolledProblem make_problem(const GradcheckOptions& o) {
    auto spec = CellSpec::uniform(o.family, o.input, o.hidden, o.rate);
    auto plan = spec.plan();
    auto pool = build_pool(plan, InitSpec::uniform(), o.seed);
    std::mt19937_64 rng(o.seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto draw = [&](std::size_t r, std::size_t c) {
        Tensor t = Tensor::matrix(r, c);
        for (auto& v : t.values()) v = u(rng);
        return t;
    };
    UnrolledProblem p{spec, plan, std::move(pool), {}, {}, draw(o.hidden, o.batch), draw(o.hidden, o.batch)};
    for (std::size_t t = 0; t < o.steps; ++t) {
        p.xs.push_back(draw(o.input, o.batch));
        p.weights.push_back(draw(o.hidden, o.batch));
    }
    return p;
}

}  // namespace detail

inline StepFn default_step() {
    return [](const CellSpec& s, const CellWeights& w, const ad::Var& x, const CellState& st) { return step(s, w, x, st); };
}

// Compares reverse-mode pool gradients of a short unrolled loss with central
// differences over every pool entry that some view references. Also rebuilds the
// loss over independent per-view leaves and checks that scattering their gradients
// back onto the pool reproduces the pool gradient.
inline GradcheckReport gradcheck(const GradcheckOptions& o, const StepFn& step = default_step()) {
    auto p = detail::make_problem(o);
    GradcheckReport rep;

    auto evaluate = [&]() {
        ad::Tape tape;
        auto cw = bind_views(tape.constant(p.pool.weight.value), tape.constant(p.pool.bias.value), p.plan);
        return p.loss(tape, cw, step).value().item();
    };

    p.pool.weight.zero_grad();
    p.pool.bias.zero_grad();
    {
        ad::Tape tape;
        auto cw = bind_views(p.pool.weight.bind(tape), p.pool.bias.bind(tape), p.plan);
        tape.backward(p.loss(tape, cw, step));
    }

    auto check = [&](Parameter& param, bool is_bias) {
        for (std::size_t i = 0; i < param.value.size(); ++i) {
            if (!param.trains(i)) continue;
            const double saved = param.value[i];
            param.value[i] = saved + o.h;
            const double up = evaluate();
            param.value[i] = saved - o.h;
            const double down = evaluate();
            param.value[i] = saved;
            const double numeric = (up - down) / (2.0 * o.h);
            const double analytic = param.grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), o.floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++rep.entries_checked;
            if (rep.entries_checked == 1 || rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_in_bias = is_bias;
                rep.worst_row = is_bias ? i : i / param.value.cols();
                rep.worst_col = is_bias ? 0 : i % param.value.cols();
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    };
    check(p.pool.weight, false);
    check(p.pool.bias, true);

    // Independent leaves per view, gradients summed back onto the pool layout.
    {
        ad::Tape tape;
        CellWeights cw;
        cw.gates = p.plan.gates;
        for (std::size_t i = 0; i < p.plan.inputs; ++i) {
            for (std::size_t j = 0; j < p.plan.gates; ++j) {
                auto v = view(p.pool, p.plan, i, j);
                cw.weight.push_back(tape.leaf(std::move(v.weight)));
                cw.bias.push_back(tape.leaf(std::move(v.bias)));
            }
        }
        tape.backward(p.loss(tape, cw, step));
        Tensor w_sum(p.pool.weight.value.shape(), 0.0);
        Tensor b_sum(p.pool.bias.value.shape(), 0.0);
        for (std::size_t i = 0; i < p.plan.inputs; ++i) {
            for (std::size_t j = 0; j < p.plan.gates; ++j) {
                const auto rv = restricted_view(p.plan, i, j);
                const Tensor gw = tape.grad(cw.w(i, j));
                const Tensor gb = tape.grad(cw.b(i, j));
                for (std::size_t r = 0; r < rv.rows.size(); ++r) {
                    for (std::size_t c = 0; c < rv.cols; ++c) w_sum(rv.rows[r], c) += gw(r, c);
                    b_sum[rv.rows[r]] += gb[r];
                }
            }
        }
        for (std::size_t k = 0; k < w_sum.size(); ++k)
            rep.path_sum_error = std::max(rep.path_sum_error, std::abs(w_sum[k] - p.pool.weight.grad[k]));
        for (std::size_t k = 0; k < b_sum.size(); ++k)
            rep.path_sum_error = std::max(rep.path_sum_error, std::abs(b_sum[k] - p.pool.bias.grad[k]));
    }

    rep.passed = rep.max_rel_error < o.tolerance && rep.path_sum_error < 1e-10;
    return rep;
}

}  // namespace rrnn
