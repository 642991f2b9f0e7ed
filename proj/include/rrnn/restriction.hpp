#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/ops.hpp"
#include "rrnn/tensor.hpp"

namespace rrnn {

// m x n matrix of sharing rates; entry (i, j) is the rate for input i at gate j.
class RateMatrix {
public:
    RateMatrix() = default;
    RateMatrix(std::size_t inputs, std::size_t gates, std::vector<double> values)
        : inputs_(inputs), gates_(gates), values_(std::move(values)) {
        if (values_.size() != inputs_ * gates_) {
            throw validation_error("rate matrix needs " + std::to_string(inputs_ * gates_) + " entries, got " +
                                   std::to_string(values_.size()));
        }
    }

    static RateMatrix uniform(std::size_t inputs, std::size_t gates, double rate) {
        return RateMatrix(inputs, gates, std::vector<double>(inputs * gates, rate));
    }

    std::size_t inputs() const noexcept { return inputs_; }
    std::size_t gates() const noexcept { return gates_; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * gates_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values_[i * gates_ + j]; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool is_uniform() const {
        return std::all_of(values_.begin(), values_.end(), [&](double r) { return r == values_.front(); });
    }

    friend bool operator==(const RateMatrix&, const RateMatrix&) = default;

private:
    std::size_t inputs_ = 0;
    std::size_t gates_ = 0;
    std::vector<double> values_;
};

// Slicing layout of one restricted layer.
//
// Every (input i, gate j) view takes the shared prefix rows [0, s_ij) of the pool
// followed by its own private block [offset_ij, offset_ij + q_ij). Private blocks are
// laid out after the shared region in input-major order: (0,0), (0,1), ..., (1,0), ...
struct RestrictionPlan {
    std::size_t inputs = 0;   // m
    std::size_t gates = 0;    // n
    std::size_t hidden = 0;   // d, rows per view
    std::vector<std::size_t> input_sizes;  // k_i
    RateMatrix rates;
    std::vector<std::size_t> shared;       // s_ij, row-major m x n
    std::vector<std::size_t> private_rows; // q_ij
    std::vector<std::size_t> offsets;      // start row of each private block
    std::size_t shared_rows = 0;  // s_r
    std::size_t pool_cols = 0;    // k_r
    std::size_t pool_rows = 0;    // d_r

    std::size_t index(std::size_t i, std::size_t j) const {
        if (i >= inputs || j >= gates) {
            throw validation_error("view (" + std::to_string(i) + ", " + std::to_string(j) + ") outside plan of " +
                                   std::to_string(inputs) + " inputs x " + std::to_string(gates) + " gates");
        }
        return i * gates + j;
    }
    std::size_t s(std::size_t i, std::size_t j) const { return shared[index(i, j)]; }
    std::size_t q(std::size_t i, std::size_t j) const { return private_rows[index(i, j)]; }
    std::size_t offset(std::size_t i, std::size_t j) const { return offsets[index(i, j)]; }
};

// Round-half-away-from-zero of rate * d.
inline std::size_t shared_row_count(double rate, std::size_t d) {
    return static_cast<std::size_t>(std::round(rate * static_cast<double>(d)));
}

inline RestrictionPlan plan_restriction(std::size_t inputs, std::size_t gates, std::size_t hidden,
                                        std::vector<std::size_t> input_sizes, RateMatrix rates) {
    if (inputs == 0 || gates == 0) throw validation_error("a restriction plan needs at least one input and one gate");
    if (hidden == 0) throw validation_error("hidden size d must be at least 1");
    if (input_sizes.size() != inputs) {
        throw validation_error("expected " + std::to_string(inputs) + " input sizes, got " +
                               std::to_string(input_sizes.size()));
    }
    for (auto k : input_sizes)
        if (k == 0) throw validation_error("input channel sizes must be at least 1");
    if (rates.inputs() != inputs || rates.gates() != gates) {
        throw validation_error("rate matrix is " + std::to_string(rates.inputs()) + "x" + std::to_string(rates.gates()) +
                               ", plan is " + std::to_string(inputs) + "x" + std::to_string(gates));
    }
    for (double r : rates.values()) {
        if (!(r >= 0.0 && r <= 1.0)) throw validation_error("sharing rate " + std::to_string(r) + " outside [0, 1]");
    }

    RestrictionPlan plan;
    plan.inputs = inputs;
    plan.gates = gates;
    plan.hidden = hidden;
    plan.input_sizes = std::move(input_sizes);
    plan.rates = std::move(rates);
    const std::size_t pairs = inputs * gates;
    plan.shared.resize(pairs);
    plan.private_rows.resize(pairs);
    plan.offsets.resize(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
        plan.shared[p] = shared_row_count(plan.rates.values()[p], hidden);
        plan.private_rows[p] = hidden - plan.shared[p];
    }
    plan.shared_rows = *std::max_element(plan.shared.begin(), plan.shared.end());
    plan.pool_cols = *std::max_element(plan.input_sizes.begin(), plan.input_sizes.end());
    std::size_t next = plan.shared_rows;
    for (std::size_t p = 0; p < pairs; ++p) {
        plan.offsets[p] = next;
        next += plan.private_rows[p];
    }
    plan.pool_rows = next;
    return plan;
}

struct RestrictedView {
    std::size_t input = 0;
    std::size_t gate = 0;
    std::vector<std::size_t> rows;  // length d, indices into the pool
    std::size_t cols = 0;           // k_i
};

inline RestrictedView restricted_view(const RestrictionPlan& plan, std::size_t i, std::size_t j) {
    const std::size_t p = plan.index(i, j);
    RestrictedView v{i, j, {}, plan.input_sizes[i]};
    v.rows.reserve(plan.hidden);
    for (std::size_t r = 0; r < plan.shared[p]; ++r) v.rows.push_back(r);
    for (std::size_t r = 0; r < plan.private_rows[p]; ++r) v.rows.push_back(plan.offsets[p] + r);
    return v;
}

// Which pool scalars are touched by at least one view.
struct TrainableMask {
    std::vector<std::uint8_t> weight;  // pool_rows x pool_cols, row-major
    std::vector<std::uint8_t> bias;    // pool_rows
};

inline TrainableMask trainable_mask(const RestrictionPlan& plan) {
    TrainableMask m;
    m.weight.assign(plan.pool_rows * plan.pool_cols, 0);
    m.bias.assign(plan.pool_rows, 0);
    for (std::size_t i = 0; i < plan.inputs; ++i) {
        for (std::size_t j = 0; j < plan.gates; ++j) {
            const auto v = restricted_view(plan, i, j);
            for (auto r : v.rows) {
                m.bias[r] = 1;
                std::fill_n(m.weight.begin() + static_cast<std::ptrdiff_t>(r * plan.pool_cols), v.cols, std::uint8_t{1});
            }
        }
    }
    return m;
}

// A trainable tensor plus its gradient accumulator. An empty mask means every entry
// trains; otherwise entries with mask 0 are placeholders that no update may touch.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<std::uint8_t> mask;

    Parameter() = default;
    Parameter(std::string n, Tensor v, std::vector<std::uint8_t> m = {})
        : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0), mask(std::move(m)) {}

    bool trains(std::size_t i) const { return mask.empty() || mask[i] != 0; }

    std::size_t trainable_count() const {
        if (mask.empty()) return value.size();
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }

    void zero_grad() { grad.fill(0.0); }

    ad::Var bind(ad::Tape& tape) { return tape.parameter(value, grad); }
};

struct ParameterPool {
    Parameter weight;  // (d_r, k_r)
    Parameter bias;    // (d_r)
};

struct InitSpec {
    enum class Kind { zero, uniform };
    Kind kind = Kind::uniform;
    // Half-width of the uniform range; <= 0 selects 1/sqrt(d).
    double bound = 0.0;

    static InitSpec zeros() { return {Kind::zero, 0.0}; }
    static InitSpec uniform(double b = 0.0) { return {Kind::uniform, b}; }
};

// Draws every pool entry once from uniform(-a, a), W row-major first, then b.
inline ParameterPool build_pool(const RestrictionPlan& plan, const InitSpec& init, std::uint64_t seed) {
    auto mask = trainable_mask(plan);
    Tensor w = Tensor::matrix(plan.pool_rows, plan.pool_cols);
    Tensor b(Shape{plan.pool_rows}, 0.0);
    if (init.kind == InitSpec::Kind::uniform) {
        const double a = init.bound > 0.0 ? init.bound : 1.0 / std::sqrt(static_cast<double>(plan.hidden));
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(-a, a);
        for (auto& v : w.values()) v = dist(rng);
        for (auto& v : b.values()) v = dist(rng);
    }
    return ParameterPool{Parameter("pool.weight", std::move(w), std::move(mask.weight)),
                         Parameter("pool.bias", std::move(b), std::move(mask.bias))};
}

// Materialized copy of a view, for inspection and reference checks.
struct ViewValues {
    Tensor weight;  // d x k_i
    Tensor bias;    // d
};

inline ViewValues view(const ParameterPool& pool, const RestrictionPlan& plan, std::size_t i, std::size_t j) {
    const auto v = restricted_view(plan, i, j);
    ViewValues out{Tensor::matrix(plan.hidden, v.cols), Tensor(Shape{plan.hidden}, 0.0)};
    for (std::size_t r = 0; r < v.rows.size(); ++r) {
        for (std::size_t c = 0; c < v.cols; ++c) out.weight(r, c) = pool.weight.value(v.rows[r], c);
        out.bias[r] = pool.bias.value[v.rows[r]];
    }
    return out;
}

// Differentiable view: a gather of pool rows whose gradient scatter-adds into the pool.
inline std::pair<ad::Var, ad::Var> view(const ad::Var& weight, const ad::Var& bias, const RestrictionPlan& plan,
                                        std::size_t i, std::size_t j) {
    auto v = restricted_view(plan, i, j);
    auto rows = v.rows;
    return {ad::gather_rows(weight, std::move(v.rows), v.cols), ad::gather(bias, std::move(rows))};
}

struct ParamCounts {
    std::size_t unrestricted = 0;  // P
    std::size_t shared = 0;        // S_r
    std::size_t restricted = 0;    // P_r
    double compression = 1.0;      // C = P_r / P
};

// Exact count: enumerates the distinct pool scalars referenced by any view.
inline ParamCounts count_parameters(const RestrictionPlan& plan) {
    ParamCounts c;
    for (std::size_t i = 0; i < plan.inputs; ++i) c.unrestricted += plan.gates * plan.hidden * (plan.input_sizes[i] + 1);
    const auto mask = trainable_mask(plan);
    c.restricted = static_cast<std::size_t>(std::count(mask.weight.begin(), mask.weight.end(), std::uint8_t{1}) +
                                            std::count(mask.bias.begin(), mask.bias.end(), std::uint8_t{1}));
    c.shared = c.unrestricted - c.restricted;
    c.compression = static_cast<double>(c.restricted) / static_cast<double>(c.unrestricted);
    return c;
}

inline double compression_rate(const RestrictionPlan& plan) { return count_parameters(plan).compression; }

// (mn - 1) * min(s) * (min(k) + 1). Matches the enumerated count when rates and
// input sizes are uniform.
inline std::size_t closed_form_shared(const RestrictionPlan& plan) {
    const std::size_t min_s = *std::min_element(plan.shared.begin(), plan.shared.end());
    const std::size_t min_k = *std::min_element(plan.input_sizes.begin(), plan.input_sizes.end());
    return (plan.inputs * plan.gates - 1) * min_s * (min_k + 1);
}

// Sum of per-layer counts.
inline ParamCounts total_counts(const std::vector<ParamCounts>& layers) {
    ParamCounts t;
    for (const auto& l : layers) {
        t.unrestricted += l.unrestricted;
        t.shared += l.shared;
        t.restricted += l.restricted;
    }
    t.compression = t.unrestricted ? static_cast<double>(t.restricted) / static_cast<double>(t.unrestricted) : 1.0;
    return t;
}

}  // namespace rrnn
