#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/ops.hpp"
#include "rrnn/restriction.hpp"
#include "rrnn/tensor.hpp"

namespace rrnn {

enum class CellFamily { rnn, gru, lstm };

// Gate index conventions: LSTM (i, f, g, o), GRU (r, z, n), RNN (h).
inline constexpr std::string_view gate_order_tag = "lstm:ifgo;gru:rzn;rnn:h";

// Input index 0 is the data input x_t, index 1 the previous hidden state.
inline constexpr std::size_t input_x = 0;
inline constexpr std::size_t input_h = 1;
inline constexpr std::size_t cell_inputs = 2;

inline std::size_t gate_count(CellFamily f) {
    switch (f) {
        case CellFamily::rnn: return 1;
        case CellFamily::gru: return 3;
        case CellFamily::lstm: return 4;
    }
    return 0;
}

inline std::string_view to_string(CellFamily f) {
    switch (f) {
        case CellFamily::rnn: return "rnn";
        case CellFamily::gru: return "gru";
        case CellFamily::lstm: return "lstm";
    }
    return "?";
}

inline CellFamily parse_family(std::string_view s) {
    if (s == "rnn" || s == "RNN") return CellFamily::rnn;
    if (s == "gru" || s == "GRU") return CellFamily::gru;
    if (s == "lstm" || s == "LSTM") return CellFamily::lstm;
    throw validation_error("unknown cell family '" + std::string(s) + "' (expected rnn, gru or lstm)");
}

struct CellSpec {
    CellFamily family = CellFamily::lstm;
    std::size_t input_size = 0;   // k
    std::size_t hidden_size = 0;  // d
    RateMatrix rates;             // 2 x gate_count(family)

    static CellSpec uniform(CellFamily f, std::size_t input, std::size_t hidden, double rate) {
        return {f, input, hidden, RateMatrix::uniform(cell_inputs, gate_count(f), rate)};
    }

    void validate() const {
        if (rates.inputs() != cell_inputs || rates.gates() != gate_count(family)) {
            throw config_error(std::string(to_string(family)) + " cell needs a 2x" + std::to_string(gate_count(family)) +
                               " rate matrix, got " + std::to_string(rates.inputs()) + "x" +
                               std::to_string(rates.gates()));
        }
        if (input_size == 0 || hidden_size == 0) throw config_error("cell sizes must be positive");
    }

    RestrictionPlan plan() const {
        validate();
        return plan_restriction(cell_inputs, gate_count(family), hidden_size, {input_size, hidden_size}, rates);
    }
};

struct CellState {
    ad::Var h;                 // d x batch
    std::optional<ad::Var> c;  // d x batch, LSTM only
};

// Differentiable views of one layer's pool, gathered once per forward window.
struct CellWeights {
    std::size_t gates = 0;
    std::vector<ad::Var> weight;  // [input * gates + gate]
    std::vector<ad::Var> bias;

    const ad::Var& w(std::size_t input, std::size_t gate) const { return weight[input * gates + gate]; }
    const ad::Var& b(std::size_t input, std::size_t gate) const { return bias[input * gates + gate]; }
};

inline CellWeights bind_views(const ad::Var& pool_weight, const ad::Var& pool_bias, const RestrictionPlan& plan) {
    CellWeights cw;
    cw.gates = plan.gates;
    for (std::size_t i = 0; i < plan.inputs; ++i) {
        for (std::size_t j = 0; j < plan.gates; ++j) {
            auto [w, b] = view(pool_weight, pool_bias, plan, i, j);
            cw.weight.push_back(w);
            cw.bias.push_back(b);
        }
    }
    return cw;
}

namespace detail {

inline void check_step_shapes(const CellSpec& spec, const ad::Var& x, const CellState& state) {
    const Tensor& xv = x.value();
    const Tensor& hv = state.h.value();
    if (xv.rank() != 2 || xv.rows() != spec.input_size) {
        throw shape_error("cell input " + to_string(xv.shape()) + " does not match input size " +
                          std::to_string(spec.input_size));
    }
    if (hv.rank() != 2 || hv.rows() != spec.hidden_size || hv.cols() != xv.cols()) {
        throw shape_error("hidden state " + to_string(hv.shape()) + " does not match (" +
                          std::to_string(spec.hidden_size) + "x" + std::to_string(xv.cols()) + ")");
    }
}

// W_xj x + b_xj + W_hj h + b_hj
inline ad::Var gate_preactivation(const CellWeights& cw, std::size_t gate, const ad::Var& x, const ad::Var& h) {
    auto from_x = ad::add_bias(ad::matmul(cw.w(input_x, gate), x), cw.b(input_x, gate));
    auto from_h = ad::add_bias(ad::matmul(cw.w(input_h, gate), h), cw.b(input_h, gate));
    return ad::add(from_x, from_h);
}

}  // namespace detail

inline CellState rnn_step(const CellSpec& spec, const CellWeights& cw, const ad::Var& x, const CellState& state) {
    detail::check_step_shapes(spec, x, state);
    return {ad::tanh(detail::gate_preactivation(cw, 0, x, state.h)), std::nullopt};
}

inline CellState lstm_step(const CellSpec& spec, const CellWeights& cw, const ad::Var& x, const CellState& state) {
    if (!state.c) throw state_error("lstm_step needs a cell state c");
    detail::check_step_shapes(spec, x, state);
    auto i = ad::sigmoid(detail::gate_preactivation(cw, 0, x, state.h));
    auto f = ad::sigmoid(detail::gate_preactivation(cw, 1, x, state.h));
    auto g = ad::tanh(detail::gate_preactivation(cw, 2, x, state.h));
    auto o = ad::sigmoid(detail::gate_preactivation(cw, 3, x, state.h));
    auto c = ad::add(ad::mul(f, *state.c), ad::mul(i, g));
    auto h = ad::mul(o, ad::tanh(c));
    return {h, c};
}

// n_t keeps the hidden-side bias inside the reset product: tanh(Wx x + b_in + r * (Wh h + b_hn)).
inline CellState gru_step(const CellSpec& spec, const CellWeights& cw, const ad::Var& x, const CellState& state) {
    detail::check_step_shapes(spec, x, state);
    const auto& h = state.h;
    auto r = ad::sigmoid(detail::gate_preactivation(cw, 0, x, h));
    auto z = ad::sigmoid(detail::gate_preactivation(cw, 1, x, h));
    auto from_x = ad::add_bias(ad::matmul(cw.w(input_x, 2), x), cw.b(input_x, 2));
    auto from_h = ad::add_bias(ad::matmul(cw.w(input_h, 2), h), cw.b(input_h, 2));
    auto n = ad::tanh(ad::add(from_x, ad::mul(r, from_h)));
    auto next = ad::add(ad::mul(ad::one_minus(z), n), ad::mul(z, h));
    return {next, std::nullopt};
}

inline CellState step(const CellSpec& spec, const CellWeights& cw, const ad::Var& x, const CellState& state) {
    switch (spec.family) {
        case CellFamily::rnn: return rnn_step(spec, cw, x, state);
        case CellFamily::gru: return gru_step(spec, cw, x, state);
        case CellFamily::lstm: return lstm_step(spec, cw, x, state);
    }
    throw config_error("unknown cell family");
}

// Convenience form that gathers the views from the pool itself.
inline CellState step(const CellSpec& spec, const ad::Var& pool_weight, const ad::Var& pool_bias,
                      const RestrictionPlan& plan, const ad::Var& x, const CellState& state) {
    return step(spec, bind_views(pool_weight, pool_bias, plan), x, state);
}

// One recurrent layer: its configuration, slicing plan and parameter pool.
struct Layer {
    CellSpec spec;
    RestrictionPlan plan;
    ParameterPool pool;

    static Layer create(CellSpec spec, const InitSpec& init, std::uint64_t seed) {
        auto plan = spec.plan();
        auto pool = build_pool(plan, init, seed);
        return {std::move(spec), std::move(plan), std::move(pool)};
    }
};

// Detached recurrent state carried between BPTT windows.
struct LayerState {
    Tensor h;
    std::optional<Tensor> c;
};

inline std::vector<LayerState> zero_states(const std::vector<Layer>& layers, std::size_t batch) {
    std::vector<LayerState> s;
    for (const auto& l : layers) {
        LayerState st{Tensor::matrix(l.spec.hidden_size, batch), std::nullopt};
        if (l.spec.family == CellFamily::lstm) st.c = Tensor::matrix(l.spec.hidden_size, batch);
        s.push_back(std::move(st));
    }
    return s;
}

inline void check_layer_chain(const std::vector<Layer>& layers, std::size_t input_size) {
    std::size_t expected = input_size;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].spec.input_size != expected) {
            throw config_error("layer " + std::to_string(l) + " expects input size " +
                               std::to_string(layers[l].spec.input_size) + " but receives " + std::to_string(expected));
        }
        expected = layers[l].spec.hidden_size;
    }
}

// Inverted dropout: keep with probability 1 - p, scale kept entries by 1 / (1 - p).
struct Dropout {
    double p = 0.0;
    bool train = false;
    std::mt19937_64* rng = nullptr;

    bool active() const { return train && p > 0.0; }

    ad::Var operator()(const ad::Var& x) const {
        if (!active()) return x;
        if (!rng) throw state_error("training-mode dropout needs a random engine");
        Tensor mask(x.shape(), 0.0);
        std::bernoulli_distribution keep(1.0 - p);
        const double scale = 1.0 / (1.0 - p);
        for (auto& m : mask.values()) m = keep(*rng) ? scale : 0.0;
        return ad::apply_mask(x, std::move(mask));
    }
};

struct StackOutput {
    std::vector<ad::Var> features;        // per timestep, last layer hidden (hidden x batch)
    std::vector<CellState> final_states;  // per layer, still on the tape
};

// Runs the layer stack over a sequence. Dropout touches each layer's input (the
// first one only when `drop_first_input`) and the returned features; never the
// recurrent connections.
inline StackOutput stack_forward(const std::vector<Layer>& layers, const std::vector<CellWeights>& weights,
                                 const std::vector<ad::Var>& inputs, const std::vector<CellState>& states,
                                 const Dropout& dropout, bool drop_first_input = true) {
    if (layers.empty()) throw config_error("stack_forward needs at least one layer");
    if (weights.size() != layers.size() || states.size() != layers.size()) {
        throw config_error("stack_forward: layers, weights and states disagree in count");
    }
    if (inputs.empty()) throw shape_error("stack_forward: empty input sequence");
    check_layer_chain(layers, layers.front().spec.input_size);

    std::vector<ad::Var> seq = inputs;
    std::vector<CellState> finals;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        CellState st = states[l];
        for (auto& x : seq) {
            const ad::Var in = (l > 0 || drop_first_input) ? dropout(x) : x;
            st = step(layers[l].spec, weights[l], in, st);
            x = st.h;
        }
        finals.push_back(st);
    }
    for (auto& f : seq) f = dropout(f);
    return {std::move(seq), std::move(finals)};
}

// Embedding plus softmax projection. When tied, the decoder applies the embedding
// matrix itself; no separate decoder weight exists.
struct LMHead {
    Parameter embedding;                      // vocab x emb
    Parameter decoder_bias;                   // vocab
    std::optional<Parameter> decoder_weight;  // vocab x hidden, untied only

    bool tied() const { return !decoder_weight.has_value(); }
    std::size_t vocab() const { return embedding.value.rows(); }
    std::size_t emb() const { return embedding.value.cols(); }

    std::size_t trainable_count() const {
        return embedding.value.size() + decoder_bias.value.size() + (decoder_weight ? decoder_weight->value.size() : 0);
    }

    // Embedding ~ uniform(-0.1, 0.1), decoder weight likewise, decoder bias zero.
    static LMHead create(std::size_t vocab, std::size_t emb, std::size_t hidden, bool tie, std::uint64_t seed) {
        if (tie && emb != hidden) {
            throw config_error("tied embedding needs emb == last hidden size, got emb " + std::to_string(emb) +
                               " and hidden " + std::to_string(hidden));
        }
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(-0.1, 0.1);
        Tensor e = Tensor::matrix(vocab, emb);
        for (auto& v : e.values()) v = dist(rng);
        LMHead head{Parameter("head.embedding", std::move(e)), Parameter("head.decoder_bias", Tensor(Shape{vocab}, 0.0)),
                    std::nullopt};
        if (!tie) {
            Tensor d = Tensor::matrix(vocab, hidden);
            for (auto& v : d.values()) v = dist(rng);
            head.decoder_weight = Parameter("head.decoder_weight", std::move(d));
        }
        return head;
    }
};

struct BoundHead {
    ad::Var embedding;
    ad::Var decoder_bias;
    std::optional<ad::Var> decoder_weight;
};

inline BoundHead bind(LMHead& head, ad::Tape& tape) {
    BoundHead b{head.embedding.bind(tape), head.decoder_bias.bind(tape), std::nullopt};
    if (head.decoder_weight) b.decoder_weight = head.decoder_weight->bind(tape);
    return b;
}

// logits (vocab x N) = decoder_weight * features + bias; decoder_weight is the
// embedding matrix when tied.
inline ad::Var lm_head_forward(const BoundHead& head, const ad::Var& features) {
    const ad::Var& proj = head.decoder_weight ? *head.decoder_weight : head.embedding;
    if (features.value().rows() != proj.value().cols()) {
        throw config_error("feature size " + std::to_string(features.value().rows()) +
                           " does not match decoder input size " + std::to_string(proj.value().cols()));
    }
    return ad::add_bias(ad::matmul(proj, features), head.decoder_bias);
}

}  // namespace rrnn
