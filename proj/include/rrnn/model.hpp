#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/cells.hpp"
#include "rrnn/data.hpp"
#include "rrnn/ops.hpp"
#include "rrnn/restriction.hpp"

namespace rrnn {

struct ModelConfig {
    CellFamily family = CellFamily::lstm;
    std::size_t layers = 3;
    std::size_t hidden = 200;
    std::size_t emb = 200;
    std::size_t vocab = 0;
    RateMatrix rates = RateMatrix::uniform(cell_inputs, gate_count(CellFamily::lstm), 0.5);
    bool tied = true;
    double dropout = 0.2;
    bool dropout_embedding = true;
};

// Parameter accounting for a full language model without allocating it.
struct StackCounts {
    std::vector<ParamCounts> layers;
    ParamCounts recurrent;
    std::size_t output_bias = 0;  // decoder bias entries (= vocab)
    std::size_t embedding = 0;    // vocab x emb
    std::size_t decoder_weight = 0;  // vocab x hidden when untied, else 0

    std::size_t head() const { return embedding + output_bias + decoder_weight; }
    std::size_t recurrent_with_output_bias() const { return recurrent.restricted + output_bias; }
    std::size_t total() const { return recurrent.restricted + head(); }
};

inline StackCounts count_stack(CellFamily family, std::size_t layers, std::size_t hidden, std::size_t emb,
                               std::size_t vocab, const RateMatrix& rates, bool tied) {
    if (tied && emb != hidden) throw config_error("tied embedding needs emb == hidden");
    StackCounts c;
    for (std::size_t l = 0; l < layers; ++l) {
        CellSpec spec{family, l == 0 ? emb : hidden, hidden, rates};
        c.layers.push_back(count_parameters(spec.plan()));
    }
    c.recurrent = total_counts(c.layers);
    c.output_bias = vocab;
    c.embedding = vocab * emb;
    c.decoder_weight = tied ? 0 : vocab * hidden;
    return c;
}

// Embedding -> stacked restricted cells -> softmax head.
class LanguageModel {
public:
    LanguageModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.layers == 0) throw config_error("model needs at least one layer");
        if (cfg.vocab == 0) throw config_error("model needs a nonempty vocabulary");
        if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw config_error("dropout must lie in [0, 1)");
        std::seed_seq seq{seed, std::uint64_t{0x5eed}};
        std::vector<std::uint64_t> seeds(cfg.layers + 1);
        seq.generate(seeds.begin(), seeds.end());
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::size_t in = l == 0 ? cfg.emb : cfg.hidden;
            CellSpec spec{cfg.family, in, cfg.hidden, cfg.rates};
            layers_.push_back(Layer::create(spec, InitSpec::uniform(), seeds[l]));
        }
        head_ = LMHead::create(cfg.vocab, cfg.emb, cfg.hidden, cfg.tied, seeds[cfg.layers]);
    }

    LanguageModel(ModelConfig cfg, std::vector<Layer> layers, LMHead head)
        : cfg_(std::move(cfg)), layers_(std::move(layers)), head_(std::move(head)) {
        check_layer_chain(layers_, head_.emb());
        if (head_.tied() && head_.emb() != layers_.back().spec.hidden_size) {
            throw config_error("tied head does not match last hidden size");
        }
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }
    const LMHead& head() const noexcept { return head_; }
    LMHead& head() noexcept { return head_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        for (auto& l : layers_) {
            ps.push_back(&l.pool.weight);
            ps.push_back(&l.pool.bias);
        }
        ps.push_back(&head_.embedding);
        ps.push_back(&head_.decoder_bias);
        if (head_.decoder_weight) ps.push_back(&*head_.decoder_weight);
        return ps;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    std::vector<LayerState> initial_states(std::size_t batch) const { return zero_states(layers_, batch); }

    std::vector<ParamCounts> recurrent_counts() const {
        std::vector<ParamCounts> c;
        for (const auto& l : layers_) c.push_back(count_parameters(l.plan));
        return c;
    }

    // Records one BPTT window on `tape` and returns logits of shape
    // (vocab x window_len*batch), columns ordered timestep-major. `carry` is read as
    // the initial state and overwritten with the detached final state.
    ad::Var forward(ad::Tape& tape, const SequenceBatch& batch, std::vector<LayerState>& carry, bool train,
                    std::mt19937_64* rng) {
        if (carry.size() != layers_.size()) throw state_error("carried state does not match layer count");
        auto head = bind(head_, tape);
        std::vector<CellWeights> weights;
        for (auto& l : layers_) weights.push_back(bind_views(l.pool.weight.bind(tape), l.pool.bias.bind(tape), l.plan));

        std::vector<CellState> states;
        for (const auto& s : carry) {
            CellState st{tape.constant(s.h), std::nullopt};
            if (s.c) st.c = tape.constant(*s.c);
            states.push_back(st);
        }

        std::vector<ad::Var> inputs;
        for (std::size_t t = 0; t < batch.length(); ++t) inputs.push_back(ad::embedding(head.embedding, batch.input_row(t)));

        Dropout dropout{cfg_.dropout, train, rng};
        auto out = stack_forward(layers_, weights, inputs, states, dropout, cfg_.dropout_embedding);

        for (std::size_t l = 0; l < layers_.size(); ++l) {
            carry[l].h = out.final_states[l].h.value();
            if (out.final_states[l].c) carry[l].c = out.final_states[l].c->value();
        }
        return lm_head_forward(head, ad::concat_cols(out.features));
    }

private:
    ModelConfig cfg_;
    std::vector<Layer> layers_;
    LMHead head_;
};

}  // namespace rrnn
