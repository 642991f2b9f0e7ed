#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/data.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/model.hpp"
#include "rrnn/ops.hpp"

namespace rrnn {

struct TrainConfig {
    double lr = 1.0;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double clip_norm = 0.25;
    std::size_t epochs = 100;
    std::size_t batch_size = 80;
    std::size_t bptt = 35;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw validation_error("epochs must be at least 1");
        if (batch_size < 1 || bptt < 1) throw validation_error("batch_size and bptt must be at least 1");
        if (!(lr >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0) || !(clip_norm >= 0.0)) {
            throw validation_error("lr, momentum, weight_decay and clip_norm must be nonnegative");
        }
    }
};

inline double perplexity(double mean_loss) { return std::exp(mean_loss); }

// Half-cosine from lr0 at epoch 0 down to 0 at `total`, no restarts.
inline double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
    if (total == 0) throw validation_error("cosine schedule needs at least one epoch");
    if (epoch > total) {
        throw validation_error("epoch " + std::to_string(epoch) + " past the schedule end " + std::to_string(total));
    }
    if (epoch == total) return 0.0;
    const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total);
    return lr0 * (1.0 + std::cos(phase)) / 2.0;
}

inline double global_grad_norm(std::span<Parameter* const> params) {
    double sq = 0.0;
    for (const auto* p : params) {
        for (double g : p->grad.values()) sq += g * g;
    }
    if (!std::isfinite(sq)) throw numeric_error("non-finite gradient");
    return std::sqrt(sq);
}

// Rescales every gradient by about max_norm / norm when the global L2 norm exceeds max_norm.
// The result never exceeds max_norm. Returns the factor applied (1 when untouched).
inline double clip_gradients(std::span<Parameter* const> params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    // the quotient can round so that the scaled norm lands an ulp above max_norm
    const auto scaled_norm = [&](double f) {
        double sq = 0.0;
        for (const auto* p : params) {
            for (double g : p->grad.values()) sq += (g * f) * (g * f);
        }
        return std::sqrt(sq);
    };
    double factor = max_norm / norm;
    while (factor > 0.0 && scaled_norm(factor) > max_norm) factor = std::nextafter(factor, 0.0);
    for (auto* p : params) {
        for (auto& g : p->grad.values()) g *= factor;
    }
    return factor;
}

// Plain (non-Nesterov) momentum SGD with L2 weight decay folded into the gradient:
//   g = grad + wd * w;  v = momentum * v + g;  w -= lr * v
// Placeholder entries (mask 0) are never touched.
class SgdMomentum {
public:
    explicit SgdMomentum(std::span<Parameter* const> params) {
        for (const auto* p : params) velocity_.emplace_back(p->value.shape(), 0.0);
    }

    void step(std::span<Parameter* const> params, double lr, double momentum, double weight_decay) {
        if (params.size() != velocity_.size()) throw state_error("optimizer state does not match parameter list");
        for (std::size_t k = 0; k < params.size(); ++k) {
            Parameter& p = *params[k];
            auto w = p.value.data();
            const auto g = p.grad.data();
            auto v = velocity_[k].data();
            if (w.size() != v.size()) throw shape_error("optimizer state shape mismatch for " + p.name);
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (!p.trains(i)) continue;
                const double gi = g[i] + weight_decay * w[i];
                v[i] = momentum * v[i] + gi;
                w[i] -= lr * v[i];
            }
        }
    }

    const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

private:
    std::vector<Tensor> velocity_;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_ppl = 0.0;
    double clip_rate = 0.0;
    double seconds = 0.0;
    std::size_t steps = 0;
    bool aborted = false;
    std::string error;
};

struct EvalResult {
    double loss = 0.0;
    double perplexity = 0.0;
    std::size_t positions = 0;
};

inline std::vector<TokenId> flat_targets(const SequenceBatch& b) { return b.targets; }

// One pass over contiguous batches. Recurrent state is carried from window to window
// as plain values, so gradients stop at window boundaries; it starts at zero.
inline EpochMetrics train_epoch(LanguageModel& model, const std::vector<SequenceBatch>& batches, const TrainConfig& cfg,
                                SgdMomentum& opt, double lr, std::mt19937_64& rng, std::size_t epoch = 0) {
    const auto start = std::chrono::steady_clock::now();
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    if (batches.empty()) throw validation_error("train_epoch needs at least one batch");
    auto params = model.parameters();
    auto carry = model.initial_states(batches.front().batch);
    double loss_sum = 0.0;
    std::size_t positions = 0;
    std::size_t clipped = 0;
    ad::Tape tape;
    try {
        for (const auto& b : batches) {
            tape.reset();
            model.zero_grad();
            auto logits = model.forward(tape, b, carry, true, &rng);
            auto loss = ad::cross_entropy(logits, flat_targets(b));
            tape.backward(loss);
            if (clip_gradients(params, cfg.clip_norm) < 1.0) ++clipped;
            opt.step(params, lr, cfg.momentum, cfg.weight_decay);
            const std::size_t n = b.len * b.batch;
            loss_sum += loss.value().item() * static_cast<double>(n);
            positions += n;
            ++m.steps;
        }
    } catch (const numeric_error& e) {
        m.aborted = true;
        m.error = e.what();
    }
    m.train_loss = positions ? loss_sum / static_cast<double>(positions) : 0.0;
    m.train_ppl = perplexity(m.train_loss);
    m.clip_rate = m.steps ? static_cast<double>(clipped) / static_cast<double>(m.steps) : 0.0;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

// Mean loss over every position, eval mode (no dropout, no parameter updates).
inline EvalResult evaluate(LanguageModel& model, const std::vector<SequenceBatch>& batches) {
    EvalResult r;
    if (batches.empty()) return r;
    auto carry = model.initial_states(batches.front().batch);
    double loss_sum = 0.0;
    ad::Tape tape;
    for (const auto& b : batches) {
        tape.reset();
        auto logits = model.forward(tape, b, carry, false, nullptr);
        auto loss = ad::cross_entropy(logits, flat_targets(b));
        const std::size_t n = b.len * b.batch;
        loss_sum += loss.value().item() * static_cast<double>(n);
        r.positions += n;
    }
    r.loss = loss_sum / static_cast<double>(r.positions);
    r.perplexity = perplexity(r.loss);
    return r;
}

struct EpochRecord {
    EpochMetrics train;
    EvalResult valid;
};

// Full schedule: cosine-annealed lr per epoch, validation after each epoch. The
// callback sees every record as soon as it exists; returning false stops early.
// The aborted epoch, if any, is the last one reported.
inline std::vector<EpochRecord> fit(LanguageModel& model, const std::vector<SequenceBatch>& train,
                                    const std::vector<SequenceBatch>& valid, const TrainConfig& cfg,
                                    const std::function<bool(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    auto params = model.parameters();
    SgdMomentum opt(params);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<EpochRecord> history;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        EpochRecord rec;
        rec.train = train_epoch(model, train, cfg, opt, cosine_lr(e, cfg.epochs, cfg.lr), rng, e + 1);
        if (!rec.train.aborted) rec.valid = evaluate(model, valid);
        history.push_back(rec);
        const bool keep_going = !on_epoch || on_epoch(rec);
        if (rec.train.aborted || !keep_going) break;
    }
    return history;
}

}  // namespace rrnn
