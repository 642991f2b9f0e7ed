// Acceptance runner: prints one PASS/FAIL line per criterion, followed by indented
// detail lines, and exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "probes.hpp"
#include "rrnn/cells.hpp"
#include "rrnn/config.hpp"
#include "rrnn/data.hpp"
#include "rrnn/gradcheck.hpp"
#include "rrnn/model.hpp"
#include "rrnn/restriction.hpp"
#include "rrnn/training.hpp"
#include "support.hpp"

using namespace rrnn;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> details;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            details.push_back("failed: " + what);
        }
    }
    void note(const std::string& s) { details.push_back(s); }
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const CellFamily kFamilies[] = {CellFamily::rnn, CellFamily::gru, CellFamily::lstm};
const double kRates[] = {1.0, 0.95, 0.9, 0.7, 0.5, 0.3, 0.1, 0.0};

// Reference model sizes of 3-layer, d = k = 200 stacks, in thousands of parameters,
// ordered like kRates.
const std::map<CellFamily, std::vector<long>> kReferenceSizes = {
    {CellFamily::rnn, {130, 136, 142, 167, 191, 215, 239, 251}},
    {CellFamily::gru, {130, 161, 191, 311, 432, 553, 673, 733}},
    {CellFamily::lstm, {130, 173, 215, 384, 553, 721, 890, 975}},
};
constexpr long kOutputBias = 10000;

RateMatrix uniform_rates(CellFamily f, double r) { return RateMatrix::uniform(cell_inputs, gate_count(f), r); }

Outcome parameter_counts() {
    Outcome o;
    int cells = 0, within = 0;
    long worst = 0;
    for (auto f : kFamilies) {
        std::string row = std::string(to_string(f)) + ":";
        for (std::size_t c = 0; c < std::size(kRates); ++c) {
            const double r = kRates[c];
            const auto counts = count_stack(f, 3, 200, 200, 10000, uniform_rates(f, r), true);
            const long total = static_cast<long>(counts.recurrent.restricted) + kOutputBias;
            const long diff = std::abs(total - kReferenceSizes.at(f)[c] * 1000);
            worst = std::max(worst, diff);
            ++cells;
            if (diff <= 1000) ++within;
            o.check(diff <= 1000, fmt("%s r=%.2f: %ld vs %ld000", std::string(to_string(f)).c_str(), r, total,
                                      kReferenceSizes.at(f)[c]));

            // closed form P - (mn-1) s (k+1) per layer, d = k = 200
            const long mn = 2 * static_cast<long>(gate_count(f));
            const long s = std::lround(r * 200.0);
            const long per_layer = mn * 200 * 201 - (mn - 1) * s * 201;
            o.check(static_cast<long>(counts.recurrent.restricted) == 3 * per_layer,
                    fmt("%s r=%.2f closed form %ld vs enumerated %zu", std::string(to_string(f)).c_str(), r, 3 * per_layer,
                        counts.recurrent.restricted));
            row += fmt(" %.3f", static_cast<double>(total) / 1e6);
        }
        o.note(row);
    }
    o.note(fmt("%d/%d cells within 0.001M (largest gap %ld parameters); recurrent counts equal the closed form",
               within, cells, worst));
    return o;
}

Outcome compression_formulas() {
    Outcome o;
    for (auto f : kFamilies) {
        const std::size_t mn = 2 * gate_count(f);
        for (double r : kRates) {
            const auto c = count_parameters(CellSpec::uniform(f, 200, 200, r).plan());
            const std::size_t s = static_cast<std::size_t>(std::lround(r * 200));
            const std::size_t mnd = mn * 200;
            // C = (mnd - (mn - 1) s) / (mnd), compared as an integer cross product
            o.check(c.restricted * mnd == c.unrestricted * (mnd - (mn - 1) * s),
                    fmt("%s r=%.2f general formula", std::string(to_string(f)).c_str(), r));
            if (f == CellFamily::rnn) {
                // C = (2 - r) / 2 with r = s / d
                o.check(c.restricted * 2 * 200 == c.unrestricted * (2 * 200 - s), fmt("rnn r=%.2f: (2-r)/2", r));
                o.check(c.compression >= 0.5 && c.compression <= 1.0, fmt("rnn r=%.2f inside [0.5, 1]", r));
            }
        }
        const auto none = count_parameters(CellSpec::uniform(f, 200, 200, 0.0).plan());
        o.check(none.compression == 1.0, std::string(to_string(f)) + " r=0 gives C=1");
    }
    const double c_rnn_full = compression_rate(CellSpec::uniform(CellFamily::rnn, 200, 200, 1.0).plan());
    const double c_rnn_half = compression_rate(CellSpec::uniform(CellFamily::rnn, 200, 200, 0.5).plan());
    const double c_lstm_half = compression_rate(CellSpec::uniform(CellFamily::lstm, 200, 200, 0.5).plan());
    o.check(c_rnn_full == 0.5, "rnn r=1 gives C=0.5");
    o.note(fmt("C(rnn, 1) = %.17g, C(rnn, 0.5) = %.17g, C(lstm, 0.5) = %.17g, C(*, 0) = 1", c_rnn_full, c_rnn_half,
               c_lstm_half));
    return o;
}

Outcome dense_equivalence() {
    Outcome o;
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::map<CellFamily, int> per_family;
    for (int trial = 0; trial < 200; ++trial) {
        const auto dc = probes::random_case(rng);
        ++per_family[dc.family];
        const double diff = probes::dense_discrepancy(dc);
        worst = std::max(worst, diff);
        o.check(diff < 1e-12, fmt("case %d (%s d=%zu k=%zu): %.3g", trial, std::string(to_string(dc.family)).c_str(), dc.d,
                                  dc.k, diff));
    }
    o.note(fmt("200 cases (rnn %d, gru %d, lstm %d), max |diff| = %.3g", per_family[CellFamily::rnn],
               per_family[CellFamily::gru], per_family[CellFamily::lstm], worst));
    return o;
}

Outcome gradients() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    for (auto f : kFamilies)
        for (double r : {0.0, 0.5, 1.0}) {
            GradcheckOptions opts;
            opts.family = f;
            opts.rate = r;
            const auto rep = gradcheck(opts);
            o.check(rep.max_rel_error < 1e-4, fmt("%s r=%.1f rel error %.3g", std::string(to_string(f)).c_str(), r,
                                                  rep.max_rel_error));
            o.check(rep.path_sum_error < 1e-10, fmt("%s r=%.1f path sum %.3g", std::string(to_string(f)).c_str(), r,
                                                    rep.path_sum_error));
            o.note(fmt("%-4s r=%.1f: %3zu entries, max rel %.2e, path-sum %.1e", std::string(to_string(f)).c_str(), r,
                       rep.entries_checked, rep.max_rel_error, rep.path_sum_error));
        }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.check(secs < 60.0, fmt("took %.1f s", secs));
    o.note(fmt("h = 1e-5, tolerance 1e-4, %.2f s total", secs));
    return o;
}

Outcome aliasing() {
    Outcome o;
    std::size_t shared = 0, priv = 0;
    for (auto f : kFamilies)
        for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const auto rep = probes::aliasing_probe(CellSpec::uniform(f, 4, 4, r));
            shared += rep.shared_entries;
            priv += rep.private_entries;
            o.check(rep.failures == 0, fmt("%s r=%.2f: %s", std::string(to_string(f)).c_str(), r, rep.first_failure.c_str()));
        }
    o.note(fmt("d = k = 4, all families, r in {0, .25, .5, .75, 1}: %zu shared and %zu private entries perturbed", shared,
               priv));
    return o;
}

struct TrainRun {
    std::vector<EpochRecord> history;
    std::size_t recurrent = 0;
};

Outcome training_smoke() {
    Outcome o;
    auto cfg = load_run_config(testutil::source_path("configs/desk-char.json"));
    const auto corpus = load_corpus(cfg.data.train, cfg.data.valid, cfg.data.test, cfg.data.mode, cfg.data.unk);
    const auto train = batchify(corpus.train, cfg.train.batch_size, cfg.train.bptt);
    const auto valid = batchify(corpus.valid, cfg.train.batch_size, cfg.train.bptt);
    o.check(cfg.model.tied && cfg.model.dropout == 0.2 && cfg.train.epochs == 5, "desk config: tied, dropout 0.2, 5 epochs");
    o.note(fmt("corpus: %zu train chars, vocab %zu; model %zu x %zu, batch %zu, bptt %zu, seed %llu", corpus.train.size(),
               corpus.vocab.size(), cfg.model.layers, cfg.model.hidden, cfg.train.batch_size, cfg.train.bptt,
               static_cast<unsigned long long>(cfg.train.seed)));

    auto run = [&](CellFamily f, double r) {
        ModelConfig mc = cfg.model;
        mc.family = f;
        mc.rates = uniform_rates(f, r);
        mc.vocab = corpus.vocab.size();
        LanguageModel model(mc, cfg.train.seed);
        TrainRun tr;
        tr.history = fit(model, train, valid, cfg.train);
        for (const auto& c : model.recurrent_counts()) tr.recurrent += c.restricted;
        return tr;
    };
    auto losses = [](const TrainRun& tr) {
        std::string s;
        for (const auto& e : tr.history) s += fmt(" %.4f", e.train.train_loss);
        return s;
    };

    // (a) every family, strictly decreasing epoch train loss
    std::map<CellFamily, TrainRun> runs;
    for (auto f : kFamilies) {
        runs[f] = run(f, 0.5);
        const auto& h = runs[f].history;
        bool decreasing = h.size() == 5;
        for (std::size_t e = 1; e < h.size(); ++e) decreasing = decreasing && h[e].train.train_loss < h[e - 1].train.train_loss;
        o.check(decreasing, std::string("(a) ") + std::string(to_string(f)) + " train loss not strictly decreasing");
        o.note(fmt("(a) %-4s r=0.5 train loss:%s, final valid ppl %.3f", std::string(to_string(f)).c_str(),
                   losses(runs[f]).c_str(), h.back().valid.perplexity));
    }

    // (b) restricted vs unrestricted LSTM under the same seed and budget
    const TrainRun full = run(CellFamily::lstm, 0.0);
    const TrainRun& half = runs[CellFamily::lstm];
    const double ppl_half = half.history.back().valid.perplexity;
    const double ppl_full = full.history.back().valid.perplexity;
    const double ratio = ppl_half / ppl_full;
    const double param_ratio = static_cast<double>(half.recurrent) / static_cast<double>(full.recurrent);
    o.check(ratio <= 1.3 && ratio >= 1.0 / 1.3, fmt("(b) valid ppl ratio %.4f outside 1.3x", ratio));
    o.check(param_ratio <= 0.62, fmt("(b) recurrent parameter ratio %.4f above 0.62", param_ratio));
    o.note(fmt("(b) lstm r=0 train loss:%s", losses(full).c_str()));
    o.note(fmt("(b) valid ppl r=0.5 %.3f vs r=0 %.3f (ratio %.4f); recurrent params %zu vs %zu (%.4f)", ppl_half, ppl_full,
               ratio, half.recurrent, full.recurrent, param_ratio));

    // (c) replay with the same seed; wall-clock seconds are excluded
    const TrainRun again = run(CellFamily::lstm, 0.5);
    bool same = again.history.size() == half.history.size();
    for (std::size_t e = 0; same && e < half.history.size(); ++e) {
        const auto &a = half.history[e], &b = again.history[e];
        same = a.train.epoch == b.train.epoch && a.train.lr == b.train.lr && a.train.train_loss == b.train.train_loss &&
               a.train.train_ppl == b.train.train_ppl && a.train.clip_rate == b.train.clip_rate &&
               a.train.steps == b.train.steps && a.valid.loss == b.valid.loss && a.valid.perplexity == b.valid.perplexity;
    }
    o.check(same, "(c) replay metrics differ");
    o.note(same ? "(c) replay: identical metric stream over 5 epochs (seconds excluded)" : "(c) replay differs");
    return o;
}

Outcome schedule_clip_sgd() {
    Outcome o;
    o.check(cosine_lr(0, 100, 1.0) == 1.0, "lr(0) = lr0");
    o.check(cosine_lr(100, 100, 1.0) == 0.0, "lr(100) = 0");
    o.check(cosine_lr(50, 100, 1.0) == 0.5, "lr(50) = lr0 / 2");

    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0), logn(-3.0, 3.0);
    int fired = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Parameter> ps;
        const int count = 1 + static_cast<int>(rng() % 4);
        for (int k = 0; k < count; ++k) {
            Parameter p("p", Tensor(Shape{1 + rng() % 50}, 0.0));
            for (auto& g : p.grad.values()) g = u(rng);
            ps.push_back(std::move(p));
        }
        std::vector<Parameter*> ptrs;
        for (auto& p : ps) ptrs.push_back(&p);
        const double target = std::pow(10.0, logn(rng));
        const double scale = target / global_grad_norm(ptrs);
        for (auto* p : ptrs)
            for (auto& g : p->grad.values()) g *= scale;
        if (clip_gradients(ptrs, 0.25) < 1.0) {
            ++fired;
            const double after = global_grad_norm(ptrs);
            worst = std::max(worst, after);
            o.check(after <= 0.25, fmt("post-clip norm %.17g", after));
        }
    }

    Parameter w("w", Tensor::vector({0.0}));
    std::vector<Parameter*> ws{&w};
    SgdMomentum opt(ws);
    w.grad[0] = 1.0;
    opt.step(ws, 1.0, 0.9, 0.0);
    const double first = w.value[0];
    opt.step(ws, 1.0, 0.9, 0.0);
    const double second_update = opt.velocity()[0][0];
    o.check(first == -1.0, "first update -1");
    o.check(second_update == 1.9 && w.value[0] == -1.0 - 1.9, "second update -1.9");
    o.note(fmt("cosine lr(0, 50, 100) = %g, %g, %g", cosine_lr(0, 100, 1.0), cosine_lr(50, 100, 1.0),
               cosine_lr(100, 100, 1.0)));
    o.note(fmt("clipping fired in %d of 2000 trials, largest post-clip norm %.17g", fired, worst));
    o.note(fmt("momentum updates: %g then %g", first, -second_update));
    return o;
}

Outcome tied_accounting() {
    Outcome o;
    for (auto f : kFamilies) {
        const auto t = count_stack(f, 3, 200, 200, 10000, uniform_rates(f, 0.5), true);
        const auto u = count_stack(f, 3, 200, 200, 10000, uniform_rates(f, 0.5), false);
        o.check(u.total() - t.total() == 10000u * 200, std::string(to_string(f)) + ": tying removes vocab x emb");
    }
    const auto head = LMHead::create(10000, 200, 200, true, 1);
    const auto untied = LMHead::create(10000, 200, 200, false, 1);
    o.check(head.trainable_count() == 2010000, "tied head is 2,010,000 trainables");
    o.check(untied.trainable_count() - head.trainable_count() == 2000000, "untied head adds 2,000,000");
    o.check(std::lround(static_cast<double>(head.trainable_count()) / 1e6) == 2, "head rounds to 2M");
    o.note(fmt("tied head %zu (embedding %zu + bias %zu), untied %zu", head.trainable_count(), head.embedding.value.size(),
               head.decoder_bias.value.size(), untied.trainable_count()));
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"parameter counts match the reference sizes (+10,000 output bias, within 0.001M)", parameter_counts},
        {"compression-rate formulas", compression_formulas},
        {"dense-assembly oracle equivalence (200 random cells, < 1e-12)", dense_equivalence},
        {"gradient check, all families, r in {0, 0.5, 1}", gradients},
        {"exhaustive aliasing at d = k = 4", aliasing},
        {"training smoke on the shipped char corpus", training_smoke},
        {"schedule, clipping and momentum recursion", schedule_clip_sgd},
        {"tied-embedding accounting", tied_accounting},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.details.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << fmt("  [%.2f s]", secs) << '\n';
        for (const auto& d : o.details) std::cout << "      " << d << '\n';
        std::cout << std::flush;
        failed += o.pass ? 0 : 1;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failed) << "/"
              << criteria.size() << '\n';
    return failed ? 1 : 0;
}
