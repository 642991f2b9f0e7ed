#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rrnn/checkpoint.hpp"
#include "rrnn/config.hpp"
#include "rrnn/data.hpp"
#include "rrnn/gradcheck.hpp"
#include "rrnn/model.hpp"
#include "rrnn/training.hpp"

namespace rrnn::cli {

enum ExitCode : int { ok = 0, usage = 2, numeric = 3 };

// Shortest text that reads back as the same double.
inline std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json metrics_record(const EpochRecord& r) {
    return {{"epoch", r.train.epoch},       {"lr", r.train.lr},
            {"train_loss", r.train.train_loss}, {"train_ppl", r.train.train_ppl},
            {"valid_loss", r.valid.loss},   {"valid_ppl", r.valid.perplexity},
            {"clip_rate", r.train.clip_rate}, {"seconds", r.train.seconds}};
}

struct TrainOverrides {
    std::optional<std::size_t> epochs, batch_size, bptt, layers, hidden, emb;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr, rate, dropout;
    std::optional<std::string> family, metrics, checkpoint, best_checkpoint;
};

inline void apply(const TrainOverrides& o, RunConfig& cfg) {
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.bptt) cfg.train.bptt = *o.bptt;
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.lr) cfg.train.lr = *o.lr;
    if (o.layers) cfg.model.layers = *o.layers;
    if (o.hidden) cfg.model.hidden = *o.hidden;
    if (o.emb) cfg.model.emb = *o.emb;
    if (o.dropout) cfg.model.dropout = *o.dropout;
    if (o.metrics) cfg.output.metrics = *o.metrics;
    if (o.checkpoint) cfg.output.checkpoint = *o.checkpoint;
    if (o.best_checkpoint) cfg.output.best_checkpoint = *o.best_checkpoint;
    if (o.family) {
        try {
            cfg.model.family = parse_family(*o.family);
        } catch (const validation_error& e) {
            throw config_error(std::string("--family: ") + e.what());
        }
        if (!o.rate && cfg.model.rates.gates() != gate_count(cfg.model.family)) {
            if (!cfg.model.rates.is_uniform()) throw config_error("--family: rate matrix shape does not fit the new family");
            cfg.model.rates = RateMatrix::uniform(cell_inputs, gate_count(cfg.model.family), cfg.model.rates.values().front());
        }
    }
    if (o.rate) cfg.model.rates = RateMatrix::uniform(cell_inputs, gate_count(cfg.model.family), *o.rate);
}

inline int cmd_train(const std::string& config_path, const TrainOverrides& overrides, std::ostream& out,
                     std::ostream& err) {
    RunConfig cfg;
    Corpus corpus;
    std::vector<SequenceBatch> train_b, valid_b, test_b;
    try {
        cfg = load_run_config(config_path);
        apply(overrides, cfg);
        validate_for_training(cfg);
        corpus = load_corpus(cfg.data.train, cfg.data.valid, cfg.data.test, cfg.data.mode, cfg.data.unk);
        train_b = batchify(corpus.train, cfg.train.batch_size, cfg.train.bptt);
        valid_b = batchify(corpus.valid, cfg.train.batch_size, cfg.train.bptt);
        test_b = batchify(corpus.test, cfg.train.batch_size, cfg.train.bptt);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }

    cfg.model.vocab = corpus.vocab.size();
    const std::string echo = to_json(cfg).dump();
    std::optional<LanguageModel> model;
    try {
        model.emplace(cfg.model, cfg.train.seed);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }

    const auto counts = count_stack(cfg.model.family, cfg.model.layers, cfg.model.hidden, cfg.model.emb, cfg.model.vocab,
                                    cfg.model.rates, cfg.model.tied);
    out << "vocab " << corpus.vocab.size() << ", train tokens " << corpus.train.size() << ", recurrent params "
        << counts.recurrent.restricted << " (C = " << counts.recurrent.compression << "), head params " << counts.head()
        << ", seed " << cfg.train.seed << '\n';

    std::ofstream metrics(cfg.output.metrics, std::ios::trunc);
    if (!metrics) {
        err << "error: output.metrics: cannot write '" << cfg.output.metrics << "'\n";
        return usage;
    }

    double best_valid = std::numeric_limits<double>::infinity();
    bool failed = false;
    try {
        fit(*model, train_b, valid_b, cfg.train, [&](const EpochRecord& r) {
            if (r.train.aborted) {
                failed = true;
                err << "numeric failure in epoch " << r.train.epoch << ": " << r.train.error << '\n';
                return false;
            }
            metrics << metrics_record(r).dump() << '\n' << std::flush;
            out << "epoch " << r.train.epoch << " lr " << r.train.lr << " train_ppl " << r.train.train_ppl << " valid_ppl "
                << r.valid.perplexity << " clip_rate " << r.train.clip_rate << " (" << r.train.seconds << " s)\n";
            checkpoint::save_file(cfg.output.checkpoint, *model, corpus.vocab, echo);
            if (r.valid.loss < best_valid) {
                best_valid = r.valid.loss;
                checkpoint::save_file(cfg.output.best_checkpoint, *model, corpus.vocab, echo);
            }
            return true;
        });
    } catch (const numeric_error& e) {
        err << "numeric failure: " << e.what() << '\n';
        failed = true;
    }
    if (failed) {
        err << "last stable checkpoint: " << cfg.output.checkpoint << '\n';
        return numeric;
    }

    try {
        const auto test = evaluate(*model, test_b);
        out << "test_loss " << exact(test.loss) << " test_ppl " << exact(test.perplexity) << '\n';
    } catch (const numeric_error& e) {
        err << "numeric failure during test evaluation: " << e.what() << '\n';
        return numeric;
    }
    return ok;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& data_path, std::optional<std::size_t> batch,
                    std::optional<std::size_t> bptt, std::ostream& out, std::ostream& err) {
    std::optional<checkpoint::Contents> ck;
    RunConfig cfg;
    std::vector<SequenceBatch> batches;
    try {
        ck.emplace(checkpoint::load_file(checkpoint_path));
        cfg = parse_run_config(nlohmann::json::parse(ck->config_echo));
        const auto tokens = tokenize(read_text_file(data_path), cfg.data.mode);
        std::vector<TokenId> ids;
        try {
            ids = encode(tokens, ck->vocab);
        } catch (const validation_error& e) {
            err << "error: vocabulary mismatch between '" << data_path << "' and the checkpoint: " << e.what() << '\n';
            return usage;
        }
        batches = batchify(ids, batch.value_or(cfg.train.batch_size), bptt.value_or(cfg.train.bptt));
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const nlohmann::json::exception& e) {
        err << "error: checkpoint config is unreadable: " << e.what() << '\n';
        return usage;
    }
    try {
        const auto r = evaluate(ck->model, batches);
        out << "test_loss " << exact(r.loss) << " test_ppl " << exact(r.perplexity) << '\n';
    } catch (const numeric_error& e) {
        err << "numeric failure: " << e.what() << '\n';
        return numeric;
    }
    return ok;
}

struct CountRequest {
    std::string family = "lstm";
    std::size_t layers = 3;
    std::size_t hidden = 200;
    std::size_t emb = 200;
    std::size_t vocab = 10000;
    std::vector<double> rates{0.5};
    bool untied = false;
    bool json = false;
};

inline int cmd_count_params(const CountRequest& req, std::ostream& out, std::ostream& err) {
    std::vector<std::pair<double, StackCounts>> rows;
    CellFamily family;
    try {
        family = parse_family(req.family);
        for (double r : req.rates) {
            rows.emplace_back(r, count_stack(family, req.layers, req.hidden, req.emb, req.vocab,
                                             RateMatrix::uniform(cell_inputs, gate_count(family), r), !req.untied));
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }

    if (req.json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [r, c] : rows) {
            nlohmann::json layers = nlohmann::json::array();
            for (const auto& l : c.layers) {
                layers.push_back({{"unrestricted", l.unrestricted}, {"shared", l.shared}, {"restricted", l.restricted}});
            }
            arr.push_back({{"family", std::string(to_string(family))},
                           {"rate", r},
                           {"layers", layers},
                           {"recurrent", c.recurrent.restricted},
                           {"recurrent_with_output_bias", c.recurrent_with_output_bias()},
                           {"unrestricted", c.recurrent.unrestricted},
                           {"shared", c.recurrent.shared},
                           {"compression", c.recurrent.compression},
                           {"embedding", c.embedding},
                           {"decoder_weight", c.decoder_weight},
                           {"output_bias", c.output_bias},
                           {"head", c.head()},
                           {"total", c.total()}});
        }
        out << arr.dump(2) << '\n';
        return ok;
    }

    out << "# family=" << to_string(family) << " layers=" << req.layers << " hidden=" << req.hidden << " emb=" << req.emb
        << " vocab=" << req.vocab << " tied=" << (req.untied ? "false" : "true") << '\n';
    out << std::left << std::setw(6) << "rate" << std::setw(12) << "recurrent" << std::setw(14) << "+output_bias"
        << std::setw(8) << "M" << std::setw(10) << "shared" << std::setw(14) << "unrestricted" << std::setw(13)
        << "compression" << std::setw(10) << "head" << std::setw(10) << "total" << "per_layer\n";
    for (const auto& [r, c] : rows) {
        std::ostringstream rate, mega, comp, per_layer;
        rate << r;
        mega << std::fixed << std::setprecision(3) << static_cast<double>(c.recurrent_with_output_bias()) / 1e6;
        comp << std::fixed << std::setprecision(6) << c.recurrent.compression;
        for (std::size_t l = 0; l < c.layers.size(); ++l) per_layer << (l ? "/" : "") << c.layers[l].restricted;
        out << std::setw(6) << rate.str() << std::setw(12) << c.recurrent.restricted << std::setw(14)
            << c.recurrent_with_output_bias() << std::setw(8) << mega.str() << std::setw(10) << c.recurrent.shared
            << std::setw(14) << c.recurrent.unrestricted << std::setw(13) << comp.str() << std::setw(10) << c.head()
            << std::setw(10) << c.total() << per_layer.str() << '\n';
    }
    return ok;
}

inline int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err) {
    if (opts.hidden > 8 || opts.input > 8) {
        err << "error: gradcheck is meant for small cells (hidden, input <= 8)\n";
        return usage;
    }
    GradcheckReport rep;
    try {
        rep = gradcheck(opts);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const numeric_error& e) {
        err << "numeric failure: " << e.what() << '\n';
        return numeric;
    }
    out << "family " << to_string(opts.family) << " hidden " << opts.hidden << " input " << opts.input << " rate "
        << opts.rate << " seed " << opts.seed << '\n';
    out << "entries_checked " << rep.entries_checked << '\n';
    out << "max_rel_error " << rep.max_rel_error << '\n';
    out << "path_sum_error " << rep.path_sum_error << '\n';
    out << "worst " << (rep.worst_in_bias ? "bias[" : "weight[") << rep.worst_row;
    if (!rep.worst_in_bias) out << ", " << rep.worst_col;
    out << "] analytic " << rep.worst_analytic << " numeric " << rep.worst_numeric << '\n';
    out << (rep.passed ? "PASS" : "FAIL") << '\n';
    return rep.passed ? ok : numeric;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Restricted RNN/GRU/LSTM language models: training, evaluation and parameter accounting", "rrnn"};
    app.require_subcommand(1);

    std::string config_path;
    TrainOverrides ov;
    auto* train = app.add_subcommand("train", "train a language model from a JSON config");
    train->add_option("--config", config_path, "run config (JSON)")->required();
    train->add_option("--epochs", ov.epochs);
    train->add_option("--seed", ov.seed);
    train->add_option("--lr", ov.lr);
    train->add_option("--batch-size", ov.batch_size);
    train->add_option("--bptt", ov.bptt);
    train->add_option("--family", ov.family);
    train->add_option("--layers", ov.layers);
    train->add_option("--hidden", ov.hidden);
    train->add_option("--emb", ov.emb);
    train->add_option("--rate", ov.rate, "uniform sharing rate");
    train->add_option("--dropout", ov.dropout);
    train->add_option("--metrics", ov.metrics, "per-epoch metrics file (JSON lines)");
    train->add_option("--checkpoint", ov.checkpoint, "final checkpoint path");
    train->add_option("--best-checkpoint", ov.best_checkpoint, "best-validation checkpoint path");

    std::string ckpt_path, data_path;
    std::optional<std::size_t> eval_batch, eval_bptt;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a text file");
    eval->add_option("--checkpoint", ckpt_path)->required();
    eval->add_option("--data", data_path, "text file of one split")->required();
    eval->add_option("--batch-size", eval_batch);
    eval->add_option("--bptt", eval_bptt);

    CountRequest count;
    auto* count_cmd = app.add_subcommand("count-params", "print parameter counts per sharing rate");
    count_cmd->add_option("--family", count.family)->capture_default_str();
    count_cmd->add_option("--layers", count.layers)->capture_default_str();
    count_cmd->add_option("--hidden", count.hidden)->capture_default_str();
    count_cmd->add_option("--emb", count.emb)->capture_default_str();
    count_cmd->add_option("--vocab", count.vocab)->capture_default_str();
    count_cmd->add_option("--rates", count.rates, "comma separated sharing rates")->delimiter(',');
    count_cmd->add_flag("--untied", count.untied, "separate decoder matrix");
    count_cmd->add_flag("--json", count.json, "emit JSON instead of a table");

    GradcheckOptions gc;
    std::string gc_family = "lstm";
    auto* grad = app.add_subcommand("gradcheck", "compare pool gradients with central differences");
    grad->add_option("--family", gc_family)->capture_default_str();
    grad->add_option("--hidden", gc.hidden)->capture_default_str();
    grad->add_option("--input", gc.input)->capture_default_str();
    grad->add_option("--rate", gc.rate)->capture_default_str();
    grad->add_option("--seed", gc.seed)->capture_default_str();
    grad->add_option("--steps", gc.steps)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }

    if (*train) return cmd_train(config_path, ov, out, err);
    if (*eval) return cmd_eval(ckpt_path, data_path, eval_batch, eval_bptt, out, err);
    if (*count_cmd) return cmd_count_params(count, out, err);
    if (*grad) {
        try {
            gc.family = parse_family(gc_family);
        } catch (const validation_error& e) {
            err << "error: " << e.what() << '\n';
            return usage;
        }
        return cmd_gradcheck(gc, out, err);
    }
    return usage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"rrnn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace rrnn::cli
