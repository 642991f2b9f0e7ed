#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rrnn/cells.hpp"
#include "rrnn/data.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/model.hpp"
#include "rrnn/restriction.hpp"

// Binary checkpoint; byte layout in docs/checkpoint-format.md. Doubles are stored as
// their IEEE-754 bit patterns, so a save/load round trip is bit-exact.
namespace rrnn::checkpoint {

inline constexpr std::array<char, 8> magic{'R', 'R', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t version = 1;

struct Contents {
    std::string config_echo;  // caller-defined text, typically the run config as JSON
    Vocabulary vocab;
    LanguageModel model;
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void tensor(const Tensor& t) {
        u64(t.rank());
        for (auto e : t.shape()) u64(e);
        for (double v : t.values()) f64(v);
    }
    void rates(const RateMatrix& r) {
        u64(r.inputs());
        u64(r.gates());
        for (double v : r.values()) f64(v);
    }

private:
    void le(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::string str() {
        const auto n = bounded(u64());
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (!in_) throw validation_error("truncated checkpoint");
        return s;
    }
    Tensor tensor() {
        const auto rank = bounded(u64());
        Shape shape(rank);
        for (auto& e : shape) e = bounded(u64());
        std::vector<double> data(element_count(shape));
        for (auto& v : data) v = f64();
        return Tensor(std::move(shape), std::move(data));
    }
    RateMatrix rates() {
        const auto m = bounded(u64());
        const auto n = bounded(u64());
        std::vector<double> v(m * n);
        for (auto& x : v) x = f64();
        return RateMatrix(m, n, std::move(v));
    }

private:
    std::uint64_t le(int bytes) {
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            const int c = in_.get();
            if (c == std::char_traits<char>::eof()) throw validation_error("truncated checkpoint");
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return v;
    }
    static std::size_t bounded(std::uint64_t v) {
        if (v > (std::uint64_t{1} << 40)) throw validation_error("corrupt checkpoint: implausible length");
        return static_cast<std::size_t>(v);
    }
    std::istream& in_;
};

}  // namespace detail

inline void save(std::ostream& out, const LanguageModel& model, const Vocabulary& vocab, const std::string& config_echo) {
    detail::Writer w(out);
    out.write(magic.data(), magic.size());
    w.u32(version);
    w.str(std::string(gate_order_tag));
    w.str(config_echo);

    w.u64(vocab.size());
    for (const auto& t : vocab.tokens()) w.str(t);

    const auto& cfg = model.config();
    w.u32(static_cast<std::uint32_t>(cfg.family));
    w.u64(cfg.layers);
    w.u64(cfg.hidden);
    w.u64(cfg.emb);
    w.u64(cfg.vocab);
    w.rates(cfg.rates);
    w.u8(cfg.tied ? 1 : 0);
    w.f64(cfg.dropout);
    w.u8(cfg.dropout_embedding ? 1 : 0);

    w.u64(model.layers().size());
    for (const auto& l : model.layers()) {
        w.u32(static_cast<std::uint32_t>(l.spec.family));
        w.u64(l.spec.input_size);
        w.u64(l.spec.hidden_size);
        w.rates(l.spec.rates);
        w.tensor(l.pool.weight.value);
        w.tensor(l.pool.bias.value);
    }
    const auto& head = model.head();
    w.tensor(head.embedding.value);
    w.tensor(head.decoder_bias.value);
    w.u8(head.decoder_weight ? 1 : 0);
    if (head.decoder_weight) w.tensor(head.decoder_weight->value);
    if (!out) throw validation_error("checkpoint write failed");
}

inline CellFamily read_family(detail::Reader& r) {
    const auto f = r.u32();
    if (f > static_cast<std::uint32_t>(CellFamily::lstm)) throw validation_error("corrupt checkpoint: unknown cell family");
    return static_cast<CellFamily>(f);
}

inline Contents load(std::istream& in) {
    std::array<char, 8> m{};
    in.read(m.data(), m.size());
    if (!in || m != magic) throw validation_error("not a checkpoint file");
    detail::Reader r(in);
    if (r.u32() != version) throw validation_error("unsupported checkpoint version");
    if (r.str() != gate_order_tag) throw validation_error("checkpoint uses a different gate order convention");
    std::string echo = r.str();

    std::vector<std::string> tokens(r.u64());
    for (auto& t : tokens) t = r.str();
    Vocabulary vocab(std::move(tokens));

    ModelConfig cfg;
    cfg.family = read_family(r);
    cfg.layers = r.u64();
    cfg.hidden = r.u64();
    cfg.emb = r.u64();
    cfg.vocab = r.u64();
    cfg.rates = r.rates();
    cfg.tied = r.u8() != 0;
    cfg.dropout = r.f64();
    cfg.dropout_embedding = r.u8() != 0;

    std::vector<Layer> layers(r.u64());
    if (layers.size() != cfg.layers) throw validation_error("corrupt checkpoint: layer count mismatch");
    for (auto& l : layers) {
        l.spec.family = read_family(r);
        l.spec.input_size = r.u64();
        l.spec.hidden_size = r.u64();
        l.spec.rates = r.rates();
        l.plan = l.spec.plan();
        auto mask = trainable_mask(l.plan);
        Tensor w = r.tensor();
        Tensor b = r.tensor();
        if (w.shape() != Shape{l.plan.pool_rows, l.plan.pool_cols} || b.shape() != Shape{l.plan.pool_rows}) {
            throw validation_error("corrupt checkpoint: pool shape does not match its plan");
        }
        l.pool = ParameterPool{Parameter("pool.weight", std::move(w), std::move(mask.weight)),
                               Parameter("pool.bias", std::move(b), std::move(mask.bias))};
    }
    LMHead head{Parameter("head.embedding", r.tensor()), Parameter("head.decoder_bias", r.tensor()), std::nullopt};
    if (r.u8()) head.decoder_weight = Parameter("head.decoder_weight", r.tensor());
    if (head.vocab() != cfg.vocab || vocab.size() != cfg.vocab) {
        throw validation_error("corrupt checkpoint: vocabulary sizes disagree");
    }
    return Contents{std::move(echo), std::move(vocab), LanguageModel(std::move(cfg), std::move(layers), std::move(head))};
}

inline void save_file(const std::filesystem::path& path, const LanguageModel& model, const Vocabulary& vocab,
                      const std::string& config_echo) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw validation_error("cannot write checkpoint '" + path.string() + "'");
        save(out, model, vocab, config_echo);
    }
    std::filesystem::rename(tmp, path);
}

inline Contents load_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot read checkpoint '" + path.string() + "'");
    return load(in);
}

}  // namespace rrnn::checkpoint
