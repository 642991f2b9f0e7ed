#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rrnn/errors.hpp"

namespace rrnn {

using TokenId = std::int32_t;

enum class TokenMode { word, chr };

inline TokenMode parse_token_mode(std::string_view s) {
    if (s == "word") return TokenMode::word;
    if (s == "char") return TokenMode::chr;
    throw validation_error("unknown token mode '" + std::string(s) + "' (expected word or char)");
}

inline std::string_view to_string(TokenMode m) { return m == TokenMode::word ? "word" : "char"; }

// reserve: add an <unk> entry when the training split lacks one.
// none: unknown tokens outside the training split are an error, unless the
// training split itself carries <unk> (as pre-processed PTB does).
enum class UnkPolicy { none, reserve };

inline UnkPolicy parse_unk_policy(std::string_view s) {
    if (s == "none") return UnkPolicy::none;
    if (s == "reserve") return UnkPolicy::reserve;
    throw validation_error("unknown unk policy '" + std::string(s) + "' (expected none or reserve)");
}

inline std::string_view to_string(UnkPolicy p) { return p == UnkPolicy::none ? "none" : "reserve"; }

inline constexpr std::string_view unk_token = "<unk>";
inline constexpr std::string_view eos_token = "<eos>";

class Vocabulary {
public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens) {
        for (auto& t : tokens) add(std::move(t));
    }

    TokenId add(std::string token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        const auto id = static_cast<TokenId>(tokens_.size());
        index_.emplace(token, id);
        if (token == unk_token) unk_ = id;
        tokens_.push_back(std::move(token));
        return id;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    std::optional<TokenId> unk() const noexcept { return unk_; }

    std::optional<TokenId> find(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw validation_error("token id " + std::to_string(id) + " outside vocabulary of " +
                                   std::to_string(tokens_.size()));
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    // Unknown tokens map to <unk> when present, otherwise fail.
    TokenId encode(const std::string& token) const {
        if (auto id = find(token)) return *id;
        if (unk_) return *unk_;
        throw validation_error("token '" + token + "' is not in the vocabulary and no <unk> entry exists");
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::optional<TokenId> unk_;
};

// Whitespace split, one <eos> appended per line.
inline std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::istringstream line{std::string(text.substr(pos, end - pos))};
        std::string w;
        while (line >> w) out.push_back(w);
        out.emplace_back(eos_token);
        pos = end + 1;
    }
    return out;
}

// One token per byte.
inline std::vector<std::string> tokenize_chars(std::string_view text) {
    std::vector<std::string> out;
    out.reserve(text.size());
    for (char c : text) out.emplace_back(1, c);
    return out;
}

inline std::vector<std::string> tokenize(std::string_view text, TokenMode mode) {
    return mode == TokenMode::word ? tokenize_words(text) : tokenize_chars(text);
}

// Ids in order of first appearance in the training tokens.
inline Vocabulary build_vocab(const std::vector<std::string>& train_tokens, UnkPolicy policy) {
    if (train_tokens.empty()) throw validation_error("cannot build a vocabulary from an empty corpus");
    Vocabulary v;
    for (const auto& t : train_tokens) v.add(t);
    if (policy == UnkPolicy::reserve && !v.unk()) v.add(std::string(unk_token));
    return v;
}

inline std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.encode(t));
    return ids;
}

inline std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(vocab.token(id));
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot read '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Corpus {
    Vocabulary vocab;
    std::vector<TokenId> train;
    std::vector<TokenId> valid;
    std::vector<TokenId> test;
};

inline Corpus load_corpus(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, TokenMode mode, UnkPolicy policy) {
    const auto train_tokens = tokenize(read_text_file(train), mode);
    Corpus c;
    c.vocab = build_vocab(train_tokens, policy);
    c.train = encode(train_tokens, c.vocab);
    c.valid = encode(tokenize(read_text_file(valid), mode), c.vocab);
    c.test = encode(tokenize(read_text_file(test), mode), c.vocab);
    return c;
}

// A BPTT window: inputs and next-token targets, both (length x batch), row-major.
struct SequenceBatch {
    std::size_t len = 0;
    std::size_t batch = 0;
    std::vector<TokenId> inputs;
    std::vector<TokenId> targets;

    std::size_t length() const noexcept { return len; }
    TokenId input(std::size_t t, std::size_t b) const { return inputs[t * batch + b]; }
    TokenId target(std::size_t t, std::size_t b) const { return targets[t * batch + b]; }

    std::vector<TokenId> input_row(std::size_t t) const {
        return {inputs.begin() + static_cast<std::ptrdiff_t>(t * batch),
                inputs.begin() + static_cast<std::ptrdiff_t>((t + 1) * batch)};
    }
};

// Splits the stream into `batch` contiguous columns (dropping the ragged tail) and
// walks them in windows of up to `bptt` steps. A window needs at least two tokens per
// column, one input and its target.
inline std::vector<SequenceBatch> batchify(const std::vector<TokenId>& stream, std::size_t batch, std::size_t bptt) {
    if (batch == 0 || bptt == 0) throw validation_error("batch size and BPTT length must be positive");
    const std::size_t column = stream.size() / batch;
    if (column < 2) {
        throw validation_error("stream of " + std::to_string(stream.size()) + " tokens is too short for batch size " +
                               std::to_string(batch));
    }
    std::vector<SequenceBatch> out;
    for (std::size_t start = 0; start + 1 < column; start += bptt) {
        const std::size_t len = std::min(bptt, column - 1 - start);
        SequenceBatch sb{len, batch, std::vector<TokenId>(len * batch), std::vector<TokenId>(len * batch)};
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t b = 0; b < batch; ++b) {
                sb.inputs[t * batch + b] = stream[b * column + start + t];
                sb.targets[t * batch + b] = stream[b * column + start + t + 1];
            }
        }
        out.push_back(std::move(sb));
    }
    return out;
}

// Cached id stream: "RRNNIDS\0", u32 version, u32 vocab size, u64 count, then count
// u32 ids. All integers little-endian.
namespace id_stream {

inline constexpr std::array<char, 8> magic{'R', 'R', 'N', 'N', 'I', 'D', 'S', '\0'};
inline constexpr std::uint32_t version = 1;

struct Contents {
    std::uint32_t vocab_size = 0;
    std::vector<TokenId> ids;
};

namespace detail {
template <typename T>
void put_le(std::ostream& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}
template <typename T>
T get_le(std::istream& in) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw validation_error("truncated id stream");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}
}  // namespace detail

inline void write(const std::filesystem::path& path, std::uint32_t vocab_size, const std::vector<TokenId>& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("cannot write '" + path.string() + "'");
    out.write(magic.data(), magic.size());
    detail::put_le<std::uint32_t>(out, version);
    detail::put_le<std::uint32_t>(out, vocab_size);
    detail::put_le<std::uint64_t>(out, ids.size());
    for (auto id : ids) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id));
}

inline Contents read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot read '" + path.string() + "'");
    std::array<char, 8> m{};
    in.read(m.data(), m.size());
    if (!in || m != magic) throw validation_error("'" + path.string() + "' is not an id stream");
    if (detail::get_le<std::uint32_t>(in) != version) throw validation_error("unsupported id stream version");
    Contents c;
    c.vocab_size = detail::get_le<std::uint32_t>(in);
    const auto count = detail::get_le<std::uint64_t>(in);
    c.ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id = detail::get_le<std::uint32_t>(in);
        if (id >= c.vocab_size) throw validation_error("id stream entry " + std::to_string(id) + " exceeds vocabulary");
        c.ids.push_back(static_cast<TokenId>(id));
    }
    return c;
}

}  // namespace id_stream

}  // namespace rrnn
