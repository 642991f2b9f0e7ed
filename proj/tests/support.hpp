#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>

#include "dense_reference.hpp"
#include "rrnn/autodiff.hpp"
#include "rrnn/cells.hpp"
#include "rrnn/restriction.hpp"
#include "rrnn/tensor.hpp"

namespace testutil {

inline std::filesystem::path source_path(const std::string& rel) {
    return std::filesystem::path(RRNN_SOURCE_DIR) / rel;
}

// Fresh directory under the system temp dir; removed by the destructor.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("rrnn-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline rrnn::Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double a = 1.0) {
    std::uniform_real_distribution<double> u(-a, a);
    rrnn::Tensor t = rrnn::Tensor::matrix(r, c);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

inline dense::Vec column(const rrnn::Tensor& t, std::size_t b) {
    dense::Vec v(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) v[r] = t(r, b);
    return v;
}

inline dense::Slices slices_of(const rrnn::CellSpec& spec, const rrnn::ParameterPool& pool) {
    std::vector<std::vector<double>> rates(spec.rates.inputs(), std::vector<double>(spec.rates.gates()));
    for (std::size_t i = 0; i < spec.rates.inputs(); ++i)
        for (std::size_t j = 0; j < spec.rates.gates(); ++j) rates[i][j] = spec.rates(i, j);
    return dense::assemble(pool.weight.value.values(), pool.bias.value.values(), pool.weight.value.cols(),
                           spec.hidden_size, {spec.input_size, spec.hidden_size}, rates);
}

struct StepValues {
    rrnn::Tensor h;
    std::optional<rrnn::Tensor> c;
};

// One library step with everything held constant.
inline StepValues library_step(const rrnn::CellSpec& spec, const rrnn::RestrictionPlan& plan,
                               const rrnn::ParameterPool& pool, const rrnn::Tensor& x, const rrnn::Tensor& h,
                               const std::optional<rrnn::Tensor>& c = std::nullopt) {
    rrnn::ad::Tape tape;
    auto cw = rrnn::bind_views(tape.constant(pool.weight.value), tape.constant(pool.bias.value), plan);
    rrnn::CellState st{tape.constant(h), std::nullopt};
    if (c) st.c = tape.constant(*c);
    auto next = rrnn::step(spec, cw, tape.constant(x), st);
    StepValues out{next.h.value(), std::nullopt};
    if (next.c) out.c = next.c->value();
    return out;
}

}  // namespace testutil
