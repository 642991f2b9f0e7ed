#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rrnn/autodiff.hpp"
#include "rrnn/errors.hpp"
#include "rrnn/tensor.hpp"

// Differentiable operations over rrnn::ad::Var. Every forward result is checked for
// finiteness by Tape::record; every backward rule accumulates into its input grads.
namespace rrnn::ad {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw shape_error(std::string(op) + " expects a matrix, got " + to_string(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw shape_error(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                          " differ");
    }
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_matrix(av, "matmul");
    detail::require_matrix(bv, "matmul");
    if (av.cols() != bv.rows()) {
        throw shape_error("matmul: inner dimensions differ for " + to_string(av.shape()) + " and " +
                          to_string(bv.shape()));
    }
    Tensor out = Tensor::matrix(av.rows(), bv.cols());
    blas::gemm_acc(av, false, bv, false, out);
    return a.tape().record(std::move(out), {a, b},
                           [](const BackwardContext& ctx) {
                               if (ctx.in_grads[0]) blas::gemm_acc(ctx.out_grad, false, *ctx.in_values[1], true, *ctx.in_grads[0]);
                               if (ctx.in_grads[1]) blas::gemm_acc(*ctx.in_values[0], true, ctx.out_grad, false, *ctx.in_grads[1]);
                           },
                           "matmul");
}

inline Var add(const Var& a, const Var& b) {
    detail::require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return a.tape().record(std::move(out), {a, b},
                           [](const BackwardContext& ctx) {
                               const auto g = ctx.out_grad.data();
                               for (auto* dst : ctx.in_grads) {
                                   if (!dst) continue;
                                   auto d = dst->data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                               }
                           },
                           "add");
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return a.tape().record(std::move(out), {a, b},
                           [](const BackwardContext& ctx) {
                               const auto g = ctx.out_grad.data();
                               if (auto* da = ctx.in_grads[0]) {
                                   auto d = da->data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                               }
                               if (auto* db = ctx.in_grads[1]) {
                                   auto d = db->data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
                               }
                           },
                           "sub");
}

inline Var mul(const Var& a, const Var& b) {
    detail::require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return a.tape().record(std::move(out), {a, b},
                           [](const BackwardContext& ctx) {
                               const auto g = ctx.out_grad.data();
                               const auto av = ctx.in_values[0]->data();
                               const auto bv = ctx.in_values[1]->data();
                               if (auto* da = ctx.in_grads[0]) {
                                   auto d = da->data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
                               }
                               if (auto* db = ctx.in_grads[1]) {
                                   auto d = db->data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
                               }
                           },
                           "mul");
}

// m (d x n) + bias (d) broadcast over columns; the only broadcast supported.
inline Var add_bias(const Var& m, const Var& bias) {
    const Tensor& mv = m.value();
    const Tensor& bv = bias.value();
    detail::require_matrix(mv, "add_bias");
    if (bv.rank() != 1 || bv.size() != mv.rows()) {
        throw shape_error("add_bias: bias " + to_string(bv.shape()) + " does not broadcast over " +
                          to_string(mv.shape()));
    }
    Tensor out = mv;
    const std::size_t cols = mv.cols();
    for (std::size_t r = 0; r < mv.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) out(r, c) += bv[r];
    return m.tape().record(std::move(out), {m, bias},
                           [](const BackwardContext& ctx) {
                               const Tensor& g = ctx.out_grad;
                               if (auto* dm = ctx.in_grads[0]) {
                                   auto d = dm->data();
                                   const auto gd = g.data();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i];
                               }
                               if (auto* db = ctx.in_grads[1]) {
                                   for (std::size_t r = 0; r < g.rows(); ++r) {
                                       double acc = 0.0;
                                       for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c);
                                       (*db)[r] += acc;
                                   }
                               }
                           },
                           "add_bias");
}

inline Var tanh(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = std::tanh(v);
    return a.tape().record(std::move(out), {a},
                           [](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               auto d = ctx.in_grads[0]->data();
                               const auto y = ctx.out_value.data();
                               const auto g = ctx.out_grad.data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
                           },
                           "tanh");
}

inline Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = detail::sigmoid(v);
    return a.tape().record(std::move(out), {a},
                           [](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               auto d = ctx.in_grads[0]->data();
                               const auto y = ctx.out_value.data();
                               const auto g = ctx.out_grad.data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
                           },
                           "sigmoid");
}

// 1 - a
inline Var one_minus(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = 1.0 - v;
    return a.tape().record(std::move(out), {a},
                           [](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               auto d = ctx.in_grads[0]->data();
                               const auto g = ctx.out_grad.data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
                           },
                           "one_minus");
}

inline Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return a.tape().record(std::move(out), {a},
                           [factor](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               auto d = ctx.in_grads[0]->data();
                               const auto g = ctx.out_grad.data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
                           },
                           "scale");
}

// Multiplies by a fixed, pre-sampled mask (dropout). The mask carries the 1/(1-p) scale.
inline Var apply_mask(const Var& a, Tensor mask) {
    detail::require_same(a.value(), mask, "apply_mask");
    Tensor out = a.value();
    const auto m = mask.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= m[i];
    return a.tape().record(std::move(out), {a},
                           [mask = std::move(mask)](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               auto d = ctx.in_grads[0]->data();
                               const auto g = ctx.out_grad.data();
                               const auto m = mask.data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * m[i];
                           },
                           "apply_mask");
}

inline Var sum(const Var& a) {
    const auto v = a.value().data();
    double acc = 0.0;
    for (double x : v) acc += x;
    return a.tape().record(Tensor::scalar(acc), {a},
                           [](const BackwardContext& ctx) {
                               if (!ctx.in_grads[0]) return;
                               const double g = ctx.out_grad[0];
                               for (auto& d : ctx.in_grads[0]->values()) d += g;
                           },
                           "sum");
}

// Selects `rows` of a matrix, keeping the first `cols` columns. The backward rule
// scatter-adds into the source, so repeated or aliased rows accumulate.
inline Var gather_rows(const Var& src, std::vector<std::size_t> rows, std::size_t cols) {
    const Tensor& sv = src.value();
    detail::require_matrix(sv, "gather_rows");
    if (cols == 0 || cols > sv.cols()) {
        throw shape_error("gather_rows: column extent " + std::to_string(cols) + " outside " + to_string(sv.shape()));
    }
    if (rows.empty()) throw shape_error("gather_rows: empty row list");
    for (auto r : rows) {
        if (r >= sv.rows()) throw shape_error("gather_rows: row " + std::to_string(r) + " outside " + to_string(sv.shape()));
    }
    Tensor out = Tensor::matrix(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(sv.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * sv.cols()), cols,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * cols));
    return src.tape().record(std::move(out), {src},
                             [rows = std::move(rows), cols](const BackwardContext& ctx) {
                                 Tensor* d = ctx.in_grads[0];
                                 if (!d) return;
                                 const std::size_t ld = d->cols();
                                 for (std::size_t i = 0; i < rows.size(); ++i) {
                                     double* dst = d->data().data() + rows[i] * ld;
                                     const double* g = ctx.out_grad.data().data() + i * cols;
                                     for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c];
                                 }
                             },
                             "gather_rows");
}

// Selects entries of a vector by index; backward scatter-adds.
inline Var gather(const Var& src, std::vector<std::size_t> index) {
    const Tensor& sv = src.value();
    if (sv.rank() != 1) throw shape_error("gather expects a vector, got " + to_string(sv.shape()));
    if (index.empty()) throw shape_error("gather: empty index list");
    std::vector<double> vals;
    vals.reserve(index.size());
    for (auto i : index) {
        if (i >= sv.size()) throw shape_error("gather: index " + std::to_string(i) + " outside " + to_string(sv.shape()));
        vals.push_back(sv[i]);
    }
    return src.tape().record(Tensor::vector(std::move(vals)), {src},
                             [index = std::move(index)](const BackwardContext& ctx) {
                                 Tensor* d = ctx.in_grads[0];
                                 if (!d) return;
                                 for (std::size_t i = 0; i < index.size(); ++i) (*d)[index[i]] += ctx.out_grad[i];
                             },
                             "gather");
}

// Embedding lookup: table is (vocab x emb); returns (emb x ids.size()) with column b
// equal to row ids[b] of the table.
inline Var embedding(const Var& table, std::vector<std::int32_t> ids) {
    const Tensor& tv = table.value();
    detail::require_matrix(tv, "embedding");
    const std::size_t emb = tv.cols();
    Tensor out = Tensor::matrix(emb, ids.size());
    for (std::size_t b = 0; b < ids.size(); ++b) {
        if (ids[b] < 0 || static_cast<std::size_t>(ids[b]) >= tv.rows()) {
            throw validation_error("embedding: token id " + std::to_string(ids[b]) + " outside vocabulary of " +
                                   std::to_string(tv.rows()));
        }
        for (std::size_t e = 0; e < emb; ++e) out(e, b) = tv(static_cast<std::size_t>(ids[b]), e);
    }
    return table.tape().record(std::move(out), {table},
                               [ids = std::move(ids)](const BackwardContext& ctx) {
                                   Tensor* d = ctx.in_grads[0];
                                   if (!d) return;
                                   const std::size_t emb = d->cols();
                                   for (std::size_t b = 0; b < ids.size(); ++b)
                                       for (std::size_t e = 0; e < emb; ++e)
                                           (*d)(static_cast<std::size_t>(ids[b]), e) += ctx.out_grad(e, b);
                               },
                               "embedding");
}

// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no operands");
    const std::size_t rows = parts.front().value().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != rows) {
            throw shape_error("concat_cols: " + to_string(p.value().shape()) + " does not stack with " +
                              to_string(parts.front().value().shape()));
        }
        total += p.value().cols();
    }
    Tensor out = Tensor::matrix(rows, total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
        off += v.cols();
    }
    return parts.front().tape().record(std::move(out), parts,
                                       [](const BackwardContext& ctx) {
                                           std::size_t off = 0;
                                           for (std::size_t i = 0; i < ctx.in_values.size(); ++i) {
                                               const std::size_t w = ctx.in_values[i]->cols();
                                               if (Tensor* d = ctx.in_grads[i]) {
                                                   for (std::size_t r = 0; r < d->rows(); ++r)
                                                       for (std::size_t c = 0; c < w; ++c)
                                                           (*d)(r, c) += ctx.out_grad(r, off + c);
                                               }
                                               off += w;
                                           }
                                       },
                                       "concat_cols");
}

// Mean over columns of -log softmax(logits[:, n])[targets[n]]; logits is (vocab x N).
inline Var cross_entropy(const Var& logits, std::vector<std::int32_t> targets) {
    const Tensor& lv = logits.value();
    detail::require_matrix(lv, "cross_entropy");
    const std::size_t vocab = lv.rows();
    const std::size_t n = lv.cols();
    if (targets.size() != n) {
        throw shape_error("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                          to_string(lv.shape()));
    }
    Tensor probs = Tensor::matrix(vocab, n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const auto t = targets[c];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw validation_error("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                                   std::to_string(vocab));
        }
        double mx = lv(0, c);
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, lv(v, c));
        double z = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            probs(v, c) = std::exp(lv(v, c) - mx);
            z += probs(v, c);
        }
        for (std::size_t v = 0; v < vocab; ++v) probs(v, c) /= z;
        total += mx + std::log(z) - lv(static_cast<std::size_t>(t), c);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return logits.tape().record(Tensor::scalar(total * inv_n), {logits},
                                [probs = std::move(probs), targets = std::move(targets), inv_n](const BackwardContext& ctx) {
                                    Tensor* d = ctx.in_grads[0];
                                    if (!d) return;
                                    const double g = ctx.out_grad[0] * inv_n;
                                    for (std::size_t c = 0; c < probs.cols(); ++c) {
                                        for (std::size_t v = 0; v < probs.rows(); ++v) (*d)(v, c) += g * probs(v, c);
                                        (*d)(static_cast<std::size_t>(targets[c]), c) -= g;
                                    }
                                },
                                "cross_entropy");
}

}  // namespace rrnn::ad
