#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

#include "raps/core.hpp"

namespace raps {

enum class ProtoMode { naive, qia };

inline std::string_view to_string(ProtoMode mode) { return mode == ProtoMode::naive ? "naive" : "qia"; }

inline ProtoMode parse_proto_mode(std::string_view text) {
    if (text == "naive") return ProtoMode::naive;
    if (text == "qia") return ProtoMode::qia;
    throw Error(Errc::usage, "unknown prototype mode '" + std::string(text) + "' (expected naive|qia)");
}

/// N x K support embeddings.
template <class Real = double>
using SupportGrid = std::vector<std::vector<Vector<Real>>>;

/// alpha[i][k]: weight of support k in the prototype of relation i.
template <class Real = double>
struct AttentionWeights {
    std::vector<Vector<Real>> alpha;
};

namespace detail {

template <class Real>
std::size_t grid_dim(const SupportGrid<Real>& support) {
    if (support.empty() || support.front().empty()) {
        throw Error(Errc::insufficient_data, "support grid is empty");
    }
    const std::size_t k = support.front().size();
    const std::size_t dim = support.front().front().size();
    for (const auto& row : support) {
        if (row.size() != k) throw Error(Errc::dim_mismatch, "support grid is not rectangular");
        for (const auto& s : row) {
            if (s.size() != dim) throw Error(Errc::dim_mismatch, "support embeddings differ in dimension");
        }
    }
    return dim;
}

template <class Real>
void check_queries(const std::vector<Vector<Real>>& queries, std::size_t dim) {
    if (queries.empty()) throw Error(Errc::insufficient_data, "query-guided attention needs at least one query");
    for (const auto& q : queries) {
        if (q.size() != dim) throw Error(Errc::dim_mismatch, "query embedding dimension differs from support");
    }
}

/// Stable softmax over one row.
template <class Real>
Vector<Real> softmax(const Vector<Real>& logits) {
    using std::exp;
    const Real top = *std::max_element(logits.begin(), logits.end());
    Vector<Real> out(logits.size());
    Real total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = exp(logits[i] - top);
        total += out[i];
    }
    for (auto& x : out) x /= total;
    return out;
}

/// Mean Euclidean distance from s to every query, pairwise-summed.
template <class Real>
Real mean_distance(const Vector<Real>& s, const std::vector<Vector<Real>>& queries) {
    Vector<Real> dists(queries.size());
    for (std::size_t j = 0; j < queries.size(); ++j) dists[j] = euclidean_distance(s, queries[j]);
    return pairwise_sum(std::span<const Real>(dists)) / static_cast<Real>(queries.size());
}

}  // namespace detail

/// p_i = (1/K) sum_k s_k^i
template <class Real>
std::vector<Vector<Real>> naive_prototype(const SupportGrid<Real>& support) {
    const std::size_t dim = detail::grid_dim(support);
    std::vector<Vector<Real>> protos;
    protos.reserve(support.size());
    for (const auto& row : support) {
        Vector<Real> p(dim, Real(0));
        for (const auto& s : row) {
            for (std::size_t t = 0; t < dim; ++t) p[t] += s[t];
        }
        const Real inv = Real(1) / static_cast<Real>(row.size());
        for (auto& x : p) x *= inv;
        protos.push_back(std::move(p));
    }
    return protos;
}

/// alpha_k^i = softmax_k( -(1/|Q|) sum_j ||s_k^i - q_j|| ), computed per relation.
template <class Real>
AttentionWeights<Real> qia_weights(const SupportGrid<Real>& support, const std::vector<Vector<Real>>& queries) {
    detail::check_queries(queries, detail::grid_dim(support));
    AttentionWeights<Real> out;
    out.alpha.reserve(support.size());
    for (const auto& row : support) {
        Vector<Real> logits(row.size());
        for (std::size_t k = 0; k < row.size(); ++k) logits[k] = -detail::mean_distance(row[k], queries);
        out.alpha.push_back(detail::softmax(logits));
    }
    return out;
}

/// p_i = sum_k alpha_k^i s_k^i for given weights.
template <class Real>
std::vector<Vector<Real>> weighted_prototype(const SupportGrid<Real>& support, const AttentionWeights<Real>& w) {
    const std::size_t dim = detail::grid_dim(support);
    std::vector<Vector<Real>> protos;
    protos.reserve(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
        Vector<Real> p(dim, Real(0));
        for (std::size_t k = 0; k < support[i].size(); ++k) {
            for (std::size_t t = 0; t < dim; ++t) p[t] += w.alpha[i][k] * support[i][k][t];
        }
        protos.push_back(std::move(p));
    }
    return protos;
}

template <class Real>
std::vector<Vector<Real>> qia_prototype(const SupportGrid<Real>& support, const std::vector<Vector<Real>>& queries) {
    return weighted_prototype(support, qia_weights(support, queries));
}

struct PrototypeGradients {
    SupportGrid<double> support;
    std::vector<Embedding> queries;
};

inline PrototypeGradients naive_backward(const SupportGrid<double>& support, std::size_t n_queries,
                                         const std::vector<Embedding>& upstream) {
    const std::size_t dim = detail::grid_dim(support);
    PrototypeGradients g;
    g.queries.assign(n_queries, Embedding(dim, 0.0));
    g.support.resize(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
        const double inv = 1.0 / static_cast<double>(support[i].size());
        g.support[i].assign(support[i].size(), scale(upstream.at(i), inv));
    }
    return g;
}

/// Backward pass through qia_prototype. `upstream[i]` is d(loss)/d(p_i).
///
/// With z_k = -(1/Q) sum_j ||s_k - q_j|| and alpha = softmax(z):
///   dL/dz_k   = alpha_k (g.s_k - g.p)
///   dL/ds_k   = alpha_k g - (dL/dz_k / Q) sum_j (s_k - q_j)/||s_k - q_j||
///   dL/dq_j  += (dL/dz_k / Q) (s_k - q_j)/||s_k - q_j||
/// A zero distance contributes a zero subgradient.
inline PrototypeGradients qia_backward(const SupportGrid<double>& support, const std::vector<Embedding>& queries,
                                       const std::vector<Embedding>& upstream) {
    const std::size_t dim = detail::grid_dim(support);
    detail::check_queries(queries, dim);
    if (upstream.size() != support.size()) throw Error(Errc::dim_mismatch, "one cotangent per prototype expected");

    const auto weights = qia_weights(support, queries);
    const auto protos = weighted_prototype(support, weights);
    const double inv_q = 1.0 / static_cast<double>(queries.size());

    PrototypeGradients g;
    g.queries.assign(queries.size(), Embedding(dim, 0.0));
    g.support.resize(support.size());

    for (std::size_t i = 0; i < support.size(); ++i) {
        const auto& gi = upstream[i];
        const double g_dot_p = dot(gi, protos[i]);
        g.support[i].reserve(support[i].size());
        for (std::size_t k = 0; k < support[i].size(); ++k) {
            const auto& s = support[i][k];
            const double alpha = weights.alpha[i][k];
            const double dz = alpha * (dot(gi, s) - g_dot_p);
            Embedding gs = scale(gi, alpha);
            for (std::size_t j = 0; j < queries.size(); ++j) {
                const double dist = euclidean_distance(s, queries[j]);
                if (dist == 0.0) continue;
                const double c = dz * inv_q / dist;
                for (std::size_t t = 0; t < dim; ++t) {
                    const double diff = s[t] - queries[j][t];
                    gs[t] -= c * diff;
                    g.queries[j][t] += c * diff;
                }
            }
            g.support[i].push_back(std::move(gs));
        }
    }
    return g;
}

}  // namespace raps
