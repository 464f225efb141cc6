#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "raps/error.hpp"

namespace raps {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Half-open token interval [begin, end).
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const Span&) const = default;
};

/// Surface name and knowledge-base id of an entity mention. Carried only so
/// corpus files round-trip; the model never reads it.
struct EntityRef {
    std::string name;
    std::string kb_id;

    bool operator==(const EntityRef&) const = default;
};

/// A sentence with a head and a tail entity mention and the relation
/// holding between them. `id` is the stable corpus identity used for
/// support/query disjointness and precomputed-embedding lookup.
struct Instance {
    std::string id;
    std::vector<std::string> tokens;
    Span head;
    Span tail;
    std::string relation_id;
    EntityRef head_ref;
    EntityRef tail_ref;

    bool operator==(const Instance&) const = default;
};

struct RelationInfo {
    std::string relation_id;
    std::string name;
    std::string description;

    bool operator==(const RelationInfo&) const = default;
};

struct EpisodeConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_per_episode = 5;
    std::uint64_t seed = 0;
    /// Draw queries round-robin per class instead of from the pooled remainder.
    bool stratified_queries = false;
};

/// One N-way K-shot task.
struct Episode {
    std::vector<std::string> relation_ids;
    std::vector<RelationInfo> relations;         // parallel to relation_ids
    std::vector<std::vector<Instance>> support;  // N x K
    std::vector<Instance> queries;
    std::vector<std::size_t> query_labels;

    std::size_t n_way() const { return relation_ids.size(); }
    std::size_t k_shot() const { return support.empty() ? 0 : support.front().size(); }
};

inline void validate(const Span& span, std::size_t length, std::string_view what) {
    if (span.begin >= span.end || span.end > length) {
        throw Error(Errc::span_out_of_range,
                    std::string(what) + " span [" + std::to_string(span.begin) + "," +
                        std::to_string(span.end) + ") invalid for " + std::to_string(length) +
                        " tokens");
    }
}

inline void validate(const Instance& inst) {
    if (inst.tokens.empty()) {
        throw Error(Errc::malformed_input, "instance '" + inst.id + "' has no tokens");
    }
    validate(inst.head, inst.tokens.size(), "head");
    validate(inst.tail, inst.tokens.size(), "tail");
    if (inst.head == inst.tail) {
        throw Error(Errc::malformed_input, "instance '" + inst.id + "' has identical head and tail spans");
    }
    if (inst.relation_id.empty()) {
        throw Error(Errc::malformed_input, "instance '" + inst.id + "' has empty relation id");
    }
}

inline void validate(const EpisodeConfig& cfg) {
    if (cfg.n_way < 2) throw Error(Errc::usage, "n_way must be >= 2");
    if (cfg.k_shot < 1) throw Error(Errc::usage, "k_shot must be >= 1");
    if (cfg.q_per_episode < 1) throw Error(Errc::usage, "q_per_episode must be >= 1");
}

// ---------------------------------------------------------------------------
// Dense vector arithmetic. Embeddings are plain std::vector<Real>; Real is
// double everywhere except the extended-precision gradient oracles.
// ---------------------------------------------------------------------------

template <class Real = double>
using Vector = std::vector<Real>;

using Embedding = Vector<double>;

template <class Real>
void require_same_dim(const Vector<Real>& a, const Vector<Real>& b) {
    if (a.size() != b.size()) {
        throw Error(Errc::dim_mismatch,
                    "dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

template <class Real>
Real dot(const Vector<Real>& a, const Vector<Real>& b) {
    require_same_dim(a, b);
    Real acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class Real>
Vector<Real> add(const Vector<Real>& a, const Vector<Real>& b) {
    require_same_dim(a, b);
    Vector<Real> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class Real>
Vector<Real> sub(const Vector<Real>& a, const Vector<Real>& b) {
    require_same_dim(a, b);
    Vector<Real> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <class Real>
Vector<Real> scale(const Vector<Real>& a, Real s) {
    Vector<Real> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    return out;
}

/// y += s * x
template <class Real>
void axpy(Real s, const Vector<Real>& x, Vector<Real>& y) {
    require_same_dim(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

template <class Real>
Real euclidean_distance(const Vector<Real>& a, const Vector<Real>& b) {
    require_same_dim(a, b);
    Real acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Real diff = a[i] - b[i];
        acc += diff * diff;
    }
    using std::sqrt;
    return sqrt(acc);
}

/// Tree summation; error grows with log(n) instead of n.
template <class Real>
Real pairwise_sum(std::span<const Real> xs) {
    if (xs.size() <= 4) {
        Real acc = 0;
        for (Real x : xs) acc += x;
        return acc;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// Row-major (rows x cols) matrix times vector.
template <class Real>
Vector<Real> matvec(std::span<const Real> m, std::size_t rows, std::size_t cols, const Vector<Real>& x) {
    if (x.size() != cols || m.size() != rows * cols) {
        throw Error(Errc::dim_mismatch, "matvec shape mismatch");
    }
    Vector<Real> out(rows, Real(0));
    for (std::size_t r = 0; r < rows; ++r) {
        Real acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += m[r * cols + c] * x[c];
        out[r] = acc;
    }
    return out;
}

/// Transposed product: m^T x for row-major (rows x cols) m.
template <class Real>
Vector<Real> matvec_t(std::span<const Real> m, std::size_t rows, std::size_t cols, const Vector<Real>& x) {
    if (x.size() != rows || m.size() != rows * cols) {
        throw Error(Errc::dim_mismatch, "matvec_t shape mismatch");
    }
    Vector<Real> out(cols, Real(0));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c] * x[r];
    }
    return out;
}

/// g += u v^T into a row-major (u.size() x v.size()) block.
inline void add_outer(std::span<double> g, const Embedding& u, const Embedding& v) {
    for (std::size_t r = 0; r < u.size(); ++r) {
        for (std::size_t c = 0; c < v.size(); ++c) g[r * v.size() + c] += u[r] * v[c];
    }
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

template <class To, class From>
Vector<To> convert(const Vector<From>& v) {
    return Vector<To>(v.begin(), v.end());
}

// ---------------------------------------------------------------------------
// Seeded randomness. The engine is std::mt19937_64; the bounded-integer and
// normal draws are spelled out here so streams do not depend on the standard
// library's distribution implementations.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Uniform integer in [0, n) by rejection.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return static_cast<std::size_t>(x % bound);
}

/// Uniform double in the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Box-Muller, one draw per call (no cached spare).
inline double standard_normal(Rng& rng) {
    const double u1 = uniform_open(rng);
    const double u2 = uniform_open(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Shortest round-trip decimal form.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
    double value = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) {
        throw Error(Errc::malformed_input, "not a number: '" + std::string(text) + "'");
    }
    return value;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace raps
