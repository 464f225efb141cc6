#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "raps/core.hpp"

namespace raps {

/// How the initial prototype p and the relation representation r combine:
///
///   uas         w1 p + w2 r               free (w1, w2)
///   cas         w1 p + (1 - w1) r         free w1
///   uam         W1 p + W2 r               free W1, W2 (D x D each)
///   cam         W1 p + (I - W1) r         free W1
///   direct_add  p + r                     nothing free
///
/// The constrained modes hold w1 + w2 = 1 and W1 + W2 = I through the
/// parameterization itself, so no optimizer step can violate them.
enum class FusionMode { uas, cas, uam, cam, direct_add };

inline std::string_view to_string(FusionMode mode) {
    switch (mode) {
    case FusionMode::uas: return "uas";
    case FusionMode::cas: return "cas";
    case FusionMode::uam: return "uam";
    case FusionMode::cam: return "cam";
    case FusionMode::direct_add: return "add";
    }
    return "?";
}

inline FusionMode parse_fusion_mode(std::string_view text) {
    if (text == "uas") return FusionMode::uas;
    if (text == "cas") return FusionMode::cas;
    if (text == "uam") return FusionMode::uam;
    if (text == "cam") return FusionMode::cam;
    if (text == "add") return FusionMode::direct_add;
    throw Error(Errc::usage, "unknown fusion mode '" + std::string(text) + "' (expected uas|cas|uam|cam|add)");
}

inline std::size_t free_param_count(FusionMode mode, std::size_t dim) {
    switch (mode) {
    case FusionMode::uas: return 2;
    case FusionMode::cas: return 1;
    case FusionMode::uam: return 2 * dim * dim;
    case FusionMode::cam: return dim * dim;
    case FusionMode::direct_add: return 0;
    }
    return 0;
}

/// Layout of `free`: uas [w1, w2]; cas [w1]; uam [W1, W2] row-major;
/// cam [W1] row-major; direct_add empty. `dim` is the embedding size (2d).
struct FusionParams {
    FusionMode mode = FusionMode::uas;
    std::size_t dim = 0;
    std::vector<double> free;

    bool operator==(const FusionParams&) const = default;
};

/// uas w1 = w2 = 1, cas w1 = 0.5, uam W1 = W2 = 0.5 I, cam W1 = 0.5 I.
inline FusionParams init_fusion(FusionMode mode, std::size_t dim) {
    FusionParams params{mode, dim, std::vector<double>(free_param_count(mode, dim), 0.0)};
    switch (mode) {
    case FusionMode::uas:
        params.free = {1.0, 1.0};
        break;
    case FusionMode::cas:
        params.free = {0.5};
        break;
    case FusionMode::uam:
        for (std::size_t i = 0; i < dim; ++i) {
            params.free[i * dim + i] = 0.5;
            params.free[dim * dim + i * dim + i] = 0.5;
        }
        break;
    case FusionMode::cam:
        for (std::size_t i = 0; i < dim; ++i) params.free[i * dim + i] = 0.5;
        break;
    case FusionMode::direct_add:
        break;
    }
    return params;
}

/// Effective (w1, w2) for the scalar modes; direct_add reports (1, 1).
inline std::pair<double, double> scalar_weights(const FusionParams& params) {
    switch (params.mode) {
    case FusionMode::uas: return {params.free.at(0), params.free.at(1)};
    case FusionMode::cas: return {params.free.at(0), 1.0 - params.free.at(0)};
    case FusionMode::direct_add: return {1.0, 1.0};
    default: throw Error(Errc::usage, "scalar_weights called on a matrix fusion mode");
    }
}

/// Effective (W1, W2), row-major D x D, for every mode (scalars become w I).
inline std::pair<std::vector<double>, std::vector<double>> matrix_weights(const FusionParams& params) {
    const std::size_t n = params.dim;
    std::vector<double> w1(n * n, 0.0);
    std::vector<double> w2(n * n, 0.0);
    switch (params.mode) {
    case FusionMode::uam:
        w1.assign(params.free.begin(), params.free.begin() + static_cast<std::ptrdiff_t>(n * n));
        w2.assign(params.free.begin() + static_cast<std::ptrdiff_t>(n * n), params.free.end());
        break;
    case FusionMode::cam:
        w1 = params.free;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) w2[r * n + c] = (r == c ? 1.0 : 0.0) - w1[r * n + c];
        }
        break;
    default: {
        const auto [a, b] = scalar_weights(params);
        for (std::size_t i = 0; i < n; ++i) {
            w1[i * n + i] = a;
            w2[i * n + i] = b;
        }
    }
    }
    return {std::move(w1), std::move(w2)};
}

inline void validate(const FusionParams& params) {
    if (params.free.size() != free_param_count(params.mode, params.dim)) {
        throw Error(Errc::dim_mismatch, "fusion mode " + std::string(to_string(params.mode)) + " expects " +
                                            std::to_string(free_param_count(params.mode, params.dim)) +
                                            " parameters, got " + std::to_string(params.free.size()));
    }
}

/// Integrated prototype from the free parameters in `free` (layout above).
template <class Real>
Vector<Real> fuse(FusionMode mode, std::size_t dim, std::span<const Real> free, const Vector<Real>& p,
                  const Vector<Real>& r) {
    require_same_dim(p, r);
    if (p.size() != dim) throw Error(Errc::dim_mismatch, "fusion input dimension differs from fusion parameters");
    if (free.size() != free_param_count(mode, dim)) throw Error(Errc::dim_mismatch, "wrong fusion parameter count");

    Vector<Real> out(dim);
    switch (mode) {
    case FusionMode::uas:
        for (std::size_t t = 0; t < dim; ++t) out[t] = free[0] * p[t] + free[1] * r[t];
        break;
    case FusionMode::cas: {
        const Real w2 = Real(1) - free[0];
        for (std::size_t t = 0; t < dim; ++t) out[t] = free[0] * p[t] + w2 * r[t];
        break;
    }
    case FusionMode::uam: {
        const auto a = matvec(free.first(dim * dim), dim, dim, p);
        const auto b = matvec(free.subspan(dim * dim), dim, dim, r);
        for (std::size_t t = 0; t < dim; ++t) out[t] = a[t] + b[t];
        break;
    }
    case FusionMode::cam: {
        std::vector<Real> w2(dim * dim);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t c = 0; c < dim; ++c) w2[i * dim + c] = Real(i == c ? 1 : 0) - free[i * dim + c];
        }
        const auto a = matvec(free, dim, dim, p);
        const auto b = matvec(std::span<const Real>(w2), dim, dim, r);
        for (std::size_t t = 0; t < dim; ++t) out[t] = a[t] + b[t];
        break;
    }
    case FusionMode::direct_add:
        for (std::size_t t = 0; t < dim; ++t) out[t] = p[t] + r[t];
        break;
    }
    return out;
}

inline Embedding fuse(const FusionParams& params, const Embedding& p, const Embedding& r) {
    return fuse<double>(params.mode, params.dim, std::span<const double>(params.free), p, r);
}

struct FusionGradients {
    std::vector<double> params;  // same layout as FusionParams::free
    Embedding p;
    Embedding r;
};

inline FusionGradients fuse_backward(const FusionParams& params, const Embedding& p, const Embedding& r,
                                     const Embedding& upstream) {
    validate(params);
    require_same_dim(p, r);
    require_same_dim(p, upstream);
    const std::size_t n = params.dim;
    const auto& f = params.free;
    const std::span<const double> fs(f);

    FusionGradients g{std::vector<double>(f.size(), 0.0), Embedding(n, 0.0), Embedding(n, 0.0)};
    switch (params.mode) {
    case FusionMode::uas:
        g.params = {dot(upstream, p), dot(upstream, r)};
        g.p = scale(upstream, f[0]);
        g.r = scale(upstream, f[1]);
        break;
    case FusionMode::cas:
        g.params = {dot(upstream, sub(p, r))};
        g.p = scale(upstream, f[0]);
        g.r = scale(upstream, 1.0 - f[0]);
        break;
    case FusionMode::uam:
        add_outer(std::span<double>(g.params).first(n * n), upstream, p);
        add_outer(std::span<double>(g.params).subspan(n * n), upstream, r);
        g.p = matvec_t(fs.first(n * n), n, n, upstream);
        g.r = matvec_t(fs.subspan(n * n), n, n, upstream);
        break;
    case FusionMode::cam: {
        add_outer(std::span<double>(g.params), upstream, sub(p, r));
        g.p = matvec_t(fs, n, n, upstream);
        g.r = sub(upstream, g.p);
        break;
    }
    case FusionMode::direct_add:
        g.p = upstream;
        g.r = upstream;
        break;
    }
    return g;
}

}  // namespace raps
