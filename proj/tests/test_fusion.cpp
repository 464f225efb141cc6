#include <catch2/catch_amalgamated.hpp>

#include "raps/raps.hpp"
#include "support/oracles.hpp"

using namespace raps;
namespace rt = raps::testing;

namespace {

const FusionMode kAllModes[] = {FusionMode::uas, FusionMode::cas, FusionMode::uam, FusionMode::cam,
                                FusionMode::direct_add};

FusionParams random_params(Rng& rng, FusionMode mode, std::size_t dim) {
    auto params = init_fusion(mode, dim);
    for (auto& w : params.free) w += 0.3 * standard_normal(rng);
    return params;
}

// W1 p + W2 r with plain loops over the effective matrices.
Embedding scalar_reference(const FusionParams& params, const Embedding& p, const Embedding& r) {
    const auto [w1, w2] = matrix_weights(params);
    const std::size_t n = params.dim;
    Embedding out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < n; ++c) out[i] += w1[i * n + c] * p[c] + w2[i * n + c] * r[c];
    }
    return out;
}

}  // namespace

TEST_CASE("worked fusion examples", "[fusion]") {
    SECTION("unconstrained scalars") {
        FusionParams params{FusionMode::uas, 2, {0.5, 2.0}};
        const auto out = fuse(params, {1, 1}, {1, -1});
        CHECK(out[0] == Catch::Approx(2.5));
        CHECK(out[1] == Catch::Approx(-1.5));
    }
    SECTION("constrained scalar") {
        FusionParams params{FusionMode::cas, 2, {0.3}};
        const auto out = fuse(params, {10, 0}, {0, 10});
        CHECK(out[0] == Catch::Approx(3.0));
        CHECK(out[1] == Catch::Approx(7.0));
    }
    SECTION("constrained matrix at its initial value averages") {
        const auto params = init_fusion(FusionMode::cam, 3);
        const auto out = fuse(params, {2, 4, -6}, {0, 2, 2});
        CHECK(out == Embedding{1, 3, -2});
    }
    SECTION("direct addition") {
        const auto params = init_fusion(FusionMode::direct_add, 2);
        CHECK(fuse(params, {1, 2}, {3, 4}) == Embedding{4, 6});
    }
}

TEST_CASE("initial fusion parameters", "[fusion]") {
    CHECK(init_fusion(FusionMode::uas, 4).free == std::vector<double>{1, 1});
    CHECK(init_fusion(FusionMode::cas, 4).free == std::vector<double>{0.5});
    const auto uam = init_fusion(FusionMode::uam, 2);
    CHECK(uam.free == std::vector<double>{0.5, 0, 0, 0.5, 0.5, 0, 0, 0.5});
    const auto cam = init_fusion(FusionMode::cam, 2);
    CHECK(cam.free == std::vector<double>{0.5, 0, 0, 0.5});
    CHECK(init_fusion(FusionMode::direct_add, 2).free.empty());
}

TEST_CASE("parameter counts", "[fusion]") {
    for (std::size_t d : {1u, 3u, 16u}) {
        const std::size_t dim = 2 * d;
        CHECK(free_param_count(FusionMode::uas, dim) == 2);
        CHECK(free_param_count(FusionMode::cas, dim) == 1);
        CHECK(free_param_count(FusionMode::uam, dim) == 2 * dim * dim);
        CHECK(free_param_count(FusionMode::cam, dim) == dim * dim);
        CHECK(free_param_count(FusionMode::direct_add, dim) == 0);
    }
}

TEST_CASE("mode names round-trip", "[fusion]") {
    for (auto mode : kAllModes) CHECK(parse_fusion_mode(to_string(mode)) == mode);
    CHECK_THROWS_AS(parse_fusion_mode("mix"), Error);
}

TEST_CASE("fusion agrees with a scalar reference", "[fusion][property]") {
    Rng rng(21);
    for (auto mode : kAllModes) {
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t dim = 1 + uniform_index(rng, 8);
            const auto params = random_params(rng, mode, dim);
            const auto p = rt::random_vector(rng, dim);
            const auto r = rt::random_vector(rng, dim);
            const auto got = fuse(params, p, r);
            const auto want = scalar_reference(params, p, r);
            for (std::size_t t = 0; t < dim; ++t) CHECK(std::fabs(got[t] - want[t]) <= 1e-12);
        }
    }
}

TEST_CASE("constraints hold for any parameter value", "[fusion][property]") {
    Rng rng(22);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t dim = 1 + uniform_index(rng, 6);
        const auto cas = random_params(rng, FusionMode::cas, dim);
        const auto [a, b] = scalar_weights(cas);
        CHECK(std::fabs(a + b - 1.0) <= 1e-12);

        const auto cam = random_params(rng, FusionMode::cam, dim);
        const auto [w1, w2] = matrix_weights(cam);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t c = 0; c < dim; ++c) {
                CHECK(std::fabs(w1[i * dim + c] + w2[i * dim + c] - (i == c ? 1.0 : 0.0)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("constrained forms embed in the unconstrained ones", "[fusion][property]") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t dim = 1 + uniform_index(rng, 6);
        const auto p = rt::random_vector(rng, dim);
        const auto r = rt::random_vector(rng, dim);

        const auto cas = random_params(rng, FusionMode::cas, dim);
        const FusionParams as_uas{FusionMode::uas, dim, {cas.free[0], 1.0 - cas.free[0]}};
        const auto [w1, w2] = matrix_weights(as_uas);
        FusionParams as_uam{FusionMode::uam, dim, w1};
        as_uam.free.insert(as_uam.free.end(), w2.begin(), w2.end());

        const auto a = fuse(cas, p, r);
        const auto b = fuse(as_uas, p, r);
        const auto c = fuse(as_uam, p, r);
        for (std::size_t t = 0; t < dim; ++t) {
            CHECK(std::fabs(a[t] - b[t]) <= 1e-12);
            CHECK(std::fabs(b[t] - c[t]) <= 1e-12);
        }
    }
}

TEST_CASE("fusion is linear in p and r", "[fusion][property]") {
    Rng rng(24);
    for (auto mode : kAllModes) {
        const std::size_t dim = 4;
        const auto params = random_params(rng, mode, dim);
        const auto p1 = rt::random_vector(rng, dim), p2 = rt::random_vector(rng, dim);
        const auto r1 = rt::random_vector(rng, dim), r2 = rt::random_vector(rng, dim);
        const double lam = standard_normal(rng);
        const auto lhs = fuse(params, add(p1, scale(p2, lam)), add(r1, scale(r2, lam)));
        const auto rhs = add(fuse(params, p1, r1), scale(fuse(params, p2, r2), lam));
        for (std::size_t t = 0; t < dim; ++t) CHECK(std::fabs(lhs[t] - rhs[t]) <= 1e-12);
    }
}

TEST_CASE("fusion backward matches central differences", "[fusion][gradient]") {
    Rng rng(25);
    for (auto mode : kAllModes) {
        const std::size_t dim = 3;
        const auto params = random_params(rng, mode, dim);
        const auto p = rt::random_vector(rng, dim);
        const auto r = rt::random_vector(rng, dim);
        const auto up = rt::random_vector(rng, dim);
        const auto g = fuse_backward(params, p, r, up);

        std::vector<double> x = params.free;
        x.insert(x.end(), p.begin(), p.end());
        x.insert(x.end(), r.begin(), r.end());
        std::vector<double> analytic = g.params;
        analytic.insert(analytic.end(), g.p.begin(), g.p.end());
        analytic.insert(analytic.end(), g.r.begin(), g.r.end());

        const std::size_t nf = params.free.size();
        const auto numeric = rt::finite_difference_gradient(
            [&](std::span<const rt::HighPrecision> v) {
                const Vector<rt::HighPrecision> pv(v.begin() + nf, v.begin() + nf + dim);
                const Vector<rt::HighPrecision> rv(v.begin() + nf + dim, v.end());
                const auto out = fuse<rt::HighPrecision>(mode, dim, v.first(nf), pv, rv);
                rt::HighPrecision s = 0;
                for (std::size_t t = 0; t < dim; ++t) s += up[t] * out[t];
                return s;
            },
            x);
        INFO("mode " << to_string(mode));
        CHECK(rt::max_relative_error(analytic, numeric) <= 1e-8);
    }
}

TEST_CASE("scalar backward identities", "[fusion][gradient]") {
    const Embedding p{1, 2}, r{3, -1}, up{0.5, 2};
    const auto uas = fuse_backward(FusionParams{FusionMode::uas, 2, {2, 3}}, p, r, up);
    CHECK(uas.params == std::vector<double>{4.5, -0.5});
    CHECK(uas.p == Embedding{1, 4});
    CHECK(uas.r == Embedding{1.5, 6});
    const auto cas = fuse_backward(FusionParams{FusionMode::cas, 2, {0.25}}, p, r, up);
    CHECK(cas.params == std::vector<double>{5.0});
    CHECK(cas.r == Embedding{0.375, 1.5});
}

TEST_CASE("wrong parameter count is rejected", "[fusion]") {
    FusionParams params{FusionMode::uam, 2, {1, 0, 0, 1}};
    CHECK_THROWS_AS(validate(params), Error);
    CHECK_THROWS_AS(fuse(params, {1, 1}, {1, 1}), Error);
    CHECK_THROWS_AS(fuse(init_fusion(FusionMode::uas, 2), {1, 1}, {1, 1, 1}), Error);
}
