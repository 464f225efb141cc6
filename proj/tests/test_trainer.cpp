#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include "raps/raps.hpp"
#include "support/oracles.hpp"

using namespace raps;
namespace rt = raps::testing;

namespace {

SyntheticCorpus small_synthetic(std::uint64_t seed, std::size_t relations = 8, std::size_t per_relation = 12) {
    SynthConfig cfg;
    cfg.n_relations = relations;
    cfg.per_relation = per_relation;
    cfg.base_dim = 3;
    cfg.noise = 1.0;
    cfg.seed = seed;
    return make_synthetic_corpus(cfg);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.n_way = 3;
    cfg.k_shot = 2;
    cfg.q_size = 3;
    cfg.train_iters = 30;
    cfg.val_iters = 10;
    cfg.eval_every = 10;
    cfg.batch_episodes = 2;
    cfg.learning_rate = 0.05;
    cfg.seed = 3;
    return cfg;
}

// Lookup model over a synthetic corpus's token text.
Model lookup_model(const Corpus& corpus, const TrainConfig& cfg, std::size_t d = 3) {
    return make_model(LookupEncoder(build_vocabulary(corpus), d), cfg.proto, cfg.fusion, derive_seed(cfg.seed, SeedStream::init));
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical", "[trainer]") {
    const auto s = small_synthetic(1);
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        auto cfg = small_config();
        cfg.learning_rate = 0;
        cfg.optimizer = kind;
        auto model = lookup_model(s.corpus, cfg);
        const auto before = flatten_params(model.params);
        EpisodeSampler sampler(s.corpus, episode_config(cfg, SeedStream::train));
        Optimizer opt(kind, model.params.size());
        const double loss = train_step(model, opt, {sampler.next(), sampler.next()}, cfg);
        CHECK(std::isfinite(loss));
        CHECK(same_bits(flatten_params(model.params), before));
    }
}

TEST_CASE("one plain gradient step on a single fusion weight", "[trainer][gradient]") {
    const auto s = small_synthetic(2);
    auto cfg = small_config();
    cfg.fusion = FusionMode::cas;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.learning_rate = 0.01;
    auto model = make_model(PrecomputedEncoder(s.embeddings), cfg.proto, cfg.fusion, 0);
    REQUIRE(model.params.size() == 1);
    model.params.fusion.free[0] = 0.3;

    EpisodeSampler sampler(s.corpus, episode_config(cfg, SeedStream::train));
    const std::vector<Episode> batch{sampler.next(), sampler.next()};
    const auto numeric = rt::finite_difference_gradient(
        [&](std::span<const rt::HighPrecision> w) {
            rt::HighPrecision total = 0;
            for (const auto& ep : batch) total += forward_episode<rt::HighPrecision>(model, w, ep).loss;
            return total;
        },
        {0.3});

    Optimizer opt(OptimizerKind::sgd, 1);
    train_step(model, opt, batch, cfg);
    const double expected = 0.3 - cfg.learning_rate * numeric[0];
    CHECK(std::fabs(model.params.fusion.free[0] - expected) <= 1e-9 * std::max(1.0, std::fabs(numeric[0])));
    CHECK(model.params.fusion.free[0] != 0.3);
}

TEST_CASE("training is deterministic in the seed", "[trainer]") {
    const auto s = small_synthetic(3);
    auto cfg = small_config();
    const auto a = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    const auto b = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    CHECK(same_bits(a.loss_trace, b.loss_trace));
    CHECK(same_bits(flatten_params(a.final_model.params), flatten_params(b.final_model.params)));
    CHECK(a.stream_fingerprint == b.stream_fingerprint);

    cfg.seed = 4;
    const auto c = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    CHECK(!same_bits(a.loss_trace, c.loss_trace));
}

TEST_CASE("parallel episodes give the same update", "[trainer]") {
    const auto s = small_synthetic(4);
    auto cfg = small_config();
    cfg.batch_episodes = 4;
    cfg.train_iters = 10;
    const auto serial = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    cfg.threads = 3;
    const auto parallel = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    REQUIRE(parallel.loss_trace.size() == serial.loss_trace.size());
    for (std::size_t i = 0; i < serial.loss_trace.size(); ++i) {
        CHECK(std::fabs(parallel.loss_trace[i] - serial.loss_trace[i]) <= 1e-9);
    }
}

TEST_CASE("schedule bookkeeping", "[trainer]") {
    const auto s = small_synthetic(5);
    SECTION("zero iterations returns the initial parameters") {
        auto cfg = small_config();
        cfg.train_iters = 0;
        const auto model = lookup_model(s.corpus, cfg);
        const auto res = train(model, s.corpus, s.corpus, cfg);
        CHECK(res.loss_trace.empty());
        CHECK(res.val_trace.empty());
        CHECK(res.final_model.params == model.params);
        CHECK(res.best_model.params == model.params);
    }
    SECTION("one loss per iteration and validation on schedule") {
        auto cfg = small_config();
        cfg.train_iters = 25;
        const auto res = train(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
        CHECK(res.loss_trace.size() == 25);
        REQUIRE(res.val_trace.size() == 3);
        CHECK(res.val_trace[0].iteration == 10);
        CHECK(res.val_trace[1].iteration == 20);
        CHECK(res.val_trace[2].iteration == 25);
        double best = -1;
        for (const auto& v : res.val_trace) best = std::max(best, v.result.accuracy);
        CHECK(res.checkpoint.best_val_accuracy == best);
    }
    SECTION("model modes must match the configuration") {
        auto cfg = small_config();
        auto model = lookup_model(s.corpus, cfg);
        cfg.fusion = FusionMode::cam;
        CHECK_THROWS_AS(Trainer(model, s.corpus, s.corpus, cfg), Error);
    }
    SECTION("invalid settings") {
        auto cfg = small_config();
        cfg.batch_episodes = 0;
        CHECK_THROWS_AS(validate(cfg), Error);
        cfg = small_config();
        cfg.learning_rate = -1;
        CHECK_THROWS_AS(validate(cfg), Error);
    }
}

TEST_CASE("evaluation", "[trainer]") {
    const auto s = small_synthetic(6, 10, 20);
    const EpisodeConfig cfg{5, 1, 5, 123};

    SECTION("constant predictor sits at chance") {
        EpisodeSampler sampler(s.corpus, cfg);
        const auto res = evaluate_predictions(sampler, 2000, [](const Episode& ep) {
            return std::vector<std::size_t>(ep.queries.size(), 0);
        });
        CHECK(res.total == 10000);
        CHECK(res.episodes == 2000);
        CHECK(std::fabs(res.accuracy - 0.2) <= res.half_width);

        EpisodeConfig balanced = cfg;
        balanced.stratified_queries = true;
        EpisodeSampler strat(s.corpus, balanced);
        const auto exact = evaluate_predictions(strat, 100, [](const Episode& ep) {
            return std::vector<std::size_t>(ep.queries.size(), 0);
        });
        CHECK(exact.accuracy == 0.2);
    }
    SECTION("perfect predictions score exactly one") {
        EpisodeSampler sampler(s.corpus, cfg);
        const auto res = evaluate_predictions(sampler, 50, [](const Episode& ep) { return ep.query_labels; });
        CHECK(res.accuracy == 1.0);
    }
    SECTION("same seed, same accuracy") {
        const auto model = make_model(PrecomputedEncoder(s.embeddings), ProtoMode::qia, FusionMode::uas, 0);
        const auto a = evaluate(model, s.corpus, cfg, 40);
        const auto b = evaluate(model, s.corpus, cfg, 40);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.correct == b.correct);
    }
    SECTION("needs at least one episode") {
        EpisodeSampler sampler(s.corpus, cfg);
        CHECK_THROWS_AS(evaluate_predictions(sampler, 0, [](const Episode& ep) { return ep.query_labels; }), Error);
    }
}

TEST_CASE("Wilson interval half-width", "[trainer]") {
    CHECK(wilson_half_width(50, 100) == Catch::Approx(0.0961684696340043617882316842534).epsilon(1e-13));
    CHECK(wilson_half_width(2000, 10000) == Catch::Approx(0.00783919704023548073021597057934).epsilon(1e-13));
    CHECK(wilson_half_width(0, 20) == Catch::Approx(0.0805625790264096773321837047294).epsilon(1e-13));
}

TEST_CASE("config text round trip", "[trainer]") {
    TrainConfig cfg;
    cfg.n_way = 10;
    cfg.k_shot = 5;
    cfg.learning_rate = 3.0e-4;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.proto = ProtoMode::naive;
    cfg.fusion = FusionMode::cam;
    cfg.seed = 18446744073709551615ULL;
    cfg.stratified_queries = true;
    cfg.clip_norm = 0.1;
    const auto text = to_text(cfg);
    CHECK(to_text(parse_config(text)) == text);

    const auto edited = parse_config("# comment\n  k_shot = 3  \n\nfusion=uam # trailing\n", cfg);
    CHECK(edited.k_shot == 3);
    CHECK(edited.fusion == FusionMode::uam);
    CHECK(edited.n_way == 10);

    for (const char* bad : {"nonsense=1", "k_shot=abc", "k_shot", "fusion=mix", "stratified_queries=maybe"}) {
        try {
            (void)parse_config(bad);
            FAIL("expected throw for " << bad);
        } catch (const Error& e) {
            CHECK(e.code() == Errc::usage);
        }
    }
}

TEST_CASE("checkpoint serialization round trip", "[trainer]") {
    const auto s = small_synthetic(7);
    auto cfg = small_config();
    cfg.train_iters = 12;
    Trainer trainer(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    trainer.run();
    const auto ck = trainer.checkpoint();

    std::stringstream buf;
    write_checkpoint(buf, ck);
    const auto back = read_checkpoint(buf);
    CHECK(to_text(back.config) == to_text(ck.config));
    CHECK(back.encoder == ck.encoder);
    CHECK(back.iteration == 12);
    CHECK(same_bits(back.params, ck.params));
    CHECK(same_bits(back.best_params, ck.best_params));
    CHECK(back.best_val_accuracy == ck.best_val_accuracy);
    CHECK(back.rng_state == ck.rng_state);
    CHECK(back.optimizer == ck.optimizer);

    std::stringstream again;
    write_checkpoint(again, back);
    CHECK(again.str() == buf.str());

    std::stringstream junk("NOTACKPT....");
    CHECK_THROWS_AS(read_checkpoint(junk), Error);
    const auto bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(truncated), Error);

    const auto model = restore_model(back, lookup_from_description(back.encoder));
    CHECK(flatten_params(model.params) == back.params);
}

TEST_CASE("resuming from a checkpoint reproduces uninterrupted training", "[trainer]") {
    const auto s = small_synthetic(8);
    auto cfg = small_config();
    cfg.train_iters = 100;
    cfg.eval_every = 20;

    Trainer straight(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    straight.run();

    Trainer first(lookup_model(s.corpus, cfg), s.corpus, s.corpus, cfg);
    first.run_until(50);
    std::stringstream buf;
    write_checkpoint(buf, first.checkpoint());
    const auto ck = read_checkpoint(buf);
    Trainer second(make_model(lookup_from_description(ck.encoder), cfg.proto, cfg.fusion, 999), s.corpus, s.corpus, ck);
    second.run();

    CHECK(second.iteration() == 100);
    CHECK(same_bits(flatten_params(second.model().params), flatten_params(straight.model().params)));
    CHECK(same_bits(flatten_params(second.best_model().params), flatten_params(straight.best_model().params)));
    CHECK(second.best_val_accuracy() == straight.best_val_accuracy());
    std::vector<double> tail(straight.loss_trace().begin() + 50, straight.loss_trace().end());
    CHECK(same_bits(second.loss_trace(), tail));
}

TEST_CASE("ablation wiring", "[trainer]") {
    const auto variants = ablation_variants(FusionMode::cas);
    REQUIRE(variants.size() == 4);
    CHECK(variants[0].proto == ProtoMode::qia);
    CHECK(variants[0].fusion == FusionMode::cas);
    CHECK(variants[1].proto == ProtoMode::naive);
    CHECK(variants[1].fusion == FusionMode::cas);
    CHECK(variants[2].proto == ProtoMode::qia);
    CHECK(variants[2].fusion == FusionMode::direct_add);
    CHECK(variants[3].label == "w/o QIA and APF");
    CHECK(variants[3].proto == ProtoMode::naive);
    CHECK(variants[3].fusion == FusionMode::direct_add);

    const auto s = small_synthetic(9);
    auto cfg = small_config();
    cfg.train_iters = 6;
    const auto cells = run_ablation(PrecomputedEncoder(s.embeddings), s.corpus, s.corpus, s.corpus, cfg, 20);
    REQUIRE(cells.size() == 4);
    for (const auto& cell : cells) {
        CHECK(cell.stream_fingerprint == cells[0].stream_fingerprint);
        CHECK(cell.loss_trace.size() == 6);
        CHECK(cell.result.total == 20 * cfg.q_size);
    }
    CHECK(cells[3].proto == ProtoMode::naive);
    CHECK(cells[3].fusion == FusionMode::direct_add);

    const auto fusion = fusion_variants(ProtoMode::naive);
    REQUIRE(fusion.size() == 4);
    CHECK(fusion[2].fusion == FusionMode::uam);
    CHECK(fusion[3].proto == ProtoMode::naive);
}

TEST_CASE("constrained fusion stays constrained through training", "[trainer][property]") {
    const auto s = small_synthetic(10);
    for (auto mode : {FusionMode::cas, FusionMode::cam}) {
        auto cfg = small_config();
        cfg.fusion = mode;
        cfg.learning_rate = 0.02;
        auto model = make_model(PrecomputedEncoder(s.embeddings), cfg.proto, mode, 0);
        EpisodeSampler sampler(s.corpus, episode_config(cfg, SeedStream::train));
        Optimizer opt(cfg.optimizer, model.params.size());
        for (int step = 0; step < 40; ++step) {
            train_step(model, opt, {sampler.next(), sampler.next()}, cfg);
            const auto [w1, w2] = matrix_weights(model.params.fusion);
            const std::size_t n = model.params.fusion.dim;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < n; ++c) CHECK(w1[i * n + c] + w2[i * n + c] == (i == c ? 1.0 : 0.0));
            }
        }
        CHECK(model.params.fusion.free != init_fusion(mode, model.embedding_dim()).free);
    }
}

TEST_CASE("loss falls on a separable corpus", "[trainer]") {
    SynthConfig sc;
    sc.n_relations = 10;
    sc.per_relation = 30;
    sc.base_dim = 4;
    sc.seed = 11;
    const auto s = make_synthetic_corpus(sc);
    TrainConfig cfg;
    cfg.train_iters = 200;
    cfg.eval_every = 100;
    cfg.val_iters = 20;
    cfg.learning_rate = 0.01;
    cfg.seed = 5;
    const auto res = train(lookup_model(s.corpus, cfg, 4), s.corpus, s.corpus, cfg);
    const std::size_t tenth = res.loss_trace.size() / 10;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < tenth; ++i) {
        first += res.loss_trace[i];
        last += res.loss_trace[res.loss_trace.size() - 1 - i];
    }
    CHECK(last < first);
}

TEST_CASE("non-finite loss aborts the step", "[trainer]") {
    const auto s = small_synthetic(12);
    auto cfg = small_config();
    auto model = make_model(PrecomputedEncoder(s.embeddings), cfg.proto, cfg.fusion, 0);
    model.params.fusion.free[0] = std::numeric_limits<double>::quiet_NaN();
    const auto before = model.params.fusion.free[1];
    EpisodeSampler sampler(s.corpus, episode_config(cfg, SeedStream::train));
    Optimizer opt(cfg.optimizer, model.params.size());
    try {
        train_step(model, opt, {sampler.next()}, cfg);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::non_finite);
        CHECK(exit_code(e.code()) == 3);
    }
    CHECK(model.params.fusion.free[1] == before);
}

TEST_CASE("episodes must match the configured shape", "[trainer]") {
    const auto s = small_synthetic(13);
    auto cfg = small_config();
    auto model = make_model(PrecomputedEncoder(s.embeddings), cfg.proto, cfg.fusion, 0);
    EpisodeSampler sampler(s.corpus, EpisodeConfig{4, 2, 3, 0});
    Optimizer opt(cfg.optimizer, model.params.size());
    CHECK_THROWS_AS(train_step(model, opt, {sampler.next()}, cfg), Error);
    CHECK_THROWS_AS(train_step(model, opt, {}, cfg), Error);
}

TEST_CASE("seed streams are distinct", "[trainer]") {
    const std::uint64_t seed = 42;
    CHECK(derive_seed(seed, SeedStream::train) == seed);
    CHECK(derive_seed(seed, SeedStream::validation) != derive_seed(seed, SeedStream::test));
    CHECK(derive_seed(seed, SeedStream::init) != derive_seed(seed, SeedStream::validation));
    CHECK(derive_seed(seed, SeedStream::init) != seed);
}
