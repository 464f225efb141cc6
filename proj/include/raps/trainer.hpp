#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "raps/data.hpp"
#include "raps/model.hpp"
#include "raps/optimizer.hpp"

namespace raps {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_size = 5;
    bool stratified_queries = false;

    std::size_t train_iters = 2000;
    std::size_t val_iters = 1000;
    std::size_t batch_episodes = 4;
    std::size_t eval_every = 500;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double clip_norm = 0.0;  // 0 disables clipping
    std::size_t threads = 1;

    ProtoMode proto = ProtoMode::qia;
    FusionMode fusion = FusionMode::uas;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

/// Independent seed streams derived from the run seed.
enum class SeedStream : std::uint64_t {
    train = 0,
    validation = 0x76616c,
    test = 0x74657374,
    init = 0x696e6974,
};

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
    if (stream == SeedStream::train) return seed;
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
}

inline EpisodeConfig episode_config(const TrainConfig& cfg, SeedStream stream) {
    return EpisodeConfig{cfg.n_way, cfg.k_shot, cfg.q_size, derive_seed(cfg.seed, stream), cfg.stratified_queries};
}

inline void validate(const TrainConfig& cfg) {
    validate(episode_config(cfg, SeedStream::train));
    if (cfg.val_iters == 0) throw Error(Errc::usage, "val_iters must be positive");
    if (cfg.batch_episodes == 0) throw Error(Errc::usage, "batch_episodes must be positive");
    if (cfg.eval_every == 0) throw Error(Errc::usage, "eval_every must be positive");
    if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate)) {
        throw Error(Errc::usage, "learning_rate must be a finite non-negative number");
    }
    if (!(cfg.clip_norm >= 0)) throw Error(Errc::usage, "clip_norm must be non-negative");
    if (cfg.threads == 0) throw Error(Errc::usage, "threads must be positive");
}

/// Canonical key=value form, keys sorted, one per line.
inline std::string to_text(const TrainConfig& cfg) {
    std::map<std::string, std::string> kv{
        {"n_way", std::to_string(cfg.n_way)},
        {"k_shot", std::to_string(cfg.k_shot)},
        {"q_size", std::to_string(cfg.q_size)},
        {"stratified_queries", cfg.stratified_queries ? "true" : "false"},
        {"train_iters", std::to_string(cfg.train_iters)},
        {"val_iters", std::to_string(cfg.val_iters)},
        {"batch_episodes", std::to_string(cfg.batch_episodes)},
        {"eval_every", std::to_string(cfg.eval_every)},
        {"learning_rate", format_double(cfg.learning_rate)},
        {"optimizer", std::string(to_string(cfg.optimizer))},
        {"clip_norm", format_double(cfg.clip_norm)},
        {"threads", std::to_string(cfg.threads)},
        {"proto", std::string(to_string(cfg.proto))},
        {"fusion", std::string(to_string(cfg.fusion))},
        {"seed", std::to_string(cfg.seed)},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw Error(Errc::usage, "config key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw Error(Errc::usage, "config key '" + key + "' expects true|false, got '" + value + "'");
}

}  // namespace detail

/// Applies one key=value setting.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_uint;
    auto real = [&] {
        try {
            return parse_double(value);
        } catch (const Error&) {
            throw Error(Errc::usage, "config key '" + key + "' expects a number, got '" + value + "'");
        }
    };
    if (key == "n_way") cfg.n_way = parse_uint(key, value);
    else if (key == "k_shot") cfg.k_shot = parse_uint(key, value);
    else if (key == "q_size") cfg.q_size = parse_uint(key, value);
    else if (key == "stratified_queries") cfg.stratified_queries = detail::parse_bool(key, value);
    else if (key == "train_iters") cfg.train_iters = parse_uint(key, value);
    else if (key == "val_iters") cfg.val_iters = parse_uint(key, value);
    else if (key == "batch_episodes") cfg.batch_episodes = parse_uint(key, value);
    else if (key == "eval_every") cfg.eval_every = parse_uint(key, value);
    else if (key == "learning_rate") cfg.learning_rate = real();
    else if (key == "optimizer") cfg.optimizer = parse_optimizer(value);
    else if (key == "clip_norm") cfg.clip_norm = real();
    else if (key == "threads") cfg.threads = parse_uint(key, value);
    else if (key == "proto") cfg.proto = parse_proto_mode(value);
    else if (key == "fusion") cfg.fusion = parse_fusion_mode(value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else throw Error(Errc::usage, "unknown config key '" + key + "'");
}

/// Reads key=value lines over `base`; blank lines and '#' comments skipped.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw Error(Errc::usage, "config line " + std::to_string(line_no) + " is not key=value");
        }
        apply_setting(base, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    }
    return base;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Everything needed to continue a run bit-identically.
struct Checkpoint {
    TrainConfig config;
    std::string encoder;  // describe(AnyEncoder)
    std::uint64_t iteration = 0;
    std::vector<double> params;       // flatten_params order
    std::vector<double> best_params;  // parameters at the best validation point
    double best_val_accuracy = -1.0;
    std::string rng_state;  // training sampler
    OptimizerState optimizer;

    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::array<char, 8> checkpoint_magic{'R', 'A', 'P', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_vector(std::ostream& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    for (double x : v) put_f64(out, x);
}

inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw Error(Errc::malformed_input, "truncated checkpoint");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

inline std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw Error(Errc::malformed_input, "truncated checkpoint");
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline std::string get_string(std::istream& in) {
    const auto n = get_u64(in);
    if (n > (1ULL << 32)) throw Error(Errc::malformed_input, "checkpoint string too long");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw Error(Errc::malformed_input, "truncated checkpoint");
    return s;
}

inline std::vector<double> get_vector(std::istream& in) {
    const auto n = get_u64(in);
    if (n > (1ULL << 32)) throw Error(Errc::malformed_input, "checkpoint vector too long");
    std::vector<double> v(n);
    for (auto& x : v) x = get_f64(in);
    return v;
}

}  // namespace detail

/// Layout (all integers and floats little-endian):
///   magic "RAPSCKPT", u32 version,
///   string config (canonical text), string encoder descriptor,
///   u64 iteration, f64 best validation accuracy, string sampler state,
///   vector params, vector best params,
///   u64 optimizer steps, vector first moment, vector second moment.
/// Strings and vectors are u64-length-prefixed.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out.write(checkpoint_magic.data(), checkpoint_magic.size());
    detail::put_u32(out, checkpoint_version);
    detail::put_string(out, to_text(ck.config));
    detail::put_string(out, ck.encoder);
    detail::put_u64(out, ck.iteration);
    detail::put_f64(out, ck.best_val_accuracy);
    detail::put_string(out, ck.rng_state);
    detail::put_vector(out, ck.params);
    detail::put_vector(out, ck.best_params);
    detail::put_u64(out, ck.optimizer.steps);
    detail::put_vector(out, ck.optimizer.first_moment);
    detail::put_vector(out, ck.optimizer.second_moment);
}

inline Checkpoint read_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != checkpoint_magic) throw Error(Errc::malformed_input, "not a checkpoint file");
    const auto version = detail::get_u32(in);
    if (version != checkpoint_version) {
        throw Error(Errc::malformed_input, "unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.config = parse_config(detail::get_string(in));
    ck.encoder = detail::get_string(in);
    ck.iteration = detail::get_u64(in);
    ck.best_val_accuracy = detail::get_f64(in);
    ck.rng_state = detail::get_string(in);
    ck.params = detail::get_vector(in);
    ck.best_params = detail::get_vector(in);
    ck.optimizer.steps = detail::get_u64(in);
    ck.optimizer.first_moment = detail::get_vector(in);
    ck.optimizer.second_moment = detail::get_vector(in);
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open '" + path + "' for writing");
    write_checkpoint(out, ck);
    if (!out) throw Error(Errc::io, "write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open '" + path + "'");
    return read_checkpoint(in);
}

/// Model with the checkpoint's parameters (current or best) on `encoder`.
inline Model restore_model(const Checkpoint& ck, AnyEncoder encoder, bool best = false) {
    Model model = make_model(std::move(encoder), ck.config.proto, ck.config.fusion, 0);
    model.params = unflatten_params(model.params, best ? ck.best_params : ck.params);
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline constexpr double z_95 = 1.959963984540054;

/// Half-width of the 95% Wilson score interval.
inline double wilson_half_width(std::size_t successes, std::size_t trials, double z = z_95) {
    if (trials == 0) return 0.0;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    return z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
}

/// Wilson interval centre for the same inputs.
inline double wilson_center(std::size_t successes, std::size_t trials, double z = z_95) {
    if (trials == 0) return 0.0;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    return (p + z * z / (2 * n)) / (1 + z * z / n);
}

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t episodes = 0;
    double half_width = 0.0;  // 95% Wilson
};

/// Accuracy of `predict(episode) -> labels` over n episodes from `sampler`.
template <class Predictor>
EvalResult evaluate_predictions(EpisodeSampler& sampler, std::size_t n_episodes, Predictor&& predict) {
    if (n_episodes == 0) throw Error(Errc::usage, "evaluation needs at least one episode");
    EvalResult res;
    for (std::size_t e = 0; e < n_episodes; ++e) {
        const Episode ep = sampler.next();
        const std::vector<std::size_t> pred = predict(ep);
        for (std::size_t j = 0; j < ep.queries.size(); ++j) {
            res.correct += pred.at(j) == ep.query_labels[j] ? 1 : 0;
        }
        res.total += ep.queries.size();
    }
    res.episodes = n_episodes;
    res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.total);
    res.half_width = wilson_half_width(res.correct, res.total);
    return res;
}

inline EvalResult evaluate(const Model& model, const Corpus& corpus, const EpisodeConfig& cfg, std::size_t n_episodes) {
    EpisodeSampler sampler(corpus, cfg);
    return evaluate_predictions(sampler, n_episodes, [&](const Episode& ep) { return predict_episode(model, ep); });
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Sums episode gradients over the batch, applies one optimizer update and
/// returns the mean episode loss. Gradients are merged in batch order, so
/// the result does not depend on `cfg.threads`.
inline double train_step(Model& model, Optimizer& optimizer, const std::vector<Episode>& batch, const TrainConfig& cfg) {
    if (batch.empty()) throw Error(Errc::usage, "empty training batch");
    for (const auto& ep : batch) {
        if (ep.n_way() != cfg.n_way || ep.k_shot() != cfg.k_shot || ep.queries.size() != cfg.q_size) {
            throw Error(Errc::usage, "episode shape does not match the training configuration");
        }
    }

    std::vector<double> losses(batch.size());
    std::vector<std::vector<double>> grads(batch.size());
    auto work = [&](std::size_t e) {
        const auto tr = forward_episode(model, batch[e]);
        losses[e] = tr.loss;
        grads[e] = backward_episode(model, batch[e], tr);
    };
    const std::size_t n_threads = std::min(cfg.threads, batch.size());
    if (n_threads <= 1) {
        for (std::size_t e = 0; e < batch.size(); ++e) work(e);
    } else {
        std::vector<std::exception_ptr> errors(batch.size());
        {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < n_threads; ++t) {
                pool.emplace_back([&, t] {
                    for (std::size_t e = t; e < batch.size(); e += n_threads) {
                        try {
                            work(e);
                        } catch (...) {
                            errors[e] = std::current_exception();
                        }
                    }
                });
            }
        }
        for (const auto& err : errors) {
            if (err) std::rethrow_exception(err);
        }
    }

    double total = 0;
    std::vector<double> grad(model.params.size(), 0.0);
    for (std::size_t e = 0; e < batch.size(); ++e) {
        total += losses[e];
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += grads[e][i];
    }
    const double mean = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean) || !all_finite(grad)) {
        throw Error(Errc::non_finite, "non-finite loss or gradient (mean loss " + format_double(mean) + ")");
    }
    clip_gradient(grad, cfg.clip_norm);

    auto flat = flatten_params(model.params);
    optimizer.step(flat, grad, cfg.learning_rate);
    model.params = unflatten_params(model.params, flat);
    return mean;
}

struct ValPoint {
    std::uint64_t iteration = 0;
    EvalResult result;
};

/// Episodic training loop with periodic validation and best-model
/// retention. Corpora must outlive the trainer.
class Trainer {
public:
    Trainer(Model model, const Corpus& train, const Corpus& val, TrainConfig cfg)
        : cfg_(std::move(cfg)),
          model_(std::move(model)),
          best_params_(model_.params),
          optimizer_(cfg_.optimizer, model_.params.size()),
          sampler_(train, episode_config(cfg_, SeedStream::train)),
          val_(&val) {
        validate(cfg_);
        if (model_.proto != cfg_.proto || model_.fusion_mode() != cfg_.fusion) {
            throw Error(Errc::usage, "model modes differ from the training configuration");
        }
    }

    /// Resumes from a checkpoint; `model` supplies the encoder architecture.
    Trainer(Model model, const Corpus& train, const Corpus& val, const Checkpoint& ck)
        : Trainer(std::move(model), train, val, ck.config) {
        model_.params = unflatten_params(model_.params, ck.params);
        best_params_ = unflatten_params(model_.params, ck.best_params);
        best_accuracy_ = ck.best_val_accuracy;
        iteration_ = ck.iteration;
        optimizer_ = Optimizer(cfg_.optimizer, ck.optimizer);
        sampler_.set_rng_state(ck.rng_state);
    }

    /// One optimizer update; validates when the schedule says so.
    double step() {
        std::vector<Episode> batch;
        batch.reserve(cfg_.batch_episodes);
        for (std::size_t b = 0; b < cfg_.batch_episodes; ++b) {
            batch.push_back(sampler_.next());
            stream_fingerprint_ = fingerprint(batch.back(), stream_fingerprint_);
        }
        double loss = 0;
        try {
            loss = train_step(model_, optimizer_, batch, cfg_);
        } catch (const Error& e) {
            if (e.code() != Errc::non_finite) throw;
            throw Error(Errc::non_finite, "iteration " + std::to_string(iteration_ + 1) + ": " + e.what());
        }
        ++iteration_;
        loss_trace_.push_back(loss);
        if (iteration_ % cfg_.eval_every == 0 || iteration_ == cfg_.train_iters) validate_now();
        return loss;
    }

    void run_until(std::uint64_t iteration) {
        while (iteration_ < iteration) step();
    }

    void run() { run_until(cfg_.train_iters); }

    void validate_now() {
        const auto res = evaluate(model_, *val_, episode_config(cfg_, SeedStream::validation), cfg_.val_iters);
        val_trace_.push_back({iteration_, res});
        if (res.accuracy > best_accuracy_) {
            best_accuracy_ = res.accuracy;
            best_params_ = model_.params;
        }
    }

    Checkpoint checkpoint() const {
        return Checkpoint{cfg_,
                          describe(model_.encoder),
                          iteration_,
                          flatten_params(model_.params),
                          flatten_params(best_params_),
                          best_accuracy_,
                          sampler_.rng_state(),
                          optimizer_.state()};
    }

    const TrainConfig& config() const { return cfg_; }
    const Model& model() const { return model_; }
    Model best_model() const {
        Model m = model_;
        m.params = best_params_;
        return m;
    }
    std::uint64_t iteration() const { return iteration_; }
    double best_val_accuracy() const { return best_accuracy_; }
    const std::vector<double>& loss_trace() const { return loss_trace_; }
    const std::vector<ValPoint>& val_trace() const { return val_trace_; }
    /// Running hash of every training episode drawn so far.
    std::uint64_t stream_fingerprint() const { return stream_fingerprint_; }

private:
    TrainConfig cfg_;
    Model model_;
    ModelParams best_params_;
    double best_accuracy_ = -1.0;
    Optimizer optimizer_;
    EpisodeSampler sampler_;
    const Corpus* val_;
    std::uint64_t iteration_ = 0;
    std::vector<double> loss_trace_;
    std::vector<ValPoint> val_trace_;
    std::uint64_t stream_fingerprint_ = 0xcbf29ce484222325ULL;
};

struct TrainResult {
    Model final_model;
    Model best_model;
    Checkpoint checkpoint;  // state after the last iteration
    std::vector<double> loss_trace;
    std::vector<ValPoint> val_trace;
    std::uint64_t stream_fingerprint = 0;
};

inline TrainResult train(Model model, const Corpus& train_corpus, const Corpus& val_corpus, const TrainConfig& cfg) {
    Trainer trainer(std::move(model), train_corpus, val_corpus, cfg);
    trainer.run();
    return TrainResult{trainer.model(),       trainer.best_model(), trainer.checkpoint(),
                       trainer.loss_trace(), trainer.val_trace(),   trainer.stream_fingerprint()};
}

// ---------------------------------------------------------------------------
// Comparative experiments
// ---------------------------------------------------------------------------

struct ExperimentCell {
    std::string label;
    ProtoMode proto = ProtoMode::qia;
    FusionMode fusion = FusionMode::uas;
    EvalResult result;
    std::uint64_t stream_fingerprint = 0;
    std::vector<double> loss_trace;
};

struct Variant {
    std::string label;
    ProtoMode proto;
    FusionMode fusion;
};

/// Trains each variant from the same seed (so every cell sees the same
/// training episodes and the same encoder initialization) and evaluates the
/// best-by-validation model on `test` over `eval_episodes` episodes.
inline std::vector<ExperimentCell> run_variants(const AnyEncoder& encoder, const Corpus& train_corpus,
                                                const Corpus& val_corpus, const Corpus& test_corpus,
                                                const TrainConfig& base, const std::vector<Variant>& variants,
                                                std::size_t eval_episodes) {
    std::vector<ExperimentCell> cells;
    for (const auto& v : variants) {
        TrainConfig cfg = base;
        cfg.proto = v.proto;
        cfg.fusion = v.fusion;
        Model model = make_model(encoder, v.proto, v.fusion, derive_seed(cfg.seed, SeedStream::init));
        auto res = train(std::move(model), train_corpus, val_corpus, cfg);
        ExperimentCell cell{v.label, v.proto, v.fusion, {}, res.stream_fingerprint, std::move(res.loss_trace)};
        cell.result = evaluate(res.best_model, test_corpus, episode_config(cfg, SeedStream::test), eval_episodes);
        cells.push_back(std::move(cell));
    }
    return cells;
}

/// Full model, without query-guided attention, without adaptive fusion
/// (direct addition), and without both.
inline std::vector<Variant> ablation_variants(FusionMode apf = FusionMode::uas) {
    return {{"QIA+APF", ProtoMode::qia, apf},
            {"w/o QIA", ProtoMode::naive, apf},
            {"w/o APF", ProtoMode::qia, FusionMode::direct_add},
            {"w/o QIA and APF", ProtoMode::naive, FusionMode::direct_add}};
}

inline std::vector<Variant> fusion_variants(ProtoMode proto = ProtoMode::qia) {
    return {{"UAS", proto, FusionMode::uas},
            {"CAS", proto, FusionMode::cas},
            {"UAM", proto, FusionMode::uam},
            {"CAM", proto, FusionMode::cam}};
}

inline std::vector<ExperimentCell> run_ablation(const AnyEncoder& encoder, const Corpus& train_corpus,
                                                const Corpus& val_corpus, const Corpus& test_corpus,
                                                const TrainConfig& base, std::size_t eval_episodes) {
    const FusionMode apf = base.fusion == FusionMode::direct_add ? FusionMode::uas : base.fusion;
    return run_variants(encoder, train_corpus, val_corpus, test_corpus, base, ablation_variants(apf), eval_episodes);
}

inline std::vector<ExperimentCell> run_fusion_comparison(const AnyEncoder& encoder, const Corpus& train_corpus,
                                                         const Corpus& val_corpus, const Corpus& test_corpus,
                                                         const TrainConfig& base, std::size_t eval_episodes) {
    return run_variants(encoder, train_corpus, val_corpus, test_corpus, base, fusion_variants(base.proto),
                        eval_episodes);
}

}  // namespace raps
