// raps: train, evaluate and compare few-shot relation classifiers.
//
// Every result is one JSON object per line on stdout; diagnostics go to
// stderr. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "raps/raps.hpp"

using nlohmann::json;
using namespace raps;

namespace {

struct Common {
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_size = 5;
    std::uint64_t seed = 0;
    std::string proto = "qia";
    std::string fusion = "uas";
    std::string encoder = "lookup";
    std::string config;
    std::size_t dim = 16;
    std::size_t iters = 0;
    double lr = 0;
    std::size_t threads = 1;
    bool stratified = false;

    std::string train, val, test, catalog, emb, ckpt, csv;
    std::size_t eval_episodes = 1000;
};

void emit(const json& record) {
    std::cout << record.dump() << '\n';
    std::cout.flush();
}

json eval_json(const EvalResult& r) {
    return {{"accuracy", r.accuracy},
            {"half_width", r.half_width},
            {"correct", r.correct},
            {"total", r.total},
            {"episodes", r.episodes}};
}

json config_json(const TrainConfig& cfg) {
    json out = json::object();
    std::istringstream in(to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

void write_csv(const std::string& path, const std::string& header, const std::vector<std::string>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open '" + path + "' for writing");
    out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
    if (!out) throw Error(Errc::io, "write to '" + path + "' failed");
}

bool given_flag(const CLI::App& app, const char* name) {
    const auto* opt = app.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

/// Defaults, then the config file, then flags given on the command line.
TrainConfig resolve_config(const Common& c, const CLI::App& app) {
    TrainConfig cfg;
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw Error(Errc::io, "cannot open config '" + c.config + "'");
        std::stringstream text;
        text << in.rdbuf();
        cfg = parse_config(text.str(), cfg);
    }
    auto given = [&](const char* name) { return given_flag(app, name); };
    if (given("--n-way")) cfg.n_way = c.n_way;
    if (given("--k-shot")) cfg.k_shot = c.k_shot;
    if (given("--q-size")) cfg.q_size = c.q_size;
    if (given("--seed")) cfg.seed = c.seed;
    if (given("--proto")) cfg.proto = parse_proto_mode(c.proto);
    if (given("--fusion")) cfg.fusion = parse_fusion_mode(c.fusion);
    if (given("--iters")) cfg.train_iters = c.iters;
    if (given("--lr")) cfg.learning_rate = c.lr;
    if (given("--threads")) cfg.threads = c.threads;
    if (given("--stratified-queries")) cfg.stratified_queries = c.stratified;
    validate(cfg);
    return cfg;
}

Corpus load(const std::string& path, const std::string& catalog) {
    if (path.empty()) throw Error(Errc::usage, "a corpus path is required");
    auto loaded = load_corpus(path, catalog);
    for (const auto& d : loaded.report.diagnostics) std::cerr << path << ": " << d << '\n';
    if (loaded.report.rejected > 0) {
        emit({{"event", "load"}, {"path", path}, {"rejected", loaded.report.rejected}});
    }
    return std::move(loaded.corpus);
}

AnyEncoder fresh_encoder(const Common& c, const std::vector<const Corpus*>& corpora) {
    if (c.encoder == "precomputed") {
        if (c.emb.empty()) throw Error(Errc::usage, "--encoder precomputed needs --emb");
        return ingest_precomputed(c.emb);
    }
    if (c.encoder != "lookup") throw Error(Errc::usage, "unknown encoder '" + c.encoder + "'");
    Corpus all;
    for (const Corpus* corpus : corpora) {
        for (const auto& [id, insts] : corpus->relations) {
            auto& dst = all.relations[id];
            dst.insert(dst.end(), insts.begin(), insts.end());
            all.catalog.emplace(id, corpus->relation(id));
        }
    }
    return LookupEncoder(build_vocabulary(all), c.dim);
}

/// The encoder a checkpoint was trained with; precomputed tables are not
/// stored in checkpoints and come from --emb.
AnyEncoder checkpoint_encoder(const Checkpoint& ck, const Common& c) {
    if (ck.encoder.starts_with("lookup")) return lookup_from_description(ck.encoder);
    if (c.emb.empty()) throw Error(Errc::usage, "checkpoint uses a precomputed encoder; pass --emb");
    return ingest_precomputed(c.emb);
}

int cmd_train(const Common& c, const CLI::App& app, bool resume, std::uint64_t stop_at) {
    const Corpus train_corpus = load(c.train, c.catalog);
    const Corpus val_corpus = c.val.empty() ? train_corpus : load(c.val, c.catalog);

    std::optional<Trainer> trainer;
    if (resume) {
        if (c.ckpt.empty()) throw Error(Errc::usage, "--resume needs --ckpt");
        const Checkpoint ck = load_checkpoint(c.ckpt);
        Model model = restore_model(ck, checkpoint_encoder(ck, c));
        trainer.emplace(std::move(model), train_corpus, val_corpus, ck);
    } else {
        const TrainConfig cfg = resolve_config(c, app);
        Model model = make_model(fresh_encoder(c, {&train_corpus, &val_corpus}), cfg.proto, cfg.fusion,
                                 derive_seed(cfg.seed, SeedStream::init));
        trainer.emplace(std::move(model), train_corpus, val_corpus, cfg);
    }
    const TrainConfig& cfg = trainer->config();
    emit({{"event", "start"},
          {"iteration", trainer->iteration()},
          {"parameters", trainer->model().params.size()},
          {"config", config_json(cfg)}});

    std::size_t reported = trainer->val_trace().size();
    std::vector<std::string> rows;
    const std::uint64_t until = stop_at > 0 ? std::min<std::uint64_t>(stop_at, cfg.train_iters) : cfg.train_iters;
    while (trainer->iteration() < until) {
        trainer->step();
        if (trainer->val_trace().size() == reported) continue;
        const auto& vp = trainer->val_trace().back();
        reported = trainer->val_trace().size();
        std::size_t window = std::min<std::size_t>(cfg.eval_every, trainer->loss_trace().size());
        double mean_loss = 0;
        for (std::size_t i = trainer->loss_trace().size() - window; i < trainer->loss_trace().size(); ++i) {
            mean_loss += trainer->loss_trace()[i];
        }
        mean_loss /= static_cast<double>(window);
        json rec = eval_json(vp.result);
        rec["event"] = "val";
        rec["iteration"] = vp.iteration;
        rec["mean_loss"] = mean_loss;
        emit(rec);
        rows.push_back(std::to_string(vp.iteration) + "," + format_double(mean_loss) + "," +
                       format_double(vp.result.accuracy) + "," + format_double(vp.result.half_width));
    }
    if (!c.ckpt.empty()) save_checkpoint(c.ckpt, trainer->checkpoint());
    if (!c.csv.empty()) write_csv(c.csv, "iteration,mean_loss,val_accuracy,half_width", rows);

    json done{{"event", "done"},
              {"iteration", trainer->iteration()},
              {"best_val_accuracy", trainer->best_val_accuracy()},
              {"checkpoint", c.ckpt}};
    if (cfg.fusion != FusionMode::uam && cfg.fusion != FusionMode::cam) {
        const auto [w1, w2] = scalar_weights(trainer->model().params.fusion);
        done["fusion_weights"] = {w1, w2};
    }
    emit(done);
    return 0;
}

int cmd_eval(const Common& c, const CLI::App& app, bool use_best) {
    if (c.ckpt.empty()) throw Error(Errc::usage, "eval needs --ckpt");
    const Corpus test_corpus = load(c.test, c.catalog);
    const Checkpoint ck = load_checkpoint(c.ckpt);
    const Model model = restore_model(ck, checkpoint_encoder(ck, c), use_best);

    // Episode shape and seed may be overridden; modes come from the checkpoint.
    TrainConfig cfg = ck.config;
    auto given = [&](const char* name) { return given_flag(app, name); };
    if (given("--n-way")) cfg.n_way = c.n_way;
    if (given("--k-shot")) cfg.k_shot = c.k_shot;
    if (given("--q-size")) cfg.q_size = c.q_size;
    if (given("--seed")) cfg.seed = c.seed;
    if (given("--stratified-queries")) cfg.stratified_queries = c.stratified;

    const auto res = evaluate(model, test_corpus, episode_config(cfg, SeedStream::test), c.eval_episodes);
    json rec = eval_json(res);
    rec["event"] = "eval";
    rec["params"] = use_best ? "best" : "final";
    rec["proto"] = to_string(cfg.proto);
    rec["fusion"] = to_string(cfg.fusion);
    rec["n_way"] = cfg.n_way;
    rec["k_shot"] = cfg.k_shot;
    emit(rec);
    if (!c.csv.empty()) {
        write_csv(c.csv, "n_way,k_shot,accuracy,half_width,correct,total",
                  {std::to_string(cfg.n_way) + "," + std::to_string(cfg.k_shot) + "," + format_double(res.accuracy) +
                   "," + format_double(res.half_width) + "," + std::to_string(res.correct) + "," +
                   std::to_string(res.total)});
    }
    return 0;
}

int cmd_compare(const Common& c, const CLI::App& app, bool ablation) {
    const Corpus train_corpus = load(c.train, c.catalog);
    const Corpus val_corpus = c.val.empty() ? train_corpus : load(c.val, c.catalog);
    const Corpus test_corpus = load(c.test, c.catalog);
    const TrainConfig cfg = resolve_config(c, app);
    const AnyEncoder enc = fresh_encoder(c, {&train_corpus, &val_corpus, &test_corpus});

    const auto cells = ablation ? run_ablation(enc, train_corpus, val_corpus, test_corpus, cfg, c.eval_episodes)
                                : run_fusion_comparison(enc, train_corpus, val_corpus, test_corpus, cfg,
                                                        c.eval_episodes);
    std::vector<std::string> rows;
    for (const auto& cell : cells) {
        json rec = eval_json(cell.result);
        rec["event"] = "cell";
        rec["label"] = cell.label;
        rec["proto"] = to_string(cell.proto);
        rec["fusion"] = to_string(cell.fusion);
        emit(rec);
        rows.push_back(cell.label + "," + std::string(to_string(cell.proto)) + "," +
                       std::string(to_string(cell.fusion)) + "," + format_double(cell.result.accuracy) + "," +
                       format_double(cell.result.half_width));
    }
    if (!c.csv.empty()) write_csv(c.csv, "label,proto,fusion,accuracy,half_width", rows);
    return 0;
}

struct SynthOptions {
    SynthConfig cfg;
    std::string out_dir = ".";
    std::size_t val_relations = 0;
    std::size_t test_relations = 0;
};

int cmd_synth(const SynthOptions& o, std::uint64_t seed) {
    SynthConfig cfg = o.cfg;
    cfg.seed = seed;
    auto s = make_synthetic_corpus(cfg);
    const std::filesystem::path dir(o.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::io, "cannot create '" + o.out_dir + "': " + ec.message());
    if (o.val_relations + o.test_relations >= cfg.n_relations) {
        throw Error(Errc::usage, "val and test relations must leave some for training");
    }

    const Corpus& all = s.corpus;
    save_catalog((dir / "catalog.json").string(), all);
    save_embedding_table((dir / "embeddings.txt").string(), s.embeddings);
    json files{{"catalog", (dir / "catalog.json").string()}, {"embeddings", (dir / "embeddings.txt").string()}};

    auto [held, train_part] = split_by_relations(all, o.val_relations + o.test_relations);
    auto [val_part, test_part] = split_by_relations(held, o.val_relations);
    save_corpus((dir / "train.json").string(), o.val_relations + o.test_relations ? train_part : all);
    files["train"] = (dir / "train.json").string();
    if (o.val_relations) {
        save_corpus((dir / "val.json").string(), val_part);
        files["val"] = (dir / "val.json").string();
    }
    if (o.test_relations) {
        save_corpus((dir / "test.json").string(), test_part);
        files["test"] = (dir / "test.json").string();
    }
    emit({{"event", "synth"},
          {"relations", cfg.n_relations},
          {"instances", all.instance_count()},
          {"dim", s.embeddings.dim},
          {"nearest_center_accuracy", s.nearest_center_accuracy},
          {"files", files}});
    return 0;
}

int cmd_export(const Common& c, const CLI::App& app, const std::string& out, const std::string& queries,
               std::size_t n_episodes) {
    const Corpus corpus = load(c.train, c.catalog);
    Model model = [&] {
        if (!c.ckpt.empty()) {
            const Checkpoint ck = load_checkpoint(c.ckpt);
            return restore_model(ck, checkpoint_encoder(ck, c), true);
        }
        const TrainConfig cfg = resolve_config(c, app);
        return make_model(fresh_encoder(c, {&corpus}), cfg.proto, cfg.fusion, derive_seed(cfg.seed, SeedStream::init));
    }();
    json rec{{"event", "export"}, {"dim", model.embedding_dim()}};
    if (!out.empty()) {
        save_embedding_table(out, export_embedding_table(model, corpus));
        rec["embeddings"] = out;
    }
    if (!queries.empty()) {
        TrainConfig cfg = resolve_config(c, app);
        cfg.proto = model.proto;
        cfg.fusion = model.fusion_mode();
        EpisodeSampler sampler(corpus, episode_config(cfg, SeedStream::test));
        std::vector<Episode> episodes;
        for (std::size_t e = 0; e < n_episodes; ++e) episodes.push_back(sampler.next());
        export_query_embeddings(model, episodes, queries);
        rec["queries"] = queries;
        rec["episodes"] = n_episodes;
    }
    emit(rec);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot relation classification with query-guided prototypes and relation-text fusion"};
    app.require_subcommand(1);
    Common c;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--n-way", c.n_way, "classes per episode")->check(CLI::PositiveNumber);
        cmd->add_option("--k-shot", c.k_shot, "support instances per class")->check(CLI::PositiveNumber);
        cmd->add_option("--q-size", c.q_size, "queries per episode")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", c.seed, "run seed");
        cmd->add_option("--proto", c.proto, "prototype mode")->check(CLI::IsMember({"naive", "qia"}));
        cmd->add_option("--fusion", c.fusion, "fusion mode")
            ->check(CLI::IsMember({"uas", "cas", "uam", "cam", "add"}));
        cmd->add_option("--encoder", c.encoder, "instance encoder")
            ->check(CLI::IsMember({"lookup", "precomputed"}));
        cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
        cmd->add_option("--catalog", c.catalog, "relation name/description file")->check(CLI::ExistingFile);
        cmd->add_option("--emb", c.emb, "precomputed embedding file")->check(CLI::ExistingFile);
        cmd->add_option("--csv", c.csv, "also write a CSV table here");
        cmd->add_flag("--stratified-queries", c.stratified, "draw queries round-robin per class");
    };
    auto training = [&](CLI::App* cmd) {
        cmd->add_option("--dim", c.dim, "lookup embedding size d")->check(CLI::PositiveNumber);
        cmd->add_option("--iters", c.iters, "training iterations");
        cmd->add_option("--lr", c.lr, "learning rate")->check(CLI::PositiveNumber);
        cmd->add_option("--threads", c.threads, "episode worker threads")->check(CLI::PositiveNumber);
        cmd->add_option("--train", c.train, "training corpus")->required()->check(CLI::ExistingFile);
        cmd->add_option("--val", c.val, "validation corpus (default: training corpus)")->check(CLI::ExistingFile);
    };

    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    common(train);
    training(train);
    train->add_option("--ckpt", c.ckpt, "checkpoint to write");
    bool resume = false;
    train->add_flag("--resume", resume, "continue from --ckpt instead of starting fresh");
    std::uint64_t stop_at = 0;
    train->add_option("--stop-at", stop_at, "stop after this iteration and checkpoint (resume later)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test corpus");
    common(eval);
    eval->add_option("--ckpt", c.ckpt, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    eval->add_option("--test", c.test, "test corpus")->required()->check(CLI::ExistingFile);
    eval->add_option("--episodes", c.eval_episodes, "evaluation episodes")->check(CLI::PositiveNumber);
    bool final_params = false;
    eval->add_flag("--final", final_params, "use the last parameters instead of the best validated ones");

    auto* ablate = app.add_subcommand("ablate", "train and test the four ablation cells");
    auto* fuse = app.add_subcommand("fuse-compare", "train and test UAS, CAS, UAM and CAM");
    for (auto* cmd : {ablate, fuse}) {
        common(cmd);
        training(cmd);
        cmd->add_option("--test", c.test, "test corpus")->required()->check(CLI::ExistingFile);
        cmd->add_option("--episodes", c.eval_episodes, "evaluation episodes")->check(CLI::PositiveNumber);
    }

    SynthOptions so;
    auto* synth = app.add_subcommand("synth", "generate a synthetic clustered corpus");
    synth->add_option("--out-dir", so.out_dir, "output directory");
    synth->add_option("--relations", so.cfg.n_relations, "relation count")->check(CLI::PositiveNumber);
    synth->add_option("--per-relation", so.cfg.per_relation, "instances per relation")->check(CLI::PositiveNumber);
    synth->add_option("--dim", so.cfg.base_dim, "d; embeddings have 2d entries")->check(CLI::PositiveNumber);
    synth->add_option("--sep", so.cfg.cluster_sep, "distance of cluster centers from the origin")
        ->check(CLI::PositiveNumber);
    synth->add_option("--noise", so.cfg.noise, "instance noise std")->check(CLI::NonNegativeNumber);
    synth->add_option("--shift", so.cfg.shift, "displacement of shifted instances")->check(CLI::NonNegativeNumber);
    synth->add_option("--shifted-fraction", so.cfg.shifted_fraction, "fraction of shifted instances")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--val-relations", so.val_relations, "relations held out for val.json");
    synth->add_option("--test-relations", so.test_relations, "relations held out for test.json");
    synth->add_option("--seed", c.seed, "generator seed");

    std::string emb_out, queries_out;
    std::size_t query_episodes = 10;
    auto* exp = app.add_subcommand("export-emb", "write encoder outputs and query embeddings");
    common(exp);
    exp->add_option("--dim", c.dim, "lookup embedding size d")->check(CLI::PositiveNumber);
    exp->add_option("--train", c.train, "corpus to encode")->required()->check(CLI::ExistingFile);
    exp->add_option("--ckpt", c.ckpt, "checkpoint (default: untrained model)")->check(CLI::ExistingFile);
    exp->add_option("--out", emb_out, "embedding table to write");
    exp->add_option("--queries", queries_out, "query embedding CSV to write");
    exp->add_option("--episodes", query_episodes, "episodes for --queries")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train) return cmd_train(c, *train, resume, stop_at);
        if (*eval) return cmd_eval(c, *eval, !final_params);
        if (*ablate) return cmd_compare(c, *ablate, true);
        if (*fuse) return cmd_compare(c, *fuse, false);
        if (*synth) return cmd_synth(so, c.seed);
        if (*exp) return cmd_export(c, *exp, emb_out, queries_out, query_episodes);
    } catch (const Error& e) {
        std::cerr << json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
    return 1;
}
