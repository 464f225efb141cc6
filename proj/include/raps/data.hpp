#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "raps/core.hpp"
#include "raps/encoder.hpp"
#include "raps/model.hpp"

namespace raps {

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct Corpus {
    std::string split_name;
    std::map<std::string, std::vector<Instance>> relations;
    std::map<std::string, RelationInfo> catalog;

    std::vector<std::string> relation_ids() const {
        std::vector<std::string> ids;
        ids.reserve(relations.size());
        for (const auto& [id, _] : relations) ids.push_back(id);
        return ids;
    }

    std::size_t instance_count() const {
        std::size_t n = 0;
        for (const auto& [_, insts] : relations) n += insts.size();
        return n;
    }

    /// Catalog entry, or a name-only entry synthesized from the id.
    RelationInfo relation(const std::string& id) const {
        auto it = catalog.find(id);
        if (it != catalog.end()) return it->second;
        return RelationInfo{id, id, ""};
    }
};

struct LoadReport {
    std::size_t rejected = 0;
    std::vector<std::string> diagnostics;  // one line per rejected record or warning
};

struct LoadedCorpus {
    Corpus corpus;
    LoadReport report;
};

namespace detail {

using json = nlohmann::json;

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::malformed_input, "'" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw Error(Errc::io, "write to '" + path + "' failed");
}

struct Mention {
    EntityRef ref;
    Span span;
    std::string problem;  // empty when the span is usable
};

// FewRel entity entry: [name, kb_id, [[i0, i1, ...], ...]] where each inner
// list holds the token indices of one mention. Only the first mention is
// used; it becomes [i0, i_last + 1).
inline Mention parse_mention(const json& entry, const char* which) {
    if (!entry.is_array() || entry.size() < 3 || !entry[2].is_array()) {
        throw Error(Errc::malformed_input, std::string("entity entry '") + which + "' must be [name, id, [[indices]]]");
    }
    Mention m;
    if (entry[0].is_string()) m.ref.name = entry[0].get<std::string>();
    if (entry[1].is_string()) m.ref.kb_id = entry[1].get<std::string>();
    const json& mentions = entry[2];
    if (mentions.empty() || !mentions[0].is_array() || mentions[0].empty()) {
        m.problem = std::string(which) + " has no token indices";
        return m;
    }
    const json& idx = mentions[0];
    for (const auto& v : idx) {
        if (!v.is_number_integer()) throw Error(Errc::malformed_input, std::string(which) + " index is not an integer");
    }
    const auto first = idx.front().get<long long>();
    const auto last = idx.back().get<long long>();
    if (first < 0 || last + 1 <= first) {
        m.problem = std::string(which) + " span end <= start";
        return m;
    }
    m.span = Span{static_cast<std::size_t>(first), static_cast<std::size_t>(last + 1)};
    return m;
}

inline json mention_to_json(const EntityRef& ref, const Span& span) {
    json idx = json::array();
    for (std::size_t i = span.begin; i < span.end; ++i) idx.push_back(i);
    return json::array({ref.name, ref.kb_id, json::array({idx})});
}

}  // namespace detail

/// Parses FewRel-format data (`{relation_id: [{tokens, h, t}, ...]}`) and
/// an optional catalog (`{relation_id: [name, description]}`). Records with
/// unusable spans are skipped and counted; structural problems throw.
inline LoadedCorpus parse_corpus(const nlohmann::json& data, const nlohmann::json* catalog, std::string split_name) {
    using detail::json;
    LoadedCorpus out;
    out.corpus.split_name = std::move(split_name);

    if (catalog) {
        if (!catalog->is_object()) throw Error(Errc::malformed_input, "catalog must be a JSON object");
        for (const auto& [id, entry] : catalog->items()) {
            if (!entry.is_array() || entry.empty() || !entry[0].is_string()) {
                throw Error(Errc::malformed_input, "catalog entry '" + id + "' must be [name, description]");
            }
            RelationInfo info{id, entry[0].get<std::string>(), ""};
            if (entry.size() > 1 && entry[1].is_string()) info.description = entry[1].get<std::string>();
            if (split_whitespace(info.name).empty()) {
                throw Error(Errc::malformed_input, "catalog entry '" + id + "' has an empty name");
            }
            out.corpus.catalog.emplace(id, std::move(info));
        }
    }

    if (!data.is_object()) throw Error(Errc::malformed_input, "corpus must be a JSON object keyed by relation id");
    for (const auto& [rel_id, records] : data.items()) {
        if (!records.is_array()) throw Error(Errc::malformed_input, "relation '" + rel_id + "' must map to a list");
        if (!out.corpus.catalog.contains(rel_id)) {
            out.report.diagnostics.push_back("warning: relation '" + rel_id +
                                             "' missing from catalog; using its id as name");
            out.corpus.catalog.emplace(rel_id, RelationInfo{rel_id, rel_id, ""});
        }
        auto& bucket = out.corpus.relations[rel_id];
        for (std::size_t r = 0; r < records.size(); ++r) {
            const json& rec = records[r];
            if (!rec.is_object() || !rec.contains("tokens") || !rec["tokens"].is_array() || !rec.contains("h") ||
                !rec.contains("t")) {
                throw Error(Errc::malformed_input,
                            "record " + std::to_string(r) + " of '" + rel_id + "' needs tokens, h and t");
            }
            Instance inst;
            inst.id = rel_id + "#" + std::to_string(r);
            inst.relation_id = rel_id;
            for (const auto& tok : rec["tokens"]) {
                if (!tok.is_string()) throw Error(Errc::malformed_input, "token in '" + inst.id + "' is not a string");
                inst.tokens.push_back(tok.get<std::string>());
            }
            const auto head = detail::parse_mention(rec["h"], "head");
            const auto tail = detail::parse_mention(rec["t"], "tail");
            inst.head = head.span;
            inst.tail = tail.span;
            inst.head_ref = head.ref;
            inst.tail_ref = tail.ref;

            std::string problem = !head.problem.empty() ? head.problem : tail.problem;
            if (problem.empty()) {
                try {
                    validate(inst);
                } catch (const Error& e) {
                    problem = e.what();
                }
            }
            if (!problem.empty()) {
                ++out.report.rejected;
                out.report.diagnostics.push_back("rejected " + inst.id + ": " + problem);
                continue;
            }
            bucket.push_back(std::move(inst));
        }
    }
    return out;
}

inline LoadedCorpus load_corpus(const std::string& data_path, const std::string& catalog_path = "") {
    const auto data = detail::read_json_file(data_path);
    nlohmann::json catalog;
    if (!catalog_path.empty()) catalog = detail::read_json_file(catalog_path);
    return parse_corpus(data, catalog_path.empty() ? nullptr : &catalog,
                        std::filesystem::path(data_path).stem().string());
}

/// Canonical FewRel form: sorted relation keys, records in load order, one
/// contiguous index list per entity.
inline nlohmann::json corpus_to_json(const Corpus& corpus) {
    using detail::json;
    json out = json::object();
    for (const auto& [rel_id, insts] : corpus.relations) {
        json records = json::array();
        for (const auto& inst : insts) {
            records.push_back(json{{"tokens", inst.tokens},
                                   {"h", detail::mention_to_json(inst.head_ref, inst.head)},
                                   {"t", detail::mention_to_json(inst.tail_ref, inst.tail)}});
        }
        out[rel_id] = std::move(records);
    }
    return out;
}

inline nlohmann::json catalog_to_json(const Corpus& corpus) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [id, info] : corpus.catalog) out[id] = {info.name, info.description};
    return out;
}

inline std::string write_corpus(const Corpus& corpus) { return corpus_to_json(corpus).dump(1) + "\n"; }

inline void save_corpus(const std::string& path, const Corpus& corpus) {
    detail::write_text_file(path, write_corpus(corpus));
}

inline void save_catalog(const std::string& path, const Corpus& corpus) {
    detail::write_text_file(path, catalog_to_json(corpus).dump(1) + "\n");
}

/// Splits by relation: the first `count` relation ids (sorted order) and the rest.
inline std::pair<Corpus, Corpus> split_by_relations(const Corpus& corpus, std::size_t count) {
    std::pair<Corpus, Corpus> out;
    out.first.split_name = corpus.split_name + "-a";
    out.second.split_name = corpus.split_name + "-b";
    std::size_t i = 0;
    for (const auto& [id, insts] : corpus.relations) {
        Corpus& dst = i++ < count ? out.first : out.second;
        dst.relations.emplace(id, insts);
        dst.catalog.emplace(id, corpus.relation(id));
    }
    return out;
}

/// Vocabulary over every instance token and every relation-text token.
inline Vocabulary build_vocabulary(const Corpus& corpus) {
    Vocabulary vocab;
    for (const auto& [_, insts] : corpus.relations) {
        for (const auto& inst : insts) {
            for (const auto& t : inst.tokens) vocab.insert(t);
        }
    }
    for (const auto& [id, _] : corpus.relations) {
        for (const auto& t : relation_tokens(corpus.relation(id))) vocab.insert(t);
    }
    return vocab;
}

// ---------------------------------------------------------------------------
// Episode sampling
// ---------------------------------------------------------------------------

namespace detail {

/// Moves `count` uniformly chosen elements to the front (partial Fisher-Yates).
template <class T>
void partial_shuffle(std::vector<T>& items, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + uniform_index(rng, items.size() - i);
        std::swap(items[i], items[j]);
    }
}

}  // namespace detail

/// N distinct relations uniformly without replacement; K supports each
/// without replacement; |Q| queries from the remaining instances of those N
/// relations, pooled (default) or round-robin per class (stratified).
inline Episode sample_episode(const Corpus& corpus, const EpisodeConfig& cfg, Rng& rng) {
    validate(cfg);
    auto ids = corpus.relation_ids();
    if (ids.size() < cfg.n_way) {
        throw Error(Errc::insufficient_data, "corpus has " + std::to_string(ids.size()) + " relations, episode needs " +
                                                 std::to_string(cfg.n_way));
    }
    detail::partial_shuffle(ids, cfg.n_way, rng);

    Episode ep;
    std::vector<std::vector<const Instance*>> remaining(cfg.n_way);
    for (std::size_t i = 0; i < cfg.n_way; ++i) {
        const auto& insts = corpus.relations.at(ids[i]);
        if (insts.size() < cfg.k_shot) {
            throw Error(Errc::insufficient_data, "relation '" + ids[i] + "' has " + std::to_string(insts.size()) +
                                                     " instances, fewer than k_shot");
        }
        std::vector<const Instance*> order;
        order.reserve(insts.size());
        for (const auto& inst : insts) order.push_back(&inst);
        detail::partial_shuffle(order, cfg.k_shot, rng);

        ep.relation_ids.push_back(ids[i]);
        ep.relations.push_back(corpus.relation(ids[i]));
        auto& row = ep.support.emplace_back();
        for (std::size_t k = 0; k < cfg.k_shot; ++k) row.push_back(*order[k]);
        remaining[i].assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.k_shot), order.end());
    }

    if (cfg.stratified_queries) {
        std::vector<std::size_t> used(cfg.n_way, 0);
        for (std::size_t j = 0; j < cfg.q_per_episode; ++j) {
            const std::size_t cls = j % cfg.n_way;
            auto& pool = remaining[cls];
            if (used[cls] >= pool.size()) {
                throw Error(Errc::insufficient_data, "relation '" + ep.relation_ids[cls] + "' has too few instances for stratified queries");
            }
            const std::size_t pick = used[cls] + uniform_index(rng, pool.size() - used[cls]);
            std::swap(pool[used[cls]], pool[pick]);
            ep.queries.push_back(*pool[used[cls]++]);
            ep.query_labels.push_back(cls);
        }
    } else {
        std::vector<std::pair<std::size_t, const Instance*>> pool;
        for (std::size_t i = 0; i < cfg.n_way; ++i) {
            for (const auto* inst : remaining[i]) pool.emplace_back(i, inst);
        }
        if (pool.size() < cfg.q_per_episode) {
            throw Error(Errc::insufficient_data, "only " + std::to_string(pool.size()) +
                                                     " instances remain for queries, episode needs " +
                                                     std::to_string(cfg.q_per_episode));
        }
        detail::partial_shuffle(pool, cfg.q_per_episode, rng);
        for (std::size_t j = 0; j < cfg.q_per_episode; ++j) {
            ep.queries.push_back(*pool[j].second);
            ep.query_labels.push_back(pool[j].first);
        }
    }
    return ep;
}

/// Seeded episode stream over one corpus. The corpus must outlive the sampler.
class EpisodeSampler {
public:
    EpisodeSampler(const Corpus& corpus, EpisodeConfig config)
        : corpus_(&corpus), config_(config), rng_(config.seed) {
        validate(config_);
        if (corpus.relations.size() < config_.n_way) {
            throw Error(Errc::insufficient_data, "corpus '" + corpus.split_name + "' has fewer than n_way relations");
        }
        for (const auto& [id, insts] : corpus.relations) {
            if (insts.size() < config_.k_shot) {
                throw Error(Errc::insufficient_data, "relation '" + id + "' has fewer than k_shot instances");
            }
        }
    }

    Episode next() { return sample_episode(*corpus_, config_, rng_); }

    const EpisodeConfig& config() const { return config_; }

    std::string rng_state() const {
        std::ostringstream out;
        out << rng_;
        return out.str();
    }

    void set_rng_state(const std::string& state) {
        std::istringstream in(state);
        in >> rng_;
        if (!in) throw Error(Errc::malformed_input, "invalid sampler state");
    }

private:
    const Corpus* corpus_;
    EpisodeConfig config_;
    Rng rng_;
};

/// Order-sensitive fingerprint of an episode's instance ids and labels.
inline std::uint64_t fingerprint(const Episode& ep, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    auto mix = [&](std::string_view s) {
        for (unsigned char c : s) seed = (seed ^ c) * 0x100000001b3ULL;
        seed = (seed ^ 0xff) * 0x100000001b3ULL;
    };
    for (const auto& row : ep.support) {
        for (const auto& inst : row) mix(inst.id);
    }
    for (std::size_t j = 0; j < ep.queries.size(); ++j) {
        mix(ep.queries[j].id);
        mix(std::to_string(ep.query_labels[j]));
    }
    return seed;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t n_relations = 10;
    std::size_t per_relation = 50;
    std::size_t base_dim = 16;  // embeddings have 2 * base_dim entries
    double cluster_sep = 10.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
    /// The last `shifted_fraction` of each relation's instances are displaced
    /// by `shift` along a per-instance random unit direction.
    double shift = 0.0;
    double shifted_fraction = 0.0;
};

struct SyntheticCorpus {
    Corpus corpus;
    EmbeddingTable embeddings;
    std::vector<Embedding> centers;
    /// Fraction of instances whose nearest center is their own, checked by
    /// brute force at generation time.
    double nearest_center_accuracy = 0.0;
};

/// Relation i's instances are drawn around a random unit direction scaled by
/// cluster_sep with isotropic Gaussian noise; its relation vector is the
/// center itself.
inline SyntheticCorpus make_synthetic_corpus(const SynthConfig& cfg) {
    if (!(cfg.cluster_sep > 0)) throw Error(Errc::usage, "cluster_sep must be positive");
    if (!(cfg.noise >= 0)) throw Error(Errc::usage, "noise must be non-negative");
    if (cfg.shifted_fraction < 0 || cfg.shifted_fraction > 1) throw Error(Errc::usage, "shifted_fraction must be in [0,1]");
    if (cfg.n_relations == 0 || cfg.per_relation == 0 || cfg.base_dim == 0) {
        throw Error(Errc::usage, "synthetic corpus sizes must be positive");
    }
    const std::size_t dim = 2 * cfg.base_dim;
    Rng rng(cfg.seed);

    auto unit_direction = [&] {
        Embedding v(dim);
        double norm = 0;
        do {
            norm = 0;
            for (auto& x : v) {
                x = standard_normal(rng);
                norm += x * x;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        return v;
    };

    SyntheticCorpus out;
    out.corpus.split_name = "synthetic";
    out.embeddings.dim = dim;
    for (std::size_t i = 0; i < cfg.n_relations; ++i) out.centers.push_back(scale(unit_direction(), cfg.cluster_sep));

    const auto n_shifted = static_cast<std::size_t>(std::llround(cfg.shifted_fraction * cfg.per_relation));
    const int width = static_cast<int>(std::to_string(cfg.n_relations).size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < cfg.n_relations; ++i) {
        std::ostringstream id;
        id << 'R' << std::setw(width) << std::setfill('0') << i;
        const std::string rel_id = id.str();

        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (double x : out.centers[i]) {
            for (char c : format_double(x)) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
        }
        std::ostringstream desc;
        desc << "relation " << i << " about " << std::hex << std::setw(16) << std::setfill('0') << h;
        RelationInfo info{rel_id, "rel" + std::to_string(i), desc.str()};
        out.embeddings.insert(relation_key(info), out.centers[i]);
        out.corpus.catalog.emplace(rel_id, info);

        auto& bucket = out.corpus.relations[rel_id];
        for (std::size_t j = 0; j < cfg.per_relation; ++j) {
            Embedding v = out.centers[i];
            for (auto& x : v) x += cfg.noise * standard_normal(rng);
            if (j >= cfg.per_relation - n_shifted) axpy(cfg.shift, unit_direction(), v);

            Instance inst;
            inst.id = rel_id + "#" + std::to_string(j);
            inst.relation_id = rel_id;
            const std::string tag = std::to_string(i) + "_" + std::to_string(j);
            inst.tokens = {"h" + tag, "relates", "to", "t" + tag};
            inst.head = {0, 1};
            inst.tail = {3, 4};
            inst.head_ref = {"h" + tag, ""};
            inst.tail_ref = {"t" + tag, ""};
            out.embeddings.insert(instance_key(inst), v);

            std::size_t nearest = 0;
            double best = euclidean_distance(v, out.centers[0]);
            for (std::size_t c = 1; c < cfg.n_relations; ++c) {
                const double d = euclidean_distance(v, out.centers[c]);
                if (d < best) {
                    best = d;
                    nearest = c;
                }
            }
            if (nearest == i) ++correct;
            bucket.push_back(std::move(inst));
        }
    }
    out.nearest_center_accuracy =
        static_cast<double>(correct) / static_cast<double>(cfg.n_relations * cfg.per_relation);
    return out;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

/// Encodes every instance and relation of `corpus` under the model's
/// current parameters, in the precomputed-embedding layout.
inline EmbeddingTable export_embedding_table(const Model& model, const Corpus& corpus) {
    EmbeddingTable table;
    table.dim = model.embedding_dim();
    const std::span<const double> params(model.params.encoder);
    std::visit(
        [&](const auto& enc) {
            for (const auto& [id, insts] : corpus.relations) {
                for (const auto& inst : insts) table.insert(instance_key(inst), enc.encode_instance(params, inst));
                const auto rel = corpus.relation(id);
                table.insert(relation_key(rel), enc.encode_relation(params, rel));
            }
        },
        model.encoder);
    return table;
}

/// One CSV row per query: episode,gold,pred,e0..e{D-1}.
inline void write_query_embeddings(std::ostream& out, const Model& model, const std::vector<Episode>& episodes) {
    out << "episode,gold,pred";
    for (std::size_t t = 0; t < model.embedding_dim(); ++t) out << ",e" << t;
    out << '\n';
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto tr = forward_episode(model, episodes[e]);
        const auto pred = predict_episode(tr);
        for (std::size_t j = 0; j < tr.queries.size(); ++j) {
            out << e << ',' << episodes[e].query_labels[j] << ',' << pred[j];
            for (double x : tr.queries[j]) out << ',' << format_double(x);
            out << '\n';
        }
    }
}

inline void export_query_embeddings(const Model& model, const std::vector<Episode>& episodes,
                                    const std::string& out_path) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open '" + out_path + "' for writing");
    write_query_embeddings(out, model, episodes);
    if (!out) throw Error(Errc::io, "write to '" + out_path + "' failed");
}

}  // namespace raps
