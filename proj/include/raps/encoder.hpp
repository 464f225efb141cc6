#pragma once

#include <concepts>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "raps/core.hpp"

namespace raps {

/// Instance and relation encoders map text onto 2d-dimensional vectors.
/// Parameters live outside the encoder as a flat vector so the encoder
/// object itself is immutable architecture; forward passes are templated on
/// the scalar type so gradient oracles can run them in extended precision.
template <class E>
concept Encoder = requires(const E& enc, std::span<const double> params, const Instance& inst,
                           const RelationInfo& rel, const Embedding& cot, std::span<double> grad) {
    { enc.output_dim() } -> std::convertible_to<std::size_t>;
    { enc.param_count() } -> std::convertible_to<std::size_t>;
    { enc.encode_instance(params, inst) } -> std::same_as<Embedding>;
    { enc.encode_relation(params, rel) } -> std::same_as<Embedding>;
    enc.backward_instance(params, inst, cot, grad);
    enc.backward_relation(params, rel, cot, grad);
};

// ---------------------------------------------------------------------------
// Lookup encoder
// ---------------------------------------------------------------------------

/// Token string -> table row. Rows 0 and 1 are reserved for unknown tokens
/// and the relation summary slot.
class Vocabulary {
public:
    static constexpr std::size_t unk_row = 0;
    static constexpr std::size_t cls_row = 1;
    static constexpr std::string_view unk_token = "<unk>";
    static constexpr std::string_view cls_token = "<cls>";

    Vocabulary() : tokens_{std::string(unk_token), std::string(cls_token)} {}

    explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
        for (const auto& t : tokens) insert(t);
    }

    void insert(const std::string& token) {
        if (token == unk_token || token == cls_token || index_.contains(token)) return;
        index_.emplace(token, tokens_.size());
        tokens_.push_back(token);
    }

    std::size_t row(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? unk_row : it->second;
    }

    std::size_t size() const { return tokens_.size(); }

    /// All rows in order, reserved rows included.
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Whitespace tokens of "name : description"; the separator is dropped when
/// the description is empty.
inline std::vector<std::string> relation_tokens(const RelationInfo& rel) {
    auto tokens = split_whitespace(rel.name);
    if (tokens.empty()) {
        throw Error(Errc::malformed_input, "relation '" + rel.relation_id + "' has an empty name");
    }
    auto desc = split_whitespace(rel.description);
    if (!desc.empty()) {
        tokens.emplace_back(":");
        tokens.insert(tokens.end(), desc.begin(), desc.end());
    }
    return tokens;
}

/// Trainable desk-scale encoder. An instance is encoded as
/// concat(P e_head + b, P e_tail + b) where e_x is the table row of the
/// mention's first token; a relation as concat(P e_cls + b, P mean(e_tok) + b).
///
/// Parameter layout: token table (rows x d, row-major), projection (d x d,
/// row-major), bias (d).
class LookupEncoder {
public:
    LookupEncoder(Vocabulary vocab, std::size_t base_dim)
        : vocab_(std::make_shared<const Vocabulary>(std::move(vocab))), base_dim_(base_dim) {
        if (base_dim_ == 0) throw Error(Errc::usage, "encoder base dimension must be positive");
    }

    std::size_t base_dim() const { return base_dim_; }
    std::size_t output_dim() const { return 2 * base_dim_; }
    const Vocabulary& vocabulary() const { return *vocab_; }

    std::size_t table_size() const { return vocab_->size() * base_dim_; }
    std::size_t projection_offset() const { return table_size(); }
    std::size_t bias_offset() const { return table_size() + base_dim_ * base_dim_; }
    std::size_t param_count() const { return bias_offset() + base_dim_; }

    /// Table ~ N(0, 1/d), projection = identity, bias = 0.
    std::vector<double> init_params(Rng& rng) const {
        std::vector<double> params(param_count(), 0.0);
        const double sd = 1.0 / std::sqrt(static_cast<double>(base_dim_));
        for (std::size_t i = 0; i < table_size(); ++i) params[i] = sd * standard_normal(rng);
        for (std::size_t i = 0; i < base_dim_; ++i) params[projection_offset() + i * base_dim_ + i] = 1.0;
        return params;
    }

    template <class Real>
    Vector<Real> encode_instance(std::span<const Real> params, const Instance& inst) const {
        check(params.size());
        validate(inst.head, inst.tokens.size(), "head");
        validate(inst.tail, inst.tokens.size(), "tail");
        auto out = affine(params, row(params, vocab_->row(inst.tokens[inst.head.begin])));
        auto tail = affine(params, row(params, vocab_->row(inst.tokens[inst.tail.begin])));
        out.insert(out.end(), tail.begin(), tail.end());
        return out;
    }

    template <class Real>
    Vector<Real> encode_relation(std::span<const Real> params, const RelationInfo& rel) const {
        check(params.size());
        auto out = affine(params, row(params, Vocabulary::cls_row));
        auto pooled = affine(params, mean_row(params, relation_tokens(rel)));
        out.insert(out.end(), pooled.begin(), pooled.end());
        return out;
    }

    /// Accumulates d(loss)/d(params) given d(loss)/d(encode_instance) into grad.
    void backward_instance(std::span<const double> params, const Instance& inst, const Embedding& cot,
                           std::span<double> grad) const {
        check(params.size());
        check_cotangent(cot, grad);
        const std::size_t d = base_dim_;
        const Embedding upper(cot.begin(), cot.begin() + static_cast<std::ptrdiff_t>(d));
        const Embedding lower(cot.begin() + static_cast<std::ptrdiff_t>(d), cot.end());
        backward_affine(params, {vocab_->row(inst.tokens.at(inst.head.begin))}, upper, grad);
        backward_affine(params, {vocab_->row(inst.tokens.at(inst.tail.begin))}, lower, grad);
    }

    void backward_relation(std::span<const double> params, const RelationInfo& rel, const Embedding& cot,
                           std::span<double> grad) const {
        check(params.size());
        check_cotangent(cot, grad);
        const std::size_t d = base_dim_;
        const Embedding upper(cot.begin(), cot.begin() + static_cast<std::ptrdiff_t>(d));
        const Embedding lower(cot.begin() + static_cast<std::ptrdiff_t>(d), cot.end());
        backward_affine(params, {Vocabulary::cls_row}, upper, grad);
        std::vector<std::size_t> rows;
        for (const auto& t : relation_tokens(rel)) rows.push_back(vocab_->row(t));
        backward_affine(params, rows, lower, grad);
    }

private:
    void check(std::size_t n) const {
        if (n != param_count()) {
            throw Error(Errc::dim_mismatch, "lookup encoder expects " + std::to_string(param_count()) +
                                                " parameters, got " + std::to_string(n));
        }
    }

    void check_cotangent(const Embedding& cot, std::span<double> grad) const {
        if (cot.size() != output_dim()) throw Error(Errc::dim_mismatch, "encoder cotangent has wrong dimension");
        if (grad.size() != param_count()) throw Error(Errc::dim_mismatch, "encoder gradient buffer has wrong size");
    }

    template <class Real>
    Vector<Real> row(std::span<const Real> params, std::size_t r) const {
        auto first = params.begin() + static_cast<std::ptrdiff_t>(r * base_dim_);
        return Vector<Real>(first, first + static_cast<std::ptrdiff_t>(base_dim_));
    }

    template <class Real>
    Vector<Real> mean_row(std::span<const Real> params, const std::vector<std::string>& tokens) const {
        Vector<Real> acc(base_dim_, Real(0));
        for (const auto& t : tokens) {
            const std::size_t r = vocab_->row(t);
            for (std::size_t i = 0; i < base_dim_; ++i) acc[i] += params[r * base_dim_ + i];
        }
        const Real inv = Real(1) / static_cast<Real>(tokens.size());
        for (auto& x : acc) x *= inv;
        return acc;
    }

    template <class Real>
    Vector<Real> affine(std::span<const Real> params, const Vector<Real>& x) const {
        auto y = matvec(params.subspan(projection_offset(), base_dim_ * base_dim_), base_dim_, base_dim_, x);
        for (std::size_t i = 0; i < base_dim_; ++i) y[i] += params[bias_offset() + i];
        return y;
    }

    // y = P mean(rows) + b, with cotangent g.
    void backward_affine(std::span<const double> params, const std::vector<std::size_t>& rows, const Embedding& g,
                         std::span<double> grad) const {
        const std::size_t d = base_dim_;
        Embedding x(d, 0.0);
        for (std::size_t r : rows) {
            for (std::size_t i = 0; i < d; ++i) x[i] += params[r * d + i];
        }
        const double inv = 1.0 / static_cast<double>(rows.size());
        for (auto& v : x) v *= inv;

        add_outer(grad.subspan(projection_offset(), d * d), g, x);
        for (std::size_t i = 0; i < d; ++i) grad[bias_offset() + i] += g[i];

        const auto dx = matvec_t(params.subspan(projection_offset(), d * d), d, d, g);
        for (std::size_t r : rows) {
            for (std::size_t i = 0; i < d; ++i) grad[r * d + i] += inv * dx[i];
        }
    }

    std::shared_ptr<const Vocabulary> vocab_;
    std::size_t base_dim_;
};

// ---------------------------------------------------------------------------
// Precomputed embeddings
// ---------------------------------------------------------------------------

inline std::string instance_key(const Instance& inst) { return "inst:" + inst.id; }
inline std::string relation_key(const RelationInfo& rel) { return "rel:" + rel.relation_id; }

/// Keyed vectors in the on-disk embedding format:
///
///     dim=<D>
///     <key>\t<f1>,<f2>,...,<fD>
///
/// Keys are `inst:<corpus-id>` or `rel:<relation-id>`; values print in
/// shortest round-trip form so write/read is bit-exact.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::map<std::string, Embedding> rows;

    void insert(const std::string& key, Embedding value) {
        if (value.size() != dim) {
            throw Error(Errc::dim_mismatch, "embedding '" + key + "' has dimension " + std::to_string(value.size()) +
                                                ", expected " + std::to_string(dim));
        }
        if (!rows.emplace(key, std::move(value)).second) {
            throw Error(Errc::duplicate_key, "duplicate embedding key '" + key + "'");
        }
    }

    bool operator==(const EmbeddingTable&) const = default;
};

inline void write_embedding_table(std::ostream& out, const EmbeddingTable& table) {
    out << "dim=" << table.dim << '\n';
    for (const auto& [key, vec] : table.rows) {
        out << key << '\t';
        for (std::size_t i = 0; i < vec.size(); ++i) {
            if (i) out << ',';
            out << format_double(vec[i]);
        }
        out << '\n';
    }
}

inline EmbeddingTable read_embedding_table(std::istream& in) {
    EmbeddingTable table;
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("dim=")) {
        throw Error(Errc::malformed_input, "embedding file must start with 'dim=<D>'");
    }
    const double dim = parse_double(std::string_view(line).substr(4));
    if (dim < 1 || dim != static_cast<double>(static_cast<std::size_t>(dim))) {
        throw Error(Errc::malformed_input, "invalid embedding dimension '" + line.substr(4) + "'");
    }
    table.dim = static_cast<std::size_t>(dim);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw Error(Errc::malformed_input, "embedding line " + std::to_string(line_no) + " has no tab separator");
        }
        std::string key = line.substr(0, tab);
        if (!key.starts_with("inst:") && !key.starts_with("rel:")) {
            throw Error(Errc::malformed_input, "embedding key '" + key + "' must start with inst: or rel:");
        }
        Embedding vec;
        std::string_view rest = std::string_view(line).substr(tab + 1);
        while (true) {
            const auto comma = rest.find(',');
            vec.push_back(parse_double(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        table.insert(key, std::move(vec));
    }
    return table;
}

inline void save_embedding_table(const std::string& path, const EmbeddingTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open '" + path + "' for writing");
    write_embedding_table(out, table);
    if (!out) throw Error(Errc::io, "write to '" + path + "' failed");
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open '" + path + "'");
    return read_embedding_table(in);
}

/// Frozen encoder backed by an embedding table. Has no trainable parameters.
class PrecomputedEncoder {
public:
    explicit PrecomputedEncoder(EmbeddingTable table)
        : table_(std::make_shared<const EmbeddingTable>(std::move(table))) {}

    std::size_t output_dim() const { return table_->dim; }
    std::size_t param_count() const { return 0; }
    const EmbeddingTable& table() const { return *table_; }

    template <class Real>
    Vector<Real> encode_instance(std::span<const Real>, const Instance& inst) const {
        return convert<Real>(lookup(instance_key(inst)));
    }

    template <class Real>
    Vector<Real> encode_relation(std::span<const Real>, const RelationInfo& rel) const {
        return convert<Real>(lookup(relation_key(rel)));
    }

    void backward_instance(std::span<const double>, const Instance&, const Embedding&, std::span<double>) const {}
    void backward_relation(std::span<const double>, const RelationInfo&, const Embedding&, std::span<double>) const {}

private:
    const Embedding& lookup(const std::string& key) const {
        auto it = table_->rows.find(key);
        if (it == table_->rows.end()) throw Error(Errc::missing_key, "no precomputed embedding for '" + key + "'");
        return it->second;
    }

    std::shared_ptr<const EmbeddingTable> table_;
};

inline PrecomputedEncoder ingest_precomputed(const std::string& path) {
    return PrecomputedEncoder(load_embedding_table(path));
}

static_assert(Encoder<LookupEncoder>);
static_assert(Encoder<PrecomputedEncoder>);

using AnyEncoder = std::variant<LookupEncoder, PrecomputedEncoder>;

inline std::size_t output_dim(const AnyEncoder& enc) {
    return std::visit([](const auto& e) { return e.output_dim(); }, enc);
}

inline std::size_t param_count(const AnyEncoder& enc) {
    return std::visit([](const auto& e) { return e.param_count(); }, enc);
}

/// Text descriptor stored in checkpoints: "lookup <d>" followed by one
/// vocabulary row per line, or "precomputed <D>".
inline std::string describe(const AnyEncoder& enc) {
    std::ostringstream out;
    if (const auto* lookup = std::get_if<LookupEncoder>(&enc)) {
        out << "lookup " << lookup->base_dim() << '\n';
        for (const auto& t : lookup->vocabulary().tokens()) out << t << '\n';
    } else {
        out << "precomputed " << output_dim(enc) << '\n';
    }
    return out.str();
}

/// Rebuilds a lookup encoder from its descriptor. Precomputed descriptors
/// need the table, which is not stored in the checkpoint.
inline LookupEncoder lookup_from_description(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    std::size_t d = 0;
    if (!(in >> kind >> d) || kind != "lookup") {
        throw Error(Errc::malformed_input, "encoder descriptor is not a lookup encoder");
    }
    std::string line;
    std::getline(in, line);
    std::vector<std::string> tokens;
    while (std::getline(in, line)) tokens.push_back(line);
    if (tokens.size() < 2 || tokens[0] != Vocabulary::unk_token || tokens[1] != Vocabulary::cls_token) {
        throw Error(Errc::malformed_input, "encoder descriptor is missing reserved rows");
    }
    Vocabulary vocab(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
    if (vocab.size() != tokens.size()) throw Error(Errc::malformed_input, "encoder descriptor has duplicate tokens");
    return LookupEncoder(std::move(vocab), d);
}

}  // namespace raps
