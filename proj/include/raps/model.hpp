#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "raps/classifier.hpp"
#include "raps/core.hpp"
#include "raps/encoder.hpp"
#include "raps/fusion.hpp"
#include "raps/prototype.hpp"

namespace raps {

/// All trainable state. The flat view is encoder parameters first (in the
/// encoder's own layout) followed by the fusion parameters.
struct ModelParams {
    std::vector<double> encoder;
    FusionParams fusion;

    std::size_t size() const { return encoder.size() + fusion.free.size(); }

    bool operator==(const ModelParams&) const = default;
};

inline std::vector<double> flatten_params(const ModelParams& params) {
    std::vector<double> flat;
    flat.reserve(params.size());
    flat.insert(flat.end(), params.encoder.begin(), params.encoder.end());
    flat.insert(flat.end(), params.fusion.free.begin(), params.fusion.free.end());
    return flat;
}

/// Inverse of flatten_params; `shape` supplies sizes and the fusion mode.
inline ModelParams unflatten_params(const ModelParams& shape, std::span<const double> flat) {
    if (flat.size() != shape.size()) {
        throw Error(Errc::dim_mismatch, "flat parameter vector has " + std::to_string(flat.size()) +
                                            " entries, model has " + std::to_string(shape.size()));
    }
    ModelParams out = shape;
    const auto split = flat.begin() + static_cast<std::ptrdiff_t>(shape.encoder.size());
    out.encoder.assign(flat.begin(), split);
    out.fusion.free.assign(split, flat.end());
    return out;
}

/// Encoder architecture plus prototype rule plus trainable parameters.
struct Model {
    AnyEncoder encoder;
    ProtoMode proto = ProtoMode::qia;
    ModelParams params;

    std::size_t embedding_dim() const { return output_dim(encoder); }
    FusionMode fusion_mode() const { return params.fusion.mode; }
};

/// Fresh model: encoder initialized from `seed`, fusion at its mode's start point.
inline Model make_model(AnyEncoder encoder, ProtoMode proto, FusionMode fusion, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> enc_params;
    if (const auto* lookup = std::get_if<LookupEncoder>(&encoder)) enc_params = lookup->init_params(rng);
    const std::size_t dim = output_dim(encoder);
    return Model{std::move(encoder), proto, ModelParams{std::move(enc_params), init_fusion(fusion, dim)}};
}

/// Cached forward state for one episode.
template <class Real>
struct EpisodeTrace {
    SupportGrid<Real> support;
    std::vector<Vector<Real>> queries;
    std::vector<Vector<Real>> relations;
    std::vector<Vector<Real>> prototypes;  // initial (naive or attention-weighted)
    std::vector<Vector<Real>> fused;       // integrated
    std::vector<Vector<Real>> logits;      // |Q| x N
    Real loss = 0;
};

/// Forward pass with parameters given as one flat vector (flatten_params
/// order). Templated so gradient oracles can evaluate in extended precision.
template <class Real>
EpisodeTrace<Real> forward_episode(const Model& model, std::span<const Real> flat, const Episode& episode) {
    const std::size_t n_enc = param_count(model.encoder);
    if (flat.size() != n_enc + free_param_count(model.fusion_mode(), model.embedding_dim())) {
        throw Error(Errc::dim_mismatch, "flat parameter vector does not match the model");
    }
    if (episode.relations.size() != episode.n_way() || episode.support.size() != episode.n_way()) {
        throw Error(Errc::malformed_input, "episode relation list and support grid disagree");
    }
    const auto enc_params = flat.first(n_enc);
    const auto fusion_params = flat.subspan(n_enc);

    EpisodeTrace<Real> tr;
    std::visit(
        [&](const auto& enc) {
            for (const auto& row : episode.support) {
                auto& out = tr.support.emplace_back();
                for (const auto& inst : row) out.push_back(enc.encode_instance(enc_params, inst));
            }
            for (const auto& q : episode.queries) tr.queries.push_back(enc.encode_instance(enc_params, q));
            for (const auto& rel : episode.relations) tr.relations.push_back(enc.encode_relation(enc_params, rel));
        },
        model.encoder);

    tr.prototypes = model.proto == ProtoMode::qia ? qia_prototype(tr.support, tr.queries) : naive_prototype(tr.support);
    for (std::size_t i = 0; i < tr.prototypes.size(); ++i) {
        tr.fused.push_back(
            fuse(model.fusion_mode(), model.embedding_dim(), fusion_params, tr.prototypes[i], tr.relations[i]));
    }
    if (episode.query_labels.size() != episode.queries.size()) {
        throw Error(Errc::malformed_input, "episode needs one label per query");
    }
    for (std::size_t j = 0; j < tr.queries.size(); ++j) {
        tr.logits.push_back(class_logits(tr.queries[j], tr.fused));
        tr.loss += cross_entropy(tr.logits.back(), episode.query_labels.at(j));
    }
    return tr;
}

inline EpisodeTrace<double> forward_episode(const Model& model, const Episode& episode) {
    const auto flat = flatten_params(model.params);
    return forward_episode<double>(model, std::span<const double>(flat), episode);
}

/// Gradient of `upstream * loss` w.r.t. every trainable scalar, in
/// flatten_params order.
inline std::vector<double> backward_episode(const Model& model, const Episode& episode,
                                            const EpisodeTrace<double>& tr, double upstream = 1.0) {
    const std::size_t n_way = tr.fused.size();
    const std::size_t dim = model.embedding_dim();
    std::vector<Embedding> d_queries(tr.queries.size(), Embedding(dim, 0.0));
    std::vector<Embedding> d_fused(n_way, Embedding(dim, 0.0));

    for (std::size_t j = 0; j < tr.queries.size(); ++j) {
        auto dl = cross_entropy_grad(tr.logits[j], episode.query_labels[j]);
        for (std::size_t i = 0; i < n_way; ++i) {
            const double c = upstream * dl[i];
            axpy(c, tr.fused[i], d_queries[j]);
            axpy(c, tr.queries[j], d_fused[i]);
        }
    }

    std::vector<double> grad(model.params.size(), 0.0);
    const std::size_t n_enc = model.params.encoder.size();
    std::vector<Embedding> d_protos(n_way);
    std::vector<Embedding> d_relations(n_way);
    for (std::size_t i = 0; i < n_way; ++i) {
        auto fg = fuse_backward(model.params.fusion, tr.prototypes[i], tr.relations[i], d_fused[i]);
        for (std::size_t t = 0; t < fg.params.size(); ++t) grad[n_enc + t] += fg.params[t];
        d_protos[i] = std::move(fg.p);
        d_relations[i] = std::move(fg.r);
    }

    auto pg = model.proto == ProtoMode::qia ? qia_backward(tr.support, tr.queries, d_protos)
                                            : naive_backward(tr.support, tr.queries.size(), d_protos);
    for (std::size_t j = 0; j < d_queries.size(); ++j) axpy(1.0, pg.queries[j], d_queries[j]);

    const std::span<const double> enc_params(model.params.encoder);
    const auto enc_grad = std::span<double>(grad).first(n_enc);
    std::visit(
        [&](const auto& enc) {
            for (std::size_t i = 0; i < n_way; ++i) {
                for (std::size_t k = 0; k < episode.support[i].size(); ++k) {
                    enc.backward_instance(enc_params, episode.support[i][k], pg.support[i][k], enc_grad);
                }
                enc.backward_relation(enc_params, episode.relations[i], d_relations[i], enc_grad);
            }
            for (std::size_t j = 0; j < episode.queries.size(); ++j) {
                enc.backward_instance(enc_params, episode.queries[j], d_queries[j], enc_grad);
            }
        },
        model.encoder);
    return grad;
}

/// Predicted class index per query.
inline std::vector<std::size_t> predict_episode(const EpisodeTrace<double>& tr) {
    std::vector<std::size_t> out;
    out.reserve(tr.logits.size());
    for (const auto& z : tr.logits) out.push_back(argmax(z));
    return out;
}

inline std::vector<std::size_t> predict_episode(const Model& model, const Episode& episode) {
    return predict_episode(forward_episode(model, episode));
}

}  // namespace raps
