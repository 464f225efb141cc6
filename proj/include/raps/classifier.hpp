#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "raps/core.hpp"
#include "raps/prototype.hpp"

namespace raps {

/// q . p_i / temperature for every prototype.
template <class Real>
Vector<Real> class_logits(const Vector<Real>& query, const std::vector<Vector<Real>>& protos, Real temperature = 1) {
    if (!(temperature > 0)) throw Error(Errc::usage, "temperature must be positive");
    Vector<Real> logits(protos.size());
    for (std::size_t i = 0; i < protos.size(); ++i) logits[i] = dot(query, protos[i]) / temperature;
    return logits;
}

template <class Real>
Vector<Real> class_probs(const Vector<Real>& query, const std::vector<Vector<Real>>& protos, Real temperature = 1) {
    auto logits = class_logits(query, protos, temperature);
    for (const auto& z : logits) {
        using std::isfinite;
        if (!isfinite(z)) throw Error(Errc::non_finite, "non-finite classification logit");
    }
    return detail::softmax(logits);
}

/// Argmax; the lowest index wins ties.
template <class Real>
std::size_t argmax(const Vector<Real>& scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

template <class Real>
std::size_t predict(const Vector<Real>& query, const std::vector<Vector<Real>>& protos, Real temperature = 1) {
    return argmax(class_probs(query, protos, temperature));
}

/// -log softmax(logits)[gold], evaluated as logsumexp - logit.
template <class Real>
Real cross_entropy(const Vector<Real>& logits, std::size_t gold) {
    using std::exp;
    using std::log;
    Real top = logits[0];
    for (const auto& z : logits) top = z > top ? z : top;
    Real total = 0;
    for (const auto& z : logits) total += exp(z - top);
    return top + log(total) - logits.at(gold);
}

/// L = -sum_j log P(y = gold_j | q_j), summed over queries.
template <class Real>
Real episode_loss(const std::vector<Vector<Real>>& queries, const std::vector<std::size_t>& labels,
                  const std::vector<Vector<Real>>& protos) {
    if (queries.size() != labels.size()) throw Error(Errc::dim_mismatch, "one label per query expected");
    Real loss = 0;
    for (std::size_t j = 0; j < queries.size(); ++j) {
        if (labels[j] >= protos.size()) throw Error(Errc::usage, "query label out of range");
        loss += cross_entropy(class_logits(queries[j], protos), labels[j]);
    }
    return loss;
}

/// d(cross_entropy)/d(logits) = softmax - onehot(gold).
inline Embedding cross_entropy_grad(const Embedding& logits, std::size_t gold) {
    auto g = detail::softmax(logits);
    g.at(gold) -= 1.0;
    return g;
}

}  // namespace raps
