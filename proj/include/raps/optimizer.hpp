#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "raps/core.hpp"

namespace raps {

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "adam") return OptimizerKind::adam;
    throw Error(Errc::usage, "unknown optimizer '" + std::string(text) + "' (expected sgd|adam)");
}

/// Moment estimates for the adaptive method; empty for plain descent.
struct OptimizerState {
    std::uint64_t steps = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    bool operator==(const OptimizerState&) const = default;
};

class Optimizer {
public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    Optimizer(OptimizerKind kind, std::size_t n_params) : kind_(kind) {
        if (kind_ == OptimizerKind::adam) {
            state_.first_moment.assign(n_params, 0.0);
            state_.second_moment.assign(n_params, 0.0);
        }
    }

    Optimizer(OptimizerKind kind, OptimizerState state) : kind_(kind), state_(std::move(state)) {}

    /// params -= lr * update(grad)
    void step(std::span<double> params, std::span<const double> grad, double learning_rate) {
        if (params.size() != grad.size()) throw Error(Errc::dim_mismatch, "gradient size differs from parameters");
        ++state_.steps;
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * grad[i];
            return;
        }
        if (state_.first_moment.size() != params.size()) {
            throw Error(Errc::dim_mismatch, "optimizer state does not match parameter count");
        }
        const double t = static_cast<double>(state_.steps);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& m = state_.first_moment[i];
            auto& v = state_.second_moment[i];
            m = beta1 * m + (1.0 - beta1) * grad[i];
            v = beta2 * v + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= learning_rate * (m / c1) / (std::sqrt(v / c2) + epsilon);
        }
    }

    OptimizerKind kind() const { return kind_; }
    const OptimizerState& state() const { return state_; }

private:
    OptimizerKind kind_;
    OptimizerState state_;
};

/// Rescales grad so its Euclidean norm is at most max_norm; 0 disables.
inline void clip_gradient(std::span<double> grad, double max_norm) {
    if (max_norm <= 0) return;
    double sq = 0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
}

}  // namespace raps
