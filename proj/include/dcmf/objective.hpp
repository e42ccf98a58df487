#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "dcmf/core.hpp"
#include "dcmf/errors.hpp"

namespace dcmf {

enum class ModelKind { Parafac2, TParafac2, Dcmf };

inline std::string to_string(ModelKind m) {
    switch (m) {
    case ModelKind::Parafac2: return "parafac2";
    case ModelKind::TParafac2: return "tparafac2";
    case ModelKind::Dcmf: return "dcmf";
    }
    return "?";
}

inline ModelKind model_from_string(const std::string& s) {
    if (s == "parafac2") return ModelKind::Parafac2;
    if (s == "tparafac2") return ModelKind::TParafac2;
    if (s == "dcmf") return ModelKind::Dcmf;
    throw std::invalid_argument("unknown model: " + s);
}

/// Slack allowed on the non-negativity of C before a point counts as
/// infeasible for the constrained models.
inline constexpr double kNonnegSlack = 1e-12;

struct PenaltyConfig {
    ModelKind model = ModelKind::Dcmf;
    double lambda = 1e-3;   // ridge weight on A and D_k
    double lambda_b = 0.0;  // temporal weight
    TransitionModel transition = TransitionModel::identity(); // used by Dcmf only

    void validate() const {
        detail::require(lambda >= 0.0, "PenaltyConfig: lambda must be >= 0");
        detail::require(lambda_b >= 0.0, "PenaltyConfig: lambda_b must be >= 0");
        detail::require(model != ModelKind::Parafac2 || lambda_b == 0.0,
                        "PenaltyConfig: parafac2 has no temporal weight; lambda_b must be 0");
    }

    static PenaltyConfig parafac2() {
        return PenaltyConfig{ModelKind::Parafac2, 0.0, 0.0, TransitionModel::identity()};
    }
    static PenaltyConfig tparafac2(double lambda_b, double lambda = 1e-3) {
        return PenaltyConfig{ModelKind::TParafac2, lambda, lambda_b, TransitionModel::identity()};
    }
    static PenaltyConfig dcmf(double lambda_b, TransitionModel tm = TransitionModel::identity(),
                              double lambda = 1e-3) {
        return PenaltyConfig{ModelKind::Dcmf, lambda, lambda_b, std::move(tm)};
    }
};

/// sum_k || X_k - A D_k B_k^T ||_F^2
inline double fidelity_loss(const SliceTensor& t, const FactorSet& f) {
    detail::require(t.rows() == f.rows() && t.cols() == f.evolving_dim() &&
                        t.num_slices() == f.num_slices(),
                    "fidelity_loss: tensor and factor dimensions disagree");
    double sum = 0.0;
    for (Index k = 0; k < t.num_slices(); ++k)
        sum += (t.slice(k) - reconstruct_slice(f, k)).squaredNorm();
    return sum;
}

/// lambda_b * sum_{k=1}^{K-1} || B_{k+1} - H B_k ||_F^2, with per-component
/// matrices applied column by column for the PerComponent variant.
inline double lds_penalty(const FactorSet& f, const TransitionModel& tm, double lambda_b) {
    tm.check_side(f.evolving_dim());
    if (tm.kind() == TransitionModel::Kind::PerComponent)
        detail::require(tm.num_matrices() >= f.rank(),
                        "lds_penalty: need one transition matrix per component");
    double sum = 0.0;
    for (Index k = 0; k + 1 < f.num_slices(); ++k)
        sum += (f.b(k + 1) - tm.apply(f.b(k))).squaredNorm();
    return lambda_b * sum;
}

/// lambda_b * sum_{k=1}^{K-1} || B_{k+1} - B_k ||_F^2; by construction the
/// same code path as lds_penalty with an identity transition.
inline double smoothness_penalty(const FactorSet& f, double lambda_b) {
    return lds_penalty(f, TransitionModel::identity(), lambda_b);
}

struct ObjectiveTerms {
    double fidelity = 0.0;
    double ridge_a = 0.0;
    double ridge_d = 0.0;
    double temporal = 0.0;

    double total() const { return fidelity + ridge_a + ridge_d + temporal; }
};

/// Finite part of the model objective (the non-negativity indicator is
/// handled as a feasibility check, never as an arithmetic infinity).
inline ObjectiveTerms objective_terms(const SliceTensor& t, const FactorSet& f,
                                      const PenaltyConfig& cfg) {
    ObjectiveTerms terms;
    terms.fidelity = fidelity_loss(t, f);
    terms.ridge_a = cfg.lambda * f.a().squaredNorm();
    terms.ridge_d = cfg.lambda * f.c().squaredNorm(); // sum_k ||D_k||_F^2 = ||C||_F^2
    switch (cfg.model) {
    case ModelKind::Parafac2: terms.temporal = 0.0; break;
    case ModelKind::TParafac2: terms.temporal = smoothness_penalty(f, cfg.lambda_b); break;
    case ModelKind::Dcmf: terms.temporal = lds_penalty(f, cfg.transition, cfg.lambda_b); break;
    }
    return terms;
}

inline bool nonneg_feasible(const FactorSet& f, double slack = kNonnegSlack) {
    return (f.c().array() >= -slack).all();
}

/// Full objective value at a feasible point. The constrained models reject
/// points with C entries below -1e-12 (the indicator would be +inf there).
inline double total_objective(const SliceTensor& t, const FactorSet& f,
                              const PenaltyConfig& cfg) {
    cfg.validate();
    if (cfg.model != ModelKind::Parafac2 && !nonneg_feasible(f))
        throw InfeasiblePointError("total_objective: negative C entry, point is infeasible");
    return objective_terms(t, f, cfg).total();
}

struct ObjectiveGradients {
    Matrix a;              // I x R
    std::vector<Matrix> b; // K of J x R
    Matrix c;              // K x R
};

/// Analytic gradients of the smooth part of the objective (fidelity + ridge +
/// temporal penalty; the indicator is excluded). These are the stationarity
/// conditions the closed-form block updates solve.
inline ObjectiveGradients objective_gradients(const SliceTensor& t, const FactorSet& f,
                                              const PenaltyConfig& cfg) {
    cfg.validate();
    const Index num_slices = f.num_slices();
    ObjectiveGradients g;
    g.a = 2.0 * cfg.lambda * f.a();
    g.c = 2.0 * cfg.lambda * f.c();
    g.b.resize(static_cast<std::size_t>(num_slices));

    for (Index k = 0; k < num_slices; ++k) {
        const Vector d = f.d(k);
        const Matrix residual = t.slice(k) - f.a() * d.asDiagonal() * f.b(k).transpose();
        g.a.noalias() += -2.0 * residual * f.b(k) * d.asDiagonal();
        g.b[static_cast<std::size_t>(k)] = -2.0 * residual.transpose() * f.a() * d.asDiagonal();
        g.c.row(k) += -2.0 * (f.a().transpose() * residual * f.b(k)).diagonal().transpose();
    }

    const bool temporal = cfg.model != ModelKind::Parafac2 && cfg.lambda_b > 0.0;
    if (temporal && num_slices > 1) {
        const TransitionModel& tm = cfg.model == ModelKind::Dcmf ? cfg.transition
                                                                 : TransitionModel::identity();
        tm.check_side(f.evolving_dim());
        for (Index k = 0; k + 1 < num_slices; ++k) {
            const Matrix diff = f.b(k + 1) - tm.apply(f.b(k)); // J x R
            g.b[static_cast<std::size_t>(k + 1)] += 2.0 * cfg.lambda_b * diff;
            if (tm.is_identity()) {
                g.b[static_cast<std::size_t>(k)] -= 2.0 * cfg.lambda_b * diff;
            } else if (tm.kind() == TransitionModel::Kind::Shared) {
                g.b[static_cast<std::size_t>(k)].noalias() -=
                    2.0 * cfg.lambda_b * tm.component_matrix(0, f.evolving_dim()).transpose() * diff;
            } else {
                for (Index r = 0; r < f.rank(); ++r)
                    g.b[static_cast<std::size_t>(k)].col(r).noalias() -=
                        2.0 * cfg.lambda_b *
                        tm.component_matrix(r, f.evolving_dim()).transpose() * diff.col(r);
            }
        }
    }
    return g;
}

} // namespace dcmf
