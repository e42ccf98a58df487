#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dcmf/block_tridiag.hpp"
#include "dcmf/core.hpp"
#include "dcmf/errors.hpp"
#include "dcmf/objective.hpp"
#include "dcmf/rng.hpp"

namespace dcmf {

inline constexpr double kRhoFloor = 1e-12;
inline constexpr double kGapNormFloor = 1e-15;

struct SolveConfig {
    Index rank = 3;
    int max_outer_iters = 8000;
    double outer_rel_tol = 1e-8;
    double outer_abs_tol = 1e-8;
    double inner_rel_tol = 1e-5;
    int inner_max_iters = 5;
    double feasibility_tol = 1e-5;
    std::uint64_t seed = 0;
    PenaltyConfig penalties;

    void validate() const {
        detail::require(rank >= 1, "SolveConfig: rank must be positive");
        detail::require(max_outer_iters >= 1 && inner_max_iters >= 1,
                        "SolveConfig: iteration caps must be >= 1");
        detail::require(outer_rel_tol > 0 && outer_abs_tol > 0 && inner_rel_tol > 0 &&
                            feasibility_tol > 0,
                        "SolveConfig: tolerances must be positive");
        penalties.validate();
    }
};

/// Relative distance between each primal block and its ADMM auxiliary,
/// reported per constraint family as the max over k.
struct FeasibilityGaps {
    double b_split = 0.0;                  // LDS split (dcmf) or PARAFAC2 split (the others)
    std::optional<double> b_smooth_split;  // tparafac2's second split
    std::optional<double> d_split;         // non-negativity split

    double max_gap() const {
        double m = b_split;
        if (b_smooth_split) m = std::max(m, *b_smooth_split);
        if (d_split) m = std::max(m, *d_split);
        return m;
    }
};

/// All ADMM auxiliaries, duals and penalty weights. `z_b` is the model's
/// principal B split: the PARAFAC2 split for parafac2/tparafac2 (so that
/// z_b[k] = P_k coreB after each aux update) and the LDS split for dcmf.
/// tparafac2 carries the temporal smoothness on a second, independent split.
struct AdmmState {
    std::vector<Matrix> z_b, mu_b; // K of J x R
    std::vector<double> rho_b;     // K

    std::vector<Matrix> z_b_smooth, mu_b_smooth;
    std::vector<double> rho_b_smooth;

    std::vector<Vector> z_d, mu_d; // K of R
    std::vector<double> rho_d;

    std::optional<Parafac2Aux> parafac2_aux;

    bool has_smooth_split() const { return !z_b_smooth.empty(); }
    bool has_d_split() const { return !z_d.empty(); }
};

struct SolveResult {
    FactorSet factors;
    std::vector<double> objective_trace; // initial value followed by one entry per sweep
    double final_objective = 0.0;
    FeasibilityGaps feasibility;
    int iterations_used = 0;
    bool converged = false;
    bool numerical_failure = false;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

namespace solver_detail {

// trace(diag(d) G diag(d)) = sum_r G(r,r) d_r^2
inline double curvature_rho(const Matrix& gram, const Vector& d) {
    double tr = 0.0;
    for (Index r = 0; r < d.size(); ++r) tr += gram(r, r) * d(r) * d(r);
    return std::max(tr / static_cast<double>(d.size()), kRhoFloor);
}

// trace((G1 o G2)) / R with o the elementwise product
inline double hadamard_rho(const Matrix& g1, const Matrix& g2) {
    double tr = 0.0;
    for (Index r = 0; r < g1.rows(); ++r) tr += g1(r, r) * g2(r, r);
    return std::max(tr / static_cast<double>(g1.rows()), kRhoFloor);
}

/// Solves M x = rhs for symmetric M, falling back to a pseudo-inverse
/// (least-norm) solution when M is numerically singular.
inline Matrix symmetric_solve(const Matrix& m, const Matrix& rhs, bool* used_pinv) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = sv(0) * 1e-12;
    bool truncated = !(sv(0) > 0.0);
    Vector inv_sv(sv.size());
    for (Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) {
            inv_sv(i) = 1.0 / sv(i);
        } else {
            inv_sv(i) = 0.0;
            truncated = true;
        }
    }
    if (used_pinv && truncated) *used_pinv = true;
    return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose() * rhs;
}

inline Vector solve_d_system(const Matrix& gram, const Vector& fid_rhs, double lambda, double rho,
                             const Vector* z_minus_mu, bool* used_pinv) {
    const Index rank = gram.rows();
    Matrix lhs = gram + (lambda + rho / 2.0) * Matrix::Identity(rank, rank);
    Vector rhs = fid_rhs;
    if (z_minus_mu) rhs += (rho / 2.0) * (*z_minus_mu);
    if (lambda + rho / 2.0 > 0.0) {
        Eigen::LLT<Matrix> llt(lhs);
        if (llt.info() == Eigen::Success) return llt.solve(rhs);
    }
    return symmetric_solve(lhs, rhs, used_pinv);
}

/// diag(A^T X_k B_k) without forming the full product.
inline Vector fidelity_diag(const Matrix& at_x, const Matrix& b) {
    Vector out(b.cols());
    for (Index r = 0; r < b.cols(); ++r) out(r) = at_x.row(r).dot(b.col(r));
    return out;
}

} // namespace solver_detail

/// Random starting point plus a consistent ADMM state: A, B_k standard
/// normal, C uniform(0,1), auxiliaries copied from the primals, duals zero,
/// penalty weights from the curvature rule. Deterministic given the seed.
inline std::pair<FactorSet, AdmmState> init_factors(Index rows, Index cols, Index num_slices,
                                                    Index rank, std::uint64_t seed,
                                                    const PenaltyConfig& penalties) {
    detail::require(rows >= 1 && cols >= 1 && num_slices >= 1,
                    "init_factors: dimensions must be positive");
    detail::require(rank >= 1 && rank <= std::min(rows, cols),
                    "init_factors: rank must satisfy 1 <= R <= min(I,J)");
    Rng rng(seed);
    Matrix a(rows, rank);
    rng.fill_normal(a);
    std::vector<Matrix> b(static_cast<std::size_t>(num_slices), Matrix(cols, rank));
    for (auto& bk : b) rng.fill_normal(bk);
    Matrix c(num_slices, rank);
    rng.fill_uniform(c, 0.0, 1.0);
    FactorSet f(std::move(a), std::move(b), std::move(c));

    AdmmState st;
    const Matrix gram_a = f.a().transpose() * f.a();
    st.z_b = f.b();
    st.mu_b.assign(static_cast<std::size_t>(num_slices), Matrix::Zero(cols, rank));
    st.rho_b.resize(static_cast<std::size_t>(num_slices));
    for (Index k = 0; k < num_slices; ++k)
        st.rho_b[static_cast<std::size_t>(k)] = solver_detail::curvature_rho(gram_a, f.d(k));

    if (penalties.model == ModelKind::TParafac2) {
        st.z_b_smooth = f.b();
        st.mu_b_smooth.assign(static_cast<std::size_t>(num_slices), Matrix::Zero(cols, rank));
        st.rho_b_smooth = st.rho_b;
    }
    if (penalties.model != ModelKind::Parafac2) {
        st.z_d.resize(static_cast<std::size_t>(num_slices));
        st.mu_d.assign(static_cast<std::size_t>(num_slices), Vector::Zero(rank));
        st.rho_d.resize(static_cast<std::size_t>(num_slices));
        for (Index k = 0; k < num_slices; ++k) {
            st.z_d[static_cast<std::size_t>(k)] = f.c().row(k).transpose();
            const Matrix gram_b = f.b(k).transpose() * f.b(k);
            st.rho_d[static_cast<std::size_t>(k)] = solver_detail::hadamard_rho(gram_a, gram_b);
        }
    }
    if (penalties.model != ModelKind::Dcmf) {
        Parafac2Aux aux;
        aux.core_b = Matrix::Identity(rank, rank);
        aux.p.assign(static_cast<std::size_t>(num_slices),
                     Matrix::Identity(cols, cols).leftCols(rank));
        st.parafac2_aux = std::move(aux);
    }
    return {std::move(f), std::move(st)};
}

/// Exact ridge least-squares step for A:
/// A = (sum_k X_k B_k D_k)(sum_k D_k B_k^T B_k D_k + lambda I)^{-1}.
inline Matrix update_A(const SliceTensor& t, const FactorSet& f, double lambda,
                       bool* used_pinv = nullptr) {
    const Index rank = f.rank();
    Matrix gram_sum = lambda * Matrix::Identity(rank, rank);
    Matrix rhs_sum = Matrix::Zero(f.rows(), rank);
    for (Index k = 0; k < f.num_slices(); ++k) {
        const Vector d = f.d(k);
        const Matrix bd = f.b(k) * d.asDiagonal();
        gram_sum.noalias() += bd.transpose() * bd;
        rhs_sum.noalias() += t.slice(k) * bd;
    }
    // solve A * gram = rhs through the transposed symmetric system
    return solver_detail::symmetric_solve(gram_sum, rhs_sum.transpose(), used_pinv).transpose();
}

/// Ridge + ADMM-coupled least-squares step for the diagonal weights of D_k:
/// ((A^T A) o (B_k^T B_k) + (lambda + rho/2) I) d
///     = diag(A^T X_k B_k) + (rho/2)(z_d - mu_d).
/// Without a non-negativity split (parafac2) the coupling term is absent.
inline Vector update_Dk(const SliceTensor& t, const FactorSet& f, const AdmmState& st,
                        double lambda, Index k, bool* used_pinv = nullptr) {
    const Matrix gram_a = f.a().transpose() * f.a();
    const Matrix gram_b = f.b(k).transpose() * f.b(k);
    const Matrix gram = gram_a.cwiseProduct(gram_b);
    const Matrix at_x = f.a().transpose() * t.slice(k);
    const Vector fid_rhs = solver_detail::fidelity_diag(at_x, f.b(k));
    if (st.has_d_split()) {
        const auto idx = static_cast<std::size_t>(k);
        const Vector zmu = st.z_d[idx] - st.mu_d[idx];
        return solver_detail::solve_d_system(gram, fid_rhs, lambda, st.rho_d[idx], &zmu,
                                             used_pinv);
    }
    return solver_detail::solve_d_system(gram, fid_rhs, lambda, 0.0, nullptr, used_pinv);
}

/// Proximal least-squares step for B_k with one coupling term per split:
/// B_k = (X_k^T A D_k + sum_s (rho_s/2)(Z_s - mu_s))
///       (D_k A^T A D_k + (sum_s rho_s/2) I)^{-1}.
inline Matrix update_Bk_primal(const SliceTensor& t, const FactorSet& f, const AdmmState& st,
                               Index k) {
    const auto idx = static_cast<std::size_t>(k);
    const Index rank = f.rank();
    const Vector d = f.d(k);
    const Matrix ad = f.a() * d.asDiagonal();
    Matrix rhs = t.slice(k).transpose() * ad;
    double rho_total = st.rho_b[idx];
    rhs.noalias() += (st.rho_b[idx] / 2.0) * (st.z_b[idx] - st.mu_b[idx]);
    if (st.has_smooth_split()) {
        rho_total += st.rho_b_smooth[idx];
        rhs.noalias() += (st.rho_b_smooth[idx] / 2.0) * (st.z_b_smooth[idx] - st.mu_b_smooth[idx]);
    }
    Matrix lhs = ad.transpose() * ad;
    lhs += (rho_total / 2.0) * Matrix::Identity(rank, rank);
    Eigen::LLT<Matrix> llt(lhs);
    if (llt.info() != Eigen::Success) {
        bool pinv = false;
        return solver_detail::symmetric_solve(lhs, rhs.transpose(), &pinv).transpose();
    }
    return llt.solve(rhs.transpose()).transpose();
}

/// Prepared joint minimizer of the LDS-coupled auxiliary problem
///
///   min_Z lambda_b sum_{k>=2} ||Z_k - H Z_{k-1}||^2
///         + sum_k (rho_k/2) ||B_k - Z_k + mu_k||^2,
///
/// whose stationarity is the symmetric block-tridiagonal system with
/// diagonal blocks (rho_k/2) I + lambda_b [k>=2] I + lambda_b [k<=K-1] H^T H,
/// off-diagonal blocks -lambda_b H, and right-hand side (rho_k/2)(B_k+mu_k).
/// All columns share the system (Identity/Shared); PerComponent factors one
/// system per component. Identity transitions reduce to a scalar tridiagonal
/// system applied matrix-wise. The factorization depends only on (rho,
/// lambda_b, H), so it can be reused across inner ADMM iterations.
class LdsAuxSolver {
public:
    LdsAuxSolver(const std::vector<double>& rho, const TransitionModel& tm, double lambda_b,
                 Index evolving_dim, Index rank)
        : rho_(rho), lambda_b_(lambda_b) {
        const auto num_slices = static_cast<Index>(rho.size());
        passthrough_ = (lambda_b == 0.0) || (num_slices == 1);
        if (passthrough_) return;
        tm.check_side(evolving_dim);

        if (tm.is_identity()) {
            std::vector<double> diag(rho.size());
            for (std::size_t k = 0; k < rho.size(); ++k) {
                diag[k] = rho[k] / 2.0;
                if (k >= 1) diag[k] += lambda_b;
                if (k + 1 < rho.size()) diag[k] += lambda_b;
            }
            scalar_.emplace(std::move(diag), std::vector<double>(rho.size() - 1, -lambda_b));
            return;
        }

        const Index num_systems =
            tm.kind() == TransitionModel::Kind::PerComponent ? rank : Index(1);
        detail::require(tm.kind() != TransitionModel::Kind::PerComponent ||
                            tm.num_matrices() >= rank,
                        "LdsAuxSolver: need one transition matrix per component");
        for (Index r = 0; r < num_systems; ++r) {
            const Matrix h = tm.component_matrix(r, evolving_dim);
            const Matrix hth = h.transpose() * h;
            std::vector<Matrix> diag(rho.size());
            for (std::size_t k = 0; k < rho.size(); ++k) {
                diag[k] = (rho[k] / 2.0) * Matrix::Identity(evolving_dim, evolving_dim);
                if (k >= 1)
                    diag[k] += lambda_b * Matrix::Identity(evolving_dim, evolving_dim);
                if (k + 1 < rho.size()) diag[k] += lambda_b * hth;
            }
            std::vector<Matrix> sub(rho.size() - 1, -lambda_b * h);
            block_.emplace_back(diag, sub);
        }
    }

    std::vector<Matrix> apply(const std::vector<Matrix>& b, const std::vector<Matrix>& mu) const {
        detail::require(b.size() == rho_.size() && mu.size() == rho_.size(),
                        "LdsAuxSolver: block count mismatch");
        if (passthrough_) {
            std::vector<Matrix> z(b.size());
            for (std::size_t k = 0; k < b.size(); ++k) z[k] = b[k] + mu[k];
            return z;
        }
        std::vector<Matrix> rhs(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) rhs[k] = (rho_[k] / 2.0) * (b[k] + mu[k]);
        if (scalar_) return scalar_->solve(rhs);
        if (block_.size() == 1) return block_.front().solve(rhs);
        // one block system per component, sharing the per-k right-hand columns
        std::vector<Matrix> z(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) z[k].resize(b[k].rows(), b[k].cols());
        std::vector<Matrix> col_rhs(b.size());
        for (std::size_t r = 0; r < block_.size(); ++r) {
            for (std::size_t k = 0; k < b.size(); ++k)
                col_rhs[k] = rhs[k].col(static_cast<Index>(r));
            const std::vector<Matrix> col = block_[r].solve(col_rhs);
            for (std::size_t k = 0; k < b.size(); ++k)
                z[k].col(static_cast<Index>(r)) = col[k];
        }
        return z;
    }

private:
    std::vector<double> rho_;
    double lambda_b_ = 0.0;
    bool passthrough_ = true;
    std::optional<TridiagonalSolver> scalar_;
    std::vector<BlockTridiagonalSolver> block_;
};

/// Joint exact update of all LDS auxiliaries; lambda_b = 0 or K = 1
/// short-circuit to the decoupled prox Z_k = B_k + mu_k.
inline std::vector<Matrix> update_ZB_lds(const std::vector<Matrix>& b,
                                         const std::vector<Matrix>& mu,
                                         const std::vector<double>& rho,
                                         const TransitionModel& tm, double lambda_b) {
    detail::require(!b.empty(), "update_ZB_lds: K must be >= 1");
    detail::require(lambda_b >= 0.0, "update_ZB_lds: lambda_b must be >= 0");
    return LdsAuxSolver(rho, tm, lambda_b, b.front().rows(), b.front().cols()).apply(b, mu);
}

/// Approximate minimizer of sum_k (rho_k/2)||(B_k+mu_k) - P_k coreB||^2 over
/// orthonormal-column P_k and coreB by alternating Procrustes / weighted
/// average steps, warm-started from (and updating) `aux`. Returns the new
/// auxiliaries Z_k = P_k coreB.
inline std::vector<Matrix> update_ZB_parafac2(const std::vector<Matrix>& b,
                                              const std::vector<Matrix>& mu,
                                              const std::vector<double>& rho, Parafac2Aux& aux,
                                              int max_iters, double rel_tol) {
    detail::require(!b.empty() && b.size() == mu.size() && b.size() == rho.size(),
                    "update_ZB_parafac2: block count mismatch");
    const std::size_t num_slices = b.size();
    const Index rank = b.front().cols();
    detail::require(aux.core_b.rows() == rank && aux.core_b.cols() == rank,
                    "update_ZB_parafac2: coreB must be R x R");

    std::vector<Matrix> m(num_slices);
    for (std::size_t k = 0; k < num_slices; ++k) m[k] = b[k] + mu[k];
    double rho_sum = 0.0;
    for (double r : rho) rho_sum += r;
    detail::require(rho_sum > 0.0, "update_ZB_parafac2: rho must be positive");

    const auto polar_factor = [&](const Matrix& target, bool allow_retry) -> Matrix {
        Eigen::JacobiSVD<Matrix> svd(target, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (!(sv(0) > 0.0) || sv(sv.size() - 1) < 1e-12 * sv(0)) {
            if (!allow_retry)
                throw NumericalError("update_ZB_parafac2: rank-deficient projection target");
            return Matrix(); // signal retry
        }
        return svd.matrixU() * svd.matrixV().transpose();
    };

    for (int iter = 0; iter < max_iters; ++iter) {
        for (std::size_t k = 0; k < num_slices; ++k) {
            Matrix target = m[k] * aux.core_b.transpose();
            Matrix p = polar_factor(target, /*allow_retry=*/true);
            if (p.size() == 0) {
                // perturb coreB deterministically and retry once
                Rng rng(0x50524f4a454354ULL);
                Matrix noise(rank, rank);
                rng.fill_normal(noise);
                aux.core_b += 1e-12 * noise;
                target = m[k] * aux.core_b.transpose();
                p = polar_factor(target, /*allow_retry=*/false);
            }
            aux.p[k] = std::move(p);
        }
        Matrix core_new = Matrix::Zero(rank, rank);
        for (std::size_t k = 0; k < num_slices; ++k)
            core_new.noalias() += rho[k] * (aux.p[k].transpose() * m[k]);
        core_new /= rho_sum;
        const double change = (core_new - aux.core_b).norm() /
                              std::max(aux.core_b.norm(), kGapNormFloor);
        aux.core_b = std::move(core_new);
        if (change <= rel_tol) break;
    }

    std::vector<Matrix> z(num_slices);
    for (std::size_t k = 0; k < num_slices; ++k) z[k] = aux.p[k] * aux.core_b;
    return z;
}

/// Projection of C(k,:) + mu_d[k] onto the non-negative orthant.
inline std::vector<Vector> update_ZD_nonneg(const Matrix& c, const std::vector<Vector>& mu_d) {
    detail::require(static_cast<std::size_t>(c.rows()) == mu_d.size(),
                    "update_ZD_nonneg: need one dual per row of C");
    std::vector<Vector> z(mu_d.size());
    for (Index k = 0; k < c.rows(); ++k)
        z[static_cast<std::size_t>(k)] =
            (c.row(k).transpose() + mu_d[static_cast<std::size_t>(k)]).cwiseMax(0.0);
    return z;
}

inline FeasibilityGaps feasibility_gaps(const FactorSet& f, const AdmmState& st) {
    const auto rel_gap = [](double dist, double norm) {
        return dist / std::max(norm, kGapNormFloor);
    };
    FeasibilityGaps gaps;
    for (Index k = 0; k < f.num_slices(); ++k) {
        const auto idx = static_cast<std::size_t>(k);
        gaps.b_split = std::max(gaps.b_split,
                                rel_gap((f.b(k) - st.z_b[idx]).norm(), f.b(k).norm()));
        if (st.has_smooth_split())
            gaps.b_smooth_split =
                std::max(gaps.b_smooth_split.value_or(0.0),
                         rel_gap((f.b(k) - st.z_b_smooth[idx]).norm(), f.b(k).norm()));
        if (st.has_d_split()) {
            const Vector row = f.c().row(k).transpose();
            gaps.d_split = std::max(gaps.d_split.value_or(0.0),
                                    rel_gap((row - st.z_d[idx]).norm(), row.norm()));
        }
    }
    return gaps;
}

namespace solver_detail {

struct InnerResiduals {
    double primal = 0.0; // max_k ||primal - Z|| / ||primal||
    double change = 0.0; // max_k ||Z_new - Z_old|| / ||Z_old||

    void track(double dist, double primal_norm, double z_change, double z_old_norm) {
        primal = std::max(primal, dist / std::max(primal_norm, kGapNormFloor));
        change = std::max(change, z_change / std::max(z_old_norm, kGapNormFloor));
    }

    bool done(double tol) const { return primal <= tol && change <= tol; }
};

} // namespace solver_detail

/// AO-ADMM fit of the configured model. Sweeps alternate the exact A update,
/// the D block (with a short non-negativity ADMM for dcmf/tparafac2), and the
/// B block with its per-model auxiliary updates. Stops on small relative or
/// absolute change of the finite objective, or at the iteration cap. Runs
/// that hit NaN/Inf are flagged as numerical failures, never thrown.
inline SolveResult fit(const SliceTensor& t, const SolveConfig& cfg) {
    cfg.validate();
    const Index rows = t.rows(), cols = t.cols(), num_slices = t.num_slices();
    const Index rank = cfg.rank;
    const PenaltyConfig& pen = cfg.penalties;
    const bool nonneg = pen.model != ModelKind::Parafac2;
    const bool parafac2_split = pen.model != ModelKind::Dcmf;
    const bool smooth_split = pen.model == ModelKind::TParafac2;
    const bool lds_on_main = pen.model == ModelKind::Dcmf;

    auto [f, st] = init_factors(rows, cols, num_slices, rank, cfg.seed, pen);

    SolveResult res;
    res.seed = cfg.seed;
    res.objective_trace.push_back(objective_terms(t, f, pen).total());

    bool used_pinv = false;
    bool converged_obj = false;
    double prev = res.objective_trace.front();
    int sweeps = 0;

    const auto num = [](Index k) { return static_cast<std::size_t>(k); };

    try {
        for (int outer = 0; outer < cfg.max_outer_iters && !converged_obj; ++outer) {
            ++sweeps;

            // ---- A block ----
            f.mutable_a() = update_A(t, f, pen.lambda, &used_pinv);
            const Matrix gram_a = f.a().transpose() * f.a();

            // ---- D block ----
            std::vector<Matrix> gram_b(num(num_slices));
            std::vector<Vector> fid_rhs(num(num_slices));
            for (Index k = 0; k < num_slices; ++k) {
                gram_b[num(k)] = f.b(k).transpose() * f.b(k);
                const Matrix at_x = f.a().transpose() * t.slice(k);
                fid_rhs[num(k)] = solver_detail::fidelity_diag(at_x, f.b(k));
            }
            if (nonneg) {
                std::vector<Eigen::LLT<Matrix>> llt_d(num(num_slices));
                for (Index k = 0; k < num_slices; ++k) {
                    st.rho_d[num(k)] = solver_detail::hadamard_rho(gram_a, gram_b[num(k)]);
                    Matrix lhs = gram_a.cwiseProduct(gram_b[num(k)]);
                    lhs += (pen.lambda + st.rho_d[num(k)] / 2.0) * Matrix::Identity(rank, rank);
                    llt_d[num(k)].compute(lhs);
                    if (llt_d[num(k)].info() != Eigen::Success)
                        throw NumericalError("fit: D-mode system not positive definite");
                }
                const auto primal_d = [&] {
                    for (Index k = 0; k < num_slices; ++k) {
                        const Vector rhs = fid_rhs[num(k)] + (st.rho_d[num(k)] / 2.0) *
                                                                 (st.z_d[num(k)] - st.mu_d[num(k)]);
                        f.mutable_c().row(k) = llt_d[num(k)].solve(rhs).transpose();
                    }
                };
                primal_d();
                for (int inner = 0; inner < cfg.inner_max_iters; ++inner) {
                    if (inner > 0) primal_d();
                    solver_detail::InnerResiduals resid;
                    for (Index k = 0; k < num_slices; ++k) {
                        const Vector row = f.c().row(k).transpose();
                        Vector z_new = (row + st.mu_d[num(k)]).cwiseMax(0.0);
                        resid.track((row - z_new).norm(), row.norm(),
                                    (z_new - st.z_d[num(k)]).norm(), st.z_d[num(k)].norm());
                        st.z_d[num(k)] = std::move(z_new);
                        st.mu_d[num(k)] += row - st.z_d[num(k)];
                    }
                    if (resid.done(cfg.inner_rel_tol)) break;
                }
            } else {
                for (Index k = 0; k < num_slices; ++k) {
                    const Matrix gram = gram_a.cwiseProduct(gram_b[num(k)]);
                    f.mutable_c().row(k) =
                        solver_detail::solve_d_system(gram, fid_rhs[num(k)], pen.lambda, 0.0,
                                                      nullptr, &used_pinv)
                            .transpose();
                }
            }

            // ---- B block ----
            std::vector<Matrix> b_rhs_fid(num(num_slices));
            std::vector<Eigen::LLT<Matrix>> llt_b(num(num_slices));
            for (Index k = 0; k < num_slices; ++k) {
                const Vector d = f.d(k);
                st.rho_b[num(k)] = solver_detail::curvature_rho(gram_a, d);
                if (smooth_split) st.rho_b_smooth[num(k)] = st.rho_b[num(k)];
                const Matrix ad = f.a() * d.asDiagonal();
                b_rhs_fid[num(k)].noalias() = t.slice(k).transpose() * ad;
                double rho_total = st.rho_b[num(k)];
                if (smooth_split) rho_total += st.rho_b_smooth[num(k)];
                Matrix lhs = ad.transpose() * ad;
                lhs += (rho_total / 2.0) * Matrix::Identity(rank, rank);
                llt_b[num(k)].compute(lhs);
                if (llt_b[num(k)].info() != Eigen::Success)
                    throw NumericalError("fit: B-mode system not positive definite");
            }
            std::optional<LdsAuxSolver> lds;
            if (lds_on_main)
                lds.emplace(st.rho_b, pen.transition, pen.lambda_b, cols, rank);
            else if (smooth_split)
                lds.emplace(st.rho_b_smooth, TransitionModel::identity(), pen.lambda_b, cols,
                            rank);

            const auto primal_b = [&] {
                for (Index k = 0; k < num_slices; ++k) {
                    Matrix rhs = b_rhs_fid[num(k)];
                    rhs.noalias() +=
                        (st.rho_b[num(k)] / 2.0) * (st.z_b[num(k)] - st.mu_b[num(k)]);
                    if (smooth_split)
                        rhs.noalias() += (st.rho_b_smooth[num(k)] / 2.0) *
                                         (st.z_b_smooth[num(k)] - st.mu_b_smooth[num(k)]);
                    f.mutable_b(k) = llt_b[num(k)].solve(rhs.transpose()).transpose();
                }
            };
            primal_b();
            for (int inner = 0; inner < cfg.inner_max_iters; ++inner) {
                if (inner > 0) primal_b();
                solver_detail::InnerResiduals resid;
                std::vector<Matrix> z_main;
                if (lds_on_main) {
                    z_main = lds->apply(f.b(), st.mu_b);
                } else {
                    z_main = update_ZB_parafac2(f.b(), st.mu_b, st.rho_b, *st.parafac2_aux,
                                                cfg.inner_max_iters, cfg.inner_rel_tol);
                }
                for (Index k = 0; k < num_slices; ++k) {
                    resid.track((f.b(k) - z_main[num(k)]).norm(), f.b(k).norm(),
                                (z_main[num(k)] - st.z_b[num(k)]).norm(), st.z_b[num(k)].norm());
                    st.z_b[num(k)] = std::move(z_main[num(k)]);
                    st.mu_b[num(k)] += f.b(k) - st.z_b[num(k)];
                }
                if (smooth_split) {
                    std::vector<Matrix> z_s = lds->apply(f.b(), st.mu_b_smooth);
                    for (Index k = 0; k < num_slices; ++k) {
                        resid.track((f.b(k) - z_s[num(k)]).norm(), f.b(k).norm(),
                                    (z_s[num(k)] - st.z_b_smooth[num(k)]).norm(),
                                    st.z_b_smooth[num(k)].norm());
                        st.z_b_smooth[num(k)] = std::move(z_s[num(k)]);
                        st.mu_b_smooth[num(k)] += f.b(k) - st.z_b_smooth[num(k)];
                    }
                }
                if (resid.done(cfg.inner_rel_tol)) break;
            }

            // ---- objective and stopping ----
            if (!f.all_finite()) {
                res.numerical_failure = true;
                res.warnings.push_back("non-finite factor entries at sweep " +
                                       std::to_string(sweeps));
                break;
            }
            const double value = objective_terms(t, f, pen).total();
            if (!std::isfinite(value)) {
                res.numerical_failure = true;
                res.warnings.push_back("non-finite objective at sweep " + std::to_string(sweeps));
                break;
            }
            res.objective_trace.push_back(value);
            const double diff = std::abs(value - prev);
            if (diff <= cfg.outer_abs_tol ||
                (std::abs(prev) > 0.0 && diff / std::abs(prev) <= cfg.outer_rel_tol))
                converged_obj = true;
            prev = value;
        }
    } catch (const NumericalError& e) {
        res.numerical_failure = true;
        res.warnings.push_back(e.what());
    }

    if (used_pinv)
        res.warnings.push_back("ill-conditioned normal equations; used pseudo-inverse solve");

    res.factors = std::move(f);
    res.final_objective = res.objective_trace.back();
    res.iterations_used = sweeps;
    res.feasibility = feasibility_gaps(res.factors, st);
    res.converged = converged_obj && !res.numerical_failure &&
                    res.feasibility.max_gap() <= cfg.feasibility_tol;
    return res;
}

} // namespace dcmf
