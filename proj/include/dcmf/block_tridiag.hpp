#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <string>
#include <vector>

#include "dcmf/core.hpp"
#include "dcmf/errors.hpp"

namespace dcmf {

/// Direct solver for symmetric block-tridiagonal systems
///
///   [ D_0  L_0^T            ] [x_0]   [g_0]
///   [ L_0  D_1   L_1^T      ] [x_1] = [g_1]
///   [      L_1   D_2    ... ] [...]   [...]
///
/// by block LU (Thomas) elimination with Cholesky pivot blocks. The overall
/// matrix must be symmetric positive definite. Factoring once and reusing the
/// solve amortizes the elimination across many right-hand sides.
class BlockTridiagonalSolver {
public:
    BlockTridiagonalSolver(const std::vector<Matrix>& diag, const std::vector<Matrix>& sub)
        : sub_(sub) {
        detail::require(!diag.empty(), "block_tridiagonal: need at least one diagonal block");
        detail::require(sub.size() + 1 == diag.size(),
                        "block_tridiagonal: need exactly K-1 off-diagonal blocks");
        const Index side = diag.front().rows();
        for (const Matrix& d : diag)
            detail::require(d.rows() == side && d.cols() == side,
                            "block_tridiagonal: diagonal blocks must be square and equal-sized");
        for (const Matrix& l : sub)
            detail::require(l.rows() == side && l.cols() == side,
                            "block_tridiagonal: off-diagonal blocks must match the diagonal");

        const std::size_t num_blocks = diag.size();
        llt_.resize(num_blocks);
        w_.resize(sub.size());
        Matrix schur = diag[0];
        factor_block(schur, 0);
        for (std::size_t k = 1; k < num_blocks; ++k) {
            // W_{k-1} = L_{k-1} S_{k-1}^{-1}; S symmetric so solve on the transpose.
            w_[k - 1] = llt_[k - 1].solve(sub[k - 1].transpose()).transpose();
            schur = diag[k] - w_[k - 1] * sub[k - 1].transpose();
            schur = 0.5 * (schur + schur.transpose().eval()); // keep the pivot symmetric
            factor_block(schur, k);
        }
    }

    Index block_side() const { return llt_.front().matrixLLT().rows(); }
    Index num_blocks() const { return static_cast<Index>(llt_.size()); }

    /// Solves for right-hand sides given block-wise (each block J x m).
    std::vector<Matrix> solve(const std::vector<Matrix>& rhs) const {
        detail::require(rhs.size() == llt_.size(),
                        "block_tridiagonal: need one right-hand block per diagonal block");
        const std::size_t num_blocks = llt_.size();
        std::vector<Matrix> x(num_blocks);
        // forward elimination
        x[0] = rhs[0];
        for (std::size_t k = 1; k < num_blocks; ++k)
            x[k] = rhs[k] - w_[k - 1] * x[k - 1];
        // back substitution
        x[num_blocks - 1] = llt_[num_blocks - 1].solve(x[num_blocks - 1]);
        for (std::size_t k = num_blocks - 1; k-- > 0;)
            x[k] = llt_[k].solve(x[k] - sub_[k].transpose() * x[k + 1]);
        return x;
    }

private:
    void factor_block(const Matrix& schur, std::size_t k) {
        llt_[k].compute(schur);
        if (llt_[k].info() != Eigen::Success)
            throw NumericalError("block_tridiagonal: singular pivot block " + std::to_string(k));
    }

    std::vector<Matrix> sub_;
    std::vector<Matrix> w_;
    std::vector<Eigen::LLT<Matrix>> llt_;
};

/// One-shot solve of the symmetric block-tridiagonal system above.
inline std::vector<Matrix> solve_block_tridiagonal(const std::vector<Matrix>& diag,
                                                   const std::vector<Matrix>& sub,
                                                   const std::vector<Matrix>& rhs) {
    return BlockTridiagonalSolver(diag, sub).solve(rhs);
}

/// Scalar symmetric tridiagonal Thomas solver whose unknowns are matrices:
/// row k of the system couples X_k to X_{k-1} and X_{k+1} with scalar
/// coefficients. This is the K x K system (T kron I) arising when all
/// blocks are multiples of the identity.
class TridiagonalSolver {
public:
    TridiagonalSolver(std::vector<double> diag, std::vector<double> off) : off_(std::move(off)) {
        detail::require(!diag.empty(), "tridiagonal: need at least one diagonal entry");
        detail::require(off_.size() + 1 == diag.size(), "tridiagonal: need K-1 off entries");
        pivot_.resize(diag.size());
        mult_.resize(off_.size());
        pivot_[0] = check_pivot(diag[0], 0);
        for (std::size_t k = 1; k < diag.size(); ++k) {
            mult_[k - 1] = off_[k - 1] / pivot_[k - 1];
            pivot_[k] = check_pivot(diag[k] - mult_[k - 1] * off_[k - 1], k);
        }
    }

    std::vector<Matrix> solve(const std::vector<Matrix>& rhs) const {
        detail::require(rhs.size() == pivot_.size(), "tridiagonal: rhs block count mismatch");
        const std::size_t n = pivot_.size();
        std::vector<Matrix> x(n);
        x[0] = rhs[0];
        for (std::size_t k = 1; k < n; ++k) x[k] = rhs[k] - mult_[k - 1] * x[k - 1];
        x[n - 1] /= pivot_[n - 1];
        for (std::size_t k = n - 1; k-- > 0;) x[k] = (x[k] - off_[k] * x[k + 1]) / pivot_[k];
        return x;
    }

private:
    static double check_pivot(double p, std::size_t k) {
        if (!(p > 0.0) || !std::isfinite(p))
            throw NumericalError("tridiagonal: non-positive pivot at row " + std::to_string(k));
        return p;
    }

    std::vector<double> off_;
    std::vector<double> pivot_;
    std::vector<double> mult_;
};

} // namespace dcmf
