#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dcmf/errors.hpp"

namespace dcmf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

} // namespace detail

/// Third-order tensor stored as K frontal slices of size I x J. Slice index k
/// is the time point. Immutable after construction.
class SliceTensor {
public:
    explicit SliceTensor(std::vector<Matrix> slices) : slices_(std::move(slices)) {
        detail::require(!slices_.empty(), "SliceTensor: K must be >= 1");
        const Index rows = slices_.front().rows();
        const Index cols = slices_.front().cols();
        detail::require(rows >= 1 && cols >= 1, "SliceTensor: dimensions must be positive");
        for (const Matrix& s : slices_) {
            detail::require(s.rows() == rows && s.cols() == cols,
                            "SliceTensor: all slices must share dimensions");
            detail::require(detail::all_finite(s), "SliceTensor: entries must be finite");
        }
    }

    static SliceTensor zeros(Index rows, Index cols, Index num_slices) {
        detail::require(rows >= 1 && cols >= 1 && num_slices >= 1,
                        "SliceTensor: dimensions must be positive");
        return SliceTensor(std::vector<Matrix>(static_cast<std::size_t>(num_slices),
                                               Matrix::Zero(rows, cols)));
    }

    Index rows() const { return slices_.front().rows(); }       // I
    Index cols() const { return slices_.front().cols(); }       // J
    Index num_slices() const { return static_cast<Index>(slices_.size()); } // K

    const Matrix& slice(Index k) const {
        if (k < 0 || k >= num_slices())
            throw std::out_of_range("SliceTensor: slice index " + std::to_string(k) +
                                    " out of range [0," + std::to_string(num_slices()) + ")");
        return slices_[static_cast<std::size_t>(k)];
    }

    const std::vector<Matrix>& slices() const { return slices_; }

private:
    std::vector<Matrix> slices_;
};

/// Factors of the coupled model X_k ~ A D_k B_k^T with D_k = diag(C(k,:)).
/// D_k is never stored; it is formed on demand from the k-th row of C.
class FactorSet {
public:
    FactorSet(Matrix a, std::vector<Matrix> b, Matrix c)
        : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {
        detail::require(!b_.empty(), "FactorSet: need at least one B_k");
        const Index r = a_.cols();
        detail::require(r >= 1, "FactorSet: rank must be positive");
        detail::require(a_.rows() >= 1, "FactorSet: A must be non-empty");
        const Index j = b_.front().rows();
        for (const Matrix& bk : b_) {
            detail::require(bk.cols() == r, "FactorSet: B_k column count must equal R");
            detail::require(bk.rows() == j, "FactorSet: all B_k must share row count");
        }
        detail::require(c_.cols() == r, "FactorSet: C column count must equal R");
        detail::require(c_.rows() == static_cast<Index>(b_.size()),
                        "FactorSet: C must have one row per B_k");
    }

    Index rank() const { return a_.cols(); }                     // R
    Index rows() const { return a_.rows(); }                     // I
    Index evolving_dim() const { return b_.front().rows(); }     // J
    Index num_slices() const { return static_cast<Index>(b_.size()); } // K

    const Matrix& a() const { return a_; }
    const Matrix& c() const { return c_; }
    const std::vector<Matrix>& b() const { return b_; }

    const Matrix& b(Index k) const { return b_[check_k(k)]; }
    Vector d(Index k) const { return c_.row(check_k(k)).transpose(); }

    Matrix& mutable_a() { return a_; }
    Matrix& mutable_c() { return c_; }
    Matrix& mutable_b(Index k) { return b_[check_k(k)]; }
    std::vector<Matrix>& mutable_b() { return b_; }

    bool all_finite() const {
        if (!a_.allFinite() || !c_.allFinite()) return false;
        for (const Matrix& bk : b_)
            if (!bk.allFinite()) return false;
        return true;
    }

private:
    std::size_t check_k(Index k) const {
        if (k < 0 || k >= num_slices())
            throw std::out_of_range("FactorSet: slice index " + std::to_string(k) +
                                    " out of range [0," + std::to_string(num_slices()) + ")");
        return static_cast<std::size_t>(k);
    }

    Matrix a_;
    std::vector<Matrix> b_;
    Matrix c_;
};

/// Transition structure of the temporal linear system b_{k+1} ~ H b_k.
/// Identity behaves exactly as a shared identity matrix of matching size;
/// PerComponent carries one square matrix per component.
class TransitionModel {
public:
    enum class Kind { Identity, Shared, PerComponent };

    static TransitionModel identity() { return TransitionModel(); }

    static TransitionModel shared(Matrix h) {
        detail::require(h.rows() == h.cols() && h.rows() >= 1,
                        "TransitionModel: shared matrix must be square");
        detail::require(detail::all_finite(h), "TransitionModel: entries must be finite");
        TransitionModel tm;
        tm.kind_ = Kind::Shared;
        tm.matrices_.push_back(std::move(h));
        return tm;
    }

    static TransitionModel per_component(std::vector<Matrix> hs) {
        detail::require(!hs.empty(), "TransitionModel: need at least one matrix");
        const Index side = hs.front().rows();
        for (const Matrix& h : hs) {
            detail::require(h.rows() == h.cols() && h.rows() == side,
                            "TransitionModel: all matrices must be square with equal side");
            detail::require(detail::all_finite(h), "TransitionModel: entries must be finite");
        }
        TransitionModel tm;
        tm.kind_ = Kind::PerComponent;
        tm.matrices_ = std::move(hs);
        return tm;
    }

    Kind kind() const { return kind_; }
    bool is_identity() const { return kind_ == Kind::Identity; }

    /// Number of per-component matrices (0 for Identity, 1 for Shared).
    Index num_matrices() const { return static_cast<Index>(matrices_.size()); }

    /// The matrix side, or -1 when the model adapts to any dimension.
    Index side() const { return matrices_.empty() ? -1 : matrices_.front().rows(); }

    void check_side(Index j) const {
        if (kind_ != Kind::Identity && side() != j)
            throw std::invalid_argument("TransitionModel: matrix side " + std::to_string(side()) +
                                        " does not match evolving dimension " + std::to_string(j));
    }

    /// Dense matrix acting on component r (Identity materializes I_j).
    Matrix component_matrix(Index r, Index j) const {
        check_side(j);
        switch (kind_) {
        case Kind::Identity: return Matrix::Identity(j, j);
        case Kind::Shared: return matrices_.front();
        case Kind::PerComponent:
            if (r < 0 || r >= num_matrices())
                throw std::out_of_range("TransitionModel: component index out of range");
            return matrices_[static_cast<std::size_t>(r)];
        }
        throw std::logic_error("TransitionModel: unreachable");
    }

    /// Applies the transition to every column of b: column r maps through its
    /// component matrix (all columns share the matrix for Identity/Shared).
    Matrix apply(const Matrix& b) const {
        check_side(b.rows());
        switch (kind_) {
        case Kind::Identity: return b;
        case Kind::Shared: return matrices_.front() * b;
        case Kind::PerComponent: {
            detail::require(b.cols() <= num_matrices(),
                            "TransitionModel: more columns than component matrices");
            Matrix out(b.rows(), b.cols());
            for (Index r = 0; r < b.cols(); ++r)
                out.col(r) = matrices_[static_cast<std::size_t>(r)] * b.col(r);
            return out;
        }
        }
        throw std::logic_error("TransitionModel: unreachable");
    }

private:
    Kind kind_ = Kind::Identity;
    std::vector<Matrix> matrices_;
};

/// PARAFAC2 auxiliary factorization Z_k = P_k * coreB with orthonormal P_k.
struct Parafac2Aux {
    std::vector<Matrix> p; // K of J x R, orthonormal columns
    Matrix core_b;         // R x R
};

/// A * diag(C(k,:)) * B_k^T.
inline Matrix reconstruct_slice(const FactorSet& f, Index k) {
    return f.a() * f.d(k).asDiagonal() * f.b(k).transpose();
}

inline double frobenius_norm(const SliceTensor& t) {
    double sq = 0.0;
    for (const Matrix& s : t.slices()) sq += s.squaredNorm();
    return std::sqrt(sq);
}

/// || X - Xhat ||_F / || X ||_F with Xhat reconstructed slice by slice.
inline double relative_error(const SliceTensor& t, const FactorSet& f) {
    detail::require(t.rows() == f.rows() && t.cols() == f.evolving_dim() &&
                        t.num_slices() == f.num_slices(),
                    "relative_error: tensor and factor dimensions disagree");
    double num = 0.0, den = 0.0;
    for (Index k = 0; k < t.num_slices(); ++k) {
        num += (t.slice(k) - reconstruct_slice(f, k)).squaredNorm();
        den += t.slice(k).squaredNorm();
    }
    if (den == 0.0) throw std::invalid_argument("relative_error: zero-norm tensor");
    return std::sqrt(num / den);
}

} // namespace dcmf
