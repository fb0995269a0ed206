#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "modaltune/assembly.hpp"
#include "modaltune/errors.hpp"

namespace modaltune {

struct LanczosOptions {
    double tol = 1e-10; // relative residual target per returned pair
    int guard = 3;      // extra pairs converged beyond q to protect ordering
    int max_basis = 300; // Krylov basis cap (also capped at the dof count)
};

/// The q smallest constrained eigenpairs. Frequencies are in Hz; modes are
/// in full (unconstrained) coordinates and M-orthonormal, and satisfy the
/// constraints exactly because they are built through the null-space basis.
struct EigenSolution {
    Eigen::VectorXd eigenvalues;    // omega^2, ascending
    Eigen::VectorXd frequencies_hz; // sqrt(lambda) / 2 pi
    Eigen::MatrixXd modes;          // n_full x q
    Eigen::MatrixXd reduced_modes;  // n_free x q
    Eigen::VectorXd residuals;      // |K v - lambda M v| / |K v|, reduced space

    int count() const { return static_cast<int>(eigenvalues.size()); }
};

inline Eigen::VectorXd frequencies_from_eigenvalues(const Eigen::VectorXd& eigenvalues) {
    return (eigenvalues.array().max(0.0).sqrt() / (2.0 * std::numbers::pi)).matrix();
}

namespace detail {

struct ReducedEigenPairs {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd vectors; // reduced coordinates, M-orthonormal
    Eigen::VectorXd residuals;
    Eigen::MatrixXd basis; // all M-orthonormal Lanczos vectors generated
};

/// Shift-invert Lanczos (shift 0) on the reduced pencil (K, M) with full
/// reorthogonalization in the M inner product. Deterministic: fixed start
/// vector, and canonical-basis injections when a Krylov run breaks down
/// (which also recovers multiple eigenvalues the start vector cannot see).
inline ReducedEigenPairs shift_invert_lanczos(const SparseMatrix& k, const SparseMatrix& m,
                                              int q, const LanczosOptions& opts,
                                              const Eigen::VectorXd& start) {
    const int n = static_cast<int>(k.rows());
    if (q < 1) throw ValidationError("eigensolver: q must be at least 1");
    if (q > n)
        throw ValidationError("eigensolver: requested " + std::to_string(q) +
                              " pairs from a " + std::to_string(n) + "-dof system");

    Eigen::SimplicialLLT<SparseMatrix> chol(k);
    if (chol.info() != Eigen::Success)
        throw SolverError("reduced stiffness is not positive definite; the structure likely "
                          "retains rigid-body modes — review the constraints");

    const int want = std::min(q + opts.guard, n);
    const int cap = std::min(std::max(opts.max_basis, want), n);

    // Machine floor of the explicit relative residual: a pair stored in
    // doubles cannot beat eps * |K| * |v| / |K v|, so the convergence test
    // uses max(tol, floor). Residuals are still reported as measured.
    double k_inf = 0.0;
    {
        Eigen::VectorXd row_sums = Eigen::VectorXd::Zero(n);
        for (int col = 0; col < k.outerSize(); ++col)
            for (SparseMatrix::InnerIterator it(k, col); it; ++it)
                row_sums[it.row()] += std::abs(it.value());
        k_inf = row_sums.maxCoeff();
    }
    const double eps = std::numeric_limits<double>::epsilon();

    Eigen::MatrixXd basis(n, cap);
    Eigen::MatrixXd mbasis(n, cap); // M * basis, cached for reorthogonalization
    int mcount = 0;
    std::vector<double> alpha; // tridiagonal diagonal, one per stepped column
    std::vector<double> beta;  // link j -> j+1; zero across run boundaries
    double alpha_scale = 0.0;  // running operator-scale estimate for breakdown tests

    auto reorthogonalize = [&](Eigen::VectorXd& w) {
        if (mcount == 0) return;
        const auto v = basis.leftCols(mcount);
        const auto mv = mbasis.leftCols(mcount);
        for (int pass = 0; pass < 2; ++pass) w.noalias() -= v * (mv.transpose() * w);
    };

    // Appends w/|w|_M as a new column; returns false when w is (numerically)
    // inside the current span. A step continuation records its norm as the
    // tridiagonal coupling to the previous column; a fresh run records zero.
    auto append = [&](Eigen::VectorXd w, double floor_norm, bool continues_run) {
        reorthogonalize(w);
        Eigen::VectorXd mw = m * w;
        const double norm = std::sqrt(std::max(w.dot(mw), 0.0));
        if (!(norm > floor_norm)) return false;
        if (mcount > 0) beta.push_back(continues_run ? norm : 0.0);
        basis.col(mcount) = w / norm;
        mbasis.col(mcount) = mw / norm;
        ++mcount;
        return true;
    };

    int inject_next = 0;
    auto inject = [&]() {
        while (inject_next < n) {
            const int idx = inject_next++;
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
            e[idx] = 1.0;
            const double baseline = std::sqrt(std::max(m.coeff(idx, idx), 0.0));
            if (append(std::move(e), 1e-8 * baseline, /*continues_run=*/false)) return;
        }
        throw SolverError("eigensolver failed to expand the Krylov basis");
    };

    {
        Eigen::VectorXd w = start;
        const double baseline = std::sqrt(std::max((m * w).dot(w), 0.0));
        if (!append(std::move(w), 1e-8 * baseline, /*continues_run=*/false)) inject();
    }

    struct Extraction {
        Eigen::VectorXd eigenvalues;
        Eigen::MatrixXd vectors;
        Eigen::VectorXd residuals;
        bool all_within_tol = false;
    };

    auto extract = [&]() -> std::optional<Extraction> {
        const int steps = static_cast<int>(alpha.size());
        if (steps < want) return std::nullopt;
        Eigen::MatrixXd t = Eigen::MatrixXd::Zero(steps, steps);
        for (int i = 0; i < steps; ++i) t(i, i) = alpha[i];
        for (int i = 0; i + 1 < steps; ++i) t(i, i + 1) = t(i + 1, i) = beta[i];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
        if (es.info() != Eigen::Success) return std::nullopt;

        // The largest positive Ritz values of T approximate 1/lambda.
        std::vector<int> picked;
        for (int i = steps - 1; i >= 0 && static_cast<int>(picked.size()) < want; --i) {
            if (es.eigenvalues()(i) > 0.0) picked.push_back(i);
        }
        if (static_cast<int>(picked.size()) < want) return std::nullopt;

        Extraction out;
        out.eigenvalues.resize(want);
        out.residuals.resize(want);
        out.vectors.resize(n, want);
        for (int i = 0; i < want; ++i) {
            out.eigenvalues(i) = 1.0 / es.eigenvalues()(picked[i]);
            out.vectors.col(i) =
                basis.leftCols(steps) * es.eigenvectors().col(picked[i]);
        }
        out.all_within_tol = true;
        for (int i = 0; i < want; ++i) {
            Eigen::VectorXd v = out.vectors.col(i);
            const Eigen::VectorXd kv = k * v;
            const Eigen::VectorXd mv = m * v;
            const double kv_norm = kv.norm();
            const double residual = (kv - out.eigenvalues(i) * mv).norm() / kv_norm;
            out.residuals(i) = residual;
            const double floor = 32.0 * eps * k_inf * v.norm() / kv_norm;
            if (residual > std::max(opts.tol, floor)) out.all_within_tol = false;
        }
        return out;
    };

    auto finish = [&](Extraction ex) {
        ReducedEigenPairs out;
        out.eigenvalues = ex.eigenvalues.head(q);
        out.residuals = ex.residuals.head(q);
        out.vectors.resize(n, q);
        for (int i = 0; i < q; ++i) {
            Eigen::VectorXd v = ex.vectors.col(i);
            v /= std::sqrt(v.dot(m * v)); // exact M-normalization
            int imax = 0;
            v.cwiseAbs().maxCoeff(&imax);
            if (v[imax] < 0.0) v = -v;
            out.vectors.col(i) = v;
        }
        out.basis = basis.leftCols(mcount);
        return out;
    };

    auto give_up = [&]() {
        std::string detail = "no Ritz values available";
        if (auto ex = extract()) {
            detail = "achieved residuals:";
            for (int i = 0; i < ex->residuals.size(); ++i)
                detail += " " + std::to_string(ex->residuals(i));
        }
        throw ConvergenceError("eigensolver did not reach the requested residuals within a basis "
                               "of " + std::to_string(mcount) + " vectors (" + detail + ")");
    };

    while (true) {
        if (static_cast<int>(alpha.size()) == mcount) {
            // Run closed by a breakdown: the Krylov space is exhausted.
            if (auto ex = extract(); ex && ex->all_within_tol) return finish(std::move(*ex));
            if (mcount >= cap) give_up();
            inject();
            continue;
        }

        // One Lanczos step from the pending (last) column.
        const int j = mcount - 1;
        const Eigen::VectorXd u = chol.solve(mbasis.col(j));
        const double a = u.dot(mbasis.col(j));
        alpha.push_back(a);
        alpha_scale = std::max(alpha_scale, std::abs(a));
        if (mcount < cap) append(u, 1e-13 * alpha_scale, /*continues_run=*/true);

        if (static_cast<int>(alpha.size()) >= want) {
            if (auto ex = extract(); ex && ex->all_within_tol) return finish(std::move(*ex));
        }
        if (static_cast<int>(alpha.size()) >= cap) give_up();
    }
}

} // namespace detail

/// Eigensolution plus the Lanczos subspace it was computed from (the raw
/// material for local reduced-order models).
struct SolveWithBasis {
    EigenSolution solution;
    Eigen::MatrixXd lanczos_basis; // reduced coordinates, M-orthonormal columns
};

inline SolveWithBasis solve_smallest_with_basis(const ConstrainedSystem& cs,
                                                const Eigen::VectorXd& x, int q,
                                                const LanczosOptions& opts = {}) {
    const auto [k, m] = instantiate(cs.system, x);
    const Eigen::VectorXd start =
        cs.null_basis.transpose() * Eigen::VectorXd::Ones(cs.null_basis.rows());
    detail::ReducedEigenPairs red = detail::shift_invert_lanczos(k, m, q, opts, start);

    SolveWithBasis out;
    out.solution.eigenvalues = std::move(red.eigenvalues);
    out.solution.frequencies_hz = frequencies_from_eigenvalues(out.solution.eigenvalues);
    out.solution.reduced_modes = std::move(red.vectors);
    out.solution.modes = cs.null_basis * out.solution.reduced_modes;
    out.solution.residuals = std::move(red.residuals);
    out.lanczos_basis = std::move(red.basis);
    return out;
}

/// The q smallest eigenpairs of the constrained problem at parameters x.
inline EigenSolution solve_smallest(const ConstrainedSystem& cs, const Eigen::VectorXd& x,
                                    int q, const LanczosOptions& opts = {}) {
    return solve_smallest_with_basis(cs, x, q, opts).solution;
}

/// Full spectrum of the reduced dense pencil, ascending. Test oracle only:
/// refuses systems beyond 2000 reduced dofs.
inline Eigen::VectorXd dense_oracle(const ConstrainedSystem& cs, const Eigen::VectorXd& x) {
    if (cs.system.n > 2000)
        throw ValidationError("dense oracle refuses systems with more than 2000 reduced dofs");
    const auto [k, m] = instantiate(cs.system, x);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
        Eigen::MatrixXd(k), Eigen::MatrixXd(m), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw SolverError("dense eigensolver failed");
    return es.eigenvalues();
}

} // namespace modaltune
