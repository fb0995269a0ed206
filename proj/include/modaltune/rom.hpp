// Local reduced-order models of the parametric eigenproblem.
//
// A LocalROM freezes a basis V computed at one expansion point and carries
// the projected parameter blocks V^T B_j V as small dense matrices. Because
// the full matrices are affine in the parameters, so are the projected ones:
// re-assembling the reduced pencil at a new point costs O(m^2 p) and solving
// it costs O(m^3), independent of the mesh size. The basis is ordered so the
// center Ritz vectors come first — truncation to any m >= q keeps the model
// exact at its expansion point.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <modaltune/assembly.hpp>
#include <modaltune/eigensolver.hpp>
#include <modaltune/errors.hpp>

namespace modaltune {

/// Hard upper bound on reduced dimensions; beyond this the dense inner
/// solves start to dominate and a fresh full solve is the better tool.
inline constexpr int kRomDimensionCap = 64;

struct LocalROM {
    Eigen::VectorXd x0;          ///< expansion point, physical units
    ParamSpace params;           ///< copied so evaluation is self-contained
    Eigen::MatrixXd basis;       ///< n_free x m, orthonormal columns
    Eigen::MatrixXd full_basis;  ///< n_full x m, constraint-satisfying expansion
    Eigen::MatrixXd stiffness_const;
    Eigen::MatrixXd mass_const;
    std::vector<Eigen::MatrixXd> param_blocks;  ///< aligned with params.bindings
    int m = 0;  ///< reduced dimension
    int q = 0;  ///< number of modes the model is built to track
};

/// Product of one reduced-basis construction: the model plus the full-order
/// solution at its center, which the Lanczos run produces as a byproduct.
struct RomBuild {
    LocalROM rom;
    EigenSolution center;
};

/// Result of evaluating a LocalROM at a parameter point.
struct RomEval {
    Eigen::VectorXd eigenvalues;    ///< first q reduced eigenvalues, ascending
    Eigen::VectorXd frequencies_hz;
    Eigen::MatrixXd modes;          ///< n_full x q, mass-orthonormal
};

namespace detail {

/// Gram-Schmidt with two correction passes, keeping the input column order
/// and dropping columns that are numerically dependent on earlier ones.
inline Eigen::MatrixXd orthonormalize_keep_order(const Eigen::MatrixXd& candidates,
                                                 int max_cols) {
    const double drop_tol = 1e-8;
    Eigen::MatrixXd q(candidates.rows(),
                      std::min<int>(max_cols, static_cast<int>(candidates.cols())));
    int m = 0;
    for (int j = 0; j < candidates.cols() && m < max_cols; ++j) {
        Eigen::VectorXd w = candidates.col(j);
        const double before = w.norm();
        if (!(before > 0.0)) continue;
        for (int pass = 0; pass < 2; ++pass)
            if (m > 0) w -= q.leftCols(m) * (q.leftCols(m).transpose() * w);
        const double after = w.norm();
        if (after <= drop_tol * before) continue;
        q.col(m++) = w / after;
    }
    return q.leftCols(m);
}

/// Assembles the reduced pencil at x from the constant parts and the
/// parameter blocks. Pure dense arithmetic on m x m matrices.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> reduced_pencil(
    const LocalROM& rom, const Eigen::VectorXd& x) {
    Eigen::MatrixXd k = rom.stiffness_const;
    Eigen::MatrixXd m = rom.mass_const;
    for (int j = 0; j < static_cast<int>(rom.param_blocks.size()); ++j) {
        if (rom.params.bindings[j].property == MaterialProperty::kYoungModulus)
            k += x(j) * rom.param_blocks[j];
        else
            m += x(j) * rom.param_blocks[j];
    }
    return {std::move(k), std::move(m)};
}

/// Solves the reduced pencil at x for all m eigenpairs, with an explicit
/// positive-definiteness check on the reduced mass (Eigen's generalized
/// solver does not report that failure in release builds).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> solve_reduced(
    const LocalROM& rom, const Eigen::VectorXd& x) {
    const auto [k_r, m_r] = reduced_pencil(rom, x);
    Eigen::LLT<Eigen::MatrixXd> mass_check(m_r);
    if (mass_check.info() != Eigen::Success)
        throw SolverError("rom_eval: reduced mass matrix is not positive definite; "
                          "the reduced model is internally inconsistent");
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(
        k_r, m_r, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
    if (ges.info() != Eigen::Success)
        throw SolverError("rom_eval: reduced eigensolve failed");
    return {ges.eigenvalues(), ges.eigenvectors()};
}

} // namespace detail

/// Builds a local reduced model around an already-computed solution at x0,
/// reusing its Lanczos basis — no additional full-order work. Throws a
/// SolverError if the finished model cannot reproduce the center eigenvalues
/// to 1e-10 relative.
inline RomBuild build_rom_from_solve(const ConstrainedSystem& cs,
                                     const Eigen::VectorXd& x0, int q, int m_max,
                                     SolveWithBasis swb) {
    if (q < 1) throw ValidationError("build_rom: at least one mode is required");
    if (swb.solution.count() < q)
        throw ValidationError("build_rom: the solution carries fewer modes than "
                              "requested");
    if (m_max < q)
        throw ValidationError(
            "build_rom: the basis cap must be at least the requested mode count");
    if (m_max > kRomDimensionCap)
        throw ValidationError("build_rom: the basis cap exceeds the reduced-model "
                              "dimension cap (" +
                              std::to_string(kRomDimensionCap) + ")");

    // Ritz vectors first so truncation cannot lose exactness at the center.
    Eigen::MatrixXd candidates(cs.system.n,
                               swb.solution.reduced_modes.cols() +
                                   swb.lanczos_basis.cols());
    candidates << swb.solution.reduced_modes, swb.lanczos_basis;

    LocalROM rom;
    rom.x0 = x0;
    rom.params = cs.system.params;
    rom.basis = detail::orthonormalize_keep_order(candidates, m_max);
    rom.m = static_cast<int>(rom.basis.cols());
    rom.q = q;
    rom.full_basis = cs.null_basis * rom.basis;

    rom.stiffness_const = rom.basis.transpose() *
                          (cs.system.stiffness_const * rom.basis);
    rom.mass_const = rom.basis.transpose() * (cs.system.mass_const * rom.basis);
    rom.stiffness_const = 0.5 * (rom.stiffness_const +
                                 rom.stiffness_const.transpose()).eval();
    rom.mass_const = 0.5 * (rom.mass_const + rom.mass_const.transpose()).eval();
    rom.param_blocks.reserve(cs.system.param_blocks.size());
    for (const auto& block : cs.system.param_blocks) {
        Eigen::MatrixXd reduced = rom.basis.transpose() * (block * rom.basis);
        rom.param_blocks.push_back(0.5 * (reduced + reduced.transpose()));
    }

    // The reduced model must be indistinguishable from the full one at its
    // own expansion point; anything else means the basis lost information.
    const Eigen::VectorXd center_eigenvalues = detail::solve_reduced(rom, x0).first;
    double worst = 0.0;
    for (int i = 0; i < q; ++i) {
        const double exact = swb.solution.eigenvalues(i);
        worst = std::max(
            worst, std::abs(center_eigenvalues(i) - exact) / std::abs(exact));
    }
    if (worst > 1e-10)
        throw SolverError(
            "build_rom: reduced model does not reproduce the center eigenvalues "
            "(achieved relative error " + std::to_string(worst) + ", wanted 1e-10)");

    return {std::move(rom), std::move(swb.solution)};
}

/// Builds a local reduced model at x0, running the full-order solve itself.
inline RomBuild build_rom(const ConstrainedSystem& cs, const Eigen::VectorXd& x0,
                          int q, int m_max = 40, const LanczosOptions& opts = {}) {
    return build_rom_from_solve(cs, x0, q, m_max,
                                solve_smallest_with_basis(cs, x0, q, opts));
}

/// Evaluates the reduced model at a parameter point: dense generalized
/// eigensolve of the m x m pencil, modes expanded back to full coordinates.
inline RomEval rom_eval(const LocalROM& rom, const Eigen::VectorXd& x) {
    if (x.size() != rom.params.dimension())
        throw ValidationError("rom_eval: parameter vector has wrong dimension");

    const auto [eigenvalues, vectors] = detail::solve_reduced(rom, x);

    RomEval out;
    out.eigenvalues = eigenvalues.head(rom.q);
    out.frequencies_hz = frequencies_from_eigenvalues(out.eigenvalues);
    out.modes = rom.full_basis * vectors.leftCols(rom.q);
    for (int i = 0; i < rom.q; ++i) {
        int imax = 0;
        out.modes.col(i).cwiseAbs().maxCoeff(&imax);
        if (out.modes(imax, i) < 0.0) out.modes.col(i) = -out.modes.col(i);
    }
    return out;
}

} // namespace modaltune
