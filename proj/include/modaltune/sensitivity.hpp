#pragma once

// Post-calibration analysis: the residual Jacobian (analytic frequency rows,
// differenced mode-alignment rows), the scaled-Jacobian SVD with
// per-direction trust flags, the decomposition of a measurement perturbation
// along singular directions, and a seeded noise-robustness sweep that
// re-runs the calibration on perturbed measurements.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "modaltune/assembly.hpp"
#include "modaltune/eigensolver.hpp"
#include "modaltune/errors.hpp"
#include "modaltune/objective.hpp"
#include "modaltune/optimizer.hpp"
#include "modaltune/rom.hpp"

namespace modaltune {

/// Jacobian of the weighted residual with respect to the physical
/// parameters, together with how it was obtained.
struct JacobianReport {
    Eigen::MatrixXd matrix;  ///< 2q x p, rows follow the residual layout
    bool fd_fallback = false;  ///< every row differenced (eigenvalue cluster)
    std::vector<std::string> warnings;
};

namespace detail {

/// Step size for differenced rows, as a fraction of each parameter's box
/// width — the same scale the optimizer differences at.
constexpr double kSensitivityStepFraction = 1e-6;

/// Eigenvalues closer than this (relatively) make the per-eigenvector
/// derivative formula ill-posed.
constexpr double kEigenvalueGapTolerance = 1e-8;

/// Clamp a central-difference stencil for column `col` into the box and
/// report the actual width; on a box face this degrades to a one-sided
/// difference instead of stepping outside.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> fd_stencil(
    const ParamSpace& ps, const Eigen::VectorXd& x, int col) {
    const double h =
        kSensitivityStepFraction * (ps.upper(col) - ps.lower(col));
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(col) = std::min(x(col) + h, ps.upper(col));
    xm(col) = std::max(x(col) - h, ps.lower(col));
    return {xp, xm};
}

/// Central finite differences of the full-order residual, column by column.
/// Used when an eigenvalue cluster rules out the analytic formula.
inline Eigen::MatrixXd full_fd_jacobian(const ConstrainedSystem& cs,
                                        const ModalTarget& target,
                                        const Eigen::VectorXd& x,
                                        const LanczosOptions& lanczos) {
    const ParamSpace& ps = cs.system.params;
    const int p = ps.dimension();
    Eigen::MatrixXd j(2 * target.q, p);
    for (int col = 0; col < p; ++col) {
        const auto [xp, xm] = fd_stencil(ps, x, col);
        const double width = xp(col) - xm(col);
        const auto plus = evaluate_full(cs, target, xp, target.q,
                                        PairingMode::kByIndex, lanczos);
        const auto minus = evaluate_full(cs, target, xm, target.q,
                                         PairingMode::kByIndex, lanczos);
        j.col(col) = (plus.res.r - minus.res.r) / width;
    }
    return j;
}

} // namespace detail

/// Jacobian of the residual at x. Frequency rows use the analytic
/// eigenvalue derivative (for an M-normalized eigenvector v of a simple
/// eigenvalue, d lambda = v' dK v - lambda v' dM v); mode-alignment rows are
/// central differences on a reduced model expanded at x. Rows whose weight
/// is zero are identically zero. When two of the matched eigenvalues nearly
/// coincide the eigenvector, and with it the analytic formula, stops being
/// well defined; the whole matrix then falls back to full-order finite
/// differences and the report says so.
inline JacobianReport jacobian(const ConstrainedSystem& cs,
                               const ModalTarget& target,
                               const Eigen::VectorXd& x) {
    const ParamSpace& ps = cs.system.params;
    validate_target_dofs(target, cs.dofs);
    if (target.q < 1)
        throw ValidationError("jacobian: the target matches no modes");

    const int q = target.q;
    const int p = ps.dimension();
    const LanczosOptions lanczos;

    // One extra mode (when the model has one) exposes the gap beyond the
    // matched set: a cluster straddling the q-th mode is just as harmful as
    // one inside it.
    const int q_solve = std::min(q + 1, cs.system.n);
    SolveWithBasis swb = solve_smallest_with_basis(cs, x, q_solve, lanczos);
    const EigenSolution& sol = swb.solution;

    JacobianReport out;
    for (int i = 0; i + 1 < q_solve; ++i) {
        const double a = sol.eigenvalues(i);
        const double b = sol.eigenvalues(i + 1);
        if (std::abs(b - a) <=
            detail::kEigenvalueGapTolerance * std::max(std::abs(a), std::abs(b))) {
            out.fd_fallback = true;
            out.warnings.push_back(
                "jacobian: eigenvalues " + std::to_string(i + 1) + " and " +
                std::to_string(i + 2) +
                " nearly coincide; using finite differences for every row");
            break;
        }
    }
    if (out.fd_fallback) {
        out.matrix = detail::full_fd_jacobian(cs, target, x, lanczos);
        return out;
    }

    out.matrix = Eigen::MatrixXd::Zero(2 * q, p);

    const auto [k_mat, m_mat] = instantiate(cs.system, x);
    (void)k_mat;
    for (int i = 0; i < q; ++i) {
        const double w = target.weights(i);
        if (w == 0.0) continue;
        const double lambda = sol.eigenvalues(i);
        const Eigen::VectorXd v = sol.reduced_modes.col(i);
        const double v_m_v = v.dot(m_mat * v);
        const double to_hz = 1.0 / (4.0 * std::numbers::pi * std::sqrt(lambda));
        for (int col = 0; col < p; ++col) {
            const double quad = v.dot(cs.system.param_blocks[col] * v) / v_m_v;
            const double d_lambda =
                cs.system.scales_stiffness(col) ? quad : -lambda * quad;
            out.matrix(i, col) = -w * d_lambda * to_hz;
        }
    }

    bool any_mode_weight = false;
    for (int i = 0; i < q; ++i)
        if (target.weights(q + i) > 0.0) any_mode_weight = true;
    if (!any_mode_weight) return out;

    // Alignment rows: difference the residual of a reduced model expanded
    // here. The model is exact at x and its error grows quadratically with
    // the step, so at this step size the differenced rows carry full-order
    // accuracy at a fraction of the cost.
    const int m_max = std::min(kRomDimensionCap, std::max(40, q));
    RomBuild build = build_rom_from_solve(cs, x, q, m_max, std::move(swb));
    std::vector<int> pairing(q);
    for (int i = 0; i < q; ++i) pairing[i] = i;

    for (int col = 0; col < p; ++col) {
        const auto [xp, xm] = detail::fd_stencil(ps, x, col);
        const double width = xp(col) - xm(col);
        const auto plus = detail::evaluate_rom(build.rom, target, xp, pairing);
        const auto minus = detail::evaluate_rom(build.rom, target, xm, pairing);
        for (int i = 0; i < q; ++i) {
            if (target.weights(q + i) == 0.0) continue;
            out.matrix(q + i, col) =
                (plus.res.r(q + i) - minus.res.r(q + i)) / width;
        }
    }
    return out;
}

/// SVD of the Jacobian after scaling each column by the corresponding
/// parameter value, so directions compare like-for-like regardless of units.
struct SvdReport {
    Eigen::VectorXd singular_values;  ///< length p, descending; values below
                                      ///< machine rank tolerance report as 0
    Eigen::MatrixXd right_vectors;    ///< p x p, parameter-space directions
    Eigen::MatrixXd left_vectors;     ///< rows x min(rows, p), residual space
    double condition = 0.0;  ///< ratio of extreme singular values; +inf when
                             ///< the smallest is zero
    std::vector<bool> trusted;  ///< singular value above the noise level
};

inline SvdReport svd_report(const Eigen::MatrixXd& j,
                            const Eigen::VectorXd& x_opt, double noise_level) {
    if (j.rows() < 1 || j.cols() < 1)
        throw ValidationError("svd_report: the matrix is empty");
    if (!j.allFinite())
        throw ValidationError("svd_report: the matrix has non-finite entries");
    if (x_opt.size() != j.cols())
        throw ValidationError("svd_report: expected one scale per column, got " +
                              std::to_string(x_opt.size()) + " for " +
                              std::to_string(j.cols()) + " columns");

    const int p = static_cast<int>(j.cols());
    Eigen::MatrixXd scaled = j;
    for (int c = 0; c < p; ++c) scaled.col(c) *= x_opt(c);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled,
                                          Eigen::ComputeThinU | Eigen::ComputeFullV);
    SvdReport out;
    out.singular_values = Eigen::VectorXd::Zero(p);
    out.singular_values.head(svd.singularValues().size()) = svd.singularValues();
    out.right_vectors = svd.matrixV();
    out.left_vectors = svd.matrixU();

    // Values below the machine rank tolerance are reported as exactly zero,
    // matching how the pseudo-inverse will treat them.
    const double rank_tol = std::numeric_limits<double>::epsilon() *
                            static_cast<double>(std::max(j.rows(), j.cols())) *
                            out.singular_values(0);
    for (int i = 0; i < p; ++i)
        if (out.singular_values(i) <= rank_tol) out.singular_values(i) = 0.0;

    const double smallest = out.singular_values(p - 1);
    out.condition = smallest > 0.0
                        ? out.singular_values(0) / smallest
                        : std::numeric_limits<double>::infinity();
    out.trusted.resize(p);
    for (int i = 0; i < p; ++i)
        out.trusted[i] = out.singular_values(i) > noise_level;
    return out;
}

/// Least-squares response of the identified parameters to a measurement
/// perturbation, decomposed over the Jacobian's parameter-space directions.
struct PerturbationResult {
    Eigen::VectorXd delta_x;
    Eigen::VectorXd coefficients;  ///< delta_x expanded over right_vectors
    int rank = 0;
    bool rank_deficient = false;
};

inline PerturbationResult perturb_solution(const Eigen::MatrixXd& j,
                                           const Eigen::VectorXd& delta_b) {
    if (j.rows() < 1 || j.cols() < 1)
        throw ValidationError("perturb_solution: the matrix is empty");
    if (!j.allFinite())
        throw ValidationError(
            "perturb_solution: the matrix has non-finite entries");
    if (delta_b.size() != j.rows())
        throw ValidationError(
            "perturb_solution: expected one entry per residual row, got " +
            std::to_string(delta_b.size()) + " for " + std::to_string(j.rows()) +
            " rows");

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(j,
                                          Eigen::ComputeThinU | Eigen::ComputeFullV);
    const int p = static_cast<int>(j.cols());
    const Eigen::VectorXd& sigma = svd.singularValues();
    const double rank_tol = std::numeric_limits<double>::epsilon() *
                            static_cast<double>(std::max(j.rows(), j.cols())) *
                            sigma(0);

    PerturbationResult out;
    out.delta_x = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < sigma.size(); ++i) {
        if (sigma(i) <= rank_tol) break;  // descending: the rest are smaller
        ++out.rank;
        out.delta_x += (svd.matrixU().col(i).dot(delta_b) / sigma(i)) *
                       svd.matrixV().col(i);
    }
    out.rank_deficient = out.rank < p;
    out.coefficients = svd.matrixV().transpose() * out.delta_x;
    return out;
}

/// One calibration re-run against perturbed measurements.
struct NoiseSweepRow {
    double delta = 0.0;
    std::uint64_t seed = 0;
    /// Infinity norm of the parameter error relative to the perturbed
    /// optimum; NaN when the run failed outright.
    double error = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    std::string note;  ///< failure description when the run threw
};

/// Deterministically perturb a target's measured frequencies by up to a
/// fraction `delta` each, uniformly. The unit draws are made first and
/// scaled afterwards, so a given seed pushes in the same direction at every
/// noise level. With `mode_noise` > 0, mode-shape entries additionally get
/// Gaussian noise scaled by each shape's root-mean-square amplitude.
///
/// Frequencies are overwritten in place rather than passed back through
/// target construction: heavy noise may break the measured ascending order,
/// which the calibration itself never requires.
inline ModalTarget perturb_target(const ModalTarget& clean, double delta,
                                  std::uint64_t seed, double mode_noise = 0.0) {
    if (delta < 0.0)
        throw ValidationError("perturb_target: the noise level must be >= 0, got " +
                              std::to_string(delta));
    ModalTarget noisy = clean;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (Eigen::Index i = 0; i < noisy.frequencies_hz.size(); ++i)
        noisy.frequencies_hz(i) *= 1.0 + delta * unit(rng);
    if (mode_noise > 0.0) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Eigen::Index c = 0; c < noisy.mode_shapes.cols(); ++c) {
            const double scale =
                clean.mode_shapes.col(c).norm() /
                std::sqrt(static_cast<double>(clean.mode_shapes.rows()));
            for (Eigen::Index r = 0; r < noisy.mode_shapes.rows(); ++r)
                noisy.mode_shapes(r, c) += mode_noise * scale * gauss(rng);
        }
    }
    return noisy;
}

/// Re-run the calibration once per (noise level, seed) pair and record how
/// far each perturbed optimum lands from the clean one. Rows are independent
/// and run on a small worker pool; results come back in the caller's
/// (delta, seed) order regardless of scheduling, and a failed row is
/// recorded rather than aborting the sweep.
inline std::vector<NoiseSweepRow> noise_sweep(
    const ConstrainedSystem& cs, const ModalTarget& clean, const ParamSpace& ps,
    const std::vector<double>& deltas, const std::vector<std::uint64_t>& seeds,
    const TrustRegionOptions& opts = {}, int threads = 0,
    double mode_noise = 0.0) {
    for (double d : deltas)
        if (d < 0.0)
            throw ValidationError(
                "noise_sweep: noise levels must be >= 0, got " +
                std::to_string(d));

    const Eigen::VectorXd reference = update(cs, clean, ps, opts).x_opt;

    struct Job {
        double delta;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    jobs.reserve(deltas.size() * seeds.size());
    for (double d : deltas)
        for (std::uint64_t s : seeds) jobs.push_back({d, s});

    std::vector<NoiseSweepRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    const auto run_rows = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
            NoiseSweepRow& row = rows[k];
            row.delta = jobs[k].delta;
            row.seed = jobs[k].seed;
            try {
                const ModalTarget noisy =
                    perturb_target(clean, row.delta, row.seed, mode_noise);
                const UpdateResult run = update(cs, noisy, ps, opts);
                row.error = ((run.x_opt - reference).cwiseQuotient(run.x_opt))
                                .cwiseAbs()
                                .maxCoeff();
                row.converged = run.reason == TerminationReason::kConverged;
            } catch (const std::exception& e) {
                row.note = e.what();  // error stays NaN, converged stays false
            }
        }
    };

    int pool_size =
        threads > 0 ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
    pool_size = std::clamp(pool_size, 1,
                           std::max(1, static_cast<int>(jobs.size())));
    if (pool_size == 1) {
        run_rows();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(pool_size);
        for (int t = 0; t < pool_size; ++t) pool.emplace_back(run_rows);
        for (auto& worker : pool) worker.join();
    }
    return rows;
}

} // namespace modaltune
