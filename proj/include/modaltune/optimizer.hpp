// Calibration of the parametric model against a modal target.
//
// The main driver minimizes the weighted residual objective over the
// parameter box with a trust-region scheme: at each accepted iterate a local
// reduced model is (re)built from the full-order verification solve, the
// subproblem is optimized over the reduced model inside an infinity-norm
// region, and the candidate is accepted or rejected by comparing predicted
// and verified objective decrease. All radii, gradients, and tolerances live
// in scaled coordinates (the box mapped to the unit cube), since raw
// parameters span several orders of magnitude.
//
// A deliberately naive baseline driver — bound-constrained Levenberg-
// Marquardt with finite-difference Jacobians, one full eigensolve per
// evaluation — exists for speed and agreement comparisons.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <modaltune/assembly.hpp>
#include <modaltune/eigensolver.hpp>
#include <modaltune/errors.hpp>
#include <modaltune/objective.hpp>
#include <modaltune/rom.hpp>

namespace modaltune {

struct TrustRegionOptions {
    double pg_tol = 1e-3;        ///< scaled projected-gradient norm to stop at
    int max_rom_builds = 50;
    double initial_radius = 0.25;  ///< in unit-cube coordinates
    double shrink = 0.5;
    double grow = 2.0;
    double eta1 = 0.1;   ///< acceptance threshold on the ratio test
    double eta2 = 0.75;  ///< radius-growth threshold
    int m_max = 40;      ///< reduced-model size cap
    int q = 0;           ///< modes to compute; 0 means match the target
    PairingMode pairing = PairingMode::kByIndex;
    LanczosOptions lanczos;
};

struct IterationRecord {
    int iteration = 0;
    double phi = 0.0;     ///< verified full-model objective at the candidate
    double radius = 0.0;  ///< region radius used for this candidate
    double rho = 0.0;     ///< actual/predicted decrease ratio
    bool accepted = false;
    Eigen::VectorXd x_scaled;
    Eigen::VectorXd x_physical;
    Eigen::VectorXd frequencies_hz;
};

enum class TerminationReason { kConverged, kBudgetExhausted, kStalled };

inline const char* to_string(TerminationReason reason) {
    switch (reason) {
    case TerminationReason::kConverged: return "converged";
    case TerminationReason::kBudgetExhausted: return "budget-exhausted";
    case TerminationReason::kStalled: return "stalled";
    }
    return "unknown";
}

struct UpdateResult {
    Eigen::VectorXd x_opt;  ///< physical units, inside the box
    double phi = 0.0;
    double pg_norm = 0.0;
    TerminationReason reason = TerminationReason::kConverged;
    EigenSolution solution;  ///< full-order solution at x_opt
    Pairing pairing;         ///< mode pairing at x_opt

    std::vector<double> phi_history;                  ///< one entry per model build
    std::vector<Eigen::VectorXd> frequency_history;   ///< paired, per model build
    std::vector<Eigen::VectorXd> x_history;           ///< physical, per model build
    std::vector<IterationRecord> iterations;          ///< every candidate tried
    std::vector<std::string> warnings;

    int rom_builds = 0;
    int full_solves = 0;
};

namespace detail {

/// One full-order evaluation of the objective: eigensolve, pair, residual.
struct FullEvaluation {
    SolveWithBasis solve;
    Pairing pairing;
    Residual res;
    Eigen::VectorXd paired_frequencies;
    Eigen::MatrixXd paired_modes;  ///< projected onto sensors
};

inline FullEvaluation evaluate_full(const ConstrainedSystem& cs,
                                    const ModalTarget& target,
                                    const Eigen::VectorXd& x, int q_solve,
                                    PairingMode pairing_mode,
                                    const LanczosOptions& lanczos) {
    FullEvaluation out;
    out.solve = solve_smallest_with_basis(cs, x, q_solve, lanczos);

    Eigen::MatrixXd projected(target.sensor_dofs.size(), q_solve);
    for (int j = 0; j < q_solve; ++j)
        projected.col(j) = project_mode(out.solve.solution.modes.col(j),
                                        target.sensor_dofs);
    out.pairing = pair_modes(projected, target, pairing_mode);

    out.paired_frequencies.resize(target.q);
    out.paired_modes.resize(projected.rows(), target.q);
    for (int i = 0; i < target.q; ++i) {
        out.paired_frequencies(i) =
            out.solve.solution.frequencies_hz(out.pairing.indices[i]);
        out.paired_modes.col(i) = projected.col(out.pairing.indices[i]);
    }
    out.res = residual(target, out.paired_frequencies, out.paired_modes);
    return out;
}

/// Reduced-model residual at x with a pairing held fixed (the pairing must
/// stay frozen while differentiating, or finite differences would jump
/// across assignment changes).
struct RomEvaluation {
    Eigen::VectorXd eigenvalues;       ///< all m, ascending
    Eigen::MatrixXd reduced_vectors;   ///< m x m
    Residual res;
    Eigen::VectorXd paired_frequencies;
};

inline RomEvaluation evaluate_rom(const LocalROM& rom, const ModalTarget& target,
                                  const Eigen::VectorXd& x,
                                  const std::vector<int>& pairing) {
    RomEvaluation out;
    std::tie(out.eigenvalues, out.reduced_vectors) = solve_reduced(rom, x);

    const Eigen::VectorXd freqs =
        frequencies_from_eigenvalues(out.eigenvalues.head(rom.q));
    Eigen::MatrixXd paired_modes(target.sensor_dofs.size(), target.q);
    out.paired_frequencies.resize(target.q);
    for (int i = 0; i < target.q; ++i) {
        const int j = pairing[i];
        out.paired_frequencies(i) = freqs(j);
        paired_modes.col(i) = project_mode(
            rom.full_basis * out.reduced_vectors.col(j), target.sensor_dofs);
    }
    out.res = residual(target, out.paired_frequencies, paired_modes);
    return out;
}

inline double rom_objective(const LocalROM& rom, const ModalTarget& target,
                            const Eigen::VectorXd& x,
                            const std::vector<int>& pairing) {
    return evaluate_rom(rom, target, x, pairing).res.phi;
}

} // namespace detail

/// Jacobian of the reduced-model residual with respect to the physical
/// parameters, at a frozen mode pairing. Frequency rows use the analytic
/// eigenvalue derivative on the reduced blocks; MAC rows use central finite
/// differences with steps of 1e-6 of each parameter's box width. Rows whose
/// weight is zero are identically zero.
inline Eigen::MatrixXd rom_residual_jacobian(const LocalROM& rom,
                                             const ModalTarget& target,
                                             const Eigen::VectorXd& x,
                                             const std::vector<int>& pairing) {
    const int q = target.q;
    const int p = rom.params.dimension();
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * q, p);

    const auto center = detail::evaluate_rom(rom, target, x, pairing);

    for (int col = 0; col < p; ++col) {
        // d(lambda_i)/dx = u_i' * dK/dx * u_i  (stiffness parameter)
        //               = -lambda_i * u_i' * dM/dx * u_i  (mass parameter)
        // for mass-normalized u_i; then chained to Hz and the residual sign.
        const bool stiffness =
            rom.params.bindings[col].property == MaterialProperty::kYoungModulus;
        for (int i = 0; i < q; ++i) {
            if (target.weights(i) == 0.0) continue;
            const int mode = pairing[i];
            const Eigen::VectorXd& u = center.reduced_vectors.col(mode);
            const double lambda = center.eigenvalues(mode);
            const double quad = u.dot(rom.param_blocks[col] * u);
            const double dlambda = stiffness ? quad : -lambda * quad;
            const double dfreq =
                dlambda / (4.0 * std::numbers::pi * std::sqrt(lambda));
            j(i, col) = -target.weights(i) * dfreq;
        }

        bool any_mode_rows = false;
        for (int i = 0; i < q; ++i)
            if (target.weights(q + i) != 0.0) any_mode_rows = true;
        if (!any_mode_rows) continue;

        const double h = 1e-6 * (rom.params.upper(col) - rom.params.lower(col));
        Eigen::VectorXd forward = x, backward = x;
        forward(col) += h;
        backward(col) -= h;
        const auto plus = detail::evaluate_rom(rom, target, forward, pairing);
        const auto minus = detail::evaluate_rom(rom, target, backward, pairing);
        for (int i = 0; i < q; ++i) {
            if (target.weights(q + i) == 0.0) continue;
            const double dgamma =
                (plus.res.gamma(i) - minus.res.gamma(i)) / (2.0 * h);
            j(q + i, col) = -target.weights(q + i) * dgamma;
        }
    }
    return j;
}

/// Minimizes the reduced-model objective over the intersection of the box
/// and an infinity-norm region around the center, by projected Gauss-Newton
/// steps with a dogleg fallback. Returns the center itself when no
/// descent is found, signalling the caller to shrink the region.
inline Eigen::VectorXd solve_subproblem(const LocalROM& rom,
                                        const ModalTarget& target,
                                        const Eigen::VectorXd& center,
                                        double radius,
                                        const std::vector<int>& pairing) {
    const ParamSpace& ps = rom.params;
    if (radius <= 0.0) return center;

    const Eigen::VectorXd range = ps.upper - ps.lower;
    const Eigen::VectorXd c0 = ps.to_unit(center);
    const Eigen::VectorXd lo = (c0.array() - radius).max(0.0).matrix();
    const Eigen::VectorXd hi = (c0.array() + radius).min(1.0).matrix();
    const auto clamp = [&](const Eigen::VectorXd& c) {
        return c.cwiseMax(lo).cwiseMin(hi).eval();
    };
    const auto phys = [&](const Eigen::VectorXd& c) { return ps.from_unit(c); };

    Eigen::VectorXd c = c0;
    double phi = detail::rom_objective(rom, target, phys(c), pairing);

    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::VectorXd x = phys(c);
        const auto eval = detail::evaluate_rom(rom, target, x, pairing);
        const Eigen::MatrixXd j_scaled =
            rom_residual_jacobian(rom, target, x, pairing) * range.asDiagonal();
        const Eigen::VectorXd g = 2.0 * j_scaled.transpose() * eval.res.r;

        const double pg = (c - clamp(c - g)).norm();
        if (pg <= 1e-10) break;

        // Gauss-Newton step, rank-safe; Cauchy point as the fallback leg.
        const Eigen::VectorXd d_gn =
            j_scaled.colPivHouseholderQr().solve(-eval.res.r);
        const double gnorm2 = g.squaredNorm();
        const Eigen::VectorXd jg = j_scaled * g;
        const double t_cauchy =
            jg.squaredNorm() > 0.0 ? gnorm2 / (2.0 * jg.squaredNorm()) : 0.0;
        const Eigen::VectorXd d_cauchy = -t_cauchy * g;

        Eigen::VectorXd c_try = clamp(c + d_gn);
        if ((c_try - c).norm() <= 1e-16 * (1.0 + c.norm()))
            c_try = clamp(c + d_cauchy);

        double phi_try = detail::rom_objective(rom, target, phys(c_try), pairing);
        if (phi_try >= phi) {
            // Dogleg retreat: walk from the Gauss-Newton point back through
            // the Cauchy point toward the current iterate.
            Eigen::VectorXd best = c;
            double best_phi = phi;
            Eigen::VectorXd probe = clamp(c + d_cauchy);
            double probe_phi =
                detail::rom_objective(rom, target, phys(probe), pairing);
            if (probe_phi < best_phi) {
                best = probe;
                best_phi = probe_phi;
            }
            Eigen::VectorXd d = d_cauchy;
            for (int cut = 0; cut < 30 && best_phi >= phi; ++cut) {
                d *= 0.5;
                probe = clamp(c + d);
                if ((probe - c).norm() == 0.0) break;
                probe_phi = detail::rom_objective(rom, target, phys(probe), pairing);
                if (probe_phi < best_phi) {
                    best = probe;
                    best_phi = probe_phi;
                }
            }
            if (best_phi >= phi) break;  // no descent anywhere along the path
            c = best;
            phi = best_phi;
        } else {
            c = c_try;
            phi = phi_try;
        }
        if (phi == 0.0) break;
    }

    // Never hand back an ascent: the caller treats "candidate == center" as
    // the shrink signal.
    if (phi >= detail::rom_objective(rom, target, center, pairing)) return center;
    return phys(c);
}

namespace detail {

inline int effective_data_count(const ModalTarget& target) {
    int count = 0;
    for (int i = 0; i < target.weights.size(); ++i)
        if (target.weights(i) != 0.0) ++count;
    return count;
}

inline void check_spaces_match(const ConstrainedSystem& cs, const ParamSpace& ps) {
    if (ps.bindings != cs.system.params.bindings)
        throw ValidationError("update: the parameter space does not match the one "
                              "the system was assembled with");
}

/// A predicted objective gain below this fraction of the current value is
/// indistinguishable from the reduced model's own reproduction error (it
/// matches its center to ~1e-10 relative), so chasing it buys nothing: on
/// noisy measurements the subproblem would otherwise keep proposing the same
/// sub-resolution step while the region radius grinds to zero.
constexpr double kPredictedGainFloor = 1e-8;

/// Scaled projected-gradient norm of the full objective, evaluated through
/// the reduced model (exact at its own center).
inline double projected_gradient_norm(const LocalROM& rom, const ModalTarget& target,
                                      const Eigen::VectorXd& x,
                                      const std::vector<int>& pairing,
                                      const Residual& res) {
    const ParamSpace& ps = rom.params;
    const Eigen::VectorXd range = ps.upper - ps.lower;
    const Eigen::MatrixXd j_scaled =
        rom_residual_jacobian(rom, target, x, pairing) * range.asDiagonal();
    const Eigen::VectorXd g = 2.0 * j_scaled.transpose() * res.r;
    const Eigen::VectorXd c = ps.to_unit(x);
    const Eigen::VectorXd projected =
        (c - g).cwiseMax(0.0).cwiseMin(1.0);
    return (c - projected).norm();
}

} // namespace detail

/// Calibrates the parameters against the target with the trust-region scheme
/// over local reduced models. Each candidate costs exactly one full-order
/// eigensolve (its verification), whose Lanczos basis is recycled into the
/// next reduced model when the candidate is accepted.
inline UpdateResult update(const ConstrainedSystem& cs, const ModalTarget& target,
                           const ParamSpace& ps, const TrustRegionOptions& opts = {}) {
    detail::check_spaces_match(cs, ps);
    validate_target_dofs(target, cs.dofs);
    if (target.q < 1)
        throw ValidationError("update: the target must contain at least one mode");
    if (!ps.contains(ps.start))
        throw ValidationError("update: the starting point lies outside the box");
    const int q_solve = opts.q > 0 ? opts.q : target.q;
    if (q_solve < target.q)
        throw ValidationError("update: cannot compute fewer modes than the target "
                              "matches");

    UpdateResult result;
    if (ps.dimension() > detail::effective_data_count(target))
        result.warnings.push_back(
            "more free parameters than effectively weighted data; the problem "
            "is underdetermined");

    // Initial model at the starting point.
    Eigen::VectorXd x_center = ps.start;
    detail::FullEvaluation center = detail::evaluate_full(
        cs, target, x_center, q_solve, opts.pairing, opts.lanczos);
    result.full_solves += 1;
    RomBuild build = build_rom_from_solve(cs, x_center, q_solve, opts.m_max,
                                          std::move(center.solve));
    result.rom_builds += 1;
    if (center.pairing.swapped) result.warnings.push_back(center.pairing.warning);

    result.phi_history.push_back(center.res.phi);
    result.frequency_history.push_back(center.paired_frequencies);
    result.x_history.push_back(x_center);

    double radius = opts.initial_radius;
    int iteration = 0;
    result.reason = TerminationReason::kBudgetExhausted;

    while (true) {
        result.pg_norm = detail::projected_gradient_norm(
            build.rom, target, x_center, center.pairing.indices, center.res);
        if (result.pg_norm <= opts.pg_tol || center.res.phi == 0.0) {
            result.reason = TerminationReason::kConverged;
            break;
        }
        if (result.rom_builds >= opts.max_rom_builds) {
            result.reason = TerminationReason::kBudgetExhausted;
            result.warnings.push_back("stopped after " +
                                      std::to_string(result.rom_builds) +
                                      " model builds without meeting the "
                                      "gradient tolerance");
            break;
        }

        const Eigen::VectorXd x_cand = solve_subproblem(
            build.rom, target, x_center, radius, center.pairing.indices);

        if ((x_cand - x_center).cwiseAbs().maxCoeff() == 0.0) {
            radius *= opts.shrink;
            if (radius < 1e-12) {
                result.reason = TerminationReason::kStalled;
                result.warnings.push_back(
                    "region radius collapsed before the gradient tolerance "
                    "was met");
                break;
            }
            continue;
        }

        const double phi_rom_center = detail::rom_objective(
            build.rom, target, x_center, center.pairing.indices);
        const double phi_rom_cand = detail::rom_objective(
            build.rom, target, x_cand, center.pairing.indices);
        const double predicted = phi_rom_center - phi_rom_cand;

        if (predicted <= detail::kPredictedGainFloor * center.res.phi) {
            result.reason = TerminationReason::kStalled;
            result.warnings.push_back(
                "the remaining predicted improvement is below the reduced "
                "model's resolution; the fit has reached the measurements' "
                "noise floor");
            break;
        }

        // Mandatory verification solve at the candidate.
        detail::FullEvaluation cand_eval = detail::evaluate_full(
            cs, target, x_cand, q_solve, opts.pairing, opts.lanczos);
        result.full_solves += 1;
        const double actual = center.res.phi - cand_eval.res.phi;
        const double rho = predicted > 0.0 ? actual / predicted : -1.0;

        IterationRecord record;
        record.iteration = ++iteration;
        record.phi = cand_eval.res.phi;
        record.radius = radius;
        record.rho = rho;
        record.accepted = rho >= opts.eta1 && actual > 0.0;
        record.x_scaled = ps.to_unit(x_cand);
        record.x_physical = x_cand;
        record.frequencies_hz = cand_eval.paired_frequencies;
        result.iterations.push_back(record);

        if (record.accepted) {
            if (cand_eval.pairing.swapped &&
                (result.warnings.empty() ||
                 result.warnings.back() != cand_eval.pairing.warning))
                result.warnings.push_back(cand_eval.pairing.warning);
            x_center = x_cand;
            center = std::move(cand_eval);
            build = build_rom_from_solve(cs, x_center, q_solve, opts.m_max,
                                         std::move(center.solve));
            result.rom_builds += 1;
            result.phi_history.push_back(center.res.phi);
            result.frequency_history.push_back(center.paired_frequencies);
            result.x_history.push_back(x_center);
            if (rho >= opts.eta2) radius = std::min(radius * opts.grow, 1.0);
        } else {
            radius *= opts.shrink;
            if (radius < 1e-12) {
                result.reason = TerminationReason::kStalled;
                result.warnings.push_back(
                    "region radius collapsed before the gradient tolerance "
                    "was met");
                break;
            }
        }
    }

    result.x_opt = x_center;
    result.phi = center.res.phi;
    // The center's solve was recycled into the reduced model, which kept the
    // full-order solution intact.
    result.solution = std::move(build.center);
    result.pairing = center.pairing;
    return result;
}

/// General-purpose baseline: projected Levenberg-Marquardt on the full model
/// with central-difference Jacobians. Every objective or derivative sample
/// is a complete eigensolve; the full-solve counter is the point of the
/// exercise.
inline UpdateResult blackbox_baseline(const ConstrainedSystem& cs,
                                      const ModalTarget& target,
                                      const ParamSpace& ps,
                                      const TrustRegionOptions& opts = {}) {
    detail::check_spaces_match(cs, ps);
    validate_target_dofs(target, cs.dofs);
    if (target.q < 1)
        throw ValidationError("update: the target must contain at least one mode");
    const int q_solve = opts.q > 0 ? opts.q : target.q;

    UpdateResult result;
    const Eigen::VectorXd range = ps.upper - ps.lower;
    const int p = ps.dimension();
    const int max_full_solves = 400 * std::max(1, p);

    const auto evaluate = [&](const Eigen::VectorXd& x) {
        result.full_solves += 1;
        return detail::evaluate_full(cs, target, x, q_solve, opts.pairing,
                                     opts.lanczos);
    };

    Eigen::VectorXd c = ps.to_unit(ps.start);
    detail::FullEvaluation current = evaluate(ps.from_unit(c));
    result.phi_history.push_back(current.res.phi);
    result.frequency_history.push_back(current.paired_frequencies);
    result.x_history.push_back(ps.from_unit(c));

    double lm_damping = 1e-3;
    int iteration = 0;
    result.reason = TerminationReason::kBudgetExhausted;

    while (true) {
        // Central-difference Jacobian in scaled coordinates: 2p full solves.
        const double h = 1e-6;
        Eigen::MatrixXd j(2 * target.q, p);
        bool budget_hit = false;
        for (int col = 0; col < p && !budget_hit; ++col) {
            Eigen::VectorXd cp = c, cm = c;
            cp(col) = std::min(cp(col) + h, 1.0);
            cm(col) = std::max(cm(col) - h, 0.0);
            const double width = cp(col) - cm(col);
            const auto plus = evaluate(ps.from_unit(cp));
            const auto minus = evaluate(ps.from_unit(cm));
            j.col(col) = (plus.res.r - minus.res.r) / width;
            budget_hit = result.full_solves + 2 > max_full_solves;
        }
        if (budget_hit) {
            // The Jacobian may be partial; do not draw conclusions from it.
            result.warnings.push_back("baseline stopped on its solve budget");
            break;
        }

        const Eigen::VectorXd g = 2.0 * j.transpose() * current.res.r;
        result.pg_norm = (c - (c - g).cwiseMax(0.0).cwiseMin(1.0)).norm();
        if (result.pg_norm <= opts.pg_tol || current.res.phi == 0.0) {
            result.reason = TerminationReason::kConverged;
            break;
        }
        if (result.full_solves >= max_full_solves) {
            result.warnings.push_back("baseline stopped on its solve budget");
            break;
        }

        const Eigen::MatrixXd jtj = j.transpose() * j;
        bool moved = false;
        for (int attempt = 0; attempt < 25; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            damped.diagonal() +=
                lm_damping * jtj.diagonal().cwiseMax(1e-12);
            const Eigen::VectorXd d =
                damped.ldlt().solve(-j.transpose() * current.res.r);
            const Eigen::VectorXd c_try = (c + d).cwiseMax(0.0).cwiseMin(1.0);
            if ((c_try - c).norm() <= 1e-15) {
                lm_damping *= 4.0;
                continue;
            }
            detail::FullEvaluation trial = evaluate(ps.from_unit(c_try));

            IterationRecord record;
            record.iteration = ++iteration;
            record.phi = trial.res.phi;
            record.radius = 0.0;
            record.rho = lm_damping;
            record.accepted = trial.res.phi < current.res.phi;
            record.x_scaled = c_try;
            record.x_physical = ps.from_unit(c_try);
            record.frequencies_hz = trial.paired_frequencies;
            result.iterations.push_back(record);

            if (record.accepted) {
                c = c_try;
                current = std::move(trial);
                result.phi_history.push_back(current.res.phi);
                result.frequency_history.push_back(current.paired_frequencies);
                result.x_history.push_back(ps.from_unit(c));
                lm_damping = std::max(lm_damping / 3.0, 1e-12);
                moved = true;
                break;
            }
            lm_damping *= 4.0;
            if (result.full_solves >= max_full_solves) break;
        }
        if (!moved) {
            if (result.full_solves >= max_full_solves) {
                result.warnings.push_back("baseline stopped on its solve budget");
            } else {
                result.reason = TerminationReason::kStalled;
                result.warnings.push_back(
                    "baseline could not find a descent step");
            }
            break;
        }
    }

    result.x_opt = ps.from_unit(c);
    result.phi = current.res.phi;
    result.solution = std::move(current.solve.solution);
    result.pairing = current.pairing;
    return result;
}

} // namespace modaltune
