// Tests for the local reduced-order models.
//
// The contract under test: exactness at the expansion point, affine
// re-assembly of the projected pencil, graceful accuracy loss away from the
// center, and invariance properties the full model is known to satisfy.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include <modaltune/assembly.hpp>
#include <modaltune/eigensolver.hpp>
#include <modaltune/errors.hpp>
#include <modaltune/mesh.hpp>
#include <modaltune/rom.hpp>

#include "test_support.hpp"

namespace {

using Catch::Approx;
using namespace modaltune;

/// The canonical arch with its 3-parameter space, constrained and ready.
ConstrainedSystem arch_system(int refinement = kArchCanonicalRefinement) {
    const Model model = build_arch_on_piers(4.0, 4.0, refinement);
    return apply_constraints(assemble_parametric(model, testutil::arch_param_space()),
                             model.constraints);
}

double max_rel_freq_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
    double worst = 0.0;
    for (int i = 0; i < want.size(); ++i)
        worst = std::max(worst, std::abs(got(i) - want(i)) / want(i));
    return worst;
}

} // namespace

TEST_CASE("reduced model is exact at its expansion point", "[rom]") {
    const ConstrainedSystem cs = arch_system();
    const Eigen::VectorXd x0 = cs.system.params.midpoint();

    const RomBuild build = build_rom(cs, x0, 5);
    const LocalROM& rom = build.rom;

    CHECK(rom.m <= 40);
    CHECK(rom.m >= 5);
    CHECK(rom.q == 5);

    // Orthonormal basis columns.
    const Eigen::MatrixXd gram = rom.basis.transpose() * rom.basis;
    CHECK((gram - Eigen::MatrixXd::Identity(rom.m, rom.m)).cwiseAbs().maxCoeff()
          <= 1e-12);

    // Center evaluation reproduces the full-order solution.
    const RomEval at_center = rom_eval(rom, x0);
    for (int i = 0; i < 5; ++i) {
        CAPTURE(i);
        CHECK(at_center.eigenvalues(i) ==
              Approx(build.center.eigenvalues(i)).epsilon(1e-10));
        CHECK(at_center.frequencies_hz(i) ==
              Approx(build.center.frequencies_hz(i)).epsilon(1e-10));
    }

    // Center modes span the same directions as the full-order modes.
    for (int i = 0; i < 5; ++i) {
        const double num = std::abs(at_center.modes.col(i).dot(build.center.modes.col(i)));
        const double den = at_center.modes.col(i).norm() * build.center.modes.col(i).norm();
        CAPTURE(i);
        CHECK(num / den == Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("exactness holds at random expansion points", "[rom]") {
    const ConstrainedSystem cs = arch_system(0); // coarse: keeps the full solves cheap
    const ParamSpace& ps = cs.system.params;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.05, 0.95);

    for (int trial = 0; trial < 3; ++trial) {
        Eigen::VectorXd c(ps.dimension());
        for (int i = 0; i < c.size(); ++i) c(i) = unit(rng);
        const Eigen::VectorXd x0 = ps.from_unit(c);
        CAPTURE(trial, x0.transpose());

        const RomBuild build = build_rom(cs, x0, 5);
        CHECK(build.rom.m <= 40);
        const RomEval at_center = rom_eval(build.rom, x0);
        for (int i = 0; i < 5; ++i)
            CHECK(at_center.eigenvalues(i) ==
                  Approx(build.center.eigenvalues(i)).epsilon(1e-10));
    }
}

TEST_CASE("projected pencil re-assembles affinely", "[rom]") {
    const ConstrainedSystem cs = arch_system(0);
    const Eigen::VectorXd x0 = cs.system.params.midpoint();
    const RomBuild build = build_rom(cs, x0, 5);
    const LocalROM& rom = build.rom;

    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        Eigen::VectorXd x(3);
        for (int i = 0; i < 3; ++i) {
            std::uniform_real_distribution<double> u(cs.system.params.lower(i),
                                                     cs.system.params.upper(i));
            x(i) = u(rng);
        }
        CAPTURE(trial, x.transpose());

        const auto [k_affine, m_affine] = modaltune::detail::reduced_pencil(rom, x);
        const auto [k_full, m_full] = instantiate(cs.system, x);
        const Eigen::MatrixXd k_direct =
            rom.basis.transpose() * (k_full * rom.basis);
        const Eigen::MatrixXd m_direct = rom.basis.transpose() * (m_full * rom.basis);

        CHECK((k_affine - k_direct).cwiseAbs().maxCoeff() <=
              1e-13 * k_direct.cwiseAbs().maxCoeff());
        CHECK((m_affine - m_direct).cwiseAbs().maxCoeff() <=
              1e-13 * m_direct.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("scaling stiffness and density together leaves frequencies fixed", "[rom]") {
    // K and M scale by the same factor, so every eigenvalue is unchanged;
    // the reduced model inherits that identity through its affine blocks.
    Model model = testutil::grid_model(3, 3, 1.5, 1.0);
    for (int i = 0; i <= 3; ++i) {
        model.constraints.fixed.push_back({i, 0});
        model.constraints.fixed.push_back({i, 1});
    }
    validate_model(model);

    ParamSpace ps;
    ps.bindings = {{1, MaterialProperty::kYoungModulus},
                   {1, MaterialProperty::kMassDensity}};
    ps.lower = Eigen::Vector2d(0.5e9, 500.0);
    ps.upper = Eigen::Vector2d(8.0e9, 4000.0);
    ps.start = Eigen::Vector2d(1.5e9, 1200.0);

    const ConstrainedSystem cs = apply_constraints(assemble_parametric(model, ps),
                                                   model.constraints);
    const RomBuild build = build_rom(cs, ps.start, 4);

    const RomEval base = rom_eval(build.rom, ps.start);
    const RomEval doubled = rom_eval(build.rom, 2.0 * ps.start);
    for (int i = 0; i < 4; ++i) {
        CAPTURE(i);
        CHECK(doubled.frequencies_hz(i) ==
              Approx(base.frequencies_hz(i)).epsilon(1e-12));
    }
}

TEST_CASE("accuracy within a five percent step and monotone degradation", "[rom]") {
    const ConstrainedSystem cs = arch_system();
    const ParamSpace& ps = cs.system.params;
    const Eigen::VectorXd x0 = ps.midpoint();
    const RomBuild build = build_rom(cs, x0, 5);

    const auto step = [&](double frac) {
        // Mixed-sign step so no single parameter direction dominates.
        Eigen::VectorXd x = x0;
        x(0) *= 1.0 + frac;
        x(1) *= 1.0 - frac;
        x(2) *= 1.0 + frac;
        return x;
    };
    const auto rom_error_at = [&](const Eigen::VectorXd& x) {
        const RomEval approx = rom_eval(build.rom, x);
        const EigenSolution fresh = solve_smallest(cs, x, 5);
        return max_rel_freq_error(approx.frequencies_hz, fresh.frequencies_hz);
    };

    const double err5 = rom_error_at(step(0.05));
    const double err10 = rom_error_at(step(0.10));
    const double err20 = rom_error_at(step(0.20));
    CAPTURE(err5, err10, err20);

    CHECK(err5 <= 1e-3);
    CHECK(err10 <= err20);
}

TEST_CASE("reduced-model requests are validated", "[rom]") {
    const ConstrainedSystem cs = arch_system(0);
    const Eigen::VectorXd x0 = cs.system.params.midpoint();

    CHECK_THROWS_AS(build_rom(cs, x0, 0), ValidationError);
    CHECK_THROWS_AS(build_rom(cs, x0, 5, 3), ValidationError);   // cap below q
    CHECK_THROWS_AS(build_rom(cs, x0, 5, 100), ValidationError); // cap above hard limit

    const RomBuild build = build_rom(cs, x0, 5);
    CHECK_THROWS_AS(rom_eval(build.rom, Eigen::Vector2d(1.0, 2.0)), ValidationError);
}

TEST_CASE("reduced modes satisfy constraints and mass-orthonormality", "[rom]") {
    const Model model = build_arch_on_piers(4.0, 4.0, 0);
    const ParamSpace ps = testutil::arch_param_space();
    const ConstrainedSystem cs = apply_constraints(assemble_parametric(model, ps),
                                                   model.constraints);
    const Eigen::VectorXd x0 = ps.midpoint();
    const RomBuild build = build_rom(cs, x0, 5);

    Eigen::VectorXd x = x0;
    x(0) *= 1.07;
    const RomEval eval = rom_eval(build.rom, x);

    // Full-coordinate modes: fixed dofs are structurally zero.
    const Eigen::MatrixXd c = testutil::constraint_matrix(cs.dofs.n, model.constraints);
    const double violation = (c * eval.modes).cwiseAbs().maxCoeff();
    CHECK(violation <= 1e-13 * eval.modes.cwiseAbs().maxCoeff());

    // Mass-orthonormal in the full mass matrix at the evaluation point.
    const auto [k_full, m_full] = instantiate(assemble_parametric(model, ps), x);
    const Eigen::MatrixXd gram = eval.modes.transpose() * m_full * eval.modes;
    CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-8);
}
