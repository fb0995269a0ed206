#pragma once

// Shared helpers for the test suite: scratch directories, tiny fixture
// models, and independent numerical oracles. The oracles deliberately use
// different formulations and algorithms than the library (higher-order
// quadrature, Lame constants, LU-based null spaces, dense eigensolvers) so
// agreement is meaningful.

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <modaltune/assembly.hpp>
#include <modaltune/eigensolver.hpp>
#include <modaltune/mesh.hpp>
#include <modaltune/objective.hpp>

namespace testutil {

/// RAII scratch directory under the system temp path.
class ScratchDir {
  public:
    ScratchDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "modaltune-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr)
            throw std::runtime_error("failed to create scratch directory");
        path_ = tmpl;
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// One CCW unit-square element with a generic material; base for the
/// validation tests, which mutate it into invalid variants.
inline modaltune::Model unit_square_model() {
    modaltune::Model model;
    model.mesh.nodes = {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}};
    model.mesh.elements = {{{0, 1, 2, 3}, 1}};
    model.regions = {{1, 1.0e9, 0.2, 1000.0}};
    return model;
}

/// Structured nx-by-ny quad grid over [0,lx]x[0,ly], single region 1.
/// Node (i,j) has index j*(nx+1)+i; callers add constraints themselves.
inline modaltune::Model grid_model(int nx, int ny, double lx, double ly,
                                   modaltune::MaterialRegion material = {1, 1.0e9, 0.2,
                                                                         1000.0}) {
    modaltune::Model model;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            model.mesh.nodes.emplace_back(lx * i / nx, ly * j / ny);
    auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            model.mesh.elements.push_back(
                {{id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)}, 1});
    model.regions = {material};
    return model;
}

/// Random convex CCW quadrilateral: a jittered unit square, re-drawn until
/// all corner cross products stay safely positive.
inline std::array<Eigen::Vector2d, 4> random_convex_quad(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> jitter(-0.25, 0.25);
    const std::array<Eigen::Vector2d, 4> base = {Eigen::Vector2d{0.0, 0.0},
                                                 Eigen::Vector2d{1.0, 0.0},
                                                 Eigen::Vector2d{1.0, 1.0},
                                                 Eigen::Vector2d{0.0, 1.0}};
    while (true) {
        std::array<Eigen::Vector2d, 4> quad;
        for (int i = 0; i < 4; ++i)
            quad[i] = base[i] + Eigen::Vector2d(jitter(rng), jitter(rng));
        bool convex = true;
        for (int i = 0; i < 4 && convex; ++i) {
            const Eigen::Vector2d u = quad[(i + 1) % 4] - quad[i];
            const Eigen::Vector2d v = quad[(i + 3) % 4] - quad[i];
            convex = (u.x() * v.y() - u.y() * v.x()) > 0.05;
        }
        if (convex) return quad;
    }
}

/// Independent element oracle: 4x4 Gauss quadrature, Lame-constant
/// elasticity, scalar accumulation (no matrix products). Exact for affine
/// element geometry, where it must agree with the production 2x2 rule.
inline std::pair<Eigen::Matrix<double, 8, 8>, Eigen::Matrix<double, 8, 8>>
element_oracle_gauss4(const std::array<Eigen::Vector2d, 4>& corners, double young,
                      double poisson, double density, double thickness) {
    const double pts[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                           0.8611363115940526};
    const double wts[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                           0.3478548451374538};
    const double lame_l =
        young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    const double lame_m = young / (2.0 * (1.0 + poisson));
    const double d00 = lame_l + 2.0 * lame_m;

    auto shape = [](int node, double xi, double eta) {
        switch (node) {
            case 0: return 0.25 * (1.0 - xi) * (1.0 - eta);
            case 1: return 0.25 * (1.0 + xi) * (1.0 - eta);
            case 2: return 0.25 * (1.0 + xi) * (1.0 + eta);
            default: return 0.25 * (1.0 - xi) * (1.0 + eta);
        }
    };
    auto dshape_dxi = [](int node, double eta) {
        switch (node) {
            case 0: return -0.25 * (1.0 - eta);
            case 1: return 0.25 * (1.0 - eta);
            case 2: return 0.25 * (1.0 + eta);
            default: return -0.25 * (1.0 + eta);
        }
    };
    auto dshape_deta = [](int node, double xi) {
        switch (node) {
            case 0: return -0.25 * (1.0 - xi);
            case 1: return -0.25 * (1.0 + xi);
            case 2: return 0.25 * (1.0 + xi);
            default: return 0.25 * (1.0 - xi);
        }
    };

    Eigen::Matrix<double, 8, 8> k = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 8> m = Eigen::Matrix<double, 8, 8>::Zero();
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double xi = pts[a];
            const double eta = pts[b];
            double j00 = 0, j01 = 0, j10 = 0, j11 = 0;
            for (int i = 0; i < 4; ++i) {
                j00 += dshape_dxi(i, eta) * corners[i].x();
                j01 += dshape_dxi(i, eta) * corners[i].y();
                j10 += dshape_deta(i, xi) * corners[i].x();
                j11 += dshape_deta(i, xi) * corners[i].y();
            }
            const double det = j00 * j11 - j01 * j10;
            if (det <= 0.0) throw std::runtime_error("oracle: degenerate element");
            double dx[4], dy[4], nn[4];
            for (int i = 0; i < 4; ++i) {
                dx[i] = (j11 * dshape_dxi(i, eta) - j01 * dshape_deta(i, xi)) / det;
                dy[i] = (-j10 * dshape_dxi(i, eta) + j00 * dshape_deta(i, xi)) / det;
                nn[i] = shape(i, xi, eta);
            }
            const double w = wts[a] * wts[b] * thickness * det;
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) {
                    // (u_i, u_j), (u_i, v_j), (v_i, u_j), (v_i, v_j) couplings
                    k(2 * i, 2 * j) += w * (d00 * dx[i] * dx[j] + lame_m * dy[i] * dy[j]);
                    k(2 * i, 2 * j + 1) += w * (lame_l * dx[i] * dy[j] + lame_m * dy[i] * dx[j]);
                    k(2 * i + 1, 2 * j) += w * (lame_l * dy[i] * dx[j] + lame_m * dx[i] * dy[j]);
                    k(2 * i + 1, 2 * j + 1) += w * (d00 * dy[i] * dy[j] + lame_m * dx[i] * dx[j]);
                    const double mass = w * density * nn[i] * nn[j];
                    m(2 * i, 2 * j) += mass;
                    m(2 * i + 1, 2 * j + 1) += mass;
                }
            }
        }
    }
    return {k, m};
}

/// Dense one-shot assembly at the model's material table (no parametric
/// decomposition, no sparsity bookkeeping).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> direct_assembly(const modaltune::Model& model) {
    const int n = 2 * model.mesh.node_count();
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    std::map<int, modaltune::MaterialRegion> regions;
    for (const auto& r : model.regions) regions[r.id] = r;
    for (const modaltune::Element& e : model.mesh.elements) {
        const auto& mat = regions.at(e.region);
        const std::array<Eigen::Vector2d, 4> corners = {
            model.mesh.nodes[e.conn[0]], model.mesh.nodes[e.conn[1]],
            model.mesh.nodes[e.conn[2]], model.mesh.nodes[e.conn[3]]};
        const auto em = modaltune::element_matrices(corners, mat.young_modulus,
                                                    mat.poisson_ratio, mat.mass_density,
                                                    model.mesh.thickness);
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const int gr = modaltune::dof_index(e.conn[r / 2], r % 2);
                const int gc = modaltune::dof_index(e.conn[c / 2], c % 2);
                k(gr, gc) += em.stiffness(r, c);
                m(gr, gc) += em.mass(r, c);
            }
        }
    }
    return {k, m};
}

/// Random well-formed model: jittered grid, vertical material stripes,
/// clamped bottom edge, occasionally a master-slave tie across the top.
/// Regenerates until validation passes (jitter can fold a cell).
inline modaltune::Model random_mesh_model(std::mt19937_64& rng) {
    while (true) {
        std::uniform_int_distribution<int> dim(2, 7);
        std::uniform_real_distribution<double> extent(0.5, 2.5);
        const int nx = dim(rng);
        const int ny = dim(rng);
        const double lx = extent(rng);
        const double ly = extent(rng);

        modaltune::Model model = grid_model(nx, ny, lx, ly);
        std::uniform_real_distribution<double> jitter(-0.2, 0.2);
        for (int j = 1; j < ny; ++j) {
            for (int i = 1; i < nx; ++i) {
                auto& node = model.mesh.nodes[j * (nx + 1) + i];
                node.x() += jitter(rng) * lx / nx;
                node.y() += jitter(rng) * ly / ny;
            }
        }

        std::uniform_int_distribution<int> stripe_count(1, 3);
        const int stripes = stripe_count(rng);
        std::uniform_real_distribution<double> young(1.0e9, 1.0e10);
        std::uniform_real_distribution<double> poisson(0.0, 0.45);
        std::uniform_real_distribution<double> density(1000.0, 3000.0);
        model.regions.clear();
        for (int s = 0; s < stripes; ++s)
            model.regions.push_back({s + 1, young(rng), poisson(rng), density(rng)});
        for (auto& e : model.mesh.elements) {
            const int column = e.conn[0] % (nx + 1);
            e.region = 1 + (column * stripes) / nx;
            if (e.region > stripes) e.region = stripes;
        }

        for (int i = 0; i <= nx; ++i) {
            model.constraints.fixed.push_back({i, 0});
            model.constraints.fixed.push_back({i, 1});
        }
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5) {
            const int top_left = ny * (nx + 1);
            const int top_right = ny * (nx + 1) + nx;
            std::uniform_real_distribution<double> ratio(0.5, 1.5);
            model.constraints.master_slave.push_back({top_left, 0, top_right, 0, ratio(rng)});
        }

        try {
            modaltune::validate_model(model);
            return model;
        } catch (const modaltune::ValidationError&) {
            continue; // jitter folded an element; draw again
        }
    }
}

/// Straightforward 3-parameter space over the arch fixture regions:
/// (E of region 2, E of region 3, rho of region 2).
inline modaltune::ParamSpace arch_param_space() {
    modaltune::ParamSpace ps;
    ps.bindings = {{2, modaltune::MaterialProperty::kYoungModulus},
                   {3, modaltune::MaterialProperty::kYoungModulus},
                   {2, modaltune::MaterialProperty::kMassDensity}};
    ps.lower = Eigen::Vector3d(1.0e9, 1.0e9, 500.0);
    ps.upper = Eigen::Vector3d(10.0e9, 10.0e9, 3000.0);
    ps.start = ps.midpoint();
    return ps;
}

/// Assembles and constrains a model with no free parameters.
inline modaltune::ConstrainedSystem reduce_model(const modaltune::Model& model) {
    return modaltune::apply_constraints(modaltune::assemble_parametric(model, {}),
                                        model.constraints);
}

/// The parameter box the arch round-trip calibration runs in:
/// E2, E3 in [1, 9] GPa and rho2 in [1000, 3000] kg/m^3, started at the
/// midpoints. The true values (5.0 GPa, 4.8 GPa, 2200) sit inside it.
inline modaltune::ParamSpace roundtrip_param_space() {
    modaltune::ParamSpace ps;
    ps.bindings = {{2, modaltune::MaterialProperty::kYoungModulus},
                   {3, modaltune::MaterialProperty::kYoungModulus},
                   {2, modaltune::MaterialProperty::kMassDensity}};
    ps.lower = Eigen::Vector3d(1.0e9, 1.0e9, 1000.0);
    ps.upper = Eigen::Vector3d(9.0e9, 9.0e9, 3000.0);
    ps.start = ps.midpoint();
    return ps;
}

inline Eigen::Vector3d roundtrip_truth() {
    return Eigen::Vector3d(5.0e9, 4.8e9, 2200.0);
}

/// Sensor dofs of the arch observation layout: both components at each of
/// the five landmark nodes.
inline std::vector<int> arch_sensor_dofs(const modaltune::Mesh& mesh) {
    std::vector<int> dofs;
    for (const int node : modaltune::arch_sensor_nodes(mesh)) {
        dofs.push_back(modaltune::dof_index(node, 0));
        dofs.push_back(modaltune::dof_index(node, 1));
    }
    return dofs;
}

/// Synthesizes a modal target by solving the model at `truth` and observing
/// it at the arch sensors — the self-consistent round-trip fixture.
inline modaltune::ModalTarget synthetic_target(const modaltune::ConstrainedSystem& cs,
                                               const std::vector<int>& sensor_dofs,
                                               const Eigen::VectorXd& truth, int q = 5,
                                               const modaltune::WeightSpec& spec = {}) {
    const auto sol = modaltune::solve_smallest(cs, truth, q);
    Eigen::MatrixXd shapes(sensor_dofs.size(), q);
    for (int i = 0; i < q; ++i)
        shapes.col(i) = modaltune::project_mode(sol.modes.col(i), sensor_dofs);
    return modaltune::build_target(sol.frequencies_hz, shapes, sensor_dofs, spec);
}

/// Eigenvalue count of the pencil (K, M) below t, via the inertia of K - tM
/// (independent of any generalized eigensolver). Also cross-checks the
/// determinant sign from an LU factorization, which must equal (-1)^count.
inline int count_eigenvalues_below(const Eigen::MatrixXd& k, const Eigen::MatrixXd& m,
                                   double t) {
    const Eigen::MatrixXd shifted = k - t * m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shifted, Eigen::EigenvaluesOnly);
    const int count = static_cast<int>((es.eigenvalues().array() < 0.0).count());
    const double det = Eigen::PartialPivLU<Eigen::MatrixXd>(shifted).determinant();
    const bool parity_even = (count % 2) == 0;
    if ((det > 0.0) != parity_even)
        throw std::runtime_error("inertia oracle: determinant sign disagrees with count");
    return count;
}

/// Dense constraint matrix C with one row per fixed dof and one row
/// (v_slave - ratio * v_master) per master-slave relation.
inline Eigen::MatrixXd constraint_matrix(int n, const modaltune::ConstraintSet& cs) {
    const int rows = static_cast<int>(cs.fixed.size() + cs.master_slave.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(rows, n);
    int r = 0;
    for (const auto& f : cs.fixed) c(r++, modaltune::dof_index(f.node, f.dir)) = 1.0;
    for (const auto& ms : cs.master_slave) {
        c(r, modaltune::dof_index(ms.slave_node, ms.slave_dir)) = 1.0;
        c(r, modaltune::dof_index(ms.master_node, ms.master_dir)) = -ms.ratio;
        ++r;
    }
    return c;
}

/// Constrained spectrum via an LU-based null space of C (independent of the
/// library's selection/substitution basis) and a dense generalized solver.
inline Eigen::VectorXd constrained_spectrum_oracle(const Eigen::MatrixXd& k,
                                                   const Eigen::MatrixXd& m,
                                                   const modaltune::ConstraintSet& cs) {
    const Eigen::MatrixXd c = constraint_matrix(static_cast<int>(k.rows()), cs);
    Eigen::MatrixXd basis;
    if (c.rows() == 0) {
        basis = Eigen::MatrixXd::Identity(k.rows(), k.cols());
    } else {
        basis = Eigen::FullPivLU<Eigen::MatrixXd>(c).kernel();
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
        basis.transpose() * k * basis, basis.transpose() * m * basis);
    if (es.info() != Eigen::Success) throw std::runtime_error("oracle eigensolver failed");
    return es.eigenvalues();
}

} // namespace testutil
