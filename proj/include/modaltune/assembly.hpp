#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "modaltune/errors.hpp"
#include "modaltune/mesh.hpp"

namespace modaltune {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Matrix8d = Eigen::Matrix<double, 8, 8>;

struct ElementMatrices {
    Matrix8d stiffness;
    Matrix8d mass;
};

/// Plane-strain constitutive matrix for an isotropic material.
inline Eigen::Matrix3d plane_strain_elasticity(double young, double poisson) {
    if (poisson < 0.0 || poisson >= 0.5)
        throw ValidationError("plane strain requires 0 <= nu < 0.5");
    const double c = young / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    Eigen::Matrix3d d;
    d << c * (1.0 - poisson), c * poisson, 0.0,
         c * poisson, c * (1.0 - poisson), 0.0,
         0.0, 0.0, 0.5 * c * (1.0 - 2.0 * poisson);
    return d;
}

/// Stiffness and consistent mass of one bilinear quad, integrated with the
/// 2x2 Gauss rule. Element dofs are interleaved (u1, v1, ..., u4, v4) to
/// match dof_index. Throws GeometryError when the bilinear map folds.
inline ElementMatrices element_matrices(const std::array<Eigen::Vector2d, 4>& corners,
                                        double young, double poisson, double density,
                                        double thickness) {
    static constexpr double kXi[4] = {-1.0, 1.0, 1.0, -1.0};
    static constexpr double kEta[4] = {-1.0, -1.0, 1.0, 1.0};
    const double g = 1.0 / std::sqrt(3.0);
    const Eigen::Matrix3d elasticity = plane_strain_elasticity(young, poisson);

    Matrix8d k = Matrix8d::Zero();
    Matrix8d m = Matrix8d::Zero();
    for (int gp = 0; gp < 4; ++gp) {
        const double xi = kXi[gp] * g;
        const double eta = kEta[gp] * g;

        Eigen::Matrix<double, 1, 4> shape;
        Eigen::Matrix<double, 2, 4> dn; // gradients in reference coordinates
        for (int i = 0; i < 4; ++i) {
            shape(i) = 0.25 * (1.0 + xi * kXi[i]) * (1.0 + eta * kEta[i]);
            dn(0, i) = 0.25 * kXi[i] * (1.0 + eta * kEta[i]);
            dn(1, i) = 0.25 * kEta[i] * (1.0 + xi * kXi[i]);
        }

        Eigen::Matrix2d jac = Eigen::Matrix2d::Zero();
        for (int i = 0; i < 4; ++i) jac += dn.col(i) * corners[i].transpose();
        const double det = jac.determinant();
        if (det <= 0.0)
            throw GeometryError(
                "element is distorted: non-positive Jacobian at a quadrature point");
        const Eigen::Matrix<double, 2, 4> grad = jac.inverse() * dn;

        Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
        Eigen::Matrix<double, 2, 8> nmat = Eigen::Matrix<double, 2, 8>::Zero();
        for (int i = 0; i < 4; ++i) {
            b(0, 2 * i) = grad(0, i);
            b(1, 2 * i + 1) = grad(1, i);
            b(2, 2 * i) = grad(1, i);
            b(2, 2 * i + 1) = grad(0, i);
            nmat(0, 2 * i) = shape(i);
            nmat(1, 2 * i + 1) = shape(i);
        }

        const double dv = thickness * det; // both Gauss weights are 1
        k += dv * b.transpose() * elasticity * b;
        m += (density * dv) * nmat.transpose() * nmat;
    }
    // The matrix products round asymmetrically in the last ulp; restore
    // exact symmetry so downstream equality checks hold bitwise.
    ElementMatrices out;
    out.stiffness = 0.5 * (k + k.transpose());
    out.mass = 0.5 * (m + m.transpose());
    return out;
}

enum class MaterialProperty { kYoungModulus, kMassDensity };

/// One free parameter: a (region, property) slot of the material table.
/// Poisson's ratio is structurally excluded from calibration.
struct ParamBinding {
    int region = 0;
    MaterialProperty property = MaterialProperty::kYoungModulus;

    bool operator==(const ParamBinding&) const = default;
};

/// The admissible box for the free parameters plus the starting point.
/// All values are physical (Pa or kg/m^3); optimizers rescale internally.
struct ParamSpace {
    std::vector<ParamBinding> bindings;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    Eigen::VectorXd start;

    int dimension() const { return static_cast<int>(bindings.size()); }

    bool contains(const Eigen::VectorXd& x) const {
        if (x.size() != lower.size()) return false;
        return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
    }

    Eigen::VectorXd midpoint() const { return 0.5 * (lower + upper); }

    /// Affine maps between physical coordinates and the unit cube [0,1]^p.
    Eigen::VectorXd to_unit(const Eigen::VectorXd& x) const {
        return ((x - lower).array() / (upper - lower).array()).matrix();
    }
    Eigen::VectorXd from_unit(const Eigen::VectorXd& c) const {
        return (lower.array() + c.array() * (upper - lower).array()).matrix();
    }
};

inline void validate_param_space(const ParamSpace& params,
                                 const std::vector<MaterialRegion>& regions) {
    const int p = params.dimension();
    if (params.lower.size() != p || params.upper.size() != p || params.start.size() != p)
        throw ValidationError("parameter space: bounds and start must match the binding count");
    std::map<std::pair<int, int>, int> seen;
    for (int i = 0; i < p; ++i) {
        const ParamBinding& b = params.bindings[i];
        if (!(params.lower[i] > 0.0))
            throw ValidationError("parameter " + std::to_string(i) +
                                  ": lower bound must be positive");
        if (!(params.lower[i] < params.upper[i]))
            throw ValidationError("parameter " + std::to_string(i) +
                                  ": bounds must satisfy lower < upper");
        if (!seen.emplace(std::make_pair(b.region, static_cast<int>(b.property)), i).second)
            throw ValidationError("parameter " + std::to_string(i) +
                                  " duplicates an earlier binding for region " +
                                  std::to_string(b.region));
        const bool known = std::any_of(regions.begin(), regions.end(),
                                       [&](const MaterialRegion& r) { return r.id == b.region; });
        if (!known)
            throw ValidationError("parameter " + std::to_string(i) + " binds unknown region " +
                                  std::to_string(b.region));
    }
    if (!params.contains(params.start))
        throw ValidationError("parameter space: starting point lies outside the box");
}

/// K(x) and M(x) as affine combinations of fixed parts and per-parameter
/// unit blocks sharing one sparsity pattern, so instantiation is a plain
/// scaled sum over value arrays.
struct ParametricSystem {
    int n = 0; // dof count of this representation (full or reduced)
    ParamSpace params;
    SparseMatrix stiffness_const; // contributions of regions with fixed E
    SparseMatrix mass_const;      // contributions of regions with fixed rho
    std::vector<SparseMatrix> param_blocks; // aligned with params.bindings

    bool scales_stiffness(int i) const {
        return params.bindings[i].property == MaterialProperty::kYoungModulus;
    }
};

namespace detail {

/// Rebuilds every matrix on the union sparsity pattern (inserting explicit
/// zeros) so that their value arrays align entry for entry.
inline void unify_sparsity(const std::vector<SparseMatrix*>& mats) {
    if (mats.empty()) return;
    std::vector<Eigen::Triplet<double>> zeros;
    for (const SparseMatrix* m : mats)
        for (int col = 0; col < m->outerSize(); ++col)
            for (SparseMatrix::InnerIterator it(*m, col); it; ++it)
                zeros.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), 0.0);
    SparseMatrix pattern(mats.front()->rows(), mats.front()->cols());
    pattern.setFromTriplets(zeros.begin(), zeros.end());
    for (SparseMatrix* m : mats) {
        SparseMatrix unified = pattern + *m;
        unified.makeCompressed();
        *m = std::move(unified);
    }
}

inline std::vector<SparseMatrix*> all_blocks(ParametricSystem& sys) {
    std::vector<SparseMatrix*> mats{&sys.stiffness_const, &sys.mass_const};
    for (SparseMatrix& b : sys.param_blocks) mats.push_back(&b);
    return mats;
}

} // namespace detail

/// Assembles the parametric system: regions bound to a free parameter get a
/// unit block (E = 1 or rho = 1), fixed properties fold into the constant
/// parts with their table values. Poisson's ratio always stays at the table
/// value.
inline ParametricSystem assemble_parametric(const Model& model, const ParamSpace& params) {
    validate_param_space(params, model.regions);

    ParametricSystem sys;
    sys.n = 2 * model.mesh.node_count();
    sys.params = params;

    std::map<int, const MaterialRegion*> region_by_id;
    for (const MaterialRegion& r : model.regions) region_by_id[r.id] = &r;
    std::map<std::pair<int, int>, int> owner; // (region, property) -> parameter
    for (int i = 0; i < params.dimension(); ++i)
        owner[{params.bindings[i].region, static_cast<int>(params.bindings[i].property)}] = i;

    // Triplet buckets: 0 = constant K, 1 = constant M, 2 + i = parameter i.
    std::vector<std::vector<Eigen::Triplet<double>>> buckets(2 + params.dimension());
    auto bucket_for = [&](int region, MaterialProperty prop, double table_value,
                          int const_bucket) {
        auto it = owner.find({region, static_cast<int>(prop)});
        if (it != owner.end()) return std::make_pair(2 + it->second, 1.0);
        return std::make_pair(const_bucket, table_value);
    };

    for (const Element& e : model.mesh.elements) {
        const MaterialRegion& region = *region_by_id.at(e.region);
        const std::array<Eigen::Vector2d, 4> corners = {
            model.mesh.nodes[e.conn[0]], model.mesh.nodes[e.conn[1]],
            model.mesh.nodes[e.conn[2]], model.mesh.nodes[e.conn[3]]};
        const ElementMatrices em = element_matrices(corners, 1.0, region.poisson_ratio, 1.0,
                                                    model.mesh.thickness);

        const auto [k_bucket, k_scale] =
            bucket_for(e.region, MaterialProperty::kYoungModulus, region.young_modulus, 0);
        const auto [m_bucket, m_scale] =
            bucket_for(e.region, MaterialProperty::kMassDensity, region.mass_density, 1);

        std::array<int, 8> dofs;
        for (int a = 0; a < 4; ++a) {
            dofs[2 * a] = dof_index(e.conn[a], 0);
            dofs[2 * a + 1] = dof_index(e.conn[a], 1);
        }
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                buckets[k_bucket].emplace_back(dofs[r], dofs[c], k_scale * em.stiffness(r, c));
                buckets[m_bucket].emplace_back(dofs[r], dofs[c], m_scale * em.mass(r, c));
            }
        }
    }

    auto build = [&](const std::vector<Eigen::Triplet<double>>& trips) {
        SparseMatrix m(sys.n, sys.n);
        m.setFromTriplets(trips.begin(), trips.end());
        return m;
    };
    sys.stiffness_const = build(buckets[0]);
    sys.mass_const = build(buckets[1]);
    for (int i = 0; i < params.dimension(); ++i)
        sys.param_blocks.push_back(build(buckets[2 + i]));

    detail::unify_sparsity(detail::all_blocks(sys));
    return sys;
}

/// Evaluates (K(x), M(x)). Throws DomainError when x leaves the box.
inline std::pair<SparseMatrix, SparseMatrix> instantiate(const ParametricSystem& sys,
                                                         const Eigen::VectorXd& x) {
    if (x.size() != sys.params.dimension())
        throw ValidationError("instantiate: expected " + std::to_string(sys.params.dimension()) +
                              " parameters, got " + std::to_string(x.size()));
    if (!sys.params.contains(x))
        throw DomainError("instantiate: parameter vector lies outside the admissible box");

    std::pair<SparseMatrix, SparseMatrix> out{sys.stiffness_const, sys.mass_const};
    for (int i = 0; i < sys.params.dimension(); ++i) {
        SparseMatrix& dst = sys.scales_stiffness(i) ? out.first : out.second;
        const SparseMatrix& block = sys.param_blocks[i];
        if (dst.nonZeros() != block.nonZeros())
            throw ValidationError(
                "instantiate: parameter block " + std::to_string(i + 1) +
                " does not share the assembled sparsity pattern; blocks and "
                "constant parts must be built over the union pattern");
        double* dv = dst.valuePtr();
        const double* bv = block.valuePtr();
        const double c = x[i];
        for (Eigen::Index t = 0; t < dst.nonZeros(); ++t) dv[t] += c * bv[t];
    }
    return out;
}

/// Sparse basis N of {v : Cv = 0}: identity on free dofs, chain-resolved
/// ratio products on slave dofs, zero rows on fixed dofs. Ratios multiply
/// root-first so each slave entry equals ratio * (its master's entry)
/// bitwise, making C*N vanish exactly.
inline SparseMatrix null_space_basis(int n, const ConstraintSet& constraints, const DofMap& dm) {
    std::unordered_map<int, std::pair<int, double>> relation;
    for (const MasterSlave& ms : constraints.master_slave)
        relation[dof_index(ms.slave_node, ms.slave_dir)] = {
            dof_index(ms.master_node, ms.master_dir), ms.ratio};

    std::unordered_map<int, std::pair<int, double>> memo; // dof -> (root, factor)
    std::unordered_map<int, int> visiting;
    auto resolve = [&](auto&& self, int d) -> std::pair<int, double> {
        auto rel = relation.find(d);
        if (rel == relation.end()) return {d, 1.0};
        if (auto hit = memo.find(d); hit != memo.end()) return hit->second;
        if (visiting[d])
            throw ConstraintError("cyclic master-slave chain through dof " + std::to_string(d));
        visiting[d] = 1;
        const auto [root, factor] = self(self, rel->second.first);
        const std::pair<int, double> out{root, rel->second.second * factor};
        memo[d] = out;
        visiting[d] = 0;
        return out;
    };

    std::vector<Eigen::Triplet<double>> trips;
    for (int d = 0; d < n; ++d) {
        if (dm.full_to_free[d] >= 0) {
            trips.emplace_back(d, dm.full_to_free[d], 1.0);
        } else if (dm.is_slave[d]) {
            const auto [root, factor] = resolve(resolve, d);
            if (!dm.is_fixed[root]) trips.emplace_back(d, dm.full_to_free[root], factor);
        }
    }
    SparseMatrix basis(n, dm.n_free);
    basis.setFromTriplets(trips.begin(), trips.end());
    basis.makeCompressed();
    return basis;
}

/// The parametric system projected onto the constraint null space. The
/// reduced blocks keep the affine structure, so instantiate() works on
/// `system` unchanged.
struct ConstrainedSystem {
    ParametricSystem system;  // reduced blocks; system.n == dofs.n_free
    SparseMatrix null_basis;  // maps reduced vectors back to full dofs
    DofMap dofs;
};

inline ConstrainedSystem apply_constraints(const ParametricSystem& sys,
                                           const ConstraintSet& constraints) {
    ConstrainedSystem out;
    out.dofs = dof_map(sys.n / 2, constraints);
    out.null_basis = null_space_basis(sys.n, constraints, out.dofs);

    const SparseMatrix basis_t = out.null_basis.transpose();
    auto reduce = [&](const SparseMatrix& block) {
        SparseMatrix half = block * out.null_basis;
        SparseMatrix reduced = basis_t * half;
        SparseMatrix reduced_t = reduced.transpose();
        SparseMatrix symmetric = 0.5 * (reduced + reduced_t);
        symmetric.makeCompressed();
        return symmetric;
    };

    out.system.n = out.dofs.n_free;
    out.system.params = sys.params;
    out.system.stiffness_const = reduce(sys.stiffness_const);
    out.system.mass_const = reduce(sys.mass_const);
    for (const SparseMatrix& block : sys.param_blocks)
        out.system.param_blocks.push_back(reduce(block));

    detail::unify_sparsity(detail::all_blocks(out.system));
    return out;
}

} // namespace modaltune
