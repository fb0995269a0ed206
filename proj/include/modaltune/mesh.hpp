#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "modaltune/errors.hpp"

namespace modaltune {

/// One four-node plane-strain element: counter-clockwise connectivity plus
/// the material region it belongs to.
struct Element {
    std::array<int, 4> conn{};
    int region = 0;

    bool operator==(const Element&) const = default;
};

/// 2D quad4 mesh with a region label per element and a single out-of-plane
/// thickness. Immutable by convention once built/validated.
struct Mesh {
    std::vector<Eigen::Vector2d> nodes;
    std::vector<Element> elements;
    double thickness = 1.0;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int element_count() const { return static_cast<int>(elements.size()); }

    bool operator==(const Mesh& other) const {
        if (thickness != other.thickness || elements != other.elements ||
            nodes.size() != other.nodes.size())
            return false;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].x() != other.nodes[i].x() || nodes[i].y() != other.nodes[i].y())
                return false;
        return true;
    }
};

/// Linear elastic material attached to a mesh region.
struct MaterialRegion {
    int id = 0;
    double young_modulus = 0.0; // Pa
    double poisson_ratio = 0.0;
    double mass_density = 0.0;  // kg/m^3

    bool operator==(const MaterialRegion&) const = default;
};

struct FixedDof {
    int node = 0;
    int dir = 0; // 0 = x, 1 = y

    auto operator<=>(const FixedDof&) const = default;
};

/// Ties a slave dof to ratio * master dof.
struct MasterSlave {
    int slave_node = 0;
    int slave_dir = 0;
    int master_node = 0;
    int master_dir = 0;
    double ratio = 1.0;

    bool operator==(const MasterSlave&) const = default;
};

struct ConstraintSet {
    std::vector<FixedDof> fixed;
    std::vector<MasterSlave> master_slave;

    bool operator==(const ConstraintSet&) const = default;
};

/// A complete structural model: geometry, materials, constraints.
struct Model {
    Mesh mesh;
    std::vector<MaterialRegion> regions;
    ConstraintSet constraints;

    bool operator==(const Model&) const = default;
};

inline int dof_index(int node, int dir) { return 2 * node + dir; }

/// Signed area of a bilinear quad (shoelace). Positive for CCW winding.
inline double quad_area(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                        const Eigen::Vector2d& c, const Eigen::Vector2d& d) {
    auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return u.x() * v.y() - u.y() * v.x();
    };
    return 0.5 * (cross(a, b) + cross(b, c) + cross(c, d) + cross(d, a));
}

/// Jacobian determinant of the bilinear map at corner i (cross product of the
/// two element edges leaving that corner). All four must be positive for a
/// convex, counter-clockwise element.
inline double corner_jacobian(const Mesh& mesh, const Element& e, int corner) {
    const Eigen::Vector2d& p = mesh.nodes[e.conn[corner]];
    const Eigen::Vector2d& next = mesh.nodes[e.conn[(corner + 1) % 4]];
    const Eigen::Vector2d& prev = mesh.nodes[e.conn[(corner + 3) % 4]];
    const Eigen::Vector2d u = next - p;
    const Eigen::Vector2d v = prev - p;
    return u.x() * v.y() - u.y() * v.x();
}

inline double element_area(const Mesh& mesh, const Element& e) {
    return quad_area(mesh.nodes[e.conn[0]], mesh.nodes[e.conn[1]],
                     mesh.nodes[e.conn[2]], mesh.nodes[e.conn[3]]);
}

inline double mesh_area(const Mesh& mesh) {
    double area = 0.0;
    for (const Element& e : mesh.elements) area += element_area(mesh, e);
    return area;
}

/// Validates all Mesh/ConstraintSet invariants; throws ValidationError with
/// the offending entity named.
inline void validate_model(const Model& model) {
    const Mesh& mesh = model.mesh;
    if (mesh.thickness <= 0.0)
        throw ValidationError("mesh thickness must be positive");

    std::set<int> region_ids;
    for (const MaterialRegion& r : model.regions) {
        if (!region_ids.insert(r.id).second)
            throw ValidationError("duplicate region id " + std::to_string(r.id));
        if (r.young_modulus <= 0.0)
            throw ValidationError("region " + std::to_string(r.id) + ": E must be positive");
        if (r.mass_density <= 0.0)
            throw ValidationError("region " + std::to_string(r.id) + ": rho must be positive");
        if (r.poisson_ratio < 0.0 || r.poisson_ratio >= 0.5)
            throw ValidationError("region " + std::to_string(r.id) +
                                  ": nu must satisfy 0 <= nu < 0.5");
    }

    const int n_nodes = mesh.node_count();
    for (int i = 0; i < mesh.element_count(); ++i) {
        const Element& e = mesh.elements[i];
        std::set<int> distinct;
        for (int c : e.conn) {
            if (c < 0 || c >= n_nodes)
                throw ValidationError("element " + std::to_string(i) +
                                      " references unknown node " + std::to_string(c));
            distinct.insert(c);
        }
        if (distinct.size() != 4)
            throw ValidationError("element " + std::to_string(i) +
                                  " repeats a node in its connectivity");
        for (int corner = 0; corner < 4; ++corner) {
            if (corner_jacobian(mesh, e, corner) <= 0.0)
                throw ValidationError("element " + std::to_string(i) +
                                      " has negative Jacobian at corner " +
                                      std::to_string(corner) + " (clockwise winding?)");
        }
        if (region_ids.count(e.region) == 0)
            throw ValidationError("element " + std::to_string(i) +
                                  " references unknown region " + std::to_string(e.region));
    }

    std::set<FixedDof> fixed;
    for (const FixedDof& f : model.constraints.fixed) {
        if (f.node < 0 || f.node >= n_nodes)
            throw ValidationError("fixed constraint references unknown node " +
                                  std::to_string(f.node));
        if (f.dir != 0 && f.dir != 1)
            throw ValidationError("fixed constraint direction must be 0 or 1");
        fixed.insert(f);
    }

    std::set<int> slave_dofs;
    for (const MasterSlave& ms : model.constraints.master_slave) {
        for (int node : {ms.slave_node, ms.master_node})
            if (node < 0 || node >= n_nodes)
                throw ValidationError("master-slave relation references unknown node " +
                                      std::to_string(node));
        if ((ms.slave_dir != 0 && ms.slave_dir != 1) ||
            (ms.master_dir != 0 && ms.master_dir != 1))
            throw ValidationError("master-slave direction must be 0 or 1");
        const int s = dof_index(ms.slave_node, ms.slave_dir);
        if (!slave_dofs.insert(s).second)
            throw ConstraintError("dof " + std::to_string(s) +
                                  " appears as slave in two relations");
        if (fixed.count({ms.slave_node, ms.slave_dir}))
            throw ConstraintError("dof " + std::to_string(s) + " is both fixed and a slave");
    }

    // Cycle check on slave -> master chains.
    std::map<int, int> master_of;
    for (const MasterSlave& ms : model.constraints.master_slave)
        master_of[dof_index(ms.slave_node, ms.slave_dir)] =
            dof_index(ms.master_node, ms.master_dir);
    for (const auto& [start, first_master] : master_of) {
        int cur = first_master;
        int hops = 0;
        while (master_of.count(cur)) {
            cur = master_of[cur];
            if (cur == start || ++hops > static_cast<int>(master_of.size()))
                throw ConstraintError("cyclic master-slave chain through dof " +
                                      std::to_string(start));
        }
    }
}

/// Full/free dof bookkeeping for a validated model. Numbering is
/// deterministic: free dofs keep ascending full-dof order.
struct DofMap {
    int n = 0;      // total dofs = 2 * nodes
    int n_free = 0; // n - fixed - slaves
    std::vector<int> full_to_free; // -1 for fixed or slave dofs
    std::vector<int> free_dofs;    // inverse map
    std::vector<uint8_t> is_fixed;
    std::vector<uint8_t> is_slave;

    int fixed_count() const {
        int k = 0;
        for (uint8_t f : is_fixed) k += f;
        return k;
    }
    int slave_count() const {
        int k = 0;
        for (uint8_t s : is_slave) k += s;
        return k;
    }
};

inline DofMap dof_map(int node_count, const ConstraintSet& constraints) {
    DofMap dm;
    dm.n = 2 * node_count;
    dm.is_fixed.assign(dm.n, 0);
    dm.is_slave.assign(dm.n, 0);
    for (const FixedDof& f : constraints.fixed) dm.is_fixed[dof_index(f.node, f.dir)] = 1;
    for (const MasterSlave& ms : constraints.master_slave)
        dm.is_slave[dof_index(ms.slave_node, ms.slave_dir)] = 1;
    dm.full_to_free.assign(dm.n, -1);
    for (int d = 0; d < dm.n; ++d) {
        if (!dm.is_fixed[d] && !dm.is_slave[d]) {
            dm.full_to_free[d] = static_cast<int>(dm.free_dofs.size());
            dm.free_dofs.push_back(d);
        }
    }
    dm.n_free = static_cast<int>(dm.free_dofs.size());
    return dm;
}

inline DofMap dof_map(const Mesh& mesh, const ConstraintSet& constraints) {
    return dof_map(mesh.node_count(), constraints);
}

inline int find_nearest_node(const Mesh& mesh, double x, double y) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < mesh.node_count(); ++i) {
        const double d = (mesh.nodes[i] - Eigen::Vector2d(x, y)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

/// Canonical refinement level of the arch-on-piers fixture (336 elements).
inline constexpr int kArchCanonicalRefinement = 1;

/// Observation layout for the arch fixture: nearest mesh nodes to the crown
/// of the arch, the two outer flanks of the ring at 45 degrees, and the two
/// outer pier-top corners. Both displacement components are observed at each.
inline std::vector<int> arch_sensor_nodes(const Mesh& mesh, double span = 4.0,
                                          double pier_height = 4.0) {
    const double cx = 1.0 + span / 2.0;
    const double r_outer = span / 2.0 + 0.4;
    const double diag = r_outer / std::numbers::sqrt2;
    const double landmarks[5][2] = {{cx, pier_height + r_outer},
                                    {cx - diag, pier_height + diag},
                                    {cx + diag, pier_height + diag},
                                    {0.0, pier_height},
                                    {2.0 + span, pier_height}};
    std::vector<int> nodes;
    for (const auto& p : landmarks)
        nodes.push_back(find_nearest_node(mesh, p[0], p[1]));
    return nodes;
}

/// Structured generator for the arch-on-piers fixture: a half-annulus arch
/// ring resting on two rectangular piers clamped at the base.
///
/// Fixed proportions: pier width 1 m, arch ring thickness 0.4 m, semicircular
/// intrados of radius span/2, out-of-plane thickness 1 m. Region 1 is the
/// arch; the piers are built of two masonry courses, region 2 above half pier
/// height and region 3 below it, with the default materials
/// E = (3.25, 5.00, 4.80) GPa, rho = (1800, 2200, 2100) kg/m^3, nu = 0.2.
/// The course split (rather than one material per pier) keeps the three
/// parameters of the calibration exercise independently observable: two
/// geometrically identical piers would leave the stiffen-one/soften-the-other
/// direction invisible to the low frequencies.
///
/// refinement level L >= 0 selects subdivision factor m = L + 1; the tiling
/// is 3m x 12m cells per pier plus an m x 12m arch ring, i.e. 84 m^2 elements
/// (336 at the canonical level). Arch spring nodes are shared with the pier
/// top rows, so the mesh is conforming by construction.
inline Model build_arch_on_piers(double span, double pier_height,
                                 int refinement = kArchCanonicalRefinement) {
    if (!(span > 0.0) || !(pier_height > 0.0))
        throw GeometryError("arch-on-piers: span and pier height must be positive");
    if (refinement < 0)
        throw GeometryError("arch-on-piers: refinement must be non-negative");

    constexpr double pier_width = 1.0;
    constexpr double ring_thickness = 0.4;
    const double r_inner = 0.5 * span;
    const double r_outer = r_inner + ring_thickness;
    const double cx = pier_width + 0.5 * span; // arch center
    const double cy = pier_height;

    const int m = refinement + 1;
    const int pier_cols = 3 * m;  // 2m cells outside the ring footprint + m under it
    const int pier_rows = 12 * m;
    const int ring_layers = m;
    const int ring_segments = 12 * m;

    Model model;
    Mesh& mesh = model.mesh;
    mesh.thickness = 1.0;
    model.regions = {
        {1, 3.25e9, 0.2, 1800.0},
        {2, 5.00e9, 0.2, 2200.0},
        {3, 4.80e9, 0.2, 2100.0},
    };

    // Column x-coordinates. The band of width ring_thickness adjacent to the
    // arch is subdivided to match the ring's radial nodes.
    const double band_a = pier_width - ring_thickness;
    std::vector<double> left_x(pier_cols + 1), right_x(pier_cols + 1);
    for (int c = 0; c <= 2 * m; ++c) left_x[c] = band_a * c / (2.0 * m);
    for (int c = 1; c <= m; ++c) left_x[2 * m + c] = band_a + ring_thickness * c / m;
    const double right_origin = pier_width + span;
    for (int c = 0; c <= m; ++c) right_x[c] = right_origin + ring_thickness * c / m;
    for (int c = 1; c <= 2 * m; ++c) right_x[m + c] = right_origin + ring_thickness + band_a * c / (2.0 * m);

    auto add_node = [&mesh](double x, double y) {
        mesh.nodes.emplace_back(x, y);
        return static_cast<int>(mesh.nodes.size()) - 1;
    };

    std::vector<int> left_ids((pier_cols + 1) * (pier_rows + 1));
    std::vector<int> right_ids(left_ids.size());
    auto grid = [&](std::vector<int>& ids, int col, int row) -> int& {
        return ids[row * (pier_cols + 1) + col];
    };
    for (int row = 0; row <= pier_rows; ++row) {
        const double y = pier_height * row / pier_rows;
        for (int col = 0; col <= pier_cols; ++col)
            grid(left_ids, col, row) = add_node(left_x[col], y);
    }
    for (int row = 0; row <= pier_rows; ++row) {
        const double y = pier_height * row / pier_rows;
        for (int col = 0; col <= pier_cols; ++col)
            grid(right_ids, col, row) = add_node(right_x[col], y);
    }

    // Ring nodes: (layer i, segment k). The k = 0 and k = ring_segments
    // columns reuse pier top-row nodes so the interface stays conforming.
    std::vector<int> ring_ids((ring_layers + 1) * (ring_segments + 1), -1);
    auto ring = [&](int i, int k) -> int& { return ring_ids[k * (ring_layers + 1) + i]; };
    for (int i = 0; i <= ring_layers; ++i) {
        ring(i, 0) = grid(left_ids, pier_cols - i, pier_rows);
        ring(i, ring_segments) = grid(right_ids, i, pier_rows);
    }
    for (int k = 1; k < ring_segments; ++k) {
        const double theta = std::numbers::pi * (1.0 - static_cast<double>(k) / ring_segments);
        for (int i = 0; i <= ring_layers; ++i) {
            const double r = r_inner + ring_thickness * i / ring_layers;
            ring(i, k) = add_node(cx + r * std::cos(theta), cy + r * std::sin(theta));
        }
    }

    auto add_quad = [&mesh](int a, int b, int c, int d, int region) {
        mesh.elements.push_back(Element{{a, b, c, d}, region});
    };
    // pier_rows = 12m is even, so the course boundary falls on a node row.
    const auto pier_region = [pier_rows](int row) {
        return row >= pier_rows / 2 ? 2 : 3;
    };
    for (int row = 0; row < pier_rows; ++row)
        for (int col = 0; col < pier_cols; ++col)
            add_quad(grid(left_ids, col, row), grid(left_ids, col + 1, row),
                     grid(left_ids, col + 1, row + 1), grid(left_ids, col, row + 1),
                     pier_region(row));
    for (int row = 0; row < pier_rows; ++row)
        for (int col = 0; col < pier_cols; ++col)
            add_quad(grid(right_ids, col, row), grid(right_ids, col + 1, row),
                     grid(right_ids, col + 1, row + 1), grid(right_ids, col, row + 1),
                     pier_region(row));
    // Theta decreases with k, so (i,k) -> (i,k+1) -> (i+1,k+1) -> (i+1,k)
    // walks the quad counter-clockwise.
    for (int k = 0; k < ring_segments; ++k)
        for (int i = 0; i < ring_layers; ++i)
            add_quad(ring(i, k), ring(i, k + 1), ring(i + 1, k + 1), ring(i + 1, k), 1);

    for (int col = 0; col <= pier_cols; ++col) {
        for (int dir : {0, 1}) {
            model.constraints.fixed.push_back({grid(left_ids, col, 0), dir});
            model.constraints.fixed.push_back({grid(right_ids, col, 0), dir});
        }
    }

    validate_model(model);
    return model;
}

} // namespace modaltune
