#pragma once

#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "modaltune/mesh.hpp"

namespace modaltune {

/// Mesh files are a single JSON document:
///   nodes:       [[x, y], ...]
///   elements:    [{"conn": [4 ints], "region": int}, ...]
///   regions:     [{"id": int, "E": Pa, "nu": -, "rho": kg/m^3}, ...]
///   constraints: {"fixed": [[node, dir], ...],
///                 "master_slave": [[slave_node, slave_dir,
///                                   master_node, master_dir, ratio], ...]}
///   thickness:   meters
/// Indices are 0-based; numbers are plain JSON decimals.

inline nlohmann::ordered_json model_to_json(const Model& model) {
    nlohmann::ordered_json j;
    auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
    for (const auto& p : model.mesh.nodes) nodes.push_back({p.x(), p.y()});
    auto& elements = j["elements"] = nlohmann::ordered_json::array();
    for (const Element& e : model.mesh.elements)
        elements.push_back({{"conn", e.conn}, {"region", e.region}});
    auto& regions = j["regions"] = nlohmann::ordered_json::array();
    for (const MaterialRegion& r : model.regions)
        regions.push_back({{"id", r.id},
                           {"E", r.young_modulus},
                           {"nu", r.poisson_ratio},
                           {"rho", r.mass_density}});
    auto& cs = j["constraints"];
    auto& fixed = cs["fixed"] = nlohmann::ordered_json::array();
    for (const FixedDof& f : model.constraints.fixed) fixed.push_back({f.node, f.dir});
    auto& ms = cs["master_slave"] = nlohmann::ordered_json::array();
    for (const MasterSlave& r : model.constraints.master_slave)
        ms.push_back({r.slave_node, r.slave_dir, r.master_node, r.master_dir, r.ratio});
    j["thickness"] = model.mesh.thickness;
    return j;
}

inline void save_model(std::ostream& out, const Model& model) {
    out << model_to_json(model).dump(2) << '\n';
}

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j, const std::string& key,
                                         const std::string& what) {
    auto it = j.find(key);
    if (it == j.end())
        throw ValidationError(what + ": missing required key '" + key + "'");
    return *it;
}

} // namespace detail

/// Parses and fully validates a model; throws ValidationError naming the
/// offending entity on any schema or invariant violation.
inline Model model_from_json(const nlohmann::json& j) {
    Model model;
    try {
        for (const auto& n : detail::require_key(j, "nodes", "mesh file")) {
            if (!n.is_array() || n.size() != 2)
                throw ValidationError("mesh file: node entries must be [x, y]");
            model.mesh.nodes.emplace_back(n[0].get<double>(), n[1].get<double>());
        }
        for (const auto& e : detail::require_key(j, "elements", "mesh file")) {
            Element el;
            const auto& conn = detail::require_key(e, "conn", "element");
            if (!conn.is_array() || conn.size() != 4)
                throw ValidationError("mesh file: element conn must list 4 node indices");
            for (int c = 0; c < 4; ++c) el.conn[c] = conn[c].get<int>();
            el.region = detail::require_key(e, "region", "element").get<int>();
            model.mesh.elements.push_back(el);
        }
        for (const auto& r : detail::require_key(j, "regions", "mesh file")) {
            MaterialRegion mr;
            mr.id = detail::require_key(r, "id", "region").get<int>();
            mr.young_modulus = detail::require_key(r, "E", "region").get<double>();
            mr.poisson_ratio = detail::require_key(r, "nu", "region").get<double>();
            mr.mass_density = detail::require_key(r, "rho", "region").get<double>();
            model.regions.push_back(mr);
        }
        const auto& cs = detail::require_key(j, "constraints", "mesh file");
        for (const auto& f : detail::require_key(cs, "fixed", "constraints")) {
            if (!f.is_array() || f.size() != 2)
                throw ValidationError("mesh file: fixed entries must be [node, dir]");
            model.constraints.fixed.push_back({f[0].get<int>(), f[1].get<int>()});
        }
        for (const auto& r : detail::require_key(cs, "master_slave", "constraints")) {
            if (!r.is_array() || r.size() != 5)
                throw ValidationError("mesh file: master_slave entries must be "
                                      "[slave_node, slave_dir, master_node, master_dir, ratio]");
            model.constraints.master_slave.push_back({r[0].get<int>(), r[1].get<int>(),
                                                      r[2].get<int>(), r[3].get<int>(),
                                                      r[4].get<double>()});
        }
        model.mesh.thickness = detail::require_key(j, "thickness", "mesh file").get<double>();
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("mesh file: malformed value (") + ex.what() + ")");
    }
    validate_model(model);
    return model;
}

inline Model load_model(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("mesh file: invalid JSON (") + ex.what() + ")");
    }
    return model_from_json(j);
}

} // namespace modaltune
