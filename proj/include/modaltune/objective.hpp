// Modal targets and the weighted least-squares objective.
//
// A ModalTarget holds measured frequencies, the observed dofs, measured mode
// shapes at those dofs, and a normalized weight vector. The residual stacks
// weighted frequency gaps on top of weighted MAC gaps; the objective is its
// squared norm. Everything here is a pure function of its inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <modaltune/errors.hpp>
#include <modaltune/mesh.hpp>

namespace modaltune {

enum class WeightScheme { kAbsolute, kRelative, kCustom };

/// How the weight vector is formed before normalization.
struct WeightSpec {
    WeightScheme scheme = WeightScheme::kRelative;
    /// Uniform weight for every MAC entry (relative scheme).
    double mode_weight = 0.1;
    /// Optional per-mode MAC weights; overrides mode_weight when non-empty.
    Eigen::VectorXd mode_weights;
    /// Full 2q raw weight vector for the custom scheme.
    Eigen::VectorXd custom;
};

struct ModalTarget {
    int q = 0;
    Eigen::VectorXd frequencies_hz;  ///< measured, ascending, positive
    std::vector<int> sensor_dofs;    ///< observed global dof indices
    Eigen::MatrixXd mode_shapes;     ///< sensors x q, one column per mode
    Eigen::VectorXd weights;         ///< length 2q, unit Euclidean norm
    WeightSpec weight_spec;          ///< kept for round-tripping target files
};

struct Residual {
    Eigen::VectorXd r;      ///< length 2q: weighted frequency gaps, then MAC gaps
    double phi = 0.0;       ///< squared norm of r
    Eigen::VectorXd gamma;  ///< per-mode MAC values
};

/// Modal assurance criterion between two real mode vectors, in [0, 1];
/// invariant under nonzero scaling and sign changes of either argument.
inline double mac(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size())
        throw ValidationError("mac: vectors must have equal length");
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        throw ValidationError("mac: zero vector has no direction to compare");
    return std::min(std::abs(a.dot(b)) / (na * nb), 1.0);
}

/// Extracts the observed entries of a full-coordinate mode, in sensor order.
inline Eigen::VectorXd project_mode(const Eigen::VectorXd& full_mode,
                                    const std::vector<int>& sensor_dofs) {
    if (sensor_dofs.empty())
        throw ValidationError("project_mode: no observed dofs");
    Eigen::VectorXd out(sensor_dofs.size());
    for (int i = 0; i < static_cast<int>(sensor_dofs.size()); ++i) {
        const int dof = sensor_dofs[i];
        if (dof < 0 || dof >= full_mode.size())
            throw ValidationError("project_mode: sensor dof " + std::to_string(dof) +
                                  " is out of range");
        out(i) = full_mode(dof);
    }
    return out;
}

/// Assembles a target, forming and normalizing the weight vector.
inline ModalTarget build_target(const Eigen::VectorXd& frequencies_hz,
                                const Eigen::MatrixXd& mode_shapes,
                                const std::vector<int>& sensor_dofs,
                                const WeightSpec& spec = {}) {
    const int q = static_cast<int>(frequencies_hz.size());
    if (mode_shapes.cols() != q)
        throw ValidationError("build_target: expected one mode shape per frequency");
    if (q > 0 && mode_shapes.rows() != static_cast<Eigen::Index>(sensor_dofs.size()))
        throw ValidationError("build_target: mode shapes and sensor map disagree "
                              "on the number of observed dofs");
    for (int i = 0; i < q; ++i) {
        if (!(frequencies_hz(i) > 0.0))
            throw ValidationError("build_target: measured frequencies must be positive");
        if (i > 0 && frequencies_hz(i) < frequencies_hz(i - 1))
            throw ValidationError("build_target: measured frequencies must be ascending");
    }

    Eigen::VectorXd raw(2 * q);
    switch (spec.scheme) {
    case WeightScheme::kAbsolute:
        raw.setOnes();
        break;
    case WeightScheme::kRelative:
        for (int i = 0; i < q; ++i) raw(i) = 1.0 / frequencies_hz(i);
        if (spec.mode_weights.size() > 0) {
            if (spec.mode_weights.size() != q)
                throw ValidationError("build_target: per-mode weights must have one "
                                      "entry per matched mode");
            raw.tail(q) = spec.mode_weights;
        } else {
            raw.tail(q).setConstant(spec.mode_weight);
        }
        break;
    case WeightScheme::kCustom:
        if (spec.custom.size() != 2 * q)
            throw ValidationError("build_target: custom weights must have length 2q");
        raw = spec.custom;
        break;
    }
    if ((raw.array() < 0.0).any())
        throw ValidationError("build_target: weights must be non-negative");
    const double norm = raw.norm();
    if (norm == 0.0) throw ValidationError("build_target: degenerate weights");

    ModalTarget target;
    target.q = q;
    target.frequencies_hz = frequencies_hz;
    target.sensor_dofs = sensor_dofs;
    target.mode_shapes = mode_shapes;
    target.weights = raw / norm;
    target.weight_spec = spec;
    return target;
}

/// Checks that every observed dof exists and is neither fixed nor tied.
inline void validate_target_dofs(const ModalTarget& target, const DofMap& dofs) {
    for (const int dof : target.sensor_dofs) {
        if (dof < 0 || dof >= dofs.n)
            throw ValidationError("target: sensor dof " + std::to_string(dof) +
                                  " does not exist in the model");
        if (dofs.is_fixed[dof] || dofs.is_slave[dof])
            throw ValidationError("target: sensor dof " + std::to_string(dof) +
                                  " is constrained and carries no independent motion");
    }
}

enum class PairingMode { kByIndex, kMacGreedy };

struct Pairing {
    std::vector<int> indices;  ///< indices[i] = computed mode matched to target mode i
    bool swapped = false;      ///< index and MAC-greedy pairings disagree
    std::string warning;       ///< human-readable note when swapped
};

/// Matches computed modes to target modes. The default is pairing by
/// ascending-frequency index; the MAC-greedy variant assigns each target mode
/// the best-matching unused computed mode. Whenever the two disagree, the
/// result carries a mode-swap warning regardless of which one was requested.
inline Pairing pair_modes(const Eigen::MatrixXd& projected_modes,
                          const ModalTarget& target,
                          PairingMode mode = PairingMode::kByIndex) {
    const int available = static_cast<int>(projected_modes.cols());
    if (available < target.q)
        throw ValidationError("pair_modes: fewer computed modes (" +
                              std::to_string(available) + ") than target modes (" +
                              std::to_string(target.q) + ")");
    Pairing out;
    if (target.q == 0) return out;

    std::vector<int> greedy;
    std::vector<bool> used(available, false);
    for (int i = 0; i < target.q; ++i) {
        int best = -1;
        double best_mac = -1.0;
        for (int j = 0; j < available; ++j) {
            if (used[j]) continue;
            const double g = mac(target.mode_shapes.col(i), projected_modes.col(j));
            if (g > best_mac) {
                best_mac = g;
                best = j;
            }
        }
        used[best] = true;
        greedy.push_back(best);
    }

    std::vector<int> by_index(target.q);
    for (int i = 0; i < target.q; ++i) by_index[i] = i;

    out.swapped = greedy != by_index;
    if (out.swapped) {
        out.warning = "mode pairing by frequency order disagrees with the best "
                      "MAC assignment; modes may have crossed";
    }
    out.indices = (mode == PairingMode::kMacGreedy) ? greedy : by_index;
    return out;
}

/// Weighted residual of paired frequencies and projected modes against the
/// target. The objective value is the exact squared norm of the residual.
inline Residual residual(const ModalTarget& target,
                         const Eigen::VectorXd& frequencies_hz,
                         const Eigen::MatrixXd& projected_modes) {
    if (frequencies_hz.size() != target.q)
        throw ValidationError("residual: expected one frequency per target mode");
    if (projected_modes.cols() != target.q ||
        (target.q > 0 &&
         projected_modes.rows() != static_cast<Eigen::Index>(target.sensor_dofs.size())))
        throw ValidationError("residual: projected modes must be sensors x q");

    Residual out;
    out.r.resize(2 * target.q);
    out.gamma.resize(target.q);
    for (int i = 0; i < target.q; ++i) {
        out.r(i) = target.weights(i) * (target.frequencies_hz(i) - frequencies_hz(i));
        out.gamma(i) = mac(target.mode_shapes.col(i), projected_modes.col(i));
        out.r(target.q + i) = target.weights(target.q + i) * (1.0 - out.gamma(i));
    }
    out.phi = out.r.squaredNorm();
    return out;
}

// ---------------------------------------------------------------------------
// Target files.

namespace detail {

inline std::string scheme_name(WeightScheme scheme) {
    switch (scheme) {
    case WeightScheme::kAbsolute: return "absolute";
    case WeightScheme::kRelative: return "relative";
    case WeightScheme::kCustom: return "custom";
    }
    return "relative";
}

inline WeightScheme scheme_from_name(const std::string& name) {
    if (name == "absolute") return WeightScheme::kAbsolute;
    if (name == "relative") return WeightScheme::kRelative;
    if (name == "custom") return WeightScheme::kCustom;
    throw ValidationError("target file: unknown weight scheme '" + name + "'");
}

} // namespace detail

inline nlohmann::ordered_json target_to_json(const ModalTarget& target) {
    nlohmann::ordered_json j;
    j["frequencies_hz"] = std::vector<double>(
        target.frequencies_hz.data(), target.frequencies_hz.data() + target.q);
    auto& sensors = j["sensor_dofs"] = nlohmann::ordered_json::array();
    for (const int dof : target.sensor_dofs)
        sensors.push_back({dof / 2, dof % 2});
    auto& shapes = j["mode_shapes"] = nlohmann::ordered_json::array();
    for (int i = 0; i < target.q; ++i) {
        const Eigen::VectorXd col = target.mode_shapes.col(i);
        shapes.push_back(std::vector<double>(col.data(), col.data() + col.size()));
    }
    auto& w = j["weights"];
    w["scheme"] = detail::scheme_name(target.weight_spec.scheme);
    w["mode_weight"] = target.weight_spec.mode_weight;
    if (target.weight_spec.mode_weights.size() > 0)
        w["mode_weights"] = std::vector<double>(
            target.weight_spec.mode_weights.data(),
            target.weight_spec.mode_weights.data() + target.weight_spec.mode_weights.size());
    if (target.weight_spec.scheme == WeightScheme::kCustom)
        w["custom"] = std::vector<double>(
            target.weight_spec.custom.data(),
            target.weight_spec.custom.data() + target.weight_spec.custom.size());
    return j;
}

inline void save_target(std::ostream& out, const ModalTarget& target) {
    out << target_to_json(target).dump(2) << '\n';
}

inline ModalTarget target_from_json(const nlohmann::json& j) {
    try {
        if (!j.contains("frequencies_hz"))
            throw ValidationError("target file: missing required key 'frequencies_hz'");
        if (!j.contains("sensor_dofs"))
            throw ValidationError("target file: missing required key 'sensor_dofs'");
        if (!j.contains("mode_shapes"))
            throw ValidationError("target file: missing required key 'mode_shapes'");

        const auto freq_list = j.at("frequencies_hz").get<std::vector<double>>();
        const int q = static_cast<int>(freq_list.size());
        Eigen::VectorXd freqs =
            Eigen::Map<const Eigen::VectorXd>(freq_list.data(), q);

        std::vector<int> sensor_dofs;
        for (const auto& entry : j.at("sensor_dofs")) {
            if (!entry.is_array() || entry.size() != 2)
                throw ValidationError("target file: sensor_dofs entries must be "
                                      "[node, dir]");
            const int node = entry.at(0).get<int>();
            const int dir = entry.at(1).get<int>();
            if (dir != 0 && dir != 1)
                throw ValidationError("target file: sensor direction must be 0 or 1");
            sensor_dofs.push_back(dof_index(node, dir));
        }

        const auto& shapes = j.at("mode_shapes");
        if (static_cast<int>(shapes.size()) != q)
            throw ValidationError("target file: expected one mode shape per frequency");
        Eigen::MatrixXd modes(sensor_dofs.size(), q);
        for (int i = 0; i < q; ++i) {
            const auto row = shapes.at(i).get<std::vector<double>>();
            if (row.size() != sensor_dofs.size())
                throw ValidationError("target file: mode shape length must match "
                                      "the sensor count");
            modes.col(i) = Eigen::Map<const Eigen::VectorXd>(
                row.data(), static_cast<Eigen::Index>(row.size()));
        }

        WeightSpec spec;
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            if (w.contains("scheme"))
                spec.scheme = detail::scheme_from_name(w.at("scheme").get<std::string>());
            if (w.contains("mode_weight"))
                spec.mode_weight = w.at("mode_weight").get<double>();
            if (w.contains("mode_weights")) {
                const auto mw = w.at("mode_weights").get<std::vector<double>>();
                spec.mode_weights = Eigen::Map<const Eigen::VectorXd>(
                    mw.data(), static_cast<Eigen::Index>(mw.size()));
            }
            if (w.contains("custom")) {
                const auto cw = w.at("custom").get<std::vector<double>>();
                spec.custom = Eigen::Map<const Eigen::VectorXd>(
                    cw.data(), static_cast<Eigen::Index>(cw.size()));
            }
        }
        return build_target(freqs, modes, sensor_dofs, spec);
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("target file: malformed value (") +
                              err.what() + ")");
    }
}

inline ModalTarget load_target(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("target file: invalid JSON (") + err.what() +
                              ")");
    }
    return target_from_json(j);
}

} // namespace modaltune
