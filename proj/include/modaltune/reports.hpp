#pragma once

// Report emission and parsing: JSON documents for forward analyses,
// calibration runs, sensitivity studies, and benchmarks, plus fixed-column
// CSV tables for per-iteration logs and noise sweeps.
//
// Every JSON document carries a versioned "schema" field and a "kind"
// discriminator, and is emitted from insertion-ordered maps so identical
// inputs produce byte-identical files. Wall-clock data and timestamps live
// only under the "meta" key (added by stamp_meta just before writing), so
// stripping "meta" yields the comparable, reproducible part of a report.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include <Eigen/Dense>

#include "modaltune/eigensolver.hpp"
#include "modaltune/errors.hpp"
#include "modaltune/mesh_io.hpp"
#include "modaltune/objective.hpp"
#include "modaltune/optimizer.hpp"
#include "modaltune/sensitivity.hpp"

namespace modaltune {

constexpr int kReportSchemaVersion = 1;

namespace detail {

inline nlohmann::ordered_json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j,
                                        const std::string& what) {
    if (!j.is_array())
        throw ValidationError(what + ": expected an array of numbers");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
    return v;
}

/// Matrices serialize as an array of columns (natural for mode shapes and
/// singular directions alike).
inline nlohmann::ordered_json columns_to_json(const Eigen::MatrixXd& m) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        arr.push_back(vector_to_json(m.col(c)));
    return arr;
}

inline Eigen::MatrixXd columns_from_json(const nlohmann::json& j,
                                         const std::string& what) {
    if (!j.is_array())
        throw ValidationError(what + ": expected an array of column arrays");
    if (j.empty()) return Eigen::MatrixXd(0, 0);
    const std::size_t rows = j[0].size();
    Eigen::MatrixXd m(rows, j.size());
    for (std::size_t c = 0; c < j.size(); ++c) {
        if (j[c].size() != rows)
            throw ValidationError(what + ": columns have unequal lengths");
        m.col(c) = vector_from_json(j[c], what);
    }
    return m;
}

/// Shortest exact decimal for CSV cells: every double survives a text
/// round trip, and identical runs produce identical bytes.
inline std::string csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline TerminationReason reason_from_string(const std::string& name) {
    if (name == "converged") return TerminationReason::kConverged;
    if (name == "budget-exhausted") return TerminationReason::kBudgetExhausted;
    if (name == "stalled") return TerminationReason::kStalled;
    throw ValidationError("report: unknown termination reason '" + name + "'");
}

} // namespace detail

/// Adds the volatile metadata block (UTC timestamp, plus any entries already
/// staged by the caller). Everything outside "meta" is reproducible.
inline void stamp_meta(nlohmann::ordered_json& report) {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
    report["meta"]["generated_at"] = stamp;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out)
        throw ValidationError("failed while writing '" + path.string() + "'");
}

inline void write_json_file(const std::filesystem::path& path,
                            const nlohmann::ordered_json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Forward analysis

inline nlohmann::ordered_json forward_to_json(const EigenSolution& sol,
                                              const Eigen::VectorXd& x) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchemaVersion;
    j["kind"] = "forward";
    j["x"] = detail::vector_to_json(x);
    j["frequencies_hz"] = detail::vector_to_json(sol.frequencies_hz);
    j["eigenvalues"] = detail::vector_to_json(sol.eigenvalues);
    j["residuals"] = detail::vector_to_json(sol.residuals);
    j["modes"] = detail::columns_to_json(sol.modes);
    return j;
}

// ---------------------------------------------------------------------------
// Calibration runs

namespace detail {

inline nlohmann::ordered_json solution_to_json(const EigenSolution& sol) {
    nlohmann::ordered_json j;
    j["eigenvalues"] = vector_to_json(sol.eigenvalues);
    j["frequencies_hz"] = vector_to_json(sol.frequencies_hz);
    j["residuals"] = vector_to_json(sol.residuals);
    j["modes"] = columns_to_json(sol.modes);
    j["reduced_modes"] = columns_to_json(sol.reduced_modes);
    return j;
}

inline EigenSolution solution_from_json(const nlohmann::json& j) {
    EigenSolution sol;
    sol.eigenvalues =
        vector_from_json(require_key(j, "eigenvalues", "solution"), "eigenvalues");
    sol.frequencies_hz = vector_from_json(
        require_key(j, "frequencies_hz", "solution"), "frequencies_hz");
    sol.residuals =
        vector_from_json(require_key(j, "residuals", "solution"), "residuals");
    sol.modes = columns_from_json(require_key(j, "modes", "solution"), "modes");
    sol.reduced_modes = columns_from_json(
        require_key(j, "reduced_modes", "solution"), "reduced_modes");
    return sol;
}

} // namespace detail

inline nlohmann::ordered_json update_result_to_json(const UpdateResult& result) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchemaVersion;
    j["kind"] = "update";
    j["reason"] = to_string(result.reason);
    j["x_opt"] = detail::vector_to_json(result.x_opt);
    j["phi"] = result.phi;
    j["pg_norm"] = result.pg_norm;
    j["rom_builds"] = result.rom_builds;
    j["full_solves"] = result.full_solves;
    j["warnings"] = result.warnings;

    auto& pairing = j["pairing"];
    pairing["indices"] = result.pairing.indices;
    pairing["swapped"] = result.pairing.swapped;
    pairing["warning"] = result.pairing.warning;

    // One row per model build; never empty — a run that converges at its
    // starting point still has the initial build.
    auto& history = j["history"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < result.phi_history.size(); ++k) {
        nlohmann::ordered_json row;
        row["build"] = k + 1;
        row["phi"] = result.phi_history[k];
        row["x"] = detail::vector_to_json(result.x_history[k]);
        row["frequencies_hz"] =
            detail::vector_to_json(result.frequency_history[k]);
        history.push_back(std::move(row));
    }

    auto& iterations = j["iterations"] = nlohmann::ordered_json::array();
    for (const IterationRecord& it : result.iterations) {
        nlohmann::ordered_json row;
        row["iteration"] = it.iteration;
        row["phi"] = it.phi;
        row["radius"] = it.radius;
        row["rho"] = it.rho;
        row["accepted"] = it.accepted;
        row["x_scaled"] = detail::vector_to_json(it.x_scaled);
        row["x"] = detail::vector_to_json(it.x_physical);
        row["frequencies_hz"] = detail::vector_to_json(it.frequencies_hz);
        iterations.push_back(std::move(row));
    }

    j["solution"] = detail::solution_to_json(result.solution);
    return j;
}

inline UpdateResult update_result_from_json(const nlohmann::json& j) {
    using detail::require_key;
    UpdateResult result;
    try {
        result.reason = detail::reason_from_string(
            require_key(j, "reason", "update report").get<std::string>());
        result.x_opt = detail::vector_from_json(
            require_key(j, "x_opt", "update report"), "x_opt");
        result.phi = require_key(j, "phi", "update report").get<double>();
        result.pg_norm = require_key(j, "pg_norm", "update report").get<double>();
        result.rom_builds =
            require_key(j, "rom_builds", "update report").get<int>();
        result.full_solves =
            require_key(j, "full_solves", "update report").get<int>();
        result.warnings = require_key(j, "warnings", "update report")
                              .get<std::vector<std::string>>();

        const auto& pairing = require_key(j, "pairing", "update report");
        result.pairing.indices =
            require_key(pairing, "indices", "pairing").get<std::vector<int>>();
        result.pairing.swapped =
            require_key(pairing, "swapped", "pairing").get<bool>();
        result.pairing.warning =
            require_key(pairing, "warning", "pairing").get<std::string>();

        for (const auto& row : require_key(j, "history", "update report")) {
            result.phi_history.push_back(
                require_key(row, "phi", "history").get<double>());
            result.x_history.push_back(
                detail::vector_from_json(require_key(row, "x", "history"), "x"));
            result.frequency_history.push_back(detail::vector_from_json(
                require_key(row, "frequencies_hz", "history"), "frequencies_hz"));
        }
        for (const auto& row : require_key(j, "iterations", "update report")) {
            IterationRecord it;
            it.iteration = require_key(row, "iteration", "iteration").get<int>();
            it.phi = require_key(row, "phi", "iteration").get<double>();
            it.radius = require_key(row, "radius", "iteration").get<double>();
            it.rho = require_key(row, "rho", "iteration").get<double>();
            it.accepted = require_key(row, "accepted", "iteration").get<bool>();
            it.x_scaled = detail::vector_from_json(
                require_key(row, "x_scaled", "iteration"), "x_scaled");
            it.x_physical = detail::vector_from_json(
                require_key(row, "x", "iteration"), "x");
            it.frequencies_hz = detail::vector_from_json(
                require_key(row, "frequencies_hz", "iteration"), "frequencies_hz");
            result.iterations.push_back(std::move(it));
        }
        result.solution = detail::solution_from_json(
            require_key(j, "solution", "update report"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("update report: malformed value (") +
                              e.what() + ")");
    }
    return result;
}

/// Per-candidate log as CSV. Column order is fixed:
///   iteration, phi, radius, rho, accepted,
///   xs_1..xs_p (scaled), x_1..x_p (physical), f_1..f_q (Hz).
/// One row per candidate tried, accepted or not.
inline std::string iterations_to_csv(const UpdateResult& result) {
    const Eigen::Index p =
        result.iterations.empty() ? result.x_opt.size()
                                  : result.iterations.front().x_physical.size();
    const Eigen::Index q =
        result.iterations.empty()
            ? result.frequency_history.empty()
                  ? 0
                  : result.frequency_history.front().size()
            : result.iterations.front().frequencies_hz.size();

    std::string csv = "iteration,phi,radius,rho,accepted";
    for (Eigen::Index i = 1; i <= p; ++i) csv += ",xs_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= p; ++i) csv += ",x_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= q; ++i) csv += ",f_" + std::to_string(i);
    csv += "\n";

    for (const IterationRecord& it : result.iterations) {
        csv += std::to_string(it.iteration);
        csv += "," + detail::csv_number(it.phi);
        csv += "," + detail::csv_number(it.radius);
        csv += "," + detail::csv_number(it.rho);
        csv += it.accepted ? ",1" : ",0";
        for (Eigen::Index i = 0; i < it.x_scaled.size(); ++i)
            csv += "," + detail::csv_number(it.x_scaled(i));
        for (Eigen::Index i = 0; i < it.x_physical.size(); ++i)
            csv += "," + detail::csv_number(it.x_physical(i));
        for (Eigen::Index i = 0; i < it.frequencies_hz.size(); ++i)
            csv += "," + detail::csv_number(it.frequencies_hz(i));
        csv += "\n";
    }
    return csv;
}

// ---------------------------------------------------------------------------
// Sensitivity studies

/// Everything a post-calibration sensitivity run produces, in one place.
struct SensitivityReport {
    Eigen::VectorXd x;  ///< evaluation point (usually the calibrated optimum)
    double noise_level = 0.0;
    JacobianReport jacobian;
    SvdReport svd;
};

inline nlohmann::ordered_json sensitivity_to_json(const SensitivityReport& rep) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchemaVersion;
    j["kind"] = "sensitivity";
    j["x"] = detail::vector_to_json(rep.x);
    j["noise_level"] = rep.noise_level;

    auto& jac = j["jacobian"];
    jac["matrix"] = detail::columns_to_json(rep.jacobian.matrix);
    jac["fd_fallback"] = rep.jacobian.fd_fallback;
    jac["warnings"] = rep.jacobian.warnings;

    j["singular_values"] = detail::vector_to_json(rep.svd.singular_values);
    j["right_vectors"] = detail::columns_to_json(rep.svd.right_vectors);
    j["left_vectors"] = detail::columns_to_json(rep.svd.left_vectors);
    // JSON has no infinity literal; an exactly singular direction reports
    // the string "inf" instead.
    if (std::isinf(rep.svd.condition))
        j["condition"] = "inf";
    else
        j["condition"] = rep.svd.condition;
    j["trusted"] = rep.svd.trusted;
    return j;
}

inline SensitivityReport sensitivity_from_json(const nlohmann::json& j) {
    using detail::require_key;
    SensitivityReport rep;
    try {
        rep.x = detail::vector_from_json(require_key(j, "x", "sensitivity report"),
                                         "x");
        rep.noise_level =
            require_key(j, "noise_level", "sensitivity report").get<double>();

        const auto& jac = require_key(j, "jacobian", "sensitivity report");
        rep.jacobian.matrix = detail::columns_from_json(
            require_key(jac, "matrix", "jacobian"), "jacobian matrix");
        rep.jacobian.fd_fallback =
            require_key(jac, "fd_fallback", "jacobian").get<bool>();
        rep.jacobian.warnings = require_key(jac, "warnings", "jacobian")
                                    .get<std::vector<std::string>>();

        rep.svd.singular_values = detail::vector_from_json(
            require_key(j, "singular_values", "sensitivity report"),
            "singular_values");
        rep.svd.right_vectors = detail::columns_from_json(
            require_key(j, "right_vectors", "sensitivity report"),
            "right_vectors");
        rep.svd.left_vectors = detail::columns_from_json(
            require_key(j, "left_vectors", "sensitivity report"), "left_vectors");
        const auto& cond = require_key(j, "condition", "sensitivity report");
        rep.svd.condition = cond.is_string()
                                ? std::numeric_limits<double>::infinity()
                                : cond.get<double>();
        rep.svd.trusted =
            require_key(j, "trusted", "sensitivity report").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(
            std::string("sensitivity report: malformed value (") + e.what() + ")");
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Noise sweeps

/// Sweep table as CSV with fixed columns: delta, seed, error, converged.
/// A failed row keeps its (delta, seed) and records error as nan.
inline std::string sweep_to_csv(const std::vector<NoiseSweepRow>& rows) {
    std::string csv = "delta,seed,error,converged\n";
    for (const NoiseSweepRow& row : rows) {
        csv += detail::csv_number(row.delta);
        csv += "," + std::to_string(row.seed);
        csv += "," + detail::csv_number(row.error);
        csv += row.converged ? ",1" : ",0";
        csv += "\n";
    }
    return csv;
}

// ---------------------------------------------------------------------------
// Benchmarks

/// One optimizer's calibration outcome with its wall time.
struct BenchmarkEntry {
    std::string method;
    UpdateResult result;
    double wall_seconds = 0.0;
};

/// Stable comparison document; wall times are volatile and therefore live
/// under "meta" (stamped alongside the timestamp).
inline nlohmann::ordered_json benchmark_to_json(
    const std::vector<BenchmarkEntry>& entries) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchemaVersion;
    j["kind"] = "benchmark";
    auto& methods = j["methods"] = nlohmann::ordered_json::array();
    for (const BenchmarkEntry& e : entries) {
        nlohmann::ordered_json row;
        row["method"] = e.method;
        row["reason"] = to_string(e.result.reason);
        row["x_opt"] = detail::vector_to_json(e.result.x_opt);
        row["phi"] = e.result.phi;
        row["frequencies_hz"] =
            detail::vector_to_json(e.result.solution.frequencies_hz);
        row["rom_builds"] = e.result.rom_builds;
        row["full_solves"] = e.result.full_solves;
        methods.push_back(std::move(row));
    }
    for (const BenchmarkEntry& e : entries)
        j["meta"]["wall_seconds"][e.method] = e.wall_seconds;
    return j;
}

/// Benchmark table as CSV: method, reason, phi, rom_builds, full_solves,
/// wall_seconds, then x_1..x_p.
inline std::string benchmark_to_csv(const std::vector<BenchmarkEntry>& entries) {
    const Eigen::Index p =
        entries.empty() ? 0 : entries.front().result.x_opt.size();
    std::string csv = "method,reason,phi,rom_builds,full_solves,wall_seconds";
    for (Eigen::Index i = 1; i <= p; ++i) csv += ",x_" + std::to_string(i);
    csv += "\n";
    for (const BenchmarkEntry& e : entries) {
        csv += e.method;
        csv += std::string(",") + to_string(e.result.reason);
        csv += "," + detail::csv_number(e.result.phi);
        csv += "," + std::to_string(e.result.rom_builds);
        csv += "," + std::to_string(e.result.full_solves);
        csv += "," + detail::csv_number(e.wall_seconds);
        for (Eigen::Index i = 0; i < e.result.x_opt.size(); ++i)
            csv += "," + detail::csv_number(e.result.x_opt(i));
        csv += "\n";
    }
    return csv;
}

} // namespace modaltune
