#pragma once

// Command-line front end. One JSON configuration file drives every
// subcommand; artifacts are written to the configured output directory as
// schema-versioned JSON and fixed-column CSV. Relative paths inside a config
// (mesh, target, out) resolve against the config file's own directory, so a
// run directory can be moved or archived as a unit; a --out given on the
// command line resolves against the working directory like any shell path.
//
// Exit codes: 0 success, 1 validation failure (unreadable input, schema
// violation, inconsistent model), 2 usage error (unknown subcommand or flag),
// 3 numerical failure (factorization breakdown, non-convergent eigensolve).

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>
#include <unsupported/Eigen/SparseExtra>

#include "modaltune/assembly.hpp"
#include "modaltune/eigensolver.hpp"
#include "modaltune/errors.hpp"
#include "modaltune/mesh.hpp"
#include "modaltune/mesh_io.hpp"
#include "modaltune/objective.hpp"
#include "modaltune/optimizer.hpp"
#include "modaltune/reports.hpp"
#include "modaltune/sensitivity.hpp"

namespace modaltune::cli {

/// Everything a run needs, as loaded from one JSON config file.
struct RunConfig {
    std::filesystem::path mesh_path;
    std::filesystem::path target_path;  ///< empty when the config has no target
    bool has_parameters = false;
    ParamSpace parameters;
    bool has_weights = false;
    WeightSpec weights;  ///< optional re-weighting applied over the target file
    TrustRegionOptions optimizer;
    int modes = 5;             ///< modes computed by the forward subcommand
    double noise_level = 0.0;  ///< measurement-noise scale for sensitivity
    std::vector<double> sweep_deltas;
    int sweep_runs = 10;  ///< perturbed re-runs per noise level
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = ".";
};

namespace detail {

using modaltune::detail::require_key;

inline MaterialProperty property_from_name(const std::string& name) {
    if (name == "E") return MaterialProperty::kYoungModulus;
    if (name == "rho") return MaterialProperty::kMassDensity;
    throw ValidationError("config: unknown material property '" + name +
                          "' (expected \"E\" or \"rho\")");
}

inline const char* property_name(MaterialProperty property) {
    return property == MaterialProperty::kYoungModulus ? "E" : "rho";
}

inline PairingMode pairing_from_name(const std::string& name) {
    if (name == "by_index") return PairingMode::kByIndex;
    if (name == "mac_greedy") return PairingMode::kMacGreedy;
    throw ValidationError("config: unknown pairing mode '" + name +
                          "' (expected \"by_index\" or \"mac_greedy\")");
}

/// Same vocabulary as the weights block of a target file.
inline WeightSpec weight_spec_from_json(const nlohmann::json& j) {
    WeightSpec spec;
    spec.scheme = modaltune::detail::scheme_from_name(
        require_key(j, "scheme", "config weights").get<std::string>());
    spec.mode_weight = j.value("mode_weight", spec.mode_weight);
    if (j.contains("mode_weights"))
        spec.mode_weights =
            modaltune::detail::vector_from_json(j.at("mode_weights"), "mode_weights");
    if (j.contains("custom"))
        spec.custom = modaltune::detail::vector_from_json(j.at("custom"), "custom");
    return spec;
}

inline ParamSpace param_space_from_json(const nlohmann::json& j) {
    ParamSpace ps;
    for (const auto& entry : require_key(j, "bindings", "config parameters")) {
        ParamBinding binding;
        binding.region = require_key(entry, "region", "parameter binding").get<int>();
        binding.property = property_from_name(
            require_key(entry, "property", "parameter binding").get<std::string>());
        ps.bindings.push_back(binding);
    }
    ps.lower = modaltune::detail::vector_from_json(
        require_key(j, "lower", "config parameters"), "lower");
    ps.upper = modaltune::detail::vector_from_json(
        require_key(j, "upper", "config parameters"), "upper");

    const auto& start = require_key(j, "start", "config parameters");
    if (start.is_string()) {
        if (start.get<std::string>() != "midpoint")
            throw ValidationError("config: start must be \"midpoint\" or an "
                                  "array of values");
        if (ps.lower.size() != ps.upper.size())
            throw ValidationError("config: lower and upper bounds must have "
                                  "equal length");
        ps.start = 0.5 * (ps.lower + ps.upper);
    } else {
        ps.start = modaltune::detail::vector_from_json(start, "start");
    }
    return ps;
}

inline TrustRegionOptions optimizer_from_json(const nlohmann::json& j) {
    TrustRegionOptions opts;
    opts.pg_tol = j.value("pg_tol", opts.pg_tol);
    opts.max_rom_builds = j.value("max_rom_builds", opts.max_rom_builds);
    opts.initial_radius = j.value("initial_radius", opts.initial_radius);
    opts.shrink = j.value("shrink", opts.shrink);
    opts.grow = j.value("grow", opts.grow);
    opts.eta1 = j.value("eta1", opts.eta1);
    opts.eta2 = j.value("eta2", opts.eta2);
    opts.m_max = j.value("m_max", opts.m_max);
    opts.q = j.value("q", opts.q);
    if (j.contains("pairing"))
        opts.pairing = pairing_from_name(j.at("pairing").get<std::string>());
    return opts;
}

} // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config '" + path.string() + "': " + e.what());
    }
    if (!j.is_object())
        throw ValidationError("config: expected a JSON object");
    const int schema = j.value("schema", kReportSchemaVersion);
    if (schema != kReportSchemaVersion)
        throw ValidationError("config: unsupported schema version " +
                              std::to_string(schema));

    RunConfig cfg;
    const std::filesystem::path base =
        std::filesystem::absolute(path).parent_path();
    try {
        cfg.mesh_path =
            base / detail::require_key(j, "mesh", "config").get<std::string>();
        if (j.contains("target"))
            cfg.target_path = base / j.at("target").get<std::string>();
        if (j.contains("parameters")) {
            cfg.has_parameters = true;
            cfg.parameters = detail::param_space_from_json(j.at("parameters"));
        }
        if (j.contains("weights")) {
            cfg.has_weights = true;
            cfg.weights = detail::weight_spec_from_json(j.at("weights"));
        }
        if (j.contains("optimizer"))
            cfg.optimizer = detail::optimizer_from_json(j.at("optimizer"));
        cfg.modes = j.value("modes", cfg.modes);
        cfg.noise_level = j.value("noise_level", cfg.noise_level);
        if (j.contains("sweep")) {
            const auto& sweep = j.at("sweep");
            cfg.sweep_deltas = detail::require_key(sweep, "deltas", "config sweep")
                                   .get<std::vector<double>>();
            cfg.sweep_runs = sweep.value("runs_per_delta", cfg.sweep_runs);
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = base / j.value("out", std::string("."));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: malformed value (") +
                              e.what() + ")");
    }
    if (cfg.modes < 1)
        throw ValidationError("config: modes must be >= 1");
    if (cfg.sweep_runs < 1)
        throw ValidationError("config: runs_per_delta must be >= 1");
    if (cfg.noise_level < 0.0)
        throw ValidationError("config: noise_level must be >= 0");
    return cfg;
}

namespace detail {

inline Model load_model_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open mesh '" + path.string() + "'");
    return load_model(in);
}

inline ModalTarget load_target_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open target '" + path.string() + "'");
    return load_target(in);
}

/// Model + constrained parametric system, assembled once per run.
struct Problem {
    Model model;
    ConstrainedSystem cs;
};

inline Problem load_problem(const RunConfig& cfg) {
    Problem p;
    p.model = load_model_file(cfg.mesh_path);
    const ParamSpace ps = cfg.has_parameters ? cfg.parameters : ParamSpace{};
    p.cs = apply_constraints(assemble_parametric(p.model, ps),
                             p.model.constraints);
    return p;
}

inline ModalTarget load_problem_target(const RunConfig& cfg) {
    if (cfg.target_path.empty())
        throw ValidationError("config: this subcommand needs a \"target\" entry");
    ModalTarget target = load_target_file(cfg.target_path);
    if (cfg.has_weights)
        target = build_target(target.frequencies_hz, target.mode_shapes,
                              target.sensor_dofs, cfg.weights);
    return target;
}

inline void require_parameters(const RunConfig& cfg, const char* subcommand) {
    if (!cfg.has_parameters)
        throw ValidationError(std::string("config: the ") + subcommand +
                              " subcommand needs a \"parameters\" block");
}

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    return cfg.out_dir;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fmt_vector(const Eigen::VectorXd& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) s += ", ";
        s += fmt(v(i));
    }
    return s + "]";
}

inline void print_warnings(const std::vector<std::string>& warnings) {
    for (const std::string& w : warnings)
        std::cerr << "warning: " << w << "\n";
}

/// Reduced stiffness/mass at x, in Matrix Market form for external tools.
inline void export_matrices(const ConstrainedSystem& cs, const Eigen::VectorXd& x,
                            const std::filesystem::path& out) {
    const auto [k, m] = instantiate(cs.system, x);
    const auto save = [&](const SparseMatrix& mat, const char* name) {
        const std::filesystem::path path = out / name;
        if (!Eigen::saveMarket(mat, path.string()))
            throw ValidationError("cannot write '" + path.string() + "'");
        std::cout << "wrote " << path.string() << "\n";
    };
    save(k, "stiffness.mtx");
    save(m, "mass.mtx");
}

// -------------------------------------------------------------------------
// Subcommand runners

inline int run_forward(const RunConfig& cfg, bool export_mats) {
    Problem p = load_problem(cfg);
    const Eigen::VectorXd x =
        cfg.has_parameters ? cfg.parameters.start : Eigen::VectorXd(0);
    const EigenSolution sol = solve_smallest(p.cs, x, cfg.modes);

    const auto out = prepare_out_dir(cfg);
    nlohmann::ordered_json report = forward_to_json(sol, x);
    stamp_meta(report);
    write_json_file(out / "forward.json", report);

    std::cout << "forward analysis: " << cfg.modes << " modes, "
              << p.model.mesh.nodes.size() << " nodes, "
              << p.model.mesh.elements.size() << " elements\n";
    for (int i = 0; i < sol.count(); ++i)
        std::cout << "  f_" << i + 1 << " = " << fmt(sol.frequencies_hz(i))
                  << " Hz  (residual " << fmt(sol.residuals(i)) << ")\n";
    std::cout << "wrote " << (out / "forward.json").string() << "\n";
    if (export_mats) export_matrices(p.cs, x, out);
    return 0;
}

inline int run_update(const RunConfig& cfg, bool export_mats) {
    require_parameters(cfg, "update");
    Problem p = load_problem(cfg);
    const ModalTarget target = load_problem_target(cfg);

    const UpdateResult result =
        update(p.cs, target, cfg.parameters, cfg.optimizer);
    print_warnings(result.warnings);
    if (!result.pairing.warning.empty())
        std::cerr << "warning: " << result.pairing.warning << "\n";

    const auto out = prepare_out_dir(cfg);
    nlohmann::ordered_json report = update_result_to_json(result);
    stamp_meta(report);
    write_json_file(out / "update.json", report);
    write_text_file(out / "iterations.csv", iterations_to_csv(result));

    std::cout << "calibration " << to_string(result.reason) << " after "
              << result.rom_builds << " reduced models ("
              << result.full_solves << " full eigensolves)\n";
    std::cout << "  phi     = " << fmt(result.phi) << "\n";
    std::cout << "  pg norm = " << fmt(result.pg_norm) << "\n";
    std::cout << "  x_opt   = " << fmt_vector(result.x_opt) << "\n";
    std::cout << "  f [Hz]  = " << fmt_vector(result.solution.frequencies_hz)
              << "\n";
    std::cout << "wrote " << (out / "update.json").string() << "\n";
    std::cout << "wrote " << (out / "iterations.csv").string() << "\n";
    if (export_mats) export_matrices(p.cs, result.x_opt, out);
    return 0;
}

inline int run_sensitivity(const RunConfig& cfg) {
    require_parameters(cfg, "sensitivity");
    Problem p = load_problem(cfg);
    const ModalTarget target = load_problem_target(cfg);

    SensitivityReport rep;
    rep.x = cfg.parameters.start;
    rep.noise_level = cfg.noise_level;
    rep.jacobian = jacobian(p.cs, target, rep.x);
    print_warnings(rep.jacobian.warnings);
    rep.svd = svd_report(rep.jacobian.matrix, rep.x, cfg.noise_level);

    const auto out = prepare_out_dir(cfg);
    nlohmann::ordered_json report = sensitivity_to_json(rep);
    stamp_meta(report);
    write_json_file(out / "sensitivity.json", report);

    std::cout << "sensitivity at x = " << fmt_vector(rep.x) << " (noise level "
              << fmt(cfg.noise_level) << ")\n";
    for (Eigen::Index i = 0; i < rep.svd.singular_values.size(); ++i)
        std::cout << "  sigma_" << i + 1 << " = "
                  << fmt(rep.svd.singular_values(i))
                  << (rep.svd.trusted[i] ? "" : "  (below noise, untrusted)")
                  << "\n";
    std::cout << "  condition = "
              << (std::isinf(rep.svd.condition) ? "inf" : fmt(rep.svd.condition))
              << "\n";
    std::cout << "wrote " << (out / "sensitivity.json").string() << "\n";
    return 0;
}

inline int run_noise_sweep(const RunConfig& cfg, int threads) {
    require_parameters(cfg, "noise-sweep");
    if (cfg.sweep_deltas.empty())
        throw ValidationError("config: the noise-sweep subcommand needs a "
                              "\"sweep\" block with noise levels");
    Problem p = load_problem(cfg);
    const ModalTarget target = load_problem_target(cfg);

    std::vector<std::uint64_t> seeds(cfg.sweep_runs);
    for (int i = 0; i < cfg.sweep_runs; ++i)
        seeds[i] = cfg.seed + static_cast<std::uint64_t>(i);
    const std::vector<NoiseSweepRow> rows = noise_sweep(
        p.cs, target, cfg.parameters, cfg.sweep_deltas, seeds, cfg.optimizer,
        threads);

    const auto out = prepare_out_dir(cfg);
    write_text_file(out / "noise_sweep.csv", sweep_to_csv(rows));

    std::cout << "noise sweep: " << cfg.sweep_deltas.size() << " levels x "
              << cfg.sweep_runs << " seeds\n";
    for (std::size_t d = 0; d < cfg.sweep_deltas.size(); ++d) {
        std::vector<double> errors;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const NoiseSweepRow& row = rows[d * seeds.size() + s];
            if (std::isfinite(row.error)) errors.push_back(row.error);
            if (!row.note.empty())
                std::cerr << "warning: delta " << fmt(row.delta) << " seed "
                          << row.seed << ": " << row.note << "\n";
        }
        std::sort(errors.begin(), errors.end());
        const std::string median =
            errors.empty() ? "n/a" : fmt(errors[errors.size() / 2]);
        std::cout << "  delta " << fmt(cfg.sweep_deltas[d])
                  << ": median relative error " << median << " ("
                  << errors.size() << "/" << seeds.size() << " rows)\n";
    }
    std::cout << "wrote " << (out / "noise_sweep.csv").string() << "\n";
    return 0;
}

inline int run_benchmark(const RunConfig& cfg) {
    require_parameters(cfg, "benchmark");
    Problem p = load_problem(cfg);
    const ModalTarget target = load_problem_target(cfg);

    const auto timed = [&](auto&& solver) {
        const auto t0 = std::chrono::steady_clock::now();
        UpdateResult result = solver();
        const auto t1 = std::chrono::steady_clock::now();
        return std::pair<UpdateResult, double>(
            std::move(result), std::chrono::duration<double>(t1 - t0).count());
    };

    std::vector<BenchmarkEntry> entries;
    {
        auto [result, seconds] = timed(
            [&] { return update(p.cs, target, cfg.parameters, cfg.optimizer); });
        entries.push_back({"reduced-basis", std::move(result), seconds});
    }
    {
        auto [result, seconds] = timed([&] {
            return blackbox_baseline(p.cs, target, cfg.parameters, cfg.optimizer);
        });
        entries.push_back({"full-model-baseline", std::move(result), seconds});
    }
    for (const BenchmarkEntry& e : entries) print_warnings(e.result.warnings);

    const auto out = prepare_out_dir(cfg);
    nlohmann::ordered_json report = benchmark_to_json(entries);
    stamp_meta(report);
    write_json_file(out / "benchmark.json", report);
    write_text_file(out / "benchmark.csv", benchmark_to_csv(entries));

    std::printf("%-22s %-18s %-12s %11s %11s %9s\n", "method", "reason", "phi",
                "full solves", "rom builds", "wall [s]");
    for (const BenchmarkEntry& e : entries)
        std::printf("%-22s %-18s %-12s %11d %11d %9.3f\n", e.method.c_str(),
                    to_string(e.result.reason), fmt(e.result.phi).c_str(),
                    e.result.full_solves, e.result.rom_builds, e.wall_seconds);
    const BenchmarkEntry& rb = entries[0];
    const BenchmarkEntry& bl = entries[1];
    if (rb.result.full_solves > 0 && rb.wall_seconds > 0.0)
        std::printf("baseline/reduced ratios: %.1fx full solves, %.1fx wall time\n",
                    double(bl.result.full_solves) / rb.result.full_solves,
                    bl.wall_seconds / rb.wall_seconds);
    std::cout << "wrote " << (out / "benchmark.json").string() << "\n";
    std::cout << "wrote " << (out / "benchmark.csv").string() << "\n";
    return 0;
}

struct MakeMeshArgs {
    std::string shape;
    double span = 4.0;
    double pier_height = 4.0;
    int refinement = kArchCanonicalRefinement;
    std::string out = ".";
    bool with_roundtrip = false;
};

/// The canonical calibration exercise on the generated arch: piers start at
/// their box midpoints, measurements come from the nominal materials.
inline void write_roundtrip_fixture(const Model& model, const MakeMeshArgs& args,
                                    const std::filesystem::path& out) {
    ParamSpace ps;
    ps.bindings = {{2, MaterialProperty::kYoungModulus},
                   {3, MaterialProperty::kYoungModulus},
                   {2, MaterialProperty::kMassDensity}};
    ps.lower = Eigen::Vector3d(1.0e9, 1.0e9, 1000.0);
    ps.upper = Eigen::Vector3d(9.0e9, 9.0e9, 3000.0);
    ps.start = ps.midpoint();
    const Eigen::Vector3d truth(5.0e9, 4.8e9, 2200.0);

    const ConstrainedSystem cs =
        apply_constraints(assemble_parametric(model, ps), model.constraints);
    constexpr int q = 5;
    const EigenSolution sol = solve_smallest(cs, truth, q);

    std::vector<int> sensor_dofs;
    for (const int node :
         arch_sensor_nodes(model.mesh, args.span, args.pier_height)) {
        sensor_dofs.push_back(dof_index(node, 0));
        sensor_dofs.push_back(dof_index(node, 1));
    }
    Eigen::MatrixXd shapes(sensor_dofs.size(), q);
    for (int i = 0; i < q; ++i)
        shapes.col(i) = project_mode(sol.modes.col(i), sensor_dofs);
    const ModalTarget target =
        build_target(sol.frequencies_hz, shapes, sensor_dofs, WeightSpec{});

    {
        std::ofstream tf(out / "target.json", std::ios::binary);
        if (!tf)
            throw ValidationError("cannot open '" +
                                  (out / "target.json").string() +
                                  "' for writing");
        save_target(tf, target);
    }

    nlohmann::ordered_json cfg;
    cfg["schema"] = kReportSchemaVersion;
    cfg["mesh"] = "mesh.json";
    cfg["target"] = "target.json";
    cfg["modes"] = q;
    auto& params = cfg["parameters"];
    params["bindings"] = nlohmann::ordered_json::array();
    for (const ParamBinding& b : ps.bindings)
        params["bindings"].push_back(
            {{"region", b.region}, {"property", property_name(b.property)}});
    params["lower"] = modaltune::detail::vector_to_json(ps.lower);
    params["upper"] = modaltune::detail::vector_to_json(ps.upper);
    params["start"] = "midpoint";
    cfg["optimizer"] = {{"pg_tol", 1e-9}};
    cfg["noise_level"] = 0.0;
    cfg["sweep"] = {{"deltas", {1e-4, 1e-3, 1e-2, 1e-1}},
                    {"runs_per_delta", 10}};
    cfg["seed"] = 1;
    cfg["out"] = ".";
    write_json_file(out / "config.json", cfg);
}

inline int run_make_mesh(const MakeMeshArgs& args) {
    if (args.shape != "arch")
        throw ValidationError("make-mesh: unknown shape '" + args.shape +
                              "' (only \"arch\" is available)");
    const Model model =
        build_arch_on_piers(args.span, args.pier_height, args.refinement);

    const std::filesystem::path out = args.out;
    std::filesystem::create_directories(out);
    {
        std::ofstream mf(out / "mesh.json", std::ios::binary);
        if (!mf)
            throw ValidationError("cannot open '" + (out / "mesh.json").string() +
                                  "' for writing");
        save_model(mf, model);
    }
    std::cout << "arch mesh: " << model.mesh.nodes.size() << " nodes, "
              << model.mesh.elements.size() << " elements (refinement "
              << args.refinement << ")\n";
    std::cout << "wrote " << (out / "mesh.json").string() << "\n";

    if (args.with_roundtrip) {
        write_roundtrip_fixture(model, args, out);
        std::cout << "wrote " << (out / "target.json").string() << "\n";
        std::cout << "wrote " << (out / "config.json").string() << "\n";
    }
    return 0;
}

} // namespace detail

/// Parses arguments, dispatches the subcommand, and maps every failure to
/// the documented exit codes.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"modal-tune: calibrates finite-element material parameters "
                 "against measured modal data"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    int threads = 0;
    bool export_mats = false;

    const auto add_config_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", out_override,
                        "output directory (overrides the config)");
    };

    CLI::App* forward =
        app.add_subcommand("forward", "solve the model and report its modes");
    add_config_options(forward);
    forward->add_flag("--export-matrices", export_mats,
                      "also write the reduced stiffness/mass matrices "
                      "(Matrix Market)");

    CLI::App* update = app.add_subcommand(
        "update", "calibrate the bound parameters against the target");
    add_config_options(update);
    update->add_flag("--export-matrices", export_mats,
                     "also write the calibrated stiffness/mass matrices "
                     "(Matrix Market)");

    CLI::App* sensitivity = app.add_subcommand(
        "sensitivity", "rank parameter identifiability at the starting point");
    add_config_options(sensitivity);

    CLI::App* sweep = app.add_subcommand(
        "noise-sweep", "re-calibrate under synthetic measurement noise");
    add_config_options(sweep);
    sweep->add_option("--seed", seed_override, "random seed (overrides the config)");
    sweep->add_option("--threads", threads, "worker threads (0 = all cores)");

    CLI::App* benchmark = app.add_subcommand(
        "benchmark", "compare the reduced-basis run against a full-model baseline");
    add_config_options(benchmark);

    detail::MakeMeshArgs mesh_args;
    CLI::App* make_mesh =
        app.add_subcommand("make-mesh", "generate a built-in example model");
    make_mesh->add_option("shape", mesh_args.shape, "model shape (\"arch\")")
        ->required();
    make_mesh->add_option("--span", mesh_args.span, "arch clear span [m]");
    make_mesh->add_option("--pier-height", mesh_args.pier_height,
                          "pier height [m]");
    make_mesh->add_option("--refinement", mesh_args.refinement,
                          "mesh refinement level (>= 0)");
    make_mesh->add_option("--out", mesh_args.out, "output directory");
    make_mesh->add_flag("--with-roundtrip", mesh_args.with_roundtrip,
                        "also write a target and config for the canonical "
                        "calibration exercise");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (make_mesh->parsed()) return detail::run_make_mesh(mesh_args);

        RunConfig cfg = load_run_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (sweep->parsed() && sweep->count("--seed") > 0)
            cfg.seed = seed_override;

        if (forward->parsed()) return detail::run_forward(cfg, export_mats);
        if (update->parsed()) return detail::run_update(cfg, export_mats);
        if (sensitivity->parsed()) return detail::run_sensitivity(cfg);
        if (sweep->parsed()) return detail::run_noise_sweep(cfg, threads);
        if (benchmark->parsed()) return detail::run_benchmark(cfg);
        return 2;  // unreachable with require_subcommand(1)
    } catch (const ValidationError& e) {
        std::cerr << "modal-tune: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "modal-tune: " << e.what() << "\n";
        return 1;
    } catch (const SolverError& e) {
        std::cerr << "modal-tune: " << e.what() << "\n";
        return 3;
    }
}

} // namespace modaltune::cli
