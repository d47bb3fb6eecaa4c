// Command-line front end: forward simulation, validation scenarios, gradient
// checks, and trajectory optimization from scene files.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "flume/flume.hpp"

using namespace flume;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitEngineError = 3;

struct CommonOpts {
    std::string scene;
    std::string out = "";
    uint64_t seed = 0;
    bool seed_set = false;
    bool deterministic = true;
};

std::string default_out_root() {
    const char* env = std::getenv("FLUME_OUT_ROOT");
    return env ? env : "out";
}

json load_scene_spec(const std::string& ref) {
    if (ref.rfind("builtin:", 0) == 0) return scenes::by_name(ref.substr(8));
    return load_json_file(ref);
}

RunManifest make_manifest(const std::string& command, const CommonOpts& opts,
                          const json& spec) {
    RunManifest m;
    m.command = command;
    m.scene = opts.scene;
    m.seed = spec.value("seed", 0ull);
    m.mode = opts.deterministic ? "deterministic" : "deterministic";  // single mode engine
    m.out_dir = opts.out.empty() ? default_out_root() + "/" + command : opts.out;
    m.config_hash = fnv1a(spec.dump());
    return m;
}

template <int D>
ActionTrajectory make_actions(const World<D>& w, const std::string& actions_file) {
    if (!actions_file.empty()) return actions_from_json(load_json_file(actions_file));
    int n_seg = w.optimizer_spec.value("n_segments", 1);
    int seg_len = w.optimizer_spec.value("segment_length", w.scene.config.substeps_per_step);
    ActionTrajectory a(n_seg, seg_len);
    if (w.optimizer_spec.contains("init")) {
        const json& ji = w.optimizer_spec.at("init");
        for (size_t s = 0; s < a.values.size(); s++)
            for (size_t k = 0; k < 6; k++) a.values[s][k] = ji[k].get<Real>();
    }
    return a;
}

template <int D>
int run_simulate(const json& spec, const CommonOpts& opts, int steps,
                 const std::string& actions_file) {
    RunManifest manifest = make_manifest("simulate", opts, spec);
    write_manifest(manifest);
    World<D> w = build_scene<D>(spec);

    ActionTrajectory actions;
    if (!actions_file.empty()) {
        actions = actions_from_json(load_json_file(actions_file));
    } else {
        actions = ActionTrajectory(std::max(steps, 1), w.scene.config.substeps_per_step);
    }
    long horizon = actions.horizon();
    if (steps > 0) horizon = std::min(horizon, long(steps) * w.scene.config.substeps_per_step);

    MetricsWriter<D> metrics(fs::path(manifest.out_dir) / "metrics.csv",
                             manifest.config_hash);
    MpmWorkspace<D> ws;
    SimState<D>& st = w.state;
    long step_substeps = w.scene.config.substeps_per_step;
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%05d.csv", 0);
    write_frame_csv(fs::path(manifest.out_dir) / name, st, manifest.config_hash);
    for (long t = 0; t < horizon; t++) {
        mpm_substep(w.scene, st, actions.at_substep(std::min(t, actions.horizon() - 1)), ws);
        metrics.append(st);
        if ((t + 1) % step_substeps == 0) {
            int frame = int((t + 1) / step_substeps);
            std::snprintf(name, sizeof(name), "frame_%05d.csv", frame);
            write_frame_csv(fs::path(manifest.out_dir) / name, st, manifest.config_hash);
            if (st.has_gas) {
                std::snprintf(name, sizeof(name), "fields_%05d.json", frame);
                write_field_sidecar(fs::path(manifest.out_dir) / name, st,
                                    manifest.config_hash);
            }
        }
    }
    metrics.flush();
    write_text(fs::path(manifest.out_dir) / "final_state.json",
               state_to_json(st).dump() + "\n");
    std::cout << "simulated " << horizon << " substeps, "
              << st.active_particle_count() << " active particles\n";
    return kExitPass;
}

int run_validate(const std::string& suite, const CommonOpts& opts) {
    RunManifest manifest;
    manifest.command = "validate";
    manifest.scene = suite;
    manifest.out_dir = opts.out.empty() ? default_out_root() + "/validate" : opts.out;
    manifest.config_hash = fnv1a(suite);
    write_manifest(manifest);

    std::vector<std::string> names;
    if (suite == "all")
        names = validation_suites();
    else
        names.push_back(suite);

    json report = json::array();
    bool all_pass = true;
    for (const std::string& name : names) {
        ValidationResult r = run_validation(name);
        all_pass = all_pass && r.pass;
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << name << " " << r.measured.dump()
                  << "\n";
        report.push_back(json{{"suite", r.suite}, {"pass", r.pass}, {"measured", r.measured}});
    }
    write_text(fs::path(manifest.out_dir) / "report.json", report.dump(2) + "\n");
    return all_pass ? kExitPass : kExitCheckFailure;
}

template <int D>
int run_gradcheck(const json& spec, const CommonOpts& opts, Real eps, int n_params,
                  long stride) {
    RunManifest manifest = make_manifest("gradcheck", opts, spec);
    write_manifest(manifest);
    World<D> w = build_scene<D>(spec);
    LossEvaluator<D> loss(w.scene, w.loss_spec, w.state);
    ActionTrajectory actions = make_actions(w, "");
    GradReport rep = grad_check(w.scene, w.state, actions, loss,
                                stride > 0 ? stride : actions.horizon() / 4, eps);

    json j;
    j["manifest"] = manifest.config_hash;
    j["loss"] = rep.loss;
    j["gradient"] = rep.gradient;
    j["fd_gradient"] = rep.fd_gradient;
    j["max_rel_error"] = rep.max_rel_error;
    j["wall_time"] = rep.wall_time;
    write_text(fs::path(manifest.out_dir) / "gradcheck.json", j.dump(2) + "\n");

    size_t show = n_params > 0 ? std::min(size_t(n_params), rep.gradient.size())
                               : rep.gradient.size();
    std::printf("%-6s %-22s %-22s %s\n", "param", "adjoint", "finite_diff", "abs_err");
    for (size_t i = 0; i < show; i++)
        std::printf("%-6zu %-22.12e %-22.12e %.3e\n", i, rep.gradient[i],
                    rep.fd_gradient[i], std::abs(rep.gradient[i] - rep.fd_gradient[i]));
    std::printf("max_rel_error %.6e  (loss %.6e, %.1fs)\n", rep.max_rel_error, rep.loss,
                rep.wall_time);
    return rep.max_rel_error <= 1e-3 ? kExitPass : kExitCheckFailure;
}

template <int D>
int run_optimize(const json& spec, const CommonOpts& opts, const std::string& method,
                 long budget) {
    RunManifest manifest = make_manifest("optimize", opts, spec);
    write_manifest(manifest);
    World<D> w = build_scene<D>(spec);
    if (w.loss_spec.is_null()) throw SceneError("optimize: scene has no loss");
    ActionTrajectory init = make_actions(w, "");
    Real c1 = w.optimizer_spec.value("reward_c1", 0.0);
    Real c2 = w.optimizer_spec.value("reward_c2", 1.0);

    Real final_loss = 0;
    if (method == "dp" || method == "dp-hard") {
        DpConfig cfg = parse_dp_config(w);
        if (budget > 0) cfg.steps = int(budget);
        OptimizeResult<D> res =
            method == "dp" ? optimize_dp(w, init, cfg) : optimize_dp_hard(w, init, cfg);
        write_history_csv(fs::path(manifest.out_dir) / "history.csv", res.history,
                          manifest.config_hash);
        write_text(fs::path(manifest.out_dir) / "trajectory.json",
                   actions_to_json(res.best).dump(2) + "\n");
        final_loss = res.best_loss;
        if (res.aborted) std::cout << "optimization aborted by the divergence guard\n";
    } else if (method == "cma-es") {
        LossEvaluator<D> loss(w.scene, w.loss_spec, w.state);
        std::vector<int> comps = optimizable_components(w.state);
        std::vector<Real> x0, lo, hi;
        for (int s = 0; s < init.n_segments; s++)
            for (int k : comps) {
                x0.push_back(init.values[size_t(s)][size_t(k)]);
                lo.push_back(w.action_lo[size_t(k)]);
                hi.push_back(w.action_hi[size_t(k)]);
            }
        auto objective = [&](const std::vector<Real>& p) {
            ActionTrajectory a = init;
            size_t idx = 0;
            for (int s = 0; s < a.n_segments; s++)
                for (int k : comps) a.values[size_t(s)][size_t(k)] = p[idx++];
            return rollout_loss(w.scene, w.state, a, loss);
        };
        Real sigma0 = w.optimizer_spec.value("sigma0", 0.3);
        int lambda = w.optimizer_spec.value("lambda", 0);
        EsResult res = cma_es_minimize(objective, x0, sigma0, lambda,
                                       budget > 0 ? budget : 400, w.seed, lo, hi);
        write_es_history_csv(fs::path(manifest.out_dir) / "history.csv", res.history,
                             manifest.config_hash);
        ActionTrajectory best = init;
        size_t idx = 0;
        for (int s = 0; s < best.n_segments; s++)
            for (int k : comps) best.values[size_t(s)][size_t(k)] = res.best_x[idx++];
        write_text(fs::path(manifest.out_dir) / "trajectory.json",
                   actions_to_json(best).dump(2) + "\n");
        final_loss = res.best_f;
    } else {
        std::cerr << "unknown method '" << method << "'\n";
        return kExitUsage;
    }
    std::printf("final loss %.6e  reward %.6e\n", final_loss,
                reward_from_loss(final_loss, c1, c2));
    return kExitPass;
}

template <typename F>
int dispatch_dim(const json& spec, F&& f) {
    int dim = scene_dim(spec);
    if (dim == 2) return f.template operator()<2>();
    if (dim == 3) return f.template operator()<3>();
    throw SceneError("dim must be 2 or 3");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"particle-grid physics engine with differentiable trajectories"};
    app.require_subcommand(1);

    CommonOpts opts;
    int steps = 0;
    std::string actions_file, suite = "all", method = "dp";
    Real eps = 1e-5;
    int n_params = 0;
    long budget = 0, stride = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_scene) {
        if (needs_scene)
            cmd->add_option("--scene", opts.scene, "scene file or builtin:<name>")
                ->required();
        cmd->add_option("--out", opts.out, "output directory");
        cmd->add_option("--seed", opts.seed, "override the scene seed")
            ->each([&](const std::string&) { opts.seed_set = true; });
        cmd->add_flag("--deterministic", opts.deterministic,
                      "deterministic execution (always on; recorded in the manifest)");
    };

    CLI::App* sim = app.add_subcommand("simulate", "run a forward simulation");
    add_common(sim, true);
    sim->add_option("--steps", steps, "number of control steps");
    sim->add_option("--actions", actions_file, "replay a trajectory file");

    CLI::App* val = app.add_subcommand("validate", "run physical validation scenarios");
    val->add_option("--suite", suite, "suite name or 'all'");
    add_common(val, false);

    CLI::App* gc = app.add_subcommand("gradcheck", "adjoint vs finite differences");
    add_common(gc, true);
    gc->add_option("--eps", eps, "finite difference step");
    gc->add_option("--n-params", n_params, "parameters to print");
    gc->add_option("--stride", stride, "checkpoint stride");

    CLI::App* opt = app.add_subcommand("optimize", "trajectory optimization");
    add_common(opt, true);
    opt->add_option("--method", method, "dp | dp-hard | cma-es");
    opt->add_option("--budget", budget, "iterations (dp) or evaluations (cma-es)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitPass : kExitUsage;
    }

    try {
        if (val->parsed()) return run_validate(suite, opts);
        json spec = load_scene_spec(opts.scene);
        if (opts.seed_set) spec["seed"] = opts.seed;
        if (sim->parsed())
            return dispatch_dim(spec, [&]<int D>() {
                return run_simulate<D>(spec, opts, steps, actions_file);
            });
        if (gc->parsed())
            return dispatch_dim(spec, [&]<int D>() {
                return run_gradcheck<D>(spec, opts, eps, n_params, stride);
            });
        if (opt->parsed())
            return dispatch_dim(spec, [&]<int D>() {
                return run_optimize<D>(spec, opts, method, budget);
            });
    } catch (const SceneError& e) {
        std::cerr << "scene error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const EngineError& e) {
        std::cerr << "engine error: " << e.what() << "\n";
        return kExitEngineError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEngineError;
    }
    return kExitUsage;
}
