#pragma once

#include "flume/grad.hpp"
#include "flume/rng.hpp"

namespace flume {

// ---------------------------------------------------------------------------
// Temporally expanding optimization window
// ---------------------------------------------------------------------------

struct ExpandSchedule {
    long window = 0;          // active substeps
    long initial_window = 0;
    Real growth_factor = 2.0;
    int patience = 20;
    Real improvement_threshold = 1e-3;

    // bookkeeping
    std::vector<Real> losses_since_expand;

    void reset(long horizon, int segment_length) {
        if (initial_window <= 0) initial_window = std::max(horizon / 8, long(segment_length));
        // windows align to whole segments
        window = std::min(horizon, round_to_segments(initial_window, segment_length));
        losses_since_expand.clear();
    }

    static long round_to_segments(long w, int seg_len) {
        long segs = std::max((w + seg_len - 1) / seg_len, 1l);
        return segs * seg_len;
    }
};

// Grow the window when the recent best improvement stalls.
inline bool expand_window(ExpandSchedule& sched, long horizon, int segment_length,
                          Real latest_loss) {
    sched.losses_since_expand.push_back(latest_loss);
    if (sched.window >= horizon) {
        sched.window = horizon;
        return false;
    }
    if (long(sched.losses_since_expand.size()) <= sched.patience) return false;
    size_t n = sched.losses_since_expand.size();
    Real before = sched.losses_since_expand[n - 1 - size_t(sched.patience)];
    Real best_recent = before;
    for (size_t i = n - size_t(sched.patience); i < n; i++)
        best_recent = std::min(best_recent, sched.losses_since_expand[i]);
    Real improvement = (before - best_recent) / std::max(std::abs(before), Real(1e-12));
    if (improvement >= sched.improvement_threshold) return false;
    long grown = long(std::ceil(Real(sched.window) * sched.growth_factor));
    sched.window =
        std::min(horizon, ExpandSchedule::round_to_segments(grown, segment_length));
    sched.losses_since_expand.clear();
    return true;
}

// ---------------------------------------------------------------------------
// Gradient-based trajectory optimization
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Real> m, v;
    long t = 0;
    Real beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void resize(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
    Real step(size_t i, Real g, Real lr) {
        m[i] = beta1 * m[i] + (1 - beta1) * g;
        v[i] = beta2 * v[i] + (1 - beta2) * g * g;
        Real mh = m[i] / (1 - std::pow(beta1, Real(t)));
        Real vh = v[i] / (1 - std::pow(beta2, Real(t)));
        return -lr * mh / (std::sqrt(vh) + eps);
    }
};

struct IterationRow {
    int iteration = 0;
    long window = 0;
    Real loss = 0;       // full-horizon loss of the iterate
    Real window_loss = 0;
    Real grad_norm = 0;
    Real wall_time = 0;
};

struct DpConfig {
    int steps = 100;
    Real step_size = 0.1;
    long stride = 0;  // checkpoint stride; 0 = horizon/8
    ExpandSchedule schedule;
    bool expanding = true;
    Real attraction_weight = 0;
    Real attraction_radius = 0;  // world units; 0 = 3 grid cells
    Real attraction_tau = 0;     // 0 = adaptive
    int attraction_body = -1;
    Real divergence_factor = 10;
    int divergence_patience = 10;
    Real stop_loss = 0;  // > 0: stop once the best full loss reaches this
};

template <int D>
inline DpConfig parse_dp_config(const World<D>& world) {
    DpConfig c;
    const json& j = world.optimizer_spec;
    c.steps = j.value("steps", 100);
    c.step_size = j.value("step_size", 0.1);
    c.stride = j.value("stride", 0l);
    if (j.contains("expand")) {
        const json& je = j.at("expand");
        c.schedule.initial_window = je.value("initial_window", 0l);
        c.schedule.growth_factor = je.value("growth_factor", 2.0);
        c.schedule.patience = je.value("patience", 20);
        c.schedule.improvement_threshold = je.value("improvement_threshold", 1e-3);
    }
    if (j.contains("attraction")) {
        const json& ja = j.at("attraction");
        c.attraction_weight = ja.value("weight", 0.0);
        c.attraction_radius =
            ja.value("radius_cells", 3.0) * world.scene.config.dx();
        c.attraction_tau = ja.value("tau", 0.0);
        c.attraction_body = ja.value("body", -1);
    }
    return c;
}

template <int D>
struct OptimizeResult {
    ActionTrajectory best;
    Real best_loss = std::numeric_limits<Real>::infinity();
    std::vector<IterationRow> history;
    bool aborted = false;
};

template <int D>
inline void project_bounds(ActionTrajectory& a, const std::array<Real, 6>& lo,
                           const std::array<Real, 6>& hi) {
    for (auto& v : a.values)
        for (size_t k = 0; k < 6; k++) v[k] = clamp(v[k], lo[k], hi[k]);
}

// Gradient descent over the action trajectory with the soft-contact engine,
// the expanding optimization window, and the attraction term. `hard` switches
// to the ablated variant: full window from the start, no attraction, step
// contact blending.
template <int D>
inline OptimizeResult<D> optimize_dp(const World<D>& world, ActionTrajectory init,
                                     DpConfig cfg, bool hard = false) {
    auto t_start = std::chrono::steady_clock::now();
    World<D> w = world;  // engine mode may differ from the source scene
    w.scene.config.hard_contact = hard;

    LossEvaluator<D> loss(w.scene, w.loss_spec, w.state);
    if (!hard && cfg.attraction_weight > 0) {
        Real radius =
            cfg.attraction_radius > 0 ? cfg.attraction_radius : 3 * w.scene.config.dx();
        loss.enable_attraction(cfg.attraction_body, cfg.attraction_weight, radius,
                               cfg.attraction_tau);
    }

    long horizon = init.horizon();
    long stride = cfg.stride > 0 ? cfg.stride : std::max(horizon / 8, 1l);
    cfg.schedule.reset(horizon, init.segment_length);
    if (!cfg.expanding || hard) cfg.schedule.window = horizon;

    std::vector<int> comps = optimizable_components(w.state);
    AdamState adam;
    adam.resize(size_t(init.n_segments) * comps.size());
    adam.t = 0;

    OptimizeResult<D> res;
    res.best = init;
    ActionTrajectory cur = init;
    int diverged_run = 0;
    Real initial_loss = std::numeric_limits<Real>::infinity();

    for (int it = 0; it < cfg.steps; it++) {
        TrajectoryGrad<D> tg;
        tg = grad_trajectory(w.scene, w.state, cur, loss, stride, cfg.schedule.window);

        // attraction references the previous iterate's per-particle losses;
        // refresh from the final state of this rollout for the next iterate
        if (!hard && cfg.attraction_weight > 0) {
            SimState<D> final_state;
            rollout_loss(w.scene, w.state, cur, loss, 0, nullptr, &final_state);
            loss.refresh_attraction(final_state);
        }

        Real gn = 0;
        for (const Action6& g : tg.action_grad)
            for (Real v : g) gn += v * v;
        gn = std::sqrt(gn);

        IterationRow row;
        row.iteration = it;
        row.window = cfg.schedule.window;
        row.loss = tg.full_loss;
        row.window_loss = tg.loss;
        row.grad_norm = gn;
        row.wall_time =
            std::chrono::duration<Real>(std::chrono::steady_clock::now() - t_start).count();
        res.history.push_back(row);

        if (tg.full_loss < res.best_loss) {
            res.best_loss = tg.full_loss;
            res.best = cur;
        }
        if (it == 0) initial_loss = tg.full_loss;
        if (cfg.stop_loss > 0 && res.best_loss <= cfg.stop_loss) break;
        if (tg.full_loss > cfg.divergence_factor * initial_loss) {
            if (++diverged_run >= cfg.divergence_patience) {
                res.aborted = true;
                break;
            }
        } else {
            diverged_run = 0;
        }

        // adaptive-moment step on segments inside the window only
        int active_segments = int(cfg.schedule.window / cur.segment_length);
        adam.t++;
        for (int s = 0; s < active_segments; s++)
            for (size_t ci = 0; ci < comps.size(); ci++) {
                size_t flat = size_t(s) * comps.size() + ci;
                Real g = tg.action_grad[size_t(s)][size_t(comps[ci])];
                cur.values[size_t(s)][size_t(comps[ci])] +=
                    adam.step(flat, g, cfg.step_size);
            }
        // later segments hold the last active value
        for (int s = active_segments; s < cur.n_segments; s++)
            cur.values[size_t(s)] = cur.values[size_t(active_segments - 1)];
        project_bounds<D>(cur, w.action_lo, w.action_hi);

        if (!hard && cfg.expanding)
            expand_window(cfg.schedule, horizon, cur.segment_length, tg.loss);
    }

    // final evaluation so the best-so-far includes the last iterate
    Real final_loss = rollout_loss(w.scene, w.state, cur, loss);
    if (final_loss < res.best_loss) {
        res.best_loss = final_loss;
        res.best = cur;
    }
    return res;
}

template <int D>
inline OptimizeResult<D> optimize_dp_hard(const World<D>& world, ActionTrajectory init,
                                          DpConfig cfg) {
    return optimize_dp(world, std::move(init), cfg, /*hard=*/true);
}

// ---------------------------------------------------------------------------
// CMA-ES
// ---------------------------------------------------------------------------

struct EsState {
    int n = 0;
    int lambda = 0;
    Real sigma = 0.3;
    std::vector<Real> mean;
    std::vector<std::vector<Real>> cov;   // symmetric positive definite
    std::vector<Real> path_sigma, path_c;
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline void sym_eigen(std::vector<std::vector<Real>> a, std::vector<Real>& eval,
                      std::vector<std::vector<Real>>& evec) {
    int n = int(a.size());
    evec.assign(size_t(n), std::vector<Real>(size_t(n), 0.0));
    for (int i = 0; i < n; i++) evec[size_t(i)][size_t(i)] = 1;
    for (int sweep = 0; sweep < 60; sweep++) {
        Real off = 0;
        for (int p = 0; p < n - 1; p++)
            for (int q = p + 1; q < n; q++) off = std::max(off, std::abs(a[size_t(p)][size_t(q)]));
        if (off < 1e-14) break;
        for (int p = 0; p < n - 1; p++) {
            for (int q = p + 1; q < n; q++) {
                Real apq = a[size_t(p)][size_t(q)];
                if (std::abs(apq) < 1e-300) continue;
                Real theta = (a[size_t(q)][size_t(q)] - a[size_t(p)][size_t(p)]) / (2 * apq);
                Real t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1 + theta * theta));
                Real c = 1 / std::sqrt(1 + t * t);
                Real s = c * t;
                for (int k = 0; k < n; k++) {
                    Real akp = a[size_t(k)][size_t(p)], akq = a[size_t(k)][size_t(q)];
                    a[size_t(k)][size_t(p)] = c * akp - s * akq;
                    a[size_t(k)][size_t(q)] = s * akp + c * akq;
                }
                for (int k = 0; k < n; k++) {
                    Real apk = a[size_t(p)][size_t(k)], aqk = a[size_t(q)][size_t(k)];
                    a[size_t(p)][size_t(k)] = c * apk - s * aqk;
                    a[size_t(q)][size_t(k)] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; k++) {
                    Real vkp = evec[size_t(k)][size_t(p)], vkq = evec[size_t(k)][size_t(q)];
                    evec[size_t(k)][size_t(p)] = c * vkp - s * vkq;
                    evec[size_t(k)][size_t(q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    eval.assign(size_t(n), 0.0);
    for (int i = 0; i < n; i++) eval[size_t(i)] = a[size_t(i)][size_t(i)];
}

}  // namespace detail

struct EsRow {
    int generation = 0;
    int evaluations = 0;
    Real best = 0;
    Real sigma = 0;
};

struct EsResult {
    std::vector<Real> best_x;
    Real best_f = std::numeric_limits<Real>::infinity();
    std::vector<EsRow> history;
};

// (mu/mu_w, lambda) CMA-ES with rank-based updates; non-finite samples rank
// worst, an all-non-finite generation aborts the run.
inline EsResult cma_es_minimize(const std::function<Real(const std::vector<Real>&)>& f,
                                const std::vector<Real>& x0, Real sigma0, int lambda,
                                long budget, uint64_t seed,
                                const std::vector<Real>& lo = {},
                                const std::vector<Real>& hi = {}) {
    int n = int(x0.size());
    if (n == 0) throw EngineError("cma_es_minimize: empty parameter vector");
    if (sigma0 <= 0) throw EngineError("cma_es_minimize: sigma0 must be positive");
    if (lambda <= 0) lambda = 4 + int(std::floor(3 * std::log(Real(n))));
    lambda = std::max(lambda, 4);
    if (budget < lambda) throw EngineError("cma_es_minimize: budget below one generation");

    int mu = lambda / 2;
    std::vector<Real> weights(static_cast<size_t>(mu), 0.0);
    Real wsum = 0;
    for (int i = 0; i < mu; i++) {
        weights[size_t(i)] = std::log(Real(lambda + 1) / 2) - std::log(Real(i + 1));
        wsum += weights[size_t(i)];
    }
    Real mueff = 0;
    for (auto& w : weights) {
        w /= wsum;
        mueff += w * w;
    }
    mueff = 1 / mueff;
    Real cs = (mueff + 2) / (n + mueff + 5);
    Real ds = 1 + 2 * std::max(Real(0), std::sqrt((mueff - 1) / (n + 1)) - 1) + cs;
    Real cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n);
    Real c1 = 2 / ((n + 1.3) * (n + 1.3) + mueff);
    Real cmu = std::min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2.0) * (n + 2.0) + mueff));
    Real chi_n = std::sqrt(Real(n)) * (1 - 1.0 / (4 * n) + 1.0 / (21.0 * n * n));

    EsState st;
    st.n = n;
    st.lambda = lambda;
    st.sigma = sigma0;
    st.mean = x0;
    st.cov.assign(size_t(n), std::vector<Real>(size_t(n), 0.0));
    for (int i = 0; i < n; i++) st.cov[size_t(i)][size_t(i)] = 1;
    st.path_sigma.assign(size_t(n), 0.0);
    st.path_c.assign(size_t(n), 0.0);

    Rng rng(seed);
    EsResult res;
    res.best_x = x0;
    long evals = 0;
    int gen = 0;

    auto clamp_x = [&](std::vector<Real>& x) {
        if (lo.empty()) return;
        for (size_t i = 0; i < x.size(); i++) x[i] = clamp(x[i], lo[i], hi[i]);
    };

    while (evals + lambda <= budget) {
        std::vector<Real> eval;
        std::vector<std::vector<Real>> bmat;
        detail::sym_eigen(st.cov, eval, bmat);
        for (auto& e : eval) e = std::sqrt(std::max(e, Real(1e-20)));

        std::vector<std::vector<Real>> xs(static_cast<size_t>(lambda)), ys(static_cast<size_t>(lambda));
        std::vector<Real> fs(static_cast<size_t>(lambda), 0.0);
        int finite_count = 0;
        for (int k = 0; k < lambda; k++) {
            std::vector<Real> z(static_cast<size_t>(n), 0.0);
            for (auto& v : z) v = rng.gaussian();
            std::vector<Real> y(static_cast<size_t>(n), 0.0);
            for (int i = 0; i < n; i++)
                for (int j = 0; j < n; j++)
                    y[size_t(i)] += bmat[size_t(i)][size_t(j)] * eval[size_t(j)] * z[size_t(j)];
            std::vector<Real> x(static_cast<size_t>(n), 0.0);
            for (int i = 0; i < n; i++) x[size_t(i)] = st.mean[size_t(i)] + st.sigma * y[size_t(i)];
            clamp_x(x);
            for (int i = 0; i < n; i++)
                y[size_t(i)] = (x[size_t(i)] - st.mean[size_t(i)]) / st.sigma;
            Real fv = f(x);
            evals++;
            if (std::isfinite(fv)) {
                finite_count++;
                if (fv < res.best_f) {
                    res.best_f = fv;
                    res.best_x = x;
                }
            } else {
                fv = std::numeric_limits<Real>::infinity();  // ranked worst
            }
            xs[size_t(k)] = std::move(x);
            ys[size_t(k)] = std::move(y);
            fs[size_t(k)] = fv;
        }
        if (finite_count == 0)
            throw EngineError("cma_es_minimize: every sample in a generation was non-finite");

        std::vector<int> order(static_cast<size_t>(lambda), 0);
        for (int i = 0; i < lambda; i++) order[size_t(i)] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return fs[size_t(a)] < fs[size_t(b)]; });

        std::vector<Real> y_w(static_cast<size_t>(n), 0.0);
        for (int i = 0; i < mu; i++)
            for (int j = 0; j < n; j++)
                y_w[size_t(j)] += weights[size_t(i)] * ys[size_t(order[size_t(i)])][size_t(j)];
        for (int j = 0; j < n; j++) st.mean[size_t(j)] += st.sigma * y_w[size_t(j)];

        // C^{-1/2} y_w through the eigenbasis
        std::vector<Real> cinv_y(static_cast<size_t>(n), 0.0);
        for (int i = 0; i < n; i++) {
            Real proj = 0;
            for (int j = 0; j < n; j++) proj += bmat[size_t(j)][size_t(i)] * y_w[size_t(j)];
            proj /= std::max(eval[size_t(i)], Real(1e-20));
            for (int j = 0; j < n; j++) cinv_y[size_t(j)] += bmat[size_t(j)][size_t(i)] * proj;
        }
        Real ps_norm = 0;
        for (int j = 0; j < n; j++) {
            st.path_sigma[size_t(j)] = (1 - cs) * st.path_sigma[size_t(j)] +
                                       std::sqrt(cs * (2 - cs) * mueff) * cinv_y[size_t(j)];
            ps_norm += st.path_sigma[size_t(j)] * st.path_sigma[size_t(j)];
        }
        ps_norm = std::sqrt(ps_norm);
        Real hsig = ps_norm / std::sqrt(1 - std::pow(1 - cs, 2.0 * (gen + 1))) / chi_n <
                            1.4 + 2.0 / (n + 1)
                        ? 1.0
                        : 0.0;
        for (int j = 0; j < n; j++)
            st.path_c[size_t(j)] = (1 - cc) * st.path_c[size_t(j)] +
                                   hsig * std::sqrt(cc * (2 - cc) * mueff) * y_w[size_t(j)];

        Real c1a = c1 * (1 - (1 - hsig * hsig) * cc * (2 - cc));
        for (int i = 0; i < n; i++) {
            for (int j = 0; j < n; j++) {
                Real rank1 = st.path_c[size_t(i)] * st.path_c[size_t(j)];
                Real rankmu = 0;
                for (int k = 0; k < mu; k++)
                    rankmu += weights[size_t(k)] * ys[size_t(order[size_t(k)])][size_t(i)] *
                              ys[size_t(order[size_t(k)])][size_t(j)];
                st.cov[size_t(i)][size_t(j)] = (1 - c1a - cmu) * st.cov[size_t(i)][size_t(j)] +
                                               c1 * rank1 + cmu * rankmu;
            }
        }
        st.sigma *= std::exp((cs / ds) * (ps_norm / chi_n - 1));

        res.history.push_back({gen, int(evals), res.best_f, st.sigma});
        gen++;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Periodic policies
// ---------------------------------------------------------------------------

// Concatenates n_periods copies of (base || reset); the reset segments return
// the effector to its period-start pose, so only the base is optimizable.
struct PeriodicMap {
    int n_periods = 1;
    int base_segments = 0;
    int reset_segments = 0;

    int full_segments() const { return n_periods * (base_segments + reset_segments); }

    ActionTrajectory expand(const ActionTrajectory& base) const {
        if (base.n_segments != base_segments)
            throw EngineError("periodic_wrap: base segment count mismatch");
        ActionTrajectory full(full_segments(), base.segment_length);
        Action6 reset{};
        if (reset_segments > 0)
            for (size_t k = 0; k < 6; k++) {
                Real net = 0;
                for (const Action6& a : base.values) net += a[k];
                reset[k] = -net / reset_segments;
            }
        for (int p = 0; p < n_periods; p++) {
            for (int s = 0; s < base_segments; s++)
                full.values[size_t(p * (base_segments + reset_segments) + s)] =
                    base.values[size_t(s)];
            for (int s = 0; s < reset_segments; s++)
                full.values[size_t(p * (base_segments + reset_segments) + base_segments + s)] =
                    reset;
        }
        return full;
    }

    // base_grad += M^T full_grad for the linear expansion above.
    void pullback(const std::vector<Action6>& full_grad,
                  std::vector<Action6>& base_grad) const {
        for (int p = 0; p < n_periods; p++) {
            for (int s = 0; s < base_segments; s++)
                for (size_t k = 0; k < 6; k++)
                    base_grad[size_t(s)][k] +=
                        full_grad[size_t(p * (base_segments + reset_segments) + s)][k];
            if (reset_segments <= 0) continue;
            Action6 reset_bar{};
            for (int s = 0; s < reset_segments; s++)
                for (size_t k = 0; k < 6; k++)
                    reset_bar[k] +=
                        full_grad[size_t(p * (base_segments + reset_segments) +
                                         base_segments + s)][k];
            for (int s = 0; s < base_segments; s++)
                for (size_t k = 0; k < 6; k++)
                    base_grad[size_t(s)][k] += -reset_bar[k] / reset_segments;
        }
    }
};

inline ActionTrajectory periodic_wrap(const ActionTrajectory& base, int n_periods,
                                      int reset_segments, long target_horizon = 0) {
    PeriodicMap map{n_periods, base.n_segments, reset_segments};
    if (target_horizon > 0) {
        if (target_horizon % n_periods != 0)
            throw EngineError("periodic_wrap: horizon not divisible by the period count");
        if (map.full_segments() * long(base.segment_length) != target_horizon)
            throw EngineError("periodic_wrap: period layout does not fill the horizon");
    }
    return map.expand(base);
}

}  // namespace flume
