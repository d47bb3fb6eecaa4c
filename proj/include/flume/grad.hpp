#pragma once

#include <chrono>
#include <functional>

#include "flume/actions.hpp"
#include "flume/adjoint.hpp"
#include "flume/checkpoint.hpp"
#include "flume/losses.hpp"

namespace flume {

// Loss accumulated at segment boundaries up to `window_substeps`
// (<= 0: full horizon). Substep callbacks feed metrics exports.
template <int D>
inline Real rollout_loss(const Scene<D>& scene, const SimState<D>& state0,
                         const ActionTrajectory& actions, const LossEvaluator<D>& loss,
                         long window_substeps = 0,
                         std::vector<Real>* per_segment = nullptr,
                         SimState<D>* final_state = nullptr,
                         const std::function<void(const SimState<D>&)>& on_substep = {}) {
    long horizon = actions.horizon();
    if (window_substeps <= 0) window_substeps = horizon;
    SimState<D> st = state0;
    MpmWorkspace<D> ws;
    Real total = 0;
    if (per_segment) per_segment->assign(size_t(actions.n_segments), 0.0);
    for (long t = 0; t < horizon; t++) {
        mpm_substep(scene, st, actions.at_substep(t), ws);
        if (on_substep) on_substep(st);
        if ((t + 1) % actions.segment_length == 0) {
            int seg = int((t + 1) / actions.segment_length) - 1;
            Real l = loss.eval(st, seg, actions.n_segments);
            if (per_segment) (*per_segment)[size_t(seg)] = l;
            if (t + 1 <= window_substeps) total += l;
        }
    }
    if (!std::isfinite(total)) throw EngineError("rollout produced a non-finite loss");
    if (final_state) *final_state = std::move(st);
    return total;
}

template <int D>
struct TrajectoryGrad {
    Real loss = 0;       // restricted to the active window
    Real full_loss = 0;  // every segment boundary
    std::vector<Real> per_segment;
    std::vector<Action6> action_grad;  // per segment
    size_t snapshots = 0;

    std::vector<Real> flatten() const {
        std::vector<Real> out;
        for (const Action6& a : action_grad)
            for (Real v : a) out.push_back(v);
        return out;
    }
};

// Forward pass with sparse snapshots, then a backward sweep that replays each
// segment from its snapshot and runs the adjoint substeps in reverse.
template <int D>
inline TrajectoryGrad<D> grad_trajectory(const Scene<D>& scene, const SimState<D>& state0,
                                         const ActionTrajectory& actions,
                                         const LossEvaluator<D>& loss, long stride = 0,
                                         long window_substeps = 0) {
    long horizon = actions.horizon();
    if (stride <= 0) stride = horizon;
    if (window_substeps <= 0) window_substeps = horizon;

    TrajectoryGrad<D> out;
    out.action_grad.assign(size_t(actions.n_segments), Action6{});
    out.per_segment.assign(size_t(actions.n_segments), 0.0);

    CheckpointStore<D> store(stride);
    store.save(0, state0);
    {
        SimState<D> st = state0;
        MpmWorkspace<D> ws;
        for (long t = 0; t < horizon; t++) {
            mpm_substep(scene, st, actions.at_substep(t), ws);
            if ((t + 1) % stride == 0) store.save(t + 1, st);
            if ((t + 1) % actions.segment_length == 0) {
                int seg = int((t + 1) / actions.segment_length) - 1;
                Real l = loss.eval(st, seg, actions.n_segments);
                out.per_segment[size_t(seg)] = l;
                out.full_loss += l;
                if (t + 1 <= window_substeps) out.loss += l;
            }
        }
    }
    if (!std::isfinite(out.loss))
        throw EngineError("grad_trajectory: non-finite forward loss");
    out.snapshots = store.size();

    AdjointState<D> adj;
    adj.init(state0);

    // segment replay cache: states with indices [cache_base, cache_base+len]
    std::vector<SimState<D>> cache;
    long cache_base = -1;
    MpmWorkspace<D> ws;
    auto ensure_cached = [&](long index) -> const SimState<D>& {
        if (cache_base >= 0 && index >= cache_base &&
            index < cache_base + long(cache.size()))
            return cache[size_t(index - cache_base)];
        long base = store.nearest_at_or_before(index);
        long end = std::min(base + stride, horizon);
        cache.clear();
        cache.reserve(size_t(end - base + 1));
        cache.push_back(store.restore(base));
        for (long t = base; t < end; t++) {
            SimState<D> next = cache.back();
            mpm_substep(scene, next, actions.at_substep(t), ws);
            cache.push_back(std::move(next));
        }
        cache_base = base;
        return cache[size_t(index - base)];
    };

    for (long t = horizon - 1; t >= 0; t--) {
        // inject the loss cotangent for the boundary at t+1
        if ((t + 1) % actions.segment_length == 0 && t + 1 <= window_substeps) {
            int seg = int((t + 1) / actions.segment_length) - 1;
            const SimState<D>& boundary = ensure_cached(t + 1);
            loss.grad(boundary, seg, actions.n_segments, adj.x_bar,
                      adj.has_gas ? &adj.gas_temp_bar : nullptr);
        }
        const SimState<D>& pre = ensure_cached(t);
        SubstepRecord<D> rec{t, actions.at_substep(t), &pre};
        adjoint_substep(scene, rec, adj, out.action_grad[size_t(actions.segment_of(t))],
                        ws);
    }
    return out;
}

// Central differences, two evaluations per parameter.
inline std::vector<Real> finite_difference_gradient(
    const std::function<Real(const std::vector<Real>&)>& objective,
    const std::vector<Real>& params, Real eps) {
    if (eps <= 0) throw EngineError("finite_difference_gradient: eps must be positive");
    std::vector<Real> grad(params.size(), 0.0);
    for (size_t i = 0; i < params.size(); i++) {
        std::vector<Real> p = params, m = params;
        p[i] += eps;
        m[i] -= eps;
        Real fp = objective(p), fm = objective(m);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EngineError("finite_difference_gradient: non-finite objective at parameter " +
                              std::to_string(i));
        grad[i] = (fp - fm) / (2 * eps);
    }
    return grad;
}

struct GradReport {
    std::vector<Real> gradient;
    std::vector<Real> fd_gradient;
    Real max_rel_error = 0;
    Real wall_time = 0;
    Real loss = 0;

    static Real rel_error(const std::vector<Real>& g, const std::vector<Real>& fd) {
        Real num = 0, den = 0;
        for (size_t i = 0; i < g.size(); i++) {
            num = std::max(num, std::abs(g[i] - fd[i]));
            den = std::max(den, std::abs(fd[i]));
        }
        return num / (den + 1e-12);
    }
};

// Components of the 6-vector any effector actually accepts.
template <int D>
inline std::vector<int> optimizable_components(const SimState<D>& state) {
    std::vector<int> out;
    for (int k = 0; k < 6; k++) {
        for (const Effector<D>& e : state.effectors)
            if (e.action_mask[size_t(k)]) {
                out.push_back(k);
                break;
            }
    }
    return out;
}

// Adjoint gradient with an optional finite-difference audit over the
// optimizable action components.
template <int D>
inline GradReport grad_check(const Scene<D>& scene, const SimState<D>& state0,
                             const ActionTrajectory& actions, const LossEvaluator<D>& loss,
                             long stride, Real eps, bool with_fd = true) {
    auto start = std::chrono::steady_clock::now();
    std::vector<int> comps = optimizable_components(state0);

    GradReport rep;
    TrajectoryGrad<D> tg = grad_trajectory(scene, state0, actions, loss, stride);
    rep.loss = tg.loss;
    for (int s = 0; s < actions.n_segments; s++)
        for (int k : comps) rep.gradient.push_back(tg.action_grad[size_t(s)][size_t(k)]);

    if (with_fd) {
        std::vector<Real> params;
        for (int s = 0; s < actions.n_segments; s++)
            for (int k : comps) params.push_back(actions.values[size_t(s)][size_t(k)]);
        auto objective = [&](const std::vector<Real>& p) {
            ActionTrajectory a = actions;
            size_t idx = 0;
            for (int s = 0; s < a.n_segments; s++)
                for (int k : comps) a.values[size_t(s)][size_t(k)] = p[idx++];
            return rollout_loss(scene, state0, a, loss);
        };
        rep.fd_gradient = finite_difference_gradient(objective, params, eps);
        rep.max_rel_error = GradReport::rel_error(rep.gradient, rep.fd_gradient);
    }
    rep.wall_time =
        std::chrono::duration<Real>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

}  // namespace flume
