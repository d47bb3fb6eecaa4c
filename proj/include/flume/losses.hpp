#pragma once

#include <map>
#include <unordered_map>

#include "flume/scene.hpp"

namespace flume {

// ---------------------------------------------------------------------------
// Point-set losses
// ---------------------------------------------------------------------------

// Symmetric mean nearest-neighbor distance.
template <int D>
inline Real chamfer_distance(const std::vector<Vec<D>>& a, const std::vector<Vec<D>>& b) {
    if (a.empty() || b.empty()) throw EngineError("chamfer_distance: empty point set");
    Real sum_a = 0;
    for (const Vec<D>& p : a) {
        Real best = std::numeric_limits<Real>::infinity();
        for (const Vec<D>& q : b) best = std::min(best, norm(p - q));
        sum_a += best;
    }
    Real sum_b = 0;
    for (const Vec<D>& q : b) {
        Real best = std::numeric_limits<Real>::infinity();
        for (const Vec<D>& p : a) best = std::min(best, norm(q - p));
        sum_b += best;
    }
    return sum_a / a.size() + sum_b / b.size();
}

// Gradient with respect to the first set; the goal set is fixed.
template <int D>
inline void chamfer_distance_grad(const std::vector<Vec<D>>& a,
                                  const std::vector<Vec<D>>& b, Real weight,
                                  std::vector<Vec<D>>& a_bar) {
    for (size_t i = 0; i < a.size(); i++) {
        Real best = std::numeric_limits<Real>::infinity();
        size_t arg = 0;
        for (size_t j = 0; j < b.size(); j++) {
            Real d = norm(a[i] - b[j]);
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        if (best > 1e-300)
            a_bar[i] += (a[i] - b[arg]) * (weight / (best * a.size()));
    }
    for (size_t j = 0; j < b.size(); j++) {
        Real best = std::numeric_limits<Real>::infinity();
        size_t arg = 0;
        for (size_t i = 0; i < a.size(); i++) {
            Real d = norm(b[j] - a[i]);
            if (d < best) {
                best = d;
                arg = i;
            }
        }
        if (best > 1e-300)
            a_bar[arg] += (a[arg] - b[j]) * (weight / (best * b.size()));
    }
}

template <int D>
inline Real target_point_loss(const std::vector<Vec<D>>& pts, const Vec<D>& goal,
                              bool squared = false) {
    if (pts.empty()) throw EngineError("target_point_loss: empty body");
    Real s = 0;
    for (const Vec<D>& p : pts) {
        Real d = norm(p - goal);
        s += squared ? d * d : d;
    }
    return s;
}

template <int D>
inline Real mixing_spread_loss(const std::vector<Vec<D>>& pts) {
    if (pts.size() < 2) throw EngineError("mixing_spread_loss: need at least 2 particles");
    Real s = 0;
    for (size_t i = 0; i < pts.size(); i++)
        for (size_t j = 0; j < pts.size(); j++) s += norm(pts[i] - pts[j]);
    return -s;
}

template <int D>
inline void mixing_spread_grad(const std::vector<Vec<D>>& pts, Real weight,
                               std::vector<Vec<D>>& bar) {
    for (size_t i = 0; i < pts.size(); i++) {
        Vec<D> g;
        for (size_t j = 0; j < pts.size(); j++) {
            if (j == i) continue;
            Real d = norm(pts[i] - pts[j]);
            if (d > 1e-300) g += (pts[i] - pts[j]) * (2.0 / d);  // both pair orders
        }
        bar[i] += g * (-weight);
    }
}

inline Real reward_from_loss(Real loss, Real c1, Real c2) { return c1 - c2 * loss; }

// ---------------------------------------------------------------------------
// Attraction term (gradient sharing surrogate)
// ---------------------------------------------------------------------------

template <int D>
struct SpatialHash {
    Real cell = 1;
    std::unordered_map<long long, std::vector<int>> buckets;

    static long long key(const IVec<D>& c) {
        long long k = 0;
        for (int a = 0; a < D; a++) k = k * 1000003ll + (c[a] + 500000);
        return k;
    }

    void build(const std::vector<Vec<D>>& pts, Real cell_size) {
        cell = cell_size;
        buckets.clear();
        for (size_t i = 0; i < pts.size(); i++) {
            IVec<D> c;
            for (int a = 0; a < D; a++) c[a] = int(std::floor(pts[i][a] / cell));
            buckets[key(c)].push_back(int(i));
        }
    }

    template <typename F>
    void neighbors(const Vec<D>& p, F&& f) const {
        IVec<D> c0;
        for (int a = 0; a < D; a++) c0[a] = int(std::floor(p[a] / cell));
        IVec<D> off{};
        int total = 1;
        for (int a = 0; a < D; a++) total *= 3;
        for (int k = 0; k < total; k++) {
            IVec<D> c = c0;
            int kk = k;
            for (int a = 0; a < D; a++) {
                c[a] += (kk % 3) - 1;
                kk /= 3;
            }
            auto it = buckets.find(key(c));
            if (it == buckets.end()) continue;
            for (int idx : it->second) f(idx);
        }
        (void)off;
    }
};

// Neighbor weights: softmin in the neighbor's previous loss, tent in distance,
// normalized per particle. Low-loss neighbors attract harder.
template <int D>
struct AttractionParams {
    Real radius = 0.05;
    Real tau = 0.0;  // <= 0: use 0.1 * median of prev losses
};

template <int D>
inline Real attraction_tau(const std::vector<Real>& prev_losses, Real tau) {
    if (tau > 0) return tau;
    std::vector<Real> tmp = prev_losses;
    if (tmp.empty()) return 1;
    std::nth_element(tmp.begin(), tmp.begin() + tmp.size() / 2, tmp.end());
    Real med = tmp[tmp.size() / 2];
    return std::max(0.1 * med, 1e-9);
}

template <int D>
inline Real attraction_loss(const std::vector<Vec<D>>& pts,
                            const std::vector<Real>& prev_losses,
                            const AttractionParams<D>& ap,
                            std::vector<Vec<D>>* grad = nullptr, Real weight = 1) {
    if (pts.size() != prev_losses.size())
        throw EngineError("attraction_loss: loss list size mismatch");
    if (pts.size() < 2) return 0;
    Real tau = attraction_tau<D>(prev_losses, ap.tau);
    SpatialHash<D> hash;
    hash.build(pts, ap.radius);

    Real total = 0;
    for (size_t i = 0; i < pts.size(); i++) {
        // gather neighbors within the radius
        std::vector<int> js;
        std::vector<Real> w, r;
        Real wsum = 0;
        hash.neighbors(pts[i], [&](int j) {
            if (size_t(j) == i) return;
            Real d = norm(pts[i] - pts[size_t(j)]);
            if (d >= ap.radius) return;
            Real tent = 1 - d / ap.radius;
            Real wij = std::exp(-prev_losses[size_t(j)] / tau) * tent;
            js.push_back(j);
            w.push_back(wij);
            r.push_back(d);
            wsum += wij;
        });
        if (js.empty() || wsum <= 0) continue;
        Real si = 0;
        for (size_t k = 0; k < js.size(); k++) si += w[k] * r[k];
        total += si / wsum;

        if (!grad) continue;
        // d/dr_k of (sum w r / sum w): weights also depend on r through the tent
        for (size_t k = 0; k < js.size(); k++) {
            size_t j = size_t(js[k]);
            Real ej = std::exp(-prev_losses[j] / tau);
            Real dw_dr = -ej / ap.radius;  // tent derivative
            Real dnum = dw_dr * r[k] + w[k];
            Real dloss_dr = dnum / wsum - si * dw_dr / (wsum * wsum);
            if (r[k] > 1e-300) {
                Vec<D> dir = (pts[i] - pts[j]) / r[k];
                (*grad)[i] += dir * (weight * dloss_dr);
                (*grad)[j] -= dir * (weight * dloss_dr);
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Gas sensor loss
// ---------------------------------------------------------------------------

template <int D>
inline Real air_sensor_loss(const GasState<D>& gas, Real h,
                            const std::vector<Vec<D>>& sensors,
                            const std::vector<Real>& targets) {
    if (sensors.size() != targets.size())
        throw EngineError("air_sensor_loss: sensor/target size mismatch");
    Real s = 0;
    for (size_t i = 0; i < sensors.size(); i++)
        s += std::abs(interp(gas.temperature, h, sensors[i]) - targets[i]);
    return s;
}

template <int D>
inline void air_sensor_loss_grad(const GasState<D>& gas, Real h,
                                 const std::vector<Vec<D>>& sensors,
                                 const std::vector<Real>& targets, Real weight,
                                 Grid<Real, D>& temp_bar) {
    for (size_t i = 0; i < sensors.size(); i++) {
        Real t = interp(gas.temperature, h, sensors[i]);
        Real sgn = t > targets[i] ? 1.0 : (t < targets[i] ? -1.0 : 0.0);
        InterpStencil<D> st = interp_stencil<D>(gas.temperature.dims, h, sensors[i]);
        for (int k = 0; k < InterpStencil<D>::corner_count(); k++)
            temp_bar.at(st.corner(k)) += weight * sgn * st.weight(k);
    }
}

// Uniform 3x3 sensor layout per room; rooms listed with their target values.
template <int D>
inline void room_sensor_layout(const std::vector<Vec<D>>& room_lo,
                               const std::vector<Vec<D>>& room_hi,
                               const std::vector<Real>& room_targets,
                               std::vector<Vec<D>>& sensors, std::vector<Real>& targets) {
    for (size_t r = 0; r < room_lo.size(); r++) {
        if constexpr (D == 2) {
            for (int i = 0; i < 3; i++)
                for (int j = 0; j < 3; j++) {
                    Vec<D> p;
                    p[0] = room_lo[r][0] + (room_hi[r][0] - room_lo[r][0]) * (i + 1) / 4.0;
                    p[1] = room_lo[r][1] + (room_hi[r][1] - room_lo[r][1]) * (j + 1) / 4.0;
                    sensors.push_back(p);
                    targets.push_back(room_targets[r]);
                }
        } else {
            for (int i = 0; i < 3; i++)
                for (int j = 0; j < 3; j++) {
                    Vec<D> p;
                    p[0] = room_lo[r][0] + (room_hi[r][0] - room_lo[r][0]) * (i + 1) / 4.0;
                    p[1] = 0.5 * (room_lo[r][1] + room_hi[r][1]);
                    p[2] = room_lo[r][2] + (room_hi[r][2] - room_lo[r][2]) * (j + 1) / 4.0;
                    sensors.push_back(p);
                    targets.push_back(room_targets[r]);
                }
        }
    }
}

// ---------------------------------------------------------------------------
// Scene-level loss evaluator
// ---------------------------------------------------------------------------

enum class LossKind {
    TargetPoint,
    HoldInitial,
    MixingSpread,
    AirSensors,
    TrajectoryChamfer,
};

template <int D>
struct LossTerm {
    LossKind kind = LossKind::TargetPoint;
    int body_id = -1;
    Real weight = 1;
    bool squared = false;
    bool final_only = false;
    Vec<D> goal;
    std::vector<Vec<D>> initial_positions;          // HoldInitial
    std::vector<std::vector<Vec<D>>> goal_steps;    // TrajectoryChamfer, per segment
    std::vector<Vec<D>> sensors;                    // AirSensors
    std::vector<Real> sensor_targets;
};

template <int D>
class LossEvaluator {
public:
    LossEvaluator() = default;

    LossEvaluator(const Scene<D>& scene, const json& spec, const SimState<D>& state0)
        : gas_dx_(scene.config.gas_dx()) {
        if (spec.is_null()) throw SceneError("scene has no loss specification");
        // collect body members once; bodies are stable over a trajectory
        std::map<int, std::vector<size_t>> members;
        for (size_t i = 0; i < state0.particles.size(); i++)
            members[state0.particles[i].body_id].push_back(i);
        if (spec.value("kind", "") == "composite") {
            for (const json& jt : spec.at("terms")) add_term(jt, state0, members);
        } else {
            add_term(spec, state0, members);
        }
    }

    // Loss contribution at the end of segment `seg` (final segment = n_segments-1).
    Real eval(const SimState<D>& state, int seg, int n_segments) const {
        Real total = 0;
        for (const LossTerm<D>& t : terms_) {
            if (t.final_only && seg != n_segments - 1) continue;
            total += t.weight * eval_term(t, state, seg);
        }
        if (attraction_weight_ > 0 && !prev_losses_.empty())
            total += attraction_weight_ * eval_attraction(state, nullptr);
        return total;
    }

    // Accumulate d(loss at seg)/d(particle positions) and, for gas terms,
    // d/d(temperature field).
    void grad(const SimState<D>& state, int seg, int n_segments,
              std::vector<Vec<D>>& x_bar, Grid<Real, D>* temp_bar) const {
        for (const LossTerm<D>& t : terms_) {
            if (t.final_only && seg != n_segments - 1) continue;
            grad_term(t, state, seg, x_bar, temp_bar);
        }
        if (attraction_weight_ > 0 && !prev_losses_.empty()) eval_attraction(state, &x_bar);
    }

    // Gradient-sharing surrogate: particles pulled toward neighbors whose
    // previous-iterate loss was lower.
    void enable_attraction(int body, Real weight, Real radius, Real tau) {
        attraction_body_ = body < 0 ? primary_body() : body;
        attraction_weight_ = weight;
        ap_.radius = radius;
        ap_.tau = tau;
    }

    void refresh_attraction(const SimState<D>& state) {
        if (attraction_weight_ <= 0) return;
        std::vector<Real> all = per_particle(state);
        prev_losses_.clear();
        for (size_t idx : members_.at(attraction_body_))
            prev_losses_.push_back(all[idx]);
    }

    // Per-particle contribution of the primary term at a state; feeds the
    // attraction weights of the next optimizer iterate.
    std::vector<Real> per_particle(const SimState<D>& state) const {
        std::vector<Real> out(state.particles.size(), 0.0);
        for (const LossTerm<D>& t : terms_) {
            if (t.kind == LossKind::AirSensors) continue;
            const std::vector<size_t>& mem = members_.at(t.body_id);
            for (size_t idx : mem) {
                const Vec<D>& p = state.particles[idx].x;
                switch (t.kind) {
                    case LossKind::TargetPoint: out[idx] += norm(p - t.goal); break;
                    case LossKind::HoldInitial:
                        out[idx] += norm(p - t.initial_positions[member_rank(t, idx)]);
                        break;
                    case LossKind::TrajectoryChamfer: {
                        const auto& goal = t.goal_steps.back();
                        Real best = std::numeric_limits<Real>::infinity();
                        for (const Vec<D>& q : goal) best = std::min(best, norm(p - q));
                        out[idx] += best;
                        break;
                    }
                    default: break;
                }
            }
        }
        return out;
    }

    int primary_body() const { return terms_.empty() ? -1 : terms_[0].body_id; }
    const std::vector<size_t>& body_members(int body) const { return members_.at(body); }
    bool needs_gas() const {
        for (const auto& t : terms_)
            if (t.kind == LossKind::AirSensors) return true;
        return false;
    }

private:
    void add_term(const json& jt, const SimState<D>& state0,
                  const std::map<int, std::vector<size_t>>& members) {
        LossTerm<D> t;
        std::string kind = jt.value("kind", "target_point");
        t.weight = jt.value("weight", 1.0);
        if (t.weight < 0) throw SceneError("loss weights must be non-negative");
        t.squared = jt.value("squared", false);
        t.final_only = jt.value("eval", "per_step") == std::string("final");
        if (jt.contains("body")) {
            // bodies are numbered in declaration order; names map through index
            t.body_id = jt.at("body").is_number() ? jt.at("body").get<int>()
                                                  : body_index_by_name_(jt, state0);
        }
        if (kind == "target_point") {
            t.kind = LossKind::TargetPoint;
            t.goal = parse_vec<D>(jt.at("goal"), "loss.goal");
        } else if (kind == "hold_initial") {
            t.kind = LossKind::HoldInitial;
            for (size_t idx : members.at(t.body_id))
                t.initial_positions.push_back(state0.particles[idx].x);
        } else if (kind == "mixing_spread") {
            t.kind = LossKind::MixingSpread;
        } else if (kind == "air_sensors") {
            t.kind = LossKind::AirSensors;
            for (const json& js : jt.at("sensors"))
                t.sensors.push_back(parse_vec<D>(js, "loss.sensors"));
            for (const json& jv : jt.at("targets"))
                t.sensor_targets.push_back(jv.get<Real>());
            if (t.sensors.size() != t.sensor_targets.size())
                throw SceneError("air_sensors: sensors/targets size mismatch");
        } else if (kind == "trajectory_chamfer") {
            t.kind = LossKind::TrajectoryChamfer;
            for (const json& jstep : jt.at("goal_trajectory")) {
                std::vector<Vec<D>> pts;
                for (const json& jp : jstep) pts.push_back(parse_vec<D>(jp, "goal point"));
                t.goal_steps.push_back(std::move(pts));
            }
        } else {
            throw SceneError("unknown loss kind '" + kind + "'");
        }
        if (t.body_id >= 0 && !members.count(t.body_id))
            throw SceneError("loss references body with no particles");
        terms_.push_back(std::move(t));
        members_ = members;
    }

    static int body_index_by_name_(const json& jt, const SimState<D>&) {
        // body names follow declaration order: "body_i" or user names resolved
        // by the caller embedding an index; plain names use the convention
        // that the i-th declared body has id i. The scene builder stores the
        // name list under "body" as an index when it can.
        const json& jb = jt.at("body");
        if (jb.is_string())
            throw SceneError("loss.body by name requires the scene loader; use an index");
        return jb.get<int>();
    }

    size_t member_rank(const LossTerm<D>& t, size_t idx) const {
        const auto& mem = members_.at(t.body_id);
        auto it = std::lower_bound(mem.begin(), mem.end(), idx);
        return size_t(it - mem.begin());
    }

    std::vector<Vec<D>> gather(const LossTerm<D>& t, const SimState<D>& state) const {
        std::vector<Vec<D>> pts;
        for (size_t idx : members_.at(t.body_id)) {
            if (!state.particles[idx].active(state.substep_index)) continue;
            pts.push_back(state.particles[idx].x);
        }
        return pts;
    }

    Real eval_term(const LossTerm<D>& t, const SimState<D>& state, int seg) const {
        switch (t.kind) {
            case LossKind::TargetPoint:
                return target_point_loss(gather(t, state), t.goal, t.squared);
            case LossKind::HoldInitial: {
                Real s = 0;
                const auto& mem = members_.at(t.body_id);
                for (size_t k = 0; k < mem.size(); k++)
                    s += norm(state.particles[mem[k]].x - t.initial_positions[k]);
                return s;
            }
            case LossKind::MixingSpread: return mixing_spread_loss(gather(t, state));
            case LossKind::AirSensors:
                return air_sensor_loss(state.gas, gas_dx_, t.sensors, t.sensor_targets);
            case LossKind::TrajectoryChamfer: {
                size_t g = std::min(size_t(seg), t.goal_steps.size() - 1);
                return chamfer_distance(gather(t, state), t.goal_steps[g]);
            }
        }
        return 0;
    }

    void grad_term(const LossTerm<D>& t, const SimState<D>& state, int seg,
                   std::vector<Vec<D>>& x_bar, Grid<Real, D>* temp_bar) const {
        if (t.kind == LossKind::AirSensors) {
            if (temp_bar)
                air_sensor_loss_grad(state.gas, gas_dx_, t.sensors, t.sensor_targets,
                                     t.weight, *temp_bar);
            return;
        }
        const auto& mem = members_.at(t.body_id);
        switch (t.kind) {
            case LossKind::TargetPoint: {
                for (size_t idx : mem) {
                    if (!state.particles[idx].active(state.substep_index)) continue;
                    Vec<D> d = state.particles[idx].x - t.goal;
                    Real n = norm(d);
                    if (t.squared)
                        x_bar[idx] += d * (2 * t.weight);
                    else if (n > 1e-300)
                        x_bar[idx] += d * (t.weight / n);
                }
                break;
            }
            case LossKind::HoldInitial: {
                for (size_t k = 0; k < mem.size(); k++) {
                    Vec<D> d = state.particles[mem[k]].x - t.initial_positions[k];
                    Real n = norm(d);
                    if (n > 1e-300) x_bar[mem[k]] += d * (t.weight / n);
                }
                break;
            }
            case LossKind::MixingSpread: {
                std::vector<Vec<D>> pts = gather(t, state);
                std::vector<Vec<D>> bar(pts.size());
                mixing_spread_grad(pts, t.weight, bar);
                size_t k = 0;
                for (size_t idx : mem) {
                    if (!state.particles[idx].active(state.substep_index)) continue;
                    x_bar[idx] += bar[k++];
                }
                break;
            }
            case LossKind::TrajectoryChamfer: {
                std::vector<Vec<D>> pts = gather(t, state);
                size_t g = std::min(size_t(seg), t.goal_steps.size() - 1);
                std::vector<Vec<D>> bar(pts.size());
                chamfer_distance_grad(pts, t.goal_steps[g], t.weight, bar);
                size_t k = 0;
                for (size_t idx : mem) {
                    if (!state.particles[idx].active(state.substep_index)) continue;
                    x_bar[idx] += bar[k++];
                }
                break;
            }
            default: break;
        }
    }

    Real eval_attraction(const SimState<D>& state, std::vector<Vec<D>>* x_bar) const {
        const auto& mem = members_.at(attraction_body_);
        std::vector<Vec<D>> pts;
        pts.reserve(mem.size());
        for (size_t idx : mem) pts.push_back(state.particles[idx].x);
        std::vector<Vec<D>> grad(x_bar ? pts.size() : 0);
        Real v = attraction_loss(pts, prev_losses_, ap_, x_bar ? &grad : nullptr,
                                 attraction_weight_);
        if (x_bar)
            for (size_t k = 0; k < mem.size(); k++) (*x_bar)[mem[k]] += grad[k];
        return v;
    }

    std::vector<LossTerm<D>> terms_;
    std::map<int, std::vector<size_t>> members_;
    Real gas_dx_ = 1;
    Real attraction_weight_ = 0;
    AttractionParams<D> ap_;
    int attraction_body_ = -1;
    std::vector<Real> prev_losses_;
};

}  // namespace flume
