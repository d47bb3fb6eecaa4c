#pragma once

#include "flume/materials.hpp"
#include "flume/types.hpp"

namespace flume {

// Quadratic B-spline stencil: 3 nodes per axis around x/dx - 0.5.
template <int D>
struct QuadWeights {
    IVec<D> base{};
    std::array<std::array<Real, 3>, D> w{};
    std::array<std::array<Real, 3>, D> dw{};  // d/d(fx); multiply by 1/dx for d/dx

    static constexpr int node_count() {
        int n = 1;
        for (int a = 0; a < D; a++) n *= 3;
        return n;
    }

    IVec<D> offset(int k) const {
        IVec<D> o{};
        for (int a = 0; a < D; a++) {
            o[a] = k % 3;
            k /= 3;
        }
        return o;
    }

    IVec<D> node(int k) const {
        IVec<D> n = base;
        IVec<D> o = offset(k);
        for (int a = 0; a < D; a++) n[a] += o[a];
        return n;
    }

    Real weight(const IVec<D>& o) const {
        Real r = 1;
        for (int a = 0; a < D; a++) r *= w[a][o[a]];
        return r;
    }

    // gradient of the weight with respect to the particle position
    Vec<D> weight_grad(const IVec<D>& o, Real inv_dx) const {
        Vec<D> g;
        for (int a = 0; a < D; a++) {
            Real r = 1;
            for (int b = 0; b < D; b++) r *= (b == a) ? dw[b][o[b]] : w[b][o[b]];
            g[a] = r * inv_dx;
        }
        return g;
    }
};

template <int D>
inline QuadWeights<D> quad_weights(const Vec<D>& x, Real inv_dx) {
    QuadWeights<D> q;
    for (int a = 0; a < D; a++) {
        Real xs = x[a] * inv_dx;
        int base = int(std::floor(xs - 0.5));
        Real fx = xs - base;  // in [0.5, 1.5]
        q.base[a] = base;
        q.w[a][0] = 0.5 * (1.5 - fx) * (1.5 - fx);
        q.w[a][1] = 0.75 - (fx - 1) * (fx - 1);
        q.w[a][2] = 0.5 * (fx - 0.5) * (fx - 0.5);
        q.dw[a][0] = fx - 1.5;
        q.dw[a][1] = -2 * (fx - 1);
        q.dw[a][2] = fx - 0.5;
    }
    return q;
}

// ---------------------------------------------------------------------------
// Contact model
// ---------------------------------------------------------------------------

// Removes the approaching normal component and shrinks the tangential part by
// Coulomb friction. Separating contacts pass through.
template <int D>
inline Vec<D> coulomb_project(const Vec<D>& v_rel, const Vec<D>& n, Real mu) {
    Real vn = dot(v_rel, n);
    if (vn >= 0) return v_rel;
    Vec<D> vt = v_rel - n * vn;
    Real tn = norm(vt);
    if (tn <= mu * (-vn)) return Vec<D>{};
    return vt * (1 + mu * vn / tn);
}

template <int D>
inline void coulomb_project_vjp(const Vec<D>& v_rel, const Vec<D>& n, Real mu,
                                const Vec<D>& out_bar, Vec<D>& v_rel_bar,
                                Vec<D>& n_bar) {
    Real vn = dot(v_rel, n);
    if (vn >= 0) {
        v_rel_bar += out_bar;
        return;
    }
    Vec<D> vt = v_rel - n * vn;
    Real tn = norm(vt);
    if (tn <= mu * (-vn)) return;  // stuck: zero output, zero derivative

    Real c = 1 + mu * vn / tn;
    Vec<D> th = vt / tn;

    Real c_bar = dot(out_bar, vt);
    Vec<D> vt_bar = out_bar * c;
    Real vn_bar = mu * c_bar / tn;
    Real tn_bar = -mu * vn * c_bar / (tn * tn);
    vt_bar += th * tn_bar;
    // vt = v_rel - vn n
    v_rel_bar += vt_bar;
    vn_bar += -dot(vt_bar, n);
    n_bar += vt_bar * (-vn);
    // vn = v_rel . n
    v_rel_bar += n * vn_bar;
    n_bar += v_rel * vn_bar;
}

// alpha = min(exp(-d), 1); hard mode uses a step instead.
inline Real contact_alpha(Real d, bool hard) {
    if (hard) return d <= 0 ? 1.0 : 0.0;
    return d <= 0 ? 1.0 : std::exp(-d);
}

inline Real contact_alpha_deriv(Real d, bool hard) {
    if (hard || d <= 0) return 0;
    return -std::exp(-d);
}

template <int D>
inline Vec<D> soft_contact_blend(const Vec<D>& v_original, const Vec<D>& v_c, Real d) {
    Real a = contact_alpha(d, false);
    return v_c * a + v_original * (1 - a);
}

// Cotangents accumulated by the contact of one effector at one grid node.
template <int D>
struct EffectorBars {
    Vec<D> t_bar;
    Mat<D> R_bar;
    Vec<D> vlin_bar;
    AngVec<D> w_bar;
};

// Blend the node velocity toward the after-collision velocity of one effector.
template <int D>
inline Vec<D> effector_contact(const SimConfig<D>& cfg, const Effector<D>& e,
                               const Vec<D>& p, const Vec<D>& v_in) {
    SdfPrimitive<D> world{e.sdf.shape, e.world_shape_pose()};
    SdfSample<D> s = sdf_eval(world, p);
    Real d = s.distance / cfg.dx();
    if (d >= cfg.contact_eps_cells) return v_in;

    Vec<D> r = p - e.pose.t;
    Vec<D> ve = e.linear_velocity + ang_cross<D>(e.angular_velocity, r);
    Vec<D> vrel = v_in - ve;
    Vec<D> vrel_p = e.sticky() ? Vec<D>{} : coulomb_project(vrel, s.normal, e.friction_mu);
    Vec<D> vc = vrel_p + ve;
    Real a = contact_alpha(d, cfg.hard_contact);
    return vc * a + v_in * (1 - a);
}

template <int D>
inline void effector_contact_vjp(const SimConfig<D>& cfg, const Effector<D>& e,
                                 const Vec<D>& p, const Vec<D>& v_in,
                                 const Vec<D>& out_bar, Vec<D>& v_in_bar,
                                 EffectorBars<D>& eb) {
    SdfPrimitive<D> world{e.sdf.shape, e.world_shape_pose()};
    SdfSample<D> s = sdf_eval(world, p);
    Real d = s.distance / cfg.dx();
    if (d >= cfg.contact_eps_cells) {
        v_in_bar += out_bar;
        return;
    }

    Vec<D> r = p - e.pose.t;
    Vec<D> ve = e.linear_velocity + ang_cross<D>(e.angular_velocity, r);
    Vec<D> vrel = v_in - ve;
    Vec<D> vrel_p = e.sticky() ? Vec<D>{} : coulomb_project(vrel, s.normal, e.friction_mu);
    Vec<D> vc = vrel_p + ve;
    Real a = contact_alpha(d, cfg.hard_contact);

    // v_out = a vc + (1 - a) v_in
    Real a_bar = dot(out_bar, vc - v_in);
    Vec<D> vc_bar = out_bar * a;
    v_in_bar += out_bar * (1 - a);
    Real d_bar = contact_alpha_deriv(d, cfg.hard_contact) * a_bar;

    Vec<D> vrel_p_bar = vc_bar;
    Vec<D> ve_bar = vc_bar;
    Vec<D> vrel_bar, n_bar;
    if (!e.sticky())
        coulomb_project_vjp(vrel, s.normal, e.friction_mu, vrel_p_bar, vrel_bar, n_bar);
    v_in_bar += vrel_bar;
    ve_bar -= vrel_bar;

    // ve = vlin + w x r, r = p - t
    eb.vlin_bar += ve_bar;
    if constexpr (D == 2) {
        eb.w_bar[0] += dot(perp(r), ve_bar);
        eb.t_bar += perp(ve_bar) * e.angular_velocity[0];
    } else {
        Vec3 w(e.angular_velocity[0], e.angular_velocity[1], e.angular_velocity[2]);
        Vec3 rw = cross(r, ve_bar);
        for (int i = 0; i < 3; i++) eb.w_bar[i] += rw[i];
        eb.t_bar += cross(w, ve_bar);
    }

    // d and n through the world shape pose
    Vec<D> wt_bar;
    Mat<D> wR_bar;
    sdf_eval_pose_vjp(world, p, d_bar / cfg.dx(), n_bar, wt_bar, wR_bar);
    // world = compose(e.pose, e.sdf.pose)
    eb.t_bar += wt_bar;
    eb.R_bar += wR_bar * transpose(e.sdf.pose.R);
    eb.R_bar += outer(wt_bar, e.sdf.pose.t);
}

// ---------------------------------------------------------------------------
// Substep kernels
// ---------------------------------------------------------------------------

template <int D>
struct MpmWorkspace {
    Grid<Real, D> mass;
    Grid<Vec<D>, D> mom;
    Grid<Vec<D>, D> vel;
    std::vector<Vec<D>> start_positions;

    void resize(const SimConfig<D>& cfg) {
        IVec<D> n = cfg.node_dims();
        if (mass.dims != n) {
            mass.resize(n);
            mom.resize(n);
            vel.resize(n);
        }
    }
};

// Stress sees the strain-rate-augmented trial for viscous liquids, the stored
// gradient otherwise.
template <int D>
inline Mat<D> stress_input(const MaterialParams& m, const Particle<D>& p, Real dt) {
    if (m.kind == MaterialKind::ViscousLiquid)
        return (Mat<D>::identity() + p.C * dt) * p.F;
    return p.F;
}

template <int D>
inline void p2g(const Scene<D>& scene, const SimState<D>& state, MpmWorkspace<D>& ws) {
    const SimConfig<D>& cfg = scene.config;
    ws.resize(cfg);
    ws.mass.fill(0);
    ws.mom.fill(Vec<D>{});

    const Real dx = cfg.dx();
    const Real inv_dx = 1 / dx;
    const Real dt = cfg.dt_substep;
    const Real stress_coeff = dt * 4 * inv_dx * inv_dx;

    for (size_t pi = 0; pi < state.particles.size(); pi++) {
        const Particle<D>& p = state.particles[pi];
        if (!p.active(state.substep_index)) continue;
        QuadWeights<D> q = quad_weights(p.x, inv_dx);
        for (int a = 0; a < D; a++) {
            if (q.base[a] < 0 || q.base[a] + 2 >= ws.mass.dims[a])
                throw EngineError("p2g: particle " + std::to_string(pi) +
                                  " escaped the clamped region");
        }
        const MaterialParams& m = scene.materials[size_t(p.material_id)];
        Mat<D> fs = stress_input(m, p, dt);
        Mat<D> stress_mat =
            corotated_stress(fs, m.mu, m.lambda, long(pi)) * transpose(fs);
        Mat<D> affine = p.C * p.mass - stress_mat * (stress_coeff * p.volume0);

        for (int k = 0; k < QuadWeights<D>::node_count(); k++) {
            IVec<D> o = q.offset(k);
            IVec<D> node = q.node(k);
            Real w = q.weight(o);
            Vec<D> rel;
            for (int a = 0; a < D; a++) rel[a] = node[a] * dx - p.x[a];
            size_t idx = ws.mass.flat(node);
            ws.mass.data[idx] += w * p.mass;
            ws.mom.data[idx] += (p.v * p.mass + affine * rel) * w;
        }
    }
}

// Wall treatment: zero the inward normal component in a band near each face.
template <int D>
inline Vec<D> apply_wall_bc(const SimConfig<D>& cfg, const IVec<D>& node,
                            const IVec<D>& dims, const Vec<D>& v) {
    Vec<D> r = v;
    for (int a = 0; a < D; a++) {
        if (node[a] <= cfg.boundary_width && r[a] < 0) r[a] = 0;
        if (node[a] >= dims[a] - 1 - cfg.boundary_width && r[a] > 0) r[a] = 0;
    }
    return r;
}

template <int D>
inline void grid_update(const Scene<D>& scene, const SimState<D>& state,
                        MpmWorkspace<D>& ws) {
    const SimConfig<D>& cfg = scene.config;
    const Real dt = cfg.dt_substep;
    const Real dx = cfg.dx();

    ws.vel.fill(Vec<D>{});
    for (size_t i = 0; i < ws.mass.size(); i++) {
        Real m = ws.mass.data[i];
        if (m <= cfg.mass_epsilon) continue;
        Vec<D> v = ws.mom.data[i] / m + cfg.gravity * dt;
        IVec<D> node = ws.mass.unflat(i);
        v = apply_wall_bc<D>(cfg, node, ws.mass.dims, v);
        Vec<D> p;
        for (int a = 0; a < D; a++) p[a] = node[a] * dx;
        for (const Effector<D>& e : state.effectors) v = effector_contact(cfg, e, p, v);
        ws.vel.data[i] = v;
    }
}

template <int D>
inline Vec<D> cfl_clamp(const SimConfig<D>& cfg, const Vec<D>& v) {
    Real vmax = cfg.cfl_fraction * cfg.dx() / cfg.dt_substep;
    Real n = norm(v);
    if (n > vmax) return v * (vmax / n);
    return v;
}

template <int D>
inline Vec<D> clamp_to_interior(const SimConfig<D>& cfg, const Vec<D>& x) {
    Vec<D> r = x;
    Real dx = cfg.dx();
    for (int a = 0; a < D; a++) r[a] = clamp(r[a], dx, cfg.domain_extent[a] - dx);
    return r;
}

template <int D>
inline void g2p(const Scene<D>& scene, SimState<D>& state, const MpmWorkspace<D>& ws) {
    const SimConfig<D>& cfg = scene.config;
    const Real dx = cfg.dx();
    const Real inv_dx = 1 / dx;
    const Real dt = cfg.dt_substep;
    const Real k4 = 4 * inv_dx * inv_dx;

    for (size_t pi = 0; pi < state.particles.size(); pi++) {
        Particle<D>& p = state.particles[pi];
        if (!p.active(state.substep_index)) continue;
        QuadWeights<D> q = quad_weights(p.x, inv_dx);
        Vec<D> v_new;
        Mat<D> c_new;
        for (int k = 0; k < QuadWeights<D>::node_count(); k++) {
            IVec<D> o = q.offset(k);
            IVec<D> node = q.node(k);
            Real w = q.weight(o);
            Vec<D> gv = ws.vel.at(node);
            Vec<D> rel;
            for (int a = 0; a < D; a++) rel[a] = node[a] * dx - p.x[a];
            v_new += gv * w;
            c_new += outer(gv, rel) * (w * k4);
        }
        v_new = cfl_clamp(cfg, v_new);
        p.x = clamp_to_interior(cfg, p.x + v_new * dt);
        p.v = v_new;
        p.C = c_new;
        Mat<D> f_trial = (Mat<D>::identity() + c_new * dt) * p.F;
        const MaterialParams& m = scene.materials[size_t(p.material_id)];
        switch (m.kind) {
            case MaterialKind::Liquid:
            case MaterialKind::ViscousLiquid:
                p.F = liquid_project(f_trial, long(pi));
                break;
            case MaterialKind::Plastic:
                p.F = box_yield_project(f_trial, m.yield.theta_c, m.yield.theta_s,
                                        long(pi));
                break;
            case MaterialKind::NonNewtonian:
                p.F = von_mises_project(f_trial, m.yield.sigma_y, m.mu, long(pi));
                break;
            default:
                p.F = f_trial;
        }
    }
}

// Project every rigid body onto the best-fit rigid motion of its rest shape.
// Velocities are the pose change since the start of the substep over dt.
template <int D>
inline void rigid_body_pass(const Scene<D>& scene, SimState<D>& state,
                            const std::vector<Vec<D>>& start_positions) {
    const Real dt = scene.config.dt_substep;
    for (const RigidBodyRef<D>& body : scene.rigid_bodies) {
        std::vector<Vec<D>> cur;
        std::vector<Real> masses;
        cur.reserve(body.members.size());
        masses.reserve(body.members.size());
        bool any_active = false;
        for (size_t idx : body.members) {
            const Particle<D>& p = state.particles[idx];
            if (!p.active(state.substep_index)) continue;
            any_active = true;
            cur.push_back(p.x);
            masses.push_back(p.mass);
        }
        if (!any_active || cur.size() != body.members.size()) continue;
        RigidFit<D> fit =
            rigid_shape_match(cur, body.rest_offsets, masses, body.body_id);
        for (size_t j = 0; j < body.members.size(); j++) {
            Particle<D>& p = state.particles[body.members[j]];
            Vec<D> xn = fit.rotation * body.rest_offsets[j] + fit.translation;
            xn = clamp_to_interior(scene.config, xn);
            p.v = (xn - start_positions[body.members[j]]) / dt;
            p.x = xn;
        }
    }
}

template <int D>
inline void advance_effectors(SimState<D>& state, const std::array<Real, 6>& action,
                              Real dt) {
    for (Effector<D>& e : state.effectors) {
        for (int a = 0; a < D; a++)
            if (e.action_mask[size_t(a)]) e.linear_velocity[a] = action[size_t(a)];
        if constexpr (D == 2) {
            if (e.action_mask[5]) e.angular_velocity[0] = action[5];
        } else {
            for (int a = 0; a < 3; a++)
                if (e.action_mask[size_t(3 + a)]) e.angular_velocity[a] = action[size_t(3 + a)];
        }
        e.pose.t += e.linear_velocity * dt;
        e.pose.R = advance_rotation<D>(e.pose.R, e.angular_velocity, dt);
    }
}

template <int D>
inline void activate_emitted_particles(const Scene<D>& scene, SimState<D>& state) {
    for (const EmitterSpawn<D>& em : scene.emitters) {
        Particle<D>& p = state.particles[em.particle];
        if (p.activation_substep != state.substep_index) continue;
        if (em.effector >= 0) {
            const Effector<D>& e = state.effectors[size_t(em.effector)];
            p.x = clamp_to_interior(scene.config, e.pose.to_world(em.local_pos));
            p.v = e.pose.R * em.local_vel;
        } else {
            p.x = clamp_to_interior(scene.config, em.local_pos);
            p.v = em.local_vel;
        }
    }
}

// Declared in gas.hpp; referenced here so a substep can couple the fields.
template <int D>
void gas_step(const Scene<D>& scene, SimState<D>& state);

template <int D>
inline void mpm_substep(const Scene<D>& scene, SimState<D>& state,
                        const std::array<Real, 6>& action, MpmWorkspace<D>& ws) {
    advance_effectors(state, action, scene.config.dt_substep);
    activate_emitted_particles(scene, state);

    ws.start_positions.resize(state.particles.size());
    for (size_t i = 0; i < state.particles.size(); i++)
        ws.start_positions[i] = state.particles[i].x;

    p2g(scene, state, ws);
    grid_update(scene, state, ws);
    g2p(scene, state, ws);
    rigid_body_pass(scene, state, ws.start_positions);
    if (state.has_gas) gas_step(scene, state);

    state.time += scene.config.dt_substep;
    state.substep_index++;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

template <int D>
struct MassMomentum {
    Real mass = 0;
    Vec<D> momentum;
    Real kinetic_energy = 0;
};

template <int D>
inline MassMomentum<D> particle_totals(const SimState<D>& state) {
    MassMomentum<D> t;
    for (const auto& p : state.particles) {
        if (!p.active(state.substep_index)) continue;
        t.mass += p.mass;
        t.momentum += p.v * p.mass;
        t.kinetic_energy += 0.5 * p.mass * norm_sq(p.v);
    }
    return t;
}

template <int D>
inline MassMomentum<D> grid_totals(const MpmWorkspace<D>& ws) {
    MassMomentum<D> t;
    for (size_t i = 0; i < ws.mass.size(); i++) {
        t.mass += ws.mass.data[i];
        t.momentum += ws.mom.data[i];
    }
    return t;
}

}  // namespace flume
