#pragma once

#include "flume/gas.hpp"
#include "flume/mpm.hpp"

namespace flume {

// Cotangents of every dynamic quantity in a SimState, propagated backward.
template <int D>
struct AdjointState {
    std::vector<Vec<D>> x_bar, v_bar;
    std::vector<Mat<D>> F_bar, C_bar;
    std::vector<Vec<D>> eff_t_bar;
    std::vector<Mat<D>> eff_R_bar;
    Grid<Vec<D>, D> gas_vel_bar;
    Grid<Real, D> gas_smoke_bar, gas_temp_bar;
    bool has_gas = false;

    void init(const SimState<D>& state) {
        x_bar.assign(state.particles.size(), Vec<D>{});
        v_bar.assign(state.particles.size(), Vec<D>{});
        F_bar.assign(state.particles.size(), Mat<D>{});
        C_bar.assign(state.particles.size(), Mat<D>{});
        eff_t_bar.assign(state.effectors.size(), Vec<D>{});
        eff_R_bar.assign(state.effectors.size(), Mat<D>{});
        has_gas = state.has_gas;
        if (has_gas) {
            gas_vel_bar.resize(state.gas.velocity.dims);
            gas_smoke_bar.resize(state.gas.smoke.dims);
            gas_temp_bar.resize(state.gas.temperature.dims);
        }
    }

    void check_finite(long substep) const {
        Real acc = 0;
        for (const auto& v : x_bar) acc += v[0];
        for (const auto& v : v_bar) acc += v[0];
        for (const auto& m : F_bar) acc += m[0][0];
        for (const auto& v : eff_t_bar) acc += v[0];
        if (has_gas)
            for (size_t i = 0; i < gas_vel_bar.size(); i += 17) acc += gas_vel_bar.data[i][0];
        if (!std::isfinite(acc))
            throw AdjointError("non-finite adjoint at substep " + std::to_string(substep),
                               substep);
    }
};

// One reverse-mode tape entry: enough to rerun a substep deterministically.
template <int D>
struct SubstepRecord {
    long index = 0;
    std::array<Real, 6> action{};
    const SimState<D>* pre_state = nullptr;
};

namespace adj_detail {

// Forward stage captures for one substep.
template <int D>
struct SubstepCapture {
    SimState<D> stage_a;   // effectors advanced, emitters activated
    SimState<D> post_g2p;  // particles after g2p, before the rigid pass
    SimState<D> post_rigid;
    // gas stages
    GasState<D> gas_src, gas_adv, gas_buoy, gas_imp;
    bool has_gas = false;
};

template <int D>
inline void capture_forward(const Scene<D>& scene, const SimState<D>& pre,
                            const std::array<Real, 6>& action, MpmWorkspace<D>& ws,
                            SubstepCapture<D>& cap) {
    cap.stage_a = pre;
    advance_effectors(cap.stage_a, action, scene.config.dt_substep);
    activate_emitted_particles(scene, cap.stage_a);

    ws.start_positions.resize(cap.stage_a.particles.size());
    for (size_t i = 0; i < cap.stage_a.particles.size(); i++)
        ws.start_positions[i] = cap.stage_a.particles[i].x;

    p2g(scene, cap.stage_a, ws);
    grid_update(scene, cap.stage_a, ws);
    cap.post_g2p = cap.stage_a;
    g2p(scene, cap.post_g2p, ws);
    cap.post_rigid = cap.post_g2p;
    rigid_body_pass(scene, cap.post_rigid, ws.start_positions);

    cap.has_gas = pre.has_gas;
    if (cap.has_gas) {
        SimState<D>& st = cap.post_rigid;
        const GasParams& gp = scene.gas_params;
        Real h = scene.config.gas_dx();
        Real dt = scene.config.dt_substep;
        apply_gas_sources(scene, st);
        cap.gas_src = st.gas;
        st.gas.velocity = semi_lagrangian_advect(cap.gas_src.velocity,
                                                 cap.gas_src.velocity, h, dt);
        st.gas.smoke = semi_lagrangian_advect(cap.gas_src.smoke, cap.gas_src.velocity, h, dt);
        st.gas.temperature =
            semi_lagrangian_advect(cap.gas_src.temperature, cap.gas_src.velocity, h, dt);
        cap.gas_adv = st.gas;
        add_buoyancy(st.gas, dt, gp.kappa_smoke, gp.beta_temp, gp.ambient_temperature);
        rasterize_solid_mask(st.effectors, st.gas, h);
        cap.gas_buoy = st.gas;
        particle_impact(scene, st, st.gas, gp.coupling_strength, dt);
        cap.gas_imp = st.gas;
        pressure_project(st.gas, h, gp.projection);
    }
}

// Reverse of the gas stages; adds contributions into particle velocity bars.
template <int D>
inline void adjoint_gas(const Scene<D>& scene, SubstepCapture<D>& cap,
                        AdjointState<D>& adj) {
    const GasParams& gp = scene.gas_params;
    if (gp.maccormack)
        throw EngineError(
            "adjoint_gas: maccormack advection has no adjoint; use semi_lagrangian for "
            "differentiable scenes");
    Real h = scene.config.gas_dx();
    Real dt = scene.config.dt_substep;
    const Grid<uint8_t, D>& mask = cap.gas_buoy.solid_mask;

    // projection: self-adjoint linear map; solid cells were overwritten
    for (size_t i = 0; i < adj.gas_vel_bar.size(); i++)
        if (mask.data[i]) adj.gas_vel_bar.data[i] = Vec<D>{};
    {
        GasState<D> bar;
        bar.resize(adj.gas_vel_bar.dims);
        bar.velocity = adj.gas_vel_bar;
        bar.solid_mask = mask;
        ProjectionSolve solve = gp.projection;
        solve.check_residual = false;
        pressure_project(bar, h, solve, /*homogeneous=*/true);
        adj.gas_vel_bar = bar.velocity;
    }

    // particle impact
    if (gp.coupling_strength != 0) {
        Grid<Real, D> cell_mass(adj.gas_vel_bar.dims);
        Grid<Vec<D>, D> cell_mom(adj.gas_vel_bar.dims);
        const SimState<D>& st = cap.post_rigid;
        for (size_t pi = 0; pi < st.particles.size(); pi++) {
            const Particle<D>& p = st.particles[pi];
            if (!p.active(st.substep_index)) continue;
            IVec<D> c;
            bool ok = true;
            for (int a = 0; a < D; a++) {
                c[a] = int(std::floor(p.x[a] / h));
                if (c[a] < 0 || c[a] >= adj.gas_vel_bar.dims[a]) ok = false;
            }
            if (!ok) continue;
            cell_mass.at(c) += p.mass;
            cell_mom.at(c) += p.v * p.mass;
        }
        Real s = gp.coupling_strength * dt;
        // v_new = (1-s) v + s * avg; avg = mom/mass
        for (size_t pi = 0; pi < st.particles.size(); pi++) {
            const Particle<D>& p = st.particles[pi];
            if (!p.active(st.substep_index)) continue;
            IVec<D> c;
            bool ok = true;
            for (int a = 0; a < D; a++) {
                c[a] = int(std::floor(p.x[a] / h));
                if (c[a] < 0 || c[a] >= adj.gas_vel_bar.dims[a]) ok = false;
            }
            if (!ok || mask.at(c) || cell_mass.at(c) <= 0) continue;
            adj.v_bar[pi] += adj.gas_vel_bar.at(c) * (s * p.mass / cell_mass.at(c));
        }
        for (size_t i = 0; i < adj.gas_vel_bar.size(); i++) {
            if (mask.data[i] || cell_mass.data[i] <= 0) continue;
            adj.gas_vel_bar.data[i] *= (1 - s);
        }
    }

    // buoyancy reads the post-advection smoke/temperature
    add_buoyancy_vjp<D>(dt, gp.kappa_smoke, gp.beta_temp, adj.gas_vel_bar,
                        adj.gas_smoke_bar, adj.gas_temp_bar);

    // advection of velocity, smoke, temperature (all against gas_src.velocity)
    Grid<Vec<D>, D> vel0_bar(adj.gas_vel_bar.dims);
    Grid<Real, D> smoke0_bar(adj.gas_smoke_bar.dims), temp0_bar(adj.gas_temp_bar.dims);
    semi_lagrangian_advect_vjp(cap.gas_src.velocity, cap.gas_src.velocity, h, dt,
                               adj.gas_vel_bar, vel0_bar, vel0_bar);
    semi_lagrangian_advect_vjp(cap.gas_src.smoke, cap.gas_src.velocity, h, dt,
                               adj.gas_smoke_bar, smoke0_bar, vel0_bar);
    semi_lagrangian_advect_vjp(cap.gas_src.temperature, cap.gas_src.velocity, h, dt,
                               adj.gas_temp_bar, temp0_bar, vel0_bar);
    adj.gas_vel_bar = vel0_bar;
    adj.gas_smoke_bar = smoke0_bar;
    adj.gas_temp_bar = temp0_bar;

    // sources overwrite their cells; rotating jets feed the effector rotation
    for (const GasSource<D>& src : scene.gas_sources) {
        for (size_t i = 0; i < adj.gas_vel_bar.size(); i++) {
            Vec<D> p = cell_center<D>(adj.gas_vel_bar.unflat(i), h);
            if (!source_covers(src, p)) continue;
            if (src.set_velocity) {
                if (src.effector >= 0)
                    adj.eff_R_bar[size_t(src.effector)] +=
                        outer(adj.gas_vel_bar.data[i], src.velocity);
                adj.gas_vel_bar.data[i] = Vec<D>{};
            }
            if (src.set_temperature) adj.gas_temp_bar.data[i] = 0;
            if (src.set_smoke) adj.gas_smoke_bar.data[i] = 0;
        }
    }
}

template <int D>
inline void adjoint_rigid_pass(const Scene<D>& scene, SubstepCapture<D>& cap,
                               const MpmWorkspace<D>& ws, AdjointState<D>& adj,
                               std::vector<Vec<D>>& start_x_bar) {
    const Real dt = scene.config.dt_substep;
    const SimState<D>& mid = cap.post_g2p;
    for (const RigidBodyRef<D>& body : scene.rigid_bodies) {
        std::vector<Vec<D>> cur;
        std::vector<Real> masses;
        bool all_active = true;
        for (size_t idx : body.members) {
            if (!mid.particles[idx].active(mid.substep_index)) all_active = false;
            cur.push_back(mid.particles[idx].x);
            masses.push_back(mid.particles[idx].mass);
        }
        if (!all_active) continue;

        RigidFit<D> fit = rigid_shape_match(cur, body.rest_offsets, masses, body.body_id);
        Mat<D> r_bar;
        Vec<D> c_bar;
        for (size_t j = 0; j < body.members.size(); j++) {
            size_t idx = body.members[j];
            // v = (x_new - x_start)/dt; x_new = clamp(R off + c); x_start is
            // the substep-start position, credited after the g2p adjoint runs
            Vec<D> xn_bar = adj.x_bar[idx] + adj.v_bar[idx] / dt;
            start_x_bar[idx] -= adj.v_bar[idx] / dt;
            adj.x_bar[idx] = Vec<D>{};
            adj.v_bar[idx] = Vec<D>{};
            // clamp mask on the rigid position
            Vec<D> raw = fit.rotation * body.rest_offsets[j] + fit.translation;
            Vec<D> clamped = clamp_to_interior(scene.config, raw);
            for (int a = 0; a < D; a++)
                if (raw[a] != clamped[a]) xn_bar[a] = 0;
            r_bar += outer(xn_bar, body.rest_offsets[j]);
            c_bar += xn_bar;
        }

        // R through the mass-weighted covariance
        Real total = 0;
        Vec<D> c;
        for (size_t j = 0; j < cur.size(); j++) {
            total += masses[j];
            c += cur[j] * masses[j];
        }
        c = c / total;
        Mat<D> a;
        for (size_t j = 0; j < cur.size(); j++)
            a += outer(cur[j] - c, body.rest_offsets[j]) * masses[j];
        SvdTriple<D> t = svd(a);
        Mat<D> a_bar;
        if (det(a) > 0) {
            a_bar = polar_rotation_vjp(t, r_bar);
        } else {
            Mat<D> flip = Mat<D>::identity();
            flip[D - 1][D - 1] = -1;
            a_bar = svd_vjp(t, r_bar * t.V * flip, Vec<D>{}, transpose(r_bar) * t.U * flip);
        }
        Vec<D> sum_off_bar;
        for (size_t j = 0; j < body.members.size(); j++) {
            Vec<D> g = a_bar * body.rest_offsets[j] * masses[j];
            adj.x_bar[body.members[j]] += g;
            sum_off_bar += g;
        }
        // c depends on every member: c = sum m x / M, and A uses (x - c)
        Vec<D> c_total = c_bar - sum_off_bar;
        for (size_t j = 0; j < body.members.size(); j++)
            adj.x_bar[body.members[j]] += c_total * (masses[j] / total);
    }
    (void)ws;
}

template <int D>
inline void adjoint_g2p(const Scene<D>& scene, SubstepCapture<D>& cap,
                        const MpmWorkspace<D>& ws, AdjointState<D>& adj,
                        Grid<Vec<D>, D>& grid_vel_bar) {
    const SimConfig<D>& cfg = scene.config;
    const Real dx = cfg.dx();
    const Real inv_dx = 1 / dx;
    const Real dt = cfg.dt_substep;
    const Real k4 = 4 * inv_dx * inv_dx;
    const Real vmax = cfg.cfl_fraction * dx / dt;
    const SimState<D>& pre = cap.stage_a;

    for (size_t pi = 0; pi < pre.particles.size(); pi++) {
        const Particle<D>& p = pre.particles[pi];
        if (!p.active(pre.substep_index)) continue;
        QuadWeights<D> q = quad_weights(p.x, inv_dx);
        Vec<D> v_raw;
        Mat<D> c_new;
        for (int k = 0; k < QuadWeights<D>::node_count(); k++) {
            IVec<D> o = q.offset(k);
            IVec<D> node = q.node(k);
            Real w = q.weight(o);
            Vec<D> gv = ws.vel.at(node);
            Vec<D> rel;
            for (int a = 0; a < D; a++) rel[a] = node[a] * dx - p.x[a];
            v_raw += gv * w;
            c_new += outer(gv, rel) * (w * k4);
        }
        Real vn = norm(v_raw);
        bool clamped_v = vn > vmax;
        Vec<D> v_used = clamped_v ? v_raw * (vmax / vn) : v_raw;
        Vec<D> x_raw = p.x + v_used * dt;
        Vec<D> x_clamped = clamp_to_interior(cfg, x_raw);
        Mat<D> f_trial = (Mat<D>::identity() + c_new * dt) * p.F;
        const MaterialParams& m = scene.materials[size_t(p.material_id)];

        // incoming bars refer to the post-g2p state
        Mat<D> f_post_bar = adj.F_bar[pi];
        Mat<D> f_tr_bar;
        switch (m.kind) {
            case MaterialKind::Liquid:
            case MaterialKind::ViscousLiquid:
                f_tr_bar = liquid_project_vjp(f_trial, f_post_bar);
                break;
            case MaterialKind::Plastic:
                f_tr_bar =
                    box_yield_project_vjp(f_trial, m.yield.theta_c, m.yield.theta_s, f_post_bar);
                break;
            case MaterialKind::NonNewtonian:
                f_tr_bar = von_mises_project_vjp(f_trial, m.yield.sigma_y, m.mu, f_post_bar);
                break;
            default: f_tr_bar = f_post_bar;
        }
        Mat<D> f_pre_bar = transpose(Mat<D>::identity() + c_new * dt) * f_tr_bar;
        Mat<D> c_bar = adj.C_bar[pi] + f_tr_bar * transpose(p.F) * dt;

        Vec<D> x_new_bar = adj.x_bar[pi];
        for (int a = 0; a < D; a++)
            if (x_raw[a] != x_clamped[a]) x_new_bar[a] = 0;
        Vec<D> v_used_bar = adj.v_bar[pi] + x_new_bar * dt;
        // the velocity clamp keeps a zero subgradient where active
        Vec<D> v_raw_bar = clamped_v ? Vec<D>{} : v_used_bar;

        Vec<D> x_bar = x_new_bar;  // identity path of x_new = x + dt v
        for (int k = 0; k < QuadWeights<D>::node_count(); k++) {
            IVec<D> o = q.offset(k);
            IVec<D> node = q.node(k);
            Real w = q.weight(o);
            Vec<D> gv = ws.vel.at(node);
            Vec<D> rel;
            for (int a = 0; a < D; a++) rel[a] = node[a] * dx - p.x[a];
            Vec<D> cr = c_bar * rel;
            grid_vel_bar.at(node) += v_raw_bar * w + cr * (w * k4);
            Real s = dot(gv, v_raw_bar) + k4 * dot(gv, cr);
            x_bar += q.weight_grad(o, inv_dx) * s;
            x_bar -= transposed_mul(c_bar, gv) * (w * k4);
        }

        adj.x_bar[pi] = x_bar;
        adj.v_bar[pi] = Vec<D>{};  // old velocity is not read by g2p
        adj.C_bar[pi] = Mat<D>{};  // old C is consumed by p2g only
        adj.F_bar[pi] = f_pre_bar;
        // leave p2g's reads to the p2g adjoint: it accumulates into v/C/F bars
    }
}

template <int D>
inline void adjoint_grid_update(const Scene<D>& scene, SubstepCapture<D>& cap,
                                const MpmWorkspace<D>& ws,
                                const Grid<Vec<D>, D>& grid_vel_bar,
                                Grid<Real, D>& mass_bar, Grid<Vec<D>, D>& mom_bar,
                                std::vector<EffectorBars<D>>& eff_bars) {
    const SimConfig<D>& cfg = scene.config;
    const Real dt = cfg.dt_substep;
    const Real dx = cfg.dx();
    const std::vector<Effector<D>>& effectors = cap.stage_a.effectors;

    for (size_t i = 0; i < ws.mass.size(); i++) {
        Real m = ws.mass.data[i];
        if (m <= cfg.mass_epsilon) continue;
        Vec<D> bar = grid_vel_bar.data[i];
        bool any = false;
        for (int a = 0; a < D; a++)
            if (bar[a] != 0) any = true;
        if (!any) continue;

        IVec<D> node = ws.mass.unflat(i);
        Vec<D> pnode;
        for (int a = 0; a < D; a++) pnode[a] = node[a] * dx;

        // recompute the stage chain
        Vec<D> v0 = ws.mom.data[i] / m;
        Vec<D> v1 = v0 + cfg.gravity * dt;
        Vec<D> v2 = apply_wall_bc<D>(cfg, node, ws.mass.dims, v1);
        std::vector<Vec<D>> chain(effectors.size() + 1);
        chain[0] = v2;
        for (size_t e = 0; e < effectors.size(); e++)
            chain[e + 1] = effector_contact(cfg, effectors[e], pnode, chain[e]);

        for (size_t e = effectors.size(); e-- > 0;) {
            Vec<D> in_bar;
            effector_contact_vjp(cfg, effectors[e], pnode, chain[e], bar, in_bar,
                                 eff_bars[e]);
            bar = in_bar;
        }
        // wall bc: zero where the clamp was active
        for (int a = 0; a < D; a++)
            if (v2[a] != v1[a]) bar[a] = 0;
        mom_bar.data[i] = bar / m;
        mass_bar.data[i] = -dot(v0, bar) / m;
    }
}

template <int D>
inline void adjoint_p2g(const Scene<D>& scene, SubstepCapture<D>& cap,
                        const Grid<Real, D>& mass_bar, const Grid<Vec<D>, D>& mom_bar,
                        AdjointState<D>& adj) {
    const SimConfig<D>& cfg = scene.config;
    const Real dx = cfg.dx();
    const Real inv_dx = 1 / dx;
    const Real dt = cfg.dt_substep;
    const Real stress_coeff = dt * 4 * inv_dx * inv_dx;
    const SimState<D>& pre = cap.stage_a;

    for (size_t pi = 0; pi < pre.particles.size(); pi++) {
        const Particle<D>& p = pre.particles[pi];
        if (!p.active(pre.substep_index)) continue;
        const MaterialParams& m = scene.materials[size_t(p.material_id)];
        Mat<D> fs = stress_input(m, p, dt);
        Mat<D> stress = corotated_stress(fs, m.mu, m.lambda, long(pi));
        Mat<D> stress_mat = stress * transpose(fs);
        Real c = stress_coeff * p.volume0;
        Mat<D> affine = p.C * p.mass - stress_mat * c;

        QuadWeights<D> q = quad_weights(p.x, inv_dx);
        Vec<D> v_bar, x_bar;
        Mat<D> a_bar;
        for (int k = 0; k < QuadWeights<D>::node_count(); k++) {
            IVec<D> o = q.offset(k);
            IVec<D> node = q.node(k);
            Real w = q.weight(o);
            Vec<D> rel;
            for (int a = 0; a < D; a++) rel[a] = node[a] * dx - p.x[a];
            Real mb = mass_bar.at(node);
            Vec<D> ob = mom_bar.at(node);
            Vec<D> contrib = p.v * p.mass + affine * rel;
            Real s = mb * p.mass + dot(ob, contrib);
            x_bar += q.weight_grad(o, inv_dx) * s;
            v_bar += ob * (w * p.mass);
            a_bar += outer(ob, rel) * w;
            x_bar -= transposed_mul(affine, ob) * w;
        }
        adj.x_bar[pi] += x_bar;
        adj.v_bar[pi] += v_bar;
        adj.C_bar[pi] += a_bar * p.mass;

        // stress_mat = stress(Fs) Fs^T scaled by -c
        Mat<D> sm_bar = a_bar * (-c);
        Mat<D> p_bar = sm_bar * fs;
        Mat<D> fs_bar = transpose(sm_bar) * stress;
        fs_bar += corotated_stress_vjp(fs, m.mu, m.lambda, p_bar);
        if (m.kind == MaterialKind::ViscousLiquid) {
            // Fs = (I + dt C) F
            adj.F_bar[pi] += transpose(Mat<D>::identity() + p.C * dt) * fs_bar;
            adj.C_bar[pi] += fs_bar * transpose(p.F) * dt;
        } else {
            adj.F_bar[pi] += fs_bar;
        }
    }
}

}  // namespace adj_detail

// Reverse one substep: consumes the adjoint of the post-state, emits the
// adjoint of the pre-state plus the action cotangent for this substep.
template <int D>
inline void adjoint_substep(const Scene<D>& scene, const SubstepRecord<D>& rec,
                            AdjointState<D>& adj, std::array<Real, 6>& action_bar,
                            MpmWorkspace<D>& ws) {
    using namespace adj_detail;
    const SimConfig<D>& cfg = scene.config;
    const Real dt = cfg.dt_substep;

    SubstepCapture<D> cap;
    capture_forward(scene, *rec.pre_state, rec.action, ws, cap);

    if (cap.has_gas) adjoint_gas(scene, cap, adj);

    std::vector<Vec<D>> start_x_bar(cap.stage_a.particles.size());
    adjoint_rigid_pass(scene, cap, ws, adj, start_x_bar);

    Grid<Vec<D>, D> grid_vel_bar(ws.vel.dims);
    adjoint_g2p(scene, cap, ws, adj, grid_vel_bar);
    for (size_t i = 0; i < start_x_bar.size(); i++) adj.x_bar[i] += start_x_bar[i];

    Grid<Real, D> mass_bar(ws.mass.dims);
    Grid<Vec<D>, D> mom_bar(ws.mom.dims);
    std::vector<EffectorBars<D>> eff_bars(cap.stage_a.effectors.size());
    adjoint_grid_update(scene, cap, ws, grid_vel_bar, mass_bar, mom_bar, eff_bars);

    adjoint_p2g(scene, cap, mass_bar, mom_bar, adj);

    // emitted particles spawned this substep read the stage-a effector pose
    for (const EmitterSpawn<D>& em : scene.emitters) {
        Particle<D>& p0 = cap.stage_a.particles[em.particle];
        if (p0.activation_substep != cap.stage_a.substep_index) continue;
        Vec<D> x_bar = adj.x_bar[em.particle];
        Vec<D> v_bar = adj.v_bar[em.particle];
        adj.x_bar[em.particle] = Vec<D>{};
        adj.v_bar[em.particle] = Vec<D>{};
        if (em.effector < 0) continue;
        const Effector<D>& e = cap.stage_a.effectors[size_t(em.effector)];
        Vec<D> raw = e.pose.to_world(em.local_pos);
        Vec<D> cl = clamp_to_interior(cfg, raw);
        for (int a = 0; a < D; a++)
            if (raw[a] != cl[a]) x_bar[a] = 0;
        adj.eff_t_bar[size_t(em.effector)] += x_bar;
        adj.eff_R_bar[size_t(em.effector)] += outer(x_bar, em.local_pos);
        adj.eff_R_bar[size_t(em.effector)] += outer(v_bar, em.local_vel);
    }

    // effector pose advance and the contact-velocity contributions
    for (size_t e = 0; e < cap.stage_a.effectors.size(); e++) {
        const Effector<D>& pre_eff = rec.pre_state->effectors[e];
        const Effector<D>& eff = cap.stage_a.effectors[e];
        Vec<D> t_bar = adj.eff_t_bar[e] + eff_bars[e].t_bar;
        Mat<D> r_bar = adj.eff_R_bar[e] + eff_bars[e].R_bar;

        Vec<D> vlin_bar = eff_bars[e].vlin_bar + t_bar * dt;
        AngVec<D> w_bar = eff_bars[e].w_bar;
        Mat<D> r_pre_bar;
        advance_rotation_vjp<D>(pre_eff.pose.R, eff.angular_velocity, dt, r_bar,
                                r_pre_bar, w_bar);
        adj.eff_t_bar[e] = t_bar;  // translation is carried through unchanged
        adj.eff_R_bar[e] = r_pre_bar;

        for (int a = 0; a < D; a++)
            if (eff.action_mask[size_t(a)]) action_bar[size_t(a)] += vlin_bar[a];
        if constexpr (D == 2) {
            if (eff.action_mask[5]) action_bar[5] += w_bar[0];
        } else {
            for (int a = 0; a < 3; a++)
                if (eff.action_mask[size_t(3 + a)]) action_bar[size_t(3 + a)] += w_bar[a];
        }
    }

    adj.check_finite(rec.index);
}

}  // namespace flume
