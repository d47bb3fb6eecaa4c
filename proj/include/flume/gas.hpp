#pragma once

#include <cassert>

#include "flume/mpm.hpp"
#include "flume/types.hpp"

namespace flume {

// ---------------------------------------------------------------------------
// Semi-Lagrangian advection
// ---------------------------------------------------------------------------

template <int D>
inline Vec<D> cell_center(const IVec<D>& c, Real h) {
    Vec<D> p;
    for (int a = 0; a < D; a++) p[a] = (c[a] + 0.5) * h;
    return p;
}

template <int D>
inline Grid<Real, D> semi_lagrangian_advect(const Grid<Real, D>& field,
                                            const Grid<Vec<D>, D>& velocity, Real h,
                                            Real dt) {
    Grid<Real, D> out(field.dims);
    for (size_t i = 0; i < field.size(); i++) {
        IVec<D> c = field.unflat(i);
        Vec<D> back = cell_center<D>(c, h) - velocity.data[i] * dt;
        out.data[i] = interp(field, h, back);
    }
    return out;
}

template <int D>
inline Grid<Vec<D>, D> semi_lagrangian_advect(const Grid<Vec<D>, D>& field,
                                              const Grid<Vec<D>, D>& velocity, Real h,
                                              Real dt) {
    Grid<Vec<D>, D> out(field.dims);
    for (size_t i = 0; i < field.size(); i++) {
        IVec<D> c = field.unflat(i);
        Vec<D> back = cell_center<D>(c, h) - velocity.data[i] * dt;
        out.data[i] = interp(field, h, back);
    }
    return out;
}

// Reverse of scalar advection: scatters into field_bar and velocity_bar.
template <int D>
inline void semi_lagrangian_advect_vjp(const Grid<Real, D>& field,
                                       const Grid<Vec<D>, D>& velocity, Real h, Real dt,
                                       const Grid<Real, D>& out_bar,
                                       Grid<Real, D>& field_bar,
                                       Grid<Vec<D>, D>& velocity_bar) {
    for (size_t i = 0; i < field.size(); i++) {
        Real ob = out_bar.data[i];
        if (ob == 0) continue;
        IVec<D> c = field.unflat(i);
        Vec<D> back = cell_center<D>(c, h) - velocity.data[i] * dt;
        InterpStencil<D> st = interp_stencil<D>(field.dims, h, back);
        Vec<D> grad;
        for (int k = 0; k < InterpStencil<D>::corner_count(); k++) {
            field_bar.at(st.corner(k)) += st.weight(k) * ob;
            Real fv = field.at(st.corner(k));
            for (int a = 0; a < D; a++) grad[a] += fv * st.weight_grad(k, a, h);
        }
        velocity_bar.data[i] += grad * (-dt * ob);
    }
}

template <int D>
inline void semi_lagrangian_advect_vjp(const Grid<Vec<D>, D>& field,
                                       const Grid<Vec<D>, D>& velocity, Real h, Real dt,
                                       const Grid<Vec<D>, D>& out_bar,
                                       Grid<Vec<D>, D>& field_bar,
                                       Grid<Vec<D>, D>& velocity_bar) {
    for (size_t i = 0; i < field.size(); i++) {
        Vec<D> ob = out_bar.data[i];
        IVec<D> c = field.unflat(i);
        Vec<D> back = cell_center<D>(c, h) - velocity.data[i] * dt;
        InterpStencil<D> st = interp_stencil<D>(field.dims, h, back);
        Vec<D> xb_bar;
        for (int k = 0; k < InterpStencil<D>::corner_count(); k++) {
            Real w = st.weight(k);
            Vec<D> fv = field.at(st.corner(k));
            field_bar.at(st.corner(k)) += ob * w;
            for (int a = 0; a < D; a++) xb_bar[a] += dot(fv, ob) * st.weight_grad(k, a, h);
        }
        velocity_bar.data[i] += xb_bar * (-dt);
    }
}

// MacCormack error correction over two semi-Lagrangian passes, clamped to the
// forward-stencil extrema so no new extrema appear. Sharper wakes and plumes;
// the plain scheme above remains the differentiable path.
template <int D>
inline Grid<Real, D> maccormack_advect(const Grid<Real, D>& field,
                                       const Grid<Vec<D>, D>& velocity, Real h, Real dt) {
    Grid<Real, D> fwd = semi_lagrangian_advect(field, velocity, h, dt);
    Grid<Real, D> back = semi_lagrangian_advect(fwd, velocity, h, -dt);
    Grid<Real, D> out(field.dims);
    for (size_t i = 0; i < field.size(); i++) {
        IVec<D> c = field.unflat(i);
        Vec<D> bt = cell_center<D>(c, h) - velocity.data[i] * dt;
        InterpStencil<D> st = interp_stencil<D>(field.dims, h, bt);
        Real lo = std::numeric_limits<Real>::infinity(), hi = -lo;
        for (int k = 0; k < InterpStencil<D>::corner_count(); k++) {
            Real v = field.at(st.corner(k));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        out.data[i] = clamp(fwd.data[i] + 0.5 * (field.data[i] - back.data[i]), lo, hi);
    }
    return out;
}

template <int D>
inline Grid<Vec<D>, D> maccormack_advect(const Grid<Vec<D>, D>& field,
                                         const Grid<Vec<D>, D>& velocity, Real h,
                                         Real dt) {
    Grid<Vec<D>, D> fwd = semi_lagrangian_advect(field, velocity, h, dt);
    Grid<Vec<D>, D> back = semi_lagrangian_advect(fwd, velocity, h, -dt);
    Grid<Vec<D>, D> out(field.dims);
    for (size_t i = 0; i < field.size(); i++) {
        IVec<D> c = field.unflat(i);
        Vec<D> bt = cell_center<D>(c, h) - velocity.data[i] * dt;
        InterpStencil<D> st = interp_stencil<D>(field.dims, h, bt);
        Vec<D> lo(std::numeric_limits<Real>::infinity()), hi = -lo;
        for (int k = 0; k < InterpStencil<D>::corner_count(); k++) {
            Vec<D> v = field.at(st.corner(k));
            lo = cwise_min(lo, v);
            hi = cwise_max(hi, v);
        }
        Vec<D> raw = fwd.data[i] + (field.data[i] - back.data[i]) * 0.5;
        for (int a = 0; a < D; a++) out.data[i][a] = clamp(raw[a], lo[a], hi[a]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forcing and coupling
// ---------------------------------------------------------------------------

constexpr int kUpAxis = 1;

template <int D>
inline void add_buoyancy(GasState<D>& gas, Real dt, Real kappa_smoke, Real beta_temp,
                         Real ambient_t) {
    for (size_t i = 0; i < gas.velocity.size(); i++) {
        gas.velocity.data[i][kUpAxis] +=
            dt * (-kappa_smoke * gas.smoke.data[i] +
                  beta_temp * (gas.temperature.data[i] - ambient_t));
    }
}

template <int D>
inline void add_buoyancy_vjp(Real dt, Real kappa_smoke, Real beta_temp,
                             const Grid<Vec<D>, D>& vel_bar, Grid<Real, D>& smoke_bar,
                             Grid<Real, D>& temp_bar) {
    for (size_t i = 0; i < vel_bar.size(); i++) {
        Real vb = vel_bar.data[i][kUpAxis];
        smoke_bar.data[i] += -dt * kappa_smoke * vb;
        temp_bar.data[i] += dt * beta_temp * vb;
    }
}

// Cells whose centers sit inside an effector (or the one-cell wall band) are
// boundary cells carrying the rigid velocity.
template <int D>
inline void rasterize_solid_mask(const std::vector<Effector<D>>& effectors,
                                 GasState<D>& gas, Real h) {
    for (size_t i = 0; i < gas.solid_mask.size(); i++) {
        IVec<D> c = gas.solid_mask.unflat(i);
        bool wall = false;
        for (int a = 0; a < D; a++)
            if (c[a] == 0 || c[a] == gas.solid_mask.dims[a] - 1) wall = true;
        Vec<D> p = cell_center<D>(c, h);
        Real best = std::numeric_limits<Real>::infinity();
        Vec<D> vel;
        bool solid = wall;
        for (const Effector<D>& e : effectors) {
            SdfPrimitive<D> world{e.sdf.shape, e.world_shape_pose()};
            Real d = sdf_local_distance(world.shape, world.pose.to_local(p));
            if (d <= 0 && d < best) {
                best = d;
                solid = true;
                vel = e.linear_velocity + ang_cross<D>(e.angular_velocity, p - e.pose.t);
            }
        }
        gas.solid_mask.data[i] = solid ? 1 : 0;
        gas.solid_velocity.data[i] = solid ? vel : Vec<D>{};
    }
}

// Relax gas velocity toward the mass-weighted particle velocity per cell.
template <int D>
inline void particle_impact(const Scene<D>& scene, const SimState<D>& state,
                            GasState<D>& gas, Real strength, Real dt) {
    if (strength == 0) return;
    Real h = scene.config.gas_dx();
    Grid<Real, D> mass(gas.velocity.dims);
    Grid<Vec<D>, D> mom(gas.velocity.dims);
    for (const Particle<D>& p : state.particles) {
        if (!p.active(state.substep_index)) continue;
        IVec<D> c;
        bool ok = true;
        for (int a = 0; a < D; a++) {
            c[a] = int(std::floor(p.x[a] / h));
            if (c[a] < 0 || c[a] >= gas.velocity.dims[a]) ok = false;
        }
        if (!ok) continue;
        mass.at(c) += p.mass;
        mom.at(c) += p.v * p.mass;
    }
    Real s = strength * dt;
    for (size_t i = 0; i < gas.velocity.size(); i++) {
        if (mass.data[i] <= 0 || gas.solid_mask.data[i]) continue;
        Vec<D> v_avg = mom.data[i] / mass.data[i];
        gas.velocity.data[i] += (v_avg - gas.velocity.data[i]) * s;
    }
}

// ---------------------------------------------------------------------------
// Pressure projection
// ---------------------------------------------------------------------------
//
// Face-averaged divergence D with solid faces pinned to the solid velocity,
// and velocity update u += D^T p. The system matrix A = D D^T is symmetric
// positive semi-definite by construction, so the fixed-sweep Jacobi solve is
// self-adjoint and the projection transposes to itself.

template <int D>
inline void gas_divergence(const GasState<D>& gas, Real h, Grid<Real, D>& div,
                           bool homogeneous = false) {
    const Grid<Vec<D>, D>& u = gas.velocity;
    std::array<size_t, D> stride;
    {
        size_t s = 1;
        for (int a = D - 1; a >= 0; a--) {
            stride[size_t(a)] = s;
            s *= size_t(u.dims[a]);
        }
    }
    IVec<D> c{};
    const Real half_h = 0.5 / h;
    for (size_t i = 0; i < u.size(); i++) {
        if (gas.solid_mask.data[i]) {
            div.data[i] = 0;
        } else {
            Real acc = 0;
            for (int a = 0; a < D; a++) {
                Real fp, fm;
                // array edges extrapolate (open); walls come from the solid ring
                if (c[a] + 1 >= u.dims[a])
                    fp = u.data[i][a];
                else if (gas.solid_mask.data[i + stride[size_t(a)]])
                    fp = homogeneous ? 0 : gas.solid_velocity.data[i + stride[size_t(a)]][a];
                else
                    fp = 0.5 * (u.data[i][a] + u.data[i + stride[size_t(a)]][a]);
                if (c[a] == 0)
                    fm = u.data[i][a];
                else if (gas.solid_mask.data[i - stride[size_t(a)]])
                    fm = homogeneous ? 0 : gas.solid_velocity.data[i - stride[size_t(a)]][a];
                else
                    fm = 0.5 * (u.data[i][a] + u.data[i - stride[size_t(a)]][a]);
                acc += fp - fm;
            }
            div.data[i] = 2 * half_h * acc;
        }
        for (int a = D - 1; a >= 0; a--) {
            if (++c[a] < u.dims[a]) break;
            c[a] = 0;
        }
    }
}

// u += D^T p, scattering through exactly the fluid-fluid face coefficients of
// gas_divergence.
template <int D>
inline void apply_div_transpose(const Grid<uint8_t, D>& mask, Real h,
                                const Grid<Real, D>& p, Grid<Vec<D>, D>& u) {
    std::array<size_t, D> stride;
    {
        size_t s = 1;
        for (int a = D - 1; a >= 0; a--) {
            stride[size_t(a)] = s;
            s *= size_t(p.dims[a]);
        }
    }
    const Real half_h = 0.5 / h;
    IVec<D> c{};
    for (size_t i = 0; i < p.size(); i++) {
        Real pc = mask.data[i] ? 0 : p.data[i];
        if (pc != 0) {
            Real w = half_h * pc;
            for (int a = 0; a < D; a++) {
                if (c[a] + 1 >= p.dims[a]) {
                    u.data[i][a] += 2 * w;  // open face: own value, weight 1
                } else if (!mask.data[i + stride[size_t(a)]]) {
                    u.data[i][a] += w;
                    u.data[i + stride[size_t(a)]][a] += w;
                }
                if (c[a] == 0) {
                    u.data[i][a] -= 2 * w;
                } else if (!mask.data[i - stride[size_t(a)]]) {
                    u.data[i][a] -= w;
                    u.data[i - stride[size_t(a)]][a] -= w;
                }
            }
        }
        for (int a = D - 1; a >= 0; a--) {
            if (++c[a] < p.dims[a]) break;
            c[a] = 0;
        }
    }
}

template <int D>
inline void apply_poisson(const Grid<uint8_t, D>& mask, Real h, const Grid<Real, D>& p,
                          Grid<Real, D>& out, Grid<Vec<D>, D>& scratch) {
    scratch.fill(Vec<D>{});
    apply_div_transpose<D>(mask, h, p, scratch);
    std::array<size_t, D> stride;
    {
        size_t s = 1;
        for (int a = D - 1; a >= 0; a--) {
            stride[size_t(a)] = s;
            s *= size_t(p.dims[a]);
        }
    }
    const Real half_h = 0.5 / h;
    IVec<D> c{};
    for (size_t i = 0; i < p.size(); i++) {
        if (mask.data[i]) {
            out.data[i] = 0;
        } else {
            Real acc = 0;
            for (int a = 0; a < D; a++) {
                Real fp = 0, fm = 0;
                if (c[a] + 1 >= p.dims[a])
                    fp = scratch.data[i][a];
                else if (!mask.data[i + stride[size_t(a)]])
                    fp = 0.5 * (scratch.data[i][a] + scratch.data[i + stride[size_t(a)]][a]);
                if (c[a] == 0)
                    fm = scratch.data[i][a];
                else if (!mask.data[i - stride[size_t(a)]])
                    fm = 0.5 * (scratch.data[i][a] + scratch.data[i - stride[size_t(a)]][a]);
                acc += fp - fm;
            }
            out.data[i] = 2 * half_h * acc;
        }
        for (int a = D - 1; a >= 0; a--) {
            if (++c[a] < p.dims[a]) break;
            c[a] = 0;
        }
    }
}

template <int D>
inline Grid<Real, D> poisson_diagonal(const Grid<uint8_t, D>& mask, Real h) {
    Grid<Real, D> diag(mask.dims);
    Real coef = 0.25 / (h * h);  // square of the 0.5/h face weight
    for (size_t i = 0; i < mask.size(); i++) {
        if (mask.data[i]) {
            diag.data[i] = 1;
            continue;
        }
        IVec<D> c = mask.unflat(i);
        Real d = 0;
        for (int a = 0; a < D; a++) {
            IVec<D> cp = c, cm = c;
            cp[a]++;
            cm[a]--;
            // neighbor slots carry +-0.5/h when fluid
            Real own = 0;  // net own-slot weight in units of 0.5/h
            if (!mask.in_bounds(cp))
                own += 2;
            else if (!mask.at(cp)) {
                own += 1;
                d += coef;
            }
            if (!mask.in_bounds(cm))
                own -= 2;
            else if (!mask.at(cm)) {
                own -= 1;
                d += coef;
            }
            d += coef * own * own;
        }
        diag.data[i] = std::max(d, Real(1e-30));
    }
    return diag;
}

struct ProjectionResult {
    Real residual = 0;
    int iterations = 0;
};

// Solve (D D^T) p = rhs. Jacobi runs exactly `iterations` damped sweeps;
// conjugate gradient stops early at the tolerance.
template <int D>
inline ProjectionResult poisson_solve(const Grid<uint8_t, D>& mask, Real h,
                                      const Grid<Real, D>& rhs, Grid<Real, D>& p,
                                      const ProjectionSolve& solve) {
    ProjectionResult res;
    p.fill(0);
    Grid<Real, D> ap(rhs.dims);
    Grid<Vec<D>, D> scratch(rhs.dims);
    if (solve.kind == ProjectionKind::Jacobi) {
        Grid<Real, D> diag = poisson_diagonal<D>(mask, h);
        for (int it = 0; it < solve.iterations; it++) {
            apply_poisson<D>(mask, h, p, ap, scratch);
            for (size_t i = 0; i < p.size(); i++) {
                if (mask.data[i]) continue;
                p.data[i] += solve.jacobi_omega * (rhs.data[i] - ap.data[i]) / diag.data[i];
            }
        }
        apply_poisson<D>(mask, h, p, ap, scratch);
        for (size_t i = 0; i < p.size(); i++)
            if (!mask.data[i])
                res.residual = std::max(res.residual, std::abs(rhs.data[i] - ap.data[i]));
        res.iterations = solve.iterations;
    } else {
        Grid<Real, D> r = rhs, d(rhs.dims);
        d = rhs;
        Real rr = 0;
        for (size_t i = 0; i < r.size(); i++)
            if (!mask.data[i]) rr += r.data[i] * r.data[i];
        for (int it = 0; it < solve.iterations; it++) {
            Real rmax = 0;
            for (size_t i = 0; i < r.size(); i++)
                if (!mask.data[i]) rmax = std::max(rmax, std::abs(r.data[i]));
            res.residual = rmax;
            res.iterations = it;
            if (rmax <= solve.tolerance) return res;
            apply_poisson<D>(mask, h, d, ap, scratch);
            Real dad = 0;
            for (size_t i = 0; i < r.size(); i++)
                if (!mask.data[i]) dad += d.data[i] * ap.data[i];
            if (dad <= 0) break;  // hit the null space
            Real alpha = rr / dad;
            Real rr_new = 0;
            for (size_t i = 0; i < r.size(); i++) {
                if (mask.data[i]) continue;
                p.data[i] += alpha * d.data[i];
                r.data[i] -= alpha * ap.data[i];
                rr_new += r.data[i] * r.data[i];
            }
            Real beta = rr_new / rr;
            rr = rr_new;
            for (size_t i = 0; i < r.size(); i++)
                if (!mask.data[i]) d.data[i] = r.data[i] + beta * d.data[i];
        }
        Real rmax = 0;
        for (size_t i = 0; i < r.size(); i++)
            if (!mask.data[i]) rmax = std::max(rmax, std::abs(r.data[i]));
        res.residual = rmax;
    }
    return res;
}

// Remove the divergent part of the velocity field. `homogeneous` drops the
// affine solid-velocity terms; the adjoint pass reuses the same routine since
// the linear part is self-adjoint.
template <int D>
inline ProjectionResult pressure_project(GasState<D>& gas, Real h,
                                         const ProjectionSolve& solve,
                                         bool homogeneous = false) {
    Grid<Real, D> div(gas.velocity.dims);
    gas_divergence(gas, h, div, homogeneous);
    for (size_t i = 0; i < div.size(); i++) div.data[i] = -div.data[i];
    Grid<Real, D> p(div.dims);
    ProjectionResult res = poisson_solve<D>(gas.solid_mask, h, div, p, solve);
    apply_div_transpose<D>(gas.solid_mask, h, p, gas.velocity);
    for (size_t i = 0; i < gas.velocity.size(); i++)
        if (gas.solid_mask.data[i])
            gas.velocity.data[i] = homogeneous ? Vec<D>{} : gas.solid_velocity.data[i];
    if (solve.check_residual && res.residual > solve.tolerance)
        throw SolverError("pressure projection residual " + std::to_string(res.residual) +
                              " above tolerance",
                          res.residual);
    return res;
}

template <int D>
inline Real max_divergence(const GasState<D>& gas, Real h) {
    Grid<Real, D> div(gas.velocity.dims);
    gas_divergence(gas, h, div);
    Real m = 0;
    for (size_t i = 0; i < div.size(); i++)
        if (!gas.solid_mask.data[i]) m = std::max(m, std::abs(div.data[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Sources and the combined step
// ---------------------------------------------------------------------------

template <int D>
inline bool source_covers(const GasSource<D>& src, const Vec<D>& p) {
    return sdf_local_distance(src.region, p - src.region_center) <= 0;
}

template <int D>
inline void apply_gas_sources(const Scene<D>& scene, SimState<D>& state) {
    GasState<D>& gas = state.gas;
    Real h = scene.config.gas_dx();
    for (const GasSource<D>& src : scene.gas_sources) {
        Vec<D> vel = src.velocity;
        if (src.effector >= 0) vel = state.effectors[size_t(src.effector)].pose.R * src.velocity;
        for (size_t i = 0; i < gas.velocity.size(); i++) {
            Vec<D> p = cell_center<D>(gas.velocity.unflat(i), h);
            if (!source_covers(src, p)) continue;
            if (src.set_velocity) gas.velocity.data[i] = vel;
            if (src.set_temperature) gas.temperature.data[i] = src.temperature;
            if (src.set_smoke) gas.smoke.data[i] = src.smoke;
        }
    }
}

template <int D>
inline void gas_step(const Scene<D>& scene, SimState<D>& state) {
    GasState<D>& gas = state.gas;
    const GasParams& gp = scene.gas_params;
    Real h = scene.config.gas_dx();
    Real dt = scene.config.dt_substep;

    apply_gas_sources(scene, state);

#ifndef NDEBUG
    Real smoke_lo = std::numeric_limits<Real>::infinity(), smoke_hi = -smoke_lo;
    for (Real v : gas.smoke.data) {
        smoke_lo = std::min(smoke_lo, v);
        smoke_hi = std::max(smoke_hi, v);
    }
#endif

    Grid<Vec<D>, D> vel0 = gas.velocity;
    if (gp.maccormack) {
        gas.velocity = maccormack_advect(vel0, vel0, h, dt);
        gas.smoke = maccormack_advect(gas.smoke, vel0, h, dt);
        gas.temperature = maccormack_advect(gas.temperature, vel0, h, dt);
    } else {
        gas.velocity = semi_lagrangian_advect(vel0, vel0, h, dt);
        gas.smoke = semi_lagrangian_advect(gas.smoke, vel0, h, dt);
        gas.temperature = semi_lagrangian_advect(gas.temperature, vel0, h, dt);
    }

#ifndef NDEBUG
    for (Real v : gas.smoke.data)
        assert(v >= smoke_lo - 1e-12 && v <= smoke_hi + 1e-12 && "advection max principle");
#endif

    add_buoyancy(gas, dt, gp.kappa_smoke, gp.beta_temp, gp.ambient_temperature);
    rasterize_solid_mask(state.effectors, gas, h);
    particle_impact(scene, state, gas, gp.coupling_strength, dt);
    pressure_project(gas, h, gp.projection);
}

}  // namespace flume
