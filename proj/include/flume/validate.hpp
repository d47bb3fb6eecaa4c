#pragma once

#include "flume/gas.hpp"
#include "flume/grad.hpp"
#include "flume/scene_library.hpp"

namespace flume {

struct ValidationResult {
    std::string suite;
    bool pass = false;
    json measured;
};

namespace validate_detail {

inline constexpr Action6 kZero{};

template <int D>
inline Vec<D> body_com(const SimState<D>& st, int body) {
    Vec<D> c;
    Real m = 0;
    for (const auto& p : st.particles) {
        if (p.body_id != body || !p.active(st.substep_index)) continue;
        c += p.x * p.mass;
        m += p.mass;
    }
    return c / m;
}

// Number of grid cells holding at least one active particle.
template <int D>
inline size_t occupied_cells(const Scene<D>& scene, const SimState<D>& st) {
    Grid<uint8_t, D> occ(scene.config.node_dims());
    Real inv_dx = 1 / scene.config.dx();
    size_t count = 0;
    for (const auto& p : st.particles) {
        if (!p.active(st.substep_index)) continue;
        IVec<D> c;
        for (int a = 0; a < D; a++) c[a] = int(p.x[a] * inv_dx);
        if (!occ.in_bounds(c)) continue;
        if (!occ.at(c)) {
            occ.at(c) = 1;
            count++;
        }
    }
    return count;
}

inline ValidationResult momentum_suite() {
    ValidationResult r{"momentum", false, {}};
    World<2> w = build_scene<2>(scenes::momentum_collision());
    MpmWorkspace<2> ws;
    MassMomentum<2> t0 = particle_totals(w.state);
    Real scale = 0;
    for (const auto& p : w.state.particles) scale += p.mass * norm(p.v);
    for (int i = 0; i < 2500; i++) mpm_substep(w.scene, w.state, kZero, ws);
    MassMomentum<2> t1 = particle_totals(w.state);
    Real drift = norm(t1.momentum - t0.momentum) / scale;

    Vec2 v_left, v_right;
    Real m_left = 0, m_right = 0;
    for (const auto& p : w.state.particles) {
        if (p.body_id == 0) {
            v_left += p.v * p.mass;
            m_left += p.mass;
        } else {
            v_right += p.v * p.mass;
            m_right += p.mass;
        }
    }
    v_left = v_left / m_left;
    v_right = v_right / m_right;
    bool exchanged = v_left[0] < -0.2 && v_right[0] > 0.2;
    r.measured = {{"momentum_drift_rel", drift},
                  {"left_vx_after", v_left[0]},
                  {"right_vx_after", v_right[0]}};
    r.pass = drift <= 1e-9 && exchanged && finite(t1.momentum);
    return r;
}

inline ValidationResult volume_suite() {
    ValidationResult r{"volume", false, {}};
    World<2> w = build_scene<2>(scenes::liquid_rest());
    MpmWorkspace<2> ws;
    // settle, then watch the occupied volume
    for (int i = 0; i < 1000; i++) mpm_substep(w.scene, w.state, kZero, ws);
    size_t base = occupied_cells(w.scene, w.state);
    size_t lo = base, hi = base;
    for (int i = 0; i < 10000; i++) {
        mpm_substep(w.scene, w.state, kZero, ws);
        if (i % 250 == 0) {
            size_t c = occupied_cells(w.scene, w.state);
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
    }
    size_t final_cells = occupied_cells(w.scene, w.state);
    lo = std::min(lo, final_cells);
    hi = std::max(hi, final_cells);
    Real drift = std::max(std::abs(Real(hi) - Real(base)), std::abs(Real(lo) - Real(base))) /
                 Real(base);
    r.measured = {{"baseline_cells", base}, {"min_cells", lo}, {"max_cells", hi},
                  {"drift_rel", drift}};
    r.pass = drift <= 0.10;
    return r;
}

inline ValidationResult buoyancy_suite() {
    ValidationResult r{"buoyancy", false, {}};
    World<2> w = build_scene<2>(scenes::buoyancy_tank());
    MpmWorkspace<2> ws;
    const int transient = 1500, total = 4200, sample = 150;
    Real y0 = 0;
    std::vector<Real> heights;
    for (int i = 0; i < total; i++) {
        mpm_substep(w.scene, w.state, kZero, ws);
        if (i == transient) y0 = body_com(w.state, 1)[1];
        if (i > transient && i % sample == 0) heights.push_back(body_com(w.state, 1)[1]);
    }
    bool rising = true;
    for (size_t i = 1; i < heights.size(); i++)
        if (heights[i] < heights[i - 1] - 2e-3) rising = false;
    Real gain = heights.empty() ? 0 : heights.back() - y0;
    r.measured = {{"height_gain", gain}, {"monotone_after_transient", rising},
                  {"final_height", heights.empty() ? 0 : heights.back()}};
    r.pass = rising && gain > 0.02;
    return r;
}

inline ValidationResult divergence_suite() {
    ValidationResult r{"divergence", false, {}};
    World<2> w = build_scene<2>(scenes::gas_box());
    Real h = w.scene.config.gas_dx();
    GasState<2>& gas = w.state.gas;
    for (size_t i = 0; i < gas.velocity.size(); i++) {
        if (gas.solid_mask.data[i]) continue;
        Vec2 p = cell_center<2>(gas.velocity.unflat(i), h);
        gas.velocity.data[i] = p - Vec2(0.5, 0.5);
    }
    Real before = max_divergence(gas, h);
    pressure_project(gas, h, w.scene.gas_params.projection);
    Real after = max_divergence(gas, h);
    r.measured = {{"divergence_before", before}, {"divergence_after", after}};
    r.pass = after <= 1e-4;
    return r;
}

inline ValidationResult karman_suite() {
    ValidationResult r{"karman", false, {}};
    World<2> w = build_scene<2>(scenes::karman_channel());
    Real h = w.scene.config.gas_dx();
    // start from uniform throughflow with a transverse kick in the near wake
    for (size_t i = 0; i < w.state.gas.velocity.size(); i++) {
        if (w.state.gas.solid_mask.data[i]) continue;
        Vec2 p = cell_center<2>(w.state.gas.velocity.unflat(i), h);
        Real r2 = norm_sq(p - Vec2(0.75, 0.5));
        w.state.gas.velocity.data[i] = Vec2(1.2, 0.4 * std::exp(-r2 / 0.012));
    }
    MpmWorkspace<2> ws;
    const int total = 1800, tail = 1024;
    std::vector<Real> probe;
    for (int i = 0; i < total; i++) {
        mpm_substep(w.scene, w.state, kZero, ws);
        probe.push_back(interp(w.state.gas.velocity, h, Vec2(1.1, 0.5))[1]);
    }
    // discrete Fourier magnitude of the tail, DC removed
    std::vector<Real> x(probe.end() - tail, probe.end());
    Real mean = 0;
    for (Real v : x) mean += v / tail;
    for (Real& v : x) v -= mean;
    int kbest = 0;
    Real best = 0, second = 0;
    std::vector<Real> mags;
    for (int k = 1; k < tail / 2; k++) {
        Real re = 0, im = 0;
        for (int t = 0; t < tail; t++) {
            Real ph = -2 * kPi * k * t / tail;
            re += x[size_t(t)] * std::cos(ph);
            im += x[size_t(t)] * std::sin(ph);
        }
        Real mag = std::sqrt(re * re + im * im) / tail;
        mags.push_back(mag);
        if (mag > best) {
            second = best;
            best = mag;
            kbest = k;
        } else if (mag > second) {
            second = mag;
        }
    }
    std::vector<Real> sorted = mags;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    Real median = sorted[sorted.size() / 2];
    Real dt_step = w.scene.config.dt_substep;
    Real freq = Real(kbest) / (tail * dt_step);
    r.measured = {{"dominant_bin", kbest},
                  {"dominant_frequency_hz", freq},
                  {"dominant_magnitude", best},
                  {"median_magnitude", median},
                  {"oscillation_amplitude", 2 * best}};
    r.pass = kbest >= 2 && best > 5 * median && best > 1e-3;
    return r;
}

inline ValidationResult rayleigh_taylor_suite() {
    ValidationResult r{"rayleigh_taylor", false, {}};
    World<2> w = build_scene<2>(scenes::rayleigh_taylor());
    MpmWorkspace<2> ws;
    const int bins = 12;
    auto interface_spread = [&](const SimState<2>& st) {
        // per-column minimum height of the heavy layer (body 1)
        std::array<Real, bins> minh;
        minh.fill(std::numeric_limits<Real>::infinity());
        for (const auto& p : st.particles) {
            if (p.body_id != 1) continue;
            int b = std::min(bins - 1, std::max(0, int(p.x[0] / (1.0 / bins))));
            minh[size_t(b)] = std::min(minh[size_t(b)], p.x[1]);
        }
        Real lo = std::numeric_limits<Real>::infinity(), hi = -lo;
        for (int b = 2; b < bins - 2; b++) {  // skip wall columns
            lo = std::min(lo, minh[size_t(b)]);
            hi = std::max(hi, minh[size_t(b)]);
        }
        return hi - lo;
    };
    Real dev0 = interface_spread(w.state);
    for (int i = 0; i < 4000; i++) mpm_substep(w.scene, w.state, kZero, ws);
    Real dev1 = interface_spread(w.state);
    r.measured = {{"deviation_initial", dev0}, {"deviation_final", dev1},
                  {"growth", dev1 / std::max(dev0, 1e-12)}};
    r.pass = dev1 > 3 * dev0 && dev1 > 0.05;
    return r;
}

inline ValidationResult dambreak_suite() {
    ValidationResult r{"dambreak", false, {}};
    World<2> w = build_scene<2>(scenes::dam_break());
    MpmWorkspace<2> ws;
    Real peak = 0, final_ke = 0;
    bool all_finite = true;
    for (int i = 0; i < 2000; i++) {
        mpm_substep(w.scene, w.state, kZero, ws);
        MassMomentum<2> t = particle_totals(w.state);
        if (!finite(t.momentum) || !std::isfinite(t.kinetic_energy)) all_finite = false;
        peak = std::max(peak, t.kinetic_energy);
        final_ke = t.kinetic_energy;
    }
    for (const auto& p : w.state.particles)
        if (!finite(p.x) || !finite(p.v) || !finite(p.F)) all_finite = false;
    r.measured = {{"peak_ke", peak}, {"final_ke", final_ke},
                  {"ratio", final_ke / std::max(peak, 1e-300)}};
    r.pass = all_finite && final_ke < 0.1 * peak;
    return r;
}

inline ValidationResult bounce_suite() {
    ValidationResult r{"bounce", false, {}};
    // loose -> tight clamps; rebound energy must decrease with tightness
    std::array<Real, 3> thetas{0.3, 0.05, 0.015};
    std::array<Real, 3> apex{};
    for (size_t k = 0; k < 3; k++) {
        World<2> w = build_scene<2>(scenes::bounce_drop(thetas[k]));
        MpmWorkspace<2> ws;
        Real floor_y = body_com(w.state, 0)[1];
        bool falling = true;
        Real best_apex = 0;
        Real prev_y = floor_y;
        for (int i = 0; i < 12000; i++) {
            mpm_substep(w.scene, w.state, kZero, ws);
            Real y = body_com(w.state, 0)[1];
            if (falling && y < prev_y) {
                // still descending
            } else if (falling && i > 100 && y > prev_y + 1e-6) {
                falling = false;  // bounced
            }
            if (!falling) best_apex = std::max(best_apex, y);
            prev_y = y;
        }
        apex[k] = best_apex;
    }
    r.measured = {{"apex_loose", apex[0]}, {"apex_mid", apex[1]}, {"apex_tight", apex[2]}};
    r.pass = apex[0] > apex[1] && apex[1] > apex[2];
    return r;
}

inline ValidationResult magnus_suite() {
    ValidationResult r{"magnus", false, {}};
    auto deflection = [&](Real spin) {
        World<2> w = build_scene<2>(scenes::magnus_tank(spin));
        MpmWorkspace<2> ws;
        for (int i = 0; i < 3000; i++) mpm_substep(w.scene, w.state, kZero, ws);
        return body_com(w.state, 1)[1] - 0.5;
    };
    Real base = deflection(0.0);
    Real d10 = deflection(10.0) - base;
    Real d20 = deflection(20.0) - base;
    Real d30 = deflection(30.0) - base;
    Real dneg = deflection(-20.0) - base;
    r.measured = {{"deflection_spin10", d10},
                  {"deflection_spin20", d20},
                  {"deflection_spin30", d30},
                  {"deflection_spin-20", dneg}};
    bool same_sign = (d10 > 0) == (d20 > 0) && (d20 > 0) == (d30 > 0);
    bool antisym = (d20 > 0) != (dneg > 0);
    bool monotone = std::abs(d30) > std::abs(d20) && std::abs(d20) > std::abs(d10);
    r.pass = same_sign && antisym && monotone && std::abs(d10) > 1e-4;
    return r;
}

}  // namespace validate_detail

inline const std::vector<std::string>& validation_suites() {
    static const std::vector<std::string> names{
        "momentum", "volume", "buoyancy", "divergence", "karman",
        "rayleigh_taylor", "dambreak", "bounce", "magnus"};
    return names;
}

inline ValidationResult run_validation(const std::string& name) {
    using namespace validate_detail;
    if (name == "momentum") return momentum_suite();
    if (name == "volume") return volume_suite();
    if (name == "buoyancy") return buoyancy_suite();
    if (name == "divergence") return divergence_suite();
    if (name == "karman") return karman_suite();
    if (name == "rayleigh_taylor") return rayleigh_taylor_suite();
    if (name == "dambreak") return dambreak_suite();
    if (name == "bounce") return bounce_suite();
    if (name == "magnus") return magnus_suite();
    throw EngineError("unknown validation suite '" + name + "'");
}

}  // namespace flume
