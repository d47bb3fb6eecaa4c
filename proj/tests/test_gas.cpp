#include <doctest.h>

#include "flume/gas.hpp"
#include "flume/rng.hpp"
#include "flume/scene_library.hpp"

using namespace flume;

namespace {

GasState<2> make_gas(int n, bool walls = true) {
    GasState<2> g;
    g.resize({n, n});
    if (walls) {
        for (size_t i = 0; i < g.solid_mask.size(); i++) {
            IVec<2> c = g.solid_mask.unflat(i);
            if (c[0] == 0 || c[1] == 0 || c[0] == n - 1 || c[1] == n - 1)
                g.solid_mask.data[i] = 1;
        }
    }
    return g;
}

}  // namespace

TEST_CASE("advection identity and exact shift") {
    int n = 32;
    Real h = 1.0 / n;
    Grid<Real, 2> field({n, n});
    for (size_t i = 0; i < field.size(); i++) {
        IVec<2> c = field.unflat(i);
        field.data[i] = 2.0 * (c[0] + 0.5) * h + 0.3;  // linear in x
    }
    Grid<Vec2, 2> vel({n, n});

    Grid<Real, 2> same = semi_lagrangian_advect(field, vel, h, 0.01);
    for (size_t i = 0; i < field.size(); i++)
        CHECK(same.data[i] == doctest::Approx(field.data[i]).epsilon(1e-13));

    Vec2 u(0.8, 0.0);
    vel.fill(u);
    Real dt = 0.004;
    Grid<Real, 2> shifted = semi_lagrangian_advect(field, vel, h, dt);
    for (size_t i = 0; i < field.size(); i++) {
        IVec<2> c = field.unflat(i);
        if (c[0] < 2 || c[0] > n - 3) continue;  // clamped band
        Real expect = 2.0 * ((c[0] + 0.5) * h - u[0] * dt) + 0.3;
        CHECK(shifted.data[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("advection max principle and smoke positivity") {
    int n = 24;
    Real h = 1.0 / n;
    Rng rng(5);
    Grid<Real, 2> smoke({n, n});
    Grid<Vec2, 2> vel({n, n});
    Real lo = std::numeric_limits<Real>::infinity(), hi = -lo;
    for (size_t i = 0; i < smoke.size(); i++) {
        smoke.data[i] = rng.uniform(0.0, 2.0);
        vel.data[i] = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
        lo = std::min(lo, smoke.data[i]);
        hi = std::max(hi, smoke.data[i]);
    }
    for (int step = 0; step < 100; step++) {
        smoke = semi_lagrangian_advect(smoke, vel, h, 0.01);
        for (size_t i = 0; i < smoke.size(); i++) {
            CHECK(smoke.data[i] >= lo - 1e-12);
            CHECK(smoke.data[i] <= hi + 1e-12);
        }
    }
}

TEST_CASE("advection vjps match finite differences") {
    int n = 8;
    Real h = 1.0 / n;
    Rng rng(9);
    Grid<Real, 2> field({n, n});
    Grid<Vec2, 2> vel({n, n});
    for (size_t i = 0; i < field.size(); i++) {
        field.data[i] = rng.uniform(-1, 1);
        vel.data[i] = Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    }
    Real dt = 0.37;  // large enough to move within cells
    Grid<Real, 2> ob({n, n});
    for (size_t i = 0; i < ob.size(); i++) ob.data[i] = rng.uniform(-1, 1);

    Grid<Real, 2> f_bar({n, n});
    Grid<Vec2, 2> v_bar({n, n});
    semi_lagrangian_advect_vjp(field, vel, h, dt, ob, f_bar, v_bar);

    auto psi = [&](const Grid<Real, 2>& f, const Grid<Vec2, 2>& v) {
        Grid<Real, 2> out = semi_lagrangian_advect(f, v, h, dt);
        Real s = 0;
        for (size_t i = 0; i < out.size(); i++) s += ob.data[i] * out.data[i];
        return s;
    };
    Real eps = 1e-6;
    for (size_t i = 0; i < field.size(); i += 7) {
        Grid<Real, 2> fp = field, fm = field;
        fp.data[i] += eps;
        fm.data[i] -= eps;
        Real fd = (psi(fp, vel) - psi(fm, vel)) / (2 * eps);
        CHECK(f_bar.data[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        for (int a = 0; a < 2; a++) {
            Grid<Vec2, 2> vp = vel, vm = vel;
            vp.data[i][a] += eps;
            vm.data[i][a] -= eps;
            Real fdv = (psi(field, vp) - psi(field, vm)) / (2 * eps);
            CHECK(v_bar.data[i][a] == doctest::Approx(fdv).epsilon(1e-5).scale(1.0));
        }
    }

    // vector-field self-advection vjp
    Grid<Vec2, 2> vob({n, n});
    for (size_t i = 0; i < vob.size(); i++)
        vob.data[i] = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto psiv = [&](const Grid<Vec2, 2>& v) {
        Grid<Vec2, 2> out = semi_lagrangian_advect(v, v, h, dt);
        Real s = 0;
        for (size_t i = 0; i < out.size(); i++) s += dot(vob.data[i], out.data[i]);
        return s;
    };
    Grid<Vec2, 2> vf_bar({n, n}), vv_bar({n, n});
    semi_lagrangian_advect_vjp(vel, vel, h, dt, vob, vf_bar, vv_bar);
    for (size_t i = 0; i < vel.size(); i += 5) {
        for (int a = 0; a < 2; a++) {
            Grid<Vec2, 2> vp = vel, vm = vel;
            vp.data[i][a] += eps;
            vm.data[i][a] -= eps;
            Real fd = (psiv(vp) - psiv(vm)) / (2 * eps);
            Real total = vf_bar.data[i][a] + vv_bar.data[i][a];
            CHECK(total == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("buoyancy forcing") {
    GasState<2> g = make_gas(8, false);
    g.temperature.fill(0.5);
    add_buoyancy(g, 0.01, 0.0, 1.0, 0.5);
    for (size_t i = 0; i < g.velocity.size(); i++) CHECK(norm(g.velocity.data[i]) == 0);

    Real dT = 0.8, beta = 2.0, dt = 0.01;
    g.temperature.fill(0.5 + dT);
    add_buoyancy(g, dt, 0.0, beta, 0.5);
    for (size_t i = 0; i < g.velocity.size(); i++) {
        CHECK(g.velocity.data[i][1] == doctest::Approx(dt * beta * dT));
        CHECK(g.velocity.data[i][0] == 0);
    }

    // smoke weighs the column down
    g = make_gas(8, false);
    g.smoke.fill(1.0);
    add_buoyancy(g, dt, 0.7, 1.0, 0.0);
    for (size_t i = 0; i < g.velocity.size(); i++)
        CHECK(g.velocity.data[i][1] == doctest::Approx(-dt * 0.7));
}

TEST_CASE("solid mask rasterization") {
    int n = 32;
    Real h = 1.0 / n;
    GasState<2> g;
    g.resize({n, n});
    std::vector<Effector<2>> none;
    rasterize_solid_mask(none, g, h);
    size_t walls = 0;
    for (size_t i = 0; i < g.solid_mask.size(); i++) {
        IVec<2> c = g.solid_mask.unflat(i);
        bool edge = c[0] == 0 || c[1] == 0 || c[0] == n - 1 || c[1] == n - 1;
        CHECK(int(g.solid_mask.data[i]) == int(edge));
        walls += g.solid_mask.data[i];
    }
    CHECK(walls == size_t(4 * n - 4));

    // box covering exactly an 8x8 cell patch
    Effector<2> e;
    e.sdf.shape.kind = ShapeKind::Box;
    e.sdf.shape.half_extents = Vec2(4 * h - 1e-9, 4 * h - 1e-9);
    e.pose.t = Vec2(16 * h, 16 * h);
    e.linear_velocity = Vec2(0.3, 0.0);
    std::vector<Effector<2>> effs{e};
    rasterize_solid_mask(effs, g, h);
    size_t count = 0;
    for (size_t i = 0; i < g.solid_mask.size(); i++) {
        IVec<2> c = g.solid_mask.unflat(i);
        bool edge = c[0] == 0 || c[1] == 0 || c[0] == n - 1 || c[1] == n - 1;
        if (g.solid_mask.data[i] && !edge) {
            count++;
            CHECK(g.solid_velocity.data[i][0] == doctest::Approx(0.3));
        }
    }
    CHECK(count == 64);

    // the mask follows the pose
    effs[0].pose.t += Vec2(4 * h, 0);
    rasterize_solid_mask(effs, g, h);
    CHECK(g.solid_mask.at({23, 16}) == 1);
    CHECK(g.solid_mask.at({13, 16}) == 0);
}

TEST_CASE("pressure projection removes divergence") {
    int n = 64;
    Real h = 1.0 / n;
    GasState<2> g = make_gas(n);

    SUBCASE("divergence-free input is a fixed point") {
        // constant field, no solids: our divergence is exactly zero
        GasState<2> open = make_gas(n, false);
        open.velocity.fill(Vec2(0.4, -0.2));
        ProjectionSolve solve;
        solve.kind = ProjectionKind::ConjugateGradient;
        solve.iterations = 1000;
        solve.tolerance = 1e-10;
        GasState<2> before = open;
        pressure_project(open, h, solve);
        for (size_t i = 0; i < open.velocity.size(); i++)
            CHECK(norm(open.velocity.data[i] - before.velocity.data[i]) <= 1e-10);
    }

    SUBCASE("radial source field projects below 1e-4") {
        for (size_t i = 0; i < g.velocity.size(); i++) {
            IVec<2> c = g.velocity.unflat(i);
            if (g.solid_mask.data[i]) continue;
            Vec2 p = cell_center<2>(c, h);
            g.velocity.data[i] = p - Vec2(0.5, 0.5);
        }
        ProjectionSolve solve;
        solve.kind = ProjectionKind::ConjugateGradient;
        solve.iterations = 4000;
        solve.tolerance = 1e-4;
        pressure_project(g, h, solve);
        CHECK(max_divergence(g, h) <= 1e-4);

        // idempotence: a second projection barely moves the field
        GasState<2> once = g;
        pressure_project(g, h, solve);
        CHECK(max_divergence(g, h) <= 2e-4);
        Real diff = 0;
        for (size_t i = 0; i < g.velocity.size(); i++)
            diff = std::max(diff, norm(g.velocity.data[i] - once.velocity.data[i]));
        CHECK(diff <= 2e-4);
    }

    SUBCASE("jacobi reaches the tolerance on a smooth field") {
        int m = 32;
        Real hm = 1.0 / m;
        GasState<2> s = make_gas(m);
        for (size_t i = 0; i < s.velocity.size(); i++) {
            IVec<2> c = s.velocity.unflat(i);
            if (s.solid_mask.data[i]) continue;
            Vec2 p = cell_center<2>(c, hm);
            s.velocity.data[i] =
                Vec2(std::sin(2 * kPi * p[0]), std::cos(2 * kPi * p[1])) * 0.3;
        }
        ProjectionSolve solve;
        solve.kind = ProjectionKind::Jacobi;
        solve.iterations = 6000;
        solve.jacobi_omega = 0.8;
        solve.tolerance = 1e-4;
        pressure_project(s, hm, solve);
        CHECK(max_divergence(s, hm) <= 1e-4);
    }

    SUBCASE("solid faces carry no flux and projection raises on bad budgets") {
        GasState<2> s = make_gas(n);
        Effector<2> e;
        e.sdf.shape.kind = ShapeKind::Box;
        e.sdf.shape.half_extents = Vec2(0.1, 0.1);
        e.pose.t = Vec2(0.5, 0.5);
        std::vector<Effector<2>> effs{e};
        rasterize_solid_mask(effs, s, h);
        for (size_t i = 0; i < s.velocity.size(); i++)
            if (!s.solid_mask.data[i]) s.velocity.data[i] = Vec2(1.0, 0.0);
        ProjectionSolve solve;
        solve.kind = ProjectionKind::ConjugateGradient;
        solve.iterations = 6000;
        solve.tolerance = 1e-8;
        pressure_project(s, h, solve);
        // flux audit: the face values the divergence operator assigns at
        // solid faces equal the solid velocity (zero here)
        Grid<Real, 2> div(s.velocity.dims);
        gas_divergence(s, h, div);
        Real worst = 0;
        for (size_t i = 0; i < div.size(); i++)
            if (!s.solid_mask.data[i]) worst = std::max(worst, std::abs(div.data[i]));
        CHECK(worst <= 1e-8);
        // and a starved budget reports non-convergence
        GasState<2> bad = make_gas(n);
        for (size_t i = 0; i < bad.velocity.size(); i++) {
            IVec<2> c = bad.velocity.unflat(i);
            if (bad.solid_mask.data[i]) continue;
            bad.velocity.data[i] = cell_center<2>(c, h) - Vec2(0.5, 0.5);
        }
        ProjectionSolve starved;
        starved.kind = ProjectionKind::Jacobi;
        starved.iterations = 3;
        starved.tolerance = 1e-6;
        CHECK_THROWS_AS(pressure_project(bad, h, starved), SolverError);
    }
}

TEST_CASE("projection is self-adjoint (inner product test)") {
    int n = 24;
    Real h = 1.0 / n;
    GasState<2> base = make_gas(n);
    Effector<2> e;
    e.sdf.shape.kind = ShapeKind::Sphere;
    e.sdf.shape.radius = 0.12;
    e.pose.t = Vec2(0.4, 0.55);
    std::vector<Effector<2>> effs{e};
    rasterize_solid_mask(effs, base, h);

    ProjectionSolve solve;
    solve.kind = ProjectionKind::Jacobi;
    solve.iterations = 60;
    solve.jacobi_omega = 0.8;
    solve.check_residual = false;

    Rng rng(13);
    auto apply_p = [&](const Grid<Vec2, 2>& v) {
        GasState<2> s = base;
        s.velocity = v;
        pressure_project(s, h, solve, /*homogeneous=*/true);
        return s.velocity;
    };
    for (int trial = 0; trial < 5; trial++) {
        Grid<Vec2, 2> v({n, n}), w({n, n});
        for (size_t i = 0; i < v.size(); i++) {
            if (base.solid_mask.data[i]) continue;
            v.data[i] = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
            w.data[i] = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
        }
        Grid<Vec2, 2> pv = apply_p(v), pw = apply_p(w);
        Real lhs = 0, rhs = 0, scale = 0;
        for (size_t i = 0; i < v.size(); i++) {
            lhs += dot(pv.data[i], w.data[i]);
            rhs += dot(v.data[i], pw.data[i]);
            scale += norm(v.data[i]) * norm(w.data[i]);
        }
        CHECK(std::abs(lhs - rhs) <= 1e-10 * (1 + scale));
    }
}

TEST_CASE("particle impact relaxes gas toward particle velocity") {
    World<2> w = build_scene<2>(scenes::gradcheck_scene("liquid", 3));
    Scene<2> scene = w.scene;
    scene.config.gas_resolution = 16;
    SimState<2> st = w.state;
    st.has_gas = true;
    st.gas.resize(scene.config.gas_dims());
    rasterize_solid_mask(st.effectors, st.gas, scene.config.gas_dx());
    for (auto& p : st.particles) p.v = Vec2(0.6, -0.2);

    SUBCASE("no particles leaves gas untouched") {
        SimState<2> empty = st;
        empty.particles.clear();
        GasState<2> before = empty.gas;
        particle_impact(scene, empty, empty.gas, 1.0, 1.0);
        for (size_t i = 0; i < before.velocity.size(); i++)
            CHECK(norm(empty.gas.velocity.data[i] - before.velocity.data[i]) == 0);
    }

    SUBCASE("full and half relaxation") {
        particle_impact(scene, st, st.gas, 1.0, 1.0);  // strength*dt = 1
        Real hgas = scene.config.gas_dx();
        IVec<2> cell{int(st.particles[0].x[0] / hgas), int(st.particles[0].x[1] / hgas)};
        CHECK(st.gas.velocity.at(cell)[0] == doctest::Approx(0.6));
        CHECK(st.gas.velocity.at(cell)[1] == doctest::Approx(-0.2));

        GasState<2> g2 = st.gas;
        for (size_t i = 0; i < g2.velocity.size(); i++) g2.velocity.data[i] = Vec2{};
        particle_impact(scene, st, g2, 0.5, 1.0);  // half relaxation
        CHECK(g2.velocity.at(cell)[0] == doctest::Approx(0.3));
        CHECK(g2.velocity.at(cell)[1] == doctest::Approx(-0.1));
    }
}

TEST_CASE("gas step: ambient fixed point and dissipativity") {
    World<2> w = build_scene<2>(scenes::gas_box());
    Scene<2> scene = w.scene;
    SimState<2> st = w.state;
    REQUIRE(st.has_gas);

    SUBCASE("ambient state stays ambient") {
        gas_step(scene, st);
        for (size_t i = 0; i < st.gas.velocity.size(); i++) {
            CHECK(norm(st.gas.velocity.data[i]) <= 1e-12);
            CHECK(st.gas.smoke.data[i] == 0);
        }
    }

    SUBCASE("kinetic energy does not increase without forcing") {
        Rng rng(21);
        Real hgas = scene.config.gas_dx();
        for (size_t i = 0; i < st.gas.velocity.size(); i++) {
            if (st.gas.solid_mask.data[i]) continue;
            IVec<2> c = st.gas.velocity.unflat(i);
            Vec2 p = cell_center<2>(c, hgas);
            st.gas.velocity.data[i] = Vec2(std::sin(4 * p[1]), std::cos(3 * p[0])) * 0.5;
        }
        auto ke = [&](const GasState<2>& g) {
            Real s = 0;
            for (size_t i = 0; i < g.velocity.size(); i++)
                if (!g.solid_mask.data[i]) s += norm_sq(g.velocity.data[i]);
            return s;
        };
        Real prev = ke(st.gas);
        for (int step = 0; step < 25; step++) {
            gas_step(scene, st);
            Real cur = ke(st.gas);
            CHECK(cur <= prev * (1 + 1e-9));
            prev = cur;
        }
    }

    SUBCASE("smoke stays non-negative with sources running") {
        World<2> jet = build_scene<2>(scenes::gradcheck_gas(2));
        std::array<Real, 6> action{0, 0, 0, 0, 0, 0.4};
        MpmWorkspace<2> ws;
        for (int step = 0; step < 30; step++) mpm_substep(jet.scene, jet.state, action, ws);
        for (size_t i = 0; i < jet.state.gas.smoke.size(); i++)
            CHECK(jet.state.gas.smoke.data[i] >= -1e-15);
    }
}
