#include <doctest.h>

#include "flume/core.hpp"
#include "flume/grid.hpp"
#include "flume/rng.hpp"
#include "flume/svd.hpp"

using namespace flume;

namespace {

template <int N>
Mat<N> random_mat(Rng& rng, Real lo = -1, Real hi = 1) {
    Mat<N> m;
    for (int i = 0; i < N; i++)
        for (int j = 0; j < N; j++) m[i][j] = rng.uniform(lo, hi);
    return m;
}

template <int N>
Mat<N> random_posdet(Rng& rng) {
    for (;;) {
        Mat<N> m = random_mat<N>(rng);
        m += Mat<N>::identity();
        if (det(m) > 0.3) return m;
    }
}

}  // namespace

TEST_CASE("vec and mat basics") {
    Mat2 a;
    a[0][0] = 1;
    a[0][1] = 2;
    a[1][0] = 3;
    a[1][1] = 4;
    CHECK(det(a) == doctest::Approx(-2));
    Mat2 ai = inverse(a);
    Mat2 id = a * ai;
    CHECK(id[0][0] == doctest::Approx(1));
    CHECK(id[0][1] == doctest::Approx(0).epsilon(1e-12));

    Rng rng(7);
    Mat3 b = random_mat<3>(rng);
    Mat3 binv = inverse(b);
    CHECK(frobenius_norm(b * binv - Mat3::identity()) < 1e-10);
    CHECK(ddot(cofactor(b), b) == doctest::Approx(3 * det(b)));
}

TEST_CASE("svd reconstructs and orders") {
    Rng rng(11);
    for (int trial = 0; trial < 200; trial++) {
        Mat3 a = random_mat<3>(rng, -2, 2);
        SvdTriple<3> t = svd(a);
        CHECK(frobenius_norm(t.reconstruct() - a) <= 1e-12 * (1 + frobenius_norm(a)));
        CHECK(t.sigma[0] >= t.sigma[1]);
        CHECK(t.sigma[1] >= t.sigma[2]);
        CHECK(t.sigma[2] >= 0);
        CHECK(frobenius_norm(transpose(t.U) * t.U - Mat3::identity()) < 1e-12);
        CHECK(frobenius_norm(transpose(t.V) * t.V - Mat3::identity()) < 1e-12);
        CHECK(det(t.U) == doctest::Approx(1).epsilon(1e-9));
        if (det(a) > 0) CHECK(det(t.V) == doctest::Approx(1).epsilon(1e-9));
    }
    for (int trial = 0; trial < 200; trial++) {
        Mat2 a = random_mat<2>(rng, -2, 2);
        SvdTriple<2> t = svd(a);
        CHECK(frobenius_norm(t.reconstruct() - a) <= 1e-12 * (1 + frobenius_norm(a)));
        CHECK(det(t.U) == doctest::Approx(1).epsilon(1e-9));
    }
}

TEST_CASE("svd handles degenerate input") {
    SvdTriple<3> t = svd(Mat3::identity());
    CHECK(frobenius_norm(t.reconstruct() - Mat3::identity()) < 1e-12);
    Mat3 zero;
    SvdTriple<3> tz = svd(zero);
    CHECK(frobenius_norm(tz.reconstruct()) < 1e-12);
    CHECK(std::abs(det(tz.U)) == doctest::Approx(1));
}

TEST_CASE("polar decomposition") {
    Rng rng(3);
    for (int trial = 0; trial < 100; trial++) {
        Mat3 a = random_posdet<3>(rng);
        Mat3 r, s;
        polar(a, r, s);
        CHECK(det(r) == doctest::Approx(1).epsilon(1e-9));
        CHECK(frobenius_norm(r * s - a) < 1e-11);
        CHECK(frobenius_norm(s - transpose(s)) < 1e-11);
    }
}

TEST_CASE("svd vjp matches finite differences of a factor functional") {
    Rng rng(17);
    Mat3 cu = random_mat<3>(rng), cv = random_mat<3>(rng);
    Vec3 cs(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto psi = [&](const Mat3& a) {
        SvdTriple<3> t = svd(a);
        return ddot(cu, t.U) + dot(cs, t.sigma) + ddot(cv, t.V);
    };
    // pick a matrix with well separated singular values
    Mat3 a = Mat3::diag(Vec3(2.0, 1.3, 0.6));
    Mat3 q = random_mat<3>(rng) * 0.2;
    a += q;
    SvdTriple<3> t = svd(a);
    REQUIRE(t.sigma[0] - t.sigma[1] > 0.2);
    REQUIRE(t.sigma[1] - t.sigma[2] > 0.2);

    Mat3 grad = svd_vjp(t, cu, cs, cv);
    Real eps = 1e-6;
    for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) {
            Mat3 ap = a, am = a;
            ap[i][j] += eps;
            am[i][j] -= eps;
            Real fd = (psi(ap) - psi(am)) / (2 * eps);
            CHECK(grad[i][j] == doctest::Approx(fd).epsilon(2e-5));
        }
    }
}

TEST_CASE("svd vjp diagonal sigma-only cotangent") {
    Mat2 a = Mat2::diag(Vec2(2, 1));
    SvdTriple<2> t = svd(a);
    Vec2 sbar(0.3, -0.7);
    Mat2 g = svd_vjp(t, Mat2{}, sbar, Mat2{});
    CHECK(g[0][0] == doctest::Approx(0.3));
    CHECK(g[1][1] == doctest::Approx(-0.7));
    CHECK(g[0][1] == doctest::Approx(0));
    CHECK(g[1][0] == doctest::Approx(0));
}

TEST_CASE("svd vjp stays finite at degenerate input") {
    SvdTriple<3> t = svd(Mat3::identity());
    Rng rng(23);
    Mat3 cu = random_mat<3>(rng), cv = random_mat<3>(rng);
    Vec3 cs(1, -2, 0.5);
    Mat3 g = svd_vjp(t, cu, cs, cv);
    CHECK(finite(g));
}

TEST_CASE("polar rotation vjp matches finite differences, including repeated sigma") {
    Rng rng(29);
    for (int trial = 0; trial < 20; trial++) {
        Mat3 a = trial == 0 ? Mat3::identity() * 1.7 : random_posdet<3>(rng);
        Mat3 rbar = random_mat<3>(rng);
        SvdTriple<3> t = svd(a);
        Mat3 grad = polar_rotation_vjp(t, rbar);
        Real eps = 1e-6;
        for (int i = 0; i < 3; i++) {
            for (int j = 0; j < 3; j++) {
                Mat3 ap = a, am = a;
                ap[i][j] += eps;
                am[i][j] -= eps;
                Real fd = (ddot(rbar, polar_rotation(ap)) - ddot(rbar, polar_rotation(am))) /
                          (2 * eps);
                CHECK(grad[i][j] == doctest::Approx(fd).epsilon(1e-4));
            }
        }
    }
    // 2d
    for (int trial = 0; trial < 20; trial++) {
        Mat2 a = random_posdet<2>(rng);
        Mat2 rbar = random_mat<2>(rng);
        SvdTriple<2> t = svd(a);
        Mat2 grad = polar_rotation_vjp(t, rbar);
        Real eps = 1e-6;
        for (int i = 0; i < 2; i++)
            for (int j = 0; j < 2; j++) {
                Mat2 ap = a, am = a;
                ap[i][j] += eps;
                am[i][j] -= eps;
                Real fd = (ddot(rbar, polar_rotation(ap)) - ddot(rbar, polar_rotation(am))) /
                          (2 * eps);
                CHECK(grad[i][j] == doctest::Approx(fd).epsilon(1e-4));
            }
    }
}

TEST_CASE("rotation advance vjp 3d") {
    Rng rng(31);
    Vec3 w0(0.4, -0.2, 0.9);
    AngVec<3> w;
    for (int i = 0; i < 3; i++) w[i] = w0[i];
    Real dt = 0.01;
    Mat3 r_old = exp_so3(Vec3(0.3, 0.1, -0.5));
    Mat3 rbar = random_mat<3>(rng);

    Mat3 r_old_bar;
    AngVec<3> w_bar{};
    advance_rotation_vjp<3>(r_old, w, dt, rbar, r_old_bar, w_bar);

    Real eps = 1e-6;
    for (int k = 0; k < 3; k++) {
        AngVec<3> wp = w, wm = w;
        wp[k] += eps;
        wm[k] -= eps;
        Real fd = (ddot(rbar, advance_rotation<3>(r_old, wp, dt)) -
                   ddot(rbar, advance_rotation<3>(r_old, wm, dt))) /
                  (2 * eps);
        CHECK(w_bar[k] == doctest::Approx(fd).epsilon(1e-6));
    }
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) {
            Mat3 rp = r_old, rm = r_old;
            rp[i][j] += eps;
            rm[i][j] -= eps;
            Real fd = (ddot(rbar, advance_rotation<3>(rp, w, dt)) -
                       ddot(rbar, advance_rotation<3>(rm, w, dt))) /
                      (2 * eps);
            CHECK(r_old_bar[i][j] == doctest::Approx(fd).epsilon(1e-6));
        }
}

TEST_CASE("rotation advance vjp 2d") {
    Rng rng(37);
    AngVec<2> w;
    w[0] = 1.3;
    Real dt = 0.02;
    Mat2 r_old = rot2(0.4);
    Mat2 rbar = random_mat<2>(rng);
    Mat2 r_old_bar;
    AngVec<2> w_bar{};
    advance_rotation_vjp<2>(r_old, w, dt, rbar, r_old_bar, w_bar);
    Real eps = 1e-6;
    AngVec<2> wp = w, wm = w;
    wp[0] += eps;
    wm[0] -= eps;
    Real fd = (ddot(rbar, advance_rotation<2>(r_old, wp, dt)) -
               ddot(rbar, advance_rotation<2>(r_old, wm, dt))) /
              (2 * eps);
    CHECK(w_bar[0] == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("rng reproducibility and distribution") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; i++) CHECK(a.next_u64() == b.next_u64());
    Rng g(5);
    Real mean = 0, var = 0;
    const int n = 20000;
    std::vector<Real> xs(n);
    for (int i = 0; i < n; i++) {
        xs[i] = g.gaussian();
        mean += xs[i];
    }
    mean /= n;
    for (int i = 0; i < n; i++) var += (xs[i] - mean) * (xs[i] - mean);
    var /= n;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("grid interpolation reproduces linear fields") {
    Grid<Real, 2> g({8, 8});
    Real h = 0.25;
    for (size_t i = 0; i < g.size(); i++) {
        auto c = g.unflat(i);
        Vec2 p = Vec2((c[0] + 0.5) * h, (c[1] + 0.5) * h);
        g.data[i] = 3 * p[0] - 2 * p[1] + 0.7;
    }
    Rng rng(9);
    for (int t = 0; t < 50; t++) {
        Vec2 p(rng.uniform(0.2, 1.8), rng.uniform(0.2, 1.8));
        Real expected = 3 * p[0] - 2 * p[1] + 0.7;
        CHECK(interp(g, h, p) == doctest::Approx(expected).epsilon(1e-12));
        Vec2 grad = interp_grad(g, h, p);
        CHECK(grad[0] == doctest::Approx(3).epsilon(1e-9));
        CHECK(grad[1] == doctest::Approx(-2).epsilon(1e-9));
    }
    // clamped outside the hull
    Real inside = interp(g, h, Vec2(-5, 1.0));
    Real edge = interp(g, h, Vec2(0.5 * h, 1.0));
    CHECK(inside == doctest::Approx(edge));
}
