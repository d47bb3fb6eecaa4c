#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace flume {

using Real = double;

constexpr Real kPi = 3.14159265358979323846;

// Errors thrown by the engine carry enough context to locate the failure.
struct EngineError : std::runtime_error {
    explicit EngineError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SceneError : EngineError {
    explicit SceneError(const std::string& msg) : EngineError(msg) {}
};

struct DegenerateDeformation : EngineError {
    long particle_id = -1;
    explicit DegenerateDeformation(const std::string& msg, long pid = -1)
        : EngineError(msg), particle_id(pid) {}
};

struct RigidityError : EngineError {
    int body_id = -1;
    explicit RigidityError(const std::string& msg, int body = -1)
        : EngineError(msg), body_id(body) {}
};

struct SolverError : EngineError {
    Real residual = 0;
    explicit SolverError(const std::string& msg, Real res = 0)
        : EngineError(msg), residual(res) {}
};

struct AdjointError : EngineError {
    long substep = -1;
    explicit AdjointError(const std::string& msg, long sub = -1)
        : EngineError(msg), substep(sub) {}
};

template <int N>
struct Vec {
    std::array<Real, N> d{};

    Vec() = default;
    explicit Vec(Real s) { d.fill(s); }
    Vec(Real x, Real y) requires(N == 2) : d{x, y} {}
    Vec(Real x, Real y, Real z) requires(N == 3) : d{x, y, z} {}

    Real& operator[](int i) { return d[i]; }
    Real operator[](int i) const { return d[i]; }

    Vec operator+(const Vec& o) const {
        Vec r;
        for (int i = 0; i < N; i++) r.d[i] = d[i] + o.d[i];
        return r;
    }
    Vec operator-(const Vec& o) const {
        Vec r;
        for (int i = 0; i < N; i++) r.d[i] = d[i] - o.d[i];
        return r;
    }
    Vec operator-() const {
        Vec r;
        for (int i = 0; i < N; i++) r.d[i] = -d[i];
        return r;
    }
    Vec operator*(Real s) const {
        Vec r;
        for (int i = 0; i < N; i++) r.d[i] = d[i] * s;
        return r;
    }
    Vec operator/(Real s) const { return *this * (Real(1) / s); }
    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < N; i++) d[i] += o.d[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < N; i++) d[i] -= o.d[i];
        return *this;
    }
    Vec& operator*=(Real s) {
        for (int i = 0; i < N; i++) d[i] *= s;
        return *this;
    }
    bool operator==(const Vec& o) const { return d == o.d; }
};

template <int N>
inline Vec<N> operator*(Real s, const Vec<N>& v) {
    return v * s;
}

template <int N>
inline Real dot(const Vec<N>& a, const Vec<N>& b) {
    Real s = 0;
    for (int i = 0; i < N; i++) s += a[i] * b[i];
    return s;
}

template <int N>
inline Real norm_sq(const Vec<N>& a) {
    return dot(a, a);
}

template <int N>
inline Real norm(const Vec<N>& a) {
    return std::sqrt(norm_sq(a));
}

template <int N>
inline Vec<N> normalized(const Vec<N>& a, Real fallback_eps = 1e-30) {
    Real n = norm(a);
    if (n < fallback_eps) {
        Vec<N> e;
        e[0] = 1;
        return e;
    }
    return a / n;
}

template <int N>
inline Vec<N> cwise_min(const Vec<N>& a, const Vec<N>& b) {
    Vec<N> r;
    for (int i = 0; i < N; i++) r[i] = std::min(a[i], b[i]);
    return r;
}

template <int N>
inline Vec<N> cwise_max(const Vec<N>& a, const Vec<N>& b) {
    Vec<N> r;
    for (int i = 0; i < N; i++) r[i] = std::max(a[i], b[i]);
    return r;
}

using Vec2 = Vec<2>;
using Vec3 = Vec<3>;

// Row-major small square matrix.
template <int N>
struct Mat {
    std::array<std::array<Real, N>, N> m{};

    Mat() = default;

    static Mat identity() {
        Mat r;
        for (int i = 0; i < N; i++) r.m[i][i] = 1;
        return r;
    }
    static Mat diag(const Vec<N>& v) {
        Mat r;
        for (int i = 0; i < N; i++) r.m[i][i] = v[i];
        return r;
    }

    std::array<Real, N>& operator[](int r) { return m[r]; }
    const std::array<Real, N>& operator[](int r) const { return m[r]; }
    Real& operator()(int r, int c) { return m[r][c]; }
    Real operator()(int r, int c) const { return m[r][c]; }

    Mat operator+(const Mat& o) const {
        Mat r;
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }
    Mat operator-(const Mat& o) const {
        Mat r;
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) r.m[i][j] = m[i][j] - o.m[i][j];
        return r;
    }
    Mat operator-() const {
        Mat r;
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) r.m[i][j] = -m[i][j];
        return r;
    }
    Mat operator*(Real s) const {
        Mat r;
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) r.m[i][j] = m[i][j] * s;
        return r;
    }
    Mat& operator+=(const Mat& o) {
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) m[i][j] += o.m[i][j];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) m[i][j] -= o.m[i][j];
        return *this;
    }

    Vec<N> operator*(const Vec<N>& v) const {
        Vec<N> r;
        for (int i = 0; i < N; i++) {
            Real s = 0;
            for (int j = 0; j < N; j++) s += m[i][j] * v[j];
            r[i] = s;
        }
        return r;
    }
    Mat operator*(const Mat& o) const {
        Mat r;
        for (int i = 0; i < N; i++)
            for (int j = 0; j < N; j++) {
                Real s = 0;
                for (int k = 0; k < N; k++) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }
    bool operator==(const Mat& o) const { return m == o.m; }
};

template <int N>
inline Mat<N> operator*(Real s, const Mat<N>& a) {
    return a * s;
}

template <int N>
inline Mat<N> transpose(const Mat<N>& a) {
    Mat<N> r;
    for (int i = 0; i < N; i++)
        for (int j = 0; j < N; j++) r[i][j] = a[j][i];
    return r;
}

template <int N>
inline Vec<N> transposed_mul(const Mat<N>& a, const Vec<N>& v) {
    Vec<N> r;
    for (int j = 0; j < N; j++) {
        Real s = 0;
        for (int i = 0; i < N; i++) s += a[i][j] * v[i];
        r[j] = s;
    }
    return r;
}

template <int N>
inline Mat<N> outer(const Vec<N>& a, const Vec<N>& b) {
    Mat<N> r;
    for (int i = 0; i < N; i++)
        for (int j = 0; j < N; j++) r[i][j] = a[i] * b[j];
    return r;
}

template <int N>
inline Real trace(const Mat<N>& a) {
    Real s = 0;
    for (int i = 0; i < N; i++) s += a[i][i];
    return s;
}

// Frobenius inner product.
template <int N>
inline Real ddot(const Mat<N>& a, const Mat<N>& b) {
    Real s = 0;
    for (int i = 0; i < N; i++)
        for (int j = 0; j < N; j++) s += a[i][j] * b[i][j];
    return s;
}

template <int N>
inline Real frobenius_norm(const Mat<N>& a) {
    return std::sqrt(ddot(a, a));
}

inline Real det(const Mat<2>& a) { return a[0][0] * a[1][1] - a[0][1] * a[1][0]; }

inline Real det(const Mat<3>& a) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

inline Mat<2> inverse(const Mat<2>& a) {
    Real d = det(a);
    Mat<2> r;
    r[0][0] = a[1][1] / d;
    r[0][1] = -a[0][1] / d;
    r[1][0] = -a[1][0] / d;
    r[1][1] = a[0][0] / d;
    return r;
}

inline Mat<3> inverse(const Mat<3>& a) {
    Real d = det(a);
    Mat<3> r;
    r[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / d;
    r[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / d;
    r[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / d;
    r[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / d;
    r[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / d;
    r[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / d;
    r[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / d;
    r[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / d;
    r[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / d;
    return r;
}

// Cofactor matrix: det(A) * inv(A)^T. Well defined also for singular A.
inline Mat<2> cofactor(const Mat<2>& a) {
    Mat<2> r;
    r[0][0] = a[1][1];
    r[0][1] = -a[1][0];
    r[1][0] = -a[0][1];
    r[1][1] = a[0][0];
    return r;
}

inline Mat<3> cofactor(const Mat<3>& a) {
    Mat<3> r;
    r[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    r[0][1] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    r[0][2] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    r[1][0] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
    r[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
    r[1][2] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
    r[2][0] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
    r[2][1] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
    r[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    return r;
}

using Mat2 = Mat<2>;
using Mat3 = Mat<3>;

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return Vec3(a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0]);
}

inline Real cross2(const Vec2& a, const Vec2& b) { return a[0] * b[1] - a[1] * b[0]; }

// 90 degree counter-clockwise rotation of a plane vector.
inline Vec2 perp(const Vec2& v) { return Vec2(-v[1], v[0]); }

inline Mat3 skew(const Vec3& w) {
    Mat3 r;
    r[0][1] = -w[2];
    r[0][2] = w[1];
    r[1][0] = w[2];
    r[1][2] = -w[0];
    r[2][0] = -w[1];
    r[2][1] = w[0];
    return r;
}

// ax(M) satisfies <skew(u), M> = dot(u, ax(M)).
inline Vec3 ax(const Mat3& m) {
    return Vec3(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
}

inline Real ax2(const Mat2& m) { return m[1][0] - m[0][1]; }

inline Mat2 rot2(Real angle) {
    Real c = std::cos(angle), s = std::sin(angle);
    Mat2 r;
    r[0][0] = c;
    r[0][1] = -s;
    r[1][0] = s;
    r[1][1] = c;
    return r;
}

// Rodrigues' formula.
inline Mat3 exp_so3(const Vec3& w) {
    Real th = norm(w);
    Mat3 k = skew(w);
    Real a, b;
    if (th < 1e-8) {
        a = 1 - th * th / 6;
        b = 0.5 - th * th / 24;
    } else {
        a = std::sin(th) / th;
        b = (1 - std::cos(th)) / (th * th);
    }
    return Mat3::identity() + a * k + b * (k * k);
}

// Right Jacobian of the exponential map: Exp(w + dw) = Exp(w) Exp(Jr(w) dw) + O(dw^2).
inline Mat3 right_jacobian_so3(const Vec3& w) {
    Real th = norm(w);
    Mat3 k = skew(w);
    Real a, b;
    if (th < 1e-6) {
        a = 0.5 - th * th / 24;
        b = Real(1) / 6 - th * th / 120;
    } else {
        a = (1 - std::cos(th)) / (th * th);
        b = (th - std::sin(th)) / (th * th * th);
    }
    return Mat3::identity() - a * k + b * (k * k);
}

// Angular velocity is a scalar in the plane, a 3-vector in space.
template <int D>
using AngVec = Vec<D == 2 ? 1 : 3>;

template <int D>
inline Vec<D> ang_cross(const AngVec<D>& w, const Vec<D>& r) {
    if constexpr (D == 2)
        return perp(r) * w[0];
    else
        return cross(Vec3(w[0], w[1], w[2]), r);
}

template <int D>
inline Mat<D> rotation_step(const AngVec<D>& w, Real dt) {
    if constexpr (D == 2)
        return rot2(w[0] * dt);
    else
        return exp_so3(Vec3(w[0], w[1], w[2]) * dt);
}

// Advance R_new = Exp(w*dt) * R_old.
template <int D>
inline Mat<D> advance_rotation(const Mat<D>& R_old, const AngVec<D>& w, Real dt) {
    return rotation_step<D>(w, dt) * R_old;
}

// Reverse of advance_rotation: accumulates into R_old_bar and w_bar.
template <int D>
inline void advance_rotation_vjp(const Mat<D>& R_old, const AngVec<D>& w, Real dt,
                                 const Mat<D>& R_new_bar, Mat<D>& R_old_bar,
                                 AngVec<D>& w_bar) {
    Mat<D> E = rotation_step<D>(w, dt);
    R_old_bar += transpose(E) * R_new_bar;
    if constexpr (D == 2) {
        // dE/dphi = E * J90, phi = w*dt
        Mat2 j90;
        j90[0][1] = -1;
        j90[1][0] = 1;
        Real phi_bar = ddot(E * j90 * R_old, R_new_bar);
        w_bar[0] += dt * phi_bar;
    } else {
        // dE = E * skew(Jr(w dt) dphi), phi = w*dt
        Vec3 wv(w[0], w[1], w[2]);
        Mat3 jr = right_jacobian_so3(wv * dt);
        Vec3 g = ax(transpose(E) * R_new_bar * transpose(R_old));
        Vec3 phi_bar = transposed_mul(jr, g);
        for (int i = 0; i < 3; i++) w_bar[i] += dt * phi_bar[i];
    }
}

inline bool finite(Real x) { return std::isfinite(x); }

template <int N>
inline bool finite(const Vec<N>& v) {
    for (int i = 0; i < N; i++)
        if (!std::isfinite(v[i])) return false;
    return true;
}

template <int N>
inline bool finite(const Mat<N>& m) {
    for (int i = 0; i < N; i++)
        for (int j = 0; j < N; j++)
            if (!std::isfinite(m[i][j])) return false;
    return true;
}

inline Real clamp(Real x, Real lo, Real hi) { return std::min(std::max(x, lo), hi); }

}  // namespace flume
