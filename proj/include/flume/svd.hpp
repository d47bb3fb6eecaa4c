#pragma once

#include "flume/core.hpp"

namespace flume {

template <int N>
struct SvdTriple {
    Mat<N> U;
    Vec<N> sigma;  // descending, >= 0
    Mat<N> V;

    Mat<N> reconstruct() const { return U * Mat<N>::diag(sigma) * transpose(V); }
};

namespace detail {

// One-sided Jacobi: orthogonalize the columns of B = A*V by plane rotations.
template <int N>
inline void one_sided_jacobi(Mat<N>& b, Mat<N>& v) {
    v = Mat<N>::identity();
    for (int sweep = 0; sweep < 30; sweep++) {
        Real off = 0;
        for (int p = 0; p < N - 1; p++) {
            for (int q = p + 1; q < N; q++) {
                Real apq = 0, app = 0, aqq = 0;
                for (int i = 0; i < N; i++) {
                    apq += b[i][p] * b[i][q];
                    app += b[i][p] * b[i][p];
                    aqq += b[i][q] * b[i][q];
                }
                off = std::max(off, std::abs(apq) / (std::sqrt(app * aqq) + 1e-300));
                if (std::abs(apq) < 1e-300) continue;
                Real tau = (aqq - app) / (2 * apq);
                Real t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1 + tau * tau));
                Real c = 1 / std::sqrt(1 + t * t);
                Real s = c * t;
                for (int i = 0; i < N; i++) {
                    Real bp = b[i][p], bq = b[i][q];
                    b[i][p] = c * bp - s * bq;
                    b[i][q] = s * bp + c * bq;
                }
                for (int i = 0; i < N; i++) {
                    Real vp = v[i][p], vq = v[i][q];
                    v[i][p] = c * vp - s * vq;
                    v[i][q] = s * vp + c * vq;
                }
            }
        }
        if (off < 1e-15) break;
    }
}

}  // namespace detail

// Full SVD with sigma sorted descending and nonnegative. Signs are fixed so
// that det(U) = det(V) whenever det(A) >= 0; for det(A) < 0 we keep det(U) = +1
// and det(V) = -1.
template <int N>
inline SvdTriple<N> svd(const Mat<N>& a) {
    SvdTriple<N> out;
    Mat<N> b = a;
    detail::one_sided_jacobi(b, out.V);

    std::array<int, N> order;
    Vec<N> sig;
    for (int j = 0; j < N; j++) {
        Real s = 0;
        for (int i = 0; i < N; i++) s += b[i][j] * b[i][j];
        sig[j] = std::sqrt(s);
        order[j] = j;
    }
    std::sort(order.begin(), order.end(), [&](int x, int y) { return sig[x] > sig[y]; });

    Mat<N> u, v;
    for (int jj = 0; jj < N; jj++) {
        int j = order[jj];
        out.sigma[jj] = sig[j];
        for (int i = 0; i < N; i++) v[i][jj] = out.V[i][j];
        if (sig[j] > 1e-150) {
            for (int i = 0; i < N; i++) u[i][jj] = b[i][j] / sig[j];
        } else {
            for (int i = 0; i < N; i++) u[i][jj] = 0;
        }
    }

    // Rebuild near-zero columns of U orthogonal to the others.
    for (int j = 0; j < N; j++) {
        if (out.sigma[j] > 1e-150) continue;
        for (int axis = 0; axis < N; axis++) {
            Vec<N> c;
            c[axis] = 1;
            for (int k = 0; k < N; k++) {
                if (k == j) continue;
                Real proj = 0;
                for (int i = 0; i < N; i++) proj += u[i][k] * c[i];
                for (int i = 0; i < N; i++) c[i] -= proj * u[i][k];
            }
            Real n = norm(c);
            if (n > 1e-8) {
                for (int i = 0; i < N; i++) u[i][j] = c[i] / n;
                break;
            }
        }
    }

    out.U = u;
    out.V = v;

    // Flipping the last column of both factors keeps U S V^T and sigma intact
    // while toggling both determinants.
    if (det(out.U) < 0) {
        for (int i = 0; i < N; i++) {
            out.U[i][N - 1] = -out.U[i][N - 1];
            out.V[i][N - 1] = -out.V[i][N - 1];
        }
    }
    return out;
}

// Polar decomposition A = R S, R rotation (det +1 for det(A) > 0), S symmetric.
template <int N>
inline void polar(const Mat<N>& a, Mat<N>& r, Mat<N>& s) {
    SvdTriple<N> t = svd(a);
    r = t.U * transpose(t.V);
    s = t.V * Mat<N>::diag(t.sigma) * transpose(t.V);
}

template <int N>
inline Mat<N> polar_rotation(const Mat<N>& a) {
    SvdTriple<N> t = svd(a);
    return t.U * transpose(t.V);
}

// ---------------------------------------------------------------------------
// Reverse-mode building blocks.
// ---------------------------------------------------------------------------

// VJP of the full SVD A -> (U, sigma, V) with cotangents (u_bar, sig_bar, v_bar).
// Standard K-matrix form with denominators sigma_j^2 - sigma_i^2; near-degenerate
// pairs (gap < gap_tol) clamp the denominator, which biases the result but keeps
// it finite.
template <int N>
inline Mat<N> svd_vjp(const SvdTriple<N>& t, const Mat<N>& u_bar, const Vec<N>& sig_bar,
                      const Mat<N>& v_bar, Real gap_tol = 1e-8) {
    const Vec<N>& s = t.sigma;
    Mat<N> bu = transpose(t.U) * u_bar;
    Mat<N> bv = transpose(t.V) * v_bar;

    Mat<N> inner = Mat<N>::diag(sig_bar);
    for (int i = 0; i < N; i++) {
        for (int j = 0; j < N; j++) {
            if (i == j) continue;
            Real denom = s[j] * s[j] - s[i] * s[i];
            if (std::abs(denom) < gap_tol) denom = (denom >= 0 ? gap_tol : -gap_tol);
            inner[i][j] +=
                (s[j] * (bu[i][j] - bu[j][i]) + s[i] * (bv[i][j] - bv[j][i])) / denom;
        }
    }
    return t.U * inner * transpose(t.V);
}

// Stable VJP of a spectral map Y = U g(sigma) V^T at A = U diag(sigma) V^T.
// g maps singular values to new singular values and jg is its Jacobian.
// Off-diagonal coefficients are divided differences, so coincident singular
// values stay finite (symmetrized fallback when |s_j - s_i| < gap_tol).
template <int N>
inline Mat<N> spectral_map_vjp(const SvdTriple<N>& t, const Vec<N>& g,
                               const Mat<N>& jg, const Mat<N>& y_bar,
                               Real gap_tol = 1e-8) {
    const Vec<N>& s = t.sigma;
    Mat<N> q_bar = transpose(t.U) * y_bar * t.V;

    // dY = U Q V^T with, for i != j,
    //   Q_ij = a_ij P_ij + b_ij P_ji,      P = U^T dA V,
    //   a_ij = (s_j g_j - s_i g_i) / (s_j^2 - s_i^2)
    //   b_ij = (s_i g_j - s_j g_i) / (s_j^2 - s_i^2)
    // and Q_ii = [jg diag(P)]_i.
    Mat<N> p_bar;
    for (int i = 0; i < N; i++) {
        for (int j = 0; j < N; j++) {
            if (i == j) continue;
            Real sum = std::max(s[i] + s[j], Real(1e-300));
            Real diff = s[j] - s[i];
            Real dd_g, dd_sg;  // divided differences of g and of s*g
            if (std::abs(diff) < gap_tol) {
                Real gp = 0.5 * (jg[i][i] + jg[j][j] - jg[i][j] - jg[j][i]);
                dd_g = gp;
                dd_sg = 0.5 * (g[i] + g[j]) + 0.5 * (s[i] + s[j]) * gp;
            } else {
                dd_g = (g[j] - g[i]) / diff;
                dd_sg = (s[j] * g[j] - s[i] * g[i]) / diff;
            }
            Real a = dd_sg / sum;
            Real b = (s[i] * dd_g - g[i]) / sum;
            p_bar[i][j] += a * q_bar[i][j];
            p_bar[j][i] += b * q_bar[i][j];
        }
    }
    for (int i = 0; i < N; i++)
        for (int k = 0; k < N; k++) p_bar[k][k] += jg[i][k] * q_bar[i][i];

    return t.U * p_bar * transpose(t.V);
}

// VJP of the polar rotation R(A) = U V^T. Robust for repeated singular values
// (the solve involves sums, not differences, of singular values).
template <int N>
inline Mat<N> polar_rotation_vjp(const SvdTriple<N>& t, const Mat<N>& r_bar) {
    Mat<N> r = t.U * transpose(t.V);
    Mat<N> s = t.V * Mat<N>::diag(t.sigma) * transpose(t.V);
    if constexpr (N == 2) {
        Real tr = s[0][0] + s[1][1];
        if (std::abs(tr) < 1e-300) tr = 1e-300;
        Real g = ax2(transpose(r) * r_bar) / tr;
        Mat2 j90;
        j90[0][1] = -1;
        j90[1][0] = 1;
        return r * j90 * g;
    } else {
        // Solve (tr(S) I - S) g = ax(R^T R_bar); then A_bar = R skew(g).
        Mat3 l = Mat3::identity() * trace(s) - s;
        Vec3 rhs = ax(transpose(r) * r_bar);
        Vec3 g = inverse(l) * rhs;
        return r * skew(g);
    }
}

}  // namespace flume
