#pragma once

#include "flume/svd.hpp"
#include "flume/types.hpp"

namespace flume {

// Fixed corotated energy density: mu * sum (sigma_i - 1)^2 + lambda/2 (J - 1)^2.
template <int D>
inline Real corotated_energy(const Mat<D>& f, Real mu, Real lambda) {
    SvdTriple<D> t = svd(f);
    Real e = 0;
    for (int i = 0; i < D; i++) e += (t.sigma[i] - 1) * (t.sigma[i] - 1);
    Real j = det(f);
    return mu * e + 0.5 * lambda * (j - 1) * (j - 1);
}

// First Piola-Kirchhoff stress of the fixed corotated model:
//   P(F) = 2 mu (F - R) + lambda (J - 1) J F^{-T}
template <int D>
inline Mat<D> corotated_stress(const Mat<D>& f, Real mu, Real lambda,
                               long particle_id = -1) {
    Real j = det(f);
    if (j <= 0)
        throw DegenerateDeformation("corotated_stress: det(F) <= 0", particle_id);
    Mat<D> p = cofactor(f) * (lambda * (j - 1));  // cofactor(F) = J F^{-T}
    if (mu != 0) {
        Mat<D> r = polar_rotation(f);
        p += (f - r) * (2 * mu);
    }
    return p;
}

// Reverse of corotated_stress: F_bar contribution from P_bar.
template <int D>
inline Mat<D> corotated_stress_vjp(const Mat<D>& f, Real mu, Real lambda,
                                   const Mat<D>& p_bar) {
    Real j = det(f);
    Mat<D> finv_t = transpose(inverse(f));
    Mat<D> g = finv_t * j;  // cofactor
    // d[lambda (J-1) J F^{-T}] terms
    Real s = lambda * (j - 1) * j;
    Mat<D> f_bar = g * (lambda * (2 * j - 1) * ddot(p_bar, finv_t));
    f_bar -= (finv_t * transpose(p_bar) * finv_t) * s;
    if (mu != 0) {
        f_bar += p_bar * (2 * mu);
        SvdTriple<D> t = svd(f);
        f_bar -= polar_rotation_vjp(t, p_bar) * (2 * mu);
    }
    return f_bar;
}

// Clamp singular values into [1 - theta_c, 1 + theta_s].
template <int D>
inline Mat<D> box_yield_project(const Mat<D>& f, Real theta_c, Real theta_s,
                                long particle_id = -1) {
    if (det(f) <= 0)
        throw DegenerateDeformation("box_yield_project: det(F) <= 0", particle_id);
    SvdTriple<D> t = svd(f);
    Vec<D> s;
    for (int i = 0; i < D; i++) s[i] = clamp(t.sigma[i], 1 - theta_c, 1 + theta_s);
    return t.U * Mat<D>::diag(s) * transpose(t.V);
}

template <int D>
inline Mat<D> box_yield_project_vjp(const Mat<D>& f, Real theta_c, Real theta_s,
                                    const Mat<D>& out_bar) {
    SvdTriple<D> t = svd(f);
    Vec<D> g;
    Mat<D> jg;
    for (int i = 0; i < D; i++) {
        g[i] = clamp(t.sigma[i], 1 - theta_c, 1 + theta_s);
        bool inside = t.sigma[i] > 1 - theta_c && t.sigma[i] < 1 + theta_s;
        jg[i][i] = inside ? 1 : 0;
    }
    return spectral_map_vjp(t, g, jg, out_bar);
}

// Radial return of the deviatoric Hencky strain onto the yield surface
// 2 mu |dev(eps)| = sigma_y; the trace (volume) is preserved.
template <int D>
inline Mat<D> von_mises_project(const Mat<D>& f, Real sigma_y, Real mu,
                                long particle_id = -1) {
    SvdTriple<D> t = svd(f);
    for (int i = 0; i < D; i++)
        if (t.sigma[i] <= 0)
            throw DegenerateDeformation("von_mises_project: singular value <= 0",
                                        particle_id);
    Vec<D> eps;
    Real mean = 0;
    for (int i = 0; i < D; i++) {
        eps[i] = std::log(t.sigma[i]);
        mean += eps[i];
    }
    mean /= D;
    Vec<D> dev = eps;
    for (int i = 0; i < D; i++) dev[i] -= mean;
    Real dn = norm(dev);
    if (2 * mu * dn <= sigma_y) return f;
    Real scale = sigma_y / (2 * mu * dn);
    Vec<D> s;
    for (int i = 0; i < D; i++) s[i] = std::exp(mean + scale * dev[i]);
    return t.U * Mat<D>::diag(s) * transpose(t.V);
}

template <int D>
inline Mat<D> von_mises_project_vjp(const Mat<D>& f, Real sigma_y, Real mu,
                                    const Mat<D>& out_bar) {
    SvdTriple<D> t = svd(f);
    Vec<D> eps;
    Real mean = 0;
    for (int i = 0; i < D; i++) {
        eps[i] = std::log(t.sigma[i]);
        mean += eps[i];
    }
    mean /= D;
    Vec<D> dev = eps;
    for (int i = 0; i < D; i++) dev[i] -= mean;
    Real dn = norm(dev);

    Vec<D> g;
    Mat<D> jg;
    if (2 * mu * dn <= sigma_y) {
        g = t.sigma;
        jg = Mat<D>::identity();
    } else {
        Real scale = sigma_y / (2 * mu * dn);
        Vec<D> eps_new;
        for (int i = 0; i < D; i++) {
            eps_new[i] = mean + scale * dev[i];
            g[i] = std::exp(eps_new[i]);
        }
        // d eps_new / d eps = (1/D) 11^T + scale (I - (1/D) 11^T - dh dh^T),
        // dh = dev / |dev|; then chain through log and exp.
        Vec<D> dh = dev / dn;
        for (int i = 0; i < D; i++) {
            for (int k = 0; k < D; k++) {
                Real m = (i == k ? 1.0 : 0.0) - Real(1) / D;
                Real jeps = Real(1) / D + scale * (m - dh[i] * dh[k]);
                jg[i][k] = g[i] * jeps / t.sigma[k];
            }
        }
    }
    return spectral_map_vjp(t, g, jg, out_bar);
}

// Reset to the volume-preserving isotropic form J^(1/D) I.
template <int D>
inline Mat<D> liquid_project(const Mat<D>& f, long particle_id = -1) {
    Real j = det(f);
    if (j <= 0) throw DegenerateDeformation("liquid_project: det(F) <= 0", particle_id);
    return Mat<D>::identity() * std::pow(j, Real(1) / D);
}

template <int D>
inline Mat<D> liquid_project_vjp(const Mat<D>& f, const Mat<D>& out_bar) {
    Real j = det(f);
    // out = J^(1/D) I; d out = (1/D) J^(1/D - 1) dJ I; dJ = <cofactor(F), dF>
    Real c = trace(out_bar) * std::pow(j, Real(1) / D) / (D * j);
    return cofactor(f) * c;
}

// Mass-weighted Kabsch fit: rotation and translation minimizing
// sum_i m_i | R (x0_i - c0) + c - x_i |^2, det(R) = +1.
template <int D>
struct RigidFit {
    Mat<D> rotation;
    Vec<D> translation;  // current mass centroid c
};

template <int D>
inline RigidFit<D> rigid_shape_match(const std::vector<Vec<D>>& current,
                                     const std::vector<Vec<D>>& rest_offsets,
                                     const std::vector<Real>& masses,
                                     int body_id = -1) {
    size_t n = current.size();
    if (n != rest_offsets.size() || n != masses.size() || n < D)
        throw RigidityError("rigid_shape_match: bad point lists", body_id);
    Real total = 0;
    Vec<D> c;
    for (size_t i = 0; i < n; i++) {
        total += masses[i];
        c += current[i] * masses[i];
    }
    c = c / total;
    Mat<D> a;
    for (size_t i = 0; i < n; i++) a += outer(current[i] - c, rest_offsets[i]) * masses[i];

    SvdTriple<D> t = svd(a);
    // rank D-1 is enough to pin the rotation; below that the fit is ambiguous
    if (t.sigma[D - 2] < 1e-12 * std::max(t.sigma[0], Real(1e-30)))
        throw RigidityError("rigid_shape_match: degenerate covariance", body_id);

    Mat<D> r = t.U * transpose(t.V);
    if (det(a) < 0) {
        // flip the least-significant direction to force det(R) = +1
        Mat<D> flip = Mat<D>::identity();
        flip[D - 1][D - 1] = -1;
        r = t.U * flip * transpose(t.V);
    }
    return {r, c};
}

}  // namespace flume
