#pragma once

#include "flume/core.hpp"

namespace flume {

template <int D>
struct Pose {
    Vec<D> t;
    Mat<D> R = Mat<D>::identity();

    Vec<D> to_local(const Vec<D>& p) const { return transposed_mul(R, p - t); }
    Vec<D> to_world(const Vec<D>& q) const { return R * q + t; }
};

template <int D>
inline Pose<D> compose(const Pose<D>& a, const Pose<D>& b) {
    Pose<D> r;
    r.t = a.t + a.R * b.t;
    r.R = a.R * b.R;
    return r;
}

enum class ShapeKind { Sphere, Box, Capsule, Cylinder, HalfSpace };

inline const char* shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Box: return "box";
        case ShapeKind::Capsule: return "capsule";
        case ShapeKind::Cylinder: return "cylinder";
        case ShapeKind::HalfSpace: return "halfspace";
    }
    return "?";
}

// Analytic signed-distance shape in its local frame.
template <int D>
struct Shape {
    ShapeKind kind = ShapeKind::Sphere;
    Real radius = 0;          // sphere, capsule, cylinder
    Vec<D> half_extents;      // box
    Vec<D> seg_a, seg_b;      // capsule endpoints
    Vec<D> plane_normal;      // halfspace (unit)
    Real plane_offset = 0;    // halfspace
    Real half_height = 0;     // cylinder (local z axis)

    void validate() const {
        switch (kind) {
            case ShapeKind::Sphere:
                if (radius <= 0) throw SceneError("sphere radius must be positive");
                break;
            case ShapeKind::Box:
                for (int a = 0; a < D; a++)
                    if (half_extents[a] <= 0)
                        throw SceneError("box half extents must be positive");
                break;
            case ShapeKind::Capsule:
                if (radius <= 0) throw SceneError("capsule radius must be positive");
                break;
            case ShapeKind::Cylinder:
                if constexpr (D == 2)
                    throw SceneError("cylinder is a 3d shape; use sphere in 2d");
                if (radius <= 0 || half_height <= 0)
                    throw SceneError("cylinder radius and half height must be positive");
                break;
            case ShapeKind::HalfSpace:
                if (std::abs(norm(plane_normal) - 1) > 1e-9)
                    throw SceneError("halfspace normal must be unit length");
                break;
        }
    }
};

namespace sdf_detail {

template <int D>
inline Real sphere_dist(const Shape<D>& s, const Vec<D>& q) {
    return norm(q) - s.radius;
}

template <int D>
inline Real box_dist(const Shape<D>& s, const Vec<D>& q) {
    Vec<D> a;
    Real inside = -std::numeric_limits<Real>::infinity();
    Real out_sq = 0;
    for (int i = 0; i < D; i++) {
        a[i] = std::abs(q[i]) - s.half_extents[i];
        inside = std::max(inside, a[i]);
        Real m = std::max(a[i], Real(0));
        out_sq += m * m;
    }
    if (inside <= 0) return inside;
    return std::sqrt(out_sq);
}

template <int D>
inline void capsule_closest(const Shape<D>& s, const Vec<D>& q, Vec<D>& e, bool& interior) {
    Vec<D> u = s.seg_b - s.seg_a;
    Real uu = norm_sq(u);
    Real t = uu > 0 ? clamp(dot(q - s.seg_a, u) / uu, 0.0, 1.0) : 0.0;
    interior = (t > 0 && t < 1);
    e = q - (s.seg_a + u * t);
}

template <int D>
inline Real capsule_dist(const Shape<D>& s, const Vec<D>& q) {
    Vec<D> e;
    bool interior;
    capsule_closest(s, q, e, interior);
    return norm(e) - s.radius;
}

inline Real cylinder_dist(const Shape<3>& s, const Vec3& q) {
    Real rho = std::sqrt(q[0] * q[0] + q[1] * q[1]);
    Real y1 = rho - s.radius;
    Real y2 = std::abs(q[2]) - s.half_height;
    Real inside = std::min(std::max(y1, y2), Real(0));
    Real m1 = std::max(y1, Real(0)), m2 = std::max(y2, Real(0));
    return inside + std::sqrt(m1 * m1 + m2 * m2);
}

template <int D>
inline Real halfspace_dist(const Shape<D>& s, const Vec<D>& q) {
    return dot(s.plane_normal, q) - s.plane_offset;
}

}  // namespace sdf_detail

template <int D>
inline Real sdf_local_distance(const Shape<D>& s, const Vec<D>& q) {
    using namespace sdf_detail;
    switch (s.kind) {
        case ShapeKind::Sphere: return sphere_dist(s, q);
        case ShapeKind::Box: return box_dist(s, q);
        case ShapeKind::Capsule: return capsule_dist(s, q);
        case ShapeKind::Cylinder:
            if constexpr (D == 3) return cylinder_dist(s, q);
            break;
        case ShapeKind::HalfSpace: return halfspace_dist(s, q);
    }
    return 0;
}

// Raw spatial gradient of the distance (unit length almost everywhere).
// Falls back to +x at gradient singularities so the result is always defined.
template <int D>
inline Vec<D> sdf_local_grad(const Shape<D>& s, const Vec<D>& q) {
    Vec<D> fallback;
    fallback[0] = 1;
    switch (s.kind) {
        case ShapeKind::Sphere: {
            Real n = norm(q);
            if (n < 1e-12) return fallback;
            return q / n;
        }
        case ShapeKind::Box: {
            Vec<D> a, m;
            Real inside = -std::numeric_limits<Real>::infinity();
            int k = 0;
            bool out = false;
            for (int i = 0; i < D; i++) {
                a[i] = std::abs(q[i]) - s.half_extents[i];
                m[i] = std::max(a[i], Real(0));
                if (a[i] > 0) out = true;
                if (a[i] > inside) {
                    inside = a[i];
                    k = i;
                }
            }
            if (!out) {
                Vec<D> g;
                g[k] = q[k] >= 0 ? 1 : -1;
                return g;
            }
            Real mn = norm(m);
            if (mn < 1e-12) return fallback;
            Vec<D> g;
            for (int i = 0; i < D; i++) g[i] = (q[i] >= 0 ? 1 : -1) * m[i] / mn;
            return g;
        }
        case ShapeKind::Capsule: {
            Vec<D> e;
            bool interior;
            sdf_detail::capsule_closest(s, q, e, interior);
            Real n = norm(e);
            if (n < 1e-12) return fallback;
            return e / n;
        }
        case ShapeKind::Cylinder: {
            if constexpr (D == 3) {
                Real rho = std::sqrt(q[0] * q[0] + q[1] * q[1]);
                Real y1 = rho - s.radius;
                Real y2 = std::abs(q[2]) - s.half_height;
                Real sz = q[2] >= 0 ? 1 : -1;
                Vec3 radial = rho > 1e-12 ? Vec3(q[0] / rho, q[1] / rho, 0)
                                          : Vec3(1, 0, 0);
                if (y1 <= 0 && y2 <= 0)
                    return y1 > y2 ? radial : Vec3(0, 0, sz);
                if (y1 > 0 && y2 <= 0) return radial;
                if (y1 <= 0 && y2 > 0) return Vec3(0, 0, sz);
                Real phi = std::sqrt(y1 * y1 + y2 * y2);
                if (phi < 1e-12) return Vec<D>(fallback);
                return radial * (y1 / phi) + Vec3(0, 0, sz * (y2 / phi));
            }
            break;
        }
        case ShapeKind::HalfSpace: return s.plane_normal;
    }
    return fallback;
}

// Hessian-vector product of the local distance. Piecewise analytic; zero on
// flat regions, rank-deficient curvature elsewhere.
template <int D>
inline Vec<D> sdf_local_hess_vec(const Shape<D>& s, const Vec<D>& q, const Vec<D>& u) {
    switch (s.kind) {
        case ShapeKind::Sphere: {
            Real n = norm(q);
            if (n < 1e-12) return Vec<D>{};
            Vec<D> qh = q / n;
            return (u - qh * dot(qh, u)) / n;
        }
        case ShapeKind::Box: {
            Vec<D> a, m;
            bool out = false;
            for (int i = 0; i < D; i++) {
                a[i] = std::abs(q[i]) - s.half_extents[i];
                m[i] = std::max(a[i], Real(0));
                if (a[i] > 0) out = true;
            }
            if (!out) return Vec<D>{};
            Real mn = norm(m);
            if (mn < 1e-12) return Vec<D>{};
            Real smu = 0;  // sum_k s_k m_k u_k
            for (int i = 0; i < D; i++) smu += (q[i] >= 0 ? 1 : -1) * m[i] * u[i];
            Vec<D> r;
            for (int i = 0; i < D; i++) {
                Real si = q[i] >= 0 ? 1 : -1;
                Real active = a[i] > 0 ? 1 : 0;
                r[i] = active * u[i] / mn - si * m[i] * smu / (mn * mn * mn);
            }
            return r;
        }
        case ShapeKind::Capsule: {
            Vec<D> e;
            bool interior;
            sdf_detail::capsule_closest(s, q, e, interior);
            Real n = norm(e);
            if (n < 1e-12) return Vec<D>{};
            Vec<D> eh = e / n;
            Vec<D> r = (u - eh * dot(eh, u)) / n;
            if (interior) {
                Vec<D> ua = s.seg_b - s.seg_a;
                Real un = norm(ua);
                if (un > 1e-12) {
                    Vec<D> uh = ua / un;
                    r -= uh * (dot(uh, u) / n);
                }
            }
            return r;
        }
        case ShapeKind::Cylinder: {
            if constexpr (D == 3) {
                Real rho = std::sqrt(q[0] * q[0] + q[1] * q[1]);
                Real y1 = rho - s.radius;
                Real y2 = std::abs(q[2]) - s.half_height;
                Real sz = q[2] >= 0 ? 1 : -1;
                if (rho < 1e-12) return Vec<D>{};
                Vec3 radial(q[0] / rho, q[1] / rho, 0);
                // curvature of the radial coordinate (xy block)
                Vec3 hrho_u(u[0] / rho, u[1] / rho, 0);
                hrho_u -= radial * (dot(radial, u) / rho);
                bool side = (y1 > 0 && y2 <= 0) || (y1 <= 0 && y2 <= 0 && y1 > y2);
                if (side) return hrho_u;
                if (y1 <= 0 || y2 <= 0) return Vec<D>{};  // cap or interior cap side
                // edge region: phi = |y|, y = (y1, y2)
                Real phi = std::sqrt(y1 * y1 + y2 * y2);
                Vec2 yh(y1 / phi, y2 / phi);
                Vec2 ju(dot(radial, u), sz * u[2]);
                Vec2 hf_ju = (ju - yh * dot(yh, ju)) / phi;
                Vec3 r = radial * hf_ju[0] + Vec3(0, 0, sz * hf_ju[1]);
                r += hrho_u * (y1 / phi);
                return r;
            }
            break;
        }
        case ShapeKind::HalfSpace: return Vec<D>{};
    }
    return Vec<D>{};
}

// A shape placed by a rigid pose.
template <int D>
struct SdfPrimitive {
    Shape<D> shape;
    Pose<D> pose;
};

template <int D>
struct SdfSample {
    Real distance = 0;
    Vec<D> normal;
};

// Signed distance and outward unit normal at a world point. Negative inside.
template <int D>
inline SdfSample<D> sdf_eval(const SdfPrimitive<D>& prim, const Vec<D>& p) {
    Vec<D> q = prim.pose.to_local(p);
    SdfSample<D> out;
    out.distance = sdf_local_distance(prim.shape, q);
    Vec<D> g = sdf_local_grad(prim.shape, q);
    out.normal = normalized(prim.pose.R * g);
    return out;
}

// Accumulates pose cotangents for d_bar and n_bar at a fixed world point.
template <int D>
inline void sdf_eval_pose_vjp(const SdfPrimitive<D>& prim, const Vec<D>& p, Real d_bar,
                              const Vec<D>& n_bar, Vec<D>& t_bar, Mat<D>& R_bar) {
    const Pose<D>& pose = prim.pose;
    Vec<D> q = pose.to_local(p);
    Vec<D> g = sdf_local_grad(prim.shape, q);
    Real gn = norm(g);

    Vec<D> q_bar = g * d_bar;
    if (gn > 1e-12) {
        Vec<D> ng = g / gn;
        Vec<D> n = pose.R * ng;
        // n = R g / |R g|
        Vec<D> n_bar_proj = (n_bar - n * dot(n, n_bar)) / gn;
        R_bar += outer(n_bar_proj, g);
        Vec<D> g_bar = transposed_mul(pose.R, n_bar_proj);
        q_bar += sdf_local_hess_vec(prim.shape, q, g_bar);
    }
    // q = R^T (p - t)
    t_bar += -(pose.R * q_bar);
    R_bar += outer(p - pose.t, q_bar);
}

}  // namespace flume
