#pragma once

#include <json.hpp>

#include "flume/gas.hpp"
#include "flume/rng.hpp"
#include "flume/types.hpp"

namespace flume {

using nlohmann::json;

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <int D>
inline Vec<D> parse_vec(const json& j, const char* what) {
    if (!j.is_array() || j.size() != D)
        throw SceneError(std::string(what) + ": expected an array of " +
                         std::to_string(D) + " numbers");
    Vec<D> v;
    for (int a = 0; a < D; a++) v[a] = j[size_t(a)].get<Real>();
    return v;
}

template <int D>
inline Shape<D> parse_shape(const json& j) {
    if (!j.contains("type")) throw SceneError("shape: missing type");
    std::string type = j.at("type").get<std::string>();
    Shape<D> s;
    if (type == "sphere") {
        s.kind = ShapeKind::Sphere;
        s.radius = j.at("radius").get<Real>();
    } else if (type == "box") {
        s.kind = ShapeKind::Box;
        s.half_extents = parse_vec<D>(j.at("half_extents"), "box.half_extents");
    } else if (type == "capsule") {
        s.kind = ShapeKind::Capsule;
        s.radius = j.at("radius").get<Real>();
        s.seg_a = parse_vec<D>(j.at("a"), "capsule.a");
        s.seg_b = parse_vec<D>(j.at("b"), "capsule.b");
    } else if (type == "cylinder") {
        s.kind = ShapeKind::Cylinder;
        s.radius = j.at("radius").get<Real>();
        s.half_height = j.at("half_height").get<Real>();
    } else if (type == "halfspace") {
        s.kind = ShapeKind::HalfSpace;
        s.plane_normal = normalized(parse_vec<D>(j.at("normal"), "halfspace.normal"));
        s.plane_offset = j.value("offset", 0.0);
    } else {
        throw SceneError("shape: unknown type '" + type + "'");
    }
    s.validate();
    return s;
}

template <int D>
inline Pose<D> parse_pose(const json& j) {
    Pose<D> p;
    if (j.contains("center")) p.t = parse_vec<D>(j.at("center"), "center");
    if (j.contains("position")) p.t = parse_vec<D>(j.at("position"), "position");
    if constexpr (D == 2) {
        if (j.contains("angle")) p.R = rot2(j.at("angle").get<Real>());
    } else {
        if (j.contains("axis_angle"))
            p.R = exp_so3(parse_vec<3>(j.at("axis_angle"), "axis_angle"));
    }
    return p;
}

inline MaterialKind parse_material_kind(const std::string& k) {
    if (k == "elastic") return MaterialKind::Elastic;
    if (k == "plastic") return MaterialKind::Plastic;
    if (k == "liquid") return MaterialKind::Liquid;
    if (k == "viscous_liquid") return MaterialKind::ViscousLiquid;
    if (k == "non_newtonian") return MaterialKind::NonNewtonian;
    if (k == "rigid") return MaterialKind::Rigid;
    throw SceneError("unknown material kind '" + k + "'");
}

// Local-frame bounding box of a shape, padded a touch for lattice coverage.
template <int D>
inline void shape_bbox(const Shape<D>& s, Vec<D>& lo, Vec<D>& hi) {
    switch (s.kind) {
        case ShapeKind::Sphere:
            lo = Vec<D>(-s.radius);
            hi = Vec<D>(s.radius);
            break;
        case ShapeKind::Box:
            lo = -s.half_extents;
            hi = s.half_extents;
            break;
        case ShapeKind::Capsule:
            lo = cwise_min(s.seg_a, s.seg_b) - Vec<D>(s.radius);
            hi = cwise_max(s.seg_a, s.seg_b) + Vec<D>(s.radius);
            break;
        case ShapeKind::Cylinder:
            if constexpr (D == 3) {
                lo = Vec3(-s.radius, -s.radius, -s.half_height);
                hi = Vec3(s.radius, s.radius, s.half_height);
            }
            break;
        case ShapeKind::HalfSpace:
            throw SceneError("halfspace cannot be particle-sampled");
    }
}

// Lattice sampler: particles_per_cell_axis^D points per grid cell, optionally
// jittered, kept where the shape's signed distance is non-positive.
template <int D>
inline std::vector<Vec<D>> sample_shape(const Shape<D>& shape, const Pose<D>& pose,
                                        Real dx, int ppc_axis, Real jitter, Rng& rng) {
    Vec<D> lo, hi;
    shape_bbox(shape, lo, hi);
    Real spacing = dx / ppc_axis;
    IVec<D> counts;
    Vec<D> start;
    for (int a = 0; a < D; a++) {
        counts[a] = std::max(1, int(std::round((hi[a] - lo[a]) / spacing)));
        // center the lattice within the bounding box
        start[a] = lo[a] + 0.5 * ((hi[a] - lo[a]) - counts[a] * spacing) + 0.5 * spacing;
    }
    std::vector<Vec<D>> out;
    IVec<D> it{};
    for (;;) {
        Vec<D> q;
        for (int a = 0; a < D; a++) q[a] = start[a] + it[a] * spacing;
        Vec<D> jq = q;
        if (jitter > 0)
            for (int a = 0; a < D; a++)
                jq[a] += jitter * spacing * rng.uniform(-0.5, 0.5);
        if (sdf_local_distance(shape, jq) <= 0) out.push_back(pose.to_world(jq));
        int a = 0;
        for (; a < D; a++) {
            if (++it[a] < counts[a]) break;
            it[a] = 0;
        }
        if (a == D) break;
    }
    return out;
}

template <int D>
struct World {
    Scene<D> scene;
    SimState<D> state;
    json loss_spec;       // interpreted by the objectives module
    json optimizer_spec;  // interpreted by the optimizers
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    std::array<Real, 6> action_lo{};
    std::array<Real, 6> action_hi{};
};

template <int D>
inline World<D> build_scene(const json& spec) {
    World<D> w;
    w.config_hash = fnv1a(spec.dump());
    w.seed = spec.value("seed", 0ull);
    Rng rng(w.seed);

    SimConfig<D>& cfg = w.scene.config;
    if (spec.value("dim", 2) != D) throw SceneError("scene dim mismatch");
    cfg.grid_resolution = spec.value("grid_resolution", 64);
    cfg.gas_resolution = spec.value("gas_resolution", 0);
    if (spec.contains("domain")) cfg.domain_extent = parse_vec<D>(spec.at("domain"), "domain");
    cfg.dt_substep = spec.value("dt_substep", 1e-4);
    cfg.substeps_per_step = spec.value("substeps_per_step", 10);
    if (spec.contains("gravity")) cfg.gravity = parse_vec<D>(spec.at("gravity"), "gravity");
    cfg.boundary_width = spec.value("boundary_width", 3);
    cfg.contact_eps_cells = spec.value("contact_eps_cells", 3.0);
    cfg.cfl_fraction = spec.value("cfl_fraction", 0.9);
    cfg.hard_contact = spec.value("hard_contact", false);
    cfg.validate();

    for (const json& jm : spec.value("materials", json::array())) {
        MaterialParams m;
        m.name = jm.value("name", "material_" + std::to_string(w.scene.materials.size()));
        m.kind = parse_material_kind(jm.value("kind", "elastic"));
        m.mu = jm.value("mu", 0.0);
        m.lambda = jm.value("lambda", 0.0);
        m.rho = jm.value("rho", 1.0);
        m.yield.theta_c = jm.value("theta_c", 0.025);
        m.yield.theta_s = jm.value("theta_s", 0.025);
        m.yield.sigma_y = jm.value("sigma_y", 50.0);
        m.validate();
        w.scene.materials.push_back(m);
    }

    auto find_material = [&](const std::string& name) {
        for (size_t i = 0; i < w.scene.materials.size(); i++)
            if (w.scene.materials[i].name == name) return int(i);
        throw SceneError("unknown material '" + name + "'");
    };

    // Effectors come first so emitters may reference them.
    for (const json& je : spec.value("effectors", json::array())) {
        Effector<D> e;
        e.sdf.shape = parse_shape<D>(je.at("shape"));
        e.sdf.pose = parse_pose<D>(je.at("shape"));
        e.pose = parse_pose<D>(je);
        if (je.contains("friction")) {
            const json& f = je.at("friction");
            e.friction_mu = f.is_string() ? std::numeric_limits<Real>::infinity()
                                          : f.get<Real>();
            if (f.is_string() && f.get<std::string>() != "sticky")
                throw SceneError("effector friction: number or \"sticky\"");
            if (e.friction_mu < 0) throw SceneError("effector friction must be >= 0");
        }
        if (je.contains("velocity"))
            e.linear_velocity = parse_vec<D>(je.at("velocity"), "effector.velocity");
        if (je.contains("angular_velocity")) {
            if constexpr (D == 2)
                e.angular_velocity[0] = je.at("angular_velocity").get<Real>();
            else {
                Vec3 av = parse_vec<3>(je.at("angular_velocity"), "effector.angular_velocity");
                for (int a = 0; a < 3; a++) e.angular_velocity[a] = av[a];
            }
        }
        if (je.contains("action_mask")) {
            const json& jmask = je.at("action_mask");
            if (!jmask.is_array() || jmask.size() != 6)
                throw SceneError("effector action_mask must have 6 entries");
            for (size_t a = 0; a < 6; a++) e.action_mask[a] = jmask[a].get<bool>();
        }
        w.state.effectors.push_back(e);
    }

    const Real dx = cfg.dx();
    int body_id = 0;
    std::vector<std::string> body_names;
    for (const json& jb : spec.value("bodies", json::array())) {
        std::string name = jb.value("name", "body_" + std::to_string(body_id));
        body_names.push_back(name);
        int mat = find_material(jb.at("material").get<std::string>());
        const MaterialParams& m = w.scene.materials[size_t(mat)];
        Shape<D> shape = parse_shape<D>(jb.at("shape"));
        Pose<D> pose = parse_pose<D>(jb.at("shape"));
        int ppc = jb.value("particles_per_cell_axis", 2);
        Real jitter = jb.value("jitter", 0.0);
        std::vector<Vec<D>> pts = sample_shape(shape, pose, dx, ppc, jitter, rng);
        if (jb.contains("exclude")) {
            std::vector<SdfPrimitive<D>> holes;
            for (const json& jx : jb.at("exclude"))
                holes.push_back({parse_shape<D>(jx), parse_pose<D>(jx)});
            Real margin = 0.5 * dx / ppc;
            std::erase_if(pts, [&](const Vec<D>& p) {
                for (const auto& h : holes)
                    if (sdf_eval(h, p).distance <= margin) return true;
                return false;
            });
        }
        if (pts.empty()) throw SceneError("body '" + name + "': zero particles sampled");

        Vec<D> v0;
        if (jb.contains("velocity")) v0 = parse_vec<D>(jb.at("velocity"), "body.velocity");
        AngVec<D> w0{};
        if (jb.contains("angular_velocity")) {
            if constexpr (D == 2)
                w0[0] = jb.at("angular_velocity").get<Real>();
            else {
                Vec3 av = parse_vec<3>(jb.at("angular_velocity"), "body.angular_velocity");
                for (int a = 0; a < 3; a++) w0[a] = av[a];
            }
        }

        Real spacing = dx / ppc;
        Real vol0 = std::pow(spacing, D);
        bool rigid = (m.kind == MaterialKind::Rigid);

        const json* jem = jb.contains("emitter") ? &jb.at("emitter") : nullptr;
        long em_start = jem ? jem->value("start_substep", 0l) : 0;
        long em_interval = jem ? std::max(1l, jem->value("interval_substeps", 1l)) : 0;
        int em_effector = jem ? jem->value("effector", -1) : -1;
        Vec<D> em_vel;
        if (jem && jem->contains("velocity"))
            em_vel = parse_vec<D>(jem->at("velocity"), "emitter.velocity");

        RigidBodyRef<D> body_ref;
        Vec<D> centroid;
        Real total_mass = 0;

        for (size_t k = 0; k < pts.size(); k++) {
            Particle<D> p;
            p.x = pts[k];
            for (int a = 0; a < D; a++) {
                if (p.x[a] < 0 || p.x[a] > cfg.domain_extent[a])
                    throw SceneError("body '" + name + "' extends outside the domain");
            }
            p.x = clamp_to_interior(cfg, p.x);
            p.v = v0 + ang_cross<D>(w0, pts[k] - pose.t);
            p.material_id = mat;
            p.body_id = body_id;
            p.volume0 = vol0;
            p.mass = m.rho * vol0;
            if (jem) {
                p.activation_substep = em_start + long(k) * em_interval;
                EmitterSpawn<D> spawn;
                spawn.particle = w.state.particles.size();
                spawn.effector = em_effector;
                spawn.local_pos = em_effector >= 0 ? pts[k] - pose.t : pts[k];
                spawn.local_vel = em_vel;
                w.scene.emitters.push_back(spawn);
            }
            if (rigid) {
                body_ref.members.push_back(w.state.particles.size());
                centroid += p.x * p.mass;
                total_mass += p.mass;
            }
            w.state.particles.push_back(p);
        }
        if (rigid) {
            if (jem) throw SceneError("body '" + name + "': rigid emitters unsupported");
            body_ref.body_id = body_id;
            body_ref.total_mass = total_mass;
            centroid = centroid / total_mass;
            for (size_t idx : body_ref.members)
                body_ref.rest_offsets.push_back(w.state.particles[idx].x - centroid);
            w.scene.rigid_bodies.push_back(std::move(body_ref));
        }
        body_id++;
    }

    if (cfg.gas_resolution > 0) {
        w.state.has_gas = true;
        w.state.gas.resize(cfg.gas_dims());
        const json jg = spec.value("gas", json::object());
        GasParams& gp = w.scene.gas_params;
        gp.ambient_temperature = jg.value("ambient_temperature", 0.0);
        gp.kappa_smoke = jg.value("kappa_smoke", 0.0);
        gp.beta_temp = jg.value("beta_temp", 1.0);
        gp.coupling_strength = jg.value("coupling_strength", 0.0);
        gp.maccormack = jg.value("advection", "semi_lagrangian") == std::string("maccormack");
        if (jg.contains("projection")) {
            const json& jp = jg.at("projection");
            std::string kind = jp.value("kind", "jacobi");
            gp.projection.kind =
                kind == "cg" ? ProjectionKind::ConjugateGradient : ProjectionKind::Jacobi;
            gp.projection.iterations = jp.value("iterations", 400);
            gp.projection.tolerance = jp.value("tolerance", 1e-4);
            gp.projection.jacobi_omega = jp.value("omega", 0.9);
            gp.projection.check_residual = jp.value("check_residual", true);
            if (gp.projection.iterations < 1)
                throw SceneError("projection iterations must be >= 1");
            if (gp.projection.tolerance <= 0)
                throw SceneError("projection tolerance must be positive");
        }
        Real t0 = jg.value("initial_temperature", gp.ambient_temperature);
        w.state.gas.temperature.fill(t0);
        for (const json& js : jg.value("sources", json::array())) {
            GasSource<D> src;
            src.region = parse_shape<D>(js.at("region"));
            src.region_center = parse_pose<D>(js.at("region")).t;
            if (js.contains("velocity"))
                src.velocity = parse_vec<D>(js.at("velocity"), "source.velocity");
            src.temperature = js.value("temperature", 0.0);
            src.smoke = js.value("smoke", 0.0);
            src.effector = js.value("effector", -1);
            src.set_velocity = js.value("set_velocity", true);
            src.set_temperature = js.value("set_temperature", true);
            src.set_smoke = js.value("set_smoke", true);
            if (src.effector >= int(w.state.effectors.size()))
                throw SceneError("gas source references unknown effector");
            w.scene.gas_sources.push_back(src);
        }
        rasterize_solid_mask(w.state.effectors, w.state.gas, cfg.gas_dx());
    }

    if (spec.contains("loss")) w.loss_spec = spec.at("loss");
    if (spec.contains("optimizer")) w.optimizer_spec = spec.at("optimizer");

    // loss terms may reference bodies by name; rewrite to declaration indices
    auto resolve_body = [&](json& jt) {
        if (!jt.contains("body") || !jt["body"].is_string()) return;
        std::string name = jt["body"].get<std::string>();
        for (size_t i = 0; i < body_names.size(); i++)
            if (body_names[i] == name) {
                jt["body"] = int(i);
                return;
            }
        throw SceneError("loss references unknown body '" + name + "'");
    };
    if (!w.loss_spec.is_null()) {
        if (w.loss_spec.contains("terms"))
            for (json& jt : w.loss_spec["terms"]) resolve_body(jt);
        else
            resolve_body(w.loss_spec);
    }
    if (!w.optimizer_spec.is_null() && w.optimizer_spec.contains("attraction"))
        resolve_body(w.optimizer_spec["attraction"]);

    w.action_lo.fill(-std::numeric_limits<Real>::infinity());
    w.action_hi.fill(std::numeric_limits<Real>::infinity());
    if (spec.contains("action_bounds")) {
        const json& jb = spec.at("action_bounds");
        for (size_t a = 0; a < 6; a++) {
            w.action_lo[a] = jb.at("lo")[a].get<Real>();
            w.action_hi[a] = jb.at("hi")[a].get<Real>();
        }
    }
    return w;
}

inline int scene_dim(const json& spec) { return spec.value("dim", 2); }

}  // namespace flume
