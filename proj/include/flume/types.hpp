#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flume/grid.hpp"
#include "flume/sdf.hpp"

namespace flume {

enum class MaterialKind { Elastic, Plastic, Liquid, ViscousLiquid, NonNewtonian, Rigid };

inline const char* material_kind_name(MaterialKind k) {
    switch (k) {
        case MaterialKind::Elastic: return "elastic";
        case MaterialKind::Plastic: return "plastic";
        case MaterialKind::Liquid: return "liquid";
        case MaterialKind::ViscousLiquid: return "viscous_liquid";
        case MaterialKind::NonNewtonian: return "non_newtonian";
        case MaterialKind::Rigid: return "rigid";
    }
    return "?";
}

struct YieldParams {
    Real theta_c = 0.025;  // compression clamp
    Real theta_s = 0.025;  // stretch clamp
    Real sigma_y = 50.0;   // von Mises yield stress
};

struct MaterialParams {
    std::string name;
    MaterialKind kind = MaterialKind::Elastic;
    Real mu = 0;
    Real lambda = 0;
    Real rho = 1;
    YieldParams yield;

    void validate() const {
        if (mu < 0 || lambda < 0) throw SceneError("material " + name + ": negative Lame parameter");
        if (rho <= 0) throw SceneError("material " + name + ": density must be positive");
        if (kind == MaterialKind::Liquid && mu != 0)
            throw SceneError("material " + name + ": liquid requires mu = 0");
        if (kind == MaterialKind::Plastic &&
            (yield.theta_c <= 0 || yield.theta_c >= 1 || yield.theta_s <= 0))
            throw SceneError("material " + name + ": invalid box yield clamps");
        if (kind == MaterialKind::NonNewtonian && yield.sigma_y <= 0)
            throw SceneError("material " + name + ": yield stress must be positive");
    }
};

template <int D>
struct SimConfig {
    int grid_resolution = 64;      // particle grid cells per axis
    int gas_resolution = 0;        // gas cells per axis (0 = no gas field)
    Vec<D> domain_extent = Vec<D>(1.0);
    Real dt_substep = 1e-4;
    int substeps_per_step = 10;
    Vec<D> gravity;
    int boundary_width = 3;        // wall band, in grid cells
    Real contact_eps_cells = 3.0;  // contact activation distance, in cells
    Real cfl_fraction = 0.9;       // velocity clamp at cfl_fraction * dx / dt
    Real mass_epsilon = 1e-12;
    bool hard_contact = false;     // step blending instead of exponential

    Real dx() const { return domain_extent[0] / grid_resolution; }
    Real gas_dx() const { return domain_extent[0] / std::max(gas_resolution, 1); }

    void validate() const {
        if (grid_resolution < 4) throw SceneError("grid_resolution too small");
        if (dt_substep <= 0) throw SceneError("dt_substep must be positive");
        if (substeps_per_step < 1) throw SceneError("substeps_per_step must be >= 1");
        for (int a = 0; a < D; a++)
            if (domain_extent[a] <= 0) throw SceneError("domain extent must be positive");
        // grid cells are cubes: extents must agree with resolution per axis
        for (int a = 1; a < D; a++) {
            Real cells = domain_extent[a] / dx();
            if (std::abs(cells - std::round(cells)) > 1e-9)
                throw SceneError("domain extent must be a whole number of cells per axis");
        }
    }

    IVec<D> node_dims() const {
        IVec<D> n;
        for (int a = 0; a < D; a++) n[a] = int(std::round(domain_extent[a] / dx())) + 1;
        return n;
    }
    IVec<D> gas_dims() const {
        IVec<D> n;
        for (int a = 0; a < D; a++)
            n[a] = int(std::round(domain_extent[a] / gas_dx()));
        return n;
    }
};

template <int D>
struct Particle {
    Vec<D> x;
    Vec<D> v;
    Mat<D> F = Mat<D>::identity();
    Mat<D> C;
    int material_id = 0;
    int body_id = 0;
    Real mass = 0;
    Real volume0 = 0;
    long activation_substep = 0;  // inactive until state reaches this substep

    bool active(long substep) const { return substep >= activation_substep; }
};

// Kinematic tool driven by commanded velocities. friction_mu = infinity means
// sticky contact (relative velocity fully cancelled).
template <int D>
struct Effector {
    SdfPrimitive<D> sdf;       // shape with a local offset pose
    Pose<D> pose;              // world pose, advanced by the commanded velocities
    Vec<D> linear_velocity;    // current commanded translational velocity
    AngVec<D> angular_velocity;
    Real friction_mu = 0;
    std::array<bool, 6> action_mask{};  // which action components drive this effector

    bool sticky() const { return std::isinf(friction_mu); }
    Pose<D> world_shape_pose() const { return compose(pose, sdf.pose); }
};

// Inflow region for the gas field; velocity direction optionally follows an
// effector's orientation.
template <int D>
struct GasSource {
    Shape<D> region;           // world-frame region, fixed cells
    Vec<D> region_center;
    Vec<D> velocity;           // local (if attached) or world velocity
    Real temperature = 0;
    Real smoke = 0;
    int effector = -1;         // -1: fixed in world
    bool set_velocity = true;
    bool set_temperature = true;
    bool set_smoke = true;
};

template <int D>
struct GasState {
    Grid<Vec<D>, D> velocity;
    Grid<Real, D> smoke;
    Grid<Real, D> temperature;
    Grid<uint8_t, D> solid_mask;     // rebuilt every step
    Grid<Vec<D>, D> solid_velocity;  // valid where solid_mask != 0

    void resize(const IVec<D>& dims) {
        velocity.resize(dims);
        smoke.resize(dims);
        temperature.resize(dims);
        solid_mask.resize(dims);
        solid_velocity.resize(dims);
    }
};

enum class ProjectionKind { Jacobi, ConjugateGradient };

struct ProjectionSolve {
    ProjectionKind kind = ProjectionKind::Jacobi;
    int iterations = 400;
    Real tolerance = 1e-4;
    Real jacobi_omega = 0.9;
    bool check_residual = true;
};

struct GasParams {
    ProjectionSolve projection;
    Real kappa_smoke = 0;      // smoke weight in the buoyancy force
    Real beta_temp = 1;        // thermal buoyancy coefficient
    Real ambient_temperature = 0;
    Real coupling_strength = 0;  // particle -> gas velocity relaxation rate
    bool maccormack = false;     // error-corrected advection (forward-only scenes)
};

// Dynamic world snapshot at one substep.
template <int D>
struct SimState {
    Real time = 0;
    long substep_index = 0;
    std::vector<Particle<D>> particles;
    std::vector<Effector<D>> effectors;
    GasState<D> gas;
    bool has_gas = false;

    size_t active_particle_count() const {
        size_t n = 0;
        for (const auto& p : particles)
            if (p.active(substep_index)) n++;
        return n;
    }

    // Flattened per-particle observable (position, velocity).
    std::vector<Real> observable() const {
        std::vector<Real> out;
        out.reserve(particles.size() * 2 * D);
        for (const auto& p : particles) {
            for (int a = 0; a < D; a++) out.push_back(p.x[a]);
            for (int a = 0; a < D; a++) out.push_back(p.v[a]);
        }
        return out;
    }
};

// A particle pre-allocated by an emitter: spawn data relative to an effector
// (or the world when effector < 0).
template <int D>
struct EmitterSpawn {
    size_t particle = 0;
    int effector = -1;
    Vec<D> local_pos;
    Vec<D> local_vel;
};

// Rigid-body rest shape used by the shape-matching pass.
template <int D>
struct RigidBodyRef {
    int body_id = 0;
    std::vector<size_t> members;
    std::vector<Vec<D>> rest_offsets;  // x0_i - c0
    Real total_mass = 0;
};

// Immutable scene data shared by every state of a trajectory.
template <int D>
struct Scene {
    SimConfig<D> config;
    std::vector<MaterialParams> materials;
    std::vector<RigidBodyRef<D>> rigid_bodies;
    std::vector<EmitterSpawn<D>> emitters;
    std::vector<GasSource<D>> gas_sources;
    GasParams gas_params;
};

}  // namespace flume
