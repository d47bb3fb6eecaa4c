#pragma once

#include "flume/scene.hpp"

namespace flume {

// Built-in scene registry. The CLI accepts "builtin:<name>" anywhere a scene
// file is expected; tests and the validation suites build from the same specs.
namespace scenes {

inline json material(const char* name, const char* kind, Real mu, Real lambda, Real rho) {
    return json{{"name", name}, {"kind", kind}, {"mu", mu}, {"lambda", lambda}, {"rho", rho}};
}

inline json box_shape(std::initializer_list<Real> half, std::initializer_list<Real> center) {
    return json{{"type", "box"}, {"half_extents", half}, {"center", center}};
}

inline json sphere_shape(Real r, std::initializer_list<Real> center) {
    return json{{"type", "sphere"}, {"radius", r}, {"center", center}};
}

// Two equal elastic blocks approaching head-on; closed, frictionless, no gravity.
inline json momentum_collision() {
    return json{
        {"dim", 2},
        {"grid_resolution", 64},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"materials", {material("block", "elastic", 416.67, 277.78, 1.0)}},
        {"bodies",
         {{{"name", "left"},
           {"material", "block"},
           {"shape", box_shape({0.06, 0.06}, {0.35, 0.5})},
           {"velocity", {1.0, 0.0}}},
          {{"name", "right"},
           {"material", "block"},
           {"shape", box_shape({0.06, 0.06}, {0.65, 0.5})},
           {"velocity", {-1.0, 0.0}}}}},
    };
}

// Water column released against the left wall.
inline json dam_break() {
    return json{
        {"dim", 2},
        {"grid_resolution", 32},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-3},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"materials", {material("water", "liquid", 0.0, 277.78, 1.0)}},
        {"bodies",
         {{{"name", "column"},
           {"material", "water"},
            {"shape", box_shape({0.1, 0.14}, {0.16, 0.2})},
           {"particles_per_cell_axis", 3}}}},
    };
}

// Resting water block; occupied volume must stay put over long horizons.
inline json liquid_rest() {
    return json{
        {"dim", 2},
        {"grid_resolution", 48},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"materials", {material("water", "liquid", 0.0, 277.78, 1.0)}},
        {"bodies",
         {{{"name", "pool"},
           {"material", "water"},
           {"shape", box_shape({0.35, 0.15}, {0.5, 0.22})}}}},
    };
}

// Light elastic ball submerged in water near the floor.
inline json buoyancy_tank() {
    return json{
        {"dim", 2},
        {"grid_resolution", 48},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 2e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"materials",
         {material("water", "liquid", 0.0, 277.78, 1.0),
          material("floater", "elastic", 416.67, 277.78, 0.5)}},
        {"bodies",
         {{{"name", "pool"},
           {"material", "water"},
           {"shape", box_shape({0.38, 0.21}, {0.5, 0.28})},
           {"exclude", {sphere_shape(0.06, {0.5, 0.22})}}},
          {{"name", "ball"},
           {"material", "floater"},
           {"shape", sphere_shape(0.06, {0.5, 0.22})}}}},
    };
}

// Plastic block dropped on the floor; theta scales the yield clamps.
inline json bounce_drop(Real theta) {
    return json{
        {"dim", 2},
        {"grid_resolution", 64},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"materials",
         {{{"name", "putty"},
           {"kind", "plastic"},
           {"mu", 416.67},
           {"lambda", 277.78},
           {"rho", 1.0},
           {"theta_c", theta},
           {"theta_s", theta}}}},
        {"bodies",
         {{{"name", "ball"},
           {"material", "putty"},
           {"shape", box_shape({0.05, 0.05}, {0.5, 0.45})}}}},
    };
}

// Heavy liquid resting on light liquid; jitter seeds the instability.
inline json rayleigh_taylor() {
    return json{
        {"dim", 2},
        {"grid_resolution", 48},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 2e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"seed", 3},
        {"materials",
         {material("light", "liquid", 0.0, 277.78, 0.8),
          material("heavy", "liquid", 0.0, 277.78, 1.5)}},
        {"bodies",
         {{{"name", "light_layer"},
           {"material", "light"},
           {"shape", box_shape({0.35, 0.1}, {0.5, 0.17})},
           {"jitter", 0.4}},
          {{"name", "heavy_layer"},
           {"material", "heavy"},
           {"shape", box_shape({0.35, 0.1}, {0.5, 0.37})},
           {"jitter", 0.4}}}},
    };
}

// Spinning rigid ball coasting through still water, no gravity.
inline json magnus_tank(Real spin) {
    return json{
        {"dim", 2},
        {"grid_resolution", 48},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"materials",
         {material("water", "liquid", 0.0, 277.78, 1.0),
          material("ball", "rigid", 416.67, 277.78, 2.0)}},
        {"bodies",
         {{{"name", "pool"},
           {"material", "water"},
           {"shape", box_shape({0.42, 0.3}, {0.5, 0.5})},
           {"exclude", {sphere_shape(0.05, {0.22, 0.5})}}},
          {{"name", "ball"},
           {"material", "ball"},
           {"shape", sphere_shape(0.05, {0.22, 0.5})},
           {"velocity", {1.2, 0.0}},
           {"angular_velocity", spin}}}},
    };
}

// 2d channel with a cylinder; inflow and outflow strips keep the throughflow.
inline json karman_channel() {
    return json{
        {"dim", 2},
        {"grid_resolution", 64},
        {"domain", {2.0, 1.0}},
        {"gas_resolution", 160},
        {"dt_substep", 6e-3},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"effectors",
         {{{"shape", sphere_shape(0.1, {0.0, 0.0})},
           {"position", {0.5, 0.5}},
           {"friction", 0.0}}}},
        {"gas",
         {{"beta_temp", 0.0},
          {"advection", "maccormack"},
          {"projection",
           {{"kind", "cg"}, {"iterations", 800}, {"tolerance", 1e-4}}},
          {"sources",
           {{{"region", box_shape({0.04, 0.5}, {0.04, 0.5})},
             {"velocity", {1.2, 0.0}},
             {"smoke", 1.0},
             {"set_temperature", false}},
            {{"region", box_shape({0.04, 0.5}, {1.96, 0.5})},
             {"velocity", {1.2, 0.0}},
             {"set_temperature", false},
             {"set_smoke", false}}}}}},
    };
}

// Gas box with no interior solids; used for the projection residual check.
inline json gas_box() {
    return json{
        {"dim", 2},
        {"grid_resolution", 32},
        {"domain", {1.0, 1.0}},
        {"gas_resolution", 64},
        {"dt_substep", 2e-3},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"gas",
         {{"beta_temp", 0.0},
          {"projection", {{"kind", "cg"}, {"iterations", 2000}, {"tolerance", 1e-5}}}}},
    };
}

// Sticky carrier box with one particle inside; actions translate both.
inline json free_particle() {
    return json{
        {"dim", 2},
        {"grid_resolution", 32},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 1e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"materials", {material("chip", "elastic", 10.0, 10.0, 1.0)}},
        {"bodies",
         {{{"name", "tracer"},
           {"material", "chip"},
           {"shape", box_shape({0.012, 0.012}, {0.3, 0.4})},
           {"particles_per_cell_axis", 1}}}},
        {"effectors",
         {{{"shape", box_shape({0.08, 0.08}, {0.0, 0.0})},
           {"position", {0.3, 0.4}},
           {"friction", "sticky"},
           {"action_mask", {true, true, false, false, false, false}}}}},
        {"action_bounds", {{"lo", {-2, -2, 0, 0, 0, 0}}, {"hi", {2, 2, 0, 0, 0, 0}}}},
        {"loss",
         {{"kind", "target_point"},
          {"body", "tracer"},
          {"goal", {0.5, 0.6}},
          {"squared", true},
          {"eval", "final"}}},
        {"optimizer", {{"n_segments", 1}, {"segment_length", 100}}},
    };
}

// Small scene with one effector nudging a body; used for gradient checks.
inline json gradcheck_scene(const std::string& kind, uint64_t seed) {
    json mat;
    if (kind == "elastic")
        mat = material("stuff", "elastic", 416.67, 277.78, 1.0);
    else if (kind == "plastic") {
        mat = material("stuff", "plastic", 416.67, 277.78, 1.0);
        mat["theta_c"] = 0.025;
        mat["theta_s"] = 0.025;
    } else if (kind == "liquid")
        mat = material("stuff", "liquid", 0.0, 277.78, 1.0);
    else if (kind == "viscous_liquid")
        mat = material("stuff", "viscous_liquid", 208.33, 277.78, 1.0);
    else if (kind == "non_newtonian") {
        mat = material("stuff", "non_newtonian", 416.67, 277.78, 0.5);
        mat["sigma_y"] = 30.0;
    } else if (kind == "rigid")
        mat = material("stuff", "rigid", 416.67, 277.78, 2.0);
    else
        throw SceneError("gradcheck_scene: unknown kind " + kind);

    return json{
        {"dim", 2},
        {"grid_resolution", 32},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 2e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -2.0}},
        {"seed", seed},
        {"materials", {mat}},
        {"bodies",
         {{{"name", "body"},
           {"material", "stuff"},
           {"shape", box_shape({0.09, 0.07}, {0.45, 0.2})},
           {"jitter", 0.2}}}},
        {"effectors",
         {{{"shape", sphere_shape(0.06, {0.0, 0.0})},
           {"position", {0.32, 0.33}},
           {"friction", 0.4},
           {"action_mask", {true, true, false, false, false, false}}}}},
        {"action_bounds",
         {{"lo", {-1.5, -1.5, 0, 0, 0, 0}}, {"hi", {1.5, 1.5, 0, 0, 0, 0}}}},
        {"loss",
         {{"kind", "target_point"}, {"body", "body"}, {"goal", {0.6, 0.35}}}},
        {"optimizer", {{"n_segments", 3}, {"segment_length", 30}}},
    };
}

// Gas-only scene: a jet whose direction follows a rotating effector, with
// temperature sensors defining the objective.
inline json gradcheck_gas(uint64_t seed) {
    return json{
        {"dim", 2},
        {"grid_resolution", 32},
        {"domain", {1.0, 1.0}},
        {"gas_resolution", 32},
        {"dt_substep", 2e-3},
        {"substeps_per_step", 10},
        {"gravity", {0.0, 0.0}},
        {"seed", seed},
        {"effectors",
         {{{"shape", sphere_shape(0.001, {0.0, 0.0})},
           {"position", {0.5, 0.12}},
           {"friction", 0.0},
           {"action_mask", {false, false, false, false, false, true}}}}},
        {"action_bounds",
         {{"lo", {0, 0, 0, 0, 0, -2.0}}, {"hi", {0, 0, 0, 0, 0, 2.0}}}},
        {"gas",
         {{"beta_temp", 0.3},
          {"ambient_temperature", 0.0},
          {"initial_temperature", 0.0},
          {"projection",
           {{"kind", "jacobi"}, {"iterations", 200}, {"tolerance", 0.05}, {"omega", 0.8}}},
          {"sources",
           {{{"region", sphere_shape(0.06, {0.5, 0.12})},
             {"velocity", {0.0, 0.9}},
             {"temperature", 1.0},
             {"smoke", 0.5},
             {"effector", 0}}}}}},
        {"loss",
         {{"kind", "air_sensors"},
          {"sensors", {{0.3, 0.6}, {0.5, 0.65}, {0.7, 0.6}}},
          {"targets", {0.2, 0.5, 0.2}}}},
        {"optimizer", {{"n_segments", 3}, {"segment_length", 20}}},
    };
}

// Paddle, water tank, and a floating body to herd toward a goal.
inline json gathering_toy(uint64_t seed = 0) {
    return json{
        {"dim", 2},
        {"grid_resolution", 48},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 5e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"seed", seed},
        {"materials",
         {material("water", "liquid", 0.0, 277.78, 1.0),
          material("floater", "elastic", 416.67, 277.78, 0.5)}},
        {"bodies",
         {{{"name", "pool"},
           {"material", "water"},
           {"shape", box_shape({0.32, 0.12}, {0.5, 0.18})},
           {"jitter", 0.1}},
          {{"name", "float"},
           {"material", "floater"},
           {"shape", box_shape({0.04, 0.03}, {0.38, 0.32})}}}},
        {"effectors",
         {{{"shape", box_shape({0.015, 0.07}, {0.0, 0.0})},
           {"position", {0.24, 0.28}},
           {"friction", 1.0},
           {"action_mask", {true, true, false, false, false, false}}}}},
        {"action_bounds",
         {{"lo", {-1.5, -1.5, 0, 0, 0, 0}}, {"hi", {1.5, 1.5, 0, 0, 0, 0}}}},
        {"loss",
         {{"kind", "target_point"}, {"body", "float"}, {"goal", {0.68, 0.3}}}},
        {"optimizer",
         {{"n_segments", 10},
          {"segment_length", 50},
          {"step_size", 0.08},
          {"steps", 200},
          {"expand",
           {{"initial_window", 150}, {"growth_factor", 2.0}, {"patience", 12},
            {"improvement_threshold", 1e-3}}},
          {"attraction", {{"weight", 0.05}, {"radius_cells", 3.0}}}}},
    };
}

// Tilting cup with a light liquid above a heavy one; pour the light layer out
// while keeping the heavy layer.
inline json pouring_toy(uint64_t seed = 0) {
    Real cx = 0.3, cy = 0.52;
    auto cap = [&](Real ax, Real ay, Real bx, Real by, Real r) {
        return json{{"type", "capsule"}, {"a", {ax, ay}}, {"b", {bx, by}}, {"radius", r}};
    };
    return json{
        {"dim", 2},
        {"grid_resolution", 64},
        {"domain", {1.0, 1.0}},
        {"dt_substep", 5e-4},
        {"substeps_per_step", 10},
        {"gravity", {0.0, -9.8}},
        {"contact_eps_cells", 1.5},
        {"seed", seed},
        {"materials",
         {material("light", "liquid", 0.0, 277.78, 0.8),
          material("heavy", "liquid", 0.0, 277.78, 1.5)}},
        {"bodies",
         {{{"name", "light_layer"},
           {"material", "light"},
           {"shape", box_shape({0.075, 0.05}, {cx, cy + 0.055})},
           {"jitter", 0.1}},
          {{"name", "heavy_layer"},
           {"material", "heavy"},
           {"shape", box_shape({0.075, 0.05}, {cx, cy - 0.055})},
           {"jitter", 0.1}}}},
        {"effectors",
         {{{"shape", cap(-0.1, -0.14, -0.1, 0.14, 0.014)},
           {"position", {cx, cy}},
           {"friction", 0.2},
           {"action_mask", {false, false, false, false, false, true}}},
          {{"shape", cap(0.1, -0.14, 0.1, 0.14, 0.014)},
           {"position", {cx, cy}},
           {"friction", 0.2},
           {"action_mask", {false, false, false, false, false, true}}},
          {{"shape", cap(-0.1, -0.14, 0.1, -0.14, 0.014)},
           {"position", {cx, cy}},
           {"friction", 0.2},
           {"action_mask", {false, false, false, false, false, true}}}}},
        {"action_bounds",
         {{"lo", {0, 0, 0, 0, 0, -2.5}}, {"hi", {0, 0, 0, 0, 0, 2.5}}}},
        {"loss",
         {{"kind", "composite"},
          {"terms",
           {{{"kind", "target_point"}, {"body", "light_layer"}, {"goal", {0.75, 0.06}},
             {"weight", 1.0}},
            {{"kind", "hold_initial"}, {"body", "heavy_layer"}, {"weight", 0.3}}}}}},
        {"optimizer",
         {{"n_segments", 12},
          {"segment_length", 200},
          {"step_size", 0.3},
          {"steps", 40},
          {"init", {0.0, 0.0, 0.0, 0.0, 0.0, -0.8}},
          {"expand",
           {{"initial_window", 800}, {"growth_factor", 2.0}, {"patience", 8},
            {"improvement_threshold", 1e-3}}},
          {"attraction", {{"weight", 0.02}, {"radius_cells", 3.0}}}}},
    };
}

inline json by_name(const std::string& name) {
    if (name == "momentum") return momentum_collision();
    if (name == "dambreak") return dam_break();
    if (name == "liquid_rest") return liquid_rest();
    if (name == "buoyancy") return buoyancy_tank();
    if (name == "bounce_loose") return bounce_drop(0.3);
    if (name == "bounce_mid") return bounce_drop(0.05);
    if (name == "bounce_tight") return bounce_drop(0.015);
    if (name == "rayleigh_taylor") return rayleigh_taylor();
    if (name == "magnus") return magnus_tank(20.0);
    if (name == "karman") return karman_channel();
    if (name == "gas_box") return gas_box();
    if (name == "free_particle") return free_particle();
    if (name == "gathering") return gathering_toy();
    if (name == "pouring") return pouring_toy();
    if (name.rfind("gradcheck_", 0) == 0) {
        std::string kind = name.substr(10);
        if (kind == "gas") return gradcheck_gas(11);
        return gradcheck_scene(kind, 7);
    }
    throw SceneError("unknown builtin scene '" + name + "'");
}

}  // namespace scenes
}  // namespace flume
