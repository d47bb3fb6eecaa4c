#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flume/actions.hpp"
#include "flume/optimize.hpp"
#include "flume/scene.hpp"

namespace flume {

constexpr const char* kEngineVersion = "0.1.0";

namespace fs = std::filesystem;

// Shortest round-trip formatting so reruns byte-match.
inline std::string format_real(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct RunManifest {
    std::string command;
    std::string scene;
    uint64_t seed = 0;
    std::string mode = "deterministic";
    std::string out_dir;
    std::string engine_version = kEngineVersion;
    uint64_t config_hash = 0;

    json to_json() const {
        return json{{"command", command},     {"scene", scene},
                    {"seed", seed},           {"mode", mode},
                    {"out_dir", out_dir},     {"engine_version", engine_version},
                    {"config_hash", config_hash}};
    }
};

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw EngineError("cannot write " + path.string());
    f << text;
}

// Written before any compute; every output references the hash.
inline void write_manifest(const RunManifest& m) {
    fs::create_directories(m.out_dir);
    write_text(fs::path(m.out_dir) / "manifest.json", m.to_json().dump(2) + "\n");
}

template <int D>
inline void write_frame_csv(const fs::path& path, const SimState<D>& state,
                            uint64_t manifest_hash) {
    std::string out = "# manifest " + std::to_string(manifest_hash) + "\n";
    out += D == 2 ? "id,body,x,y,vx,vy\n" : "id,body,x,y,z,vx,vy,vz\n";
    for (size_t i = 0; i < state.particles.size(); i++) {
        const Particle<D>& p = state.particles[i];
        if (!p.active(state.substep_index)) continue;
        out += std::to_string(i) + "," + std::to_string(p.body_id);
        for (int a = 0; a < D; a++) out += "," + format_real(p.x[a]);
        for (int a = 0; a < D; a++) out += "," + format_real(p.v[a]);
        out += "\n";
    }
    write_text(path, out);
}

// Gas field slices for plotting, one JSON sidecar per frame.
template <int D>
inline void write_field_sidecar(const fs::path& path, const SimState<D>& state,
                                uint64_t manifest_hash) {
    json j;
    j["manifest"] = manifest_hash;
    j["time"] = state.time;
    if (state.has_gas) {
        j["dims"] = state.gas.velocity.dims;
        json temp = json::array(), smoke = json::array(), vel = json::array();
        for (size_t i = 0; i < state.gas.temperature.size(); i++) {
            temp.push_back(state.gas.temperature.data[i]);
            smoke.push_back(state.gas.smoke.data[i]);
            json v = json::array();
            for (int a = 0; a < D; a++) v.push_back(state.gas.velocity.data[i][a]);
            vel.push_back(v);
        }
        j["temperature"] = std::move(temp);
        j["smoke"] = std::move(smoke);
        j["velocity"] = std::move(vel);
    }
    write_text(path, j.dump() + "\n");
}

template <int D>
class MetricsWriter {
public:
    MetricsWriter(const fs::path& path, uint64_t manifest_hash) : path_(path) {
        buffer_ = "# manifest " + std::to_string(manifest_hash) + "\n";
        buffer_ += D == 2 ? "substep,time,mass,px,py,kinetic_energy\n"
                          : "substep,time,mass,px,py,pz,kinetic_energy\n";
    }

    void append(const SimState<D>& state) {
        MassMomentum<D> t = particle_totals(state);
        buffer_ += std::to_string(state.substep_index) + "," + format_real(state.time) +
                   "," + format_real(t.mass);
        for (int a = 0; a < D; a++) buffer_ += "," + format_real(t.momentum[a]);
        buffer_ += "," + format_real(t.kinetic_energy) + "\n";
    }

    void flush() { write_text(path_, buffer_); }

private:
    fs::path path_;
    std::string buffer_;
};

inline void write_history_csv(const fs::path& path,
                              const std::vector<IterationRow>& rows,
                              uint64_t manifest_hash) {
    std::string out = "# manifest " + std::to_string(manifest_hash) + "\n";
    out += "iteration,window,loss,window_loss,grad_norm,wall_time\n";
    for (const IterationRow& r : rows) {
        out += std::to_string(r.iteration) + "," + std::to_string(r.window) + "," +
               format_real(r.loss) + "," + format_real(r.window_loss) + "," +
               format_real(r.grad_norm) + "," + format_real(r.wall_time) + "\n";
    }
    write_text(path, out);
}

inline void write_es_history_csv(const fs::path& path, const std::vector<EsRow>& rows,
                                 uint64_t manifest_hash) {
    std::string out = "# manifest " + std::to_string(manifest_hash) + "\n";
    out += "generation,evaluations,best,sigma\n";
    for (const EsRow& r : rows)
        out += std::to_string(r.generation) + "," + std::to_string(r.evaluations) + "," +
               format_real(r.best) + "," + format_real(r.sigma) + "\n";
    write_text(path, out);
}

// ---------------------------------------------------------------------------
// State snapshots (versioned) and replayable trajectories
// ---------------------------------------------------------------------------

template <int D>
inline json state_to_json(const SimState<D>& state) {
    json j;
    j["version"] = 1;
    j["dim"] = D;
    j["time"] = state.time;
    j["substep_index"] = state.substep_index;
    json parts = json::array();
    for (const Particle<D>& p : state.particles) {
        json jp;
        for (int a = 0; a < D; a++) {
            jp["x"].push_back(p.x[a]);
            jp["v"].push_back(p.v[a]);
        }
        for (int r = 0; r < D; r++)
            for (int c = 0; c < D; c++) {
                jp["F"].push_back(p.F[r][c]);
                jp["C"].push_back(p.C[r][c]);
            }
        jp["material"] = p.material_id;
        jp["body"] = p.body_id;
        jp["mass"] = p.mass;
        jp["volume0"] = p.volume0;
        jp["activation"] = p.activation_substep;
        parts.push_back(std::move(jp));
    }
    j["particles"] = std::move(parts);
    json effs = json::array();
    for (const Effector<D>& e : state.effectors) {
        json je;
        for (int a = 0; a < D; a++) je["t"].push_back(e.pose.t[a]);
        for (int r = 0; r < D; r++)
            for (int c = 0; c < D; c++) je["R"].push_back(e.pose.R[r][c]);
        for (int a = 0; a < D; a++) je["v"].push_back(e.linear_velocity[a]);
        for (int a = 0; a < (D == 2 ? 1 : 3); a++) je["w"].push_back(e.angular_velocity[a]);
        effs.push_back(std::move(je));
    }
    j["effectors"] = std::move(effs);
    if (state.has_gas) {
        json g;
        g["dims"] = state.gas.velocity.dims;
        for (size_t i = 0; i < state.gas.velocity.size(); i++) {
            for (int a = 0; a < D; a++) g["velocity"].push_back(state.gas.velocity.data[i][a]);
            g["smoke"].push_back(state.gas.smoke.data[i]);
            g["temperature"].push_back(state.gas.temperature.data[i]);
        }
        j["gas"] = std::move(g);
    }
    return j;
}

template <int D>
inline void state_from_json(const json& j, SimState<D>& state) {
    if (j.value("version", 0) != 1) throw EngineError("snapshot: unsupported version");
    if (j.value("dim", 0) != D) throw EngineError("snapshot: dimension mismatch");
    state.time = j.at("time").get<Real>();
    state.substep_index = j.at("substep_index").get<long>();
    const json& parts = j.at("particles");
    if (parts.size() != state.particles.size())
        throw EngineError("snapshot: particle count mismatch");
    for (size_t i = 0; i < state.particles.size(); i++) {
        const json& jp = parts[i];
        Particle<D>& p = state.particles[i];
        for (int a = 0; a < D; a++) {
            p.x[a] = jp.at("x")[size_t(a)].get<Real>();
            p.v[a] = jp.at("v")[size_t(a)].get<Real>();
        }
        int k = 0;
        for (int r = 0; r < D; r++)
            for (int c = 0; c < D; c++, k++) {
                p.F[r][c] = jp.at("F")[size_t(k)].get<Real>();
                p.C[r][c] = jp.at("C")[size_t(k)].get<Real>();
            }
        p.material_id = jp.at("material").get<int>();
        p.body_id = jp.at("body").get<int>();
        p.mass = jp.at("mass").get<Real>();
        p.volume0 = jp.at("volume0").get<Real>();
        p.activation_substep = jp.at("activation").get<long>();
    }
    const json& effs = j.at("effectors");
    for (size_t i = 0; i < state.effectors.size(); i++) {
        const json& je = effs[i];
        Effector<D>& e = state.effectors[i];
        for (int a = 0; a < D; a++) e.pose.t[a] = je.at("t")[size_t(a)].get<Real>();
        int k = 0;
        for (int r = 0; r < D; r++)
            for (int c = 0; c < D; c++, k++) e.pose.R[r][c] = je.at("R")[size_t(k)].get<Real>();
        for (int a = 0; a < D; a++) e.linear_velocity[a] = je.at("v")[size_t(a)].get<Real>();
        for (int a = 0; a < (D == 2 ? 1 : 3); a++)
            e.angular_velocity[a] = je.at("w")[size_t(a)].get<Real>();
    }
    if (state.has_gas && j.contains("gas")) {
        const json& g = j.at("gas");
        const json& vel = g.at("velocity");
        const json& smoke = g.at("smoke");
        const json& temp = g.at("temperature");
        if (smoke.size() != state.gas.smoke.size())
            throw EngineError("snapshot: gas cell count mismatch");
        for (size_t i = 0; i < state.gas.velocity.size(); i++) {
            for (int a = 0; a < D; a++)
                state.gas.velocity.data[i][a] = vel[i * size_t(D) + size_t(a)].get<Real>();
            state.gas.smoke.data[i] = smoke[i].get<Real>();
            state.gas.temperature.data[i] = temp[i].get<Real>();
        }
    }
}

inline json actions_to_json(const ActionTrajectory& a) {
    json j;
    j["n_segments"] = a.n_segments;
    j["segment_length"] = a.segment_length;
    json vals = json::array();
    for (const Action6& v : a.values) {
        json row = json::array();
        for (Real x : v) row.push_back(x);
        vals.push_back(row);
    }
    j["values"] = std::move(vals);
    return j;
}

inline ActionTrajectory actions_from_json(const json& j) {
    ActionTrajectory a(j.at("n_segments").get<int>(), j.at("segment_length").get<int>());
    const json& vals = j.at("values");
    if (vals.size() != a.values.size())
        throw EngineError("trajectory file: segment count mismatch");
    for (size_t s = 0; s < a.values.size(); s++)
        for (size_t k = 0; k < 6; k++) a.values[s][k] = vals[s][k].get<Real>();
    return a;
}

inline json load_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw EngineError("cannot read " + path.string());
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw SceneError("parse error in " + path.string() + ": " + e.what());
    }
    return j;
}

}  // namespace flume
