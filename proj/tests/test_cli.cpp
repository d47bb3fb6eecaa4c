#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flume/io.hpp"
#include "flume/scene_library.hpp"

using namespace flume;

namespace {

const char* kCli = FLUME_CLI_PATH;

struct CmdResult {
    int code = -1;
    std::string out;
};

CmdResult run_cmd(const std::string& args) {
    std::string cmd = std::string(kCli) + " " + args + " > /tmp/flume_cli_out.txt 2>&1";
    int rc = std::system(cmd.c_str());
    CmdResult r;
    r.code = WEXITSTATUS(rc);
    std::ifstream f("/tmp/flume_cli_out.txt");
    std::stringstream ss;
    ss << f.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cmd("simulate").code == 2);                       // missing --scene
    CHECK(run_cmd("simulate --scene /nonexistent.json").code != 0);
    CHECK(run_cmd("simulate --scene builtin:nonsense --out /tmp/fx").code == 2);
}

TEST_CASE("simulate writes manifest, frames and metrics deterministically") {
    std::string out1 = "/tmp/flume_sim_a", out2 = "/tmp/flume_sim_b";
    std::string args = "simulate --scene builtin:free_particle --steps 3 --out ";
    CmdResult a = run_cmd(args + out1);
    CAPTURE(a.out);
    REQUIRE(a.code == 0);
    CHECK(fs::exists(fs::path(out1) / "manifest.json"));
    CHECK(fs::exists(fs::path(out1) / "frame_00000.csv"));
    CHECK(fs::exists(fs::path(out1) / "frame_00003.csv"));
    CHECK(fs::exists(fs::path(out1) / "metrics.csv"));

    json manifest = load_json_file(fs::path(out1) / "manifest.json");
    CHECK(manifest.at("command") == "simulate");
    CHECK(manifest.at("engine_version") == kEngineVersion);
    uint64_t hash = manifest.at("config_hash").get<uint64_t>();
    std::string frame = slurp(fs::path(out1) / "frame_00001.csv");
    CHECK(frame.find("# manifest " + std::to_string(hash)) == 0);
    CHECK(frame.find("id,body,x,y,vx,vy") != std::string::npos);

    // byte-identical rerun
    CmdResult b = run_cmd(args + out2);
    REQUIRE(b.code == 0);
    for (const char* f : {"frame_00000.csv", "frame_00003.csv", "metrics.csv",
                          "final_state.json"})
        CHECK(slurp(fs::path(out1) / f) == slurp(fs::path(out2) / f));
}

TEST_CASE("simulate on an empty scene produces zero-row frames") {
    json spec = {{"dim", 2}, {"grid_resolution", 16}, {"domain", {1.0, 1.0}}};
    write_text("/tmp/flume_empty_scene.json", spec.dump());
    CmdResult r = run_cmd(
        "simulate --scene /tmp/flume_empty_scene.json --steps 2 --out /tmp/flume_empty");
    REQUIRE(r.code == 0);
    std::string frame = slurp(fs::path("/tmp/flume_empty") / "frame_00002.csv");
    // header lines only
    CHECK(std::count(frame.begin(), frame.end(), '\n') == 2);
}

TEST_CASE("gradcheck verb reports per-parameter table and passes") {
    CmdResult r = run_cmd(
        "gradcheck --scene builtin:gradcheck_elastic --eps 1e-5 --out /tmp/flume_gc");
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("max_rel_error") != std::string::npos);
    json rep = load_json_file("/tmp/flume_gc/gradcheck.json");
    CHECK(rep.at("max_rel_error").get<Real>() <= 1e-3);
    CHECK(rep.at("gradient").size() == rep.at("fd_gradient").size());
}

TEST_CASE("validate verb runs a named suite") {
    CmdResult r = run_cmd("validate --suite divergence --out /tmp/flume_val");
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("[PASS] divergence") != std::string::npos);
    json report = load_json_file("/tmp/flume_val/report.json");
    CHECK(report.size() == 1);
    CHECK(report[0].at("suite") == "divergence");
    CHECK(run_cmd("validate --suite bogus").code == 3);
}

TEST_CASE("optimize verb writes history and a replayable trajectory") {
    json spec = scenes::free_particle();
    spec["loss"]["goal"] = {0.312, 0.416};
    spec["optimizer"]["steps"] = 40;
    spec["optimizer"]["step_size"] = 0.2;
    write_text("/tmp/flume_opt_scene.json", spec.dump());

    CmdResult r = run_cmd(
        "optimize --scene /tmp/flume_opt_scene.json --method dp --out /tmp/flume_opt");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("final loss") != std::string::npos);
    CHECK(fs::exists("/tmp/flume_opt/history.csv"));

    // the saved trajectory replays through simulate
    CmdResult replay = run_cmd(
        "simulate --scene /tmp/flume_opt_scene.json --actions /tmp/flume_opt/trajectory.json "
        "--out /tmp/flume_opt_replay");
    CHECK(replay.code == 0);
    CHECK(fs::exists("/tmp/flume_opt_replay/frame_00010.csv"));

    // cma-es with a fixed seed reproduces its history
    CmdResult e1 = run_cmd(
        "optimize --scene /tmp/flume_opt_scene.json --method cma-es --budget 60 "
        "--seed 5 --out /tmp/flume_es_a");
    CmdResult e2 = run_cmd(
        "optimize --scene /tmp/flume_opt_scene.json --method cma-es --budget 60 "
        "--seed 5 --out /tmp/flume_es_b");
    REQUIRE(e1.code == 0);
    REQUIRE(e2.code == 0);
    CHECK(slurp("/tmp/flume_es_a/history.csv") == slurp("/tmp/flume_es_b/history.csv"));
}

TEST_CASE("snapshot files round-trip") {
    World<2> w = build_scene<2>(scenes::gradcheck_scene("elastic", 3));
    MpmWorkspace<2> ws;
    for (int i = 0; i < 7; i++) mpm_substep(w.scene, w.state, Action6{0.3, 0, 0, 0, 0, 0}, ws);
    json j = state_to_json(w.state);
    World<2> w2 = build_scene<2>(scenes::gradcheck_scene("elastic", 3));
    state_from_json(j, w2.state);
    REQUIRE(w2.state.particles.size() == w.state.particles.size());
    for (size_t i = 0; i < w.state.particles.size(); i++) {
        CHECK(w2.state.particles[i].x == w.state.particles[i].x);
        CHECK(w2.state.particles[i].v == w.state.particles[i].v);
        CHECK(w2.state.particles[i].F == w.state.particles[i].F);
        CHECK(w2.state.particles[i].C == w.state.particles[i].C);
    }
    CHECK(w2.state.effectors[0].pose.t == w.state.effectors[0].pose.t);

    json bad = j;
    bad["version"] = 9;
    CHECK_THROWS_AS(state_from_json(bad, w2.state), EngineError);
}
