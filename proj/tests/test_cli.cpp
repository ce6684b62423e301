// Drives the coview executable as a user would.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "coview/synthdata.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "coview_cli_test";

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = "cd '" + kRoot.string() + "' && '" COVIEW_CLI_PATH "' " + args +
                          " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json read(const fs::path& p) { return json::parse(slurp(kRoot / p)); }

void fresh_root() {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(kRoot / p) << text; }

const char* kTiny = R"({"num_scenes": 2, "train_scenes": 1, "num_frames": 4})";

// Two agents standing still, watched by one static third-person camera.
json static_scene_config() {
  coview::SceneSpec s;
  s.seed = 2;
  s.num_frames = 5;
  s.num_agents = 2;
  s.world_width = s.world_height = 96;
  for (int i = 0; i < 2; ++i) {
    coview::AgentSpec a;
    a.start = coview::Point{30 + 20 * i, 40};
    a.segments = {coview::MotionSegment{4, 0, 0}};
    s.agents.push_back(a);
  }
  coview::RigSpec cam;
  cam.start = coview::Point{16, 16};
  s.rigs = {cam};
  return json{{"scenes", json::array({json(s)})}, {"train_scenes", 0}, {"num_frames", 5}};
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  fresh_root();
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("gen --out d --seed 1 --bogus").code == 2);
  const auto no_seed = run("gen --out d");
  CHECK(no_seed.code == 2);
  CHECK(no_seed.err.find("--seed") != std::string::npos);
  write("bad.json", R"({"num_frames": 1})");
  CHECK(run("gen --config bad.json --out d --seed 1").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("gen is deterministic and reproducible from run.json") {
  fresh_root();
  write("tiny.json", kTiny);
  REQUIRE(run("gen --config tiny.json --out a --seed 7").code == 0);
  REQUIRE(run("gen --config tiny.json --out b --seed 7").code == 0);
  CHECK(slurp(kRoot / "a/manifest.json") == slurp(kRoot / "b/manifest.json"));
  REQUIRE(run("gen --config tiny.json --out c --seed 8").code == 0);
  CHECK(slurp(kRoot / "a/manifest.json") != slurp(kRoot / "c/manifest.json"));

  const json rj = read("a/run.json");
  CHECK(rj.at("command") == "gen");
  CHECK(rj.at("seed") == 7);
  CHECK(rj.at("dataset").at("num_scenes") == 2);
  REQUIRE(run("gen --config a/run.json --out again --seed 7").code == 0);
  CHECK(slurp(kRoot / "a/manifest.json") == slurp(kRoot / "again/manifest.json"));
  CHECK(run("train --config a/run.json --stage fcn --data a --out t --seed 1").code == 2);
}

TEST_CASE("joint training without a segmentation checkpoint is a configuration error") {
  fresh_root();
  write("tiny.json", kTiny);
  REQUIRE(run("gen --config tiny.json --out d --seed 1").code == 0);
  const auto r = run("train --stage joint --data d --out j --seed 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("--init") != std::string::npos);
  CHECK_FALSE(fs::exists(kRoot / "j"));
  CHECK(run("train --stage joint --data d --out j --seed 1 --init missing.cvck").code == 2);
  CHECK(run("train --stage fcn --data nowhere --out j --seed 1").code == 2);
}

TEST_CASE("copy-first evaluation of a static scene scores IoU 1") {
  fresh_root();
  write("static.json", static_scene_config().dump());
  REQUIRE(run("gen --config static.json --out s --seed 3").code == 0);
  const auto r = run("eval --method copy-first --data s --report rep/copy.json");
  REQUIRE(r.code == 0);
  const json rep = read("rep/copy.json");
  CHECK(rep.at("mean_iou").get<double>() == 1.0);
  CHECK(rep.at("sequences").size() == 2);
  CHECK(fs::exists(kRoot / "rep/copy.run.json"));
  CHECK(fs::is_directory(kRoot / "rep/copy_masks"));

  REQUIRE(run("plot --report rep/copy.json --out fig").code == 0);
  CHECK(fs::exists(kRoot / "fig/iou_vs_length.svg"));
  CHECK(fs::exists(kRoot / "fig/iou_vs_length.csv"));
  CHECK(fs::exists(kRoot / "fig/overlays/seq_000_0_1/overlay_004.png"));
  CHECK(fs::exists(kRoot / "fig/run.json"));

  // Damaged data is an integrity failure.
  fs::remove(kRoot / "s/scene_000/view_0/mask_002.png");
  CHECK(run("eval --method copy-first --data s --report rep/x.json").code == 3);
  CHECK(run("eval --data s --report rep/y.json").code == 2);  // model method, no --ckpt
}

TEST_CASE("training runs are reproducible and write their artifacts") {
  fresh_root();
  write("tiny.json", kTiny);
  REQUIRE(run("gen --config tiny.json --out d --seed 1").code == 0);
  REQUIRE(run("train --stage fcn --data d --out f1 --seed 5 --epochs 3").code == 0);
  REQUIRE(run("train --stage fcn --data d --out f2 --seed 5 --epochs 3").code == 0);
  const json l1 = read("f1/train_log.json"), l2 = read("f2/train_log.json");
  REQUIRE(l1.at("epochs").size() == 3);
  for (int e = 0; e < 3; ++e)
    CHECK(std::abs(l1["epochs"][e]["loss"].get<double>() - l2["epochs"][e]["loss"].get<double>()) <=
          1e-6);
  for (const char* f : {"run.json", "model.cvck", "epoch_001.cvck", "epoch_003.cvck"})
    CHECK(fs::exists(kRoot / "f1" / f));

  REQUIRE(run("train --config f1/run.json --stage fcn --data d --out f3 --seed 5").code == 0);
  for (int e = 0; e < 3; ++e)
    CHECK(read("f3/train_log.json")["epochs"][e]["loss"] == l1["epochs"][e]["loss"]);

  REQUIRE(run("train --stage joint --init f1 --data d --out j --seed 5 --frozen-epochs 1 "
              "--epochs 1 --max-pairs 4 --reweight bounding-box --no-epoch-checkpoints")
              .code == 0);
  CHECK_FALSE(fs::exists(kRoot / "j/epoch_001.cvck"));
  CHECK(read("j/run.json").at("model").at("match").at("reweight") == "bounding_box");
  const auto ev = run("eval --ckpt j --data d --report r.json --no-predictions");
  REQUIRE(ev.code == 0);
  CHECK(read("r.json").at("has_matching") == true);
  CHECK(run("eval --ckpt j --data d --problem third-first --report r2.json --no-predictions").code ==
        0);
  CHECK(read("r2.json").at("has_matching") == false);

  REQUIRE(run("train --stage fcn --data d --out w --seed 6 --epochs 1 --init-weights f1/model.cvck")
              .code == 0);
  CHECK(read("w/run.json").at("init_weights") == "f1/model.cvck");
}
