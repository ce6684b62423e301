// Links against the shared library only.

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "coview/coview.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string take(char* s) {
  std::string out = s;
  coview_string_free(s);
  return out;
}

const char* kTiny = R"({"num_scenes": 2, "train_scenes": 1, "num_frames": 4})";

std::string generate(const fs::path& dir, uint64_t seed = 1) {
  char* manifest = nullptr;
  REQUIRE(coview_generate(kTiny, seed, dir.string().c_str(), &manifest) == COVIEW_OK);
  return take(manifest);
}

int count_epochs(const char* record, coview_model* model, void* user) {
  CHECK(model != nullptr);
  CHECK(json::parse(record).contains("loss"));
  ++*static_cast<int*>(user);
  return 0;
}

int stop_now(const char*, coview_model*, void*) { return 1; }

}  // namespace

TEST_CASE("status names and error reporting") {
  CHECK(std::string(coview_version()).size() > 0);
  CHECK(std::string(coview_status_name(COVIEW_OK)) == "ok");
  CHECK(std::string(coview_status_name(COVIEW_E_INTEGRITY)) == "integrity");

  char* out = nullptr;
  CHECK(coview_resolve_config("dataset", "{not json", &out) == COVIEW_E_CONFIG);
  CHECK(std::strlen(coview_last_error()) > 0);
  CHECK(coview_resolve_config("widget", nullptr, &out) == COVIEW_E_LOOKUP);
  CHECK(coview_resolve_config("dataset", R"({"num_frames": 1})", &out) == COVIEW_E_CONFIG);
  CHECK(coview_resolve_config("train", R"({"lr": -1})", &out) == COVIEW_E_CONFIG);
  CHECK(coview_resolve_config("eval", R"({"method": "guess"})", &out) == COVIEW_E_CONFIG);
  CHECK(coview_resolve_config(nullptr, nullptr, &out) == COVIEW_E_PARAMETER);
  CHECK(coview_train_preset("huge", "fcn", &out) == COVIEW_E_CONFIG);
}

TEST_CASE("resolved configurations make every default explicit") {
  char* out = nullptr;
  REQUIRE(coview_resolve_config("dataset", nullptr, &out) == COVIEW_OK);
  const json d = json::parse(take(out));
  CHECK(d.at("num_scenes") == 9);
  CHECK(d.at("train_scenes") == 6);

  REQUIRE(coview_train_preset("paper", "joint", &out) == COVIEW_OK);
  const json p = json::parse(take(out));
  CHECK(p.at("lr") == 1e-4);
  CHECK(p.at("joint_lr") == 1e-5);

  REQUIRE(coview_resolve_config("eval", R"({"split": "all"})", &out) == COVIEW_OK);
  CHECK(json::parse(take(out)).at("split") == "all");
}

TEST_CASE("generation is deterministic and round-trips through the loader") {
  TempDir a("coview_capi_a"), b("coview_capi_b");
  const std::string m1 = generate(a.path), m2 = generate(b.path);
  CHECK(m1 == m2);

  coview_dataset* data = nullptr;
  REQUIRE(coview_dataset_open(a.path.string().c_str(), &data) == COVIEW_OK);
  char* out = nullptr;
  REQUIRE(coview_dataset_manifest(data, &out) == COVIEW_OK);
  CHECK(json::parse(take(out)) == json::parse(m1));
  coview_dataset_free(data);

  // A missing frame is an integrity error.
  fs::remove(a.path / "scene_000" / "view_0" / "frame_001.png");
  CHECK(coview_dataset_open(a.path.string().c_str(), &data) == COVIEW_E_INTEGRITY);
  CHECK(coview_dataset_open((a.path / "nowhere").string().c_str(), &data) != COVIEW_OK);
}

TEST_CASE("model checkpoints round-trip") {
  TempDir tmp("coview_capi_model");
  coview_model* m = nullptr;
  REQUIRE(coview_model_create(R"({"with_match": true})", 4, &m) == COVIEW_OK);
  uint64_t fcn = 0, all = 0;
  REQUIRE(coview_model_checksum(m, &fcn, &all) == COVIEW_OK);
  CHECK(fcn != all);
  const auto file = (tmp.path / "m.cvck").string();
  REQUIRE(coview_model_save(m, file.c_str(), R"({"note": "x"})") == COVIEW_OK);

  coview_model* back = nullptr;
  REQUIRE(coview_model_load(file.c_str(), &back) == COVIEW_OK);
  uint64_t fcn2 = 0, all2 = 0;
  coview_model_checksum(back, &fcn2, &all2);
  CHECK(all2 == all);

  char* meta = nullptr;
  REQUIRE(coview_checkpoint_meta(file.c_str(), &meta) == COVIEW_OK);
  const json j = json::parse(take(meta));
  CHECK(j.at("note") == "x");
  CHECK(j.at("model").at("with_match") == true);

  // Segmentation weights transfer into a differently seeded model.
  coview_model* fresh = nullptr;
  REQUIRE(coview_model_create(nullptr, 9, &fresh) == COVIEW_OK);
  uint64_t f3 = 0;
  coview_model_checksum(fresh, &f3, nullptr);
  CHECK(f3 != fcn);
  REQUIRE(coview_model_init_weights(fresh, file.c_str()) == COVIEW_OK);
  coview_model_checksum(fresh, &f3, nullptr);
  CHECK(f3 == fcn);

  std::ofstream(tmp.path / "junk.cvck") << "junk";
  CHECK(coview_model_load((tmp.path / "junk.cvck").string().c_str(), &back) ==
        COVIEW_E_INTEGRITY);
  coview_model_free(m);
  coview_model_free(back);
  coview_model_free(fresh);
}

TEST_CASE("training, evaluation and plotting through the C interface") {
  TempDir tmp("coview_capi_run");
  generate(tmp.path / "data");
  coview_dataset* data = nullptr;
  REQUIRE(coview_dataset_open((tmp.path / "data").string().c_str(), &data) == COVIEW_OK);
  coview_model* m = nullptr;
  REQUIRE(coview_model_create(nullptr, 1, &m) == COVIEW_OK);

  int epochs = 0;
  char* history = nullptr;
  REQUIRE(coview_train(m, data, R"({"stage": "fcn", "fcn_epochs": 2})", count_epochs, &epochs,
                       &history) == COVIEW_OK);
  CHECK(epochs == 2);
  CHECK(json::parse(take(history)).at("epochs").size() == 2);

  CHECK(coview_train(m, data, R"({"stage": "fcn", "fcn_epochs": 2})", stop_now, nullptr,
                     nullptr) == COVIEW_E_ABORTED);
  // No matching branch.
  CHECK(coview_train(m, data, R"({"stage": "joint"})", nullptr, nullptr, nullptr) ==
        COVIEW_E_CONFIG);

  char* report = nullptr;
  CHECK(coview_evaluate(data, nullptr, R"({"method": "model"})", nullptr, &report) ==
        COVIEW_E_CONFIG);
  const auto masks = tmp.path / "masks";
  REQUIRE(coview_evaluate(data, nullptr, R"({"method": "copy-first"})", masks.string().c_str(),
                          &report) == COVIEW_OK);
  const std::string text = take(report);
  const json r = json::parse(text);
  CHECK(r.at("method") == "copy-first");
  CHECK(r.at("mean_iou").get<double>() >= 0.0);
  CHECK(r.at("mean_iou").get<double>() <= 1.0);
  CHECK(fs::is_directory(masks));

  const auto report_file = tmp.path / "r.json";
  std::ofstream(report_file) << text;
  const std::string rf = report_file.string();
  const char* reports[] = {rf.c_str()};
  int overlays = -1;
  REQUIRE(coview_plot(reports, 1, (tmp.path / "plots").string().c_str(),
                      (tmp.path / "data").string().c_str(), masks.string().c_str(),
                      &overlays) == COVIEW_OK);
  CHECK(overlays == int(r.at("sequences").size()) * 4);
  CHECK(fs::exists(tmp.path / "plots" / "iou_vs_length.svg"));
  CHECK(fs::exists(tmp.path / "plots" / "iou_vs_length.csv"));
  CHECK(coview_plot(reports, 0, "x", nullptr, nullptr, nullptr) == COVIEW_E_EMPTY_DATA);

  coview_model_free(m);
  coview_dataset_free(data);
}
