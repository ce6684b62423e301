#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "coview/model.hpp"

using namespace coview;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "coview_model_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig third_first_config() {
  ModelConfig mc;
  mc.with_match = true;
  mc.match.problem = Problem::ThirdFirst;
  mc.match.reweight = ReweightMode::BoundingBox;
  return mc;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Parameter;
}

}  // namespace

TEST_CASE("model config JSON round trip") {
  ModelConfig mc = third_first_config();
  mc.seg.widths = {8, 8, 16, 16, 16};
  mc.seg.motion = false;
  mc.seg.foreground_prior = 0.2f;
  nlohmann::json j = mc;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(back.seg == mc.seg);
  CHECK(back.match == mc.match);
  CHECK(back.with_match);
}

TEST_CASE("parameter groups") {
  JointModel seg_only(ModelConfig{}, 1);
  CHECK_FALSE(seg_only.has_match());
  CHECK(seg_only.match_params().empty());

  JointModel tf(third_first_config(), 1);
  CHECK(tf.first_person() != nullptr);
  CHECK(tf.all_params().size() == tf.fcn_params().size() + tf.match_params().size());
  // The first-person encoder shares the embedding head.
  CHECK(&tf.first_person()->head() == &tf.head());
}

TEST_CASE("checkpoint round trip restores every parameter bit for bit") {
  TempDir tmp;
  JointModel a(third_first_config(), 7);
  const auto file = tmp.path / "a.cvck";
  save_checkpoint(file, a, {{"epoch", 3}});
  const Checkpoint ck = read_checkpoint(file);
  CHECK(ck.meta.at("epoch") == 3);
  CHECK(ck.model_config().match == a.config().match);

  JointModel b = load_model(file);
  CHECK(nn::checksum(b.all_params()) == nn::checksum(a.all_params()));
  JointModel c(third_first_config(), 99);
  CHECK(nn::checksum(c.all_params()) != nn::checksum(a.all_params()));
  load_params(ck, c.all_params(), true);
  CHECK(nn::checksum(c.all_params()) == nn::checksum(a.all_params()));
}

TEST_CASE("checkpoint loading fails loudly on mismatches") {
  TempDir tmp;
  JointModel a(ModelConfig{}, 1);
  const auto file = tmp.path / "seg.cvck";
  save_checkpoint(file, a);
  const Checkpoint ck = read_checkpoint(file);

  ModelConfig wider;
  wider.seg.widths = {8, 32, 64, 64, 64};
  JointModel w(wider, 1);
  try {
    load_params(ck, w.fcn_params(), true);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Integrity);
    CHECK(std::string(e.what()).find("segnet.visual.s1") != std::string::npos);
  }

  // A matching model needs parameters the segmentation checkpoint lacks.
  JointModel m(third_first_config(), 1);
  CHECK(kind_of([&] { load_params(ck, m.all_params(), true); }) == ErrorKind::Integrity);
  // The FCN part alone loads (external-weights path).
  load_params(ck, m.fcn_params(), false);
  CHECK(nn::checksum(m.fcn_params()) == nn::checksum(a.fcn_params()));
  // Exact loading rejects leftovers.
  JointModel full(third_first_config(), 2);
  const auto big = tmp.path / "full.cvck";
  save_checkpoint(big, full);
  CHECK(kind_of([&] { load_params(read_checkpoint(big), a.fcn_params(), true); }) ==
        ErrorKind::Integrity);
}

TEST_CASE("corrupt checkpoint files are integrity errors") {
  TempDir tmp;
  JointModel a(ModelConfig{}, 1);
  const auto file = tmp.path / "x.cvck";
  save_checkpoint(file, a);
  const auto size = fs::file_size(file);

  CHECK(kind_of([&] { read_checkpoint(tmp.path / "missing.cvck"); }) == ErrorKind::Integrity);

  fs::copy_file(file, tmp.path / "trunc.cvck");
  fs::resize_file(tmp.path / "trunc.cvck", size - 5);
  CHECK(kind_of([&] { read_checkpoint(tmp.path / "trunc.cvck"); }) == ErrorKind::Integrity);

  fs::copy_file(file, tmp.path / "magic.cvck");
  {
    std::fstream f(tmp.path / "magic.cvck", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK(kind_of([&] { read_checkpoint(tmp.path / "magic.cvck"); }) == ErrorKind::Integrity);

  fs::copy_file(file, tmp.path / "tail.cvck");
  {
    std::ofstream f(tmp.path / "tail.cvck", std::ios::app | std::ios::binary);
    f.put('\0');
  }
  CHECK(kind_of([&] { read_checkpoint(tmp.path / "tail.cvck"); }) == ErrorKind::Integrity);
}
