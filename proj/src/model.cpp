#include "coview/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace coview {

using nlohmann::json;

void to_json(json& j, const SegNetConfig& c) {
  j = json{{"width", c.width},   {"height", c.height}, {"flow_stack", c.flow_stack},
           {"widths", c.widths}, {"convs", c.convs},   {"head_channels", c.head_channels},
           {"foreground_prior", c.foreground_prior},
           {"visual", c.visual}, {"motion", c.motion}};
}

void from_json(const json& j, SegNetConfig& c) {
  c = SegNetConfig{};
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.flow_stack = j.value("flow_stack", c.flow_stack);
  c.widths = j.value("widths", c.widths);
  c.convs = j.value("convs", c.convs);
  c.head_channels = j.value("head_channels", c.head_channels);
  c.foreground_prior = j.value("foreground_prior", c.foreground_prior);
  c.visual = j.value("visual", c.visual);
  c.motion = j.value("motion", c.motion);
}

void to_json(json& j, const MatchConfig& c) {
  j = json{{"problem", to_string(c.problem)},   {"reweight", to_string(c.reweight)},
           {"embed_channels", c.embed_channels}, {"head_width", c.head_width},
           {"head_depth", c.head_depth},         {"post_kernel", c.post_kernel},
           {"margin", c.margin}};
}

void from_json(const json& j, MatchConfig& c) {
  c = MatchConfig{};
  if (j.contains("problem")) c.problem = problem_from_string(j.at("problem").get<std::string>());
  if (j.contains("reweight"))
    c.reweight = reweight_mode_from_string(j.at("reweight").get<std::string>());
  c.embed_channels = j.value("embed_channels", c.embed_channels);
  c.head_width = j.value("head_width", c.head_width);
  c.head_depth = j.value("head_depth", c.head_depth);
  c.post_kernel = j.value("post_kernel", c.post_kernel);
  c.margin = j.value("margin", c.margin);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"seg", c.seg}, {"with_match", c.with_match}};
  if (c.with_match) j["match"] = c.match;
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("seg")) c.seg = j.at("seg").get<SegNetConfig>();
  c.with_match = j.value("with_match", false);
  if (j.contains("match")) c.match = j.at("match").get<MatchConfig>();
}

JointModel::JointModel(const ModelConfig& config, uint64_t seed)
    : config_(config), seg_(config.seg, seed) {
  if (!config.with_match) return;
  config.match.validate();
  head_ = std::make_shared<EmbeddingHead>(config.match, config.seg.deep_channels(),
                                          config.seg.grid_width(), config.seg.grid_height(),
                                          seed ^ 0x9e3779b97f4a7c15ULL);
  if (config.match.problem == Problem::ThirdFirst)
    fp_.emplace(config.seg, head_, seed ^ 0xc2b2ae3d27d4eb4fULL);
}

nn::ParamList JointModel::match_params() {
  nn::ParamList out;
  if (head_) out = head_->params();
  if (fp_)
    for (auto* p : fp_->stream_params()) out.push_back(p);
  return out;
}

nn::ParamList JointModel::all_params() {
  nn::ParamList out = fcn_params();
  for (auto* p : match_params()) out.push_back(p);
  return out;
}

// ------------------------------------------------------------ checkpoint

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::vector<unsigned char> buf, std::string path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  uint32_t u32() {
    need(4);
    const unsigned char* b = buf_.data() + pos_;
    pos_ += 4;
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(size_t n) const {
    if (buf_.size() - pos_ < n) fail(ErrorKind::Integrity, "truncated checkpoint " + path_);
  }
  std::vector<unsigned char> buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

ModelConfig Checkpoint::model_config() const {
  try {
    return meta.at("model").get<ModelConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, std::string("checkpoint model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, JointModel& model, const json& extra) {
  json meta = extra;
  meta["model"] = model.config();
  const auto params = model.all_params();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot write " + tmp.string());
    os.write("CVCK", 4);
    put_u32(os, kCheckpointVersion);
    put_string(os, meta.dump());
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
      put_string(os, p->name);
      put_u32(os, static_cast<uint32_t>(p->shape.size()));
      for (int d : p->shape) put_u32(os, static_cast<uint32_t>(d));
      for (float v : p->value) put_u32(os, std::bit_cast<uint32_t>(v));
    }
    if (!os) fail(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Integrity, "missing checkpoint " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), "CVCK", 4) != 0)
    fail(ErrorKind::Integrity, "bad checkpoint magic in " + path.string());
  Reader r(std::vector<unsigned char>(buf.begin() + 4, buf.end()), path.string());
  const uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::Integrity,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.meta = json::parse(r.str());
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, "checkpoint metadata: " + std::string(e.what()));
  }
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Checkpoint::Tensor t;
    const uint32_t ndim = r.u32();
    require(ndim <= 8, ErrorKind::Integrity, "implausible rank for " + name);
    size_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<int>(r.u32()));
      count *= static_cast<size_t>(t.shape.back());
    }
    require(count * 4 <= r.remaining(), ErrorKind::Integrity,
            "truncated payload for " + name + " in " + path.string());
    t.data.resize(count);
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
    require(ck.params.emplace(std::move(name), std::move(t)).second, ErrorKind::Integrity,
            "duplicate parameter in " + path.string());
  }
  require(r.done(), ErrorKind::Integrity, "trailing bytes in " + path.string());
  return ck;
}

void load_params(const Checkpoint& ckpt, const nn::ParamList& params, bool exact) {
  for (auto* p : params) {
    const auto it = ckpt.params.find(p->name);
    require(it != ckpt.params.end(), ErrorKind::Integrity,
            "checkpoint has no parameter '" + p->name + "'");
    auto shape_str = [](const std::vector<int>& s) {
      std::string o;
      for (size_t i = 0; i < s.size(); ++i) o += (i ? "x" : "") + std::to_string(s[i]);
      return o;
    };
    require(it->second.shape == p->shape, ErrorKind::Integrity,
            "parameter '" + p->name + "' has shape " + shape_str(it->second.shape) +
                " in the checkpoint, model expects " + shape_str(p->shape));
    p->value = it->second.data;
  }
  if (exact)
    require(ckpt.params.size() == params.size(), ErrorKind::Integrity,
            "checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                std::to_string(params.size()));
}

JointModel load_model(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  JointModel model(ck.model_config(), 0);
  load_params(ck, model.all_params(), true);
  return model;
}

}  // namespace coview
