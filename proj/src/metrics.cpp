#include "coview/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace coview {

using nlohmann::json;

double iou(const Mask& pred, const Mask& gt) {
  require(pred.same_size(gt), ErrorKind::Shape,
          "iou: mask sizes differ (" + std::to_string(pred.width()) + "x" +
              std::to_string(pred.height()) + " vs " + std::to_string(gt.width()) + "x" +
              std::to_string(gt.height()) + ")");
  size_t inter = 0, uni = 0;
  const auto& a = pred.data();
  const auto& b = gt.data();
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? double(inter) / double(uni) : 1.0;
}

void MatchResult::validate() const {
  require(rows >= 0 && cols >= 0 && distances.size() == size_t(rows) * cols, ErrorKind::Shape,
          "match result: distance matrix size does not match rows x cols");
  require(query_ids.size() == size_t(rows) && candidate_ids.size() == size_t(cols),
          ErrorKind::Shape, "match result: identity labels do not match the matrix shape");
  for (double d : distances)
    require(std::isfinite(d) && d >= 0, ErrorKind::Parameter,
            "match result: distances must be finite and >= 0");
}

std::optional<double> average_precision(std::span<const int> ranked_labels, bool interpolated) {
  std::vector<double> prec;
  prec.reserve(ranked_labels.size());
  int hits = 0;
  for (size_t k = 0; k < ranked_labels.size(); ++k) {
    hits += ranked_labels[k] != 0;
    prec.push_back(double(hits) / double(k + 1));
  }
  if (hits == 0) return std::nullopt;
  if (interpolated)
    for (size_t k = prec.size() - 1; k-- > 0;) prec[k] = std::max(prec[k], prec[k + 1]);
  double sum = 0;
  for (size_t k = 0; k < ranked_labels.size(); ++k)
    if (ranked_labels[k]) sum += prec[k];
  return sum / hits;
}

std::vector<size_t> rank_ascending(std::span<const double> distances) {
  std::vector<size_t> idx(distances.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return distances[a] < distances[b]; });
  return idx;
}

MapSummary mean_average_precision(const MatchResult& m, bool interpolated) {
  m.validate();
  require(m.rows > 0 && m.cols > 0, ErrorKind::EmptyData, "mAP: empty match result");
  MapSummary s;
  double sum = 0;
  for (int r = 0; r < m.rows; ++r) {
    std::span<const double> row(m.distances.data() + size_t(r) * m.cols, size_t(m.cols));
    std::vector<int> labels;
    for (size_t c : rank_ascending(row))
      labels.push_back(m.candidate_ids[c] == m.query_ids[r] ? 1 : 0);
    if (auto ap = average_precision(labels, interpolated)) {
      sum += *ap;
      ++s.queries;
    } else {
      ++s.skipped;
    }
  }
  s.map = s.queries ? sum / s.queries : 0.0;
  return s;
}

ChoiceSummary forced_choice(const MatchResult& m) {
  m.validate();
  require(m.rows > 0 && m.cols > 0, ErrorKind::EmptyData, "forced choice: empty match result");
  ChoiceSummary s;
  for (int r = 0; r < m.rows; ++r) {
    const bool present = std::find(m.candidate_ids.begin(), m.candidate_ids.end(),
                                   m.query_ids[r]) != m.candidate_ids.end();
    if (!present) {
      ++s.excluded;
      continue;
    }
    int best = 0;
    for (int c = 1; c < m.cols; ++c)
      if (m.at(r, c) < m.at(r, best)) best = c;
    ++s.queries;
    s.correct += m.candidate_ids[best] == m.query_ids[r];
  }
  s.acc = s.queries ? double(s.correct) / s.queries : 0.0;
  return s;
}

double forced_choice_acc(const MatchResult& m) { return forced_choice(m).acc; }

std::vector<PrPoint> pr_curve(std::span<const double> distances, std::span<const int> labels) {
  require(distances.size() == labels.size(), ErrorKind::Shape,
          "pr_curve: distances and labels differ in length");
  const auto total = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  require(total > 0, ErrorKind::EmptyData, "pr_curve: no positive pairs");
  std::vector<PrPoint> out;
  out.reserve(labels.size());
  int hits = 0;
  size_t k = 0;
  for (size_t i : rank_ascending(distances)) {
    hits += labels[i] != 0;
    ++k;
    out.push_back({double(hits) / double(k), double(hits) / double(total)});
  }
  return out;
}

void EvalReport::summarize_iou() {
  size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.per_frame.size());
  iou_by_frame.assign(longest, 0.0);
  std::vector<int> counts(longest, 0);
  double total = 0;
  int n = 0;
  for (const auto& s : sequences) {
    for (size_t t = 0; t < s.per_frame.size(); ++t) {
      iou_by_frame[t] += s.per_frame[t];
      ++counts[t];
      if (t > 0) {
        total += s.per_frame[t];
        ++n;
      }
    }
  }
  for (size_t t = 0; t < longest; ++t)
    if (counts[t]) iou_by_frame[t] /= counts[t];
  mean_iou = n ? total / n : 0.0;

  // IoU as a function of sequence length: frames 1..L-1 of every sequence.
  iou_vs_length.assign(longest + 1, 0.0);
  for (size_t len = 2; len <= longest; ++len) {
    double sum = 0;
    int m = 0;
    for (const auto& s : sequences)
      for (size_t t = 1; t < std::min(len, s.per_frame.size()); ++t) {
        sum += s.per_frame[t];
        ++m;
      }
    iou_vs_length[len] = m ? sum / m : 0.0;
  }
}

json EvalReport::to_json() const {
  json seqs = json::array();
  for (const auto& s : sequences)
    seqs.push_back({{"scene", s.scene},
                    {"view", s.view},
                    {"identity", s.identity},
                    {"per_frame", s.per_frame},
                    {"mean", s.mean}});
  json j{{"problem", problem},         {"method", method},
         {"dataset", dataset},         {"model", model},
         {"mean_iou", mean_iou},       {"iou_by_frame", iou_by_frame},
         {"iou_vs_length", iou_vs_length}, {"sequences", seqs},
         {"has_matching", has_matching}};
  if (has_matching) {
    json buckets = json::object();
    for (const auto& [k, b] : acc_by_candidates)
      buckets[std::to_string(k)] = {{"queries", b.queries}, {"correct", b.correct},
                                    {"acc", b.acc()}};
    json pr_pts = json::array();
    for (const auto& p : pr) pr_pts.push_back({p.precision, p.recall});
    j["map"] = map;
    j["map_queries"] = map_queries;
    j["map_skipped"] = map_skipped;
    j["acc"] = acc;
    j["acc_queries"] = acc_queries;
    j["acc_excluded"] = acc_excluded;
    j["acc_by_candidates"] = buckets;
    j["pr"] = pr_pts;
  }
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  try {
    EvalReport r;
    r.problem = j.value("problem", "");
    r.method = j.value("method", "");
    r.dataset = j.value("dataset", "");
    r.model = j.value("model", "");
    r.mean_iou = j.at("mean_iou").get<double>();
    r.iou_by_frame = j.at("iou_by_frame").get<std::vector<double>>();
    r.iou_vs_length = j.at("iou_vs_length").get<std::vector<double>>();
    for (const auto& s : j.at("sequences"))
      r.sequences.push_back({s.at("scene").get<int>(), s.at("view").get<int>(),
                             s.at("identity").get<int>(),
                             s.at("per_frame").get<std::vector<double>>(),
                             s.at("mean").get<double>()});
    r.has_matching = j.value("has_matching", false);
    if (r.has_matching) {
      r.map = j.at("map").get<double>();
      r.map_queries = j.at("map_queries").get<int>();
      r.map_skipped = j.at("map_skipped").get<int>();
      r.acc = j.at("acc").get<double>();
      r.acc_queries = j.at("acc_queries").get<int>();
      r.acc_excluded = j.at("acc_excluded").get<int>();
      for (const auto& [k, b] : j.at("acc_by_candidates").items())
        r.acc_by_candidates[std::stoi(k)] = {b.at("queries").get<int>(),
                                             b.at("correct").get<int>()};
      for (const auto& p : j.at("pr"))
        r.pr.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, std::string("malformed report: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::Integrity, "malformed report: bad candidate-count key");
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  return os;
}

}  // namespace

void EvalReport::write_iou_csv(const std::filesystem::path& path) const {
  auto os = open_out(path);
  os << "frame,iou_at_frame,sequence_length,mean_iou_up_to_length\n";
  for (size_t t = 0; t < iou_by_frame.size(); ++t) {
    os << t << ',' << iou_by_frame[t] << ',' << t + 1 << ',';
    if (t + 1 < iou_vs_length.size() && t >= 1) os << iou_vs_length[t + 1];
    os << '\n';
  }
}

void EvalReport::write_pr_csv(const std::filesystem::path& path) const {
  auto os = open_out(path);
  os << "rank,precision,recall\n";
  for (size_t k = 0; k < pr.size(); ++k)
    os << k + 1 << ',' << pr[k].precision << ',' << pr[k].recall << '\n';
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Integrity, "missing report " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, "cannot parse report " + path.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  auto os = open_out(path);
  os << report.to_json().dump(2) << '\n';
}

}  // namespace coview
