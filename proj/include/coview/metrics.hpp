#pragma once

// Segmentation and matching metrics. Ties are broken by stable input order
// everywhere so results are reproducible bit for bit.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coview/core.hpp"

namespace coview {

// |pred & gt| / |pred | gt|; 1.0 when both are empty.
double iou(const Mask& pred, const Mask& gt);

// Distances between every query (row) and candidate (column).
struct MatchResult {
  Problem problem = Problem::ThirdThird;
  int rows = 0, cols = 0;
  std::vector<double> distances;  // row-major rows x cols
  std::vector<int> query_ids, candidate_ids;

  double at(int r, int c) const { return distances[size_t(r) * cols + c]; }
  double& at(int r, int c) { return distances[size_t(r) * cols + c]; }
  // Throws on inconsistent sizes or negative / non-finite distances.
  void validate() const;
};

// Mean of precision@k over the ranks k of the positives. nullopt without positives.
// `interpolated` replaces precision@k by the max precision at any rank >= k.
std::optional<double> average_precision(std::span<const int> ranked_labels,
                                        bool interpolated = false);

// Stable ascending order of `distances`.
std::vector<size_t> rank_ascending(std::span<const double> distances);

struct MapSummary {
  double map = 0;
  int queries = 0;  // queries that contributed
  int skipped = 0;  // queries without any positive
};
MapSummary mean_average_precision(const MatchResult& m, bool interpolated = false);

struct ChoiceSummary {
  double acc = 0;
  int queries = 0;   // queries with a true match present
  int excluded = 0;  // queries whose true match is absent
  int correct = 0;
};
// Per row, picks the nearest candidate (lowest index on ties).
ChoiceSummary forced_choice(const MatchResult& m);
double forced_choice_acc(const MatchResult& m);

struct PrPoint {
  double precision = 0, recall = 0;
};
std::vector<PrPoint> pr_curve(std::span<const double> distances, std::span<const int> labels);

struct SequenceIoU {
  int scene = 0, view = 0, identity = 0;
  std::vector<double> per_frame;  // frame 0 included (ground truth given)
  double mean = 0;                // over frames 1..n-1
};

struct ChoiceBucket {
  int queries = 0, correct = 0;
  double acc() const { return queries ? double(correct) / queries : 0.0; }
};

struct EvalReport {
  std::string problem;
  std::string method;
  std::string dataset;
  std::string model;

  std::vector<SequenceIoU> sequences;
  double mean_iou = 0;
  std::vector<double> iou_by_frame;   // mean over sequences, indexed by frame
  std::vector<double> iou_vs_length;  // mean IoU over frames 1..L-1, indexed by L

  bool has_matching = false;
  double map = 0;
  int map_queries = 0, map_skipped = 0;
  double acc = 0;
  int acc_queries = 0, acc_excluded = 0;
  std::map<int, ChoiceBucket> acc_by_candidates;  // keyed by candidate count
  std::vector<PrPoint> pr;

  // Fills mean_iou, iou_by_frame and iou_vs_length from `sequences`.
  void summarize_iou();
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void write_iou_csv(const std::filesystem::path& path) const;
  void write_pr_csv(const std::filesystem::path& path) const;
};

EvalReport load_report(const std::filesystem::path& path);
void save_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace coview
