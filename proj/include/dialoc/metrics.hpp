#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialoc/dataset.hpp"
#include "dialoc/model.hpp"

namespace dialoc {

constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// Single-source shortest paths over the waypoint graph, in meters.
std::vector<double> shortest_paths(const WorldMap& world, int source);

/// All-pairs geodesic distances, one Dijkstra per node.
class GeodesicIndex {
 public:
  explicit GeodesicIndex(const WorldMap& world);
  double distance(int a, int b) const;
  int size() const { return n_; }
  /// Empty when symmetric, zero-diagonal and triangle-consistent; otherwise the first violation.
  std::string metric_violation(double tolerance = 1e-9) const;

 private:
  int n_ = 0;
  std::vector<double> d_;
};

/// Euclidean-nearest node in pixel space; ties go to the smallest node id.
int snap_to_node(Point pixel, const WorldMap& world);

/// Fraction of LEs <= k.
double acc_at_k(std::span<const double> les, double k);
/// (k, success rate) for k = 0, 1, ..., max_k meters.
std::vector<std::pair<int, double>> cmc_curve(std::span<const double> les, int max_k);
/// softmax(logits)[gt], computed in double.
double confidence_at_gt(const Tensor& logits, Point gt);

enum class EvalMode { kSingleShot, kMultiShot };
std::string mode_name(EvalMode mode);
EvalMode mode_from_name(const std::string& name);

struct TurnRecord {
  Point pred_pixel;  // map pixels
  int pred_node = 0;
  double le_m = 0.0;
  double confidence = 0.0;
};

struct SampleRecord {
  std::string sample_id;
  std::string world_id;
  int num_turns = 0;
  int gt_node = 0;
  Point gt_pixel;  // map pixels
  std::vector<TurnRecord> turns;  // T rows (multi-shot) or 1 (single-shot)
};

struct SplitSummary {
  int count = 0;
  double acc0 = 0.0;
  double acc5 = 0.0;
  double mean_le = 0.0;
  bool operator==(const SplitSummary&) const = default;
};

struct TurnGroup {
  int count = 0;
  std::vector<double> mean_le;  // index t-1
};

struct LocalizationReport {
  std::string method;
  std::string mode;
  std::string split;
  std::string config_hash;
  int cmc_max_k = 20;
  std::vector<SampleRecord> samples;
  SplitSummary summary;
  std::vector<std::pair<int, double>> cmc;
  std::map<int, TurnGroup> per_turn;
  std::vector<double> confidence;  // final-turn confidence at GT per sample
};

/// Scores one sample from per-turn logits on the target grid.
SampleRecord score_sample(const WorldMap& world, const GeodesicIndex& geo, const DialogSample& sample,
                          const std::vector<Tensor>& logits);

SplitSummary summarize(const std::vector<SampleRecord>& samples);
/// Mean LE at every turn t <= T for each dialog length T.
std::map<int, TurnGroup> per_turn_analysis(const std::vector<SampleRecord>& samples);
/// Fills summary, CMC, per-turn groups and confidence series from the samples.
void finalize_report(LocalizationReport& report);

struct EvalOptions {
  EvalMode mode = EvalMode::kMultiShot;
  std::string method;  // defaults to the model variant name
  int cmc_max_k = 20;
  std::string config_hash;
};

LocalizationReport evaluate(const DiaLocModel& model, const Dataset& dataset, const std::string& split,
                            const EvalOptions& options);

std::string report_to_json(const LocalizationReport& report);
LocalizationReport report_from_json(const std::string& text);
/// Header plus one row: method,mode,split,Acc0,Acc5,meanLE.
std::string report_csv(const std::vector<LocalizationReport>& reports);
/// Aligned text table with Acc0/Acc5 in percent and LE in meters.
std::string report_table(const std::vector<LocalizationReport>& reports);

struct MonteCarloEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  int draws = 0;
};

/// Acc@k of a localizer whose argmax is a uniformly random target pixel, estimated by sampling
/// (sample, pixel) pairs.
MonteCarloEstimate uniform_baseline_acc(const Dataset& dataset, const std::string& split, double k, int h0, int w0,
                                        int draws, std::uint64_t seed);
/// The same quantity by enumerating every target pixel of every sample.
double uniform_baseline_acc_exact(const Dataset& dataset, const std::string& split, double k, int h0, int w0);

}  // namespace dialoc
