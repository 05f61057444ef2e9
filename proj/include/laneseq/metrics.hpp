#pragma once

#include <optional>
#include <span>
#include <vector>

#include "laneseq/geometry.hpp"

namespace laneseq {

inline constexpr double kDefaultTau = 0.5;

// One-to-one assignment between predictions and ground truths.
struct MatchResult {
  struct Pair {
    int pred = -1;
    int gt = -1;
    double liou = 0.0;
  };
  std::vector<Pair> pairs;
  std::vector<int> fp_indices;  // unmatched prediction indices
  std::vector<int> fn_indices;  // unmatched ground-truth indices

  int tp() const { return static_cast<int>(pairs.size()); }
};

// Greedy matching on a precomputed score matrix (scores[p][g]): repeatedly
// takes the highest-scoring unmatched pair with score >= tau, ties broken by
// (pred index, gt index).
MatchResult match_from_scores(const std::vector<std::vector<double>>& scores,
                              double tau);

// Computes pairwise Line-IoU on the default row grid and matches greedily.
MatchResult match_lanes(std::span<const Lane> preds, std::span<const Lane> gts,
                        ImageDims dims, double tau,
                        int n_rows = kDefaultLiouRows);

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
  std::optional<double> accuracy;  // Tusimple mode only
};

EvalReport f1_from_counts(long tp, long fp, long fn);

// Tusimple-style point accuracy: each ground-truth keypoint counts correct
// iff its matched prediction's x at that row is within 20 / cos(a_yl) px,
// where a_yl is the ground-truth lane's local angle from vertical (central
// differences). Lanes are paired greedily by Line-IoU with any positive
// score, independent of the F1 threshold. Zero ground-truth points -> 1.0.
double tusimple_accuracy(std::span<const Lane> preds,
                         std::span<const PolylineLane> gts, ImageDims dims);

// |fp_indices| / max(1, n_preds).
double fp_rate(const MatchResult& match, int n_preds);

}  // namespace laneseq
