#pragma once

#include <span>
#include <vector>

#include "laneseq/geometry.hpp"
#include "laneseq/metrics.hpp"

namespace laneseq {

struct RewardWeights {
  double lambda1 = 0.3;  // segmentation FP penalty
  double lambda2 = 0.3;  // anchor FP penalty
  double lambda3 = 0.1;  // parameter FP penalty
  double lambda4 = 0.2;  // segmentation objective scale
  double lambda5 = 1.0;  // anchor objective scale
  double lambda6 = 1.5;  // parameter objective scale
};

struct RewardBreakdown {
  struct PairTerm {
    int pred = -1;
    int gt = -1;
    double liou = 0.0;
    double extra = 0.0;  // mask IoU (segmentation) or rescaled distance (anchor)
    double sum = 0.0;    // this pair's contribution before the 1/K mean
  };

  double total = 0.0;
  int K = 0;
  double fp_penalty = 0.0;  // lambda * fp_rate, already scaled
  std::vector<PairTerm> per_tp_terms;

  // total must equal this to 1e-9; the matched-sum term is 0 when K = 0.
  double recompute_total() const;
};

// (1/K) sum[LIOU + mask IoU] - lambda1 * FP_rate over matched polygon pairs.
RewardBreakdown reward_segmentation(std::span<const PolygonLane> preds,
                                    std::span<const PolygonLane> gts,
                                    ImageDims dims, const RewardWeights& w,
                                    double tau = kDefaultTau);

// (1/K) sum[LIOU + (1 - d/H) clamped to [0,1]] - lambda2 * FP_rate.
RewardBreakdown reward_anchor(std::span<const PolylineLane> preds,
                              std::span<const PolylineLane> gts,
                              ImageDims dims, const RewardWeights& w,
                              double tau = kDefaultTau);

// (1/K) sum[LIOU] - lambda3 * FP_rate over matched parameter lanes.
RewardBreakdown reward_parameter(std::span<const PolyLane> preds,
                                 std::span<const PolyLane> gts, ImageDims dims,
                                 const RewardWeights& w,
                                 double tau = kDefaultTau);

// lambda4 * seg + lambda5 * anchor + lambda6 * param.
double combined_objective(double seg_obj, double anchor_obj, double param_obj,
                          const RewardWeights& w);

}  // namespace laneseq
