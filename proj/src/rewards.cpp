#include "laneseq/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace laneseq {

double RewardBreakdown::recompute_total() const {
  double acc = 0.0;
  for (const PairTerm& t : per_tp_terms) acc += t.sum;
  const double matched = K > 0 ? acc / K : 0.0;
  return matched - fp_penalty;
}

namespace {

template <typename LaneT>
std::vector<Lane> as_lanes(std::span<const LaneT> lanes) {
  std::vector<Lane> out;
  out.reserve(lanes.size());
  for (const LaneT& l : lanes) out.push_back(l);
  return out;
}

RewardBreakdown finalize(MatchResult match, int n_preds, double lambda,
                         std::vector<RewardBreakdown::PairTerm> terms) {
  RewardBreakdown out;
  out.K = match.tp();
  out.per_tp_terms = std::move(terms);
  out.fp_penalty = lambda * fp_rate(match, n_preds);
  out.total = out.recompute_total();
  return out;
}

}  // namespace

RewardBreakdown reward_segmentation(std::span<const PolygonLane> preds,
                                    std::span<const PolygonLane> gts,
                                    ImageDims dims, const RewardWeights& w,
                                    double tau) {
  const auto pred_lanes = as_lanes(preds);
  const auto gt_lanes = as_lanes(gts);
  MatchResult match = match_lanes(pred_lanes, gt_lanes, dims, tau);
  std::vector<RewardBreakdown::PairTerm> terms;
  terms.reserve(match.pairs.size());
  for (const auto& pair : match.pairs) {
    const RasterMask pm =
        rasterize_polygon(preds[static_cast<size_t>(pair.pred)], dims);
    const RasterMask gm =
        rasterize_polygon(gts[static_cast<size_t>(pair.gt)], dims);
    const double miou = mask_iou(pm, gm);
    terms.push_back(
        {pair.pred, pair.gt, pair.liou, miou, pair.liou + miou});
  }
  return finalize(std::move(match), static_cast<int>(preds.size()), w.lambda1,
                  std::move(terms));
}

RewardBreakdown reward_anchor(std::span<const PolylineLane> preds,
                              std::span<const PolylineLane> gts,
                              ImageDims dims, const RewardWeights& w,
                              double tau) {
  const auto pred_lanes = as_lanes(preds);
  const auto gt_lanes = as_lanes(gts);
  MatchResult match = match_lanes(pred_lanes, gt_lanes, dims, tau);
  std::vector<RewardBreakdown::PairTerm> terms;
  terms.reserve(match.pairs.size());
  for (const auto& pair : match.pairs) {
    double d_r = 0.0;
    try {
      const double d = keypoint_distance(preds[static_cast<size_t>(pair.pred)],
                                         gts[static_cast<size_t>(pair.gt)],
                                         dims);
      d_r = std::clamp(1.0 - d / dims.height, 0.0, 1.0);
    } catch (const std::invalid_argument&) {
      d_r = 0.0;  // incomparable matched pair: no distance credit
    }
    terms.push_back({pair.pred, pair.gt, pair.liou, d_r, pair.liou + d_r});
  }
  return finalize(std::move(match), static_cast<int>(preds.size()), w.lambda2,
                  std::move(terms));
}

RewardBreakdown reward_parameter(std::span<const PolyLane> preds,
                                 std::span<const PolyLane> gts, ImageDims dims,
                                 const RewardWeights& w, double tau) {
  const auto pred_lanes = as_lanes(preds);
  const auto gt_lanes = as_lanes(gts);
  MatchResult match = match_lanes(pred_lanes, gt_lanes, dims, tau);
  std::vector<RewardBreakdown::PairTerm> terms;
  terms.reserve(match.pairs.size());
  for (const auto& pair : match.pairs)
    terms.push_back({pair.pred, pair.gt, pair.liou, 0.0, pair.liou});
  return finalize(std::move(match), static_cast<int>(preds.size()), w.lambda3,
                  std::move(terms));
}

double combined_objective(double seg_obj, double anchor_obj, double param_obj,
                          const RewardWeights& w) {
  return w.lambda4 * seg_obj + w.lambda5 * anchor_obj + w.lambda6 * param_obj;
}

}  // namespace laneseq
