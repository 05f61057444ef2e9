#include "laneseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace laneseq {

MatchResult match_from_scores(const std::vector<std::vector<double>>& scores,
                              double tau) {
  const int n_preds = static_cast<int>(scores.size());
  const int n_gts = n_preds > 0 ? static_cast<int>(scores[0].size())
                                : 0;
  struct Cand {
    double score;
    int pred;
    int gt;
  };
  std::vector<Cand> cands;
  for (int p = 0; p < n_preds; ++p) {
    if (static_cast<int>(scores[static_cast<size_t>(p)].size()) != n_gts)
      throw std::invalid_argument("match_from_scores: ragged score matrix");
    for (int g = 0; g < n_gts; ++g) {
      const double s = scores[static_cast<size_t>(p)][static_cast<size_t>(g)];
      if (s >= tau) cands.push_back({s, p, g});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });

  MatchResult out;
  std::vector<char> pred_used(static_cast<size_t>(n_preds), 0);
  std::vector<char> gt_used(static_cast<size_t>(n_gts), 0);
  for (const Cand& c : cands) {
    if (pred_used[static_cast<size_t>(c.pred)] ||
        gt_used[static_cast<size_t>(c.gt)])
      continue;
    pred_used[static_cast<size_t>(c.pred)] = 1;
    gt_used[static_cast<size_t>(c.gt)] = 1;
    out.pairs.push_back({c.pred, c.gt, c.score});
  }
  for (int p = 0; p < n_preds; ++p)
    if (!pred_used[static_cast<size_t>(p)]) out.fp_indices.push_back(p);
  for (int g = 0; g < n_gts; ++g)
    if (!gt_used[static_cast<size_t>(g)]) out.fn_indices.push_back(g);
  return out;
}

namespace {

std::vector<std::vector<double>> pairwise_liou(std::span<const Lane> preds,
                                               std::span<const Lane> gts,
                                               ImageDims dims, int n_rows) {
  std::vector<SampledLane> ps, gs;
  ps.reserve(preds.size());
  gs.reserve(gts.size());
  for (const Lane& l : preds) ps.push_back(sample_rows(l, dims, n_rows));
  for (const Lane& l : gts) gs.push_back(sample_rows(l, dims, n_rows));
  const double e = default_liou_half_width(dims);
  std::vector<std::vector<double>> scores(
      preds.size(), std::vector<double>(gts.size(), -1.0));
  for (size_t p = 0; p < preds.size(); ++p)
    for (size_t g = 0; g < gts.size(); ++g)
      scores[p][g] = line_iou(ps[p], gs[g], e);
  return scores;
}

}  // namespace

MatchResult match_lanes(std::span<const Lane> preds, std::span<const Lane> gts,
                        ImageDims dims, double tau, int n_rows) {
  if (!(tau > 0.0 && tau <= 1.0))
    throw std::invalid_argument("match_lanes: tau must be in (0, 1]");
  if (preds.empty() || gts.empty()) {
    MatchResult out;
    for (int p = 0; p < static_cast<int>(preds.size()); ++p)
      out.fp_indices.push_back(p);
    for (int g = 0; g < static_cast<int>(gts.size()); ++g)
      out.fn_indices.push_back(g);
    return out;
  }
  return match_from_scores(pairwise_liou(preds, gts, dims, n_rows), tau);
}

EvalReport f1_from_counts(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0)
    throw std::invalid_argument("f1_from_counts: negative count");
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double tusimple_accuracy(std::span<const Lane> preds,
                         std::span<const PolylineLane> gts, ImageDims dims) {
  // Pair lanes one-to-one by best Line-IoU; any positive score pairs, so
  // that point accuracy (not the F1 threshold) decides correctness.
  std::vector<Lane> gt_lanes;
  gt_lanes.reserve(gts.size());
  for (const PolylineLane& g : gts) gt_lanes.push_back(g);
  MatchResult match;
  if (!preds.empty() && !gts.empty())
    match = match_from_scores(
        pairwise_liou(preds, gt_lanes, dims, kDefaultLiouRows), 1e-9);

  std::vector<int> gt_to_pred(gts.size(), -1);
  for (const auto& pair : match.pairs)
    gt_to_pred[static_cast<size_t>(pair.gt)] = pair.pred;

  long total = 0, correct = 0;
  for (size_t g = 0; g < gts.size(); ++g) {
    const auto& pts = gts[g].points;
    const int pred_idx = gt_to_pred[g];
    for (size_t k = 0; k < pts.size(); ++k) {
      ++total;
      if (pred_idx < 0) continue;
      // Local angle from vertical via central differences on the gt chain.
      const size_t k0 = k > 0 ? k - 1 : k;
      const size_t k1 = k + 1 < pts.size() ? k + 1 : k;
      const double dx = pts[k1].x - pts[k0].x;
      const double dy = pts[k1].y - pts[k0].y;
      const double norm = std::sqrt(dx * dx + dy * dy);
      const double cos_a = norm > 0.0 ? std::fabs(dy) / norm : 1.0;
      const double threshold = cos_a > 1e-9 ? 20.0 / cos_a : 1e18;
      const auto px =
          lane_x_at(preds[static_cast<size_t>(pred_idx)], pts[k].y, dims);
      if (px && std::fabs(*px - pts[k].x) < threshold) ++correct;
    }
  }
  if (total == 0) return 1.0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

double fp_rate(const MatchResult& match, int n_preds) {
  if (n_preds < static_cast<int>(match.fp_indices.size()))
    throw std::invalid_argument("fp_rate: n_preds smaller than FP count");
  return static_cast<double>(match.fp_indices.size()) /
         std::max(1, n_preds);
}

}  // namespace laneseq
