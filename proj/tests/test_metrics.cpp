#include <vector>
#include <functional>
#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "laneseq/metrics.hpp"
#include "laneseq/rng.hpp"

using namespace laneseq;

namespace {

PolylineLane straight_lane(double x0, double slope, double y0, double y1,
                           int n = 14) {
  PolylineLane lane;
  for (int k = 0; k < n; ++k) {
    const double y = y0 + (y1 - y0) * k / (n - 1);
    lane.points.push_back({x0 + slope * (y - y0), y});
  }
  return lane;
}

// Exhaustive maximum-cardinality matching over all injective assignments,
// counting only pairs with score >= tau. Feasible for <= 4 lanes per side.
int oracle_max_matching(const std::vector<std::vector<double>>& scores,
                        double tau) {
  const int P = static_cast<int>(scores.size());
  const int G = P > 0 ? static_cast<int>(scores[0].size()) : 0;
  int best = 0;
  std::vector<int> assign(static_cast<size_t>(P), -1);
  std::vector<char> used(static_cast<size_t>(G), 0);
  const std::function<void(int, int)> rec = [&](int p, int count) {
    best = std::max(best, count);
    if (p == P) return;
    rec(p + 1, count);  // leave p unmatched
    for (int g = 0; g < G; ++g) {
      if (used[static_cast<size_t>(g)]) continue;
      if (scores[static_cast<size_t>(p)][static_cast<size_t>(g)] < tau)
        continue;
      used[static_cast<size_t>(g)] = 1;
      rec(p + 1, count + 1);
      used[static_cast<size_t>(g)] = 0;
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST_CASE("match_lanes: identity, below threshold, spec score matrix") {
  const ImageDims dims{160, 64};
  std::vector<Lane> gts{straight_lane(40, 0.0, 0, 64),
                        straight_lane(100, 0.1, 0, 64)};
  const MatchResult identical = match_lanes(gts, gts, dims, 0.5);
  CHECK(identical.tp() == 2);
  CHECK(identical.fp_indices.empty());
  CHECK(identical.fn_indices.empty());

  std::vector<Lane> far{straight_lane(40, 0.0, 0, 64)};
  std::vector<Lane> gt1{straight_lane(140, 0.0, 0, 64)};
  const MatchResult miss = match_lanes(far, gt1, dims, 0.5);
  CHECK(miss.tp() == 0);
  CHECK(miss.fp_indices.size() == 1);
  CHECK(miss.fn_indices.size() == 1);

  const std::vector<std::vector<double>> scores{{0.9, 0.6}, {0.7, 0.8}};
  const MatchResult greedy = match_from_scores(scores, 0.5);
  REQUIRE(greedy.tp() == 2);
  CHECK(greedy.pairs[0].pred == 0);
  CHECK(greedy.pairs[0].gt == 0);
  CHECK(greedy.pairs[1].pred == 1);
  CHECK(greedy.pairs[1].gt == 1);
  CHECK(oracle_max_matching(scores, 0.5) == 2);
}

TEST_CASE("match_lanes: one-to-one bookkeeping and permutation invariance") {
  const ImageDims dims{160, 64};
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_gt = rng.uniform_int(4) + 1;
    std::vector<Lane> gts, preds;
    for (int i = 0; i < n_gt; ++i)
      gts.push_back(
          straight_lane(20.0 + 120.0 * i / n_gt, rng.uniform(-0.1, 0.1),
                        rng.uniform(0, 20), 64));
    for (int i = 0; i < n_gt; ++i) {
      const auto& base = std::get<PolylineLane>(gts[static_cast<size_t>(i)]);
      PolylineLane jitter = base;
      const double dx = rng.uniform(-2.0, 2.0);
      for (auto& p : jitter.points) p.x += dx;
      preds.push_back(jitter);
    }
    if (rng.uniform() < 0.5) preds.push_back(straight_lane(5, 0.0, 0, 64));

    const MatchResult m = match_lanes(preds, gts, dims, 0.5);
    std::vector<int> seen_pred, seen_gt;
    for (const auto& p : m.pairs) {
      seen_pred.push_back(p.pred);
      seen_gt.push_back(p.gt);
      CHECK(p.liou >= 0.5);
    }
    for (int f : m.fp_indices) seen_pred.push_back(f);
    for (int f : m.fn_indices) seen_gt.push_back(f);
    std::sort(seen_pred.begin(), seen_pred.end());
    std::sort(seen_gt.begin(), seen_gt.end());
    for (size_t i = 0; i < seen_pred.size(); ++i)
      CHECK(seen_pred[i] == static_cast<int>(i));
    for (size_t i = 0; i < seen_gt.size(); ++i)
      CHECK(seen_gt[i] == static_cast<int>(i));

    // Reversing prediction order never changes K.
    std::vector<Lane> reversed(preds.rbegin(), preds.rend());
    CHECK(match_lanes(reversed, gts, dims, 0.5).tp() == m.tp());
  }
}

TEST_CASE("greedy matching equals exhaustive optimum on random scenes") {
  const ImageDims dims{160, 64};
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_gt = rng.uniform_int(4) + 1;
    std::vector<Lane> gts, preds;
    for (int i = 0; i < n_gt; ++i)
      gts.push_back(
          straight_lane(20.0 + 120.0 * i / n_gt + rng.uniform(0, 6),
                        rng.uniform(-0.1, 0.1), rng.uniform(0, 24), 64));
    const int n_pred = rng.uniform_int(4) + 1;
    for (int i = 0; i < n_pred; ++i) {
      if (i < n_gt && rng.uniform() < 0.8) {
        PolylineLane jitter = std::get<PolylineLane>(gts[static_cast<size_t>(i)]);
        const double dx = rng.uniform(-3.0, 3.0);
        for (auto& p : jitter.points) p.x = std::clamp(p.x + dx, 0.0, 160.0);
        preds.push_back(jitter);
      } else {
        preds.push_back(straight_lane(rng.uniform(10, 150),
                                      rng.uniform(-0.1, 0.1),
                                      rng.uniform(0, 24), 64));
      }
    }

    std::vector<std::vector<double>> scores(preds.size(),
                                            std::vector<double>(gts.size()));
    for (size_t p = 0; p < preds.size(); ++p)
      for (size_t g = 0; g < gts.size(); ++g)
        scores[p][g] = line_iou(preds[p], gts[g], dims);

    const MatchResult greedy = match_from_scores(scores, 0.5);
    CHECK(greedy.tp() == oracle_max_matching(scores, 0.5));
  }
}

TEST_CASE("f1_from_counts: formula and conventions") {
  const EvalReport a = f1_from_counts(1, 1, 0);
  CHECK(a.precision == doctest::Approx(0.5));
  CHECK(a.recall == doctest::Approx(1.0));
  CHECK(a.f1 == doctest::Approx(2.0 / 3.0));

  const EvalReport zero = f1_from_counts(0, 0, 0);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);

  const EvalReport b = f1_from_counts(7, 3, 1);
  CHECK(b.precision == doctest::Approx(0.7));
  CHECK(b.recall == doctest::Approx(0.875));
  CHECK(b.f1 == doctest::Approx(0.7777777778));

  CHECK_THROWS_AS((void)f1_from_counts(-1, 0, 0), std::invalid_argument);
}

TEST_CASE("f1_from_counts: bounds and exactness conditions") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const long tp = rng.uniform_int(10);
    const long fp = rng.uniform_int(10);
    const long fn = rng.uniform_int(10);
    const EvalReport r = f1_from_counts(tp, fp, fn);
    CHECK(r.f1 <= std::min(1.0, 2.0 * r.precision) + 1e-12);
    CHECK(r.f1 <= 2.0 * r.recall + 1e-12);
    if (r.f1 == doctest::Approx(1.0))
      CHECK((fp == 0 && fn == 0 && tp > 0));
    if (fp == 0 && fn == 0 && tp > 0) CHECK(r.f1 == doctest::Approx(1.0));
  }
}

TEST_CASE("tusimple_accuracy: vertical lane thresholds") {
  const ImageDims dims{800, 320};
  const PolylineLane gt = straight_lane(400, 0.0, 0, 320);
  std::vector<PolylineLane> gts{gt};

  std::vector<Lane> perfect{gt};
  CHECK(tusimple_accuracy(perfect, gts, dims) == doctest::Approx(1.0));

  PolylineLane off19 = gt;
  for (auto& p : off19.points) p.x += 19.0;
  std::vector<Lane> p19{off19};
  CHECK(tusimple_accuracy(p19, gts, dims) == doctest::Approx(1.0));

  PolylineLane off21 = gt;
  for (auto& p : off21.points) p.x += 21.0;
  std::vector<Lane> p21{off21};
  CHECK(tusimple_accuracy(p21, gts, dims) == doctest::Approx(0.0));
}

TEST_CASE("tusimple_accuracy: 45-degree lane widens the threshold") {
  const ImageDims dims{800, 320};
  // dx = dy: local angle 45 degrees, threshold 20 / cos(pi/4) ~ 28.28.
  const PolylineLane gt = straight_lane(200, 1.0, 0, 320);
  std::vector<PolylineLane> gts{gt};

  PolylineLane off25 = gt;
  for (auto& p : off25.points) p.x += 25.0;
  std::vector<Lane> p25{off25};
  CHECK(tusimple_accuracy(p25, gts, dims) == doctest::Approx(1.0));

  PolylineLane off30 = gt;
  for (auto& p : off30.points) p.x += 30.0;
  std::vector<Lane> p30{off30};
  CHECK(tusimple_accuracy(p30, gts, dims) == doctest::Approx(0.0));
}

TEST_CASE("tusimple_accuracy: unmatched ground truth counts as incorrect") {
  const ImageDims dims{800, 320};
  std::vector<PolylineLane> gts{straight_lane(200, 0.0, 0, 320),
                                straight_lane(600, 0.0, 0, 320)};
  std::vector<Lane> preds{straight_lane(200, 0.0, 0, 320)};
  CHECK(tusimple_accuracy(preds, gts, dims) == doctest::Approx(0.5));
  CHECK(tusimple_accuracy({}, {}, dims) == 1.0);
}

TEST_CASE("tusimple_accuracy: invariant under horizontal mirroring") {
  const ImageDims dims{800, 320};
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PolylineLane> gts;
    std::vector<Lane> preds;
    const int n = rng.uniform_int(3) + 1;
    for (int i = 0; i < n; ++i) {
      const PolylineLane g = straight_lane(
          150.0 + 500.0 * i / n, rng.uniform(-0.5, 0.5), rng.uniform(0, 100),
          320);
      gts.push_back(g);
      PolylineLane p = g;
      const double dx = rng.uniform(-30.0, 30.0);
      for (auto& pt : p.points) pt.x += dx;
      preds.push_back(p);
    }
    const double acc = tusimple_accuracy(preds, gts, dims);

    std::vector<PolylineLane> m_gts = gts;
    std::vector<Lane> m_preds;
    for (auto& g : m_gts)
      for (auto& pt : g.points) pt.x = dims.width - pt.x;
    for (const Lane& l : preds) {
      PolylineLane p = std::get<PolylineLane>(l);
      for (auto& pt : p.points) pt.x = dims.width - pt.x;
      m_preds.push_back(p);
    }
    CHECK(tusimple_accuracy(m_preds, m_gts, dims) ==
          doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("fp_rate: guard, ratio, bounds") {
  MatchResult empty;
  CHECK(fp_rate(empty, 0) == 0.0);

  MatchResult one_fp;
  one_fp.fp_indices = {3};
  CHECK(fp_rate(one_fp, 4) == doctest::Approx(0.25));

  MatchResult all_fp;
  all_fp.fp_indices = {0, 1, 2};
  CHECK(fp_rate(all_fp, 3) == doctest::Approx(1.0));
  CHECK_THROWS_AS((void)fp_rate(all_fp, 2), std::invalid_argument);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    MatchResult m;
    const int n = rng.uniform_int(6);
    const int f = rng.uniform_int(n + 1);
    for (int i = 0; i < f; ++i) m.fp_indices.push_back(i);
    const double r = fp_rate(m, n);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}
