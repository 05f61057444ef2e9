#include "laneseq/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "laneseq/codec.hpp"
#include "laneseq/metrics.hpp"
#include "laneseq/model.hpp"
#include "laneseq/rewards.hpp"
#include "laneseq/rng.hpp"
#include "laneseq/synthdata.hpp"

namespace laneseq {

namespace {

void check_le(std::vector<CheckResult>& out, const std::string& name,
              double measured, double bound, const std::string& detail = "") {
  out.push_back({name, measured <= bound, measured, bound,
                 detail.empty() ? "<= bound" : detail});
}

void check_ge(std::vector<CheckResult>& out, const std::string& name,
              double measured, double bound, const std::string& detail = "") {
  out.push_back({name, measured >= bound, measured, bound,
                 detail.empty() ? ">= bound" : detail});
}

void check_true(std::vector<CheckResult>& out, const std::string& name,
                bool ok, const std::string& detail = "") {
  out.push_back({name, ok, ok ? 1.0 : 0.0, 1.0, detail});
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const CheckResult& r) { return r.pass; });
}

void print_results(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    std::printf("  [%s] %s: measured %.6g vs bound %.6g %s\n",
                r.pass ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.bound,
                r.detail.c_str());
}

// --- codec ---------------------------------------------------------------------

std::vector<CheckResult> verify_codec() {
  std::vector<CheckResult> out;
  const int n_bins = 1000;

  for (const double extent : {160.0, 320.0, 800.0}) {
    Rng rng(static_cast<uint64_t>(extent));
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double v = rng.uniform(0.0, extent);
      const double back =
          dequantize_coord(quantize_coord(v, extent, n_bins), extent, n_bins);
      worst = std::max(worst, std::fabs(back - v));
    }
    check_le(out,
             "coord round-trip max error (extent " +
                 std::to_string(static_cast<int>(extent)) + ")",
             worst, extent / n_bins);
  }

  {
    double worst_ratio = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      const double a = -4.0 + 8.0 * i / 10000.0;
      const double back = dequantize_param(quantize_param(a, n_bins), n_bins);
      const double p = 1.0 / (1.0 + std::exp(-a));
      const double slack = 1.0 / (p * (1.0 - p)) / n_bins * 1.01;
      worst_ratio = std::max(worst_ratio, std::fabs(back - a) / slack);
    }
    check_le(out, "param round-trip error / logit slack", worst_ratio, 1.0);
  }

  {
    bool monotone = true;
    int prev = 0;
    for (int i = 0; i <= 4000; ++i) {
      const int q = quantize_coord(800.0 * i / 4000.0, 800.0, n_bins);
      if (q < prev) monotone = false;
      prev = q;
    }
    check_true(out, "quantize_coord monotone", monotone);
  }

  {
    const Vocabulary vocab;
    const ImageDims dims{160, 64};
    SceneSpec spec;
    spec.seed = 40992;
    double worst_coord = 0.0, worst_param_ratio = 0.0;
    bool tokens_exact = true, no_diags = true, lengths_ok = true;
    for (uint64_t i = 0; i < 1000; ++i) {
      const SceneRecord rec = generate_scene(spec, i);
      const size_t L = rec.lanes.size();
      for (const auto& [lanes, fmt] :
           {std::pair{rec.polygons(), SequenceFormat::Segmentation},
            std::pair{rec.polylines(), SequenceFormat::Anchor},
            std::pair{rec.param_lanes(), SequenceFormat::Parameter}}) {
        const TokenSequence seq = encode_scene(lanes, fmt, dims, vocab);
        const size_t expected_len = fmt == SequenceFormat::Parameter
                                        ? 3 + 7 * L
                                        : (fmt == SequenceFormat::Anchor
                                               ? 5 + 29 * L
                                               : 5 + 57 * L);
        if (seq.tokens.size() != expected_len) lengths_ok = false;
        const DecodedScene dec = decode_scene(seq.tokens, dims, vocab);
        if (!dec.diagnostics.empty()) no_diags = false;
        if (dec.lanes.size() != L) no_diags = false;
        for (size_t l = 0; l < dec.lanes.size() && l < L; ++l) {
          if (fmt == SequenceFormat::Anchor) {
            const auto& got = std::get<PolylineLane>(dec.lanes[l]);
            const auto& want = std::get<PolylineLane>(lanes[l]);
            for (size_t k = 0; k < got.points.size(); ++k) {
              worst_coord = std::max(
                  worst_coord, std::fabs(got.points[k].x - want.points[k].x) /
                                   (dims.width / 1000.0));
              worst_coord = std::max(
                  worst_coord, std::fabs(got.points[k].y - want.points[k].y) /
                                   (dims.height / 1000.0));
            }
          } else if (fmt == SequenceFormat::Segmentation) {
            const auto& got = std::get<PolygonLane>(dec.lanes[l]);
            const auto& want = std::get<PolygonLane>(lanes[l]);
            for (size_t k = 0; k < got.vertices.size(); ++k) {
              worst_coord = std::max(
                  worst_coord,
                  std::fabs(got.vertices[k].x - want.vertices[k].x) /
                      (dims.width / 1000.0));
              worst_coord = std::max(
                  worst_coord,
                  std::fabs(got.vertices[k].y - want.vertices[k].y) /
                      (dims.height / 1000.0));
            }
          } else {
            const auto& got = std::get<PolyLane>(dec.lanes[l]);
            const auto& want = std::get<PolyLane>(lanes[l]);
            for (int c = 0; c < kPolyCoeffCount; ++c) {
              const double a = want.coeffs[static_cast<size_t>(c)];
              const double p = 1.0 / (1.0 + std::exp(-a));
              const double slack = 1.0 / (p * (1.0 - p)) / 1000.0 * 1.01;
              worst_param_ratio = std::max(
                  worst_param_ratio,
                  std::fabs(got.coeffs[static_cast<size_t>(c)] - a) / slack);
            }
            worst_coord =
                std::max(worst_coord, std::fabs(got.offset - want.offset) /
                                          (dims.height / 1000.0));
          }
        }
        const TokenSequence again = encode_scene(dec.lanes, fmt, dims, vocab);
        if (again.tokens != seq.tokens) tokens_exact = false;
      }
    }
    check_true(out, "scene round-trip: sequence length formulas", lengths_ok);
    check_true(out, "scene round-trip: decode is clean on encoded scenes",
               no_diags);
    check_le(out, "scene round-trip: coord error / quantization step",
             worst_coord, 1.0 + 1e-9);
    check_le(out, "scene round-trip: param error / logit slack",
             worst_param_ratio, 1.0);
    check_true(out, "scene round-trip: re-encoding reproduces tokens exactly",
               tokens_exact);
  }

  return out;
}

// --- metrics ---------------------------------------------------------------------

namespace {

PolylineLane straight_lane(double x0, double slope, double y0, double y1) {
  PolylineLane lane;
  for (int k = 0; k < kPolylineKeypoints; ++k) {
    const double y = k == kPolylineKeypoints - 1
                         ? y1
                         : y0 + (y1 - y0) * k / (kPolylineKeypoints - 1);
    lane.points.push_back({x0 + slope * (y - y0), y});
  }
  return lane;
}

int exhaustive_max_matching(const std::vector<std::vector<double>>& scores,
                            double tau) {
  const int P = static_cast<int>(scores.size());
  const int G = P > 0 ? static_cast<int>(scores[0].size()) : 0;
  int best = 0;
  std::vector<char> used(static_cast<size_t>(G), 0);
  const std::function<void(int, int)> rec = [&](int p, int count) {
    best = std::max(best, count);
    if (p == P) return;
    rec(p + 1, count);
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

std::vector<CheckResult> verify_metrics() {
  std::vector<CheckResult> out;
  const ImageDims dims{160, 64};

  {
    Rng rng(520);
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n_gt = rng.uniform_int(4) + 1;
      std::vector<Lane> gts, preds;
      for (int i = 0; i < n_gt; ++i)
        gts.push_back(straight_lane(20.0 + 120.0 * i / n_gt + rng.uniform(0, 6),
                                    rng.uniform(-0.1, 0.1),
                                    rng.uniform(0, 24), 64));
      const int n_pred = rng.uniform_int(4) + 1;
      for (int i = 0; i < n_pred; ++i) {
        if (i < n_gt && rng.uniform() < 0.8) {
          PolylineLane jitter = std::get<PolylineLane>(gts[static_cast<size_t>(i)]);
          const double dx = rng.uniform(-3.0, 3.0);
          for (auto& p : jitter.points)
            p.x = std::clamp(p.x + dx, 0.0, 160.0);
          preds.push_back(jitter);
        } else {
          preds.push_back(straight_lane(rng.uniform(10, 150),
                                        rng.uniform(-0.1, 0.1),
                                        rng.uniform(0, 24), 64));
        }
      }
      std::vector<std::vector<double>> scores(
          preds.size(), std::vector<double>(gts.size()));
      for (size_t p = 0; p < preds.size(); ++p)
        for (size_t g = 0; g < gts.size(); ++g)
          scores[p][g] = line_iou(preds[p], gts[g], dims);
      const MatchResult greedy = match_from_scores(scores, kDefaultTau);
      if (greedy.tp() != exhaustive_max_matching(scores, kDefaultTau))
        ++mismatches;
    }
    check_le(out, "greedy matching vs exhaustive optimum (200 scenes)",
             mismatches, 0.0, "mismatching scenes");
  }

  {
    const Lane lane = straight_lane(80, 0.05, 0, 64);
    check_le(out, "line_iou identity", std::fabs(line_iou(lane, lane, dims) - 1.0),
             1e-12);
    Rng rng(521);
    double worst_sym = 0.0, worst_bound = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Lane a = straight_lane(rng.uniform(5, 155), rng.uniform(-0.2, 0.2),
                                   rng.uniform(0, 30), 64);
      const Lane b = straight_lane(rng.uniform(5, 155), rng.uniform(-0.2, 0.2),
                                   rng.uniform(0, 30), 64);
      const double ab = line_iou(a, b, dims);
      worst_sym = std::max(worst_sym, std::fabs(ab - line_iou(b, a, dims)));
      worst_bound = std::max(worst_bound, std::fabs(ab) - 1.0);
    }
    check_le(out, "line_iou symmetry residual", worst_sym, 1e-12);
    check_le(out, "line_iou outside [-1,1] by", worst_bound, 0.0);

    double prev = 1.0 + 1e-12;
    bool monotone = true;
    for (double off = 0.0; off <= 7.0; off += 0.25) {
      const double v =
          line_iou(straight_lane(60, 0, 0, 64), straight_lane(60 + off, 0, 0, 64),
                   dims);
      if (v >= prev) monotone = false;
      prev = v;
    }
    check_true(out, "line_iou monotone under translation", monotone);
  }

  {
    const PolygonLane rect = [&] {
      PolygonLane p;
      for (int k = 0; k < 7; ++k) p.vertices.push_back({20.0 + k, 10.0});
      for (int k = 0; k < 7; ++k) p.vertices.push_back({27.0, 10.0 + k});
      for (int k = 0; k < 7; ++k) p.vertices.push_back({27.0 - k, 17.0});
      for (int k = 0; k < 7; ++k) p.vertices.push_back({20.0, 17.0 - k});
      return p;
    }();
    const RasterMask a = rasterize_polygon(rect, dims);
    check_le(out, "mask_iou identity", std::fabs(mask_iou(a, a) - 1.0), 1e-12);
    PolygonLane far = rect;
    for (Point& p : far.vertices) p.x += 60.0;
    const RasterMask b = rasterize_polygon(far, dims);
    check_le(out, "mask_iou disjoint", mask_iou(a, b), 0.0);
    bool monotone = true;
    double prev = 1.0 + 1e-12;
    for (int shift = 0; shift <= 10; ++shift) {
      PolygonLane moved = rect;
      for (Point& p : moved.vertices) p.x += shift;
      const double v = mask_iou(a, rasterize_polygon(moved, dims));
      if (v > prev) monotone = false;
      prev = v;
    }
    check_true(out, "mask_iou non-increasing under translation", monotone);
  }

  {
    const ImageDims big{800, 320};
    const PolylineLane gt = straight_lane(400, 0.0, 0, 320);
    std::vector<PolylineLane> gts{gt};
    PolylineLane off19 = gt, off21 = gt;
    for (auto& p : off19.points) p.x += 19.0;
    for (auto& p : off21.points) p.x += 21.0;
    check_ge(out, "point accuracy at 19 px offset (vertical, t = 20)",
             tusimple_accuracy(std::vector<Lane>{off19}, gts, big), 1.0);
    check_le(out, "point accuracy at 21 px offset (vertical, t = 20)",
             tusimple_accuracy(std::vector<Lane>{off21}, gts, big), 0.0);

    const PolylineLane diag = straight_lane(200, 1.0, 0, 320);
    std::vector<PolylineLane> dgts{diag};
    PolylineLane off25 = diag;
    for (auto& p : off25.points) p.x += 25.0;
    check_ge(out, "point accuracy at 25 px offset (45 deg, t ~ 28.28)",
             tusimple_accuracy(std::vector<Lane>{off25}, dgts, big), 1.0);
  }

  return out;
}

// --- rewards -----------------------------------------------------------------------

std::vector<CheckResult> verify_rewards() {
  std::vector<CheckResult> out;
  const ImageDims dims{160, 64};
  const RewardWeights w;

  {
    Rng rng(3100);
    double worst_residual = 0.0;
    double min_decrease = 1e300;
    double worst_seg_bound = 0.0, worst_anchor_bound = 0.0,
           worst_param_bound = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
      SceneSpec spec;
      spec.seed = 9000 + static_cast<uint64_t>(trial);
      const SceneRecord rec = generate_scene(spec, 0);

      // Jittered predictions with at least one true positive.
      std::vector<PolylineLane> preds;
      for (const auto& lane : rec.lanes) {
        PolylineLane p = lane.polyline;
        const double dx = rng.uniform(-2.0, 2.0);
        for (auto& pt : p.points) pt.x = std::clamp(pt.x + dx, 0.0, 160.0);
        preds.push_back(p);
      }
      std::vector<PolygonLane> pred_polys;
      for (const auto& p : preds) {
        PolygonLane poly;
        for (const Point& pt : p.points)
          poly.vertices.push_back({std::clamp(pt.x - 1.5, 0.0, 160.0), pt.y});
        for (auto it = p.points.rbegin(); it != p.points.rend(); ++it)
          poly.vertices.push_back({std::clamp(it->x + 1.5, 0.0, 160.0), it->y});
        pred_polys.push_back(poly);
      }

      const RewardBreakdown seg =
          reward_segmentation(pred_polys, rec.gt_polygons(), dims, w);
      const RewardBreakdown anc =
          reward_anchor(preds, rec.gt_polylines(), dims, w);
      const RewardBreakdown par =
          reward_parameter(rec.gt_params(), rec.gt_params(), dims, w);
      for (const RewardBreakdown* r : {&seg, &anc, &par})
        worst_residual = std::max(
            worst_residual, std::fabs(r->total - r->recompute_total()));

      worst_seg_bound =
          std::max({worst_seg_bound, seg.total - 2.0, -w.lambda1 - seg.total});
      worst_anchor_bound = std::max(
          {worst_anchor_bound, anc.total - 2.0, -w.lambda2 - anc.total});
      worst_param_bound = std::max(
          {worst_param_bound, par.total - 1.0, -(w.lambda3 + 1.0) - par.total});

      if (anc.K > 0) {
        std::vector<PolylineLane> with_fp = preds;
        with_fp.push_back(straight_lane(8, 0.0, 20, 64));
        const RewardBreakdown after =
            reward_anchor(with_fp, rec.gt_polylines(), dims, w);
        min_decrease = std::min(min_decrease, anc.total - after.total);
      }
    }
    check_le(out, "reward decomposability residual", worst_residual, 1e-9);
    check_ge(out, "strict reward decrease per added false positive",
             min_decrease, 1e-9);
    check_le(out, "segmentation reward outside bounds by", worst_seg_bound,
             1e-9);
    check_le(out, "anchor reward outside bounds by", worst_anchor_bound, 1e-9);
    check_le(out, "parameter reward outside bounds by", worst_param_bound,
             1e-9);
  }

  check_le(out, "combined objective at defaults maps (1,1,1) to 2.7",
           std::fabs(combined_objective(1, 1, 1, w) - 2.7), 1e-12);
  check_le(out, "combined objective linearity: (2,1,0) -> 1.4",
           std::fabs(combined_objective(2, 1, 0, w) - 1.4), 1e-12);
  check_le(out, "combined objective at zero", std::fabs(combined_objective(0, 0, 0, w)),
           0.0);

  return out;
}

// --- model gradient check --------------------------------------------------------------

std::vector<CheckResult> verify_gradcheck() {
  std::vector<CheckResult> out;

  ModelConfig cfg;
  cfg.image_width = 16;
  cfg.image_height = 16;
  cfg.channels = 1;
  cfg.patch_size = 8;
  cfg.embed_dim = 16;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 4;
  cfg.ff_dim = 32;
  cfg.n_bins = 19;  // 26 vocabulary rows
  cfg.max_seq_len = 16;
  SeqModel model(cfg, 1234);
  const Vocabulary& vocab = model.vocab();

  Rng rng(777);
  Image img(cfg.image_width, cfg.image_height, 1);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));

  TokenSequence seq;
  seq.format = SequenceFormat::Anchor;
  seq.tokens = {vocab.start_id(), vocab.fmt_anchor_id(), 1, 1, 5,
                9,                14,                    3, vocab.lane_id(),
                vocab.end_id()};
  const SequenceExample ex = training_pair(seq, vocab);

  auto& store = model.params();
  const auto forward = [&]() {
    ad::Graph g(false);
    return g
        .value(model.build_sequence_loss(g, model.build_encoder(g, img), ex))
        .at(0, 0);
  };

  store.zero_grads();
  {
    ad::Graph g;
    const ad::Value loss =
        model.build_sequence_loss(g, model.build_encoder(g, img), ex);
    g.backward(loss);
    for (size_t t = 0; t < store.count(); ++t) {
      auto& tensor = store.at(t);
      if (const ad::Mat* grad = g.param_grad(tensor))
        for (size_t i = 0; i < grad->size(); ++i)
          tensor.grad().data[i] += grad->data[i];
    }
  }

  double worst = 0.0;
  std::string worst_name;
  const double h = 1e-5;
  long checked = 0;
  for (size_t t = 0; t < store.count(); ++t) {
    auto& tensor = store.at(t);
    for (size_t i = 0; i < tensor.value().size(); ++i) {
      const double saved = tensor.value().data[i];
      tensor.value().data[i] = saved + h;
      const double up = forward();
      tensor.value().data[i] = saved - h;
      const double down = forward();
      tensor.value().data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double adg = tensor.grad().data[i];
      const double rel =
          std::fabs(adg - fd) / std::max({1e-6, std::fabs(adg), std::fabs(fd)});
      if (rel > worst) {
        worst = rel;
        worst_name = tensor.name();
      }
      ++checked;
    }
  }
  check_le(out, "max relative gradient error over " + std::to_string(checked) +
                    " parameters",
           worst, 1e-4, worst_name.empty() ? "" : "worst at " + worst_name);
  return out;
}

// --- REINFORCE estimator oracle ---------------------------------------------------------

namespace {

// Enumerable toy policy over tokens {0,1,2,3}: token 3 ends the sequence,
// length is capped at 3. One BOS embedding row conditions the first step.
struct ToyPolicy {
  static constexpr int kAlphabet = 4;
  static constexpr int kEnd = 3;
  static constexpr int kBos = 4;
  static constexpr int kMaxLen = 3;
  static constexpr int kDim = 4;

  ad::ParameterStore params;

  explicit ToyPolicy(uint64_t seed) {
    params.create("emb", kAlphabet + 1, kDim);
    params.create("pos", kMaxLen, kDim);
    params.create("w", kDim, kAlphabet);
    params.create("b", 1, kAlphabet);
    Rng rng(seed);
    for (size_t t = 0; t < params.count(); ++t)
      for (double& v : params.at(t).value().data) v = rng.uniform(-0.8, 0.8);
  }

  std::array<double, kAlphabet> step_logits(int prev, int pos) const {
    const ad::Mat& emb = params.get("emb").value();
    const ad::Mat& pemb = params.get("pos").value();
    const ad::Mat& w = params.get("w").value();
    const ad::Mat& b = params.get("b").value();
    std::array<double, kDim> h{};
    for (int d = 0; d < kDim; ++d) {
      const double x = emb.at(prev, d) + pemb.at(pos, d);
      h[static_cast<size_t>(d)] =
          0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
    }
    std::array<double, kAlphabet> logits{};
    for (int j = 0; j < kAlphabet; ++j) {
      double acc = b.at(0, j);
      for (int d = 0; d < kDim; ++d) acc += h[static_cast<size_t>(d)] * w.at(d, j);
      logits[static_cast<size_t>(j)] = acc;
    }
    return logits;
  }

  std::vector<int> sample(Rng& rng) const {
    std::vector<int> seq;
    int prev = kBos;
    for (int pos = 0; pos < kMaxLen; ++pos) {
      const auto logits = step_logits(prev, pos);
      const int tok = sample_from_logits(
          std::span<const double>(logits.data(), logits.size()), 1.0, rng);
      seq.push_back(tok);
      if (tok == kEnd) break;
      prev = tok;
    }
    return seq;
  }

  // -log Q(seq) on the tape.
  ad::Value build_nll(ad::Graph& g, const std::vector<int>& seq) const {
    std::vector<int> prevs{kBos};
    std::vector<int> positions{0};
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      prevs.push_back(seq[i]);
      positions.push_back(static_cast<int>(i) + 1);
    }
    const ad::Value emb =
        g.gather_rows(g.param(params.get("emb")), prevs);
    const ad::Value pos =
        g.gather_rows(g.param(params.get("pos")), positions);
    const ad::Value h = g.gelu(g.add(emb, pos));
    const ad::Value logits = g.add_rowvec(g.matmul(h, g.param(params.get("w"))),
                                          g.param(params.get("b")));
    return g.weighted_cross_entropy(logits, seq,
                                    std::vector<double>(seq.size(), 1.0),
                                    false);
  }

  // grad of log Q(seq), flattened in parameter order.
  std::vector<double> grad_log_q(const std::vector<int>& seq) const {
    ad::Graph g;
    g.backward(build_nll(g, seq));
    std::vector<double> flat(params.total_elements(), 0.0);
    size_t pos = 0;
    for (size_t t = 0; t < params.count(); ++t) {
      const ad::Tensor& tensor = params.at(t);
      if (const ad::Mat* grad = g.param_grad(tensor))
        for (size_t i = 0; i < grad->size(); ++i)
          flat[pos + i] = -grad->data[i];  // nll -> log-prob sign flip
      pos += tensor.value().size();
    }
    return flat;
  }

  double log_q(const std::vector<int>& seq) const {
    double acc = 0.0;
    int prev = kBos;
    for (size_t i = 0; i < seq.size(); ++i) {
      const auto logits = step_logits(prev, static_cast<int>(i));
      acc += log_softmax_at(std::span<const double>(logits.data(), logits.size()),
                            seq[i]);
      prev = seq[i];
    }
    return acc;
  }

  void enumerate(const std::function<void(const std::vector<int>&)>& fn,
                 std::vector<int>& prefix) const {
    const int pos = static_cast<int>(prefix.size());
    for (int tok = 0; tok < kAlphabet; ++tok) {
      prefix.push_back(tok);
      if (tok == kEnd || pos + 1 == kMaxLen)
        fn(prefix);
      else
        enumerate(fn, prefix);
      prefix.pop_back();
    }
  }
};

// Deterministic per-sequence reward in [1, 2): a hash keeps it arbitrary
// while the positive offset makes the baseline genuinely variance-reducing.
double toy_reward(const std::vector<int>& seq) {
  uint64_t h = 0x243f6a8885a308d3ull;
  for (int t : seq) {
    h ^= static_cast<uint64_t>(t) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdull;
  }
  return 1.0 + static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

std::vector<CheckResult> verify_reinforce(long pairs) {
  std::vector<CheckResult> out;
  ToyPolicy policy(4242);
  const size_t P = policy.params.total_elements();

  // Exact gradient of sum_t Q(t) R(t) by full enumeration.
  std::vector<double> exact(P, 0.0);
  double total_q = 0.0;
  {
    std::vector<int> prefix;
    policy.enumerate(
        [&](const std::vector<int>& seq) {
          const double q = std::exp(policy.log_q(seq));
          total_q += q;
          const double r = toy_reward(seq);
          const std::vector<double> g = policy.grad_log_q(seq);
          for (size_t i = 0; i < P; ++i) exact[i] += q * r * g[i];
        },
        prefix);
  }
  check_le(out, "toy policy probabilities sum to 1", std::fabs(total_q - 1.0),
           1e-9);

  // Two-sample-baseline estimator vs the no-baseline variant on the same
  // draws.
  std::vector<double> sum_base(P, 0.0), sumsq_base(P, 0.0);
  std::vector<double> sum_plain(P, 0.0), sumsq_plain(P, 0.0);
  for (long i = 0; i < pairs; ++i) {
    Rng rng_a = Rng::stream(1717, {static_cast<uint64_t>(i), 0});
    Rng rng_b = Rng::stream(1717, {static_cast<uint64_t>(i), 1});
    const std::vector<int> a = policy.sample(rng_a);
    const std::vector<int> b = policy.sample(rng_b);
    const double ra = toy_reward(a);
    const double rb = toy_reward(b);
    const std::vector<double> g = policy.grad_log_q(a);
    const double adv = ra - rb;
    for (size_t c = 0; c < P; ++c) {
      const double v = adv * g[c];
      sum_base[c] += v;
      sumsq_base[c] += v * v;
      const double u = ra * g[c];
      sum_plain[c] += u;
      sumsq_plain[c] += u * u;
    }
  }

  const double n = static_cast<double>(pairs);
  double max_z = 0.0;
  double var_base_total = 0.0, var_plain_total = 0.0;
  for (size_t c = 0; c < P; ++c) {
    const double mean = sum_base[c] / n;
    const double var = std::max(0.0, sumsq_base[c] / n - mean * mean);
    const double se = std::sqrt(var / n);
    const double z = se > 0.0 ? std::fabs(mean - exact[c]) / se
                              : (std::fabs(mean - exact[c]) > 1e-12 ? 1e9 : 0.0);
    max_z = std::max(max_z, z);
    var_base_total += var;
    const double mean_p = sum_plain[c] / n;
    var_plain_total += std::max(0.0, sumsq_plain[c] / n - mean_p * mean_p);
  }
  check_le(out,
           "estimator bias z-score over " + std::to_string(P) + " coordinates",
           max_z, 3.0);
  check_le(out, "baseline variance / no-baseline variance",
           var_base_total / var_plain_total, 1.0 - 1e-9,
           "strictly lower total variance");
  return out;
}

}  // namespace laneseq
