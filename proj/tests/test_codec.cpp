#include <vector>
#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "laneseq/codec.hpp"
#include "laneseq/rng.hpp"

using namespace laneseq;

namespace {

PolylineLane anchor_lane(double x0, double slope, double y0, double y1) {
  PolylineLane lane;
  for (int k = 0; k < kPolylineKeypoints; ++k) {
    const double y = y0 + (y1 - y0) * k / (kPolylineKeypoints - 1);
    lane.points.push_back({x0 + slope * (y - y0), y});
  }
  return lane;
}

PolygonLane band_polygon(const PolylineLane& center, double half_width) {
  PolygonLane poly;
  for (const Point& p : center.points)
    poly.vertices.push_back({p.x - half_width, p.y});
  for (auto it = center.points.rbegin(); it != center.points.rend(); ++it)
    poly.vertices.push_back({it->x + half_width, it->y});
  return poly;
}

}  // namespace

TEST_CASE("quantize_coord boundaries and interior") {
  CHECK(quantize_coord(0.0, 800.0, 1000) == 1);
  CHECK(quantize_coord(800.0, 800.0, 1000) == 1000);
  CHECK(quantize_coord(400.0, 800.0, 1000) == 500);
  CHECK(quantize_coord(-50.0, 800.0, 1000) == 1);
  CHECK(quantize_coord(10000.0, 800.0, 1000) == 1000);
  CHECK_THROWS_AS((void)quantize_coord(std::nan(""), 800.0, 1000),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)quantize_coord(1.0, 0.0, 1000), std::invalid_argument);
}

TEST_CASE("dequantize_coord values and domain") {
  CHECK(dequantize_coord(500, 800.0, 1000) == doctest::Approx(400.0));
  CHECK(dequantize_coord(1000, 800.0, 1000) == doctest::Approx(800.0));
  CHECK_THROWS_AS((void)dequantize_coord(0, 800.0, 1000),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)dequantize_coord(1001, 800.0, 1000),
                  std::invalid_argument);
}

TEST_CASE("coordinate round-trip within extent / n_bins") {
  Rng rng(17);
  for (double extent : {160.0, 320.0, 800.0}) {
    for (int i = 0; i < 10000; ++i) {
      const double v = rng.uniform(0.0, extent);
      const double back =
          dequantize_coord(quantize_coord(v, extent, 1000), extent, 1000);
      CHECK(std::fabs(back - v) <= extent / 1000.0 + 1e-12);
    }
  }
}

TEST_CASE("quantizers are monotone") {
  int prev_q = 0;
  for (int i = 0; i <= 2000; ++i) {
    const double v = 800.0 * i / 2000.0;
    const int q = quantize_coord(v, 800.0, 1000);
    CHECK(q >= prev_q);
    prev_q = q;
  }
  double prev_v = -1e300;
  for (int t = 1; t <= 1000; ++t) {
    const double v = dequantize_coord(t, 800.0, 1000);
    CHECK(v > prev_v);
    prev_v = v;
  }
}

TEST_CASE("quantize_param: sigmoid midpoint, saturation, closed form") {
  CHECK(quantize_param(0.0, 1000) == 500);
  CHECK(quantize_param(50.0, 1000) == 1000);
  CHECK(quantize_param(-50.0, 1000) == 1);
  CHECK(quantize_param(std::log(3.0), 1000) == 750);
}

TEST_CASE("dequantize_param: logit closed form") {
  CHECK(dequantize_param(500, 1000) == doctest::Approx(0.0));
  CHECK(dequantize_param(750, 1000) == doctest::Approx(std::log(3.0)));
  CHECK(std::isfinite(dequantize_param(1000, 1000)));
  CHECK(std::isfinite(dequantize_param(1, 1000)));
}

TEST_CASE("parameter round-trip within logit slack") {
  const int n_bins = 1000;
  for (int i = 0; i <= 4000; ++i) {
    const double a = -4.0 + 8.0 * i / 4000.0;
    const double back = dequantize_param(quantize_param(a, n_bins), n_bins);
    const double p = 1.0 / (1.0 + std::exp(-a));
    const double slack = 1.0 / (p * (1.0 - p)) / n_bins * 1.01;
    CHECK(std::fabs(back - a) <= slack);
  }
}

TEST_CASE("encode_scene: empty scene per format") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;
  const std::vector<Lane> none;

  const TokenSequence anchor =
      encode_scene(none, SequenceFormat::Anchor, dims, vocab);
  CHECK(anchor.tokens ==
        std::vector<int>{vocab.start_id(), vocab.fmt_anchor_id(), 1, 1,
                         vocab.end_id()});

  const TokenSequence param =
      encode_scene(none, SequenceFormat::Parameter, dims, vocab);
  CHECK(param.tokens == std::vector<int>{vocab.start_id(),
                                         vocab.fmt_param_id(),
                                         vocab.end_id()});
}

TEST_CASE("encode_scene: sequence length formulas") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;

  std::vector<Lane> anchor_lanes{anchor_lane(40, 0.1, 8, 64),
                                 anchor_lane(110, -0.1, 4, 64)};
  CHECK(encode_scene(anchor_lanes, SequenceFormat::Anchor, dims, vocab)
            .tokens.size() == 5 + 29 * 2);

  std::vector<Lane> seg_lanes{
      band_polygon(anchor_lane(40, 0.1, 8, 64), 2.0),
      band_polygon(anchor_lane(110, -0.1, 4, 64), 2.0)};
  CHECK(encode_scene(seg_lanes, SequenceFormat::Segmentation, dims, vocab)
            .tokens.size() == 5 + 57 * 2);

  std::vector<Lane> param_lanes{PolyLane{{0.3, 0.1, 0, 0, 0}, 8.0}};
  const TokenSequence param =
      encode_scene(param_lanes, SequenceFormat::Parameter, dims, vocab);
  CHECK(param.tokens.size() == 3 + 7 * 1);
  CHECK(param.tokens.front() == vocab.start_id());
  CHECK(param.tokens[1] == vocab.fmt_param_id());
  CHECK(param.tokens[param.tokens.size() - 2] == vocab.lane_id());
  CHECK(param.tokens.back() == vocab.end_id());
}

TEST_CASE("encode_scene: orders lanes left to right and caps lane count") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;
  std::vector<Lane> lanes{anchor_lane(120, 0.0, 8, 64),
                          anchor_lane(30, 0.0, 8, 64)};
  const TokenSequence seq =
      encode_scene(lanes, SequenceFormat::Anchor, dims, vocab);
  // First lane group starts after [START, fmt, 1, 1]; its first token is the
  // quantized x of the leftmost lane.
  CHECK(seq.tokens[4] == quantize_coord(30.0, 160.0, vocab.n_bins));

  std::vector<Lane> many(5, anchor_lane(30, 0.0, 8, 64));
  CHECK_THROWS_AS(
      (void)encode_scene(many, SequenceFormat::Anchor, dims, vocab),
      std::invalid_argument);
}

TEST_CASE("decode_scene: empty scene, strays, missing format") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;

  const std::vector<int> empty_seg{vocab.start_id(), vocab.fmt_seg_id(), 1, 1,
                                   vocab.end_id()};
  const DecodedScene d0 = decode_scene(empty_seg, dims, vocab);
  CHECK(d0.lanes.empty());
  CHECK(d0.diagnostics.empty());

  // One full anchor group, then 5 stray coordinate tokens before END.
  std::vector<int> tokens{vocab.start_id(), vocab.fmt_anchor_id(), 1, 1};
  for (int k = 0; k < 28; ++k) tokens.push_back(400 + k);
  tokens.push_back(vocab.lane_id());
  for (int k = 0; k < 5; ++k) tokens.push_back(200 + k);
  tokens.push_back(vocab.end_id());
  const DecodedScene d1 = decode_scene(tokens, dims, vocab);
  CHECK(d1.lanes.size() == 1);
  REQUIRE(d1.diagnostics.size() == 1);
  CHECK(d1.diagnostics[0].kind == DecodeDiagnostic::Kind::TruncatedGroup);

  const std::vector<int> no_fmt{vocab.start_id(), 55, 66};
  CHECK_THROWS_AS((void)decode_scene(no_fmt, dims, vocab),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)decode_scene(std::vector<int>{}, dims, vocab),
                  std::invalid_argument);
}

TEST_CASE("decode_scene: special token aborts the current group") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;
  std::vector<int> tokens{vocab.start_id(), vocab.fmt_param_id()};
  tokens.insert(tokens.end(), {500, 500, vocab.start_id()});
  for (int k = 0; k < 6; ++k) tokens.push_back(400 + k);
  tokens.push_back(vocab.lane_id());
  tokens.push_back(vocab.end_id());
  const DecodedScene d = decode_scene(tokens, dims, vocab);
  CHECK(d.lanes.size() == 1);
  REQUIRE(d.diagnostics.size() == 1);
  CHECK(d.diagnostics[0].kind == DecodeDiagnostic::Kind::UnexpectedSpecial);
}

TEST_CASE("encode/decode round-trip over random scenes") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_lanes = rng.uniform_int(4) + 1;
    std::vector<Lane> anchors, polys, params;
    for (int i = 0; i < n_lanes; ++i) {
      const double x0 = 20.0 + 120.0 * i / n_lanes + rng.uniform(0, 8);
      const double slope = rng.uniform(-0.15, 0.15);
      const double y0 = rng.uniform(0.0, 20.0);
      const PolylineLane line = anchor_lane(x0, slope, y0, 64.0);
      anchors.push_back(line);
      polys.push_back(band_polygon(line, 1.5));
      params.push_back(PolyLane{{rng.uniform(-1, 1), rng.uniform(-0.5, 0.5),
                                 rng.uniform(-0.3, 0.3), 0.0, 0.0},
                                rng.uniform(0.0, 20.0)});
    }

    for (const auto& [lanes, fmt] :
         {std::pair{anchors, SequenceFormat::Anchor},
          std::pair{polys, SequenceFormat::Segmentation},
          std::pair{params, SequenceFormat::Parameter}}) {
      const TokenSequence seq = encode_scene(lanes, fmt, dims, vocab);
      const DecodedScene dec = decode_scene(seq.tokens, dims, vocab);
      CHECK(dec.diagnostics.empty());
      REQUIRE(dec.lanes.size() == lanes.size());

      // Decoded geometry within per-coordinate quantization error.
      for (size_t i = 0; i < dec.lanes.size(); ++i) {
        if (fmt == SequenceFormat::Anchor) {
          const auto& got = std::get<PolylineLane>(dec.lanes[i]);
          // encode_scene sorts left-to-right; inputs here are built sorted.
          const auto& want = std::get<PolylineLane>(lanes[i]);
          REQUIRE(got.points.size() == want.points.size());
          for (size_t k = 0; k < got.points.size(); ++k) {
            CHECK(std::fabs(got.points[k].x - want.points[k].x) <=
                  dims.width / 1000.0 + 1e-9);
            CHECK(std::fabs(got.points[k].y - want.points[k].y) <=
                  dims.height / 1000.0 + 1e-9);
          }
        }
      }

      // Re-encoding the decoded lanes reproduces the tokens exactly.
      const TokenSequence again = encode_scene(dec.lanes, fmt, dims, vocab);
      CHECK(again.tokens == seq.tokens);
    }
  }
}

TEST_CASE("decode_scene is total on arbitrary token lists") {
  const ImageDims dims{160, 64};
  const Vocabulary vocab;
  Rng rng(31);
  int decoded = 0, rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int len = rng.uniform_int(40) + 1;
    std::vector<int> tokens;
    for (int i = 0; i < len; ++i) {
      // Mix of in-range ids and garbage, biased toward special ids.
      switch (rng.uniform_int(4)) {
        case 0: tokens.push_back(rng.uniform_int(vocab.max_id() + 1)); break;
        case 1: tokens.push_back(vocab.n_bins + 1 + rng.uniform_int(6)); break;
        case 2: tokens.push_back(rng.uniform_int(2000) - 500); break;
        default: tokens.push_back(1 + rng.uniform_int(vocab.n_bins)); break;
      }
    }
    try {
      (void)decode_scene(tokens, dims, vocab);
      ++decoded;
    } catch (const std::invalid_argument&) {
      ++rejected;  // missing/unknown format token is the only throwing path
    }
  }
  CHECK(decoded > 0);
  CHECK(rejected > 0);
}

TEST_CASE("training_pair: shift, weights, padding") {
  const Vocabulary vocab;
  const ImageDims dims{160, 64};
  std::vector<Lane> lanes{PolyLane{{0.2, 0.0, 0, 0, 0}, 5.0}};
  const TokenSequence seq =
      encode_scene(lanes, SequenceFormat::Parameter, dims, vocab);
  const SequenceExample ex = training_pair(seq, vocab, 16);
  REQUIRE(ex.input.size() == 16);
  REQUIRE(ex.target.size() == 16);
  CHECK(ex.input[0] == vocab.start_id());
  CHECK(ex.target[0] == vocab.fmt_param_id());
  CHECK(ex.weights[0] == 0.0);  // format transcription token
  CHECK(ex.weights[1] == 1.0);
  CHECK(ex.target[ex.target.size() - 1] == vocab.pad_id());
  CHECK(ex.weights[ex.weights.size() - 1] == 0.0);
  // Unpadded tail: END carries weight 1.
  const SequenceExample plain = training_pair(seq, vocab);
  CHECK(plain.target.back() == vocab.end_id());
  CHECK(plain.weights.back() == 1.0);
}
