#include "laneseq/codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace laneseq {

const char* format_name(SequenceFormat fmt) {
  switch (fmt) {
    case SequenceFormat::Segmentation: return "seg";
    case SequenceFormat::Anchor: return "anchor";
    default: return "param";
  }
}

std::optional<SequenceFormat> format_from_name(const std::string& name) {
  if (name == "seg" || name == "segmentation") return SequenceFormat::Segmentation;
  if (name == "anchor") return SequenceFormat::Anchor;
  if (name == "param" || name == "parameter") return SequenceFormat::Parameter;
  return std::nullopt;
}

int lane_group_payload(SequenceFormat fmt) {
  switch (fmt) {
    case SequenceFormat::Segmentation: return 2 * kPolygonVertices;  // 56
    case SequenceFormat::Anchor: return 2 * kPolylineKeypoints;      // 28
    default: return kPolyCoeffCount + 1;                             // 6
  }
}

int lane_group_size(SequenceFormat fmt) { return lane_group_payload(fmt) + 1; }

bool format_has_starting_point(SequenceFormat fmt) {
  return fmt != SequenceFormat::Parameter;
}

// --- quantization -------------------------------------------------------------

int quantize_coord(double v, double extent, int n_bins) {
  if (!std::isfinite(v))
    throw std::invalid_argument("quantize_coord: non-finite value");
  if (!(extent > 0.0))
    throw std::invalid_argument("quantize_coord: extent must be positive");
  const double scaled = std::round(v / extent * n_bins);
  return static_cast<int>(
      std::clamp(scaled, 1.0, static_cast<double>(n_bins)));
}

double dequantize_coord(int token, double extent, int n_bins) {
  if (token < 1 || token > n_bins)
    throw std::invalid_argument("dequantize_coord: non-coordinate token");
  return static_cast<double>(token) / n_bins * extent;
}

int quantize_param(double a, int n_bins) {
  if (!std::isfinite(a))
    throw std::invalid_argument("quantize_param: non-finite value");
  const double sig = 1.0 / (1.0 + std::exp(-a));
  const double scaled = std::round(sig * n_bins);
  return static_cast<int>(
      std::clamp(scaled, 1.0, static_cast<double>(n_bins)));
}

double dequantize_param(int token, int n_bins) {
  if (token < 1 || token > n_bins)
    throw std::invalid_argument("dequantize_param: non-coordinate token");
  constexpr double kEps = 1e-6;
  const double p =
      std::clamp(static_cast<double>(token) / n_bins, kEps, 1.0 - kEps);
  return std::log(p / (1.0 - p));
}

// --- encoding -----------------------------------------------------------------

namespace {

void encode_lane_group(const Lane& lane, SequenceFormat fmt, ImageDims dims,
                       const Vocabulary& vocab, std::vector<int>& out) {
  const double w = dims.width;
  const double h = dims.height;
  switch (fmt) {
    case SequenceFormat::Segmentation: {
      const auto* poly = std::get_if<PolygonLane>(&lane);
      if (!poly || poly->vertices.size() != kPolygonVertices)
        throw std::invalid_argument(
            "encode_scene: segmentation lane must be a 28-vertex polygon");
      for (const Point& p : poly->vertices) {
        out.push_back(quantize_coord(p.x, w, vocab.n_bins));
        out.push_back(quantize_coord(p.y, h, vocab.n_bins));
      }
      break;
    }
    case SequenceFormat::Anchor: {
      const auto* line = std::get_if<PolylineLane>(&lane);
      if (!line || line->points.size() != kPolylineKeypoints)
        throw std::invalid_argument(
            "encode_scene: anchor lane must be a 14-point polyline");
      for (const Point& p : line->points) {
        out.push_back(quantize_coord(p.x, w, vocab.n_bins));
        out.push_back(quantize_coord(p.y, h, vocab.n_bins));
      }
      break;
    }
    case SequenceFormat::Parameter: {
      const auto* pl = std::get_if<PolyLane>(&lane);
      if (!pl)
        throw std::invalid_argument(
            "encode_scene: parameter lane must be a polynomial lane");
      for (double c : pl->coeffs) out.push_back(quantize_param(c, vocab.n_bins));
      out.push_back(quantize_coord(pl->offset, h, vocab.n_bins));
      break;
    }
  }
  out.push_back(vocab.lane_id());
}

}  // namespace

TokenSequence encode_scene(std::span<const Lane> lanes, SequenceFormat fmt,
                           ImageDims dims, const Vocabulary& vocab,
                           const EncodeOptions& opts) {
  if (!dims.valid()) throw std::invalid_argument("encode_scene: bad dims");
  if (static_cast<int>(lanes.size()) > opts.max_lanes)
    throw std::invalid_argument("encode_scene: lane count exceeds max_lanes");

  std::vector<size_t> order(lanes.size());
  for (size_t i = 0; i < lanes.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return lane_bottom_x(lanes[a], dims) < lane_bottom_x(lanes[b], dims);
  });

  TokenSequence seq;
  seq.format = fmt;
  seq.tokens.push_back(vocab.start_id());
  seq.tokens.push_back(vocab.format_id(fmt));
  if (format_has_starting_point(fmt)) {
    // Image origin (0, 0); bin 0 does not exist, so it clamps to token 1.
    seq.tokens.push_back(quantize_coord(0.0, dims.width, vocab.n_bins));
    seq.tokens.push_back(quantize_coord(0.0, dims.height, vocab.n_bins));
  }
  for (size_t idx : order)
    encode_lane_group(lanes[idx], fmt, dims, vocab, seq.tokens);
  seq.tokens.push_back(vocab.end_id());
  return seq;
}

// --- decoding -----------------------------------------------------------------

namespace {

Lane decode_group(std::span<const int> payload, SequenceFormat fmt,
                  ImageDims dims, const Vocabulary& vocab) {
  const double w = dims.width;
  const double h = dims.height;
  switch (fmt) {
    case SequenceFormat::Segmentation: {
      PolygonLane poly;
      poly.vertices.reserve(kPolygonVertices);
      for (size_t i = 0; i + 1 < payload.size(); i += 2)
        poly.vertices.push_back(
            {dequantize_coord(payload[i], w, vocab.n_bins),
             dequantize_coord(payload[i + 1], h, vocab.n_bins)});
      return poly;
    }
    case SequenceFormat::Anchor: {
      PolylineLane line;
      line.points.reserve(kPolylineKeypoints);
      for (size_t i = 0; i + 1 < payload.size(); i += 2)
        line.points.push_back(
            {dequantize_coord(payload[i], w, vocab.n_bins),
             dequantize_coord(payload[i + 1], h, vocab.n_bins)});
      return line;
    }
    default: {
      PolyLane lane;
      for (int i = 0; i < kPolyCoeffCount; ++i)
        lane.coeffs[static_cast<size_t>(i)] =
            dequantize_param(payload[static_cast<size_t>(i)], vocab.n_bins);
      lane.offset = dequantize_coord(payload[kPolyCoeffCount], h, vocab.n_bins);
      return lane;
    }
  }
}

}  // namespace

DecodedScene decode_scene(std::span<const int> tokens, ImageDims dims,
                          const Vocabulary& vocab) {
  if (!dims.valid()) throw std::invalid_argument("decode_scene: bad dims");
  if (tokens.empty())
    throw std::invalid_argument("decode_scene: empty sequence");

  size_t i = 0;
  if (tokens[i] == vocab.start_id()) ++i;
  if (i >= tokens.size())
    throw std::invalid_argument("decode_scene: missing format token");
  const auto fmt = vocab.format_of(tokens[i]);
  if (!fmt)
    throw std::invalid_argument("decode_scene: missing or unknown format token");
  ++i;

  DecodedScene out;
  out.format = *fmt;
  const int payload_size = lane_group_payload(*fmt);

  if (format_has_starting_point(*fmt)) {
    for (int k = 0; k < 2 && i < tokens.size() && vocab.is_coord(tokens[i]); ++k)
      ++i;
  }

  std::vector<int> group;
  group.reserve(static_cast<size_t>(payload_size));
  const auto flush_incomplete = [&](size_t pos) {
    if (!group.empty()) {
      out.diagnostics.push_back({DecodeDiagnostic::Kind::TruncatedGroup, pos,
                                 "truncated group of " +
                                     std::to_string(group.size()) + " tokens"});
      group.clear();
    }
  };

  for (; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t == vocab.end_id()) {
      flush_incomplete(i);
      return out;
    }
    if (vocab.is_coord(t)) {
      group.push_back(t);
      continue;
    }
    if (t == vocab.lane_id()) {
      if (static_cast<int>(group.size()) == payload_size) {
        out.lanes.push_back(decode_group(group, *fmt, dims, vocab));
      } else if (static_cast<int>(group.size()) < payload_size) {
        out.diagnostics.push_back(
            {DecodeDiagnostic::Kind::TruncatedGroup, i,
             "lane token after " + std::to_string(group.size()) + " of " +
                 std::to_string(payload_size) + " payload tokens"});
      } else {
        out.diagnostics.push_back(
            {DecodeDiagnostic::Kind::OversizedGroup, i,
             "lane token after " + std::to_string(group.size()) + " of " +
                 std::to_string(payload_size) + " payload tokens"});
      }
      group.clear();
      continue;
    }
    if (!vocab.in_range(t)) {
      out.diagnostics.push_back({DecodeDiagnostic::Kind::UnknownToken, i,
                                 "token id " + std::to_string(t) +
                                     " outside vocabulary"});
      group.clear();
      continue;
    }
    // START, a format token, or padding inside a coordinate slot.
    out.diagnostics.push_back({DecodeDiagnostic::Kind::UnexpectedSpecial, i,
                               "special token id " + std::to_string(t) +
                                   " in coordinate position"});
    group.clear();
  }
  flush_incomplete(tokens.size());
  return out;
}

// --- training pairs -------------------------------------------------------------

SequenceExample training_pair(const TokenSequence& seq, const Vocabulary& vocab,
                              size_t pad_to) {
  if (seq.tokens.size() < 2)
    throw std::invalid_argument("training_pair: sequence too short");
  SequenceExample ex;
  const size_t n = seq.tokens.size() - 1;
  ex.input.assign(seq.tokens.begin(), seq.tokens.end() - 1);
  ex.target.assign(seq.tokens.begin() + 1, seq.tokens.end());
  ex.weights.assign(n, 1.0);
  for (size_t j = 0; j < n; ++j)
    if (vocab.format_of(ex.target[j]) || ex.target[j] == vocab.pad_id())
      ex.weights[j] = 0.0;
  while (ex.input.size() < pad_to) {
    ex.input.push_back(vocab.pad_id());
    ex.target.push_back(vocab.pad_id());
    ex.weights.push_back(0.0);
  }
  return ex;
}

}  // namespace laneseq
