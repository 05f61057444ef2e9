#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laneseq/geometry.hpp"

namespace laneseq {

enum class SequenceFormat { Segmentation, Anchor, Parameter };

const char* format_name(SequenceFormat fmt);
std::optional<SequenceFormat> format_from_name(const std::string& name);

// Shared token vocabulary. Coordinate tokens occupy [1, n_bins]; the six
// special tokens follow directly after; id 0 is reserved for padding.
struct Vocabulary {
  int n_bins = 1000;

  int pad_id() const { return 0; }
  int start_id() const { return n_bins + 1; }
  int end_id() const { return n_bins + 2; }
  int fmt_seg_id() const { return n_bins + 3; }
  int fmt_anchor_id() const { return n_bins + 4; }
  int fmt_param_id() const { return n_bins + 5; }
  int lane_id() const { return n_bins + 6; }

  int max_id() const { return n_bins + 6; }
  // Ids the model must cover: padding row 0 plus [1, n_bins + 6].
  int total_ids() const { return n_bins + 7; }

  bool is_coord(int id) const { return id >= 1 && id <= n_bins; }
  bool in_range(int id) const { return id >= 0 && id <= max_id(); }

  int format_id(SequenceFormat fmt) const {
    switch (fmt) {
      case SequenceFormat::Segmentation: return fmt_seg_id();
      case SequenceFormat::Anchor: return fmt_anchor_id();
      default: return fmt_param_id();
    }
  }
  std::optional<SequenceFormat> format_of(int id) const {
    if (id == fmt_seg_id()) return SequenceFormat::Segmentation;
    if (id == fmt_anchor_id()) return SequenceFormat::Anchor;
    if (id == fmt_param_id()) return SequenceFormat::Parameter;
    return std::nullopt;
  }
};

struct TokenSequence {
  std::vector<int> tokens;
  SequenceFormat format = SequenceFormat::Segmentation;
};

// Tokens per lane group (payload + the trailing <Lane> token).
int lane_group_size(SequenceFormat fmt);       // 57 / 29 / 7
int lane_group_payload(SequenceFormat fmt);    // 56 / 28 / 6
bool format_has_starting_point(SequenceFormat fmt);

// --- quantization ------------------------------------------------------------

// round(v / extent * n_bins), half away from zero, clamped to [1, n_bins].
int quantize_coord(double v, double extent, int n_bins);
// (t / n_bins) * extent. Throws "non-coordinate token" outside [1, n_bins].
double dequantize_coord(int token, double extent, int n_bins);
// round(sigmoid(a) * n_bins) clamped to [1, n_bins].
int quantize_param(double a, int n_bins);
// logit(clamp(t / n_bins, eps, 1 - eps)) with eps = 1e-6.
double dequantize_param(int token, int n_bins);

// --- scene encoding -----------------------------------------------------------

struct EncodeOptions {
  int max_lanes = 4;
};

// Encodes one scene's lanes (each holding the geometric form matching fmt)
// as [START, <format>, (starting point for seg/anchor,) lane groups..., END].
// Lanes are ordered left-to-right by bottom-row x.
TokenSequence encode_scene(std::span<const Lane> lanes, SequenceFormat fmt,
                           ImageDims dims, const Vocabulary& vocab,
                           const EncodeOptions& opts = {});

struct DecodeDiagnostic {
  enum class Kind { TruncatedGroup, OversizedGroup, UnexpectedSpecial,
                    UnknownToken };
  Kind kind;
  size_t position;  // token index the diagnostic fired at
  std::string message;
};

struct DecodedScene {
  SequenceFormat format = SequenceFormat::Segmentation;
  std::vector<Lane> lanes;
  std::vector<DecodeDiagnostic> diagnostics;
};

// Lenient decoder for generated token streams. Throws only when the format
// token is missing or unknown; everything else degrades to diagnostics.
DecodedScene decode_scene(std::span<const int> tokens, ImageDims dims,
                          const Vocabulary& vocab);

// --- training pairs ------------------------------------------------------------

struct SequenceExample {
  std::vector<int> input;        // [START, <format>, body...]
  std::vector<int> target;       // [<format>, body..., END]
  std::vector<double> weights;   // 0 on format-token and padding targets
};

// Shifted (input, target, weight) triple for teacher forcing. When pad_to
// exceeds the natural length both sides are padded with id 0 at weight 0.
SequenceExample training_pair(const TokenSequence& seq, const Vocabulary& vocab,
                              size_t pad_to = 0);

}  // namespace laneseq
