#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace laneseq {

struct ImageDims {
  int width = 0;
  int height = 0;

  bool valid() const { return width >= 1 && height >= 1; }
  bool operator==(const ImageDims&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr int kPolylineKeypoints = 14;
inline constexpr int kPolygonVertices = 28;
inline constexpr int kPolyCoeffCount = 5;

// A lane as an ordered keypoint chain, y increasing top to bottom. The only
// lane category is "Lane"; no per-lane class label is carried.
struct PolylineLane {
  std::vector<Point> points;
};

// A lane instance as a closed polygon (28 vertices for valid ground truth;
// leniently decoded predictions keep whatever came out of the token stream).
struct PolygonLane {
  std::vector<Point> vertices;
};

// A lane as 5 polynomial coefficients over normalized height plus a vertical
// start offset in pixels: x(y) = width * sum_i coeffs[i] * (y/height)^i for
// y >= offset.
struct PolyLane {
  std::array<double, kPolyCoeffCount> coeffs{};
  double offset = 0.0;
};

using Lane = std::variant<PolylineLane, PolygonLane, PolyLane>;

struct RasterMask {
  ImageDims dims;
  std::vector<uint8_t> bits;  // row-major, one byte per pixel, 0/1

  RasterMask() = default;
  explicit RasterMask(ImageDims d)
      : dims(d), bits(static_cast<size_t>(d.width) * d.height, 0) {}

  uint8_t get(int x, int y) const {
    return bits[static_cast<size_t>(y) * dims.width + x];
  }
  void set(int x, int y, uint8_t v = 1) {
    bits[static_cast<size_t>(y) * dims.width + x] = v;
  }
  long count() const;
};

// --- validation -----------------------------------------------------------

bool polyline_valid(const PolylineLane& lane, ImageDims dims,
                    std::string* reason = nullptr);
bool polygon_valid(const PolygonLane& poly, ImageDims dims,
                   std::string* reason = nullptr);
bool poly_lane_valid(const PolyLane& lane, ImageDims dims,
                     std::string* reason = nullptr);

double polygon_signed_area(const PolygonLane& poly);
bool polygon_self_intersects(const PolygonLane& poly);

// --- rasterization and mask comparison -------------------------------------

// Even-odd scanline fill: a pixel is set iff its center lies inside the
// polygon. Degenerate (zero-area) polygons produce an empty mask and set
// *degenerate when provided.
RasterMask rasterize_polygon(const PolygonLane& poly, ImageDims dims,
                             bool* degenerate = nullptr);

// |a & b| / |a | b|; 0 when both masks are empty. Throws on dims mismatch.
double mask_iou(const RasterMask& a, const RasterMask& b);

// --- row-wise lane evaluation ----------------------------------------------

// x position of a parameter lane at row y, or nullopt for y < offset.
// Result is clamped to [0, width]. Requires 0 <= y <= height.
std::optional<double> poly_eval(const PolyLane& lane, double y, ImageDims dims);

// x position of any lane form at row y (continuous). Polylines interpolate
// between bracketing points; polygons take the midpoint of their x-extent at
// that row; parameter lanes use poly_eval.
std::optional<double> lane_x_at(const Lane& lane, double y, ImageDims dims);

struct SampledLane {
  std::vector<std::optional<double>> xs;
};

// Samples lane_x_at on the uniform grid y_r = r * height / (n_rows - 1).
SampledLane sample_rows(const Lane& lane, ImageDims dims, int n_rows);

inline constexpr int kDefaultLiouRows = 72;

// Default Line-IoU half-width: 15 px at 800 px image width, scaled linearly.
double default_liou_half_width(ImageDims dims);

// Line-IoU over a shared row grid with extended segments [x-e, x+e].
// Rows where both lanes are absent are skipped; rows with exactly one lane
// present contribute (-2e, 2e) to (overlap, union). Returns 1.0 when both
// lanes are absent everywhere. Range [-1, 1].
double line_iou(const SampledLane& a, const SampledLane& b, double half_width);

// Convenience: sample both lanes on the default grid and compare.
double line_iou(const Lane& a, const Lane& b, ImageDims dims,
                int n_rows = kDefaultLiouRows);

// Resamples a polyline at n evenly spaced rows over its own vertical span.
PolylineLane resample_polyline(const PolylineLane& lane, int n_points);

// Mean Euclidean distance between index-aligned keypoints: the ground truth
// is resampled at 14 evenly spaced rows over its own span and compared to the
// prediction's 14 keypoints pairwise (k-th against k-th). Predictions with a
// different point count are resampled the same way first. Throws
// "incomparable lanes" when either lane has no usable span.
double keypoint_distance(const PolylineLane& pred, const PolylineLane& gt,
                         ImageDims dims);

// x at the lane's own bottom-most row; used to order lanes left-to-right.
double lane_bottom_x(const Lane& lane, ImageDims dims);

}  // namespace laneseq
