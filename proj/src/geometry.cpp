#include "laneseq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace laneseq {

long RasterMask::count() const {
  return std::accumulate(bits.begin(), bits.end(), 0L,
                         [](long acc, uint8_t b) { return acc + (b != 0); });
}

// --- validation -------------------------------------------------------------

namespace {

bool fail(std::string* reason, const char* msg) {
  if (reason) *reason = msg;
  return false;
}

bool point_in_image(const Point& p, ImageDims dims) {
  return p.x >= 0.0 && p.x <= dims.width && p.y >= 0.0 && p.y <= dims.height;
}

// Proper/improper segment intersection test for the polygon self-check.
// Touching at shared polygon vertices is handled by the caller.
double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point& p, const Point& q, const Point& r) {
  return std::min(p.x, r.x) <= q.x && q.x <= std::max(p.x, r.x) &&
         std::min(p.y, r.y) <= q.y && q.y <= std::max(p.y, r.y);
}

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1,
                        const Point& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(q1, p1, q2)) return true;
  if (d2 == 0 && on_segment(q1, p2, q2)) return true;
  if (d3 == 0 && on_segment(p1, q1, p2)) return true;
  if (d4 == 0 && on_segment(p1, q2, p2)) return true;
  return false;
}

}  // namespace

bool polyline_valid(const PolylineLane& lane, ImageDims dims,
                    std::string* reason) {
  if (!dims.valid()) return fail(reason, "invalid dims");
  if (lane.points.size() < 2) return fail(reason, "fewer than 2 points");
  for (size_t i = 0; i < lane.points.size(); ++i) {
    if (!point_in_image(lane.points[i], dims))
      return fail(reason, "point outside image");
    if (i > 0 && !(lane.points[i].y > lane.points[i - 1].y))
      return fail(reason, "y not strictly increasing");
  }
  return true;
}

double polygon_signed_area(const PolygonLane& poly) {
  const auto& v = poly.vertices;
  const size_t n = v.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

bool polygon_self_intersects(const PolygonLane& poly) {
  const auto& v = poly.vertices;
  const size_t n = v.size();
  if (n < 4) return false;
  for (size_t i = 0; i < n; ++i) {
    const Point& a1 = v[i];
    const Point& a2 = v[(i + 1) % n];
    for (size_t j = i + 1; j < n; ++j) {
      // Skip adjacent edges (they share a vertex by construction).
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      const Point& b1 = v[j];
      const Point& b2 = v[(j + 1) % n];
      if (segments_intersect(a1, a2, b1, b2)) return true;
    }
  }
  return false;
}

bool polygon_valid(const PolygonLane& poly, ImageDims dims,
                   std::string* reason) {
  if (!dims.valid()) return fail(reason, "invalid dims");
  if (poly.vertices.size() != kPolygonVertices)
    return fail(reason, "vertex count != 28");
  for (const Point& p : poly.vertices)
    if (!point_in_image(p, dims)) return fail(reason, "vertex outside image");
  if (polygon_self_intersects(poly)) return fail(reason, "self-intersecting");
  return true;
}

bool poly_lane_valid(const PolyLane& lane, ImageDims dims,
                     std::string* reason) {
  if (!dims.valid()) return fail(reason, "invalid dims");
  for (double c : lane.coeffs)
    if (!std::isfinite(c)) return fail(reason, "non-finite coefficient");
  if (!(lane.offset >= 0.0 && lane.offset <= dims.height))
    return fail(reason, "offset outside [0, height]");
  return true;
}

// --- rasterization ----------------------------------------------------------

RasterMask rasterize_polygon(const PolygonLane& poly, ImageDims dims,
                             bool* degenerate) {
  if (!dims.valid()) throw std::invalid_argument("rasterize_polygon: bad dims");
  if (degenerate) *degenerate = false;
  RasterMask mask(dims);
  const auto& v = poly.vertices;
  const size_t n = v.size();
  if (n < 3 || std::fabs(polygon_signed_area(poly)) < 1e-12) {
    if (degenerate) *degenerate = true;
    return mask;
  }

  std::vector<double> xs;
  for (int py = 0; py < dims.height; ++py) {
    const double yc = py + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Point& a = v[i];
      const Point& b = v[(i + 1) % n];
      // Half-open crossing rule: counts each boundary crossing exactly once,
      // including through vertices.
      if ((a.y <= yc) != (b.y <= yc)) {
        const double t = (yc - a.y) / (b.y - a.y);
        xs.push_back(a.x + t * (b.x - a.x));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Pixel center px+0.5 inside [x0, x1).
      int lo = static_cast<int>(std::ceil(xs[k] - 0.5));
      int hi = static_cast<int>(std::floor(xs[k + 1] - 0.5));
      if (static_cast<double>(hi) + 0.5 >= xs[k + 1]) --hi;
      lo = std::max(lo, 0);
      hi = std::min(hi, dims.width - 1);
      for (int px = lo; px <= hi; ++px) mask.set(px, py);
    }
  }
  return mask;
}

double mask_iou(const RasterMask& a, const RasterMask& b) {
  if (!(a.dims == b.dims))
    throw std::invalid_argument("mask_iou: dims mismatch");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    const bool ba = a.bits[i] != 0;
    const bool bb = b.bits[i] != 0;
    inter += ba && bb;
    uni += ba || bb;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// --- row-wise evaluation ----------------------------------------------------

std::optional<double> poly_eval(const PolyLane& lane, double y,
                                ImageDims dims) {
  if (!dims.valid()) throw std::invalid_argument("poly_eval: bad dims");
  if (y < 0.0 || y > dims.height)
    throw std::invalid_argument("poly_eval: y outside [0, height]");
  if (y < lane.offset) return std::nullopt;
  const double t = y / dims.height;
  double acc = 0.0;
  double tp = 1.0;
  for (double c : lane.coeffs) {
    acc += c * tp;
    tp *= t;
  }
  return std::clamp(acc * dims.width, 0.0, static_cast<double>(dims.width));
}

namespace {

std::optional<double> polyline_x_at(const PolylineLane& lane, double y) {
  const auto& pts = lane.points;
  if (pts.size() < 2) return std::nullopt;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point& a = pts[i];
    const Point& b = pts[i + 1];
    const double lo = std::min(a.y, b.y);
    const double hi = std::max(a.y, b.y);
    if (y < lo || y > hi) continue;
    if (hi == lo) return a.x;
    const double t = (y - a.y) / (b.y - a.y);
    return a.x + t * (b.x - a.x);
  }
  return std::nullopt;
}

std::optional<double> polygon_x_at(const PolygonLane& poly, double y) {
  const auto& v = poly.vertices;
  const size_t n = v.size();
  if (n < 3) return std::nullopt;
  double min_x = 0.0, max_x = 0.0;
  bool any = false;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    const double lo = std::min(a.y, b.y);
    const double hi = std::max(a.y, b.y);
    if (y < lo || y > hi) continue;
    double x;
    if (hi == lo) {
      // Horizontal edge at this row: both endpoints bound the extent.
      x = std::min(a.x, b.x);
      const double x2 = std::max(a.x, b.x);
      if (!any) {
        min_x = x;
        max_x = x2;
        any = true;
      } else {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x2);
      }
      continue;
    }
    const double t = (y - a.y) / (b.y - a.y);
    x = a.x + t * (b.x - a.x);
    if (!any) {
      min_x = max_x = x;
      any = true;
    } else {
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
    }
  }
  if (!any) return std::nullopt;
  return 0.5 * (min_x + max_x);
}

}  // namespace

std::optional<double> lane_x_at(const Lane& lane, double y, ImageDims dims) {
  return std::visit(
      [&](const auto& l) -> std::optional<double> {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, PolylineLane>)
          return polyline_x_at(l, y);
        else if constexpr (std::is_same_v<T, PolygonLane>)
          return polygon_x_at(l, y);
        else
          return poly_eval(l, y, dims);
      },
      lane);
}

SampledLane sample_rows(const Lane& lane, ImageDims dims, int n_rows) {
  if (n_rows < 2) throw std::invalid_argument("sample_rows: n_rows < 2");
  SampledLane out;
  out.xs.resize(static_cast<size_t>(n_rows));
  for (int r = 0; r < n_rows; ++r) {
    const double y = static_cast<double>(r) * dims.height / (n_rows - 1);
    out.xs[static_cast<size_t>(r)] = lane_x_at(lane, y, dims);
  }
  return out;
}

double default_liou_half_width(ImageDims dims) {
  return 15.0 * dims.width / 800.0;
}

double line_iou(const SampledLane& a, const SampledLane& b,
                double half_width) {
  if (a.xs.size() != b.xs.size())
    throw std::invalid_argument("line_iou: row grid mismatch");
  if (!(half_width > 0.0))
    throw std::invalid_argument("line_iou: half width must be positive");
  const double e = half_width;
  double overlap = 0.0, uni = 0.0;
  bool any = false;
  for (size_t r = 0; r < a.xs.size(); ++r) {
    const auto& xa = a.xs[r];
    const auto& xb = b.xs[r];
    if (xa && xb) {
      const double lo = std::min(*xa, *xb);
      const double hi = std::max(*xa, *xb);
      overlap += (lo + e) - (hi - e);
      uni += (hi + e) - (lo - e);
      any = true;
    } else if (xa || xb) {
      overlap += -2.0 * e;
      uni += 2.0 * e;
      any = true;
    }
  }
  if (!any) return 1.0;
  return overlap / uni;
}

double line_iou(const Lane& a, const Lane& b, ImageDims dims, int n_rows) {
  return line_iou(sample_rows(a, dims, n_rows), sample_rows(b, dims, n_rows),
                  default_liou_half_width(dims));
}

PolylineLane resample_polyline(const PolylineLane& lane, int n_points) {
  if (lane.points.size() < 2)
    throw std::invalid_argument("incomparable lanes: fewer than 2 points");
  double y0 = lane.points.front().y;
  double y1 = lane.points.back().y;
  if (y1 < y0) std::swap(y0, y1);
  if (!(y1 > y0))
    throw std::invalid_argument("incomparable lanes: degenerate span");
  PolylineLane out;
  out.points.reserve(static_cast<size_t>(n_points));
  for (int k = 0; k < n_points; ++k) {
    const double y =
        k == n_points - 1 ? y1 : y0 + (y1 - y0) * k / (n_points - 1);
    const auto x = polyline_x_at(lane, y);
    if (!x) continue;
    out.points.push_back({*x, y});
  }
  return out;
}

double keypoint_distance(const PolylineLane& pred, const PolylineLane& gt,
                         ImageDims dims) {
  (void)dims;
  const PolylineLane p = pred.points.size() == kPolylineKeypoints
                             ? pred
                             : resample_polyline(pred, kPolylineKeypoints);
  const PolylineLane g = resample_polyline(gt, kPolylineKeypoints);
  const size_t n = std::min(p.points.size(), g.points.size());
  if (n == 0) throw std::invalid_argument("incomparable lanes: no keypoints");
  double acc = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const double dx = p.points[k].x - g.points[k].x;
    const double dy = p.points[k].y - g.points[k].y;
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc / static_cast<double>(n);
}

double lane_bottom_x(const Lane& lane, ImageDims dims) {
  return std::visit(
      [&](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, PolylineLane>) {
          if (l.points.empty()) return 0.0;
          const Point* bottom = &l.points.front();
          for (const Point& p : l.points)
            if (p.y > bottom->y) bottom = &p;
          return bottom->x;
        } else if constexpr (std::is_same_v<T, PolygonLane>) {
          if (l.vertices.empty()) return 0.0;
          double max_y = l.vertices.front().y;
          for (const Point& p : l.vertices) max_y = std::max(max_y, p.y);
          const auto x = polygon_x_at(l, max_y);
          if (x) return *x;
          double acc = 0.0;
          for (const Point& p : l.vertices) acc += p.x;
          return acc / static_cast<double>(l.vertices.size());
        } else {
          const auto x = poly_eval(l, dims.height, dims);
          return x ? *x : 0.0;
        }
      },
      lane);
}

}  // namespace laneseq
