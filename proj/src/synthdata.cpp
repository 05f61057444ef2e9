#include "laneseq/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace laneseq {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Lane> SceneRecord::polylines() const {
  std::vector<Lane> out;
  for (const auto& l : lanes) out.push_back(l.polyline);
  return out;
}
std::vector<Lane> SceneRecord::polygons() const {
  std::vector<Lane> out;
  for (const auto& l : lanes) out.push_back(l.polygon);
  return out;
}
std::vector<Lane> SceneRecord::param_lanes() const {
  std::vector<Lane> out;
  for (const auto& l : lanes) out.push_back(l.params);
  return out;
}
std::vector<PolylineLane> SceneRecord::gt_polylines() const {
  std::vector<PolylineLane> out;
  for (const auto& l : lanes) out.push_back(l.polyline);
  return out;
}
std::vector<PolygonLane> SceneRecord::gt_polygons() const {
  std::vector<PolygonLane> out;
  for (const auto& l : lanes) out.push_back(l.polygon);
  return out;
}
std::vector<PolyLane> SceneRecord::gt_params() const {
  std::vector<PolyLane> out;
  for (const auto& l : lanes) out.push_back(l.params);
  return out;
}

// --- centerline sampling --------------------------------------------------------

namespace {

struct Centerline {
  std::array<double, kPolyCoeffCount> coeffs{};  // x/W = sum c_i t^i
  double t_start = 0.0;                          // normalized start row

  double eval_norm(double t) const {
    double acc = 0.0, tp = 1.0;
    for (double c : coeffs) {
      acc += c * tp;
      tp *= t;
    }
    return acc;
  }
};

constexpr double kMinSeparation = 0.07;  // normalized min lane gap
constexpr double kEdgeMargin = 0.04;

bool centerline_in_bounds(const Centerline& c) {
  for (int i = 0; i <= 32; ++i) {
    const double t = c.t_start + (1.0 - c.t_start) * i / 32.0;
    const double x = c.eval_norm(t);
    if (x < kEdgeMargin || x > 1.0 - kEdgeMargin) return false;
  }
  return true;
}

bool centerlines_separated(const Centerline& a, const Centerline& b) {
  const double t0 = std::max(a.t_start, b.t_start);
  for (int i = 0; i <= 32; ++i) {
    const double t = t0 + (1.0 - t0) * i / 32.0;
    if (std::fabs(a.eval_norm(t) - b.eval_norm(t)) < kMinSeparation)
      return false;
  }
  return true;
}

Centerline sample_centerline(Rng& rng, double x_bottom, double curvature) {
  Centerline c;
  const double slope = rng.uniform(-0.22, 0.22);
  const double c2 = rng.uniform(-curvature, curvature);
  const double c3 = rng.uniform(-curvature / 2, curvature / 2);
  const double c4 = rng.uniform(-curvature / 4, curvature / 4);
  c.coeffs = {0.0, slope, c2, c3, c4};
  c.coeffs[0] = x_bottom - (slope + c2 + c3 + c4);  // pin x(1) = x_bottom
  c.t_start = rng.uniform(0.0, 0.42);
  return c;
}

SceneLaneGt derive_gt(const Centerline& c, const SceneSpec& spec) {
  const double W = spec.dims.width;
  const double H = spec.dims.height;
  const double s = c.t_start * H;
  const double half = spec.lane_width / 2.0;

  SceneLaneGt gt;
  for (int k = 0; k < kPolylineKeypoints; ++k) {
    const double y = k == kPolylineKeypoints - 1
                         ? H
                         : s + (H - s) * k / (kPolylineKeypoints - 1);
    const double x = std::clamp(c.eval_norm(y / H) * W, 0.0, W);
    gt.polyline.points.push_back({x, y});
  }
  for (const Point& p : gt.polyline.points)
    gt.polygon.vertices.push_back({std::clamp(p.x - half, 0.0, W), p.y});
  for (auto it = gt.polyline.points.rbegin(); it != gt.polyline.points.rend();
       ++it)
    gt.polygon.vertices.push_back({std::clamp(it->x + half, 0.0, W), it->y});
  gt.params.coeffs = c.coeffs;
  gt.params.offset = s;
  return gt;
}

void render_scene(const std::vector<Centerline>& lanes, const SceneSpec& spec,
                  Rng& rng, Image& img) {
  const int W = spec.dims.width;
  const int H = spec.dims.height;
  img = Image(W, H, 1);

  // Background: base level plus per-pixel noise, drawn in row-major order.
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v =
          spec.background + spec.noise * rng.uniform() +
          0.04 * (static_cast<double>(y) / H);  // mild vertical gradient
      img.at(x, y) = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0);
    }

  const double half = spec.lane_width / 2.0;
  for (const Centerline& lane : lanes) {
    const double brightness = 0.75 + 0.2 * rng.uniform();
    const double y_start = lane.t_start * H;
    for (int y = 0; y < H; ++y) {
      const double yc = y + 0.5;
      if (yc < y_start) continue;
      const double xc = lane.eval_norm(yc / H) * W;
      const int x_lo = std::max(0, static_cast<int>(std::floor(xc - half - 2)));
      const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(xc + half + 2)));
      for (int x = x_lo; x <= x_hi; ++x) {
        const double d = std::fabs(x + 0.5 - xc);
        const double cover = std::clamp(half + 0.5 - d, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const double v = brightness * cover * 255.0;
        img.at(x, y) = static_cast<uint8_t>(
            std::max<double>(img.at(x, y), std::min(v, 255.0)));
      }
    }
  }
}

}  // namespace

SceneRecord generate_scene(const SceneSpec& spec, uint64_t index) {
  if (!spec.dims.valid() || spec.min_lanes < 0 ||
      spec.max_lanes < spec.min_lanes)
    throw std::invalid_argument("generate_scene: bad spec");
  Rng rng = Rng::stream(spec.seed, {0x5C, index});

  int want =
      spec.min_lanes + rng.uniform_int(spec.max_lanes - spec.min_lanes + 1);
  std::vector<Centerline> lanes;
  while (want > 0) {
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      lanes.clear();
      // Jittered bottom anchors within evenly split cells keep lanes apart.
      for (int i = 0; i < want; ++i) {
        const double cell = 0.84 / want;
        const double x_bottom =
            0.08 + cell * i + cell * (0.25 + 0.5 * rng.uniform());
        lanes.push_back(sample_centerline(rng, x_bottom, spec.curvature));
      }
      placed = true;
      for (size_t i = 0; i < lanes.size() && placed; ++i) {
        if (!centerline_in_bounds(lanes[i])) placed = false;
        for (size_t j = i + 1; j < lanes.size() && placed; ++j)
          if (!centerlines_separated(lanes[i], lanes[j])) placed = false;
      }
    }
    if (placed) break;
    --want;  // bounded retries exhausted: reduce lane count
    lanes.clear();
  }

  std::sort(lanes.begin(), lanes.end(),
            [](const Centerline& a, const Centerline& b) {
              return a.eval_norm(1.0) < b.eval_norm(1.0);
            });

  SceneRecord record;
  record.dims = spec.dims;
  record.seed = spec.seed;
  record.index = index;
  render_scene(lanes, spec, rng, record.image);
  for (const Centerline& c : lanes) record.lanes.push_back(derive_gt(c, spec));
  return record;
}

// --- least squares fit ------------------------------------------------------------

PolyLane fit_poly_lane(const std::vector<Point>& points, ImageDims dims) {
  if (points.size() < 2)
    throw std::invalid_argument("fit_poly_lane: need at least 2 points");
  constexpr int N = kPolyCoeffCount;
  double ata[N][N] = {};
  double atb[N] = {};
  double min_y = points.front().y;
  for (const Point& p : points) min_y = std::min(min_y, p.y);
  for (const Point& p : points) {
    double basis[N];
    double tp = 1.0;
    const double t = p.y / dims.height;
    for (int i = 0; i < N; ++i) {
      basis[i] = tp;
      tp *= t;
    }
    const double target = p.x / dims.width;
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) ata[i][j] += basis[i] * basis[j];
      atb[i] += basis[i] * target;
    }
  }
  // Levenberg-style damping keeps the normal equations solvable for short or
  // nearly straight chains.
  for (int i = 0; i < N; ++i) ata[i][i] += 1e-9;

  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < N; ++col) {
    int pivot = col;
    for (int r = col + 1; r < N; ++r)
      if (std::fabs(ata[r][col]) > std::fabs(ata[pivot][col])) pivot = r;
    std::swap(ata[col], ata[pivot]);
    std::swap(atb[col], atb[pivot]);
    const double diag = ata[col][col];
    if (std::fabs(diag) < 1e-14)
      throw std::runtime_error("fit_poly_lane: singular system");
    for (int r = 0; r < N; ++r) {
      if (r == col) continue;
      const double f = ata[r][col] / diag;
      for (int c = col; c < N; ++c) ata[r][c] -= f * ata[col][c];
      atb[r] -= f * atb[col];
    }
  }
  PolyLane out;
  for (int i = 0; i < N; ++i)
    out.coeffs[static_cast<size_t>(i)] = atb[i] / ata[i][i];
  out.offset = std::clamp(min_y, 0.0, static_cast<double>(dims.height));
  return out;
}

// --- augmentation -------------------------------------------------------------------

namespace {

struct Affine {
  // [x'; y'] = [a b; c d] [x; y] + [tx; ty]
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

  Point apply(const Point& p) const {
    return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty};
  }
  Affine inverse() const {
    const double det = a * d - b * c;
    Affine inv;
    inv.a = d / det;
    inv.b = -b / det;
    inv.c = -c / det;
    inv.d = a / det;
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
  }
};

Image warp_image(const Image& src, const Affine& fwd, uint8_t fill) {
  Image dst(src.width, src.height, src.channels);
  const Affine inv = fwd.inverse();
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x) {
      const Point p = inv.apply({x + 0.5, y + 0.5});
      const double sx = p.x - 0.5, sy = p.y - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) {
            const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
            const int xi = x0 + dx, yi = y0 + dy;
            acc += w * (src.in_bounds(xi, yi) ? src.at(xi, yi, c) : fill);
          }
        dst.at(x, y, c) = static_cast<uint8_t>(std::clamp(acc, 0.0, 255.0));
      }
    }
  return dst;
}

// Dense centerline samples of a lane's polyline for re-derivation.
std::vector<Point> dense_centerline(const PolylineLane& lane, int n = 64) {
  std::vector<Point> out;
  const double y0 = lane.points.front().y;
  const double y1 = lane.points.back().y;
  for (int i = 0; i < n; ++i) {
    const double y = y0 + (y1 - y0) * i / (n - 1);
    // linear interpolation along the chain
    for (size_t k = 0; k + 1 < lane.points.size(); ++k) {
      const Point& a = lane.points[k];
      const Point& b = lane.points[k + 1];
      if (y < a.y || y > b.y) continue;
      const double t = b.y == a.y ? 0.0 : (y - a.y) / (b.y - a.y);
      out.push_back({a.x + t * (b.x - a.x), y});
      break;
    }
  }
  return out;
}

}  // namespace

AugmentResult augment(const SceneRecord& record, Rng& rng,
                      const AugmentConfig& cfg) {
  // Fixed draw order regardless of which pieces apply.
  const bool do_flip = cfg.flip && rng.uniform() < 0.5;
  const double scale = 1.0 + rng.uniform(-cfg.max_scale, cfg.max_scale);
  const double rot = rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg) *
                     3.14159265358979323846 / 180.0;
  const double tx = rng.uniform(-cfg.max_translate, cfg.max_translate) *
                    record.dims.width;
  const double ty = rng.uniform(-cfg.max_translate, cfg.max_translate) *
                    record.dims.height;

  const double W = record.dims.width;
  const double H = record.dims.height;

  AugmentResult out;
  out.record = record;
  SceneRecord& rec = out.record;

  if (do_flip) {
    Image flipped(rec.image.width, rec.image.height, rec.image.channels);
    for (int y = 0; y < rec.image.height; ++y)
      for (int x = 0; x < rec.image.width; ++x)
        for (int c = 0; c < rec.image.channels; ++c)
          flipped.at(x, y, c) = rec.image.at(rec.image.width - 1 - x, y, c);
    rec.image = std::move(flipped);
    for (SceneLaneGt& lane : rec.lanes) {
      for (Point& p : lane.polyline.points) p.x = W - p.x;
      for (Point& p : lane.polygon.vertices) p.x = W - p.x;
      // x(t) -> 1 - x(t): exact coefficient mapping, no refit needed.
      lane.params.coeffs[0] = 1.0 - lane.params.coeffs[0];
      for (int i = 1; i < kPolyCoeffCount; ++i)
        lane.params.coeffs[static_cast<size_t>(i)] =
            -lane.params.coeffs[static_cast<size_t>(i)];
    }
  }

  // Affine about the image center.
  Affine aff;
  {
    const double cx = W / 2.0, cy = H / 2.0;
    const double ca = std::cos(rot) * scale, sa = std::sin(rot) * scale;
    aff.a = ca;
    aff.b = -sa;
    aff.c = sa;
    aff.d = ca;
    aff.tx = cx - ca * cx + sa * cy + tx;
    aff.ty = cy - sa * cx - ca * cy + ty;
  }
  const bool identity = std::fabs(scale - 1.0) < 1e-12 &&
                        std::fabs(rot) < 1e-12 && std::fabs(tx) < 1e-12 &&
                        std::fabs(ty) < 1e-12;
  if (identity) {
    // Re-sort after a flip: lane order is left-to-right by bottom x.
    std::sort(rec.lanes.begin(), rec.lanes.end(),
              [](const SceneLaneGt& a, const SceneLaneGt& b) {
                return a.polyline.points.back().x < b.polyline.points.back().x;
              });
    return out;
  }

  const uint8_t fill = rec.image.pixels.empty() ? 0 : rec.image.pixels[0];
  rec.image = warp_image(rec.image, aff, fill);

  std::vector<SceneLaneGt> kept;
  const double half_width =
      rec.lanes.empty()
          ? 1.5
          : std::fabs(rec.lanes[0].polygon.vertices[7].x -
                      rec.lanes[0].polyline.points[7].x);
  for (SceneLaneGt& lane : rec.lanes) {
    std::vector<Point> dense = dense_centerline(lane.polyline);
    for (Point& p : dense) p = aff.apply(p);
    // The parameter form has no bottom extent: a lane always runs to the
    // image bottom. Re-anchor scaled/translated lanes there by linear
    // extrapolation of the transformed chain.
    while (dense.size() >= 2 && dense.back().y < H) {
      const Point& a = dense[dense.size() - 2];
      const Point& b = dense.back();
      if (b.y - a.y < 1e-9) break;
      const double step = std::min(2.0, H - b.y);
      const double slope = (b.x - a.x) / (b.y - a.y);
      dense.push_back({b.x + slope * step, b.y + step});
    }
    // Longest contiguous in-image run: clipping must not feed clamped
    // (non-polynomial) segments into the refit.
    std::vector<Point> inside;
    {
      size_t best_lo = 0, best_hi = 0, run_lo = 0;
      const auto ok = [&](const Point& p) {
        return p.y >= 0.0 && p.y <= H && p.x >= 0.0 && p.x <= W;
      };
      for (size_t i = 0; i <= dense.size(); ++i) {
        if (i < dense.size() && ok(dense[i])) continue;
        if (i - run_lo > best_hi - best_lo) {
          best_lo = run_lo;
          best_hi = i;
        }
        run_lo = i + 1;
      }
      inside.assign(dense.begin() + static_cast<long>(best_lo),
                    dense.begin() + static_cast<long>(best_hi));
    }
    if (inside.size() < 8) {
      ++out.dropped_lanes;
      continue;
    }
    std::sort(inside.begin(), inside.end(),
              [](const Point& a, const Point& b) { return a.y < b.y; });
    const double y0 = inside.front().y, y1 = inside.back().y;
    if (y1 - y0 < 0.15 * H) {
      ++out.dropped_lanes;
      continue;
    }

    SceneLaneGt rebuilt;
    for (int k = 0; k < kPolylineKeypoints; ++k) {
      const double y = k == kPolylineKeypoints - 1
                           ? y1
                           : y0 + (y1 - y0) * k / (kPolylineKeypoints - 1);
      // interpolate within the transformed dense chain
      double x = inside.back().x;
      for (size_t i = 0; i + 1 < inside.size(); ++i) {
        if (y < inside[i].y || y > inside[i + 1].y) continue;
        const double t = inside[i + 1].y == inside[i].y
                             ? 0.0
                             : (y - inside[i].y) /
                                   (inside[i + 1].y - inside[i].y);
        x = inside[i].x + t * (inside[i + 1].x - inside[i].x);
        break;
      }
      rebuilt.polyline.points.push_back({std::clamp(x, 0.0, W), y});
    }
    const double new_half = half_width * scale;
    for (const Point& p : rebuilt.polyline.points)
      rebuilt.polygon.vertices.push_back(
          {std::clamp(p.x - new_half, 0.0, W), p.y});
    for (auto it = rebuilt.polyline.points.rbegin();
         it != rebuilt.polyline.points.rend(); ++it)
      rebuilt.polygon.vertices.push_back(
          {std::clamp(it->x + new_half, 0.0, W), it->y});
    rebuilt.params = fit_poly_lane(rebuilt.polyline.points, rec.dims);
    kept.push_back(std::move(rebuilt));
  }
  rec.lanes = std::move(kept);
  std::sort(rec.lanes.begin(), rec.lanes.end(),
            [](const SceneLaneGt& a, const SceneLaneGt& b) {
              return a.polyline.points.back().x < b.polyline.points.back().x;
            });
  return out;
}

// --- dataset io ------------------------------------------------------------------------

namespace {

json point_list(const std::vector<Point>& pts) {
  json arr = json::array();
  for (const Point& p : pts) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

std::vector<Point> parse_points(const json& arr) {
  std::vector<Point> out;
  for (const auto& p : arr) out.push_back({p.at(0), p.at(1)});
  return out;
}

std::string scene_filename(uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06llu.pgm",
                static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

std::string write_dataset(const SceneSpec& spec, int n,
                          const std::string& dir) {
  if (n < 0) throw std::invalid_argument("write_dataset: negative count");
  fs::create_directories(dir);
  const std::string ann_path = (fs::path(dir) / "annotations.jsonl").string();
  std::ofstream ann(ann_path);
  if (!ann) throw std::runtime_error("write_dataset: cannot open " + ann_path);

  for (int i = 0; i < n; ++i) {
    const SceneRecord rec = generate_scene(spec, static_cast<uint64_t>(i));
    const std::string img_name = scene_filename(rec.index);
    write_pnm(rec.image, (fs::path(dir) / img_name).string());

    json lanes = json::array();
    for (const SceneLaneGt& l : rec.lanes) {
      json coeffs = json::array();
      for (double c : l.params.coeffs) coeffs.push_back(c);
      lanes.push_back({{"polyline", point_list(l.polyline.points)},
                       {"polygon", point_list(l.polygon.vertices)},
                       {"coeffs", coeffs},
                       {"offset", l.params.offset}});
    }
    const json line{{"image", img_name},
                    {"width", rec.dims.width},
                    {"height", rec.dims.height},
                    {"seed", rec.seed},
                    {"index", rec.index},
                    {"lanes", lanes}};
    ann << line.dump() << "\n";
  }
  if (!ann) throw std::runtime_error("write_dataset: write failed");
  return ann_path;
}

std::vector<SceneRecord> read_dataset(const std::string& dir) {
  const std::string ann_path = (fs::path(dir) / "annotations.jsonl").string();
  std::ifstream ann(ann_path);
  if (!ann) throw std::runtime_error("read_dataset: cannot open " + ann_path);

  std::vector<SceneRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SceneRecord rec;
      rec.dims = {j.at("width").get<int>(), j.at("height").get<int>()};
      rec.seed = j.at("seed").get<uint64_t>();
      rec.index = j.at("index").get<uint64_t>();
      rec.image =
          read_pnm((fs::path(dir) / j.at("image").get<std::string>()).string());
      for (const auto& l : j.at("lanes")) {
        SceneLaneGt lane;
        lane.polyline.points = parse_points(l.at("polyline"));
        lane.polygon.vertices = parse_points(l.at("polygon"));
        const auto& coeffs = l.at("coeffs");
        for (int i = 0; i < kPolyCoeffCount; ++i)
          lane.params.coeffs[static_cast<size_t>(i)] = coeffs.at(i);
        lane.params.offset = l.at("offset");
        rec.lanes.push_back(std::move(lane));
      }
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: " + ann_path + " line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace laneseq
