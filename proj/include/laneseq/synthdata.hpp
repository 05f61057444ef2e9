#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laneseq/geometry.hpp"
#include "laneseq/image.hpp"
#include "laneseq/rng.hpp"

namespace laneseq {

struct SceneSpec {
  uint64_t seed = 0;
  ImageDims dims{160, 64};
  int min_lanes = 1;
  int max_lanes = 4;
  double curvature = 0.15;    // scale of the quadratic/cubic terms
  double lane_width = 3.0;    // rendered stroke width in pixels
  double noise = 0.08;        // background noise amplitude in [0, 1]
  double background = 0.08;   // base background level in [0, 1]
};

// One lane in all three ground-truth forms. The forms describe the same
// centerline: 14 keypoints, a 28-vertex stroke-buffer polygon, and the exact
// polynomial coefficients plus vertical start offset.
struct SceneLaneGt {
  PolylineLane polyline;
  PolygonLane polygon;
  PolyLane params;
};

struct SceneRecord {
  Image image;
  ImageDims dims;
  uint64_t seed = 0;
  uint64_t index = 0;
  std::vector<SceneLaneGt> lanes;

  std::vector<Lane> polylines() const;
  std::vector<Lane> polygons() const;
  std::vector<Lane> param_lanes() const;
  std::vector<PolylineLane> gt_polylines() const;
  std::vector<PolygonLane> gt_polygons() const;
  std::vector<PolyLane> gt_params() const;
};

// Deterministic in (spec.seed, index). Lanes are non-crossing, ordered
// left-to-right by bottom x; crossing layouts are rejection-resampled with
// bounded retries, after which the lane count is reduced.
SceneRecord generate_scene(const SceneSpec& spec, uint64_t index);

struct AugmentConfig {
  bool flip = true;
  double max_scale = 0.1;      // scale in [1 - s, 1 + s]
  double max_rot_deg = 5.0;
  double max_translate = 0.05; // fraction of each image dimension
};

struct AugmentResult {
  SceneRecord record;
  int dropped_lanes = 0;  // lanes that left the image entirely
};

// Horizontal flip (p = 0.5) plus a random affine applied consistently to the
// image and all three ground-truth forms; lanes are re-clipped and re-fit.
AugmentResult augment(const SceneRecord& record, Rng& rng,
                      const AugmentConfig& cfg);

// Least-squares fit of the 5-coefficient normalized polynomial to a point
// chain; offset is the chain's top row.
PolyLane fit_poly_lane(const std::vector<Point>& points, ImageDims dims);

// Dataset on disk: one JSONL annotation file plus one PGM per scene.
// write_dataset returns the annotation path.
std::string write_dataset(const SceneSpec& spec, int n, const std::string& dir);
std::vector<SceneRecord> read_dataset(const std::string& dir);

}  // namespace laneseq
