#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uvc/image.hpp"
#include "uvc/morphable.hpp"

namespace uvc {

// Per-vertex texture coordinates in [0,1]^2, frozen per model (cylindrical
// projection of the mean shape), plus the raster resolution of the UV plane.
struct UVMapping {
  std::vector<double> u, v;
  int resolution = 64;
};

UVMapping make_uv_mapping(const ShapeModel& model, int resolution);

// Deterministic synthetic albedo painted in UV space. rgb is written in [0,1].
using TextureFn = std::function<void(double u, double v, float rgb[3])>;

// Face-like pattern (skin tone, eyes, brows, nose shading, mouth) keyed by an
// identity seed; distinct seeds give distinct colors and feature placement.
TextureFn make_identity_texture(uint64_t identity_seed);

struct UnwrapResult {
  Image complete;               // (res, res, 3)
  Image coverage;               // (res, res, 1), 1 inside the mapped region
  std::vector<int32_t> tri_id;  // source triangle per pixel, -1 uncovered
  std::vector<float> bary;      // 3 barycentric weights per pixel
};

// Rasterizes every mesh triangle into UV space with barycentric interpolation
// and paints texture(u, v). Degenerate UV triangles are rejected by id.
UnwrapResult unwrap(const ShapeModel& model, const UVMapping& uv,
                    const TextureFn& texture);

// Yaw-only pose (rotation about the vertical axis) framing the mesh inside a
// viewport x viewport image; deterministic per model.
PoseParams standard_pose(const ShapeModel& model, double yaw_deg, int viewport);

// A UV pixel is visible iff its source surface point lies on a front-facing
// triangle and wins the z-buffer at its projected image location. The pose
// must have been built for the given raster viewport.
Image visibility_mask(const ShapeModel& model, const Eigen::VectorXd& vertices,
                      const UnwrapResult& unwrapped, const PoseParams& pose,
                      int raster_res);

// z-buffered textured render of the posed mesh; texture sampled bilinearly,
// weighted by UV coverage. Background is black.
Image render_pose(const ShapeModel& model, const Eigen::VectorXd& vertices,
                  const UVMapping& uv, const Image& uv_texture,
                  const Image& uv_coverage, const PoseParams& pose, int image_size);

struct GroundTruth {
  Image complete;        // blended UV map
  Image coverage;        // union of the three view masks
  Image frontal_mask;    // yaw-0 visibility
  std::vector<std::string> warnings;
};

// Three views (yaw 0, +30, -30) of the same surface, each with its own
// illumination factor, merged gradient-domain: the yaw-0 view is the base and
// the lateral views are pasted then Poisson-corrected over their eroded
// exclusive-visibility regions.
GroundTruth make_ground_truth(const ShapeModel& model, const Eigen::VectorXd& vertices,
                              const UVMapping& uv, const TextureFn& texture,
                              int raster_res);

// Mild per-view illumination factor; makes the three captures disagree the
// way real exposures do so the blend has actual work to do.
double view_shade(double yaw_deg);

}  // namespace uvc
