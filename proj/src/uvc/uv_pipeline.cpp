#include "uvc/uv_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uvc/error.hpp"
#include "uvc/poisson.hpp"

namespace uvc {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kUVMargin = 0.04;

struct ScreenVertex {
  double x, y, depth;
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Scanline-free edge-function rasterizer over one triangle; emits pixel
// center hits with barycentric weights.
template <typename EmitFn>
void raster_triangle(const ScreenVertex& a, const ScreenVertex& b,
                     const ScreenVertex& c, int width, int height, EmitFn emit) {
  double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
  if (area == 0.0) return;
  const double inv_area = 1.0 / area;
  const double sign = area > 0.0 ? 1.0 : -1.0;

  int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
  int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
  int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
  int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));

  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double px = x + 0.5, py = y + 0.5;
      double w0 = edge(b.x, b.y, c.x, c.y, px, py) * sign;
      double w1 = edge(c.x, c.y, a.x, a.y, px, py) * sign;
      double w2 = edge(a.x, a.y, b.x, b.y, px, py) * sign;
      if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
      double b0 = w0 * inv_area * sign, b1 = w1 * inv_area * sign,
             b2 = w2 * inv_area * sign;
      emit(x, y, b0, b1, b2);
    }
}

}  // namespace

UVMapping make_uv_mapping(const ShapeModel& model, int resolution) {
  if (resolution < 8) throw_data("uv resolution must be >= 8");
  UVMapping uv;
  uv.resolution = resolution;
  const int n = model.vertex_count;
  uv.u.resize(n);
  uv.v.resize(n);

  // Cylindrical projection of the mean shape: azimuth -> u, elevation -> v.
  double amin = std::numeric_limits<double>::max(), amax = -amin;
  double emin = amin, emax = -amin;
  std::vector<double> az(n), el(n);
  for (int i = 0; i < n; ++i) {
    double x = model.mean_shape[3 * i], y = model.mean_shape[3 * i + 1],
           z = model.mean_shape[3 * i + 2];
    az[i] = std::atan2(x, z);
    el[i] = std::atan2(y, std::hypot(x, z));
    amin = std::min(amin, az[i]);
    amax = std::max(amax, az[i]);
    emin = std::min(emin, el[i]);
    emax = std::max(emax, el[i]);
  }
  for (int i = 0; i < n; ++i) {
    uv.u[i] = kUVMargin + (az[i] - amin) / (amax - amin) * (1.0 - 2.0 * kUVMargin);
    uv.v[i] = kUVMargin + (el[i] - emin) / (emax - emin) * (1.0 - 2.0 * kUVMargin);
  }
  return uv;
}

TextureFn make_identity_texture(uint64_t identity_seed) {
  Rng rng(identity_seed * 0x9e3779b97f4a7c15ULL + 0x1234567ULL);

  // skin tone
  const double base_r = rng.uniform(0.55, 0.88);
  const double base_g = base_r * rng.uniform(0.72, 0.88);
  const double base_b = base_g * rng.uniform(0.70, 0.92);

  // low-frequency identity-specific mottling
  struct Wave {
    double au, av, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k)
    waves.push_back({rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0),
                     rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.02, 0.06)});

  // feature placement
  const double eye_du = rng.uniform(0.17, 0.23);
  const double eye_v = rng.uniform(0.60, 0.68);
  const double eye_r = rng.uniform(0.035, 0.055);
  const double iris_r = rng.uniform(0.25, 0.45);
  const double iris_g = rng.uniform(0.2, 0.5);
  const double iris_b = rng.uniform(0.15, 0.6);
  const double brow_v = eye_v + rng.uniform(0.08, 0.12);
  const double brow_dark = rng.uniform(0.35, 0.65);
  const double mouth_v = rng.uniform(0.16, 0.22);
  const double mouth_w = rng.uniform(0.10, 0.16);
  const double mouth_r = rng.uniform(0.45, 0.75);
  const double nose_shade = rng.uniform(0.06, 0.14);

  return [=](double u, double v, float rgb[3]) {
    double r = base_r, g = base_g, b = base_b;
    for (const Wave& w : waves) {
      double m = w.amp * std::sin(w.au * kPi * u + w.phase) *
                 std::cos(w.av * kPi * v + 0.7 * w.phase);
      r += m;
      g += m * 0.8;
      b += m * 0.6;
    }
    auto disk = [&](double cu, double cv, double rad) {
      double d = std::hypot(u - cu, v - cv);
      return d < rad ? 1.0 - d / rad : 0.0;
    };
    // eyes: sclera disk with darker iris
    for (double s : {-1.0, 1.0}) {
      double cu = 0.5 + s * eye_du;
      double sclera = disk(cu, eye_v, eye_r);
      if (sclera > 0.0) {
        r = r * (1.0 - sclera) + 0.93 * sclera;
        g = g * (1.0 - sclera) + 0.93 * sclera;
        b = b * (1.0 - sclera) + 0.93 * sclera;
      }
      double iris = disk(cu, eye_v, eye_r * 0.45);
      if (iris > 0.0) {
        r = r * (1.0 - iris) + iris_r * iris;
        g = g * (1.0 - iris) + iris_g * iris;
        b = b * (1.0 - iris) + iris_b * iris;
      }
      // brow stroke
      if (std::abs(v - brow_v) < 0.022 && std::abs(u - cu) < eye_r * 1.9) {
        r *= 1.0 - brow_dark;
        g *= 1.0 - brow_dark;
        b *= 1.0 - brow_dark;
      }
    }
    // nose ridge shading
    if (std::abs(u - 0.5) < 0.035 && v > 0.34 && v < 0.62) {
      r += nose_shade;
      g += nose_shade * 0.9;
      b += nose_shade * 0.8;
    }
    // mouth
    double mv = std::abs(v - mouth_v), mu = std::abs(u - 0.5);
    if (mv < 0.03 && mu < mouth_w) {
      double t = (1.0 - mv / 0.03) * (1.0 - mu / mouth_w);
      r = r * (1.0 - t) + mouth_r * t;
      g = g * (1.0 - t) + 0.25 * t;
      b = b * (1.0 - t) + 0.28 * t;
    }
    rgb[0] = static_cast<float>(std::clamp(r, 0.02, 0.98));
    rgb[1] = static_cast<float>(std::clamp(g, 0.02, 0.98));
    rgb[2] = static_cast<float>(std::clamp(b, 0.02, 0.98));
  };
}

UnwrapResult unwrap(const ShapeModel& model, const UVMapping& uv,
                    const TextureFn& texture) {
  const int res = uv.resolution;
  UnwrapResult out;
  out.complete = Image(res, res, 3);
  out.coverage = Image(res, res, 1);
  out.tri_id.assign(static_cast<size_t>(res) * res, -1);
  out.bary.assign(static_cast<size_t>(res) * res * 3, 0.0f);

  for (size_t t = 0; t < model.triangles.size(); ++t) {
    const auto& tri = model.triangles[t];
    double ua = uv.u[tri[0]], va = uv.v[tri[0]];
    double ub = uv.u[tri[1]], vb = uv.v[tri[1]];
    double uc = uv.u[tri[2]], vc = uv.v[tri[2]];
    double area2 = std::abs((ub - ua) * (vc - va) - (vb - va) * (uc - ua));
    if (area2 * 0.5 <= 1e-12)
      throw_data("unwrap: degenerate UV triangle id " + std::to_string(t));

    ScreenVertex a{ua * res, (1.0 - va) * res, 0.0};
    ScreenVertex b{ub * res, (1.0 - vb) * res, 0.0};
    ScreenVertex c{uc * res, (1.0 - vc) * res, 0.0};
    raster_triangle(a, b, c, res, res, [&](int x, int y, double b0, double b1, double b2) {
      double pu = b0 * ua + b1 * ub + b2 * uc;
      double pv = b0 * va + b1 * vb + b2 * vc;
      float rgb[3];
      texture(pu, pv, rgb);
      out.complete.px(y, x, 0) = rgb[0];
      out.complete.px(y, x, 1) = rgb[1];
      out.complete.px(y, x, 2) = rgb[2];
      out.coverage.px(y, x, 0) = 1.0f;
      size_t pix = static_cast<size_t>(y) * res + x;
      out.tri_id[pix] = static_cast<int32_t>(t);
      out.bary[3 * pix + 0] = static_cast<float>(b0);
      out.bary[3 * pix + 1] = static_cast<float>(b1);
      out.bary[3 * pix + 2] = static_cast<float>(b2);
    });
  }
  return out;
}

PoseParams standard_pose(const ShapeModel& model, double yaw_deg, int viewport) {
  double radius = 0.0;
  for (int i = 0; i < model.vertex_count; ++i) {
    double x = model.mean_shape[3 * i], y = model.mean_shape[3 * i + 1],
           z = model.mean_shape[3 * i + 2];
    radius = std::max(radius, std::max(std::hypot(x, z), std::abs(y)));
  }
  PoseParams pose;
  pose.scale = 0.42 * viewport / radius;
  pose.rotation =
      Eigen::Quaterniond(Eigen::AngleAxisd(yaw_deg * kPi / 180.0, Eigen::Vector3d::UnitY()));
  pose.principal_point = Eigen::Vector2d(viewport / 2.0, viewport / 2.0);
  return pose;
}

namespace {

// Shared z-buffer pass: projects the posed mesh and keeps the nearest surface
// (camera at +z looking along -z, so larger camera z wins). Each pixel also
// records the winner's screen-space depth slope so depth comparisons can be
// biased by the intra-pixel depth variation.
struct ZBuffer {
  int size = 0;
  std::vector<double> depth;
  std::vector<double> slope;
  std::vector<int32_t> tri;
  std::vector<float> bary;
};

ZBuffer raster_zbuffer(const ShapeModel& model, const Eigen::VectorXd& cam_vertices,
                       const PoseParams& pose, int viewport) {
  ZBuffer zb;
  zb.size = viewport;
  zb.depth.assign(static_cast<size_t>(viewport) * viewport,
                  -std::numeric_limits<double>::infinity());
  zb.slope.assign(static_cast<size_t>(viewport) * viewport, 0.0);
  zb.tri.assign(static_cast<size_t>(viewport) * viewport, -1);
  zb.bary.assign(static_cast<size_t>(viewport) * viewport * 3, 0.0f);

  auto screen = [&](int vi) {
    double xc = cam_vertices[3 * vi], yc = cam_vertices[3 * vi + 1],
           zc = cam_vertices[3 * vi + 2];
    return ScreenVertex{pose.scale * xc + pose.principal_point[0],
                        viewport - (pose.scale * yc + pose.principal_point[1]), zc};
  };

  for (size_t t = 0; t < model.triangles.size(); ++t) {
    const auto& tri = model.triangles[t];
    ScreenVertex a = screen(tri[0]), b = screen(tri[1]), c = screen(tri[2]);
    // depth plane d(px,py) = ga*px + gb*py + const over the triangle
    double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
    double grad = 0.0;
    if (area != 0.0) {
      double ga = ((b.depth - a.depth) * (c.y - a.y) -
                   (c.depth - a.depth) * (b.y - a.y)) / area;
      double gb = ((c.depth - a.depth) * (b.x - a.x) -
                   (b.depth - a.depth) * (c.x - a.x)) / area;
      grad = std::hypot(ga, gb);
    }
    raster_triangle(a, b, c, viewport, viewport,
                    [&](int x, int y, double b0, double b1, double b2) {
                      double d = b0 * a.depth + b1 * b.depth + b2 * c.depth;
                      size_t pix = static_cast<size_t>(y) * viewport + x;
                      if (d > zb.depth[pix]) {
                        zb.depth[pix] = d;
                        zb.slope[pix] = grad;
                        zb.tri[pix] = static_cast<int32_t>(t);
                        zb.bary[3 * pix + 0] = static_cast<float>(b0);
                        zb.bary[3 * pix + 1] = static_cast<float>(b1);
                        zb.bary[3 * pix + 2] = static_cast<float>(b2);
                      }
                    });
  }
  return zb;
}

double mesh_diag(const ShapeModel& model) {
  Eigen::Vector3d lo(1e30, 1e30, 1e30), hi(-1e30, -1e30, -1e30);
  for (int i = 0; i < model.vertex_count; ++i) {
    Eigen::Vector3d p = model.mean_shape.segment<3>(3 * i);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

}  // namespace

Image visibility_mask(const ShapeModel& model, const Eigen::VectorXd& vertices,
                      const UnwrapResult& unwrapped, const PoseParams& pose,
                      int raster_res) {
  if (vertices.size() != 3 * model.vertex_count)
    throw_data("visibility_mask: vertex vector does not match the model");
  Eigen::VectorXd cam = rigid_transform(vertices, pose);
  ZBuffer zb = raster_zbuffer(model, cam, pose, raster_res);
  const double depth_eps = 2e-3 * mesh_diag(model);

  // Per-triangle camera-space facing.
  std::vector<uint8_t> front(model.triangles.size(), 0);
  for (size_t t = 0; t < model.triangles.size(); ++t) {
    const auto& tri = model.triangles[t];
    Eigen::Vector3d a = cam.segment<3>(3 * tri[0]);
    Eigen::Vector3d b = cam.segment<3>(3 * tri[1]);
    Eigen::Vector3d c = cam.segment<3>(3 * tri[2]);
    front[t] = ((b - a).cross(c - a).z() > 0.0) ? 1 : 0;
  }

  const int res = unwrapped.coverage.height;
  Image mask(res, res, 1);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      size_t pix = static_cast<size_t>(y) * res + x;
      int32_t t = unwrapped.tri_id[pix];
      if (t < 0 || !front[t]) continue;
      const auto& tri = model.triangles[t];
      Eigen::Vector3d p = unwrapped.bary[3 * pix + 0] * cam.segment<3>(3 * tri[0]) +
                          unwrapped.bary[3 * pix + 1] * cam.segment<3>(3 * tri[1]) +
                          unwrapped.bary[3 * pix + 2] * cam.segment<3>(3 * tri[2]);
      double sx = pose.scale * p.x() + pose.principal_point[0];
      double sy = raster_res - (pose.scale * p.y() + pose.principal_point[1]);
      int ix = static_cast<int>(std::floor(sx));
      int iy = static_cast<int>(std::floor(sy));
      if (ix < 0 || iy < 0 || ix >= raster_res || iy >= raster_res) continue;
      size_t spix = static_cast<size_t>(iy) * raster_res + ix;
      // slope-aware bias: the recorded depth is at the pixel center, the
      // query point is anywhere in the pixel footprint
      double bias = depth_eps + 1.5 * zb.slope[spix];
      if (p.z() >= zb.depth[spix] - bias) mask.px(y, x, 0) = 1.0f;
    }
  return mask;
}

Image render_pose(const ShapeModel& model, const Eigen::VectorXd& vertices,
                  const UVMapping& uv, const Image& uv_texture,
                  const Image& uv_coverage, const PoseParams& pose, int image_size) {
  if (vertices.size() != 3 * model.vertex_count)
    throw_data("render_pose: vertex vector does not match the model");
  if (uv_texture.channels != 3) throw_data("render_pose: texture must be RGB");
  Eigen::VectorXd cam = rigid_transform(vertices, pose);
  ZBuffer zb = raster_zbuffer(model, cam, pose, image_size);

  const int tres = uv_texture.height;
  auto sample = [&](double pu, double pv, float rgb[3]) {
    // coverage-weighted bilinear tap
    double fx = pu * tres - 0.5, fy = (1.0 - pv) * tres - 0.5;
    int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    double ax = fx - x0, ay = fy - y0;
    double wsum = 0.0, acc[3] = {0.0, 0.0, 0.0};
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        int xx = std::clamp(x0 + dx, 0, tres - 1);
        int yy = std::clamp(y0 + dy, 0, tres - 1);
        double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
        if (uv_coverage.numel() && uv_coverage.px(yy, xx, 0) < 0.5f) continue;
        wsum += w;
        for (int c = 0; c < 3; ++c) acc[c] += w * uv_texture.px(yy, xx, c);
      }
    if (wsum <= 1e-9) {
      // all taps uncovered: fall back to nearest texel
      int xx = std::clamp(static_cast<int>(std::lround(fx)), 0, tres - 1);
      int yy = std::clamp(static_cast<int>(std::lround(fy)), 0, tres - 1);
      for (int c = 0; c < 3; ++c) rgb[c] = uv_texture.px(yy, xx, c);
      return;
    }
    for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(acc[c] / wsum);
  };

  Image out(image_size, image_size, 3);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      size_t pix = static_cast<size_t>(y) * image_size + x;
      int32_t t = zb.tri[pix];
      if (t < 0) continue;
      const auto& tri = model.triangles[t];
      double pu = zb.bary[3 * pix + 0] * uv.u[tri[0]] +
                  zb.bary[3 * pix + 1] * uv.u[tri[1]] +
                  zb.bary[3 * pix + 2] * uv.u[tri[2]];
      double pv = zb.bary[3 * pix + 0] * uv.v[tri[0]] +
                  zb.bary[3 * pix + 1] * uv.v[tri[1]] +
                  zb.bary[3 * pix + 2] * uv.v[tri[2]];
      float rgb[3];
      sample(pu, pv, rgb);
      out.px(y, x, 0) = rgb[0];
      out.px(y, x, 1) = rgb[1];
      out.px(y, x, 2) = rgb[2];
    }
  return out;
}

double view_shade(double yaw_deg) {
  return 1.0 - 0.08 * std::abs(std::sin(yaw_deg * kPi / 180.0));
}

GroundTruth make_ground_truth(const ShapeModel& model, const Eigen::VectorXd& vertices,
                              const UVMapping& uv, const TextureFn& texture,
                              int raster_res) {
  UnwrapResult unwrapped = unwrap(model, uv, texture);
  const int res = uv.resolution;

  const double yaws[3] = {0.0, 30.0, -30.0};
  Image masks[3];
  for (int k = 0; k < 3; ++k) {
    PoseParams pose = standard_pose(model, yaws[k], raster_res);
    masks[k] = visibility_mask(model, vertices, unwrapped, pose, raster_res);
  }

  auto shaded_view = [&](int k) {
    Image view = unwrapped.complete;
    const float s = static_cast<float>(view_shade(yaws[k]));
    for (auto& v : view.data) v *= s;
    return view;
  };

  GroundTruth gt;
  gt.frontal_mask = masks[0];
  gt.complete = Image(res, res, 3);
  gt.coverage = Image(res, res, 1);

  Image base_view = shaded_view(0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      if (masks[0].px(y, x, 0) > 0.5f) {
        gt.coverage.px(y, x, 0) = 1.0f;
        for (int c = 0; c < 3; ++c) gt.complete.px(y, x, c) = base_view.px(y, x, c);
      }

  for (int k = 1; k < 3; ++k) {
    std::vector<uint8_t> excl(static_cast<size_t>(res) * res, 0);
    size_t excl_count = 0;
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        if (masks[k].px(y, x, 0) > 0.5f && gt.coverage.px(y, x, 0) < 0.5f) {
          excl[static_cast<size_t>(y) * res + x] = 1;
          ++excl_count;
        }
    std::vector<uint8_t> inner = erode4(excl, res, res);
    size_t inner_count = 0;
    for (uint8_t v : inner) inner_count += v;

    Image view = shaded_view(k);
    // paste the whole exclusive region first so the erosion ring is filled
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        if (excl[static_cast<size_t>(y) * res + x]) {
          gt.coverage.px(y, x, 0) = 1.0f;
          for (int c = 0; c < 3; ++c) gt.complete.px(y, x, c) = view.px(y, x, c);
        }

    if (excl_count == 0 || inner_count == 0) {
      gt.warnings.push_back("yaw " + std::to_string(yaws[k]) +
                            ": exclusive region empty, blend skipped");
      continue;
    }
    gt.complete = poisson_blend(view, gt.complete, inner);
  }
  return gt;
}

}  // namespace uvc
